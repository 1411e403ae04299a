//! Cohort statistics at case, lesion and frame level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use super::{AnnotationStore, FrameSpan};
use crate::vocab::{PathologyCode, TumorGrade, TumorStage};

/// A percentage rounded half-up to one decimal, held as tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(u64);

impl Percent {
    pub fn tenths(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

/// `100 * part / whole`, rounded half-up to one decimal in exact integer
/// arithmetic. `None` when `whole` is zero.
pub fn percent(part: u64, whole: u64) -> Option<Percent> {
    if whole == 0 {
        return None;
    }
    let (part, whole) = (u128::from(part), u128::from(whole));
    Some(Percent(((2000 * part + whole) / (2 * whole)) as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quartiles by linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quartiles(values: &[u64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let at = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64)
    };
    Some(Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsLevel {
    Case,
    Lesion,
    Frame,
}

impl FromStr for StatsLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "case" => Ok(StatsLevel::Case),
            "lesion" => Ok(StatsLevel::Lesion),
            "frame" => Ok(StatsLevel::Frame),
            _ => Err(format!("unknown stats level {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub section: &'static str,
    pub stratum: &'static str,
    pub count: u64,
    /// Share of the section's denominator; `None` when it is zero or the
    /// row is not part of a breakdown.
    pub percent: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub level: StatsLevel,
    pub rows: Vec<StatsRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lesions_per_case: Option<Quartiles>,
}

impl StatsReport {
    pub fn row(&self, section: &str, stratum: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.section == section && r.stratum == stratum)
    }

    pub fn section(&self, section: &str) -> impl Iterator<Item = &StatsRow> {
        let section = section.to_string();
        self.rows.iter().filter(move |r| r.section == section)
    }

    /// CSV with columns `section,stratum,value,percent`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "stratum", "value", "percent"])?;
        for row in &self.rows {
            let pct = row.percent.map(|p| p.to_string()).unwrap_or_default();
            w.write_record([row.section, row.stratum, &row.count.to_string(), &pct])?;
        }
        if let Some(q) = &self.lesions_per_case {
            for (name, v) in [("median", q.median), ("q1", q.q1), ("q3", q.q3)] {
                w.write_record(["lesions_per_case", name, &v.to_string(), ""])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

const STAGES: [(TumorStage, &str); 4] = [
    (TumorStage::Ta, "Ta"),
    (TumorStage::Cis, "CIS"),
    (TumorStage::T1, "T1"),
    (TumorStage::T2, "T2"),
];
const GRADES: [(TumorGrade, &str); 2] = [(TumorGrade::Low, "LG"), (TumorGrade::High, "HG")];

fn breakdown(rows: &mut Vec<StatsRow>, section: &'static str, strata: &[(&'static str, u64)], whole: u64) {
    for &(stratum, count) in strata {
        rows.push(StatsRow {
            section,
            stratum,
            count,
            percent: percent(count, whole),
        });
    }
}

/// Lesion tallies over a set of cases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionCounts {
    pub patients: u64,
    pub cases: u64,
    pub lesions: u64,
    pub benign: u64,
    pub cancer: u64,
    /// Ta, CIS, T1, T2.
    pub stage: [u64; 4],
    /// Low, high.
    pub grade: [u64; 2],
    /// Lesion count of every case in scope.
    pub lesions_per_case: Vec<u64>,
}

impl LesionCounts {
    pub fn add_pathology(&mut self, pathology: &PathologyCode) {
        match pathology {
            PathologyCode::Benign => self.benign += 1,
            PathologyCode::Cancer { stage, grade } => {
                self.cancer += 1;
                self.stage[STAGES.iter().position(|(s, _)| s == stage).expect("all stages listed")] += 1;
                if let Some(g) = grade {
                    self.grade[GRADES.iter().position(|(x, _)| x == g).expect("all grades listed")] += 1;
                }
            }
        }
    }
}

/// Report at case level (cohort sizes and lesions per case) or lesion level
/// (pathology, stage and grade breakdowns). Stage shares are of all cancer
/// lesions, grade shares of graded cancer lesions.
pub fn lesion_report(counts: &LesionCounts, level: StatsLevel) -> StatsReport {
    let mut rows = Vec::new();
    match level {
        StatsLevel::Case => {
            for (stratum, count) in [("patients", counts.patients), ("cases", counts.cases), ("lesions", counts.lesions)] {
                rows.push(StatsRow {
                    section: "cohort",
                    stratum,
                    count,
                    percent: None,
                });
            }
        }
        _ => {
            let typed = counts.benign + counts.cancer;
            breakdown(&mut rows, "pathology", &[("benign", counts.benign), ("cancer", counts.cancer)], typed);
            let stages: Vec<_> = STAGES.iter().zip(counts.stage).map(|((_, n), c)| (*n, c)).collect();
            breakdown(&mut rows, "stage", &stages, counts.stage.iter().sum());
            let grades: Vec<_> = GRADES.iter().zip(counts.grade).map(|((_, n), c)| (*n, c)).collect();
            breakdown(&mut rows, "grade", &grades, counts.grade.iter().sum());
        }
    }
    StatsReport {
        level,
        rows,
        lesions_per_case: match level {
            StatsLevel::Case => quartiles(&counts.lesions_per_case),
            _ => None,
        },
    }
}

/// Frame tallies over a set of videos.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub total: u64,
    pub excluded: u64,
    /// Non-excluded frames of videos carrying at least one lesion annotation.
    pub annotated: u64,
    /// Annotated frames not covered by any lesion annotation.
    pub background: u64,
    pub benign: u64,
    pub cancer: u64,
    pub stage: [u64; 4],
    pub grade: [u64; 2],
}

impl FrameCounts {
    pub fn unannotated(&self) -> u64 {
        self.total - self.excluded - self.annotated
    }
}

/// Frame-level report: background/benign/cancer shares of annotated frames,
/// stage and grade shares of their own totals, and the overall accounting
/// as shares of all frames.
pub fn frame_report(counts: &FrameCounts) -> StatsReport {
    let mut rows = Vec::new();
    breakdown(
        &mut rows,
        "frames",
        &[("background", counts.background), ("benign", counts.benign), ("cancer", counts.cancer)],
        counts.annotated,
    );
    let stages: Vec<_> = STAGES.iter().zip(counts.stage).map(|((_, n), c)| (*n, c)).collect();
    breakdown(&mut rows, "stage", &stages, counts.stage.iter().sum());
    let grades: Vec<_> = GRADES.iter().zip(counts.grade).map(|((_, n), c)| (*n, c)).collect();
    breakdown(&mut rows, "grade", &grades, counts.grade.iter().sum());
    breakdown(
        &mut rows,
        "accounting",
        &[
            ("total", counts.total),
            ("annotated", counts.annotated),
            ("excluded", counts.excluded),
            ("unannotated", counts.unannotated()),
        ],
        counts.total,
    );
    StatsReport {
        level: StatsLevel::Frame,
        rows,
        lesions_per_case: None,
    }
}

/// A video in scope for frame statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrames {
    pub asset_id: String,
    pub case_id: String,
    pub frame_count: u64,
}

/// Sorted, disjoint, inclusive intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct IntervalSet(Vec<(u64, u64)>);

impl IntervalSet {
    fn from_spans(mut spans: Vec<(u64, u64)>, limit: u64) -> Self {
        spans.retain(|(s, _)| *s < limit);
        spans.iter_mut().for_each(|(_, e)| *e = (*e).min(limit.saturating_sub(1)));
        spans.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(spans.len());
        for (s, e) in spans {
            match merged.last_mut() {
                Some((_, last)) if s <= last.saturating_add(1) => *last = (*last).max(e),
                _ => merged.push((s, e)),
            }
        }
        IntervalSet(merged)
    }

    fn len(&self) -> u64 {
        self.0.iter().map(|(s, e)| e - s + 1).sum()
    }

    fn overlap(&self, other: &IntervalSet) -> u64 {
        let (mut i, mut j, mut total) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a0, a1) = self.0[i];
            let (b0, b1) = other.0[j];
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if lo <= hi {
                total += hi - lo + 1;
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Frames of `self` outside `removed`.
    fn minus_len(&self, removed: &IntervalSet) -> u64 {
        self.len() - self.overlap(removed)
    }
}

/// Statistics over the cases in `scope` (`(case_id, patient uid)` pairs).
///
/// Frame level counts a frame once per stratum it shows, after removing
/// excluded frames; a frame showing two strata therefore appears in both.
pub fn aggregate_stats(
    store: &AnnotationStore,
    scope: &[(String, String)],
    videos: &[VideoFrames],
    level: StatsLevel,
) -> StatsReport {
    let case_ids: BTreeSet<&str> = scope.iter().map(|(c, _)| c.as_str()).collect();
    match level {
        StatsLevel::Case | StatsLevel::Lesion => {
            let mut counts = LesionCounts {
                patients: scope.iter().map(|(_, u)| u.as_str()).collect::<BTreeSet<_>>().len() as u64,
                cases: case_ids.len() as u64,
                ..Default::default()
            };
            let mut per_case: BTreeMap<&str, u64> = case_ids.iter().map(|c| (*c, 0)).collect();
            for lesion in store.lesions().filter(|l| case_ids.contains(l.case_id.as_str())) {
                counts.lesions += 1;
                *per_case.get_mut(lesion.case_id.as_str()).expect("scoped") += 1;
                if let Some(p) = &lesion.pathology {
                    counts.add_pathology(p);
                }
            }
            counts.lesions_per_case = per_case.into_values().collect();
            lesion_report(&counts, level)
        }
        StatsLevel::Frame => frame_report(&frame_counts(store, &case_ids, videos)),
    }
}

fn frame_counts(store: &AnnotationStore, case_ids: &BTreeSet<&str>, videos: &[VideoFrames]) -> FrameCounts {
    // lesion annotation spans per video, tagged with the lesion pathology
    let mut spans: BTreeMap<&str, Vec<(FrameSpan, Option<PathologyCode>)>> = BTreeMap::new();
    let pathology = |lesion_id: &str| store.lesion(lesion_id).ok().and_then(|l| l.pathology);
    for c in store.classifications() {
        spans
            .entry(c.span.video_asset_id.as_str())
            .or_default()
            .push((c.span.clone(), pathology(&c.lesion_id)));
    }
    for s in store.segmentations() {
        spans
            .entry(s.video_asset_id.as_str())
            .or_default()
            .push((FrameSpan::single(s.video_asset_id.clone(), s.frame), pathology(&s.lesion_id)));
    }
    let mut exclusions: BTreeMap<&str, Vec<(u64, u64)>> = BTreeMap::new();
    for m in store.exclusions() {
        exclusions
            .entry(m.span.video_asset_id.as_str())
            .or_default()
            .push((m.span.start_frame, m.span.end_frame));
    }

    let mut counts = FrameCounts::default();
    for video in videos.iter().filter(|v| case_ids.contains(v.case_id.as_str())) {
        let fc = video.frame_count;
        let excluded = IntervalSet::from_spans(exclusions.get(video.asset_id.as_str()).cloned().unwrap_or_default(), fc);
        counts.total += fc;
        counts.excluded += excluded.len();
        let Some(list) = spans.get(video.asset_id.as_str()) else {
            continue;
        };
        let kept = fc - excluded.len();
        counts.annotated += kept;
        let covered = IntervalSet::from_spans(list.iter().map(|(s, _)| (s.start_frame, s.end_frame)).collect(), fc);
        counts.background += kept - covered.minus_len(&excluded);

        let stratum = |keep: &dyn Fn(&PathologyCode) -> bool| {
            let chosen = list
                .iter()
                .filter(|(_, p)| p.as_ref().is_some_and(keep))
                .map(|(s, _)| (s.start_frame, s.end_frame))
                .collect();
            IntervalSet::from_spans(chosen, fc).minus_len(&excluded)
        };
        counts.benign += stratum(&|p| *p == PathologyCode::Benign);
        counts.cancer += stratum(&|p| p.stage().is_some());
        for (i, (stage, _)) in STAGES.iter().enumerate() {
            counts.stage[i] += stratum(&|p| p.stage() == Some(*stage));
        }
        for (i, (grade, _)) in GRADES.iter().enumerate() {
            counts.grade[i] += stratum(&|p| p.grade() == Some(*grade));
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::geometry::Point;
    use crate::annotations::{ExclusionReason, LesionDraft};
    use crate::catalog::VideoMeta;

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent(49, 163).unwrap().to_string(), "30.1");
        assert_eq!(percent(8, 114).unwrap().to_string(), "7.0");
        assert_eq!(percent(1, 8).unwrap().to_string(), "12.5");
        // 0.05% exactly rounds up
        assert_eq!(percent(1, 2000).unwrap().to_string(), "0.1");
        assert_eq!(percent(1, 2001).unwrap().to_string(), "0.0");
        assert_eq!(percent(3, 3).unwrap().to_string(), "100.0");
        assert_eq!(percent(1, 0), None);
    }

    #[test]
    fn interpolated_quartiles() {
        let q = quartiles(&[1, 2, 3, 4]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        let q = quartiles(&[5]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (5.0, 5.0, 5.0));
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn intervals() {
        let a = IntervalSet::from_spans(vec![(5, 9), (0, 2), (3, 4), (20, 30)], 25);
        assert_eq!(a.0, vec![(0, 9), (20, 24)]);
        assert_eq!(a.len(), 15);
        let b = IntervalSet::from_spans(vec![(8, 21)], 25);
        assert_eq!(a.overlap(&b), 4);
        assert_eq!(a.minus_len(&b), 11);
    }

    #[test]
    fn empty_scope() {
        let store = AnnotationStore::new();
        for level in [StatsLevel::Case, StatsLevel::Lesion, StatsLevel::Frame] {
            let report = aggregate_stats(&store, &[], &[], level);
            assert!(report.rows.iter().all(|r| r.count == 0 && r.percent.is_none()));
        }
        let mut csv = Vec::new();
        aggregate_stats(&store, &[], &[], StatsLevel::Lesion).write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("pathology,benign,0,\n"));
    }

    #[test]
    fn frame_accounting_small() {
        let meta = VideoMeta {
            frame_count: 100,
            width: 20,
            height: 20,
        };
        let mut store = AnnotationStore::new();
        let ben = store.add_lesion("C1", LesionDraft { pathology: Some(PathologyCode::Benign), ..Default::default() });
        let ta = store.add_lesion(
            "C1",
            LesionDraft {
                pathology: Some(PathologyCode::cancer(TumorStage::Ta, Some(TumorGrade::Low))),
                ..Default::default()
            },
        );
        store.add_classification(&ben.lesion_id, FrameSpan::new("V1", 0, 9), &meta).unwrap();
        store.add_classification(&ta.lesion_id, FrameSpan::new("V1", 20, 39), &meta).unwrap();
        let tri = vec![Point::new(0.0, 0.0), Point::new(5.0, 0.0), Point::new(0.0, 5.0)];
        // inside an existing span: no new coverage
        store.add_segmentation(&ta.lesion_id, "V1", 25, tri.clone(), &meta).unwrap();
        store.add_segmentation(&ta.lesion_id, "V1", 45, tri, &meta).unwrap();
        store.mark_excluded(FrameSpan::new("V1", 80, 99), ExclusionReason::Turbt, &meta).unwrap();
        store.mark_excluded(FrameSpan::new("V2", 0, 9), ExclusionReason::OutOfBody, &meta).unwrap();
        let videos = [
            VideoFrames { asset_id: "V1".into(), case_id: "C1".into(), frame_count: 100 },
            VideoFrames { asset_id: "V2".into(), case_id: "C1".into(), frame_count: 50 },
            VideoFrames { asset_id: "V3".into(), case_id: "C2".into(), frame_count: 70 },
        ];
        let scope = [("C1".to_string(), "UID0001".to_string())];
        let c = frame_counts(&store, &scope.iter().map(|(c, _)| c.as_str()).collect(), &videos);
        assert_eq!(c.total, 150);
        assert_eq!(c.excluded, 30);
        assert_eq!(c.annotated, 80);
        assert_eq!(c.unannotated(), 40);
        assert_eq!((c.benign, c.cancer), (10, 21));
        assert_eq!(c.background, 80 - 31);
        assert_eq!(c.stage, [21, 0, 0, 0]);
        assert_eq!(c.grade, [21, 0]);
        let report = aggregate_stats(&store, &scope, &videos, StatsLevel::Frame);
        assert_eq!(report.row("accounting", "annotated").unwrap().percent.unwrap().to_string(), "53.3");
    }
}
