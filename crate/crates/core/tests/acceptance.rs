//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the harness so the lines always reach the terminal.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use cysto_core::annotations::geometry::Point;
use cysto_core::annotations::{
    aggregate_stats, category_for, export_coco, import_coco, percent, AnnotationStore, Appearance, CocoDocument,
    ExclusionReason, FrameSpan, LesionDraft, StatsLevel, StatsReport, VideoFrames,
};
use cysto_core::catalog::{
    read_index, write_index, AssetKind, Catalog, DocumentKind, DocumentRef, Procedure, Site, VideoMeta,
};
use cysto_core::export::{fair_audit, load_bundle, FairInputs, FairReport, FairStatus, PseudonymVault};
use cysto_core::qc::{
    consensus, draw_sample, run_qc1, run_qc2, run_qc3, sample_size, CaseEvidence, ConsensusOutcome, DecidedBy,
    QcLayer, QcLedger, QcReport, ReviewVote, ReviewerRole, Verdict,
};
use cysto_core::quality::{blur_score, brisque_features, GrayImage, QualityGates, QualityScores};
use cysto_core::vocab::{
    format_image_label, CompletionStatus, PathologyCode, TumorGrade, TumorStage, VocabDomain, Vocabulary,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

fn expect_percents(report: &StatsReport, want: &[(&str, &str, &str)]) -> Result<(), String> {
    for (section, stratum, pct) in want {
        let row = report
            .row(section, stratum)
            .ok_or_else(|| format!("no row {section}/{stratum}"))?;
        let got = row.percent.map(|p| p.to_string()).unwrap_or_default();
        ensure!(got == *pct, "{section}/{stratum}: {got} != {pct}");
    }
    Ok(())
}

fn table3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut per_case: Vec<usize> = [(1, 21), (2, 19), (3, 16), (4, 8), (5, 2), (7, 2)]
        .iter()
        .flat_map(|&(k, n)| std::iter::repeat_n(k, n))
        .collect();
    per_case.shuffle(&mut rng);
    use TumorGrade::*;
    use TumorStage::*;
    let mut pathologies: Vec<PathologyCode> = [
        (PathologyCode::Benign, 49),
        (PathologyCode::cancer(Ta, Some(Low)), 54),
        (PathologyCode::cancer(Ta, Some(High)), 16),
        (PathologyCode::cancer(Cis, Some(High)), 23),
        (PathologyCode::cancer(T1, Some(High)), 13),
        (PathologyCode::cancer(T2, Some(High)), 8),
    ]
    .iter()
    .flat_map(|&(p, n)| std::iter::repeat_n(p, n))
    .collect();
    pathologies.shuffle(&mut rng);
    ensure!(per_case.len() == 68 && per_case.iter().sum::<usize>() == 163, "fixture shape");

    let mut store = AnnotationStore::new();
    let mut scope = Vec::new();
    let mut next = pathologies.iter();
    for (k, &n) in per_case.iter().enumerate() {
        let case_id = format!("CASE{:05}", k + 1);
        let patient = if k < 60 { k } else { k - 60 };
        scope.push((case_id.clone(), format!("UID{:04}", patient + 1)));
        for _ in 0..n {
            let draft = LesionDraft {
                pathology: next.next().copied(),
                ..Default::default()
            };
            store.add_lesion(&case_id, draft);
        }
    }

    let start = Instant::now();
    let cases = aggregate_stats(&store, &scope, &[], StatsLevel::Case);
    let lesions = aggregate_stats(&store, &scope, &[], StatsLevel::Lesion);
    let elapsed = start.elapsed();

    for (stratum, want) in [("patients", 60), ("cases", 68), ("lesions", 163)] {
        let got = cases.row("cohort", stratum).map(|r| r.count);
        ensure!(got == Some(want), "{stratum}: {got:?} != {want}");
    }
    let q = cases.lesions_per_case.ok_or("no quartiles")?;
    ensure!((q.median, q.q1, q.q3) == (2.0, 1.0, 3.0), "quartiles {q:?}");
    expect_percents(
        &lesions,
        &[
            ("pathology", "benign", "30.1"),
            ("pathology", "cancer", "69.9"),
            ("stage", "Ta", "61.4"),
            ("stage", "CIS", "20.2"),
            ("stage", "T1", "11.4"),
            ("stage", "T2", "7.0"),
            ("grade", "LG", "47.4"),
            ("grade", "HG", "52.6"),
        ],
    )?;
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!("8 percentages exact, median 2 (IQR 1-3), {elapsed:?}"))
}

fn table4() -> Outcome {
    let wide = |frame_count| VideoMeta {
        frame_count,
        width: 640,
        height: 480,
    };
    let mut store = AnnotationStore::new();
    let mut videos = Vec::new();
    let mut scope = Vec::new();
    let mut add_video = |store: &mut AnnotationStore, pathology: Option<PathologyCode>, covered: u64, extra: u64| {
        let n = videos.len() + 1;
        let (case_id, video) = (format!("CASE{n:05}"), format!("A{n:07}"));
        let meta = wide(covered + extra);
        scope.push((case_id.clone(), format!("UID{n:04}")));
        videos.push(VideoFrames {
            asset_id: video.clone(),
            case_id: case_id.clone(),
            frame_count: meta.frame_count,
        });
        if let Some(p) = pathology {
            let lesion = store.add_lesion(&case_id, LesionDraft { pathology: Some(p), ..Default::default() });
            store.add_classification(&lesion.lesion_id, FrameSpan::new(video.clone(), 0, covered - 1), &meta).unwrap();
        }
        (video, meta)
    };
    use TumorGrade::*;
    use TumorStage::*;
    // benign video: 28,954 lesion frames, 263,897 background, 5,000 resection
    let (v, meta) = add_video(&mut store, Some(PathologyCode::Benign), 28_954, 263_897 + 5_000);
    store
        .mark_excluded(FrameSpan::new(v, meta.frame_count - 5_000, meta.frame_count - 1), ExclusionReason::Turbt, &meta)
        .unwrap();
    for (stage, grade, frames) in [
        (Ta, Low, 18_420),
        (Ta, High, 10_052),
        (Cis, High, 14_457),
        (T1, High, 14_348),
        (T2, High, 3_553),
    ] {
        add_video(&mut store, Some(PathologyCode::cancer(stage, Some(grade))), frames, 0);
    }
    // unannotated video with an out-of-body stretch
    let (v, meta) = add_video(&mut store, None, 0, 498_351);
    store.mark_excluded(FrameSpan::new(v, 0, 39_999), ExclusionReason::OutOfBody, &meta).unwrap();

    let start = Instant::now();
    let report = aggregate_stats(&store, &scope, &videos, StatsLevel::Frame);
    let elapsed = start.elapsed();

    let count = |s: &str, t: &str| report.row(s, t).map(|r| r.count).unwrap_or(u64::MAX);
    ensure!(count("frames", "background") == 263_897, "background {}", count("frames", "background"));
    ensure!(count("frames", "benign") == 28_954, "benign {}", count("frames", "benign"));
    ensure!(count("frames", "cancer") == 60_830, "cancer {}", count("frames", "cancer"));
    let stage_sum: u64 = report.section("stage").map(|r| r.count).sum();
    let grade_sum: u64 = report.section("grade").map(|r| r.count).sum();
    ensure!(stage_sum == 60_830 && grade_sum == 60_830, "stage {stage_sum} grade {grade_sum}");
    ensure!(count("accounting", "total") == 857_032, "total {}", count("accounting", "total"));
    ensure!(count("accounting", "annotated") == 353_681, "annotated {}", count("accounting", "annotated"));
    expect_percents(
        &report,
        &[
            ("frames", "background", "74.6"),
            ("frames", "benign", "8.2"),
            ("frames", "cancer", "17.2"),
            ("stage", "Ta", "46.8"),
            ("stage", "CIS", "23.8"),
            ("stage", "T1", "23.6"),
            ("stage", "T2", "5.8"),
            ("grade", "LG", "30.3"),
            ("grade", "HG", "69.7"),
        ],
    )?;
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!("9 percentages exact, stage and grade frames sum to 60830, {elapsed:?}"))
}

fn ratios() -> Outcome {
    let a = percent(353_681, 857_032).map(|p| p.to_string());
    let b = percent(12, 163).map(|p| p.to_string());
    ensure!(a.as_deref() == Some("41.3"), "annotated share {a:?}");
    ensure!(b.as_deref() == Some("7.4"), "QC2 corrections {b:?}");
    Ok("41.3 and 7.4".into())
}

fn grammar_bijection() -> Outcome {
    let vocab = Vocabulary::default();
    let modalities = vocab.tokens(VocabDomain::Modality);
    let locations = vocab.tokens(VocabDomain::Location);
    let pathologies = vocab.tokens(VocabDomain::Pathology);
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let first = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let mut failures = Vec::new();
    for _ in 0..10_000 {
        let date = first + Duration::days(rng.random_range(0..11_000));
        let stem = format!(
            "UID{:04}_{}_{}_{}_{}_{:02}",
            rng.random_range(1..=9999),
            date.format("%Y%m%d"),
            modalities.choose(&mut rng).unwrap(),
            locations.choose(&mut rng).unwrap(),
            pathologies.choose(&mut rng).unwrap(),
            rng.random_range(1..=99)
        );
        match vocab.parse_image_stem(&stem) {
            Err(e) => failures.push(format!("{stem}: {e}")),
            Ok(label) => {
                let again = format_image_label(&label);
                if again != stem || vocab.parse_image_stem(&again).ok() != Some(label) {
                    failures.push(stem);
                }
            }
        }
    }
    ensure!(failures.is_empty(), "{} failures, first {}", failures.len(), failures[0]);
    Ok("10000 labels round-trip both ways".into())
}

/// Direct 3x3 convolution over interior pixels, then population variance.
fn blur_oracle(w: usize, h: usize, px: &[f64]) -> f64 {
    const K: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    let mut out = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (ky, row) in K.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    acc += k * px[(y + ky - 1) * w + (x + kx - 1)];
                }
            }
            out.push(acc);
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn blur() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(3..=64), rng.random_range(3..=64));
        let level = f64::from(rng.random_range(0u8..=255));
        let s = blur_score(&GrayImage::from_fn(w, h, |_, _| level)).map_err(|e| e.to_string())?;
        ensure!(s == 0.0, "constant {level} at {w}x{h} scored {s}");
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(5..=32), rng.random_range(5..=32));
        let px: Vec<f64> = (0..w * h).map(|_| f64::from(rng.random_range(0u8..=255))).collect();
        let got = blur_score(&GrayImage::new(w, h, px.clone()).unwrap()).map_err(|e| e.to_string())?;
        let want = blur_oracle(w, h, &px);
        let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure!(rel <= 1e-9, "{w}x{h}: {got} vs {want}");
    }
    Ok(format!("20 constant images score 0; 100 random images within {worst:.1e} relative"))
}

fn brisque() -> Outcome {
    let reference = common::brisque_reference();
    ensure!(reference.feature_images.len() >= 5, "need 5 reference images");
    let mut worst: f64 = 0.0;
    for item in &reference.feature_images {
        let got = brisque_features(&common::open(&item.file)).map_err(|e| e.to_string())?;
        for (i, (g, r)) in got.as_slice().iter().zip(&item.features).enumerate() {
            worst = worst.max((g - r).abs());
            ensure!((g - r).abs() <= 1e-4, "{} feature {i}: {g} vs {r}", item.file);
        }
    }
    let flat = brisque_features(&GrayImage::from_fn(64, 48, |_, _| 128.0)).map_err(|e| e.to_string())?;
    ensure!(flat.is_degenerate(), "flat image not flagged degenerate: {:?}", flat.as_slice());
    ensure!(flat.as_slice().iter().all(|v| v.is_finite()), "non-finite degenerate output");
    Ok(format!(
        "{} images x 36 features, max deviation {worst:.1e}; flat image degenerate",
        reference.feature_images.len()
    ))
}

/// The panel rule written out independently.
fn consensus_oracle(approve: usize, reject: usize, leader: Option<bool>, panel: usize) -> (ConsensusOutcome, DecidedBy) {
    let need = if panel == 4 { 3 } else { ((panel as f64 + 1.0) / 2.0).ceil() as usize };
    if approve >= need {
        (ConsensusOutcome::Approved, DecidedBy::Majority)
    } else if reject >= need {
        (ConsensusOutcome::Rejected, DecidedBy::Majority)
    } else {
        match leader {
            Some(true) => (ConsensusOutcome::Approved, DecidedBy::LeaderTiebreak),
            Some(false) => (ConsensusOutcome::Rejected, DecidedBy::LeaderTiebreak),
            None => (ConsensusOutcome::Escalated, DecidedBy::ExternalExpert),
        }
    }
}

fn consensus_table() -> Outcome {
    let mut checked = 0;
    for panel in 1..=5usize {
        // each urologist abstains, approves or rejects
        for pattern in 0..3usize.pow(panel as u32) {
            for leader in [None, Some(true), Some(false)] {
                let mut votes = Vec::new();
                let (mut a, mut r) = (0, 0);
                let mut code = pattern;
                for u in 0..panel {
                    let verdict = match code % 3 {
                        0 => None,
                        1 => Some(Verdict::Approve),
                        _ => Some(Verdict::Reject),
                    };
                    code /= 3;
                    if let Some(v) = verdict {
                        if v == Verdict::Approve { a += 1 } else { r += 1 }
                        votes.push(ReviewVote {
                            reviewer_id: format!("uro{u}"),
                            role: ReviewerRole::Urologist,
                            verdict: v,
                            cast_at: epoch(),
                        });
                    }
                }
                if let Some(l) = leader {
                    votes.push(ReviewVote {
                        reviewer_id: "leader".into(),
                        role: ReviewerRole::Leader,
                        verdict: if l { Verdict::Approve } else { Verdict::Reject },
                        cast_at: epoch(),
                    });
                }
                let d = consensus("item", votes, panel).map_err(|e| e.to_string())?;
                let want = consensus_oracle(a, r, leader, panel);
                ensure!((d.outcome, d.decided_by) == want, "panel {panel}, {a}A/{r}R, leader {leader:?}: {:?}", d);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} vote multisets over panels 1-5 agree with the rule"))
}

/// One case with an image, a video, a lesion and `segments` segmentations,
/// optionally broken so that a given layer fails.
struct Mini {
    catalog: Catalog,
    store: AnnotationStore,
    scores: BTreeMap<String, QualityScores>,
    vocab: Vocabulary,
    case_id: String,
    image_id: String,
}

const MINI_META: VideoMeta = VideoMeta {
    frame_count: 500,
    width: 64,
    height: 48,
};

fn mini(segments: u64, bad_media: bool, incomplete: bool, excluded_annotation: bool) -> Mini {
    let vocab = Vocabulary::default();
    let mut catalog = Catalog::new();
    let date = NaiveDate::from_ymd_opt(2022, 7, 8).unwrap();
    let uid = catalog.register_patient(Site::SiteA, date).uid;
    let docs = vec![DocumentRef {
        kind: DocumentKind::PathologyReport,
        reference: "p.txt".into(),
    }];
    let case_id = catalog.create_case(&uid, date, Procedure::ClinicCysto, docs).unwrap().case_id;
    let image = catalog
        .ingest(&vocab, &format!("{uid}_20220708_WLC_DOME_TA-HG_01.png"), b"i", &case_id, AssetKind::Image, false)
        .unwrap()
        .asset;
    let video = catalog
        .ingest(&vocab, &format!("{uid}_20220708.mp4"), b"v", &case_id, AssetKind::Video, false)
        .unwrap()
        .asset;
    catalog.set_video_meta(&video.asset_id, MINI_META).unwrap();
    let gates = QualityGates::default();
    let mut scores = BTreeMap::new();
    scores.insert(image.asset_id.clone(), gates.evaluate(if bad_media { 3.0 } else { 300.0 }, 30.0));
    scores.insert(video.asset_id.clone(), gates.evaluate(300.0, 30.0));
    let mut store = AnnotationStore::new();
    let lesion = store.add_lesion(
        &case_id,
        LesionDraft {
            location: vocab.location("DOME").ok(),
            appearance: (!incomplete).then_some(Appearance::Papillary),
            pathology: Some("TA-HG".parse().unwrap()),
            asset_ids: vec![video.asset_id.clone()],
        },
    );
    let tri = vec![Point::new(2.0, 2.0), Point::new(30.0, 3.0), Point::new(10.0, 40.0)];
    for f in 0..segments {
        store.add_segmentation(&lesion.lesion_id, &video.asset_id, f, tri.clone(), &MINI_META).unwrap();
    }
    if excluded_annotation {
        store
            .mark_excluded(FrameSpan::new(video.asset_id.clone(), 0, segments), ExclusionReason::OutOfBody, &MINI_META)
            .unwrap();
    }
    Mini {
        catalog,
        store,
        scores,
        vocab,
        case_id,
        image_id: image.asset_id,
    }
}

impl Mini {
    fn evidence<'a>(&'a self, docs: &'a dyn Fn(&DocumentRef) -> bool) -> CaseEvidence<'a> {
        CaseEvidence {
            case: self.catalog.case(&self.case_id).unwrap(),
            assets: self.catalog.case_assets(&self.case_id).collect(),
            scores: &self.scores,
            vocab: &self.vocab,
            store: &self.store,
            document_exists: docs,
        }
    }
}

fn swiss_cheese() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut released = 0;
    let mut qc3_runs = 0;
    for trial in 0..1000 {
        let defects: [bool; 3] = std::array::from_fn(|_| rng.random_bool(0.2));
        let run: [bool; 3] = std::array::from_fn(|_| rng.random_bool(0.85));
        let rerun_qc1 = rng.random_bool(0.1);
        let mut m = mini(3, defects[0], defects[1], defects[2]);
        let docs = |_: &DocumentRef| true;
        let mut report = QcReport::new(&m.case_id);
        {
            let ev = m.evidence(&docs);
            if run[0] {
                report.record(run_qc1(&ev, epoch()));
            }
            if run[1] {
                if let Ok(r) = run_qc2(&ev, &report, epoch()) {
                    report.record(r);
                }
            }
            if run[2] {
                if let Ok(r) = run_qc3(&ev, &report, 0.1, trial, epoch()) {
                    qc3_runs += 1;
                    ensure!(r.reverified_layers == [QcLayer::Qc1, QcLayer::Qc2], "trial {trial}: {:?}", r.reverified_layers);
                    report.record(r);
                }
            }
            if rerun_qc1 {
                report.record(run_qc1(&ev, epoch()));
            }
        }
        if let Some(r) = &report.qc3 {
            ensure!(r.reverified_layers == [QcLayer::Qc1, QcLayer::Qc2], "stored QC3 lacks re-verification");
        }
        let mut ledger = QcLedger::default();
        ledger.reports.insert(m.case_id.clone(), report);

        let mut reached = false;
        while let Some(next) = m.catalog.asset(&m.image_id).unwrap().status.next() {
            if m.catalog.set_status(&m.image_id, next, &ledger, "t").is_err() {
                break;
            }
            reached = next == CompletionStatus::Released;
        }
        let expected = run.iter().all(|&r| r) && !defects.iter().any(|&d| d) && !rerun_qc1;
        ensure!(reached == expected, "trial {trial}: defects {defects:?} runs {run:?} rerun {rerun_qc1}: released {reached}");
        released += usize::from(reached);
    }
    Ok(format!("1000 random QC histories, {released} released, {qc3_runs} QC3 runs all re-verified"))
}

/// Twice the signed area by the trapezoid rule.
fn area_oracle(ring: &[Point]) -> f64 {
    let n = ring.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            (b.x - a.x) * (b.y + a.y)
        })
        .sum();
    twice.abs() / 2.0
}

fn coco_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let meta = VideoMeta {
        frame_count: 10_000,
        width: 1920,
        height: 1080,
    };
    let graded: Vec<PathologyCode> = Vocabulary::default()
        .tokens(VocabDomain::Pathology)
        .iter()
        .map(|t| t.parse().unwrap())
        .filter(|p| category_for(p).is_some())
        .collect();
    let mut store = AnnotationStore::new();
    let cases: Vec<String> = (1..=5).map(|i| format!("CASE{i:05}")).collect();
    let mut lesions = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        for _ in 0..6 {
            let p = *graded.choose(&mut rng).unwrap();
            let l = store.add_lesion(case, LesionDraft { pathology: Some(p), ..Default::default() });
            lesions.push((l.lesion_id, format!("A{:07}", i + 1)));
        }
    }
    let mut made = 0;
    while made < 500 {
        let k = rng.random_range(3..=12);
        let (cx, cy) = (rng.random_range(110.0..1810.0), rng.random_range(110.0..970.0));
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let ring: Vec<Point> = angles
            .iter()
            .map(|a| {
                let r = rng.random_range(5.0..100.0);
                Point::new(cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let (lesion, video) = lesions.choose(&mut rng).unwrap();
        if store.add_segmentation(lesion, video, rng.random_range(0..10_000), ring, &meta).is_ok() {
            made += 1;
        }
    }

    let mut recovered = 0;
    let mut worst: f64 = 0.0;
    for case in &cases {
        let doc = export_coco(&store, case, &|_| Some(meta), &|v, f| format!("{v}_{f:06}.png"))
            .map_err(|e| e.to_string())?;
        let parsed = CocoDocument::from_json(&doc.to_json_pretty()).map_err(|e| e.to_string())?;
        for imp in import_coco(&parsed).map_err(|e| e.to_string())? {
            let id = imp.annotation_id.clone().ok_or("annotation id lost")?;
            let seg = store.segmentations().find(|s| s.annotation_id == id).ok_or("unknown id")?;
            let pathology = store.lesion(&seg.lesion_id).unwrap().pathology.unwrap();
            ensure!(imp.polygon == seg.polygon, "{id}: polygon changed");
            ensure!(imp.frame == seg.frame && imp.video_asset_id == seg.video_asset_id, "{id}: frame changed");
            ensure!(imp.lesion_id == seg.lesion_id && imp.pathology == pathology, "{id}: category changed");
            let oracle = area_oracle(&seg.polygon);
            let rel = (imp.area - oracle).abs() / oracle;
            worst = worst.max(rel);
            ensure!(rel <= 1e-9, "{id}: area {} vs {oracle}", imp.area);
            recovered += 1;
        }
    }
    ensure!(recovered == 500, "recovered {recovered} of 500");
    Ok(format!("500 polygons recovered exactly, area deviation {worst:.1e}"))
}

fn naive_contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn deidentification() -> Outcome {
    let mut c = common::cohort::cohort(50);
    let out = c.dir.path().join("bundle");
    c.ws.export_research(&c.case_ids, &out, common::cohort::now()).map_err(|e| e.to_string())?;
    let uids: Vec<String> = c.ws.catalog.patients().map(|p| p.uid.to_string()).collect();
    let mut files = 0;
    let mut pending = vec![out.clone()];
    while let Some(dir) = pending.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                pending.push(path);
                continue;
            }
            files += 1;
            let bytes = std::fs::read(&path).unwrap();
            let name = path.strip_prefix(&out).unwrap().to_string_lossy().into_owned();
            for uid in &uids {
                ensure!(!naive_contains(&bytes, uid.as_bytes()), "{uid} in {name}");
                ensure!(!name.contains(uid.as_str()), "{uid} in file name {name}");
            }
        }
    }
    let coco = std::fs::read_dir(out.join("coco")).unwrap().count();
    ensure!(coco == 50, "{coco} COCO files");

    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    let mut shifted: BTreeMap<String, Vec<(NaiveDate, NaiveDate)>> = BTreeMap::new();
    for row in csv::Reader::from_reader(index.as_bytes()).records() {
        let row = row.unwrap();
        let case = c.ws.catalog.case(&row[1]).unwrap();
        ensure!(c.ws.vault.uid_of(&row[2]) == Some(case.uid.as_str()), "pseudonym of {}", &row[0]);
        shifted.entry(row[2].to_string()).or_default().push((case.case_date, row[4].parse().unwrap()));
    }
    let mut pairs = 0;
    for dates in shifted.values() {
        for a in dates {
            for b in dates {
                ensure!(b.1 - a.1 == b.0 - a.0, "interval changed");
                pairs += usize::from(a.0 != b.0);
            }
        }
    }
    ensure!(pairs > 0, "fixture has no repeat patients");

    let salt = b"acceptance salt".to_vec();
    let mut v1 = PseudonymVault::new(salt.clone(), epoch()).unwrap();
    let mut v2 = PseudonymVault::new(salt, epoch()).unwrap();
    let uids: Vec<String> = (0..10_000).map(|n| format!("UID{n:04}")).collect();
    let m1 = v1.pseudonymize_all(uids.iter().map(String::as_str)).map_err(|e| e.to_string())?;
    let m2 = v2.pseudonymize_all(uids.iter().rev().map(String::as_str)).map_err(|e| e.to_string())?;
    ensure!(m1 == m2, "pseudonyms depend on call order");
    ensure!(uids.iter().all(|u| v1.pseudonymize(u).ok().as_ref() == m1.get(u)), "pseudonyms not stable");
    let distinct: BTreeSet<&String> = m1.values().collect();
    ensure!(distinct.len() == 10_000, "{} distinct pseudonyms", distinct.len());
    Ok(format!("{files} bundle files clean, {pairs} same-patient date pairs preserved, 10000 pseudonyms injective"))
}

fn fair() -> Outcome {
    let mut c = common::cohort::cohort(6);
    let out = c.dir.path().join("bundle");
    c.ws.export_research(&c.case_ids, &out, common::cohort::now()).map_err(|e| e.to_string())?;
    c.ws.save().map_err(|e| e.to_string())?;
    let ws = &c.ws;
    let index = std::fs::read(ws.index_path()).unwrap();
    let rows = read_index(index.as_slice()).unwrap();
    let bundle = load_bundle(&out).map_err(|e| e.to_string())?;
    let media = |a: &cysto_core::catalog::MediaAsset| ws.media_path(a).is_file();
    let audit = |index: &[u8], bundle: &cysto_core::export::LoadedBundle| -> FairReport {
        fair_audit(&FairInputs {
            catalog: &ws.catalog,
            vocab: &ws.vocab,
            index_csv: Some(index),
            media_exists: &media,
            bundles: std::slice::from_ref(bundle),
            attestations: &ws.settings.attestations,
        })
    };
    let healthy = audit(&index, &bundle);
    ensure!(healthy.entries.len() == 15, "{} entries", healthy.entries.len());
    ensure!(
        healthy.count(FairStatus::Pass) == 12 && healthy.count(FairStatus::Attested) == 3,
        "healthy fixture: {healthy:#?}"
    );
    let rewrite = |edit: &dyn Fn(&mut Vec<cysto_core::catalog::IndexRow>)| {
        let mut r = rows.clone();
        edit(&mut r);
        let mut bytes = Vec::new();
        write_index(&r, &mut bytes).unwrap();
        bytes
    };
    let deleted = c.deleted_asset.clone();
    let mut unlicensed = bundle.clone();
    unlicensed.manifest.license.clear();
    let defects: Vec<(&str, &str, Vec<u8>, &cysto_core::export::LoadedBundle)> = vec![
        ("missing license", "R2", index.clone(), &unlicensed),
        ("missing tombstone metadata", "A4", rewrite(&|r| r.retain(|x| x.asset_id != deleted)), &bundle),
        ("duplicate identifier", "F1", rewrite(&|r| r.push(r[1].clone())), &bundle),
        ("broken cross-reference", "I3", rewrite(&|r| r[2].case_id = "CASE09999".into()), &bundle),
        ("empty required column", "R1", rewrite(&|r| r[3].checksum.clear()), &bundle),
    ];
    for (name, principle, index, bundle) in &defects {
        let report = audit(index, bundle);
        for (before, after) in healthy.entries.iter().zip(&report.entries) {
            let flipped = before.status != after.status;
            if before.principle == *principle {
                ensure!(after.status == FairStatus::Fail, "{name}: {principle} is {:?}", after.status);
            } else {
                ensure!(!flipped, "{name}: {} also changed to {:?} ({})", after.principle, after.status, after.evidence);
            }
        }
    }
    Ok("healthy 12 PASS + 3 ATTESTED; 5 defects each flip only their principle".into())
}

fn qc3_sampling() -> Outcome {
    let sizes: Vec<usize> = [1, 4, 40, 400].iter().map(|&n| sample_size(n, 0.1)).collect();
    ensure!(sizes == [1, 4, 5, 40], "sizes {sizes:?}");
    for &n in &[1usize, 4, 40, 400] {
        let ids: Vec<String> = (0..n).map(|i| format!("N{i:07}")).collect();
        let drawn = draw_sample(&ids, 0.1, 99);
        ensure!(drawn.len() == sample_size(n, 0.1), "n={n}: drew {}", drawn.len());
    }
    let m = mini(40, false, false, false);
    let docs = |_: &DocumentRef| true;
    let ev = m.evidence(&docs);
    let mut report = QcReport::new(&m.case_id);
    report.record(run_qc1(&ev, epoch()));
    report.record(run_qc2(&ev, &report, epoch()).map_err(|e| e.to_string())?);
    let runs: Vec<Vec<String>> = (0..10)
        .map(|_| run_qc3(&ev, &report, 0.1, 2024, epoch()).unwrap().sample.unwrap().audited)
        .collect();
    ensure!(runs.iter().all(|r| *r == runs[0]), "samples differ across runs");
    ensure!(runs[0].len() == 5, "audited {} of 40", runs[0].len());
    Ok(format!("sizes {{1,4,5,40}}; 10 seeded runs audit the same 5 of 40: {}", runs[0].join(",")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("table3-lesion-statistics", table3),
        ("table4-frame-statistics", table4),
        ("ratio-checks", ratios),
        ("grammar-bijection", grammar_bijection),
        ("blur-score", blur),
        ("brisque-features", brisque),
        ("consensus-enumeration", consensus_table),
        ("swiss-cheese-gate", swiss_cheese),
        ("coco-round-trip", coco_round_trip),
        ("deidentification-scan", deidentification),
        ("fair-audit", fair),
        ("qc3-sampling", qc3_sampling),
    ];
    // keep panic messages out of the report lines
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
