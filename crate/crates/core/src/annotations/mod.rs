//! Lesions, frame-level annotations, exclusion marks, COCO interchange and
//! cohort statistics.

mod coco;
pub mod geometry;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::VideoMeta;
use crate::vocab::{LocationCode, PathologyCode};
pub use coco::{
    category_for, export_coco, frame_file_name, import_coco, CocoAnnotation, CocoAttributes, CocoCategory,
    CocoDocument, CocoImage, ImportedAnnotation, COCO_CATEGORIES,
};
use geometry::{validate_polygon, Point, PolygonDefect};
pub use stats::{
    aggregate_stats, frame_report, lesion_report, percent, quartiles, FrameCounts, LesionCounts,
    Percent, Quartiles, StatsLevel, StatsReport, StatsRow, VideoFrames,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("unknown lesion {0}")]
    UnknownLesion(String),
    #[error("unknown annotation {0}")]
    UnknownAnnotation(String),
    #[error("frame span {start}..={end} is invalid for a video of {frame_count} frames")]
    BadSpan { start: u64, end: u64, frame_count: u64 },
    #[error("frame {frame} of {video} is excluded")]
    FrameExcluded { video: String, frame: u64 },
    #[error("polygon needs at least three distinct vertices and a positive area")]
    DegeneratePolygon,
    #[error("polygon edges intersect")]
    SelfIntersection,
    #[error("polygon vertex outside the frame")]
    OutOfBounds,
    #[error("span overlaps annotation {0}")]
    OverlapWithAnnotation(String),
    #[error("case {0} has no segmentation annotations")]
    NothingToExport(String),
    #[error("lesion {0} has no pathology stratum")]
    Uncategorized(String),
    #[error("COCO schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown COCO category {0}")]
    UnknownCategory(String),
}

impl From<PolygonDefect> for AnnotationError {
    fn from(d: PolygonDefect) -> Self {
        match d {
            PolygonDefect::Degenerate => AnnotationError::DegeneratePolygon,
            PolygonDefect::SelfIntersection => AnnotationError::SelfIntersection,
            PolygonDefect::OutOfBounds => AnnotationError::OutOfBounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Appearance {
    Papillary,
    Sessile,
    Flat,
}

impl fmt::Display for Appearance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Appearance::Papillary => "PAPILLARY",
            Appearance::Sessile => "SESSILE",
            Appearance::Flat => "FLAT",
        })
    }
}

impl std::str::FromStr for Appearance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PAPILLARY" => Ok(Appearance::Papillary),
            "SESSILE" => Ok(Appearance::Sessile),
            "FLAT" => Ok(Appearance::Flat),
            _ => Err(format!("unknown appearance {s:?}")),
        }
    }
}

/// A lesion. Descriptive fields may be missing while curation is under way;
/// completeness is what the second QC layer checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub lesion_id: String,
    pub case_id: String,
    pub location: Option<LocationCode>,
    pub appearance: Option<Appearance>,
    pub pathology: Option<PathologyCode>,
    /// Media assets in which the lesion is visible.
    #[serde(default)]
    pub asset_ids: Vec<String>,
}

/// Fields of a new lesion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionDraft {
    pub location: Option<LocationCode>,
    pub appearance: Option<Appearance>,
    pub pathology: Option<PathologyCode>,
    #[serde(default)]
    pub asset_ids: Vec<String>,
}

/// Inclusive frame interval of one video.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameSpan {
    pub video_asset_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl FrameSpan {
    pub fn new(video_asset_id: impl Into<String>, start_frame: u64, end_frame: u64) -> Self {
        FrameSpan {
            video_asset_id: video_asset_id.into(),
            start_frame,
            end_frame,
        }
    }

    pub fn single(video_asset_id: impl Into<String>, frame: u64) -> Self {
        Self::new(video_asset_id, frame, frame)
    }

    pub fn frame_count(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    pub fn overlaps(&self, other: &FrameSpan) -> bool {
        self.video_asset_id == other.video_asset_id
            && self.start_frame <= other.end_frame
            && other.start_frame <= self.end_frame
    }

    pub fn validate(&self, meta: &VideoMeta) -> Result<(), AnnotationError> {
        if self.start_frame > self.end_frame || self.end_frame >= meta.frame_count {
            return Err(AnnotationError::BadSpan {
                start: self.start_frame,
                end: self.end_frame,
                frame_count: meta.frame_count,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewState {
    #[default]
    Pending,
    Approved,
    Rejected,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationAnnotation {
    pub annotation_id: String,
    pub lesion_id: String,
    pub span: FrameSpan,
    #[serde(default)]
    pub review: ReviewState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationAnnotation {
    pub annotation_id: String,
    pub lesion_id: String,
    pub video_asset_id: String,
    pub frame: u64,
    pub polygon: Vec<Point>,
    pub area: f64,
    #[serde(default)]
    pub review: ReviewState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    Turbt,
    OutOfBody,
    PoorQuality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionMark {
    pub mark_id: String,
    pub span: FrameSpan,
    pub reason: ExclusionReason,
}

/// Borrowed view of either annotation kind.
#[derive(Debug, Clone, Copy)]
pub enum AnnotationRef<'a> {
    Classification(&'a ClassificationAnnotation),
    Segmentation(&'a SegmentationAnnotation),
}

impl<'a> AnnotationRef<'a> {
    pub fn annotation_id(&self) -> &'a str {
        match self {
            AnnotationRef::Classification(c) => &c.annotation_id,
            AnnotationRef::Segmentation(s) => &s.annotation_id,
        }
    }

    pub fn lesion_id(&self) -> &'a str {
        match self {
            AnnotationRef::Classification(c) => &c.lesion_id,
            AnnotationRef::Segmentation(s) => &s.lesion_id,
        }
    }

    pub fn review(&self) -> ReviewState {
        match self {
            AnnotationRef::Classification(c) => c.review,
            AnnotationRef::Segmentation(s) => s.review,
        }
    }

    pub fn span(&self) -> FrameSpan {
        match self {
            AnnotationRef::Classification(c) => c.span.clone(),
            AnnotationRef::Segmentation(s) => FrameSpan::single(s.video_asset_id.clone(), s.frame),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationStore {
    lesions: BTreeMap<String, LesionRecord>,
    classifications: BTreeMap<String, ClassificationAnnotation>,
    segmentations: BTreeMap<String, SegmentationAnnotation>,
    exclusions: BTreeMap<String, ExclusionMark>,
    last_lesion: u64,
    last_annotation: u64,
    last_mark: u64,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lesions(&self) -> impl Iterator<Item = &LesionRecord> {
        self.lesions.values()
    }

    pub fn lesion(&self, lesion_id: &str) -> Result<&LesionRecord, AnnotationError> {
        self.lesions
            .get(lesion_id)
            .ok_or_else(|| AnnotationError::UnknownLesion(lesion_id.to_string()))
    }

    pub fn case_lesions<'a>(&'a self, case_id: &'a str) -> impl Iterator<Item = &'a LesionRecord> + 'a {
        self.lesions.values().filter(move |l| l.case_id == case_id)
    }

    pub fn classifications(&self) -> impl Iterator<Item = &ClassificationAnnotation> {
        self.classifications.values()
    }

    pub fn segmentations(&self) -> impl Iterator<Item = &SegmentationAnnotation> {
        self.segmentations.values()
    }

    pub fn exclusions(&self) -> impl Iterator<Item = &ExclusionMark> {
        self.exclusions.values()
    }

    pub fn annotation(&self, annotation_id: &str) -> Result<AnnotationRef<'_>, AnnotationError> {
        if let Some(c) = self.classifications.get(annotation_id) {
            return Ok(AnnotationRef::Classification(c));
        }
        self.segmentations
            .get(annotation_id)
            .map(AnnotationRef::Segmentation)
            .ok_or_else(|| AnnotationError::UnknownAnnotation(annotation_id.to_string()))
    }

    /// Every annotation whose lesion belongs to `case_id`, ordered by id.
    pub fn case_annotations(&self, case_id: &str) -> Vec<AnnotationRef<'_>> {
        let in_case = |lesion_id: &str| self.lesions.get(lesion_id).is_some_and(|l| l.case_id == case_id);
        let mut out: Vec<AnnotationRef<'_>> = self
            .classifications
            .values()
            .filter(|c| in_case(&c.lesion_id))
            .map(AnnotationRef::Classification)
            .chain(
                self.segmentations
                    .values()
                    .filter(|s| in_case(&s.lesion_id))
                    .map(AnnotationRef::Segmentation),
            )
            .collect();
        out.sort_by(|a, b| a.annotation_id().cmp(b.annotation_id()));
        out
    }

    pub fn add_lesion(&mut self, case_id: &str, draft: LesionDraft) -> LesionRecord {
        self.last_lesion += 1;
        let record = LesionRecord {
            lesion_id: format!("L{:06}", self.last_lesion),
            case_id: case_id.to_string(),
            location: draft.location,
            appearance: draft.appearance,
            pathology: draft.pathology,
            asset_ids: draft.asset_ids,
        };
        self.lesions.insert(record.lesion_id.clone(), record.clone());
        record
    }

    pub fn update_lesion(&mut self, lesion_id: &str, draft: LesionDraft) -> Result<&LesionRecord, AnnotationError> {
        let lesion = self
            .lesions
            .get_mut(lesion_id)
            .ok_or_else(|| AnnotationError::UnknownLesion(lesion_id.to_string()))?;
        lesion.location = draft.location;
        lesion.appearance = draft.appearance;
        lesion.pathology = draft.pathology;
        lesion.asset_ids = draft.asset_ids;
        Ok(lesion)
    }

    /// First excluded frame of `span`, if any.
    pub fn excluded_frame_in(&self, span: &FrameSpan) -> Option<u64> {
        self.exclusions
            .values()
            .filter(|m| m.span.overlaps(span))
            .map(|m| m.span.start_frame.max(span.start_frame))
            .min()
    }

    fn next_annotation_id(&mut self) -> String {
        self.last_annotation += 1;
        format!("N{:07}", self.last_annotation)
    }

    fn check_frames(&self, span: &FrameSpan, meta: &VideoMeta) -> Result<(), AnnotationError> {
        span.validate(meta)?;
        if let Some(frame) = self.excluded_frame_in(span) {
            return Err(AnnotationError::FrameExcluded {
                video: span.video_asset_id.clone(),
                frame,
            });
        }
        Ok(())
    }

    pub fn add_classification(
        &mut self,
        lesion_id: &str,
        span: FrameSpan,
        meta: &VideoMeta,
    ) -> Result<ClassificationAnnotation, AnnotationError> {
        self.lesion(lesion_id)?;
        self.check_frames(&span, meta)?;
        let annotation = ClassificationAnnotation {
            annotation_id: self.next_annotation_id(),
            lesion_id: lesion_id.to_string(),
            span,
            review: ReviewState::Pending,
        };
        self.classifications
            .insert(annotation.annotation_id.clone(), annotation.clone());
        Ok(annotation)
    }

    pub fn add_segmentation(
        &mut self,
        lesion_id: &str,
        video_asset_id: &str,
        frame: u64,
        polygon: Vec<Point>,
        meta: &VideoMeta,
    ) -> Result<SegmentationAnnotation, AnnotationError> {
        self.lesion(lesion_id)?;
        self.check_frames(&FrameSpan::single(video_asset_id, frame), meta)?;
        let area = validate_polygon(&polygon, meta.width, meta.height)?;
        let annotation = SegmentationAnnotation {
            annotation_id: self.next_annotation_id(),
            lesion_id: lesion_id.to_string(),
            video_asset_id: video_asset_id.to_string(),
            frame,
            polygon,
            area,
            review: ReviewState::Pending,
        };
        self.segmentations
            .insert(annotation.annotation_id.clone(), annotation.clone());
        Ok(annotation)
    }

    /// Marks frames as excluded. Resection (`TURBT`) spans may not cover any
    /// existing lesion annotation.
    pub fn mark_excluded(
        &mut self,
        span: FrameSpan,
        reason: ExclusionReason,
        meta: &VideoMeta,
    ) -> Result<ExclusionMark, AnnotationError> {
        span.validate(meta)?;
        if reason == ExclusionReason::Turbt {
            let clash = self
                .classifications
                .values()
                .find(|c| c.span.overlaps(&span))
                .map(|c| c.annotation_id.clone())
                .or_else(|| {
                    self.segmentations
                        .values()
                        .find(|s| FrameSpan::single(s.video_asset_id.clone(), s.frame).overlaps(&span))
                        .map(|s| s.annotation_id.clone())
                });
            if let Some(id) = clash {
                return Err(AnnotationError::OverlapWithAnnotation(id));
            }
        }
        self.last_mark += 1;
        let mark = ExclusionMark {
            mark_id: format!("X{:06}", self.last_mark),
            span,
            reason,
        };
        self.exclusions.insert(mark.mark_id.clone(), mark.clone());
        Ok(mark)
    }

    pub fn set_review(&mut self, annotation_id: &str, review: ReviewState) -> Result<(), AnnotationError> {
        if let Some(c) = self.classifications.get_mut(annotation_id) {
            c.review = review;
            return Ok(());
        }
        let s = self
            .segmentations
            .get_mut(annotation_id)
            .ok_or_else(|| AnnotationError::UnknownAnnotation(annotation_id.to_string()))?;
        s.review = review;
        Ok(())
    }

    /// Inserts an annotation as it came from a COCO import. Identifiers are
    /// kept when present and free, otherwise freshly issued.
    pub fn insert_imported(
        &mut self,
        imported: ImportedAnnotation,
        meta: &VideoMeta,
    ) -> Result<SegmentationAnnotation, AnnotationError> {
        let mut seg = self.add_segmentation(
            &imported.lesion_id,
            &imported.video_asset_id,
            imported.frame,
            imported.polygon,
            meta,
        )?;
        if let Some(id) = imported.annotation_id {
            if !self.segmentations.contains_key(&id) && !self.classifications.contains_key(&id) {
                self.segmentations.remove(&seg.annotation_id);
                seg.annotation_id = id;
                self.segmentations.insert(seg.annotation_id.clone(), seg.clone());
            }
        }
        Ok(seg)
    }
}
