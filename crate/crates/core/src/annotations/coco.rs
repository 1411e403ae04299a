//! COCO interchange for segmentation annotations.
//!
//! One COCO image per annotated video frame. Besides the standard keys,
//! images carry `video_asset_id` and `frame`, and annotations carry an
//! `attributes` object with the lesion identity and full pathology token so
//! that a round trip restores labels exactly (the category alone drops the
//! grade of CIS lesions).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::geometry::{bounding_box, validate_polygon, Point};
use super::{AnnotationError, AnnotationStore, SegmentationAnnotation};
use crate::catalog::VideoMeta;
use crate::vocab::{PathologyCode, TumorGrade, TumorStage};

/// Fixed category table: `(id, name)`.
pub const COCO_CATEGORIES: [(u64, &str); 8] = [
    (1, "benign"),
    (2, "Ta-LG"),
    (3, "Ta-HG"),
    (4, "CIS"),
    (5, "T1-LG"),
    (6, "T1-HG"),
    (7, "T2-LG"),
    (8, "T2-HG"),
];

const SUPERCATEGORY: &str = "lesion";

/// Category of a pathology. CIS maps to one category whatever its grade;
/// papillary and invasive stages need a grade.
pub fn category_for(pathology: &PathologyCode) -> Option<(u64, &'static str)> {
    use TumorGrade::*;
    use TumorStage::*;
    let id = match pathology {
        PathologyCode::Benign => 1,
        PathologyCode::Cancer { stage: Cis, .. } => 4,
        PathologyCode::Cancer { stage, grade: Some(grade) } => match (stage, grade) {
            (Ta, Low) => 2,
            (Ta, High) => 3,
            (T1, Low) => 5,
            (T1, High) => 6,
            (T2, Low) => 7,
            (T2, High) => 8,
            (Cis, _) => unreachable!("handled above"),
        },
        PathologyCode::Cancer { grade: None, .. } => return None,
    };
    COCO_CATEGORIES.iter().copied().find(|(i, _)| *i == id)
}

fn pathology_of_category(name: &str) -> Option<PathologyCode> {
    if name == "benign" {
        return Some(PathologyCode::Benign);
    }
    if name == "CIS" {
        return Some(PathologyCode::cancer(TumorStage::Cis, None));
    }
    name.to_ascii_uppercase().parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub video_asset_id: String,
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAttributes {
    pub annotation_id: Option<String>,
    pub lesion_id: String,
    pub pathology: Option<PathologyCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Vec<Vec<f64>>,
    pub area: f64,
    pub bbox: [f64; 4],
    pub iscrowd: u8,
    pub attributes: CocoAttributes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDocument {
    /// Document with the category table and nothing else.
    pub fn empty() -> Self {
        CocoDocument {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: categories(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        serde_json::from_str(text).map_err(|e| AnnotationError::SchemaViolation(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("COCO document serializes")
    }
}

/// An annotation recovered from a COCO document.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedAnnotation {
    pub annotation_id: Option<String>,
    pub lesion_id: String,
    pub pathology: PathologyCode,
    pub video_asset_id: String,
    pub frame: u64,
    pub polygon: Vec<Point>,
    pub area: f64,
}

/// Exports the segmentations of one case.
///
/// `videos` resolves frame geometry; `file_name` names the frame image of
/// `(video_asset_id, frame)`.
pub fn export_coco(
    store: &AnnotationStore,
    case_id: &str,
    videos: &dyn Fn(&str) -> Option<VideoMeta>,
    file_name: &dyn Fn(&str, u64) -> String,
) -> Result<CocoDocument, AnnotationError> {
    let mut segs: Vec<&SegmentationAnnotation> = store
        .segmentations()
        .filter(|s| store.lesion(&s.lesion_id).is_ok_and(|l| l.case_id == case_id))
        .collect();
    if segs.is_empty() {
        return Err(AnnotationError::NothingToExport(case_id.to_string()));
    }
    segs.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));

    let frames: BTreeSet<(&str, u64)> = segs.iter().map(|s| (s.video_asset_id.as_str(), s.frame)).collect();
    let mut image_ids = BTreeMap::new();
    let mut images = Vec::with_capacity(frames.len());
    for (i, (video, frame)) in frames.into_iter().enumerate() {
        let meta = videos(video)
            .ok_or_else(|| AnnotationError::SchemaViolation(format!("no frame geometry for video {video}")))?;
        let id = i as u64 + 1;
        image_ids.insert((video, frame), id);
        images.push(CocoImage {
            id,
            width: meta.width,
            height: meta.height,
            file_name: file_name(video, frame),
            video_asset_id: video.to_string(),
            frame,
        });
    }

    let mut annotations = Vec::with_capacity(segs.len());
    for (i, seg) in segs.iter().enumerate() {
        let lesion = store.lesion(&seg.lesion_id)?;
        let pathology = lesion
            .pathology
            .ok_or_else(|| AnnotationError::Uncategorized(lesion.lesion_id.clone()))?;
        let (category_id, _) =
            category_for(&pathology).ok_or_else(|| AnnotationError::Uncategorized(lesion.lesion_id.clone()))?;
        annotations.push(CocoAnnotation {
            id: i as u64 + 1,
            image_id: image_ids[&(seg.video_asset_id.as_str(), seg.frame)],
            category_id,
            segmentation: vec![seg.polygon.iter().flat_map(|p| [p.x, p.y]).collect()],
            area: seg.area,
            bbox: bounding_box(&seg.polygon),
            iscrowd: 0,
            attributes: CocoAttributes {
                annotation_id: Some(seg.annotation_id.clone()),
                lesion_id: seg.lesion_id.clone(),
                pathology: Some(pathology),
            },
        });
    }

    Ok(CocoDocument {
        images,
        annotations,
        categories: categories(),
    })
}

fn categories() -> Vec<CocoCategory> {
    COCO_CATEGORIES
        .iter()
        .map(|(id, name)| CocoCategory {
            id: *id,
            name: name.to_string(),
            supercategory: SUPERCATEGORY.to_string(),
        })
        .collect()
}

/// File name of an extracted frame image: `<video>_<frame, 6 digits>.png`.
pub fn frame_file_name(video_asset_id: &str, frame: u64) -> String {
    format!("{video_asset_id}_{frame:06}.png")
}

/// Validates a COCO document and recovers its annotations in document order.
pub fn import_coco(doc: &CocoDocument) -> Result<Vec<ImportedAnnotation>, AnnotationError> {
    let schema = |msg: String| AnnotationError::SchemaViolation(msg);

    let mut categories = BTreeMap::new();
    for c in &doc.categories {
        let pathology = pathology_of_category(&c.name)
            .filter(|p| category_for(p).is_some_and(|(_, n)| n == c.name))
            .ok_or_else(|| AnnotationError::UnknownCategory(c.name.clone()))?;
        if categories.insert(c.id, pathology).is_some() {
            return Err(schema(format!("duplicate category id {}", c.id)));
        }
    }

    let mut images = BTreeMap::new();
    for img in &doc.images {
        if images.insert(img.id, img).is_some() {
            return Err(schema(format!("duplicate image id {}", img.id)));
        }
    }

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(doc.annotations.len());
    for ann in &doc.annotations {
        if !seen.insert(ann.id) {
            return Err(schema(format!("duplicate annotation id {}", ann.id)));
        }
        let image = images
            .get(&ann.image_id)
            .ok_or_else(|| schema(format!("annotation {} references missing image {}", ann.id, ann.image_id)))?;
        let category = *categories
            .get(&ann.category_id)
            .ok_or_else(|| AnnotationError::UnknownCategory(ann.category_id.to_string()))?;
        if ann.iscrowd != 0 {
            return Err(schema(format!("annotation {} is a crowd region", ann.id)));
        }
        let [ring] = ann.segmentation.as_slice() else {
            return Err(schema(format!("annotation {} must hold exactly one polygon", ann.id)));
        };
        if ring.len() % 2 != 0 {
            return Err(schema(format!("annotation {} has an odd coordinate count", ann.id)));
        }
        let polygon: Vec<Point> = ring.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        let area = validate_polygon(&polygon, image.width, image.height)?;
        let pathology = match ann.attributes.pathology {
            Some(p) if category_for(&p).map(|(id, _)| id) == category_for(&category).map(|(id, _)| id) => p,
            Some(p) => {
                return Err(schema(format!(
                    "annotation {}: pathology {p} does not belong to category {}",
                    ann.id, ann.category_id
                )))
            }
            None => category,
        };
        out.push(ImportedAnnotation {
            annotation_id: ann.attributes.annotation_id.clone(),
            lesion_id: ann.attributes.lesion_id.clone(),
            pathology,
            video_asset_id: image.video_asset_id.clone(),
            frame: image.frame,
            polygon,
            area,
        });
    }
    Ok(out)
}
