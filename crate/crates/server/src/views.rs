//! Response bodies. Identified views carry raw UIDs, dates and original
//! file names; the redacted ones served below CONFIDENTIAL drop them.

use cysto_core::annotations::{AnnotationRef, LesionRecord};
use cysto_core::catalog::{AssetLabel, CaseRecord, IndexRow, MediaAsset};
use serde_json::{json, Map, Value};

pub const REDACTED: &str = "[redacted]";

pub fn case_view(case: &CaseRecord, identified: bool) -> Value {
    let mut v = json!({
        "case_id": case.case_id,
        "procedure": case.procedure,
        "documents": case.text_docs.iter().map(|d| d.kind).collect::<Vec<_>>(),
    });
    if identified {
        let m = v.as_object_mut().expect("object");
        m.insert("uid".into(), json!(case.uid));
        m.insert("case_date".into(), json!(case.case_date));
        m.insert("text_docs".into(), json!(case.text_docs));
    }
    v
}

pub fn asset_view(a: &MediaAsset, identified: bool) -> Value {
    let mut v = json!({
        "asset_id": a.asset_id,
        "case_id": a.case_id,
        "kind": a.kind,
        "byte_size": a.byte_size,
        "checksum": a.checksum,
        "status": a.status,
        "created_at": a.created_at,
        "modified_at": a.modified_at,
        "deleted": a.deleted,
    });
    let m = v.as_object_mut().expect("object");
    if let Some(meta) = a.video {
        m.insert("video".into(), json!(meta));
    }
    let mut label = Map::new();
    match &a.label {
        Some(AssetLabel::Image(l)) => {
            label.insert("modality".into(), json!(l.modality.to_string()));
            label.insert("location".into(), json!(l.location.code));
            label.insert("location_name".into(), json!(l.location.display_name));
            label.insert("pathology".into(), json!(l.pathology.to_string()));
            label.insert("sequence".into(), json!(l.sequence));
        }
        Some(AssetLabel::Video(_)) | None => {}
    }
    if identified {
        m.insert("file_name".into(), json!(a.file_name));
        if let Some(l) = &a.label {
            label.insert("uid".into(), json!(l.uid()));
            label.insert("case_date".into(), json!(l.case_date()));
        }
    }
    if a.label.is_some() {
        m.insert("label".into(), Value::Object(label));
    }
    v
}

pub fn redact_row(mut row: IndexRow) -> IndexRow {
    row.uid.clear();
    row.case_date.clear();
    row
}

pub fn lesion_view(l: &LesionRecord, annotations: usize) -> Value {
    json!({
        "lesion_id": l.lesion_id,
        "location": l.location.as_ref().map(|c| &c.code),
        "appearance": l.appearance,
        "pathology": l.pathology.map(|p| p.to_string()),
        "asset_ids": l.asset_ids,
        "annotations": annotations,
    })
}

pub fn annotation_view(a: &AnnotationRef<'_>) -> Value {
    let span = a.span();
    let kind = match a {
        AnnotationRef::Classification(_) => "CLASSIFICATION",
        AnnotationRef::Segmentation(_) => "SEGMENTATION",
    };
    json!({
        "annotation_id": a.annotation_id(),
        "lesion_id": a.lesion_id(),
        "kind": kind,
        "video_asset_id": span.video_asset_id,
        "start_frame": span.start_frame,
        "end_frame": span.end_frame,
        "review": a.review(),
    })
}

/// Replaces every `UID` token (three letters, then four or more digits) in
/// the string values of `v`. A last line of defence for redacted views
/// whose free-text fields (QC notes, file names) may quote identifiers.
pub fn scrub(v: &mut Value) {
    match v {
        Value::String(s) => {
            if s.contains("UID") {
                *s = scrub_str(s);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        Value::Object(m) => m.values_mut().for_each(scrub),
        _ => {}
    }
}

fn scrub_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(at) = rest.find("UID") {
        let digits = rest[at + 3..].bytes().take_while(u8::is_ascii_digit).count();
        if digits >= 4 {
            out.push_str(&rest[..at]);
            out.push_str(REDACTED);
            rest = &rest[at + 3 + digits..];
        } else {
            out.push_str(&rest[..at + 3]);
            rest = &rest[at + 3..];
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scrub_replaces_uid_tokens_only() {
        let mut v = json!({
            "note": "UID0042_20200101_WLC_DOME_BEN_01.png vs UID12",
            "list": ["UID123456 and UID0001", "FLUID0003x"],
            "n": 3,
        });
        scrub(&mut v);
        assert_eq!(v["note"], "[redacted]_20200101_WLC_DOME_BEN_01.png vs UID12");
        assert_eq!(v["list"][0], "[redacted] and [redacted]");
        assert_eq!(v["list"][1], "FL[redacted]x");
        assert_eq!(v["n"], 3);
    }
}
