use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use aho_corasick::AhoCorasick;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ExportError, PseudonymVault};
use crate::annotations::{export_coco, frame_file_name, AnnotationError, AnnotationRef, AnnotationStore, CocoDocument, ReviewState};
use crate::catalog::{format_timestamp, write_rows, AssetKind, Catalog, IndexRow, MediaAsset, INDEX_HEADER};
use crate::qc::QcLedger;
use crate::vocab::CompletionStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Purpose {
    Research,
    Education,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleItem {
    pub pseudonym: String,
    /// Paths relative to the bundle root.
    pub asset_refs: Vec<String>,
    pub metainfo: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub bundle_id: String,
    pub purpose: Purpose,
    pub items: Vec<BundleItem>,
    pub curation_date: DateTime<Utc>,
    pub modification_date: DateTime<Utc>,
    pub license: String,
    pub provenance: String,
}

/// Read-only view of the curated state a bundle is cut from.
#[derive(Clone, Copy)]
pub struct ExportSource<'a> {
    pub catalog: &'a Catalog,
    pub store: &'a AnnotationStore,
    pub qc: &'a QcLedger,
}

#[derive(Debug, Clone)]
pub struct BundleOptions<'a> {
    pub license: &'a str,
    pub provenance: &'a str,
    /// Root of `<asset_id>/<file_name>` media; when set, files are copied
    /// into the bundle.
    pub media_root: Option<&'a Path>,
    pub now: DateTime<Utc>,
}

/// Index header of a bundle: the catalog schema with `uid` replaced.
pub const DEIDENTIFIED_INDEX_HEADER: [&str; 17] = {
    let mut h = INDEX_HEADER;
    h[2] = "pseudonym";
    h
};

/// Where an asset lives inside a bundle.
fn media_ref(dir: &str, asset: &MediaAsset) -> String {
    match Path::new(&asset.file_name).extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{dir}/{}.{}", asset.asset_id, ext.to_ascii_lowercase()),
        None => format!("{dir}/{}", asset.asset_id),
    }
}

fn date_key(date: chrono::NaiveDate) -> String {
    date.format("%Y%m%d").to_string()
}

fn bundle_id(prefix: &str, items: &[BundleItem]) -> String {
    let body = serde_json::to_vec(items).expect("items serialize");
    format!("{prefix}-{}", &crate::catalog::sha256_hex(&body)[..12])
}

/// Staging directory next to `out_dir`; renamed into place by [`commit`].
fn stage(out_dir: &Path) -> Result<tempfile::TempDir, ExportError> {
    if out_dir.exists() && fs::read_dir(out_dir)?.next().is_some() {
        return Err(ExportError::OutputExists(out_dir.to_path_buf()));
    }
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    Ok(tempfile::Builder::new().prefix(".bundle-").tempdir_in(parent)?)
}

fn commit(staged: tempfile::TempDir, out_dir: &Path, needles: &[String]) -> Result<(), ExportError> {
    if let Some((path, offset, needle)) = scan_for_identifiers(staged.path(), needles)?.into_iter().next() {
        return Err(ExportError::IdentifierLeak { path, offset, needle });
    }
    if out_dir.exists() {
        fs::remove_dir(out_dir)?;
    }
    fs::rename(staged.keep(), out_dir)?;
    Ok(())
}

fn copy_media(root: Option<&Path>, asset: &MediaAsset, bundle: &Path, rel: &str) -> Result<(), ExportError> {
    if let Some(root) = root {
        let target = bundle.join(rel);
        fs::create_dir_all(target.parent().expect("ref has a directory"))?;
        fs::copy(root.join(&asset.asset_id).join(&asset.file_name), target)?;
    }
    Ok(())
}

/// Every patient UID the catalog or vault knows about.
fn identifiers(catalog: &Catalog, vault: &PseudonymVault) -> Vec<String> {
    let mut all: BTreeSet<String> = catalog.patients().map(|p| p.uid.to_string()).collect();
    all.extend(vault.uids().map(str::to_string));
    all.into_iter().collect()
}

/// Writes a de-identified research bundle for `case_ids` into `out_dir`:
/// `manifest.json`, `index.csv` (pseudonym instead of UID, all dates
/// shifted per patient), one COCO file per case under `coco/`, and media
/// under `media/` when a media root is given.
///
/// The bundle is staged beside `out_dir`, scanned byte for byte for patient
/// UIDs, and only then moved into place.
pub fn build_research_bundle(
    src: ExportSource<'_>,
    vault: &mut PseudonymVault,
    case_ids: &[String],
    out_dir: &Path,
    opts: &BundleOptions<'_>,
) -> Result<BundleManifest, ExportError> {
    if opts.license.trim().is_empty() {
        return Err(ExportError::EmptyLicense);
    }
    let case_ids: BTreeSet<&str> = case_ids.iter().map(String::as_str).collect();
    if case_ids.is_empty() {
        return Err(ExportError::EmptySelection);
    }
    for &case_id in &case_ids {
        src.catalog.case(case_id)?;
        if !src.qc.gate_release(case_id) {
            return Err(ExportError::GateNotPassed(case_id.to_string()));
        }
        if let Some(a) = src
            .store
            .case_annotations(case_id)
            .into_iter()
            .find(|a| a.review() != ReviewState::Approved)
        {
            return Err(ExportError::UnreviewedAnnotations {
                case_id: case_id.to_string(),
                annotation_id: a.annotation_id().to_string(),
            });
        }
    }

    let staged = stage(out_dir)?;
    let root = staged.path();
    fs::create_dir(root.join("coco"))?;
    let index: BTreeMap<String, IndexRow> = src
        .catalog
        .build_index()
        .into_iter()
        .map(|r| (r.asset_id.clone(), r))
        .collect();
    let video_meta = |id: &str| src.catalog.asset(id).ok().and_then(|a| a.video);

    let mut items = Vec::new();
    let mut rows = Vec::new();
    let mut last_modified: Option<DateTime<Utc>> = None;
    for &case_id in &case_ids {
        let case = src.catalog.case(case_id)?;
        let uid = case.uid.to_string();
        let pseudonym = vault.pseudonymize(&uid)?;
        let shifted = vault.shift_date(&uid, case.case_date);
        let case_key = format!("{pseudonym}_{}_{case_id}", date_key(shifted));

        let coco = match export_coco(src.store, case_id, &video_meta, &frame_file_name) {
            Err(AnnotationError::NothingToExport(_)) => CocoDocument::empty(),
            other => other?,
        };
        let coco_ref = format!("coco/{case_key}.json");
        fs::write(root.join(&coco_ref), coco.to_json_pretty())?;

        let mut asset_refs = Vec::new();
        for asset in src.catalog.case_assets(case_id).filter(|a| !a.deleted) {
            let rel = media_ref("media", asset);
            copy_media(opts.media_root, asset, root, &rel)?;
            asset_refs.push(rel);
            last_modified = last_modified.max(Some(asset.modified_at));
            let mut row = index[&asset.asset_id].clone();
            row.uid = pseudonym.clone();
            row.case_date = shifted.to_string();
            row.created_at = format_timestamp(&vault.shift_timestamp(&uid, asset.created_at));
            row.modified_at = format_timestamp(&vault.shift_timestamp(&uid, asset.modified_at));
            rows.push(row.fields().map(str::to_string).to_vec());
        }

        let annotations = src.store.case_annotations(case_id);
        let lesions: Vec<Value> = src
            .store
            .case_lesions(case_id)
            .map(|l| {
                let own: Vec<&AnnotationRef<'_>> = annotations.iter().filter(|a| a.lesion_id() == l.lesion_id).collect();
                let spans: Vec<Value> = own
                    .iter()
                    .filter(|a| matches!(a, AnnotationRef::Classification(_)))
                    .map(|a| serde_json::to_value(a.span()).expect("span serializes"))
                    .collect();
                json!({
                    "lesion_id": l.lesion_id,
                    "location": l.location,
                    "appearance": l.appearance,
                    "pathology": l.pathology,
                    "classification_spans": spans,
                    "segmentations": own.len() - spans.len(),
                })
            })
            .collect();
        let mut metainfo = BTreeMap::new();
        metainfo.insert("case_key".into(), json!(case_key));
        metainfo.insert("case_date".into(), json!(shifted));
        metainfo.insert("procedure".into(), json!(case.procedure));
        metainfo.insert("coco".into(), json!(coco_ref));
        metainfo.insert("lesions".into(), Value::Array(lesions));
        items.push(BundleItem {
            pseudonym,
            asset_refs,
            metainfo,
        });
    }

    write_rows(&DEIDENTIFIED_INDEX_HEADER, rows.into_iter(), fs::File::create(root.join("index.csv"))?)?;
    let manifest = BundleManifest {
        bundle_id: bundle_id("RB", &items),
        purpose: Purpose::Research,
        items,
        curation_date: opts.now,
        modification_date: last_modified.unwrap_or(opts.now),
        license: opts.license.to_string(),
        provenance: opts.provenance.to_string(),
    };
    fs::write(root.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    commit(staged, out_dir, &identifiers(src.catalog, vault))?;
    Ok(manifest)
}

/// Atlas manifest over released, labeled images: one item per image,
/// grouped by patient pseudonym and, within a patient, newest case first.
/// `asset_ids = None` takes every released image.
pub fn build_atlas_manifest(
    catalog: &Catalog,
    vault: &mut PseudonymVault,
    asset_ids: Option<&[String]>,
    opts: &BundleOptions<'_>,
) -> Result<BundleManifest, ExportError> {
    let released = |a: &MediaAsset| {
        !a.deleted && a.kind == AssetKind::Image && a.status == CompletionStatus::Released && a.image_label().is_some()
    };
    let selected: Vec<&MediaAsset> = match asset_ids {
        None => catalog.assets().filter(|a| released(a)).collect(),
        Some(ids) => {
            let unique: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            let mut out = Vec::with_capacity(unique.len());
            for id in unique {
                let asset = catalog.asset(id)?;
                if !released(asset) {
                    return Err(ExportError::IncompleteLabel(id.to_string()));
                }
                out.push(asset);
            }
            out
        }
    };

    let mut rows = Vec::with_capacity(selected.len());
    for asset in selected {
        let label = asset.image_label().expect("filtered on label");
        let uid = label.uid.to_string();
        let pseudonym = vault.pseudonymize(&uid)?;
        let shifted = vault.shift_date(&uid, label.case_date);
        rows.push((pseudonym, shifted, asset, label));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.asset_id.cmp(&b.2.asset_id)));

    let items: Vec<BundleItem> = rows
        .into_iter()
        .map(|(pseudonym, shifted, asset, label)| {
            let mut metainfo = BTreeMap::new();
            metainfo.insert("asset_id".into(), json!(asset.asset_id));
            metainfo.insert("case_key".into(), json!(format!("{pseudonym}_{}_{}", date_key(shifted), asset.case_id)));
            metainfo.insert("case_date".into(), json!(shifted));
            metainfo.insert("modality".into(), json!(label.modality.to_string()));
            metainfo.insert("location".into(), json!(label.location.code));
            metainfo.insert("location_name".into(), json!(label.location.display_name));
            metainfo.insert("pathology".into(), json!(label.pathology.to_string()));
            metainfo.insert("image_ref".into(), json!(media_ref("images", asset)));
            BundleItem {
                pseudonym,
                asset_refs: vec![media_ref("images", asset)],
                metainfo,
            }
        })
        .collect();
    let modification_date = catalog
        .assets()
        .filter(|a| items.iter().any(|i| i.metainfo["asset_id"] == a.asset_id.as_str()))
        .map(|a| a.modified_at)
        .max()
        .unwrap_or(opts.now);
    Ok(BundleManifest {
        bundle_id: bundle_id("AT", &items),
        purpose: Purpose::Education,
        items,
        curation_date: opts.now,
        modification_date,
        license: opts.license.to_string(),
        provenance: opts.provenance.to_string(),
    })
}

/// Writes an atlas manifest (and images, when a media root is given) into
/// `out_dir` with the same staging and identifier scan as research bundles.
pub fn write_atlas(
    catalog: &Catalog,
    vault: &PseudonymVault,
    manifest: &BundleManifest,
    media_root: Option<&Path>,
    out_dir: &Path,
) -> Result<(), ExportError> {
    let staged = stage(out_dir)?;
    for item in &manifest.items {
        let id = item.metainfo["asset_id"].as_str().unwrap_or_default();
        copy_media(media_root, catalog.asset(id)?, staged.path(), &item.asset_refs[0])?;
    }
    fs::write(staged.path().join("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
    commit(staged, out_dir, &identifiers(catalog, vault))
}

/// Every occurrence of any needle in any file below `dir`, as
/// `(relative path, byte offset, needle)`.
pub fn scan_for_identifiers(dir: &Path, needles: &[String]) -> std::io::Result<Vec<(PathBuf, usize, String)>> {
    let mut hits = Vec::new();
    if needles.is_empty() {
        return Ok(hits);
    }
    let matcher = AhoCorasick::new(needles).map_err(std::io::Error::other)?;
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        let mut entries: Vec<_> = fs::read_dir(&d)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                pending.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap_or(&path).to_path_buf();
            // names count too: a UID in a file name is as much a leak
            for m in matcher.find_iter(rel.to_string_lossy().as_bytes()) {
                hits.push((rel.clone(), 0, needles[m.pattern().as_usize()].clone()));
            }
            for m in matcher.find_iter(&fs::read(&path)?) {
                hits.push((rel.clone(), m.start(), needles[m.pattern().as_usize()].clone()));
            }
        }
    }
    Ok(hits)
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub root: PathBuf,
    pub manifest: BundleManifest,
    /// `(relative path, text)` of every file under `coco/`.
    pub coco: Vec<(String, String)>,
}

pub fn load_bundle(root: &Path) -> Result<LoadedBundle, ExportError> {
    let manifest: BundleManifest = serde_json::from_slice(&fs::read(root.join("manifest.json"))?)?;
    let mut coco = Vec::new();
    let dir = root.join("coco");
    if dir.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(&dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            coco.push((format!("coco/{}", e.file_name().to_string_lossy()), fs::read_to_string(e.path())?));
        }
    }
    Ok(LoadedBundle {
        root: root.to_path_buf(),
        manifest,
        coco,
    })
}
