//! On-disk curation workspace shared by the command line and the service.
//!
//! ```text
//! <root>/settings.json     operator settings
//! <root>/catalog.json      patients, cases, assets (tombstones included)
//! <root>/annotations.json  lesions, annotations, exclusion marks
//! <root>/qc.json           latest QC results per case
//! <root>/reviews.json      open votes and consensus decisions
//! <root>/scores.json       quality scores per asset
//! <root>/vault.json        pseudonym vault (restricted)
//! <root>/bundles.json      released bundle directories
//! <root>/index.csv         catalog index, rewritten on every save
//! <root>/provenance.log    one JSON event per line, append-only
//! <root>/media/<asset_id>/<file name>
//! <root>/docs/<reference>  text documents referenced by cases
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    aggregate_stats, export_coco, frame_file_name, import_coco, AnnotationError, AnnotationStore, CocoDocument,
    StatsLevel, StatsReport, VideoFrames,
};
use crate::catalog::{
    write_index, AssetKind, Catalog, CatalogError, DocumentRef, Ingested, MediaAsset, ProvenanceEvent, VideoMeta,
};
use crate::export::{
    build_atlas_manifest, build_research_bundle, fair_audit, load_bundle, write_atlas, Attestations, BundleManifest,
    BundleOptions, ExportError, ExportSource, FairInputs, FairReport, PseudonymVault,
};
use crate::qc::{run_qc1, run_qc2, run_qc3, CaseEvidence, QcError, QcLayer, QcLedger, QcReport, ReviewBook};
use crate::quality::{
    blur_score, brisque_features, frame_quality, video_quality, GrayImage, QualityError, QualityGates,
    QualityScores, ScoreModel,
};
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{0} is not a workspace (settings.json missing)")]
    NotAWorkspace(PathBuf),
    #[error("{0} already holds a workspace")]
    AlreadyInitialized(PathBuf),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("no frame images in {0}")]
    NoFrames(PathBuf),
    #[error("{0} is not a video asset")]
    NotAVideo(String),
    #[error("frame geometry of video {0} is unknown")]
    MissingVideoMeta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

/// Operator settings stored with the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub gates: QualityGates,
    pub urologist_panel: usize,
    pub qc3_fraction: f64,
    pub qc3_seed: u64,
    pub license: String,
    pub provenance: String,
    pub attestations: Attestations,
    /// Location vocabulary file (`code,display_name` CSV); the built-in
    /// table when absent.
    pub locations_file: Option<PathBuf>,
    /// BRISQUE regressor file; the packaged one when absent.
    pub model_file: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            gates: QualityGates::default(),
            urologist_panel: 4,
            qc3_fraction: crate::qc::DEFAULT_SAMPLE_FRACTION,
            qc3_seed: 0,
            license: String::new(),
            provenance: "curated from clinical cystoscopy recordings; see the bundle index for per-asset history"
                .into(),
            attestations: Attestations::default(),
            locations_file: None,
            model_file: None,
        }
    }
}

pub struct Workspace {
    root: PathBuf,
    pub settings: Settings,
    pub vocab: Vocabulary,
    pub catalog: Catalog,
    pub store: AnnotationStore,
    pub qc: QcLedger,
    pub reviews: ReviewBook,
    pub scores: BTreeMap<String, QualityScores>,
    pub vault: PseudonymVault,
    pub bundles: Vec<PathBuf>,
    pending: Vec<ProvenanceEvent>,
}

fn read_json<T: DeserializeOwned + Default>(path: &Path) -> Result<T, WorkspaceError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| WorkspaceError::Json {
            path: path.to_path_buf(),
            source,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(e.into()),
    }
}

/// Replaces `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkspaceError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|source| WorkspaceError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(write_atomic(path, &bytes)?)
}

fn load_vocab(root: &Path, settings: &Settings) -> Result<Vocabulary, WorkspaceError> {
    match &settings.locations_file {
        None => Ok(Vocabulary::default()),
        Some(file) => {
            let text = fs::read_to_string(root.join(file))?;
            Vocabulary::parse_locations(&text).map_err(|e| {
                WorkspaceError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
            })
        }
    }
}

impl Workspace {
    /// Creates an empty workspace with a fresh vault salt.
    pub fn init(root: impl Into<PathBuf>, settings: Settings) -> Result<Self, WorkspaceError> {
        let root = root.into();
        if root.join("settings.json").exists() {
            return Err(WorkspaceError::AlreadyInitialized(root));
        }
        fs::create_dir_all(root.join("media"))?;
        fs::create_dir_all(root.join("docs"))?;
        let vocab = load_vocab(&root, &settings)?;
        let mut ws = Workspace {
            vault: PseudonymVault::generate(&mut rand::rng(), Utc::now()),
            root,
            settings,
            vocab,
            catalog: Catalog::new(),
            store: AnnotationStore::new(),
            qc: QcLedger::default(),
            reviews: ReviewBook::default(),
            scores: BTreeMap::new(),
            bundles: Vec::new(),
            pending: Vec::new(),
        };
        ws.save()?;
        Ok(ws)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        let settings_path = root.join("settings.json");
        if !settings_path.exists() {
            return Err(WorkspaceError::NotAWorkspace(root));
        }
        let settings: Settings = read_json(&settings_path)?;
        let vault_path = root.join("vault.json");
        let vault = serde_json::from_slice(&fs::read(&vault_path)?).map_err(|source| WorkspaceError::Json {
            path: vault_path,
            source,
        })?;
        Ok(Workspace {
            vocab: load_vocab(&root, &settings)?,
            catalog: read_json(&root.join("catalog.json"))?,
            store: read_json(&root.join("annotations.json"))?,
            qc: read_json(&root.join("qc.json"))?,
            reviews: read_json(&root.join("reviews.json"))?,
            scores: read_json(&root.join("scores.json"))?,
            bundles: read_json(&root.join("bundles.json"))?,
            vault,
            settings,
            root,
            pending: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn media_path(&self, asset: &MediaAsset) -> PathBuf {
        self.root.join("media").join(&asset.asset_id).join(&asset.file_name)
    }

    pub fn document_path(&self, doc: &DocumentRef) -> PathBuf {
        self.root.join("docs").join(&doc.reference)
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.csv")
    }

    /// Queues a provenance event for the next [`save`](Self::save).
    pub fn record(&mut self, actor: &str, action: &str, subject: &str, detail: serde_json::Value) {
        self.pending.push(ProvenanceEvent {
            at: Utc::now(),
            actor: actor.to_string(),
            action: action.to_string(),
            subject: subject.to_string(),
            detail,
        });
    }

    /// Writes all state, appends queued provenance and rewrites the index.
    pub fn save(&mut self) -> Result<(), WorkspaceError> {
        let r = &self.root;
        write_json(&r.join("settings.json"), &self.settings)?;
        write_json(&r.join("catalog.json"), &self.catalog)?;
        write_json(&r.join("annotations.json"), &self.store)?;
        write_json(&r.join("qc.json"), &self.qc)?;
        write_json(&r.join("reviews.json"), &self.reviews)?;
        write_json(&r.join("scores.json"), &self.scores)?;
        write_json(&r.join("vault.json"), &self.vault)?;
        write_json(&r.join("bundles.json"), &self.bundles)?;
        let mut index = Vec::new();
        write_index(&self.catalog.build_index(), &mut index)?;
        write_atomic(&r.join("index.csv"), &index)?;

        let mut events = self.catalog.take_events();
        events.append(&mut self.pending);
        events.sort_by_key(|e| e.at);
        if !events.is_empty() {
            let mut log = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(r.join("provenance.log"))?;
            for e in &events {
                let line = serde_json::to_string(e).expect("events serialize");
                writeln!(log, "{line}")?;
            }
            log.sync_all()?;
        }
        Ok(())
    }

    /// Every provenance event written so far.
    pub fn provenance(&self) -> Result<Vec<ProvenanceEvent>, WorkspaceError> {
        let path = self.root.join("provenance.log");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|source| WorkspaceError::Json { path: path.clone(), source }))
            .collect()
    }

    /// Catalogs `bytes` under `file_name` and stores the media file. A
    /// duplicate of an existing asset is reported and not stored again.
    pub fn ingest_bytes(
        &mut self,
        file_name: &str,
        bytes: &[u8],
        case_id: &str,
        kind: AssetKind,
        allow_unlabeled: bool,
    ) -> Result<Ingested, WorkspaceError> {
        let ingested = self
            .catalog
            .ingest(&self.vocab, file_name, bytes, case_id, kind, allow_unlabeled)?;
        if ingested.warning.is_none() {
            let path = self.media_path(&ingested.asset);
            fs::create_dir_all(path.parent().expect("media dir"))?;
            write_atomic(&path, bytes)?;
        }
        Ok(ingested)
    }

    pub fn ingest_file(
        &mut self,
        path: &Path,
        case_id: &str,
        kind: AssetKind,
        allow_unlabeled: bool,
    ) -> Result<Ingested, WorkspaceError> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
        let bytes = fs::read(path)?;
        self.ingest_bytes(name, &bytes, case_id, kind, allow_unlabeled)
    }

    pub fn model(&self) -> Result<ScoreModel, WorkspaceError> {
        Ok(match &self.settings.model_file {
            Some(f) => ScoreModel::load(self.root.join(f))?,
            None => ScoreModel::packaged(),
        })
    }

    /// Scores a stored image asset and keeps the result.
    pub fn score_image_asset(&mut self, asset_id: &str, model: &ScoreModel) -> Result<QualityScores, WorkspaceError> {
        let asset = self.catalog.asset(asset_id)?;
        let img = GrayImage::open(self.media_path(asset))?;
        let scores = crate::quality::score_image(&img, model, &self.settings.gates)?;
        self.scores.insert(asset_id.to_string(), scores);
        self.record("qc", "score_image", asset_id, serde_json::to_value(scores).expect("scores serialize"));
        Ok(scores)
    }

    /// Scores a video from a directory of extracted frames, taking every
    /// `every_nth` frame in file-name order. Blur is the mean over sampled
    /// frames; the BRISQUE entry is `100 - pooled frame quality`. Frame
    /// geometry is recorded on the asset when it has none yet.
    pub fn score_video_frames(
        &mut self,
        asset_id: &str,
        frames_dir: &Path,
        every_nth: usize,
        model: &ScoreModel,
    ) -> Result<QualityScores, WorkspaceError> {
        let asset = self.catalog.asset(asset_id)?;
        if asset.kind != AssetKind::Video {
            return Err(WorkspaceError::NotAVideo(asset_id.to_string()));
        }
        let has_meta = asset.video.is_some();
        let mut frames: Vec<PathBuf> = fs::read_dir(frames_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(WorkspaceError::NoFrames(frames_dir.to_path_buf()));
        }
        let mut blur_total = 0.0;
        let mut qualities = Vec::new();
        let mut geometry = None;
        for path in frames.iter().step_by(every_nth.max(1)) {
            let img = GrayImage::open(path)?;
            geometry.get_or_insert((img.width(), img.height()));
            blur_total += blur_score(&img)?;
            qualities.push(frame_quality(model.score(&brisque_features(&img)?)));
        }
        let blur = blur_total / qualities.len() as f64;
        let scores = self.settings.gates.evaluate(blur, 100.0 - video_quality(&qualities)?);
        if !has_meta {
            let (w, h) = geometry.expect("at least one frame");
            let meta = VideoMeta {
                frame_count: frames.len() as u64,
                width: w as u32,
                height: h as u32,
            };
            self.catalog.set_video_meta(asset_id, meta)?;
        }
        self.scores.insert(asset_id.to_string(), scores);
        self.record(
            "qc",
            "score_video",
            asset_id,
            serde_json::json!({ "scores": scores, "sampled_frames": qualities.len() }),
        );
        Ok(scores)
    }

    /// Runs one QC layer, or all three in order (stopping at the first
    /// layer that cannot run), and stores the results.
    pub fn run_qc(&mut self, case_id: &str, layer: Option<QcLayer>, now: DateTime<Utc>) -> Result<QcReport, WorkspaceError> {
        let case = self.catalog.case(case_id)?;
        let docs = |d: &DocumentRef| self.document_path(d).is_file();
        let ev = CaseEvidence {
            case,
            assets: self.catalog.case_assets(case_id).collect(),
            scores: &self.scores,
            vocab: &self.vocab,
            store: &self.store,
            document_exists: &docs,
        };
        let mut report = self.qc.report(case_id).cloned().unwrap_or_else(|| QcReport::new(case_id));
        let (fraction, seed) = (self.settings.qc3_fraction, self.settings.qc3_seed);
        let layers = match layer {
            Some(l) => vec![l],
            None => QcLayer::ALL.to_vec(),
        };
        let mut first_error = None;
        for l in layers {
            let result = match l {
                QcLayer::Qc1 => Ok(run_qc1(&ev, now)),
                QcLayer::Qc2 => run_qc2(&ev, &report, now),
                QcLayer::Qc3 => run_qc3(&ev, &report, fraction, seed, now),
            };
            match result {
                Ok(r) => report.record(r),
                Err(e) => {
                    first_error = Some(e);
                    break;
                }
            }
        }
        self.qc.reports.insert(case_id.to_string(), report.clone());
        let summary: Vec<_> = QcLayer::ALL
            .iter()
            .filter_map(|&l| report.layer(l).map(|r| (l.to_string(), r.passed)))
            .collect();
        self.record("qc", "run_qc", case_id, serde_json::json!({ "layers": summary }));
        match (first_error, layer) {
            // a single requested layer that cannot run is an error; in a full
            // run the report shows where the chain stopped
            (Some(e), Some(_)) => Err(e.into()),
            _ => Ok(report),
        }
    }

    /// COCO document of one case's segmentations.
    pub fn export_coco(&self, case_id: &str) -> Result<CocoDocument, WorkspaceError> {
        self.catalog.case(case_id)?;
        let meta = |id: &str| self.catalog.asset(id).ok().and_then(|a| a.video);
        Ok(export_coco(&self.store, case_id, &meta, &frame_file_name)?)
    }

    /// Adds the segmentations of a COCO document to existing lesions. All
    /// or nothing: the store is untouched when any annotation is rejected.
    pub fn import_coco(&mut self, doc: &CocoDocument, actor: &str) -> Result<Vec<String>, WorkspaceError> {
        let mut store = self.store.clone();
        let mut ids = Vec::new();
        for imported in import_coco(doc)? {
            let video = imported.video_asset_id.clone();
            let asset = self.catalog.asset(&video)?;
            if asset.kind != AssetKind::Video {
                return Err(WorkspaceError::NotAVideo(video));
            }
            let meta = asset.video.ok_or(WorkspaceError::MissingVideoMeta(video))?;
            ids.push(store.insert_imported(imported, &meta)?.annotation_id);
        }
        self.store = store;
        self.record(actor, "import_coco", "annotations", serde_json::json!({ "annotations": ids }));
        Ok(ids)
    }

    /// Videos with known frame counts, for frame statistics.
    pub fn videos(&self) -> Vec<VideoFrames> {
        self.catalog
            .assets()
            .filter(|a| a.kind == AssetKind::Video && !a.deleted)
            .filter_map(|a| {
                a.video.map(|m| VideoFrames {
                    asset_id: a.asset_id.clone(),
                    case_id: a.case_id.clone(),
                    frame_count: m.frame_count,
                })
            })
            .collect()
    }

    /// Statistics over `case_ids`, or over every case that has lesions.
    pub fn stats(&self, level: StatsLevel, case_ids: Option<&[String]>) -> Result<StatsReport, WorkspaceError> {
        let scope: Vec<(String, String)> = match case_ids {
            Some(ids) => ids
                .iter()
                .map(|id| Ok((id.clone(), self.catalog.case(id)?.uid.to_string())))
                .collect::<Result<_, CatalogError>>()?,
            None => self
                .catalog
                .cases()
                .filter(|c| self.store.case_lesions(&c.case_id).next().is_some())
                .map(|c| (c.case_id.clone(), c.uid.to_string()))
                .collect(),
        };
        Ok(aggregate_stats(&self.store, &scope, &self.videos(), level))
    }

    pub fn export_research(
        &mut self,
        case_ids: &[String],
        out_dir: &Path,
        now: DateTime<Utc>,
    ) -> Result<BundleManifest, WorkspaceError> {
        let media = self.root.join("media");
        let opts = BundleOptions {
            license: &self.settings.license,
            provenance: &self.settings.provenance,
            media_root: Some(&media),
            now,
        };
        let src = ExportSource {
            catalog: &self.catalog,
            store: &self.store,
            qc: &self.qc,
        };
        let manifest = build_research_bundle(src, &mut self.vault, case_ids, out_dir, &opts)?;
        let out = fs::canonicalize(out_dir)?;
        if !self.bundles.contains(&out) {
            self.bundles.push(out);
        }
        self.record(
            "export",
            "research_bundle",
            &manifest.bundle_id,
            serde_json::json!({ "cases": case_ids, "out": out_dir }),
        );
        Ok(manifest)
    }

    pub fn atlas(&mut self, asset_ids: Option<&[String]>, now: DateTime<Utc>) -> Result<BundleManifest, WorkspaceError> {
        let opts = BundleOptions {
            license: &self.settings.license,
            provenance: &self.settings.provenance,
            media_root: None,
            now,
        };
        Ok(build_atlas_manifest(&self.catalog, &mut self.vault, asset_ids, &opts)?)
    }

    pub fn export_atlas(&mut self, out_dir: &Path, now: DateTime<Utc>) -> Result<BundleManifest, WorkspaceError> {
        let manifest = self.atlas(None, now)?;
        write_atlas(&self.catalog, &self.vault, &manifest, Some(&self.root.join("media")), out_dir)?;
        self.record("export", "atlas", &manifest.bundle_id, serde_json::json!({ "out": out_dir }));
        Ok(manifest)
    }

    /// FAIR audit over the saved index and the registered bundles.
    pub fn fair_audit(&self) -> Result<FairReport, WorkspaceError> {
        let index = match fs::read(self.index_path()) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let bundles = self
            .bundles
            .iter()
            .map(|p| load_bundle(p))
            .collect::<Result<Vec<_>, _>>()?;
        let media = |a: &MediaAsset| self.media_path(a).is_file();
        Ok(fair_audit(&FairInputs {
            catalog: &self.catalog,
            vocab: &self.vocab,
            index_csv: index.as_deref(),
            media_exists: &media,
            bundles: &bundles,
            attestations: &self.settings.attestations,
        }))
    }
}
