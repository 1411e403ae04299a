//! Patients, cases, media assets, the CSV index and the provenance trail.
//!
//! Identifiers come from monotone counters that are never rewound, so an
//! identifier is never handed out twice even after its asset is deleted.
//! Deletion leaves a tombstone: the asset keeps its metadata and its index row.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vocab::{
    parse_video_name, CompletionStatus, GrammarError, ImageLabel, Modality, PathologyCode,
    Uid, VideoName, Vocabulary,
};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown patient {0}")]
    UnknownPatient(Uid),
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("case for {uid} on {case_date} ({procedure}) already exists as {existing}")]
    DuplicateCase {
        uid: Uid,
        case_date: NaiveDate,
        procedure: Procedure,
        existing: String,
    },
    #[error("cannot parse asset name: {0}")]
    ParseFailure(#[from] GrammarError),
    #[error("file belongs to {found} but case {case_id} belongs to {expected}")]
    UidMismatch {
        case_id: String,
        expected: Uid,
        found: Uid,
    },
    #[error("illegal status transition {from} -> {to}")]
    IllegalTransition {
        from: CompletionStatus,
        to: CompletionStatus,
    },
    #[error("case {case_id} has not passed the quality gate required for {status}")]
    GateNotPassed {
        case_id: String,
        status: CompletionStatus,
    },
    #[error("asset {0} is deleted")]
    AssetDeleted(String),
    #[error("asset {0} is not a video")]
    NotAVideo(String),
    #[error("index write failed: {0}")]
    IoFailure(#[from] io::Error),
    #[error("index csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Site {
    SiteA,
    SiteB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Procedure {
    Turbt,
    ClinicCysto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocumentKind {
    PathologyReport,
    SurgeryReport,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssetKind {
    Image,
    Video,
}

macro_rules! screaming_str {
    ($($ty:ty { $($variant:ident => $text:literal),+ $(,)? })+) => {$(
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(format!("unknown {} {s:?}", stringify!($ty))),
                }
            }
        }
    )+};
}

screaming_str! {
    Site { SiteA => "SITE_A", SiteB => "SITE_B" }
    Procedure { Turbt => "TURBT", ClinicCysto => "CLINIC_CYSTO" }
    DocumentKind { PathologyReport => "PATHOLOGY_REPORT", SurgeryReport => "SURGERY_REPORT", Other => "OTHER" }
    AssetKind { Image => "IMAGE", Video => "VIDEO" }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub uid: Uid,
    pub enrollment_date: NaiveDate,
    pub source_site: Site,
}

/// Opaque reference to a textual document (path or external key).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DocumentRef {
    pub kind: DocumentKind,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub uid: Uid,
    pub case_date: NaiveDate,
    pub procedure: Procedure,
    #[serde(default)]
    pub text_docs: Vec<DocumentRef>,
}

impl CaseRecord {
    pub fn has_document(&self, kind: DocumentKind) -> bool {
        self.text_docs.iter().any(|d| d.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssetLabel {
    Image(ImageLabel),
    Video(VideoName),
}

impl AssetLabel {
    pub fn uid(&self) -> &Uid {
        match self {
            AssetLabel::Image(l) => &l.uid,
            AssetLabel::Video(v) => &v.uid,
        }
    }

    pub fn case_date(&self) -> NaiveDate {
        match self {
            AssetLabel::Image(l) => l.case_date,
            AssetLabel::Video(v) => v.case_date,
        }
    }
}

/// Frame geometry of a video, registered once it is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub frame_count: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaAsset {
    pub asset_id: String,
    pub case_id: String,
    pub kind: AssetKind,
    /// Original file name as ingested.
    pub file_name: String,
    /// `None` only for images ingested without a grammar-conformant name
    /// and not yet labelled.
    pub label: Option<AssetLabel>,
    pub byte_size: u64,
    /// Lowercase hex SHA-256 of the file bytes.
    pub checksum: String,
    pub status: CompletionStatus,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
    pub deleted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<VideoMeta>,
}

impl MediaAsset {
    pub fn image_label(&self) -> Option<&ImageLabel> {
        match &self.label {
            Some(AssetLabel::Image(l)) => Some(l),
            _ => None,
        }
    }
}

/// One entry of the append-only provenance log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub at: DateTime<Utc>,
    pub actor: String,
    pub action: String,
    pub subject: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

/// Decides whether a case may advance its assets to a gated status.
pub trait StatusGate {
    fn allows(&self, case_id: &str, status: CompletionStatus) -> bool;
}

/// Gate that admits every transition; for tests and bulk imports.
pub struct NoGate;

impl StatusGate for NoGate {
    fn allows(&self, _: &str, _: CompletionStatus) -> bool {
        true
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// Identical bytes were already ingested for this case; the existing
    /// asset is returned and nothing new is stored.
    DuplicateChecksum { existing: String },
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub asset: MediaAsset,
    pub warning: Option<IngestWarning>,
}

/// Label fields as submitted by a client, before vocabulary validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub uid: String,
    pub case_date: NaiveDate,
    pub modality: String,
    pub location: String,
    pub pathology: String,
    pub sequence: u8,
}

fn default_clock() -> fn() -> DateTime<Utc> {
    Utc::now
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    patients: BTreeMap<Uid, PatientRecord>,
    cases: BTreeMap<String, CaseRecord>,
    assets: BTreeMap<String, MediaAsset>,
    last_patient: u64,
    last_case: u64,
    last_asset: u64,
    #[serde(skip, default = "default_clock")]
    clock: fn() -> DateTime<Utc>,
    #[serde(skip)]
    pending: Vec<ProvenanceEvent>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog {
            patients: BTreeMap::new(),
            cases: BTreeMap::new(),
            assets: BTreeMap::new(),
            last_patient: 0,
            last_case: 0,
            last_asset: 0,
            clock: Utc::now,
            pending: Vec::new(),
        }
    }
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_clock(&mut self, clock: fn() -> DateTime<Utc>) {
        self.clock = clock;
    }

    fn now(&self) -> DateTime<Utc> {
        // stored timestamps round-trip through RFC 3339 with microseconds
        let t = (self.clock)();
        DateTime::from_timestamp_micros(t.timestamp_micros()).unwrap_or(t)
    }

    fn record(&mut self, actor: &str, action: &str, subject: &str, detail: serde_json::Value) {
        let at = self.now();
        self.pending.push(ProvenanceEvent {
            at,
            actor: actor.to_string(),
            action: action.to_string(),
            subject: subject.to_string(),
            detail,
        });
    }

    /// Provenance events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<ProvenanceEvent> {
        std::mem::take(&mut self.pending)
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.values()
    }

    pub fn patient(&self, uid: &Uid) -> Option<&PatientRecord> {
        self.patients.get(uid)
    }

    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    pub fn case(&self, case_id: &str) -> Result<&CaseRecord, CatalogError> {
        self.cases
            .get(case_id)
            .ok_or_else(|| CatalogError::UnknownCase(case_id.to_string()))
    }

    /// All assets including tombstones, ordered by `asset_id`.
    pub fn assets(&self) -> impl Iterator<Item = &MediaAsset> {
        self.assets.values()
    }

    pub fn asset(&self, asset_id: &str) -> Result<&MediaAsset, CatalogError> {
        self.assets
            .get(asset_id)
            .ok_or_else(|| CatalogError::UnknownAsset(asset_id.to_string()))
    }

    pub fn case_assets<'a>(&'a self, case_id: &'a str) -> impl Iterator<Item = &'a MediaAsset> + 'a {
        self.assets.values().filter(move |a| a.case_id == case_id)
    }

    /// Highest identifier counters ever issued: `(patient, case, asset)`.
    pub fn counters(&self) -> (u64, u64, u64) {
        (self.last_patient, self.last_case, self.last_asset)
    }

    pub fn register_patient(&mut self, site: Site, enrollment_date: NaiveDate) -> PatientRecord {
        self.last_patient += 1;
        let record = PatientRecord {
            uid: Uid::from_number(self.last_patient),
            enrollment_date,
            source_site: site,
        };
        self.patients.insert(record.uid.clone(), record.clone());
        let subject = record.uid.to_string();
        self.record(
            "catalog",
            "register_patient",
            &subject,
            serde_json::json!({ "site": site }),
        );
        record
    }

    pub fn create_case(
        &mut self,
        uid: &Uid,
        case_date: NaiveDate,
        procedure: Procedure,
        text_docs: Vec<DocumentRef>,
    ) -> Result<CaseRecord, CatalogError> {
        if !self.patients.contains_key(uid) {
            return Err(CatalogError::UnknownPatient(uid.clone()));
        }
        if let Some(existing) = self
            .cases
            .values()
            .find(|c| &c.uid == uid && c.case_date == case_date && c.procedure == procedure)
        {
            return Err(CatalogError::DuplicateCase {
                uid: uid.clone(),
                case_date,
                procedure,
                existing: existing.case_id.clone(),
            });
        }
        self.last_case += 1;
        let record = CaseRecord {
            case_id: format!("CASE{:05}", self.last_case),
            uid: uid.clone(),
            case_date,
            procedure,
            text_docs,
        };
        self.cases.insert(record.case_id.clone(), record.clone());
        let subject = record.case_id.clone();
        self.record(
            "catalog",
            "create_case",
            &subject,
            serde_json::json!({ "procedure": procedure }),
        );
        Ok(record)
    }

    pub fn add_document(&mut self, case_id: &str, doc: DocumentRef) -> Result<&CaseRecord, CatalogError> {
        let case = self
            .cases
            .get_mut(case_id)
            .ok_or_else(|| CatalogError::UnknownCase(case_id.to_string()))?;
        if !case.text_docs.contains(&doc) {
            case.text_docs.push(doc.clone());
            case.text_docs.sort();
        }
        self.record("catalog", "add_document", case_id, serde_json::json!(doc));
        Ok(&self.cases[case_id])
    }

    /// Registers a file's bytes under a case.
    ///
    /// Images must follow the image grammar unless `allow_unlabeled` is
    /// set, in which case a non-conformant image enters as `NEW` with no
    /// label. Videos must follow the video grammar and enter as `NEW`;
    /// labelled images enter as `LABELED`.
    pub fn ingest(
        &mut self,
        vocab: &Vocabulary,
        file_name: &str,
        bytes: &[u8],
        case_id: &str,
        kind: AssetKind,
        allow_unlabeled: bool,
    ) -> Result<Ingested, CatalogError> {
        let case = self.case(case_id)?.clone();
        let label = match kind {
            AssetKind::Video => Some(AssetLabel::Video(parse_video_name(file_name)?)),
            AssetKind::Image => match vocab.parse_image_label(file_name) {
                Ok(l) => Some(AssetLabel::Image(l)),
                Err(_) if allow_unlabeled => None,
                Err(e) => return Err(e.into()),
            },
        };
        if let Some(label) = &label {
            if label.uid() != &case.uid {
                return Err(CatalogError::UidMismatch {
                    case_id: case_id.to_string(),
                    expected: case.uid.clone(),
                    found: label.uid().clone(),
                });
            }
        }
        let checksum = sha256_hex(bytes);
        if let Some(existing) = self
            .assets
            .values()
            .find(|a| a.case_id == case_id && a.checksum == checksum && !a.deleted)
        {
            return Ok(Ingested {
                asset: existing.clone(),
                warning: Some(IngestWarning::DuplicateChecksum {
                    existing: existing.asset_id.clone(),
                }),
            });
        }
        let status = match (&label, kind) {
            (Some(AssetLabel::Image(_)), _) => CompletionStatus::Labeled,
            _ => CompletionStatus::New,
        };
        self.last_asset += 1;
        let now = self.now();
        let asset = MediaAsset {
            asset_id: format!("A{:07}", self.last_asset),
            case_id: case_id.to_string(),
            kind,
            file_name: file_name.to_string(),
            label,
            byte_size: bytes.len() as u64,
            checksum,
            status,
            created_at: now,
            modified_at: now,
            deleted: false,
            video: None,
        };
        self.assets.insert(asset.asset_id.clone(), asset.clone());
        self.record(
            "catalog",
            "ingest",
            &asset.asset_id,
            serde_json::json!({ "case_id": case_id, "checksum": asset.checksum, "byte_size": asset.byte_size }),
        );
        Ok(Ingested {
            asset,
            warning: None,
        })
    }

    fn live_asset_mut(&mut self, asset_id: &str) -> Result<&mut MediaAsset, CatalogError> {
        let asset = self
            .assets
            .get_mut(asset_id)
            .ok_or_else(|| CatalogError::UnknownAsset(asset_id.to_string()))?;
        if asset.deleted {
            return Err(CatalogError::AssetDeleted(asset_id.to_string()));
        }
        Ok(asset)
    }

    fn touch(&mut self, asset_id: &str) {
        let now = self.now();
        let asset = self.assets.get_mut(asset_id).expect("asset checked by caller");
        asset.modified_at = asset.modified_at.max(now);
    }

    pub fn set_video_meta(&mut self, asset_id: &str, meta: VideoMeta) -> Result<&MediaAsset, CatalogError> {
        let asset = self.live_asset_mut(asset_id)?;
        if asset.kind != AssetKind::Video {
            return Err(CatalogError::NotAVideo(asset_id.to_string()));
        }
        asset.video = Some(meta);
        self.touch(asset_id);
        self.record("catalog", "set_video_meta", asset_id, serde_json::json!(meta));
        Ok(&self.assets[asset_id])
    }

    pub fn set_status(
        &mut self,
        asset_id: &str,
        to: CompletionStatus,
        gate: &dyn StatusGate,
        actor: &str,
    ) -> Result<&MediaAsset, CatalogError> {
        let asset = self.live_asset_mut(asset_id)?;
        let from = asset.status;
        if !from.can_transition_to(to) {
            return Err(CatalogError::IllegalTransition { from, to });
        }
        let case_id = asset.case_id.clone();
        if !gate.allows(&case_id, to) {
            return Err(CatalogError::GateNotPassed { case_id, status: to });
        }
        asset.status = to;
        self.touch(asset_id);
        self.record(
            actor,
            "set_status",
            asset_id,
            serde_json::json!({ "from": from, "to": to }),
        );
        Ok(&self.assets[asset_id])
    }

    /// Attaches a label to an image and advances it `NEW -> LABELED`.
    /// Resubmitting the label an asset already carries is a no-op.
    pub fn submit_label(
        &mut self,
        vocab: &Vocabulary,
        asset_id: &str,
        fields: &LabelSubmission,
        actor: &str,
    ) -> Result<&MediaAsset, CatalogError> {
        let label = ImageLabel {
            uid: fields.uid.parse()?,
            case_date: fields.case_date,
            modality: fields.modality.parse::<Modality>()?,
            location: vocab.location(&fields.location)?,
            pathology: fields.pathology.parse::<PathologyCode>()?,
            sequence: if (1..=99).contains(&fields.sequence) {
                fields.sequence
            } else {
                return Err(GrammarError::MalformedName("sequence must be 01..99".into()).into());
            },
        };
        let case_uid = {
            let asset = self.live_asset_mut(asset_id)?;
            if asset.kind != AssetKind::Image {
                return Err(GrammarError::MalformedName("labels apply to images only".into()).into());
            }
            if asset.image_label() == Some(&label) {
                return Ok(&self.assets[asset_id]);
            }
            if asset.status != CompletionStatus::New {
                return Err(CatalogError::IllegalTransition {
                    from: asset.status,
                    to: CompletionStatus::Labeled,
                });
            }
            let case_id = asset.case_id.clone();
            self.case(&case_id)?.uid.clone()
        };
        if label.uid != case_uid {
            return Err(CatalogError::UidMismatch {
                case_id: self.assets[asset_id].case_id.clone(),
                expected: case_uid,
                found: label.uid,
            });
        }
        let asset = self.assets.get_mut(asset_id).expect("checked above");
        asset.label = Some(AssetLabel::Image(label));
        asset.status = CompletionStatus::Labeled;
        self.touch(asset_id);
        self.record(actor, "submit_label", asset_id, serde_json::json!(fields));
        Ok(&self.assets[asset_id])
    }

    /// Tombstones an asset. Metadata and the identifier stay reserved.
    pub fn delete_asset(&mut self, asset_id: &str, actor: &str) -> Result<&MediaAsset, CatalogError> {
        self.live_asset_mut(asset_id)?.deleted = true;
        self.touch(asset_id);
        self.record(actor, "delete", asset_id, serde_json::Value::Null);
        Ok(&self.assets[asset_id])
    }

    /// One row per asset, tombstones included, ordered by `asset_id`.
    pub fn build_index(&self) -> Vec<IndexRow> {
        self.assets.values().map(|a| IndexRow::from_asset(a, &self.cases)).collect()
    }
}

pub const INDEX_HEADER: [&str; 17] = [
    "asset_id",
    "case_id",
    "uid",
    "kind",
    "case_date",
    "modality",
    "location",
    "pathology_category",
    "stage",
    "grade",
    "sequence",
    "byte_size",
    "checksum",
    "status",
    "created_at",
    "modified_at",
    "deleted",
];

/// A row of the CSV index. Every column is kept as text so that rows read
/// back from disk can be checked exactly as written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub asset_id: String,
    pub case_id: String,
    pub uid: String,
    pub kind: String,
    pub case_date: String,
    pub modality: String,
    pub location: String,
    pub pathology_category: String,
    pub stage: String,
    pub grade: String,
    pub sequence: String,
    pub byte_size: String,
    pub checksum: String,
    pub status: String,
    pub created_at: String,
    pub modified_at: String,
    pub deleted: String,
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl IndexRow {
    fn from_asset(a: &MediaAsset, cases: &BTreeMap<String, CaseRecord>) -> Self {
        let case = cases.get(&a.case_id);
        let (uid, case_date) = match (&a.label, case) {
            (Some(l), _) => (l.uid().to_string(), l.case_date().to_string()),
            (None, Some(c)) => (c.uid.to_string(), c.case_date.to_string()),
            (None, None) => (String::new(), String::new()),
        };
        let mut row = IndexRow {
            asset_id: a.asset_id.clone(),
            case_id: a.case_id.clone(),
            uid,
            kind: a.kind.to_string(),
            case_date,
            modality: String::new(),
            location: String::new(),
            pathology_category: String::new(),
            stage: String::new(),
            grade: String::new(),
            sequence: String::new(),
            byte_size: a.byte_size.to_string(),
            checksum: a.checksum.clone(),
            status: a.status.to_string(),
            created_at: format_timestamp(&a.created_at),
            modified_at: format_timestamp(&a.modified_at),
            deleted: if a.deleted { "TRUE" } else { "FALSE" }.to_string(),
        };
        if let Some(label) = a.image_label() {
            row.modality = label.modality.to_string();
            row.location = label.location.code.clone();
            row.pathology_category = match label.pathology.category() {
                crate::vocab::PathologyCategory::Benign => "BENIGN".into(),
                crate::vocab::PathologyCategory::Cancer => "CANCER".into(),
            };
            row.stage = label.pathology.stage().map(|s| s.token().to_string()).unwrap_or_default();
            row.grade = label.pathology.grade().map(|g| g.token().to_string()).unwrap_or_default();
            row.sequence = label.sequence.to_string();
        }
        row
    }

    pub fn fields(&self) -> [&str; 17] {
        [
            &self.asset_id,
            &self.case_id,
            &self.uid,
            &self.kind,
            &self.case_date,
            &self.modality,
            &self.location,
            &self.pathology_category,
            &self.stage,
            &self.grade,
            &self.sequence,
            &self.byte_size,
            &self.checksum,
            &self.status,
            &self.created_at,
            &self.modified_at,
            &self.deleted,
        ]
    }

    pub fn is_deleted(&self) -> bool {
        self.deleted == "TRUE"
    }

    /// Pathology token as it appears in file names (`BEN`, `TA-HG`, `CIS`).
    pub fn pathology_token(&self) -> String {
        match (self.pathology_category.as_str(), self.grade.is_empty()) {
            ("BENIGN", _) => "BEN".into(),
            ("CANCER", true) => self.stage.clone(),
            ("CANCER", false) => format!("{}-{}", self.stage, self.grade),
            _ => String::new(),
        }
    }
}

/// Writes rows with the fixed header; every field is quoted.
pub fn write_index<W: io::Write>(rows: &[IndexRow], out: W) -> Result<(), CatalogError> {
    write_rows(&INDEX_HEADER, rows.iter().map(|r| r.fields().map(str::to_string).to_vec()), out)
}

pub(crate) fn write_rows<W: io::Write>(
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
    out: W,
) -> Result<(), CatalogError> {
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads an index CSV. The header must match exactly.
pub fn read_index<R: io::Read>(input: R) -> Result<Vec<IndexRow>, CatalogError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != INDEX_HEADER {
        return Err(CatalogError::IoFailure(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected index header {header:?}"),
        )));
    }
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

/// Conjunctive row filter. Pathology matches a file-name token (`CIS`
/// matches any CIS row, `TA-HG` only high-grade Ta), a category (`BENIGN`,
/// `CANCER`) or a stage; free text is a case-insensitive substring of any
/// column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexFilter {
    pub uid: Option<String>,
    pub modality: Option<String>,
    pub location: Option<String>,
    pub pathology: Option<String>,
    pub status: Option<String>,
    pub free_text: Option<String>,
}

impl IndexFilter {
    /// Filters narrow on repetition: combining two filters that constrain
    /// the same column to different values yields one that matches nothing.
    pub fn and(mut self, other: IndexFilter) -> IndexFilter {
        fn merge(a: &mut Option<String>, b: Option<String>, conflict: &mut bool) {
            match (a.as_ref(), b) {
                (Some(x), Some(y)) if !x.eq_ignore_ascii_case(&y) => *conflict = true,
                (None, Some(y)) => *a = Some(y),
                _ => {}
            }
        }
        let mut conflict = false;
        merge(&mut self.uid, other.uid, &mut conflict);
        merge(&mut self.modality, other.modality, &mut conflict);
        merge(&mut self.location, other.location, &mut conflict);
        merge(&mut self.pathology, other.pathology, &mut conflict);
        merge(&mut self.status, other.status, &mut conflict);
        match (&mut self.free_text, other.free_text) {
            (Some(a), Some(b)) if a != &b => {
                a.push('\u{0}');
                a.push_str(&b);
            }
            (a @ None, Some(b)) => *a = Some(b),
            _ => {}
        }
        if conflict {
            // a UID is never empty, so this can never match
            self.uid = Some(String::new());
            self.free_text = None;
        }
        self
    }

    pub fn matches(&self, row: &IndexRow) -> bool {
        let eq = |want: &Option<String>, have: &str| {
            want.as_ref().is_none_or(|w| w.eq_ignore_ascii_case(have))
        };
        if let Some(uid) = &self.uid {
            if uid.is_empty() || uid != &row.uid {
                return false;
            }
        }
        if !eq(&self.modality, &row.modality) || !eq(&self.location, &row.location) || !eq(&self.status, &row.status) {
            return false;
        }
        if let Some(p) = &self.pathology {
            let p = p.to_ascii_uppercase();
            let token = row.pathology_token();
            let hit = !token.is_empty()
                && (p == token
                    || p == row.pathology_category
                    || (p == "BEN" && row.pathology_category == "BENIGN")
                    || (p == row.stage && !row.stage.is_empty()));
            if !hit {
                return false;
            }
        }
        if let Some(text) = &self.free_text {
            for needle in text.split('\u{0}') {
                let needle = needle.to_lowercase();
                if !row.fields().iter().any(|f| f.to_lowercase().contains(&needle)) {
                    return false;
                }
            }
        }
        true
    }
}

pub fn query_index<'a>(rows: &'a [IndexRow], filter: &IndexFilter) -> Vec<&'a IndexRow> {
    rows.iter().filter(|r| filter.matches(r)).collect()
}
