//! Controlled vocabularies and the asset filename grammar.
//!
//! Names are flat, underscore-delimited and human readable:
//!
//! ```text
//! image  := UID "_" DATE "_" MODALITY "_" LOCATION "_" PATHOLOGY "_" SEQ "." EXT
//! video  := UID "_" DATE "." EXT
//! UID       := "UID" DIGIT{4,}
//! DATE      := YYYYMMDD            (a valid calendar date)
//! MODALITY  := "WLC" | "BLC"
//! LOCATION  := token from the location vocabulary ([A-Z0-9]+)
//! PATHOLOGY := "BEN" | STAGE [ "-" GRADE ]
//! STAGE     := "TA" | "CIS" | "T1" | "T2"
//! GRADE     := "LG" | "HG"
//! SEQ       := two decimal digits, 01..99
//! ```
//!
//! Every formatted stem parses back to the same value and every well-formed
//! stem formats back to the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Which controlled vocabulary a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VocabDomain {
    Modality,
    Location,
    Pathology,
    Status,
}

impl fmt::Display for VocabDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabDomain::Modality => "modality",
            VocabDomain::Location => "location",
            VocabDomain::Pathology => "pathology",
            VocabDomain::Status => "status",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("malformed name: {0}")]
    MalformedName(String),
    #[error("unknown {domain} token {token:?}")]
    UnknownVocab { domain: VocabDomain, token: String },
    #[error("invalid calendar date {0:?}")]
    BadDate(String),
}

impl GrammarError {
    fn malformed(reason: impl Into<String>) -> Self {
        GrammarError::MalformedName(reason.into())
    }

    fn unknown(domain: VocabDomain, token: &str) -> Self {
        GrammarError::UnknownVocab {
            domain,
            token: token.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("vocabulary line {line}: {reason}")]
pub struct VocabFileError {
    pub line: usize,
    pub reason: String,
}

macro_rules! token_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Opaque patient identifier, `UID` followed by at least four digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Uid(String);

impl Uid {
    pub fn from_number(n: u64) -> Self {
        Uid(format!("UID{n:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn number(&self) -> u64 {
        // digits were validated on construction
        self.0[3..].parse().unwrap_or(u64::MAX)
    }
}

impl FromStr for Uid {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("UID")
            .ok_or_else(|| GrammarError::malformed(format!("{s:?} is not a UID token")))?;
        if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 18 {
            return Err(GrammarError::malformed(format!("{s:?} is not a UID token")));
        }
        Ok(Uid(s.to_string()))
    }
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

token_serde!(Uid);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    /// White-light cystoscopy.
    Wlc,
    /// Blue-light cystoscopy.
    Blc,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Wlc, Modality::Blc];

    pub fn code(self) -> &'static str {
        match self {
            Modality::Wlc => "WLC",
            Modality::Blc => "BLC",
        }
    }
}

impl FromStr for Modality {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "WLC" => Ok(Modality::Wlc),
            "BLC" => Ok(Modality::Blc),
            _ => Err(GrammarError::unknown(VocabDomain::Modality, s)),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

token_serde!(Modality);

/// A bladder location token together with its display name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationCode {
    pub code: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathologyCategory {
    Benign,
    Cancer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TumorStage {
    Ta,
    Cis,
    T1,
    T2,
}

impl TumorStage {
    pub const ALL: [TumorStage; 4] = [TumorStage::Ta, TumorStage::Cis, TumorStage::T1, TumorStage::T2];

    /// Filename token.
    pub fn token(self) -> &'static str {
        match self {
            TumorStage::Ta => "TA",
            TumorStage::Cis => "CIS",
            TumorStage::T1 => "T1",
            TumorStage::T2 => "T2",
        }
    }

    /// Conventional clinical spelling.
    pub fn display(self) -> &'static str {
        match self {
            TumorStage::Ta => "Ta",
            TumorStage::Cis => "CIS",
            TumorStage::T1 => "T1",
            TumorStage::T2 => "T2",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        TumorStage::ALL.into_iter().find(|st| st.token() == s)
    }
}

impl fmt::Display for TumorStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TumorGrade {
    Low,
    High,
}

impl TumorGrade {
    pub const ALL: [TumorGrade; 2] = [TumorGrade::Low, TumorGrade::High];

    pub fn token(self) -> &'static str {
        match self {
            TumorGrade::Low => "LG",
            TumorGrade::High => "HG",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "LG" => Some(TumorGrade::Low),
            "HG" => Some(TumorGrade::High),
            _ => None,
        }
    }
}

impl fmt::Display for TumorGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Lesion pathology. Stage and grade only exist for cancer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathologyCode {
    Benign,
    Cancer {
        stage: TumorStage,
        grade: Option<TumorGrade>,
    },
}

impl PathologyCode {
    pub fn cancer(stage: TumorStage, grade: Option<TumorGrade>) -> Self {
        PathologyCode::Cancer { stage, grade }
    }

    pub fn category(&self) -> PathologyCategory {
        match self {
            PathologyCode::Benign => PathologyCategory::Benign,
            PathologyCode::Cancer { .. } => PathologyCategory::Cancer,
        }
    }

    pub fn stage(&self) -> Option<TumorStage> {
        match self {
            PathologyCode::Benign => None,
            PathologyCode::Cancer { stage, .. } => Some(*stage),
        }
    }

    pub fn grade(&self) -> Option<TumorGrade> {
        match self {
            PathologyCode::Benign => None,
            PathologyCode::Cancer { grade, .. } => *grade,
        }
    }
}

impl FromStr for PathologyCode {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || GrammarError::unknown(VocabDomain::Pathology, s);
        if s == "BEN" {
            return Ok(PathologyCode::Benign);
        }
        let (stage, grade) = match s.split_once('-') {
            Some((stage, grade)) => (stage, Some(grade)),
            None => (s, None),
        };
        let stage = TumorStage::from_token(stage).ok_or_else(unknown)?;
        let grade = match grade {
            Some(g) => Some(TumorGrade::from_token(g).ok_or_else(unknown)?),
            None => None,
        };
        Ok(PathologyCode::Cancer { stage, grade })
    }
}

impl fmt::Display for PathologyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathologyCode::Benign => f.write_str("BEN"),
            PathologyCode::Cancer { stage, grade: None } => f.write_str(stage.token()),
            PathologyCode::Cancer {
                stage,
                grade: Some(grade),
            } => write!(f, "{}-{}", stage.token(), grade.token()),
        }
    }
}

token_serde!(PathologyCode);

/// Completion state of a media asset, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompletionStatus {
    New,
    Labeled,
    Qc1Pass,
    Qc2Pass,
    Annotated,
    Qc3Pass,
    Released,
    Excluded,
}

impl CompletionStatus {
    pub const ALL: [CompletionStatus; 8] = [
        CompletionStatus::New,
        CompletionStatus::Labeled,
        CompletionStatus::Qc1Pass,
        CompletionStatus::Qc2Pass,
        CompletionStatus::Annotated,
        CompletionStatus::Qc3Pass,
        CompletionStatus::Released,
        CompletionStatus::Excluded,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CompletionStatus::New => "NEW",
            CompletionStatus::Labeled => "LABELED",
            CompletionStatus::Qc1Pass => "QC1_PASS",
            CompletionStatus::Qc2Pass => "QC2_PASS",
            CompletionStatus::Annotated => "ANNOTATED",
            CompletionStatus::Qc3Pass => "QC3_PASS",
            CompletionStatus::Released => "RELEASED",
            CompletionStatus::Excluded => "EXCLUDED",
        }
    }

    /// The next state along the pipeline, if any.
    pub fn next(self) -> Option<CompletionStatus> {
        use CompletionStatus::*;
        match self {
            New => Some(Labeled),
            Labeled => Some(Qc1Pass),
            Qc1Pass => Some(Qc2Pass),
            Qc2Pass => Some(Annotated),
            Annotated => Some(Qc3Pass),
            Qc3Pass => Some(Released),
            Released | Excluded => None,
        }
    }

    /// Only single forward steps are allowed, plus the escape to `Excluded`
    /// from any other state.
    pub fn can_transition_to(self, to: CompletionStatus) -> bool {
        if to == CompletionStatus::Excluded {
            return self != CompletionStatus::Excluded;
        }
        self.next() == Some(to)
    }
}

impl FromStr for CompletionStatus {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompletionStatus::ALL
            .into_iter()
            .find(|st| st.token() == s)
            .ok_or_else(|| GrammarError::unknown(VocabDomain::Status, s))
    }
}

impl fmt::Display for CompletionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Parsed screenshot label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageLabel {
    pub uid: Uid,
    pub case_date: NaiveDate,
    pub modality: Modality,
    pub location: LocationCode,
    pub pathology: PathologyCode,
    pub sequence: u8,
}

/// Parsed video name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoName {
    pub uid: Uid,
    pub case_date: NaiveDate,
}

const BUILTIN_LOCATIONS: [(&str, &str); 10] = [
    ("DOME", "Dome"),
    ("TRIG", "Trigone"),
    ("NECK", "Bladder neck"),
    ("LLAT", "Left lateral wall"),
    ("RLAT", "Right lateral wall"),
    ("ANT", "Anterior wall"),
    ("POST", "Posterior wall"),
    ("LUO", "Left ureteral orifice"),
    ("RUO", "Right ureteral orifice"),
    ("URETHRA", "Urethra"),
];

/// The registered vocabularies. Modality, pathology and status are closed
/// sets; locations come from the built-in list or a vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    locations: BTreeMap<String, String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            locations: BUILTIN_LOCATIONS
                .iter()
                .map(|(c, d)| (c.to_string(), d.to_string()))
                .collect(),
        }
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

impl Vocabulary {
    /// Parses a location vocabulary file: one `TOKEN display name` per
    /// line, `#` starts a comment line.
    pub fn parse_locations(text: &str) -> Result<Self, VocabFileError> {
        let mut locations = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| VocabFileError {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (token, display) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("missing display name"))?;
            let display = display.trim();
            if !is_token(token) {
                return Err(err("token must match [A-Z0-9]+"));
            }
            if display.is_empty() {
                return Err(err("missing display name"));
            }
            if locations.insert(token.to_string(), display.to_string()).is_some() {
                return Err(err("duplicate token"));
            }
        }
        if locations.is_empty() {
            return Err(VocabFileError {
                line: 0,
                reason: "no location tokens".into(),
            });
        }
        Ok(Vocabulary { locations })
    }

    pub fn location(&self, code: &str) -> Result<LocationCode, GrammarError> {
        self.locations
            .get(code)
            .map(|display| LocationCode {
                code: code.to_string(),
                display_name: display.clone(),
            })
            .ok_or_else(|| GrammarError::unknown(VocabDomain::Location, code))
    }

    pub fn locations(&self) -> impl Iterator<Item = LocationCode> + '_ {
        self.locations.iter().map(|(c, d)| LocationCode {
            code: c.clone(),
            display_name: d.clone(),
        })
    }

    /// Registered tokens of a domain, in a stable order. Pathology lists
    /// every composite stage-grade token as well as the bare ones.
    pub fn tokens(&self, domain: VocabDomain) -> Vec<String> {
        match domain {
            VocabDomain::Modality => Modality::ALL.iter().map(|m| m.to_string()).collect(),
            VocabDomain::Location => self.locations.keys().cloned().collect(),
            VocabDomain::Status => CompletionStatus::ALL.iter().map(|s| s.to_string()).collect(),
            VocabDomain::Pathology => {
                let mut out = vec![PathologyCode::Benign.to_string()];
                for stage in TumorStage::ALL {
                    out.push(PathologyCode::cancer(stage, None).to_string());
                    for grade in TumorGrade::ALL {
                        out.push(PathologyCode::cancer(stage, Some(grade)).to_string());
                    }
                }
                out
            }
        }
    }

    pub fn validate_token(&self, token: &str, domain: VocabDomain) -> bool {
        match domain {
            VocabDomain::Modality => token.parse::<Modality>().is_ok(),
            VocabDomain::Location => self.locations.contains_key(token),
            VocabDomain::Pathology => token.parse::<PathologyCode>().is_ok(),
            VocabDomain::Status => token.parse::<CompletionStatus>().is_ok(),
        }
    }

    pub fn parse_image_label(&self, filename: &str) -> Result<ImageLabel, GrammarError> {
        self.parse_image_stem(split_extension(filename)?.0)
    }

    pub fn parse_image_stem(&self, stem: &str) -> Result<ImageLabel, GrammarError> {
        let fields: Vec<&str> = stem.split('_').collect();
        if fields.len() != 6 {
            return Err(GrammarError::malformed(format!(
                "expected 6 underscore-separated fields, found {}",
                fields.len()
            )));
        }
        let uid: Uid = fields[0].parse()?;
        let case_date = parse_date(fields[1])?;
        let modality: Modality = fields[2].parse()?;
        let location = self.location(fields[3])?;
        let pathology: PathologyCode = fields[4].parse()?;
        let sequence = parse_sequence(fields[5])?;
        Ok(ImageLabel {
            uid,
            case_date,
            modality,
            location,
            pathology,
            sequence,
        })
    }
}

pub fn format_image_label(label: &ImageLabel) -> String {
    format!(
        "{}_{}_{}_{}_{}_{:02}",
        label.uid,
        format_date(label.case_date),
        label.modality,
        label.location.code,
        label.pathology,
        label.sequence
    )
}

pub fn parse_video_name(filename: &str) -> Result<VideoName, GrammarError> {
    parse_video_stem(split_extension(filename)?.0)
}

pub fn parse_video_stem(stem: &str) -> Result<VideoName, GrammarError> {
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() != 2 {
        return Err(GrammarError::malformed(format!(
            "expected <UID>_<YYYYMMDD>, found {} fields",
            fields.len()
        )));
    }
    Ok(VideoName {
        uid: fields[0].parse()?,
        case_date: parse_date(fields[1])?,
    })
}

pub fn format_video_name(name: &VideoName) -> String {
    format!("{}_{}", name.uid, format_date(name.case_date))
}

/// Splits `stem.ext`, rejecting path separators and missing extensions.
pub fn split_extension(filename: &str) -> Result<(&str, &str), GrammarError> {
    if filename.contains(['/', '\\']) {
        return Err(GrammarError::malformed("not a single path component"));
    }
    let (stem, ext) = filename
        .rsplit_once('.')
        .ok_or_else(|| GrammarError::malformed("missing extension"))?;
    if stem.is_empty() || ext.is_empty() || !ext.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(GrammarError::malformed("bad extension"));
    }
    Ok((stem, ext))
}

pub fn format_date(date: NaiveDate) -> String {
    format!("{:04}{:02}{:02}", date.year(), date.month(), date.day())
}

fn parse_date(field: &str) -> Result<NaiveDate, GrammarError> {
    if field.len() != 8 || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(GrammarError::malformed(format!("{field:?} is not YYYYMMDD")));
    }
    let year: i32 = field[0..4].parse().expect("digits");
    let month: u32 = field[4..6].parse().expect("digits");
    let day: u32 = field[6..8].parse().expect("digits");
    if year == 0 {
        return Err(GrammarError::BadDate(field.to_string()));
    }
    NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| GrammarError::BadDate(field.to_string()))
}

fn parse_sequence(field: &str) -> Result<u8, GrammarError> {
    if field.len() != 2 || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(GrammarError::malformed(format!("sequence {field:?} is not two digits")));
    }
    match field.parse::<u8>() {
        Ok(0) | Err(_) => Err(GrammarError::malformed("sequence must be 01..99")),
        Ok(n) => Ok(n),
    }
}
