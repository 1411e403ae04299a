//! De-identified release: pseudonym vault, research and atlas bundles,
//! access levels and the FAIR audit.

mod bundle;
mod fair;
mod vault;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AnnotationError;
use crate::catalog::CatalogError;

pub use bundle::{
    build_atlas_manifest, build_research_bundle, load_bundle, scan_for_identifiers, write_atlas, BundleItem,
    BundleManifest, BundleOptions, ExportSource, LoadedBundle, Purpose, DEIDENTIFIED_INDEX_HEADER,
};
pub use fair::{fair_audit, Attestations, FairEntry, FairInputs, FairReport, FairStatus, PRINCIPLES};
pub use vault::{PseudonymVault, MAX_REDRAWS, MAX_SHIFT_DAYS, PSEUDONYM_LEN};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("vault salt must not be empty")]
    EmptySalt,
    #[error("no free pseudonym for {0} after {MAX_REDRAWS} draws")]
    CollisionExhausted(String),
    #[error("case {0} has not passed all quality-control layers")]
    GateNotPassed(String),
    #[error("annotation {annotation_id} of case {case_id} is not approved")]
    UnreviewedAnnotations { case_id: String, annotation_id: String },
    #[error("asset {0} is not a released, fully labeled image")]
    IncompleteLabel(String),
    #[error("a bundle needs a non-empty license")]
    EmptyLicense,
    #[error("nothing selected for export")]
    EmptySelection,
    #[error("identifier {needle} found in {path} at byte {offset}")]
    IdentifierLeak { path: PathBuf, offset: usize, needle: String },
    #[error("output directory {0} exists and is not empty")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Sensitivity tiers, ordered from least to most sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessLevel {
    Public,
    Internal,
    Confidential,
    Restricted,
}

impl AccessLevel {
    pub const ALL: [AccessLevel; 4] = [
        AccessLevel::Public,
        AccessLevel::Internal,
        AccessLevel::Confidential,
        AccessLevel::Restricted,
    ];

    /// Whether a holder of this clearance may see an item at `item`.
    pub fn permits(self, item: AccessLevel) -> bool {
        self >= item
    }
}

impl std::fmt::Display for AccessLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccessLevel::Public => "PUBLIC",
            AccessLevel::Internal => "INTERNAL",
            AccessLevel::Confidential => "CONFIDENTIAL",
            AccessLevel::Restricted => "RESTRICTED",
        })
    }
}

impl std::str::FromStr for AccessLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AccessLevel::ALL
            .into_iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown access level {s:?}"))
    }
}

/// Kinds of data the system hands out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataItem {
    PseudonymVault,
    /// Pathology or surgery report references into the health record.
    RawEhrReference,
    /// Catalog records, index rows and media carrying patient UIDs.
    IdentifiedCatalog,
    /// Pseudonymized, date-shifted atlas for department members.
    InternalAtlas,
    /// De-identified research bundle for external users.
    ResearchBundle,
    /// Controlled vocabulary and other reference data.
    Vocabulary,
}

pub fn classify_access(item: DataItem) -> AccessLevel {
    match item {
        DataItem::PseudonymVault | DataItem::RawEhrReference => AccessLevel::Restricted,
        DataItem::IdentifiedCatalog => AccessLevel::Confidential,
        DataItem::InternalAtlas => AccessLevel::Internal,
        DataItem::ResearchBundle | DataItem::Vocabulary => AccessLevel::Public,
    }
}
