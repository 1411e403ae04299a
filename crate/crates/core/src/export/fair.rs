use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use super::LoadedBundle;
use crate::annotations::{import_coco, CocoDocument};
use crate::catalog::{query_index, AssetKind, Catalog, IndexFilter, IndexRow, MediaAsset, INDEX_HEADER};
use crate::vocab::{CompletionStatus, Modality, PathologyCode, Uid, VocabDomain, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "ATTESTED")]
    Attested,
    #[serde(rename = "N/A")]
    NotApplicable,
}

/// The fifteen principles in report order, with a short gloss.
pub const PRINCIPLES: [(&str, &str); 15] = [
    ("F1", "globally unique and persistent identifiers"),
    ("F2", "data described with rich metadata"),
    ("F3", "metadata include the identifier of the data they describe"),
    ("F4", "metadata registered in a searchable resource"),
    ("A1", "retrievable by identifier over a standard protocol"),
    ("A2", "protocol is open, free and universally implementable"),
    ("A3", "protocol allows authentication and authorisation"),
    ("A4", "metadata remain accessible after the data are gone"),
    ("I1", "formal, shared language for knowledge representation"),
    ("I2", "vocabularies that themselves follow FAIR principles"),
    ("I3", "qualified references to other (meta)data"),
    ("R1", "plurality of accurate and relevant attributes"),
    ("R2", "clear and accessible data usage license"),
    ("R3", "detailed provenance"),
    ("R4", "domain-relevant community standards"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairEntry {
    pub principle: String,
    pub status: FairStatus,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairReport {
    pub entries: Vec<FairEntry>,
}

impl FairReport {
    pub fn status(&self, principle: &str) -> Option<FairStatus> {
        self.entries.iter().find(|e| e.principle == principle).map(|e| e.status)
    }

    pub fn count(&self, status: FairStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }
}

/// Operator statements for the principles no check can decide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestations {
    pub a2: String,
    pub a3: String,
    pub i2: String,
}

impl Default for Attestations {
    fn default() -> Self {
        Attestations {
            a2: "media and metadata are served over plain HTTP with JSON bodies".into(),
            a3: "every request carries a bearer token mapped to a clearance level".into(),
            i2: "controlled vocabulary is published at GET /vocabulary".into(),
        }
    }
}

pub struct FairInputs<'a> {
    pub catalog: &'a Catalog,
    pub vocab: &'a Vocabulary,
    /// The CSV index as stored; `None` when there is none.
    pub index_csv: Option<&'a [u8]>,
    /// Whether an asset's media can be fetched by its identifier.
    pub media_exists: &'a dyn Fn(&MediaAsset) -> bool,
    pub bundles: &'a [LoadedBundle],
    pub attestations: &'a Attestations,
}

type Verdict = (FairStatus, String);

fn verdict(problems: Vec<String>, ok: String) -> Verdict {
    match problems.first() {
        None => (FairStatus::Pass, ok),
        Some(first) => (
            FairStatus::Fail,
            match problems.len() {
                1 => first.clone(),
                n => format!("{first} (and {} more)", n - 1),
            },
        ),
    }
}

fn attested(text: &str) -> Verdict {
    if text.trim().is_empty() {
        (FairStatus::Fail, "no attestation supplied".into())
    } else {
        (FairStatus::Attested, text.to_string())
    }
}

fn id_number(id: &str, prefix: &str, digits: usize) -> Option<u64> {
    let rest = id.strip_prefix(prefix)?;
    (rest.len() == digits && rest.bytes().all(|b| b.is_ascii_digit())).then(|| rest.parse().ok())?
}

fn f1(catalog: &Catalog, rows: &[IndexRow]) -> Verdict {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rows {
        if !seen.insert(row.asset_id.as_str()) {
            problems.push(format!("asset_id {} appears more than once in the index", row.asset_id));
        }
    }
    let (patients, cases, assets) = catalog.counters();
    for p in catalog.patients() {
        if p.uid.number() > patients {
            problems.push(format!("{} is beyond the issued patient counter", p.uid));
        }
    }
    for c in catalog.cases() {
        if id_number(&c.case_id, "CASE", 5).is_none_or(|n| n > cases) {
            problems.push(format!("case id {} was not issued by the counter", c.case_id));
        }
    }
    for a in catalog.assets() {
        if id_number(&a.asset_id, "A", 7).is_none_or(|n| n > assets) {
            problems.push(format!("asset id {} was not issued by the counter", a.asset_id));
        }
    }
    let ok = format!(
        "{} index rows with distinct asset ids; {} assets, tombstones kept",
        rows.len(),
        catalog.assets().count()
    );
    verdict(problems, ok)
}

fn f2(rows: &[IndexRow]) -> Verdict {
    let mut problems = Vec::new();
    for row in rows {
        if row.uid.is_empty() || row.case_date.is_empty() {
            problems.push(format!("{} lacks uid or case_date", row.asset_id));
        }
        let labeled = CompletionStatus::from_str(&row.status).is_ok_and(|s| s != CompletionStatus::New);
        if row.kind == AssetKind::Image.as_str() && labeled && !row.is_deleted() {
            if row.modality.is_empty() || row.location.is_empty() || row.pathology_category.is_empty() {
                problems.push(format!("labeled image {} lacks label columns", row.asset_id));
            }
        }
    }
    verdict(problems, format!("{} rows carry patient, date and label metadata", rows.len()))
}

fn f3(catalog: &Catalog, rows: &[IndexRow]) -> Verdict {
    let problems = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.asset_id.is_empty() || catalog.asset(&r.asset_id).is_err())
        .map(|(i, r)| format!("row {} names unknown asset {:?}", i + 1, r.asset_id))
        .collect();
    verdict(problems, "every index row names a catalogued asset".into())
}

fn f4(rows: &[IndexRow]) -> Verdict {
    let all = query_index(rows, &IndexFilter::default()).len();
    let mut problems = Vec::new();
    if all != rows.len() {
        problems.push(format!("unfiltered query returned {all} of {} rows", rows.len()));
    }
    if let Some(first) = rows.first() {
        let filter = IndexFilter {
            free_text: Some(first.asset_id.clone()),
            ..Default::default()
        };
        if !query_index(rows, &filter).iter().any(|r| r.asset_id == first.asset_id) {
            problems.push(format!("query for {} did not find it", first.asset_id));
        }
    }
    verdict(problems, format!("index present and searchable ({all} rows)"))
}

fn a1(inputs: &FairInputs<'_>) -> Verdict {
    let live: Vec<&MediaAsset> = inputs.catalog.assets().filter(|a| !a.deleted).collect();
    let problems = live
        .iter()
        .filter(|a| !(inputs.media_exists)(a))
        .map(|a| format!("media of {} cannot be retrieved", a.asset_id))
        .collect();
    verdict(problems, format!("{} live assets retrievable by identifier", live.len()))
}

fn a4(catalog: &Catalog, rows: &[IndexRow]) -> Verdict {
    let by_id: BTreeMap<&str, &IndexRow> = rows.iter().map(|r| (r.asset_id.as_str(), r)).collect();
    let mut problems = Vec::new();
    let mut tombstones = 0;
    for a in catalog.assets() {
        match by_id.get(a.asset_id.as_str()) {
            None => problems.push(format!("no metadata row for {}", a.asset_id)),
            Some(r) if a.deleted && !r.is_deleted() => {
                problems.push(format!("row for deleted {} is not marked deleted", a.asset_id))
            }
            Some(_) if a.deleted => tombstones += 1,
            Some(_) => {}
        }
    }
    verdict(problems, format!("metadata kept for all assets, {tombstones} tombstones"))
}

fn i1(vocab: &Vocabulary, rows: &[IndexRow]) -> Verdict {
    let mut problems = Vec::new();
    for row in rows {
        let id = &row.asset_id;
        let mut bad = |column: &str, value: &str, ok: bool| {
            if !value.is_empty() && !ok {
                problems.push(format!("{id}: {column} {value:?} does not parse"));
            }
        };
        bad("asset_id", &row.asset_id, id_number(&row.asset_id, "A", 7).is_some());
        bad("case_id", &row.case_id, id_number(&row.case_id, "CASE", 5).is_some());
        bad("uid", &row.uid, Uid::from_str(&row.uid).is_ok());
        bad("kind", &row.kind, AssetKind::from_str(&row.kind).is_ok());
        bad("case_date", &row.case_date, NaiveDate::parse_from_str(&row.case_date, "%Y-%m-%d").is_ok());
        bad("modality", &row.modality, Modality::from_str(&row.modality).is_ok());
        bad("location", &row.location, vocab.validate_token(&row.location, VocabDomain::Location));
        bad(
            "pathology_category",
            &row.pathology_category,
            matches!(row.pathology_category.as_str(), "BENIGN" | "CANCER"),
        );
        if !row.pathology_category.is_empty() {
            let token = row.pathology_token();
            bad("stage/grade", &token, PathologyCode::from_str(&token).is_ok());
        }
        bad("sequence", &row.sequence, row.sequence.parse::<u8>().is_ok());
        bad("byte_size", &row.byte_size, row.byte_size.parse::<u64>().is_ok());
        bad(
            "checksum",
            &row.checksum,
            row.checksum.len() == 64 && row.checksum.bytes().all(|b| b.is_ascii_hexdigit()),
        );
        bad("status", &row.status, CompletionStatus::from_str(&row.status).is_ok());
        bad("created_at", &row.created_at, DateTime::parse_from_rfc3339(&row.created_at).is_ok());
        bad("modified_at", &row.modified_at, DateTime::parse_from_rfc3339(&row.modified_at).is_ok());
        bad("deleted", &row.deleted, matches!(row.deleted.as_str(), "TRUE" | "FALSE"));
    }
    verdict(problems, format!("index follows the {}-column schema", INDEX_HEADER.len()))
}

fn i3(catalog: &Catalog, rows: &[IndexRow]) -> Verdict {
    let mut problems = Vec::new();
    for row in rows {
        match catalog.case(&row.case_id) {
            Err(_) => problems.push(format!("{} refers to unknown case {:?}", row.asset_id, row.case_id)),
            Ok(case) => {
                if case.uid.as_str() != row.uid {
                    problems.push(format!("{} uid disagrees with case {}", row.asset_id, case.case_id));
                }
                if catalog.patient(&case.uid).is_none() {
                    problems.push(format!("case {} refers to unknown patient", case.case_id));
                }
            }
        }
        if let Ok(a) = catalog.asset(&row.asset_id) {
            if a.case_id != row.case_id {
                problems.push(format!("{} is catalogued under {}", row.asset_id, a.case_id));
            }
        }
    }
    verdict(problems, "every case and patient reference resolves".into())
}

fn r1(rows: &[IndexRow]) -> Verdict {
    const REQUIRED: [usize; 10] = [0, 1, 2, 3, 4, 11, 12, 13, 14, 16];
    let mut problems = Vec::new();
    for row in rows {
        let fields = row.fields();
        for &i in &REQUIRED {
            if fields[i].trim().is_empty() {
                problems.push(format!("{}: {} is empty", row.asset_id, INDEX_HEADER[i]));
            }
        }
    }
    verdict(problems, "required metadata columns populated".into())
}

fn r2(bundles: &[LoadedBundle]) -> Verdict {
    if bundles.is_empty() {
        return (FairStatus::NotApplicable, "no bundles released".into());
    }
    let problems = bundles
        .iter()
        .filter(|b| b.manifest.license.trim().is_empty())
        .map(|b| format!("bundle {} has no license", b.manifest.bundle_id))
        .collect();
    verdict(problems, format!("{} bundles carry a license", bundles.len()))
}

fn r3(rows: &[IndexRow], bundles: &[LoadedBundle]) -> Verdict {
    let mut problems: Vec<String> = rows
        .iter()
        .filter(|r| r.created_at.is_empty() || r.modified_at.is_empty())
        .map(|r| format!("{} lacks creation or modification time", r.asset_id))
        .collect();
    for b in bundles {
        if b.manifest.provenance.trim().is_empty() {
            problems.push(format!("bundle {} has no provenance statement", b.manifest.bundle_id));
        }
    }
    verdict(problems, "creation, modification and curation dates recorded".into())
}

fn r4(bundles: &[LoadedBundle]) -> Verdict {
    if bundles.is_empty() {
        return (FairStatus::NotApplicable, "no bundles released".into());
    }
    let mut problems = Vec::new();
    let mut files = 0;
    for b in bundles {
        for (name, text) in &b.coco {
            files += 1;
            if let Err(e) = CocoDocument::from_json(text).and_then(|d| import_coco(&d)) {
                problems.push(format!("{}/{name}: {e}", b.manifest.bundle_id));
            }
        }
    }
    verdict(problems, format!("{files} COCO files validate"))
}

/// Checks twelve principles mechanically and records the other three
/// from operator attestations.
pub fn fair_audit(inputs: &FairInputs<'_>) -> FairReport {
    let parsed = inputs
        .index_csv
        .map(|bytes| crate::catalog::read_index(bytes).map_err(|e| e.to_string()));
    let missing = |why: &str| (FairStatus::Fail, why.to_string());
    let with_rows = |check: &dyn Fn(&[IndexRow]) -> Verdict| match &parsed {
        None => missing("no index"),
        Some(Err(e)) => missing(&format!("index unreadable: {e}")),
        Some(Ok(rows)) => check(rows),
    };
    let catalog = inputs.catalog;
    let verdicts: [Verdict; 15] = [
        with_rows(&|rows| f1(catalog, rows)),
        with_rows(&f2),
        with_rows(&|rows| f3(catalog, rows)),
        with_rows(&f4),
        a1(inputs),
        attested(&inputs.attestations.a2),
        attested(&inputs.attestations.a3),
        with_rows(&|rows| a4(catalog, rows)),
        with_rows(&|rows| i1(inputs.vocab, rows)),
        attested(&inputs.attestations.i2),
        with_rows(&|rows| i3(catalog, rows)),
        with_rows(&r1),
        r2(inputs.bundles),
        with_rows(&|rows| r3(rows, inputs.bundles)),
        r4(inputs.bundles),
    ];
    FairReport {
        entries: PRINCIPLES
            .iter()
            .zip(verdicts)
            .map(|((principle, _), (status, evidence))| FairEntry {
                principle: principle.to_string(),
                status,
                evidence,
            })
            .collect(),
    }
}
