//! Layered quality control: media checks (QC1), completeness (QC2) and a
//! seeded annotation audit (QC3), each re-running the layers below it.
//! Also hosts the review-panel consensus rule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::geometry::validate_polygon;
use crate::annotations::{percent, AnnotationError, AnnotationRef, AnnotationStore, Percent, ReviewState};
use crate::catalog::{AssetKind, CaseRecord, DocumentKind, DocumentRef, MediaAsset, Procedure, StatusGate, VideoMeta};
use crate::quality::QualityScores;
use crate::vocab::{format_image_label, CompletionStatus, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QcLayer {
    #[serde(rename = "QC1")]
    Qc1,
    #[serde(rename = "QC2")]
    Qc2,
    #[serde(rename = "QC3")]
    Qc3,
}

impl QcLayer {
    pub const ALL: [QcLayer; 3] = [QcLayer::Qc1, QcLayer::Qc2, QcLayer::Qc3];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<QcLayer> {
        QcLayer::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }
}

impl fmt::Display for QcLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QC{}", self.number())
    }
}

/// Root-cause taxonomy for QC findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RootCause {
    MultifocalOverload,
    NoPathologySample,
    LesionNotIdentifiableInVideo,
    PoorFrameQuality,
    PathologyAssociationFailure,
    DataIncompleteness,
    RapidCameraMotion,
    FlatBoundaryAmbiguity,
    LargeLesion,
    CameraTooClose,
    CameraTooFar,
    /// Anything outside the taxonomy; requires a note.
    Freeform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub cause: RootCause,
    /// Asset, lesion, annotation or case the finding is about.
    pub subject: String,
    pub note: String,
}

impl Finding {
    pub fn new(cause: RootCause, subject: impl Into<String>, note: impl Into<String>) -> Self {
        Finding {
            cause,
            subject: subject.into(),
            note: note.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cause = serde_json::to_value(self.cause).expect("enum serializes");
        write!(f, "{} {}: {}", cause.as_str().unwrap_or_default(), self.subject, self.note)
    }
}

/// Which annotations a QC3 run looked at and how they were drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSample {
    pub fraction: f64,
    pub seed: u64,
    pub population: usize,
    pub audited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcLayerResult {
    pub layer: QcLayer,
    pub passed: bool,
    pub checked_at: DateTime<Utc>,
    pub findings: Vec<Finding>,
    pub reverified_layers: Vec<QcLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<AuditSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QcError {
    #[error("QC1 has not been run for case {0}")]
    MissingQc1(String),
    #[error("{layer} requires a passed {missing} for case {case_id}")]
    MissingPriorLayer {
        case_id: String,
        layer: QcLayer,
        missing: QcLayer,
    },
    #[error("sample fraction must lie in (0, 1], got {0}")]
    BadFraction(String),
    #[error("a freeform finding needs a note")]
    EmptyFreeformNote,
}

/// Everything the layers look at for one case.
pub struct CaseEvidence<'a> {
    pub case: &'a CaseRecord,
    /// Assets of the case; deleted and excluded ones are skipped.
    pub assets: Vec<&'a MediaAsset>,
    pub scores: &'a BTreeMap<String, QualityScores>,
    pub vocab: &'a Vocabulary,
    pub store: &'a AnnotationStore,
    /// Whether a referenced text document can be found.
    pub document_exists: &'a dyn Fn(&DocumentRef) -> bool,
}

impl CaseEvidence<'_> {
    fn active_assets(&self) -> impl Iterator<Item = &&MediaAsset> {
        self.assets
            .iter()
            .filter(|a| !a.deleted && a.status != CompletionStatus::Excluded)
    }

    fn video_meta(&self, asset_id: &str) -> Option<VideoMeta> {
        self.assets
            .iter()
            .find(|a| a.asset_id == asset_id && a.kind == AssetKind::Video)
            .and_then(|a| a.video)
    }
}

fn result(layer: QcLayer, now: DateTime<Utc>, findings: Vec<Finding>, reverified: Vec<QcLayer>) -> QcLayerResult {
    QcLayerResult {
        layer,
        passed: findings.is_empty(),
        checked_at: now,
        findings,
        reverified_layers: reverified,
        sample: None,
    }
}

fn qc1_findings(ev: &CaseEvidence<'_>) -> Vec<Finding> {
    let case = ev.case;
    let mut findings = Vec::new();
    if ev.active_assets().next().is_none() {
        findings.push(Finding::new(RootCause::DataIncompleteness, &case.case_id, "case has no media assets"));
    }
    for asset in ev.active_assets() {
        let id = &asset.asset_id;
        match ev.scores.get(id) {
            None => findings.push(Finding::new(RootCause::DataIncompleteness, id, "no quality scores recorded")),
            Some(s) if !s.frame_ok => findings.push(Finding::new(
                RootCause::PoorFrameQuality,
                id,
                format!("blur {:.3}, BRISQUE {:.3} outside gates", s.blur, s.brisque),
            )),
            Some(_) => {}
        }
        if asset.kind != AssetKind::Image {
            continue;
        }
        match asset.image_label() {
            None => findings.push(Finding::new(RootCause::DataIncompleteness, id, "image is unlabeled")),
            Some(label) => {
                if let Err(e) = ev.vocab.parse_image_stem(&format_image_label(label)) {
                    findings.push(Finding::new(RootCause::DataIncompleteness, id, format!("label no longer valid: {e}")));
                }
                if label.uid != case.uid || label.case_date != case.case_date {
                    findings.push(Finding::new(
                        RootCause::PathologyAssociationFailure,
                        id,
                        format!("label names {} on {} but the case is {} on {}", label.uid, label.case_date, case.uid, case.case_date),
                    ));
                }
            }
        }
    }
    let mut required = vec![DocumentKind::PathologyReport];
    if case.procedure == Procedure::Turbt {
        required.push(DocumentKind::SurgeryReport);
    }
    for kind in required {
        if !case.has_document(kind) {
            findings.push(Finding::new(
                RootCause::PathologyAssociationFailure,
                &case.case_id,
                format!("no {kind} referenced"),
            ));
        }
    }
    for doc in &case.text_docs {
        if !(ev.document_exists)(doc) {
            findings.push(Finding::new(
                RootCause::PathologyAssociationFailure,
                &case.case_id,
                format!("{} {:?} not found", doc.kind, doc.reference),
            ));
        }
    }
    findings
}

/// Media quality, label validity and text/visual alignment.
pub fn run_qc1(ev: &CaseEvidence<'_>, now: DateTime<Utc>) -> QcLayerResult {
    result(QcLayer::Qc1, now, qc1_findings(ev), Vec::new())
}

fn qc2_findings(ev: &CaseEvidence<'_>) -> Vec<Finding> {
    let mut findings = Vec::new();
    let annotated: BTreeSet<&str> = ev
        .store
        .case_annotations(&ev.case.case_id)
        .iter()
        .map(|a| a.lesion_id())
        .collect();
    for lesion in ev.store.case_lesions(&ev.case.case_id) {
        let id = &lesion.lesion_id;
        if lesion.pathology.is_none() {
            findings.push(Finding::new(RootCause::NoPathologySample, id, "lesion has no pathology result"));
        }
        if lesion.location.is_none() {
            findings.push(Finding::new(RootCause::DataIncompleteness, id, "lesion location missing"));
        }
        if lesion.appearance.is_none() {
            findings.push(Finding::new(RootCause::DataIncompleteness, id, "lesion appearance missing"));
        }
        if lesion.asset_ids.is_empty() && !annotated.contains(id.as_str()) {
            findings.push(Finding::new(
                RootCause::LesionNotIdentifiableInVideo,
                id,
                "lesion is not linked to any media",
            ));
        }
    }
    findings
}

fn reverify(findings: &mut Vec<Finding>, layer: QcLayer, again: Vec<Finding>) {
    findings.extend(again.into_iter().map(|mut f| {
        f.note = format!("{layer} re-verification: {}", f.note);
        f
    }));
}

/// Lesion completeness, after re-running QC1.
pub fn run_qc2(ev: &CaseEvidence<'_>, report: &QcReport, now: DateTime<Utc>) -> Result<QcLayerResult, QcError> {
    if report.qc1.is_none() {
        return Err(QcError::MissingQc1(ev.case.case_id.clone()));
    }
    let mut findings = Vec::new();
    reverify(&mut findings, QcLayer::Qc1, qc1_findings(ev));
    findings.extend(qc2_findings(ev));
    Ok(result(QcLayer::Qc2, now, findings, vec![QcLayer::Qc1]))
}

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.10;
pub const MIN_SAMPLE: usize = 5;

/// `max(ceil(fraction * n), min(5, n))`, never more than `n`.
pub fn sample_size(population: usize, fraction: f64) -> usize {
    // tolerance absorbs products like 0.1 * 400 landing a hair above 40
    let scaled = (fraction * population as f64 - 1e-9).ceil().max(0.0) as usize;
    scaled.max(MIN_SAMPLE.min(population)).min(population)
}

/// Seeded draw of `sample_size(ids.len(), fraction)` identifiers; the result
/// keeps the sorted order of `ids`.
pub fn draw_sample(ids: &[String], fraction: f64, seed: u64) -> Vec<String> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    let k = sample_size(sorted.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, sorted.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sorted[i].clone()).collect()
}

fn audit(ev: &CaseEvidence<'_>, annotation: &AnnotationRef<'_>) -> Vec<Finding> {
    let id = annotation.annotation_id();
    let mut findings = Vec::new();
    match ev.store.lesion(annotation.lesion_id()) {
        Ok(l) if l.pathology.is_some() => {}
        Ok(_) => findings.push(Finding::new(RootCause::NoPathologySample, id, "lesion has no pathology label")),
        Err(_) => findings.push(Finding::new(RootCause::PathologyAssociationFailure, id, "lesion does not exist")),
    }
    let span = annotation.span();
    let Some(meta) = ev.video_meta(&span.video_asset_id) else {
        findings.push(Finding::new(
            RootCause::LesionNotIdentifiableInVideo,
            id,
            format!("video {} unknown or without frame metadata", span.video_asset_id),
        ));
        return findings;
    };
    if let Err(e) = span.validate(&meta) {
        findings.push(Finding::new(RootCause::DataIncompleteness, id, e.to_string()));
    }
    if let Some(frame) = ev.store.excluded_frame_in(&span) {
        findings.push(Finding::new(RootCause::PoorFrameQuality, id, format!("frame {frame} is excluded")));
    }
    if let AnnotationRef::Segmentation(seg) = annotation {
        if let Err(defect) = validate_polygon(&seg.polygon, meta.width, meta.height) {
            findings.push(Finding::new(RootCause::FlatBoundaryAmbiguity, id, AnnotationError::from(defect).to_string()));
        }
    }
    findings
}

/// Seeded audit of the case's annotations after re-running QC1 and QC2.
pub fn run_qc3(
    ev: &CaseEvidence<'_>,
    report: &QcReport,
    fraction: f64,
    seed: u64,
    now: DateTime<Utc>,
) -> Result<QcLayerResult, QcError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(QcError::BadFraction(fraction.to_string()));
    }
    for (missing, prior) in [(QcLayer::Qc1, &report.qc1), (QcLayer::Qc2, &report.qc2)] {
        if !prior.as_ref().is_some_and(|r| r.passed) {
            return Err(QcError::MissingPriorLayer {
                case_id: ev.case.case_id.clone(),
                layer: QcLayer::Qc3,
                missing,
            });
        }
    }
    let mut findings = Vec::new();
    reverify(&mut findings, QcLayer::Qc1, qc1_findings(ev));
    reverify(&mut findings, QcLayer::Qc2, qc2_findings(ev));

    let annotations = ev.store.case_annotations(&ev.case.case_id);
    let ids: Vec<String> = annotations.iter().map(|a| a.annotation_id().to_string()).collect();
    if ids.is_empty() {
        findings.push(Finding::new(RootCause::DataIncompleteness, &ev.case.case_id, "case has no annotations to audit"));
    }
    let audited = draw_sample(&ids, fraction, seed);
    for id in &audited {
        let annotation = annotations
            .iter()
            .find(|a| a.annotation_id() == id)
            .expect("sampled from this list");
        findings.extend(audit(ev, annotation));
    }
    let mut out = result(QcLayer::Qc3, now, findings, vec![QcLayer::Qc1, QcLayer::Qc2]);
    out.sample = Some(AuditSample {
        fraction,
        seed,
        population: ids.len(),
        audited,
    });
    Ok(out)
}

/// Latest result of each layer for one case, plus manually logged findings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub case_id: String,
    pub qc1: Option<QcLayerResult>,
    pub qc2: Option<QcLayerResult>,
    pub qc3: Option<QcLayerResult>,
    #[serde(default)]
    pub logged: Vec<Finding>,
}

impl QcReport {
    pub fn new(case_id: impl Into<String>) -> Self {
        QcReport {
            case_id: case_id.into(),
            ..Default::default()
        }
    }

    pub fn layer(&self, layer: QcLayer) -> Option<&QcLayerResult> {
        match layer {
            QcLayer::Qc1 => self.qc1.as_ref(),
            QcLayer::Qc2 => self.qc2.as_ref(),
            QcLayer::Qc3 => self.qc3.as_ref(),
        }
    }

    /// Stores a result. Results of higher layers are dropped since they were
    /// computed against the superseded one.
    pub fn record(&mut self, result: QcLayerResult) {
        match result.layer {
            QcLayer::Qc1 => {
                self.qc1 = Some(result);
                self.qc2 = None;
                self.qc3 = None;
            }
            QcLayer::Qc2 => {
                self.qc2 = Some(result);
                self.qc3 = None;
            }
            QcLayer::Qc3 => self.qc3 = Some(result),
        }
    }

    /// Adds a finding noted by a reviewer outside an automated run.
    pub fn log(&mut self, finding: Finding) -> Result<(), QcError> {
        if finding.cause == RootCause::Freeform && finding.note.trim().is_empty() {
            return Err(QcError::EmptyFreeformNote);
        }
        self.logged.push(finding);
        Ok(())
    }

    fn passed(&self, layer: QcLayer) -> bool {
        self.layer(layer).is_some_and(|r| r.passed)
    }

    /// All three layers present and passed.
    pub fn gate_release(&self) -> bool {
        QcLayer::ALL.iter().all(|&l| self.passed(l))
    }
}

/// QC results for every case; doubles as the catalog's status gate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcLedger {
    pub reports: BTreeMap<String, QcReport>,
}

impl QcLedger {
    pub fn report(&self, case_id: &str) -> Option<&QcReport> {
        self.reports.get(case_id)
    }

    pub fn report_mut(&mut self, case_id: &str) -> &mut QcReport {
        self.reports
            .entry(case_id.to_string())
            .or_insert_with(|| QcReport::new(case_id))
    }

    pub fn gate_release(&self, case_id: &str) -> bool {
        self.report(case_id).is_some_and(QcReport::gate_release)
    }
}

impl StatusGate for QcLedger {
    fn allows(&self, case_id: &str, status: CompletionStatus) -> bool {
        let report = self.report(case_id);
        let passed = |layers: &[QcLayer]| report.is_some_and(|r| layers.iter().all(|&l| r.passed(l)));
        match status {
            CompletionStatus::Qc1Pass => passed(&[QcLayer::Qc1]),
            CompletionStatus::Qc2Pass | CompletionStatus::Annotated => passed(&[QcLayer::Qc1, QcLayer::Qc2]),
            CompletionStatus::Qc3Pass | CompletionStatus::Released => passed(&QcLayer::ALL),
            CompletionStatus::New | CompletionStatus::Labeled | CompletionStatus::Excluded => true,
        }
    }
}

/// Lesions with complete metadata whose annotations are all approved, as a
/// share of the lesions of `case_ids`. Lesions without annotations count as
/// not agreed.
pub fn agreement_rate(store: &AnnotationStore, case_ids: &[String]) -> Option<Percent> {
    let mut agreed = 0;
    let mut total = 0;
    for case_id in case_ids {
        let annotations = store.case_annotations(case_id);
        for lesion in store.case_lesions(case_id) {
            total += 1;
            let complete = lesion.location.is_some() && lesion.appearance.is_some() && lesion.pathology.is_some();
            let mut own = annotations.iter().filter(|a| a.lesion_id() == lesion.lesion_id).peekable();
            let has_any = own.peek().is_some();
            if complete && has_any && own.all(|a| a.review() == ReviewState::Approved) {
                agreed += 1;
            }
        }
    }
    percent(agreed, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewerRole {
    Urologist,
    Leader,
    Coordinator,
    DataScientist,
    Pathologist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVote {
    pub reviewer_id: String,
    pub role: ReviewerRole,
    pub verdict: Verdict,
    pub cast_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConsensusOutcome {
    Approved,
    Rejected,
    Escalated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecidedBy {
    Majority,
    LeaderTiebreak,
    ExternalExpert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusDecision {
    pub item_id: String,
    pub outcome: ConsensusOutcome,
    pub decided_by: DecidedBy,
    pub votes: Vec<ReviewVote>,
}

impl ConsensusOutcome {
    /// Review state an annotation takes after this outcome.
    pub fn review_state(self) -> ReviewState {
        match self {
            ConsensusOutcome::Approved => ReviewState::Approved,
            ConsensusOutcome::Rejected => ReviewState::Rejected,
            ConsensusOutcome::Escalated => ReviewState::Escalated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("reviewer {0} voted twice")]
    DuplicateVote(String),
    #[error("urologist panel must have at least one member")]
    EmptyPanel,
    #[error("{votes} urologist votes exceed the panel of {panel}")]
    TooManyUrologistVotes { votes: usize, panel: usize },
    #[error("more than one leader vote")]
    MultipleLeaderVotes,
    #[error("item {0} is already decided")]
    AlreadyDecided(String),
    #[error("item {0} is not awaiting an external ruling")]
    NotEscalated(String),
}

/// Urologist approvals (or rejections) needed for a majority decision:
/// 3 on a panel of 4, otherwise a strict majority.
pub fn majority_threshold(panel: usize) -> usize {
    if panel == 4 {
        3
    } else {
        panel / 2 + 1
    }
}

struct Tally {
    approve: usize,
    reject: usize,
    leader: Option<Verdict>,
}

fn tally(votes: &[ReviewVote], panel: usize) -> Result<Tally, ConsensusError> {
    if panel == 0 {
        return Err(ConsensusError::EmptyPanel);
    }
    let mut seen = BTreeSet::new();
    let mut t = Tally {
        approve: 0,
        reject: 0,
        leader: None,
    };
    for vote in votes {
        if !seen.insert(vote.reviewer_id.as_str()) {
            return Err(ConsensusError::DuplicateVote(vote.reviewer_id.clone()));
        }
        match vote.role {
            ReviewerRole::Urologist => match vote.verdict {
                Verdict::Approve => t.approve += 1,
                Verdict::Reject => t.reject += 1,
            },
            ReviewerRole::Leader if t.leader.is_some() => return Err(ConsensusError::MultipleLeaderVotes),
            ReviewerRole::Leader => t.leader = Some(vote.verdict),
            _ => {}
        }
    }
    if t.approve + t.reject > panel {
        return Err(ConsensusError::TooManyUrologistVotes {
            votes: t.approve + t.reject,
            panel,
        });
    }
    Ok(t)
}

/// Panel decision: an urologist majority wins; failing that the leader's
/// vote resolves; failing that the item goes to an external expert.
/// Votes from other roles are recorded but not counted.
pub fn consensus(item_id: &str, votes: Vec<ReviewVote>, panel: usize) -> Result<ConsensusDecision, ConsensusError> {
    let t = tally(&votes, panel)?;
    let need = majority_threshold(panel);
    let (outcome, decided_by) = if t.approve >= need {
        (ConsensusOutcome::Approved, DecidedBy::Majority)
    } else if t.reject >= need {
        (ConsensusOutcome::Rejected, DecidedBy::Majority)
    } else {
        match t.leader {
            Some(Verdict::Approve) => (ConsensusOutcome::Approved, DecidedBy::LeaderTiebreak),
            Some(Verdict::Reject) => (ConsensusOutcome::Rejected, DecidedBy::LeaderTiebreak),
            None => (ConsensusOutcome::Escalated, DecidedBy::ExternalExpert),
        }
    };
    Ok(ConsensusDecision {
        item_id: item_id.to_string(),
        outcome,
        decided_by,
        votes,
    })
}

/// Whether the votes so far settle the item: an urologist majority exists,
/// or every panel urologist has voted and the leader has too. A split
/// panel without a leader vote stays open until the leader votes or the
/// item is escalated.
pub fn ready_to_decide(votes: &[ReviewVote], panel: usize) -> Result<bool, ConsensusError> {
    let t = tally(votes, panel)?;
    let need = majority_threshold(panel);
    Ok(t.approve >= need || t.reject >= need || (t.approve + t.reject == panel && t.leader.is_some()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VoteOutcome {
    Pending { votes: usize },
    Decided(ConsensusDecision),
}

/// Open votes and final decisions, per reviewed item.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewBook {
    pub open: BTreeMap<String, Vec<ReviewVote>>,
    pub decided: BTreeMap<String, ConsensusDecision>,
}

impl ReviewBook {
    /// Records a vote and decides the item once [`ready_to_decide`] holds.
    pub fn cast(&mut self, item_id: &str, vote: ReviewVote, panel: usize) -> Result<VoteOutcome, ConsensusError> {
        if self.decided.contains_key(item_id) {
            return Err(ConsensusError::AlreadyDecided(item_id.to_string()));
        }
        let mut votes = self.open.get(item_id).cloned().unwrap_or_default();
        votes.push(vote);
        // validates before anything is stored
        if !ready_to_decide(&votes, panel)? {
            let n = votes.len();
            self.open.insert(item_id.to_string(), votes);
            return Ok(VoteOutcome::Pending { votes: n });
        }
        self.open.remove(item_id);
        let decision = consensus(item_id, votes, panel)?;
        self.decided.insert(item_id.to_string(), decision.clone());
        Ok(VoteOutcome::Decided(decision))
    }

    /// Closes an open item on the votes cast so far; without a majority or
    /// leader vote it goes to an external expert.
    pub fn escalate(&mut self, item_id: &str, panel: usize) -> Result<ConsensusDecision, ConsensusError> {
        if self.decided.contains_key(item_id) {
            return Err(ConsensusError::AlreadyDecided(item_id.to_string()));
        }
        let votes = self.open.remove(item_id).unwrap_or_default();
        let decision = consensus(item_id, votes, panel)?;
        self.decided.insert(item_id.to_string(), decision.clone());
        Ok(decision)
    }

    /// Records the external expert's ruling on an escalated item.
    pub fn resolve_external(&mut self, item_id: &str, outcome: ConsensusOutcome) -> Result<&ConsensusDecision, ConsensusError> {
        match self.decided.get_mut(item_id) {
            Some(d) if d.outcome == ConsensusOutcome::Escalated && outcome != ConsensusOutcome::Escalated => {
                d.outcome = outcome;
                d.decided_by = DecidedBy::ExternalExpert;
                Ok(d)
            }
            _ => Err(ConsensusError::NotEscalated(item_id.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::geometry::Point;
    use crate::annotations::LesionDraft;
    use crate::catalog::{Catalog, NoGate, Site};
    use crate::quality::QualityGates;
    use crate::annotations::Appearance;
    use crate::vocab::PathologyCode;
    use chrono::NaiveDate;

    fn vote(id: &str, role: ReviewerRole, verdict: Verdict) -> ReviewVote {
        ReviewVote {
            reviewer_id: id.into(),
            role,
            verdict,
            cast_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    fn uro(id: &str, v: Verdict) -> ReviewVote {
        vote(id, ReviewerRole::Urologist, v)
    }

    #[test]
    fn three_of_four() {
        use Verdict::*;
        let d = consensus("i", vec![uro("a", Approve), uro("b", Approve), uro("c", Approve), uro("d", Reject)], 4).unwrap();
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Approved, DecidedBy::Majority));
        let votes = vec![
            uro("a", Approve),
            uro("b", Approve),
            uro("c", Reject),
            uro("d", Reject),
            vote("pi", ReviewerRole::Leader, Approve),
        ];
        let d = consensus("i", votes, 4).unwrap();
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Approved, DecidedBy::LeaderTiebreak));
        let d = consensus("i", vec![uro("a", Approve), uro("b", Approve), uro("c", Reject), uro("d", Reject)], 4).unwrap();
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Escalated, DecidedBy::ExternalExpert));
    }

    #[test]
    fn consensus_errors() {
        use Verdict::*;
        assert_eq!(
            consensus("i", vec![uro("a", Approve), uro("a", Reject)], 4),
            Err(ConsensusError::DuplicateVote("a".into()))
        );
        assert_eq!(consensus("i", vec![], 0), Err(ConsensusError::EmptyPanel));
        assert!(matches!(
            consensus("i", vec![uro("a", Approve), uro("b", Approve)], 1),
            Err(ConsensusError::TooManyUrologistVotes { .. })
        ));
        let leaders = vec![vote("x", ReviewerRole::Leader, Approve), vote("y", ReviewerRole::Leader, Reject)];
        assert_eq!(consensus("i", leaders, 3), Err(ConsensusError::MultipleLeaderVotes));
        // non-urologist votes are recorded but do not count
        let d = consensus("i", vec![vote("p", ReviewerRole::Pathologist, Approve)], 1).unwrap();
        assert_eq!(d.outcome, ConsensusOutcome::Escalated);
        assert_eq!(d.votes.len(), 1);
    }

    #[test]
    fn review_book_flow() {
        use Verdict::*;
        let mut book = ReviewBook::default();
        assert_eq!(book.cast("x", uro("a", Approve), 4), Ok(VoteOutcome::Pending { votes: 1 }));
        assert_eq!(book.cast("x", uro("a", Reject), 4), Err(ConsensusError::DuplicateVote("a".into())));
        book.cast("x", uro("b", Approve), 4).unwrap();
        let VoteOutcome::Decided(d) = book.cast("x", uro("c", Approve), 4).unwrap() else {
            panic!("third approval decides");
        };
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Approved, DecidedBy::Majority));
        assert!(matches!(book.cast("x", uro("d", Reject), 4), Err(ConsensusError::AlreadyDecided(_))));

        for (r, v) in [("a", Approve), ("b", Approve), ("c", Reject), ("d", Reject)] {
            assert!(matches!(book.cast("y", uro(r, v), 4).unwrap(), VoteOutcome::Pending { .. }));
        }
        let VoteOutcome::Decided(d) = book.cast("y", vote("pi", ReviewerRole::Leader, Reject), 4).unwrap() else {
            panic!("leader resolves the split");
        };
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Rejected, DecidedBy::LeaderTiebreak));

        book.cast("z", uro("a", Approve), 4).unwrap();
        assert_eq!(book.escalate("z", 4).unwrap().outcome, ConsensusOutcome::Escalated);
        let d = book.resolve_external("z", ConsensusOutcome::Approved).unwrap();
        assert_eq!((d.outcome, d.decided_by), (ConsensusOutcome::Approved, DecidedBy::ExternalExpert));
        assert!(book.resolve_external("x", ConsensusOutcome::Rejected).is_err());
    }

    #[test]
    fn sample_sizes() {
        let got: Vec<usize> = [0, 1, 4, 5, 40, 50, 51, 400].iter().map(|&n| sample_size(n, 0.1)).collect();
        assert_eq!(got, vec![0, 1, 4, 5, 5, 5, 6, 40]);
        assert_eq!(sample_size(37, 1.0), 37);
    }

    #[test]
    fn sample_is_seeded() {
        let ids: Vec<String> = (0..100).map(|i| format!("N{i:07}")).collect();
        let a = draw_sample(&ids, 0.1, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, draw_sample(&ids, 0.1, 7));
        let mut reversed = ids.clone();
        reversed.reverse();
        assert_eq!(a, draw_sample(&reversed, 0.1, 7));
        assert_ne!(a, draw_sample(&ids, 0.1, 8));
        assert_eq!(draw_sample(&ids, 1.0, 3), ids);
    }

    struct Fixture {
        catalog: Catalog,
        store: AnnotationStore,
        scores: BTreeMap<String, QualityScores>,
        vocab: Vocabulary,
        case_id: String,
    }

    const META: VideoMeta = VideoMeta {
        frame_count: 50,
        width: 64,
        height: 48,
    };

    fn fixture() -> Fixture {
        let vocab = Vocabulary::default();
        let mut catalog = Catalog::new();
        let date = NaiveDate::from_ymd_opt(2021, 3, 4).unwrap();
        let p = catalog.register_patient(Site::SiteA, date);
        let docs = vec![
            DocumentRef {
                kind: DocumentKind::PathologyReport,
                reference: "path/1.txt".into(),
            },
            DocumentRef {
                kind: DocumentKind::SurgeryReport,
                reference: "op/1.txt".into(),
            },
        ];
        let case = catalog.create_case(&p.uid, date, Procedure::Turbt, docs).unwrap();
        let img = format!("{}_20210304_WLC_{}_BEN_01.png", p.uid, vocab.locations().next().unwrap().code);
        let image = catalog.ingest(&vocab, &img, b"img", &case.case_id, AssetKind::Image, false).unwrap().asset;
        let video = catalog
            .ingest(&vocab, &format!("{}_20210304.mp4", p.uid), b"vid", &case.case_id, AssetKind::Video, false)
            .unwrap()
            .asset;
        catalog.set_video_meta(&video.asset_id, META).unwrap();
        let good = QualityGates::default().evaluate(500.0, 20.0);
        let scores = [(image.asset_id, good), (video.asset_id.clone(), good)].into_iter().collect();
        let mut store = AnnotationStore::new();
        let lesion = store.add_lesion(
            &case.case_id,
            LesionDraft {
                location: vocab.locations().next(),
                appearance: Some(Appearance::Papillary),
                pathology: Some(PathologyCode::Benign),
                asset_ids: vec![video.asset_id.clone()],
            },
        );
        let tri = vec![Point::new(1.0, 1.0), Point::new(20.0, 1.0), Point::new(1.0, 20.0)];
        for frame in 0..8 {
            store.add_segmentation(&lesion.lesion_id, &video.asset_id, frame, tri.clone(), &META).unwrap();
        }
        Fixture {
            catalog,
            store,
            scores,
            vocab,
            case_id: case.case_id,
        }
    }

    fn evidence<'a>(f: &'a Fixture, docs: &'a dyn Fn(&DocumentRef) -> bool) -> CaseEvidence<'a> {
        CaseEvidence {
            case: f.catalog.case(&f.case_id).unwrap(),
            assets: f.catalog.case_assets(&f.case_id).collect(),
            scores: &f.scores,
            vocab: &f.vocab,
            store: &f.store,
            document_exists: docs,
        }
    }

    fn now() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    #[test]
    fn all_layers_pass_on_clean_case() {
        let f = fixture();
        let ev = evidence(&f, &|_| true);
        let mut report = QcReport::new(&f.case_id);
        assert_eq!(run_qc2(&ev, &report, now()), Err(QcError::MissingQc1(f.case_id.clone())));
        report.record(run_qc1(&ev, now()));
        let qc2 = run_qc2(&ev, &report, now()).unwrap();
        assert_eq!(qc2.reverified_layers, vec![QcLayer::Qc1]);
        report.record(qc2);
        let qc3 = run_qc3(&ev, &report, 0.1, 42, now()).unwrap();
        assert!(qc3.passed, "{:?}", qc3.findings);
        assert_eq!(qc3.reverified_layers, vec![QcLayer::Qc1, QcLayer::Qc2]);
        assert_eq!(qc3.sample.as_ref().unwrap().audited.len(), 5);
        report.record(qc3);
        assert!(report.gate_release());

        let mut ledger = QcLedger::default();
        *ledger.report_mut(&f.case_id) = report.clone();
        assert!(ledger.allows(&f.case_id, CompletionStatus::Released));
        report.record(run_qc1(&ev, now()));
        assert!(report.qc3.is_none() && !report.gate_release());
    }

    #[test]
    fn qc1_findings_name_subjects() {
        let mut f = fixture();
        let video_id = f.catalog.assets().find(|a| a.kind == AssetKind::Video).unwrap().asset_id.clone();
        f.scores.insert(video_id.clone(), QualityGates::default().evaluate(0.0, 20.0));
        let ev = evidence(&f, &|d| d.kind != DocumentKind::SurgeryReport);
        let r = run_qc1(&ev, now());
        assert!(!r.passed);
        assert!(r.findings.iter().any(|x| x.cause == RootCause::PoorFrameQuality && x.subject == video_id));
        assert!(r.findings.iter().any(|x| x.note.contains("op/1.txt")));
    }

    #[test]
    fn missing_pathology_report_fails_qc1() {
        let mut f = fixture();
        let date = NaiveDate::from_ymd_opt(2021, 5, 1).unwrap();
        let uid = f.catalog.patients().next().unwrap().uid.clone();
        f.case_id = f.catalog.create_case(&uid, date, Procedure::ClinicCysto, vec![]).unwrap().case_id;
        let r = run_qc1(&evidence(&f, &|_| true), now());
        assert!(!r.passed);
        assert!(r.findings.iter().any(|x| x.note.contains("no media")));
        assert!(r.findings.iter().any(|x| x.cause == RootCause::PathologyAssociationFailure));
    }

    #[test]
    fn qc2_maps_gaps_to_root_causes() {
        let mut f = fixture();
        f.store.add_lesion(&f.case_id, LesionDraft::default());
        let ev = evidence(&f, &|_| true);
        let mut report = QcReport::new(&f.case_id);
        report.record(run_qc1(&ev, now()));
        let r = run_qc2(&ev, &report, now()).unwrap();
        let causes: BTreeSet<RootCause> = r.findings.iter().map(|x| x.cause).collect();
        let expected = [
            RootCause::NoPathologySample,
            RootCause::DataIncompleteness,
            RootCause::LesionNotIdentifiableInVideo,
        ];
        assert_eq!(causes, expected.into_iter().collect());
        report.record(r);
        assert!(matches!(
            run_qc3(&ev, &report, 0.1, 1, now()),
            Err(QcError::MissingPriorLayer { missing: QcLayer::Qc2, .. })
        ));
    }

    #[test]
    fn ledger_gates_catalog_status() {
        let mut f = fixture();
        let image = f.catalog.assets().find(|a| a.kind == AssetKind::Image).unwrap().asset_id.clone();
        let ledger = QcLedger::default();
        assert!(f.catalog.set_status(&image, CompletionStatus::Qc1Pass, &ledger, "t").is_err());
        let mut ledger = QcLedger::default();
        let ev = evidence(&f, &|_| true);
        ledger.report_mut(&f.case_id).record(run_qc1(&ev, now()));
        f.catalog.set_status(&image, CompletionStatus::Qc1Pass, &ledger, "t").unwrap();
        assert!(f.catalog.set_status(&image, CompletionStatus::Qc2Pass, &ledger, "t").is_err());
        f.catalog.set_status(&image, CompletionStatus::Qc2Pass, &NoGate, "t").unwrap();
    }

    #[test]
    fn freeform_needs_note() {
        let mut r = QcReport::new("C");
        assert_eq!(r.log(Finding::new(RootCause::Freeform, "C", " ")), Err(QcError::EmptyFreeformNote));
        r.log(Finding::new(RootCause::RapidCameraMotion, "N0000001", "")).unwrap();
        assert_eq!(r.logged.len(), 1);
    }

    #[test]
    fn agreement_counts_approved_complete_lesions() {
        let mut f = fixture();
        let cases = vec![f.case_id.clone()];
        assert_eq!(agreement_rate(&f.store, &cases).unwrap().tenths(), 0);
        let ids: Vec<String> = f.store.segmentations().map(|s| s.annotation_id.clone()).collect();
        for id in &ids {
            f.store.set_review(id, ReviewState::Approved).unwrap();
        }
        assert_eq!(agreement_rate(&f.store, &cases).unwrap().to_string(), "100.0");
        f.store.add_lesion(&f.case_id, LesionDraft::default());
        assert_eq!(agreement_rate(&f.store, &cases).unwrap().to_string(), "50.0");
        assert_eq!(agreement_rate(&f.store, &[]), None);
    }
}
