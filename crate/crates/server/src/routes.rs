use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cysto_core::annotations::ReviewState;
use cysto_core::catalog::{IndexFilter, IndexRow, LabelSubmission};
use cysto_core::export::AccessLevel;
use cysto_core::qc::{ConsensusOutcome, QcReport, ReviewVote, ReviewerRole, Verdict, VoteOutcome};
use cysto_core::vocab::{CompletionStatus, Uid, VocabDomain};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::views::{annotation_view, asset_view, case_view, lesion_view, redact_row};
use crate::{ApiError, AppState, Inner, Served, SessionContext, ACCESS_LEVEL_HEADER, IDEMPOTENCY_HEADER};

type Shared = State<Arc<AppState>>;
type Reply = Result<Served, ApiError>;

pub fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/cases", get(list_cases))
        .route("/cases/{case_id}", get(get_case))
        .route("/images", get(list_images))
        .route("/search", get(search))
        .route("/assets/{asset_id}", get(get_asset))
        .route("/assets/{asset_id}/media", get(get_media))
        .route("/labels", post(submit_label))
        .route("/review-queue", get(review_queue))
        .route("/votes", post(cast_vote))
        .route("/votes/{item_id}/escalate", post(escalate))
        .route("/votes/{item_id}/resolve", post(resolve))
        .route("/atlas", get(atlas))
        .route("/atlas/filter", get(atlas_filter_query).post(atlas_filter_upload))
        .route("/qc/{case_id}", get(qc_report))
        .route("/vocabulary", get(vocabulary))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed here")
        })
}

/// One page of `items`, which must be sorted by key.
fn paginate(items: Vec<(String, Value)>, cursor: Option<&str>, limit: Option<usize>, default: usize) -> Result<Value, ApiError> {
    let limit = limit.unwrap_or(default);
    if limit == 0 || limit > 10 * default {
        return Err(ApiError::bad_request(format!("limit must be within 1..={}", 10 * default)));
    }
    let mut rest: Vec<(String, Value)> = items
        .into_iter()
        .filter(|(k, _)| cursor.is_none_or(|c| k.as_str() > c))
        .collect();
    let more = rest.len() > limit;
    rest.truncate(limit);
    let next = if more { rest.last().map(|(k, _)| k.clone()) } else { None };
    Ok(json!({
        "items": rest.into_iter().map(|(_, v)| v).collect::<Vec<_>>(),
        "next_cursor": next,
    }))
}

/// Runs a mutation once per idempotency key and persists the workspace.
fn mutate(
    state: &AppState,
    session: &SessionContext,
    headers: &HeaderMap,
    route: &str,
    f: impl FnOnce(&mut Inner) -> Reply,
) -> Reply {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let mut inner = state.lock()?;
    let slot = key.map(|k| (session.user_id.clone(), route.to_string(), k));
    if let Some(hit) = slot.as_ref().and_then(|s| inner.replay.get(s)) {
        return Ok(hit.clone());
    }
    let served = f(&mut inner)?;
    inner.ws.save().map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(s) = slot {
        inner.replay.insert(s, served.clone());
    }
    Ok(served)
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn list_cases(State(state): Shared, session: SessionContext, q: Result<Query<PageQuery>, QueryRejection>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let Query(q) = q?;
    let inner = state.lock()?;
    let ws = &inner.ws;
    let items = ws
        .catalog
        .cases()
        .map(|c| {
            let mut v = case_view(c, session.identified());
            v["assets"] = json!(ws.catalog.case_assets(&c.case_id).filter(|a| !a.deleted).count());
            (c.case_id.clone(), v)
        })
        .collect();
    let body = paginate(items, q.cursor.as_deref(), q.limit, state.page_size)?;
    Ok(Served::ok(session.catalog_level(), body))
}

async fn get_case(State(state): Shared, session: SessionContext, Path(case_id): Path<String>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let inner = state.lock()?;
    let ws = &inner.ws;
    let case = ws.catalog.case(&case_id)?;
    let mut body = case_view(case, session.identified());
    body["assets"] = ws
        .catalog
        .case_assets(&case_id)
        .map(|a| asset_view(a, session.identified()))
        .collect();
    let annotations = ws.store.case_annotations(&case_id);
    body["lesions"] = ws
        .store
        .case_lesions(&case_id)
        .map(|l| lesion_view(l, annotations.iter().filter(|a| a.lesion_id() == l.lesion_id).count()))
        .collect();
    let report = ws.qc.report(&case_id);
    body["qc"] = json!({
        "QC1": report.and_then(|r| r.qc1.as_ref()).map(|r| r.passed),
        "QC2": report.and_then(|r| r.qc2.as_ref()).map(|r| r.passed),
        "QC3": report.and_then(|r| r.qc3.as_ref()).map(|r| r.passed),
        "release_gate": report.is_some_and(QcReport::gate_release),
    });
    Ok(Served::ok(session.catalog_level(), body))
}

fn row_value(row: IndexRow, identified: bool) -> Value {
    let mut v = serde_json::to_value(row).expect("rows serialize");
    if !identified {
        let m = v.as_object_mut().expect("object");
        m.remove("uid");
        m.remove("case_date");
    }
    v
}

/// Index rows visible to the session, redacted before any filter runs so
/// that a filter cannot probe hidden columns.
fn visible_rows(inner: &Inner, session: &SessionContext, include_deleted: bool) -> Vec<IndexRow> {
    inner
        .ws
        .catalog
        .build_index()
        .into_iter()
        .filter(|r| include_deleted || !r.is_deleted())
        .map(|r| if session.identified() { r } else { redact_row(r) })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    status: Option<String>,
    pathology: Option<String>,
    text: Option<String>,
    modality: Option<String>,
    location: Option<String>,
    uid: Option<String>,
    #[serde(default)]
    include_deleted: bool,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn list_images(State(state): Shared, session: SessionContext, q: Result<Query<ImageQuery>, QueryRejection>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let Query(q) = q?;
    if let Some(s) = &q.status {
        s.parse::<CompletionStatus>()
            .map_err(|_| ApiError::unprocessable("UnknownVocab", format!("status: unknown token {s:?}")))?;
    }
    let filter = IndexFilter {
        uid: q.uid,
        modality: q.modality,
        location: q.location,
        pathology: q.pathology,
        status: q.status,
        free_text: q.text.filter(|t| !t.is_empty()),
    };
    let inner = state.lock()?;
    let items = visible_rows(&inner, &session, q.include_deleted)
        .into_iter()
        .filter(|r| r.kind == "IMAGE" && filter.matches(r))
        .map(|r| (r.asset_id.clone(), row_value(r, session.identified())))
        .collect();
    let body = paginate(items, q.cursor.as_deref(), q.limit, state.page_size)?;
    Ok(Served::ok(session.catalog_level(), body))
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: String,
    cursor: Option<String>,
    limit: Option<usize>,
}

/// Vocabulary tokens in the query become exact column filters; other words
/// are matched as free text.
fn search_filter(inner: &Inner, q: &str) -> IndexFilter {
    let vocab = &inner.ws.vocab;
    q.split_whitespace().fold(IndexFilter::default(), |acc, term| {
        let upper = term.to_ascii_uppercase();
        let mut f = IndexFilter::default();
        if vocab.validate_token(&upper, VocabDomain::Pathology) || upper == "BENIGN" || upper == "CANCER" {
            f.pathology = Some(upper);
        } else if vocab.validate_token(&upper, VocabDomain::Modality) {
            f.modality = Some(upper);
        } else if vocab.validate_token(&upper, VocabDomain::Location) {
            f.location = Some(upper);
        } else if vocab.validate_token(&upper, VocabDomain::Status) {
            f.status = Some(upper);
        } else {
            f.free_text = Some(term.to_string());
        }
        acc.and(f)
    })
}

async fn search(State(state): Shared, session: SessionContext, q: Result<Query<SearchQuery>, QueryRejection>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let Query(q) = q?;
    if q.q.trim().is_empty() {
        return Err(ApiError::bad_request("empty search"));
    }
    let inner = state.lock()?;
    let filter = search_filter(&inner, &q.q);
    let items = visible_rows(&inner, &session, false)
        .into_iter()
        .filter(|r| filter.matches(r))
        .map(|r| (r.asset_id.clone(), row_value(r, session.identified())))
        .collect();
    let body = paginate(items, q.cursor.as_deref(), q.limit, state.page_size)?;
    Ok(Served::ok(session.catalog_level(), body))
}

async fn get_asset(State(state): Shared, session: SessionContext, Path(asset_id): Path<String>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let inner = state.lock()?;
    let asset = inner.ws.catalog.asset(&asset_id)?;
    Ok(Served::ok(session.catalog_level(), asset_view(asset, session.identified())))
}

async fn get_media(State(state): Shared, session: SessionContext, Path(asset_id): Path<String>) -> Result<Response, ApiError> {
    session.require(AccessLevel::Internal)?;
    let path = {
        let inner = state.lock()?;
        let asset = inner.ws.catalog.asset(&asset_id)?;
        if asset.deleted {
            return Err(ApiError::not_found(format!("asset {asset_id} is deleted")));
        }
        inner.ws.media_path(asset)
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("no media stored for {asset_id}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("mp4") => "video/mp4",
        Some("avi") => "video/x-msvideo",
        Some("mov") => "video/quicktime",
        _ => "application/octet-stream",
    };
    let mut res = bytes.into_response();
    res.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(mime));
    res.headers_mut()
        .insert(ACCESS_LEVEL_HEADER, HeaderValue::from_static("INTERNAL"));
    Ok(res)
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    asset_id: String,
    #[serde(flatten)]
    fields: LabelSubmission,
}

async fn submit_label(
    State(state): Shared,
    session: SessionContext,
    headers: HeaderMap,
    body: Result<Json<LabelBody>, JsonRejection>,
) -> Reply {
    session.require(AccessLevel::Confidential)?;
    let Json(body) = body?;
    mutate(&state, &session, &headers, "labels", |inner| {
        let ws = &mut inner.ws;
        let f = &body.fields;
        let mut problems = Vec::new();
        for (domain, token) in [
            (VocabDomain::Modality, &f.modality),
            (VocabDomain::Location, &f.location),
            (VocabDomain::Pathology, &f.pathology),
        ] {
            if !ws.vocab.validate_token(token, domain) {
                problems.push(format!("{domain}: unknown token {token:?}"));
            }
        }
        if f.uid.parse::<Uid>().is_err() {
            problems.push(format!("uid: {:?} is not a UID token", f.uid));
        }
        if !(1..=99).contains(&f.sequence) {
            problems.push(format!("sequence: {} outside 1..=99", f.sequence));
        }
        if !problems.is_empty() {
            return Err(ApiError::unprocessable("UnknownVocab", problems.join("; ")));
        }
        let asset = ws.catalog.submit_label(&ws.vocab, &body.asset_id, f, &session.user_id)?;
        Ok(Served::ok(AccessLevel::Confidential, asset_view(asset, true)))
    })
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    state: Option<ReviewState>,
    status: Option<CompletionStatus>,
    case_id: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn review_queue(State(state): Shared, session: SessionContext, q: Result<Query<QueueQuery>, QueryRejection>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let Query(q) = q?;
    let want = q.state.unwrap_or(ReviewState::Pending);
    let inner = state.lock()?;
    let ws = &inner.ws;
    let mut items = Vec::new();
    for case in ws.catalog.cases() {
        if q.case_id.as_ref().is_some_and(|c| c != &case.case_id) {
            continue;
        }
        for a in ws.store.case_annotations(&case.case_id) {
            if a.review() != want {
                continue;
            }
            let video = a.span().video_asset_id;
            let asset_status = ws.catalog.asset(&video).ok().map(|v| v.status);
            if q.status.is_some() && asset_status != q.status {
                continue;
            }
            let mut v = annotation_view(&a);
            v["case_id"] = json!(case.case_id);
            v["asset_status"] = json!(asset_status);
            if let Ok(lesion) = ws.store.lesion(a.lesion_id()) {
                v["pathology"] = json!(lesion.pathology.map(|p| p.to_string()));
                v["location"] = json!(lesion.location.as_ref().map(|l| &l.code));
            }
            let votes = ws.reviews.open.get(a.annotation_id()).map(Vec::as_slice).unwrap_or_default();
            v["votes"] = json!(votes
                .iter()
                .map(|v| json!({ "reviewer_id": v.reviewer_id, "role": v.role, "verdict": v.verdict }))
                .collect::<Vec<_>>());
            items.push((a.annotation_id().to_string(), v));
        }
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let body = paginate(items, q.cursor.as_deref(), q.limit, state.page_size)?;
    Ok(Served::ok(AccessLevel::Internal, body))
}

#[derive(Debug, Deserialize)]
struct VoteBody {
    item_id: String,
    verdict: Verdict,
}

/// Writes a decided outcome back to the annotation it concerns.
fn apply_decision(inner: &mut Inner, item_id: &str, outcome: ConsensusOutcome, actor: &str) -> Result<(), ApiError> {
    inner
        .ws
        .store
        .set_review(item_id, outcome.review_state())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    inner
        .ws
        .record(actor, "review_decided", item_id, json!({ "outcome": outcome }));
    Ok(())
}

fn require_role(session: &SessionContext, allowed: &[ReviewerRole]) -> Result<ReviewerRole, ApiError> {
    match session.role {
        Some(r) if allowed.contains(&r) => Ok(r),
        Some(r) => Err(ApiError::forbidden(format!("{} ({r:?}) may not do this", session.user_id))),
        None => Err(ApiError::forbidden(format!("{} is not a registered reviewer", session.user_id))),
    }
}

fn pending_annotation(inner: &Inner, item_id: &str) -> Result<(), ApiError> {
    let annotation = inner
        .ws
        .store
        .annotation(item_id)
        .map_err(|_| ApiError::not_found(format!("unknown annotation {item_id}")))?;
    if annotation.review() != ReviewState::Pending && !inner.ws.reviews.open.contains_key(item_id) {
        return Err(ApiError::conflict(
            "AlreadyDecided",
            format!("annotation {item_id} is already {:?}", annotation.review()),
        ));
    }
    Ok(())
}

async fn cast_vote(
    State(state): Shared,
    session: SessionContext,
    headers: HeaderMap,
    body: Result<Json<VoteBody>, JsonRejection>,
) -> Reply {
    session.require(AccessLevel::Internal)?;
    let role = require_role(
        &session,
        &[
            ReviewerRole::Urologist,
            ReviewerRole::Leader,
            ReviewerRole::Coordinator,
            ReviewerRole::DataScientist,
            ReviewerRole::Pathologist,
        ],
    )?;
    let Json(body) = body?;
    let now = state.now();
    mutate(&state, &session, &headers, "votes", |inner| {
        pending_annotation(inner, &body.item_id)?;
        let vote = ReviewVote {
            reviewer_id: session.user_id.clone(),
            role,
            verdict: body.verdict,
            cast_at: now,
        };
        let panel = inner.ws.settings.urologist_panel;
        let outcome = inner.ws.reviews.cast(&body.item_id, vote, panel)?;
        inner.ws.record(
            &session.user_id,
            "vote",
            &body.item_id,
            json!({ "role": role, "verdict": body.verdict }),
        );
        if let VoteOutcome::Decided(d) = &outcome {
            apply_decision(inner, &body.item_id, d.outcome, &session.user_id)?;
        }
        Ok(Served::ok(AccessLevel::Internal, json!({ "item_id": body.item_id, "result": outcome })))
    })
}

async fn escalate(State(state): Shared, session: SessionContext, headers: HeaderMap, Path(item_id): Path<String>) -> Reply {
    session.require(AccessLevel::Internal)?;
    require_role(&session, &[ReviewerRole::Leader, ReviewerRole::Coordinator])?;
    mutate(&state, &session, &headers, &format!("escalate/{item_id}"), |inner| {
        pending_annotation(inner, &item_id)?;
        let panel = inner.ws.settings.urologist_panel;
        let decision = inner.ws.reviews.escalate(&item_id, panel)?;
        apply_decision(inner, &item_id, decision.outcome, &session.user_id)?;
        Ok(Served::ok(AccessLevel::Internal, json!({ "item_id": item_id, "decision": decision })))
    })
}

#[derive(Debug, Deserialize)]
struct ResolveBody {
    outcome: ConsensusOutcome,
}

async fn resolve(
    State(state): Shared,
    session: SessionContext,
    headers: HeaderMap,
    Path(item_id): Path<String>,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> Reply {
    session.require(AccessLevel::Internal)?;
    require_role(&session, &[ReviewerRole::Coordinator])?;
    let Json(body) = body?;
    mutate(&state, &session, &headers, &format!("resolve/{item_id}"), |inner| {
        let decision = inner.ws.reviews.resolve_external(&item_id, body.outcome)?.clone();
        apply_decision(inner, &item_id, decision.outcome, &session.user_id)?;
        Ok(Served::ok(AccessLevel::Internal, json!({ "item_id": item_id, "decision": decision })))
    })
}

fn atlas_view(state: &AppState, ids: Option<&[String]>) -> Reply {
    let now = state.now();
    let mut inner = state.lock()?;
    if let Some(ids) = ids {
        let unknown: Vec<&str> = ids
            .iter()
            .filter(|id| inner.ws.catalog.asset(id).is_err())
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(ApiError::unprocessable("UnknownAsset", format!("unknown asset ids: {}", unknown.join(", "))));
        }
    }
    let known = inner.ws.vault.uids().count();
    let manifest = inner.ws.atlas(ids, now)?;
    // new pseudonyms must survive a restart to stay stable
    if inner.ws.vault.uids().count() != known {
        inner.ws.save().map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let body = serde_json::to_value(manifest).expect("manifest serializes");
    Ok(Served::ok(AccessLevel::Internal, body))
}

async fn atlas(State(state): Shared, session: SessionContext) -> Reply {
    session.require(AccessLevel::Internal)?;
    atlas_view(&state, None)
}

/// Asset IDs from an uploaded file: one per line, optional `asset_id`
/// header, blank lines ignored. Every bad line is reported.
pub(crate) fn parse_id_csv(text: &str) -> Result<Vec<String>, ApiError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut ids = Vec::new();
    let mut bad = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = record.position().map_or(line as u64, |p| p.line());
        let fields: Vec<&str> = record.iter().filter(|f| !f.is_empty()).collect();
        match fields.as_slice() {
            [] => {}
            [h] if ids.is_empty() && bad.is_empty() && h.eq_ignore_ascii_case("asset_id") => {}
            [id] if is_asset_id(id) => ids.push(id.to_string()),
            [other] => bad.push(format!("line {line}: {other:?} is not an asset id")),
            _ => bad.push(format!("line {line}: expected one asset id, found {}", fields.len())),
        }
    }
    if !bad.is_empty() {
        return Err(ApiError::unprocessable("MalformedCsv", bad.join("; ")));
    }
    if ids.is_empty() {
        return Err(ApiError::unprocessable("MalformedCsv", "no asset ids"));
    }
    Ok(ids)
}

fn is_asset_id(s: &str) -> bool {
    s.strip_prefix('A')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Deserialize)]
struct FilterQuery {
    ids: String,
}

async fn atlas_filter_query(State(state): Shared, session: SessionContext, q: Result<Query<FilterQuery>, QueryRejection>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let Query(q) = q?;
    let ids = parse_id_csv(&q.ids.replace(',', "\n"))?;
    atlas_view(&state, Some(&ids))
}

async fn atlas_filter_upload(State(state): Shared, session: SessionContext, body: Bytes) -> Reply {
    session.require(AccessLevel::Internal)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::unprocessable("MalformedCsv", "upload is not UTF-8"))?;
    let ids = parse_id_csv(text)?;
    atlas_view(&state, Some(&ids))
}

async fn qc_report(State(state): Shared, session: SessionContext, Path(case_id): Path<String>) -> Reply {
    session.require(AccessLevel::Internal)?;
    let inner = state.lock()?;
    inner.ws.catalog.case(&case_id)?;
    let report = inner.ws.qc.report(&case_id).cloned().unwrap_or_else(|| QcReport::new(&case_id));
    let body = json!({
        "case_id": case_id,
        "release_gate": report.gate_release(),
        "report": report,
    });
    Ok(Served::ok(session.catalog_level(), body))
}

#[derive(Debug, Deserialize)]
struct VocabQuery {
    domain: Option<VocabDomain>,
    prefix: Option<String>,
}

/// Public: the controlled vocabularies, optionally one domain filtered by
/// a case-insensitive prefix for autocomplete.
async fn vocabulary(State(state): Shared, q: Result<Query<VocabQuery>, QueryRejection>) -> Reply {
    let Query(q) = q?;
    let inner = state.lock()?;
    let vocab = &inner.ws.vocab;
    let prefix = q.prefix.unwrap_or_default().to_ascii_uppercase();
    let names: BTreeMap<String, String> = vocab.locations().map(|l| (l.code, l.display_name)).collect();
    let domain_tokens = |d: VocabDomain| -> Vec<Value> {
        vocab
            .tokens(d)
            .into_iter()
            .filter(|t| t.to_ascii_uppercase().starts_with(&prefix))
            .map(|t| match names.get(&t).filter(|_| d == VocabDomain::Location) {
                Some(name) => json!({ "token": t, "display_name": name }),
                None => json!({ "token": t }),
            })
            .collect()
    };
    let domains = match q.domain {
        Some(d) => vec![d],
        None => vec![VocabDomain::Modality, VocabDomain::Location, VocabDomain::Pathology, VocabDomain::Status],
    };
    let body: serde_json::Map<String, Value> = domains
        .into_iter()
        .map(|d| (serde_json::to_value(d).expect("domain").as_str().unwrap_or_default().to_string(), json!(domain_tokens(d))))
        .collect();
    Ok(Served::ok(AccessLevel::Public, json!({ "domains": body })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_upload_rules() {
        assert_eq!(parse_id_csv("asset_id\nA0000001\n\nA0000002\n").unwrap(), ["A0000001", "A0000002"]);
        assert_eq!(parse_id_csv("\u{feff}A0000003\r\n").unwrap(), ["A0000003"]);
        let e = parse_id_csv("A0000001\nUID0001\nA1,A2\n").unwrap_err();
        assert_eq!(e.code, "MalformedCsv");
        assert!(e.detail.contains("line 2") && e.detail.contains("line 3"), "{}", e.detail);
        assert_eq!(parse_id_csv("asset_id\n").unwrap_err().detail, "no asset ids");
        // a header is only accepted on the first line
        assert!(parse_id_csv("A0000001\nasset_id\n").is_err());
    }

    #[test]
    fn pagination_walks_every_item_once() {
        let items: Vec<(String, Value)> = (0..250).map(|i| (format!("K{i:04}"), json!(i))).collect();
        let mut seen = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let page = paginate(items.clone(), cursor.as_deref(), None, 100).unwrap();
            seen.extend(page["items"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()));
            match page["next_cursor"].as_str() {
                Some(c) => cursor = Some(c.to_string()),
                None => break,
            }
        }
        assert_eq!(seen, (0..250).collect::<Vec<_>>());
        assert!(paginate(items, None, Some(0), 100).is_err());
    }
}
