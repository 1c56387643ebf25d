//! JSON routes under `/api/v1`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use panvas_core::engagement::ReactionTarget;
use panvas_core::identity::Role;
use panvas_core::ids::{
    AccountId, AnchorId, AssignmentId, BountyId, CommentId, Credits, FragmentId, MarketId, PaperId, ReviewId,
    ThreadId, Tick, UserId,
};
use panvas_core::moderation::{ActionKind, FlagReason, ModerationTarget};
use panvas_core::paper_store::archive::read_manifest;
use panvas_core::paper_store::{ContentInput, FragmentKind, LinkParent, PaperStatus, Span};
use panvas_core::prediction_market::Side;
use panvas_core::scores::ScoreInput;
use panvas_core::{Command, Platform};
use serde::de::{DeserializeOwned, IgnoredAny};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::service::Service;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

pub type Shared = Arc<RwLock<Service>>;

type ApiResult = Result<Response, ApiError>;

/// JSON body whose parse failures come back as `VALIDATION_ERROR`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        let bytes = if bytes.is_empty() { Bytes::from_static(b"{}") } else { bytes };
        serde_json::from_slice(&bytes).map(Body).map_err(|e| ApiError::bad_request(e.to_string()))
    }
}

/// Numeric path segment.
pub struct Id(pub u64);

impl<S: Send + Sync> FromRequestParts<S> for Id {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        let Path(raw) = Path::<String>::from_request_parts(parts, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        raw.parse().map(Id).map_err(|_| ApiError::new("NOT_FOUND", format!("no such id: {raw}")))
    }
}

enum Auth {
    User,
    Admin,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn lock_failed() -> ApiError {
    ApiError::new("INTERNAL", "service state is unavailable")
}

/// Runs one mutating request: authenticate, build the domain command, submit.
fn write(
    app: &Shared,
    headers: &HeaderMap,
    auth: Auth,
    build: impl FnOnce(&Platform, UserId) -> Result<Command, ApiError>,
) -> ApiResult {
    let mut svc = app.write().map_err(|_| lock_failed())?;
    if svc.is_poisoned() {
        return Err(crate::store::StoreError::Poisoned.into());
    }
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    let caller = match auth {
        Auth::User => svc.authenticate(token).ok_or_else(ApiError::unauthorized)?,
        Auth::Admin if token == svc.admin_token() => UserId(u64::MAX),
        Auth::Admin => return Err(ApiError::unauthorized()),
    };
    let command = build(svc.platform(), caller)?;
    submit(&mut svc, headers, command)
}

fn submit(svc: &mut Service, headers: &HeaderMap, command: Command) -> ApiResult {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .ok()
                .filter(|k| !k.is_empty() && k.len() <= 255)
                .ok_or_else(|| ApiError::bad_request("Idempotency-Key must be 1 to 255 visible characters"))?
                .to_string(),
        ),
        None => None,
    };
    let reply = svc.submit(command, key)?;
    let mut response = Json(reply.body).into_response();
    if reply.replayed {
        response.headers_mut().insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
    }
    Ok(response)
}

fn read(app: &Shared, view: impl FnOnce(&Service) -> Result<Value, ApiError>) -> ApiResult {
    let svc = app.read().map_err(|_| lock_failed())?;
    if svc.is_poisoned() {
        return Err(crate::store::StoreError::Poisoned.into());
    }
    Ok(Json(view(&svc)?).into_response())
}

fn caller(app: &Shared, headers: &HeaderMap) -> Result<UserId, ApiError> {
    let svc = app.read().map_err(|_| lock_failed())?;
    bearer(headers).and_then(|t| svc.authenticate(t)).ok_or_else(ApiError::unauthorized)
}

fn query_id(q: &HashMap<String, String>, name: &str) -> Result<Option<u64>, ApiError> {
    q.get(name)
        .map(|v| v.parse().map_err(|_| ApiError::bad_request(format!("{name} must be an integer"))))
        .transpose()
}

fn to_json(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("views always serialize")
}

// Views. Anything shown under a pseudonym drops the real identity.

fn user_view(p: &Platform, user: UserId) -> Result<Value, ApiError> {
    let s = p.state();
    let u = s.identity.user(user).map_err(|e| ApiError::from(panvas_core::PlatformError::from(e)))?;
    let account = p.account_of(user)?;
    let mut v = to_json(u);
    v["account"] = json!(account);
    v["balance"] = json!(s.ledger.balance(account).map_err(panvas_core::PlatformError::from)?);
    v["vip"] = json!(s.ledger.account(account).map(|a| a.vip).unwrap_or(false));
    v["license"] = to_json(s.identity.active_license(user));
    Ok(v)
}

fn comment_view(c: &panvas_core::engagement::Comment) -> Value {
    let mut v = to_json(c);
    let obj = v.as_object_mut().expect("object");
    obj.remove("author");
    if c.hidden {
        obj.insert("text".into(), Value::Null);
    }
    v
}

fn review_view(p: &Platform, r: &panvas_core::review_market::Review) -> Value {
    let hidden = p.state().moderation.status(ModerationTarget::Review(r.review_id)) == ActionKind::Hide;
    let mut v = to_json(r);
    let obj = v.as_object_mut().expect("object");
    obj.remove("reviewer");
    obj.insert("hidden".into(), json!(hidden));
    if hidden {
        obj.insert("text".into(), Value::Null);
    }
    v
}

fn bounty_view(p: &Platform, id: BountyId) -> Result<Value, ApiError> {
    let reviews = &p.state().reviews;
    let bounty = reviews.bounty(id).map_err(panvas_core::PlatformError::from)?;
    let bids: Vec<Value> = reviews
        .bids_of(id)
        .map(|b| json!({"bid_id": b.bid_id, "ask": b.ask, "placed_at": b.placed_at}))
        .collect();
    let assignments: Vec<Value> = reviews
        .assignments_of(id)
        .map(|a| json!({"assignment_id": a.assignment_id, "state": a.state, "ask": a.ask}))
        .collect();
    let mut v = to_json(bounty);
    v["bids"] = json!(bids);
    v["assignments"] = json!(assignments);
    Ok(v)
}

fn market_view(p: &Platform, id: MarketId) -> Result<Value, ApiError> {
    let markets = &p.state().markets;
    let market = markets.market(id).map_err(panvas_core::PlatformError::from)?;
    let (accept, reject) = markets.pools(id);
    let mut v = to_json(market);
    v["state"] = to_json(market.state_at(p.now()));
    v["pools"] = json!({"accept": accept, "reject": reject, "total": accept + reject});
    v["stakes"] = json!(markets.stakes_of(id).count());
    v["schedule"] = to_json(markets.schedule(id));
    Ok(v)
}

fn paper_view(p: &Platform, id: PaperId) -> Result<Value, ApiError> {
    let s = p.state();
    let paper = s.papers.paper(id).map_err(panvas_core::PlatformError::from)?;
    let document: Vec<Value> = s
        .papers
        .assemble_document(id)
        .map_err(panvas_core::PlatformError::from)?
        .into_iter()
        .map(|(f, r)| json!({"fragment_id": f.fragment_id, "kind": f.kind, "revision": r.revision, "content": r.content}))
        .collect();
    let mut v = to_json(paper);
    v["document"] = json!(document);
    v["visibility"] = json!(p.visibility(id));
    v["ratings"] = to_json(s.engagement.summarize_ratings(id));
    Ok(v)
}

fn parse_reaction_target(raw: &str) -> Result<ReactionTarget, ApiError> {
    let bad = || ApiError::bad_request(format!("reaction target must be comment-N or fragment-N, got {raw}"));
    let (kind, id) = raw.rsplit_once('-').ok_or_else(bad)?;
    let id: u64 = id.parse().map_err(|_| bad())?;
    match kind {
        "comment" => Ok(ReactionTarget::Comment(CommentId(id))),
        "fragment" => Ok(ReactionTarget::Fragment(FragmentId(id))),
        _ => Err(bad()),
    }
}

fn parse_target(raw: &str) -> Result<ModerationTarget, ApiError> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("target must be comment-N or review-N, got {raw}")))
}

// Request bodies.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewUser {
    display_name: String,
    #[serde(default)]
    expertise: Vec<String>,
    #[serde(default)]
    role: Option<Role>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewPaper {
    title: String,
    #[serde(default)]
    authors: Option<Vec<UserId>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatusChange {
    status: PaperStatus,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportArchive {
    archive: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewFragment {
    paper: PaperId,
    kind: FragmentKind,
    content: ContentInput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewRevision {
    content: ContentInput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewLink {
    parent: LinkParent,
    child: FragmentId,
    #[serde(default)]
    order_index: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewAnchor {
    fragment: FragmentId,
    revision: u32,
    #[serde(default)]
    span: Option<Span>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewBounty {
    paper: PaperId,
    reward: Credits,
    #[serde(default)]
    required_fields: Vec<String>,
    slots: u32,
    deadline: Tick,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewBid {
    bounty: BountyId,
    ask: Credits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewReview {
    assignment: AssignmentId,
    scores: ScoreInput,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMetaReview {
    review: ReviewId,
    quality: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewRating {
    paper: PaperId,
    scores: ScoreInput,
    #[serde(default)]
    incognito: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewThread {
    anchor: AnchorId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewComment {
    thread: ThreadId,
    #[serde(default)]
    parent: Option<CommentId>,
    text: String,
    #[serde(default)]
    incognito: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewReaction {
    target: ReactionTarget,
    emoji: String,
    #[serde(default)]
    incognito: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMarket {
    paper: PaperId,
    venue: String,
    close_time: Tick,
    #[serde(default)]
    fee_bps: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewStake {
    market: MarketId,
    side: Side,
    amount: Credits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewFlag {
    target: ModerationTarget,
    reason: FlagReason,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideReq {
    kind: ActionKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UnmaskReq {
    pseudonym: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TickReq {
    #[serde(default = "one")]
    ticks: Tick,
}

fn one() -> Tick {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrantReq {
    user: UserId,
    amount: Credits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LicenseReq {
    user: UserId,
    fields: Vec<String>,
    exam_score: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserReq {
    user: UserId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleReq {
    user: UserId,
    role: Role,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeratorReq {
    user: UserId,
    #[serde(default = "yes")]
    moderator: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveReq {
    outcome: Side,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SettleReq {
    #[serde(default)]
    epoch: Option<u64>,
}

pub fn router(app: Shared) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/users", post(register).get(list_users))
        .route("/users/{id}", get(get_user))
        .route("/me", get(me))
        .route("/me/assignments", get(my_assignments))
        .route("/vip", post(purchase_vip))
        .route("/papers", post(submit_paper).get(list_papers))
        .route("/papers/ranked", get(ranked_papers))
        .route("/papers/import", post(import_paper))
        .route("/papers/{id}", get(get_paper))
        .route("/papers/{id}/status", post(set_status))
        .route("/fragments", post(add_fragment))
        .route("/fragments/{id}", get(get_fragment))
        .route("/fragments/{id}/revisions", post(revise_fragment))
        .route("/links", post(link_fragment).get(list_links))
        .route("/anchors", post(create_anchor))
        .route("/anchors/{id}", get(get_anchor))
        .route("/bounties", post(post_bounty).get(list_bounties))
        .route("/bounties/{id}", get(get_bounty))
        .route("/bounties/{id}/match", post(match_reviewers))
        .route("/bounties/{id}/default-overdue", post(default_overdue))
        .route("/bids", post(place_bid))
        .route("/reviews", post(submit_review).get(list_reviews))
        .route("/reviews/{id}", get(get_review))
        .route("/meta-reviews", post(submit_meta_review))
        .route("/ratings", post(cast_rating).get(get_ratings))
        .route("/threads", post(open_thread).get(list_threads))
        .route("/threads/{id}", get(get_thread))
        .route("/comments", post(post_comment).get(list_comments))
        .route("/reactions", post(react).get(get_reactions))
        .route("/markets", post(open_market).get(list_markets))
        .route("/markets/{id}", get(get_market))
        .route("/stakes", post(place_stake))
        .route("/flags", post(flag_content))
        .route("/moderation/unmask", post(unmask))
        .route("/moderation/{target}", get(get_moderation))
        .route("/moderation/{target}/override", post(moderator_override))
        .route("/ledger/balance-sheet", get(balance_sheet))
        .route("/ledger/accounts/{id}", get(get_account))
        .route("/admin/tick", post(tick))
        .route("/admin/grants", post(grant_credits))
        .route("/admin/licenses", post(grant_license))
        .route("/admin/licenses/revoke", post(revoke_license))
        .route("/admin/roles", post(assign_role))
        .route("/admin/moderators", post(appoint_moderator))
        .route("/admin/markets/{id}/resolve", post(resolve_market))
        .route("/admin/settle-epoch", post(settle_epoch))
        .route("/admin/invariants", get(invariants))
        .fallback(|| async { ApiError::new("NOT_FOUND", "no such route") });
    Router::new().nest("/api/v1", v1).with_state(app)
}

async fn healthz(State(app): State<Shared>) -> ApiResult {
    let svc = app.read().map_err(|_| lock_failed())?;
    let p = svc.platform();
    let status = if svc.is_poisoned() { "degraded" } else { "ok" };
    Ok(Json(json!({
        "status": status,
        "sequence": p.state().events,
        "now": p.now(),
        "epoch": p.state().ledger.epoch(),
    }))
    .into_response())
}

async fn register(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewUser>) -> ApiResult {
    let mut svc = app.write().map_err(|_| lock_failed())?;
    let command = Command::RegisterUser { display_name: req.display_name, expertise: req.expertise, role: req.role };
    submit(&mut svc, &headers, command)
}

async fn list_users(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| {
        let p = svc.platform();
        let users: Result<Vec<Value>, _> = p.state().identity.users().iter().map(|u| user_view(p, u.user_id)).collect();
        Ok(json!(users?))
    })
}

async fn get_user(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| user_view(svc.platform(), UserId(id)))
}

async fn me(State(app): State<Shared>, headers: HeaderMap) -> ApiResult {
    let user = caller(&app, &headers)?;
    read(&app, |svc| user_view(svc.platform(), user))
}

async fn my_assignments(State(app): State<Shared>, headers: HeaderMap) -> ApiResult {
    let user = caller(&app, &headers)?;
    read(&app, |svc| {
        let mine: Vec<_> =
            svc.platform().state().reviews.assignments().iter().filter(|a| a.reviewer == user).collect();
        Ok(to_json(mine))
    })
}

async fn purchase_vip(State(app): State<Shared>, headers: HeaderMap, _: Body<IgnoredAny>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, user| Ok(Command::PurchaseVip { user }))
}

async fn submit_paper(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewPaper>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, user| {
        let authors = req.authors.unwrap_or_else(|| vec![user]);
        if !authors.contains(&user) {
            return Err(ApiError::forbidden("the submitting user must be one of the authors"));
        }
        Ok(Command::SubmitPaper { title: req.title, authors })
    })
}

async fn list_papers(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| Ok(to_json(svc.platform().state().papers.papers())))
}

async fn ranked_papers(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| {
        let p = svc.platform();
        let ranked: Vec<Value> = p
            .ranked_papers()
            .into_iter()
            .map(|(id, score)| {
                let title = p.state().papers.paper(id).map(|x| x.title.clone()).unwrap_or_default();
                json!({"paper_id": id, "title": title, "visibility": score})
            })
            .collect();
        Ok(json!(ranked))
    })
}

async fn import_paper(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<ImportArchive>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, user| {
        let archive = base64::engine::general_purpose::STANDARD
            .decode(req.archive.as_bytes())
            .map_err(|e| ApiError::bad_request(format!("archive is not base64: {e}")))?;
        let manifest = read_manifest(&archive).map_err(panvas_core::PlatformError::from)?;
        if !manifest.authors.contains(&user) {
            return Err(ApiError::forbidden("the importing user must be one of the archive's authors"));
        }
        Ok(Command::ImportPaper { archive })
    })
}

async fn get_paper(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| paper_view(svc.platform(), PaperId(id)))
}

async fn set_status(State(app): State<Shared>, headers: HeaderMap, Id(id): Id, Body(req): Body<StatusChange>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, by| Ok(Command::SetPaperStatus { paper: PaperId(id), by, status: req.status }))
}

async fn add_fragment(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewFragment>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, by| {
        Ok(Command::AddFragment { paper: req.paper, by, kind: req.kind, content: req.content })
    })
}

async fn get_fragment(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| {
        let f = svc.platform().state().papers.fragment(FragmentId(id)).map_err(panvas_core::PlatformError::from)?;
        Ok(to_json(f))
    })
}

async fn revise_fragment(State(app): State<Shared>, headers: HeaderMap, Id(id): Id, Body(req): Body<NewRevision>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, by| {
        Ok(Command::ReviseFragment { fragment: FragmentId(id), by, content: req.content })
    })
}

async fn link_fragment(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewLink>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, by| {
        Ok(Command::LinkFragment { parent: req.parent, child: req.child, order_index: req.order_index, by })
    })
}

async fn list_links(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let paper = query_id(&q, "paper")?.ok_or_else(|| ApiError::bad_request("paper query parameter is required"))?;
    read(&app, |svc| {
        let papers = &svc.platform().state().papers;
        papers.paper(PaperId(paper)).map_err(panvas_core::PlatformError::from)?;
        Ok(to_json(papers.links_of(PaperId(paper))))
    })
}

async fn create_anchor(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewAnchor>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, _| {
        Ok(Command::CreateAnchor { fragment: req.fragment, revision: req.revision, span: req.span })
    })
}

async fn get_anchor(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| {
        let resolved =
            svc.platform().state().papers.resolve_anchor(AnchorId(id)).map_err(panvas_core::PlatformError::from)?;
        Ok(to_json(resolved))
    })
}

async fn post_bounty(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewBounty>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, poster| {
        Ok(Command::PostBounty {
            paper: req.paper,
            poster,
            reward: req.reward,
            required_fields: req.required_fields,
            slots: req.slots,
            deadline: req.deadline,
        })
    })
}

async fn list_bounties(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let paper = query_id(&q, "paper")?;
    read(&app, |svc| {
        let p = svc.platform();
        let views: Result<Vec<Value>, _> = p
            .state()
            .reviews
            .bounties()
            .iter()
            .filter(|b| paper.is_none_or(|id| b.paper_id == PaperId(id)))
            .map(|b| bounty_view(p, b.bounty_id))
            .collect();
        Ok(json!(views?))
    })
}

async fn get_bounty(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| bounty_view(svc.platform(), BountyId(id)))
}

async fn match_reviewers(State(app): State<Shared>, headers: HeaderMap, Id(id): Id, _: Body<IgnoredAny>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, by| Ok(Command::MatchReviewers { bounty: BountyId(id), by: Some(by) }))
}

async fn default_overdue(State(app): State<Shared>, headers: HeaderMap, Id(id): Id, _: Body<IgnoredAny>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, _| Ok(Command::DefaultOverdue { bounty: BountyId(id) }))
}

async fn place_bid(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewBid>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, reviewer| {
        Ok(Command::PlaceBid { bounty: req.bounty, reviewer, ask: req.ask })
    })
}

async fn submit_review(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewReview>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, reviewer| {
        Ok(Command::SubmitReview { assignment: req.assignment, reviewer, scores: req.scores, text: req.text })
    })
}

async fn list_reviews(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let paper = query_id(&q, "paper")?;
    read(&app, |svc| {
        let p = svc.platform();
        let views: Vec<Value> = p
            .state()
            .reviews
            .reviews()
            .iter()
            .filter(|r| paper.is_none_or(|id| r.paper_id == PaperId(id)))
            .map(|r| review_view(p, r))
            .collect();
        Ok(json!(views))
    })
}

async fn get_review(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| {
        let p = svc.platform();
        let r = p.state().reviews.review(ReviewId(id)).map_err(panvas_core::PlatformError::from)?;
        Ok(review_view(p, r))
    })
}

async fn submit_meta_review(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewMetaReview>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, rater| {
        Ok(Command::SubmitMetaReview { review: req.review, rater, quality: req.quality })
    })
}

async fn cast_rating(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewRating>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, rater| {
        Ok(Command::CastRating { paper: req.paper, rater, scores: req.scores, incognito: req.incognito })
    })
}

async fn get_ratings(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let paper = query_id(&q, "paper")?.ok_or_else(|| ApiError::bad_request("paper query parameter is required"))?;
    read(&app, |svc| {
        let s = svc.platform().state();
        s.papers.paper(PaperId(paper)).map_err(panvas_core::PlatformError::from)?;
        let ballots: Vec<Value> = s
            .engagement
            .ballots()
            .iter()
            .filter(|b| b.paper_id == PaperId(paper) && !b.superseded)
            .map(|b| {
                let mut v = to_json(b);
                v.as_object_mut().expect("object").remove("rater");
                v
            })
            .collect();
        Ok(json!({"summary": s.engagement.summarize_ratings(PaperId(paper)), "ballots": ballots}))
    })
}

async fn open_thread(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewThread>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, _| Ok(Command::OpenThread { anchor: req.anchor }))
}

async fn list_threads(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let paper = query_id(&q, "paper")?;
    read(&app, |svc| {
        let threads: Vec<_> = svc
            .platform()
            .state()
            .engagement
            .threads()
            .iter()
            .filter(|t| paper.is_none_or(|id| t.paper_id == PaperId(id)))
            .collect();
        Ok(to_json(threads))
    })
}

async fn get_thread(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| {
        let e = &svc.platform().state().engagement;
        let thread = e.thread(ThreadId(id)).map_err(panvas_core::PlatformError::from)?;
        let comments: Vec<Value> = e.comments_in(ThreadId(id)).map(comment_view).collect();
        let mut v = to_json(thread);
        v["comments"] = json!(comments);
        Ok(v)
    })
}

async fn post_comment(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewComment>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, author| {
        Ok(Command::PostComment {
            thread: req.thread,
            parent: req.parent,
            author,
            text: req.text,
            incognito: req.incognito,
        })
    })
}

async fn list_comments(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let thread = query_id(&q, "thread")?.ok_or_else(|| ApiError::bad_request("thread query parameter is required"))?;
    read(&app, |svc| {
        let e = &svc.platform().state().engagement;
        e.thread(ThreadId(thread)).map_err(panvas_core::PlatformError::from)?;
        Ok(json!(e.comments_in(ThreadId(thread)).map(comment_view).collect::<Vec<_>>()))
    })
}

async fn react(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewReaction>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, reactor| {
        Ok(Command::React { target: req.target, reactor, emoji: req.emoji, incognito: req.incognito })
    })
}

async fn get_reactions(State(app): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let raw = q.get("target").ok_or_else(|| ApiError::bad_request("target query parameter is required"))?;
    let target = parse_reaction_target(raw)?;
    read(&app, |svc| Ok(json!({"target": target, "counts": svc.platform().state().engagement.reactions_on(target)})))
}

async fn open_market(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewMarket>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, _| {
        Ok(Command::OpenMarket { paper: req.paper, venue: req.venue, close_time: req.close_time, fee_bps: req.fee_bps })
    })
}

async fn list_markets(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| {
        let p = svc.platform();
        let views: Result<Vec<Value>, _> =
            p.state().markets.markets().iter().map(|m| market_view(p, m.market_id)).collect();
        Ok(json!(views?))
    })
}

async fn get_market(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| market_view(svc.platform(), MarketId(id)))
}

async fn place_stake(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewStake>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, staker| {
        Ok(Command::PlaceStake { market: req.market, staker, side: req.side, amount: req.amount })
    })
}

async fn flag_content(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<NewFlag>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, flagger| {
        Ok(Command::FlagContent { target: req.target, flagger, reason: req.reason })
    })
}

async fn get_moderation(State(app): State<Shared>, Path(raw): Path<String>) -> ApiResult {
    let target = parse_target(&raw)?;
    read(&app, |svc| {
        let p = svc.platform();
        let score = p.score_target(target)?;
        let m = &p.state().moderation;
        let flags: Vec<Value> = m
            .flags_on(target)
            .map(|f| json!({"flag_id": f.flag_id, "reason": f.reason, "flagged_at": f.flagged_at}))
            .collect();
        let actions: Vec<_> = m.actions_on(target).collect();
        Ok(json!({
            "target": target,
            "status": m.status(target),
            "overridden": m.is_overridden(target),
            "score": score,
            "flags": flags,
            "actions": actions,
        }))
    })
}

async fn moderator_override(
    State(app): State<Shared>,
    headers: HeaderMap,
    Path(raw): Path<String>,
    Body(req): Body<OverrideReq>,
) -> ApiResult {
    let target = parse_target(&raw)?;
    write(&app, &headers, Auth::User, |_, moderator| {
        Ok(Command::ModeratorOverride { target, moderator, kind: req.kind })
    })
}

async fn unmask(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<UnmaskReq>) -> ApiResult {
    write(&app, &headers, Auth::User, |_, moderator| Ok(Command::UnmaskPseudonym { pseudonym: req.pseudonym, moderator }))
}

async fn balance_sheet(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| {
        let sheet = svc.platform().state().ledger.balance_sheet();
        let conserves = sheet.conserves();
        let mut v = to_json(sheet);
        v["conserves"] = json!(conserves);
        Ok(v)
    })
}

async fn get_account(State(app): State<Shared>, Id(id): Id) -> ApiResult {
    read(&app, |svc| {
        let ledger = &svc.platform().state().ledger;
        let account = ledger.account(AccountId(id)).map_err(panvas_core::PlatformError::from)?;
        let mut v = to_json(account);
        v["counters"] = to_json(ledger.counters(AccountId(id)));
        Ok(v)
    })
}

async fn tick(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<TickReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::AdvanceClock { ticks: req.ticks }))
}

async fn grant_credits(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<GrantReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::GrantCredits { user: req.user, amount: req.amount }))
}

async fn grant_license(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<LicenseReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| {
        Ok(Command::GrantLicense { user: req.user, fields: req.fields, exam_score: req.exam_score })
    })
}

async fn revoke_license(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<UserReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::RevokeLicense { user: req.user }))
}

async fn assign_role(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<RoleReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::AssignRole { user: req.user, role: req.role }))
}

async fn appoint_moderator(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<ModeratorReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| {
        Ok(Command::AppointModerator { user: req.user, moderator: req.moderator })
    })
}

async fn resolve_market(State(app): State<Shared>, headers: HeaderMap, Id(id): Id, Body(req): Body<ResolveReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::ResolveMarket { market: MarketId(id), outcome: req.outcome }))
}

async fn settle_epoch(State(app): State<Shared>, headers: HeaderMap, Body(req): Body<SettleReq>) -> ApiResult {
    write(&app, &headers, Auth::Admin, |_, _| Ok(Command::SettleEpoch { epoch: req.epoch }))
}

async fn invariants(State(app): State<Shared>) -> ApiResult {
    read(&app, |svc| Ok(to_json(svc.platform().check_invariants())))
}
