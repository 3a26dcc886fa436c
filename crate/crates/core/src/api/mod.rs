//! HTTP service. Every response is display-ready data; rule evaluation,
//! graph traversal and payload adaptation all happen here.
//!
//! Bodies are JSON. Errors always have the shape
//! `{"error": <code>, "message": <text>}`.

mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapt::{adapt_payload, AdaptedPayload, PayloadSource};
use crate::config::Config;
use crate::diffusion::{snowball, DiffusionReport, Notification, RecState, Recommendation, TransitionError};
use crate::ids::{DeviceId, GroupId, RecId, UserId};
use crate::profile::{DeviceProfile, GroupOrigin, GroupProfile, ScreenClass, TypeCode, UserProfile};
use crate::rules::{default_rules, match_rules, rank_candidates, RuleSet};
use crate::store::{Location, Store, StoreError};

pub use session::{Session, Sessions};
use session::IdempotencyCache;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
/// Context events considered when ranking offers.
pub const RECENT_EVENTS: usize = 50;
pub const DEFAULT_DEVICE_ID: &str = "default-tv";

/// Used when the caller has no node (and so no registered device).
pub fn default_device() -> DeviceProfile {
    DeviceProfile {
        device_id: DeviceId::new(DEFAULT_DEVICE_ID).expect("valid id"),
        screen_class: ScreenClass::Tv,
        image_support: true,
        max_list_items: 8,
        max_payload_bytes: 16 * 1024,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn unauthorized() -> ApiError {
        ApiError::new(
            StatusCode::UNAUTHORIZED,
            "invalid_session",
            "session token is missing, unknown or expired",
        )
    }

    fn invalid(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn body(&self) -> Value {
        json!({ "error": self.code, "message": self.message })
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> ApiError {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError::not_found(msg),
            StoreError::Invalid { .. } | StoreError::Graph(_) => ApiError::invalid(msg),
            StoreError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", msg),
            StoreError::Transition(_) => ApiError::new(StatusCode::CONFLICT, "wrong_state", msg),
            StoreError::Closed => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", msg),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type Reply = Result<(StatusCode, Value), ApiError>;

fn ok<T: Serialize>(status: StatusCode, body: T) -> Reply {
    Ok((status, serde_json::to_value(body).expect("response bodies serialize")))
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<StateInner>,
}

struct StateInner {
    store: Arc<Store>,
    sessions: Sessions,
    idempotency: IdempotencyCache,
    rules: RuleSet,
    snowball_on_accept: bool,
    max_hops: u32,
}

impl AppState {
    pub fn new(store: Arc<Store>, config: &Config, rules: RuleSet) -> AppState {
        AppState {
            inner: Arc::new(StateInner {
                store,
                sessions: Sessions::new(config.session_ttl_secs),
                idempotency: IdempotencyCache::default(),
                rules,
                snowball_on_accept: config.snowball_on_accept,
                max_hops: config.max_hops,
            }),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn sessions(&self) -> &Sessions {
        &self.inner.sessions
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<Session, ApiError> {
        let token = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        self.inner
            .sessions
            .resolve(token.trim())
            .ok_or_else(ApiError::unauthorized)
    }

    /// Run a state-changing handler, replaying the stored reply when the
    /// request carries an idempotency key already seen in this scope.
    fn idempotent(&self, headers: &HeaderMap, scope: String, f: impl FnOnce() -> Reply) -> Response {
        let key = headers
            .get(IDEMPOTENCY_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let run = || match f() {
            Ok(reply) => reply,
            Err(e) => (e.status, e.body()),
        };
        let (status, body) = match key {
            Some(key) => self.inner.idempotency.run(scope, key, run),
            None => run(),
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(login))
        .route("/friends", get(friends))
        .route("/groups", get(groups))
        .route("/users", get(search_users))
        .route("/groups/search", get(search_groups))
        .route("/recommendations", post(send).get(list))
        .route("/recommendations/{id}", get(view))
        .route("/recommendations/{id}/response", post(respond))
        .route("/notifications", get(notifications))
        .with_state(state)
}

/// Open the configured store and serve until ctrl-c.
pub async fn serve(config: Config) -> anyhow::Result<()> {
    serve_with(config, |_| {}).await
}

/// As [`serve`], calling `on_ready` with the bound address before accepting
/// connections.
pub async fn serve_with(config: Config, on_ready: impl FnOnce(SocketAddr)) -> anyhow::Result<()> {
    let store = match &config.store_path {
        Some(p) => Store::open(Location::File(p.clone()))?,
        None => Store::in_memory(),
    };
    let rules = match &config.rules_path {
        Some(p) => RuleSet::parse(&std::fs::read_to_string(p)?)?,
        None => default_rules(),
    };
    let store = Arc::new(store);
    let state = AppState::new(store.clone(), &config, rules);
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    on_ready(addr);

    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                state.sessions().sweep();
            }
        })
    };
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    sweeper.abort();
    store.close()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct UserSummary {
    pub user_id: UserId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_ref: Option<String>,
}

impl From<&UserProfile> for UserSummary {
    fn from(u: &UserProfile) -> Self {
        UserSummary {
            user_id: u.user_id.clone(),
            name: u.name.clone(),
            photo_ref: u.photo_ref.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GroupSummary {
    pub group_id: GroupId,
    pub topic: String,
    pub origin: GroupOrigin,
    pub member_count: usize,
}

impl From<&GroupProfile> for GroupSummary {
    fn from(g: &GroupProfile) -> Self {
        GroupSummary {
            group_id: g.group_id.clone(),
            topic: g.topic.clone(),
            origin: g.origin,
            member_count: g.member_ids.len(),
        }
    }
}

/// A recommendation with its type label resolved.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RecView {
    #[serde(flatten)]
    pub recommendation: Recommendation,
    pub type_label: String,
}

impl From<Recommendation> for RecView {
    fn from(r: Recommendation) -> Self {
        RecView {
            type_label: r.type_code.label().to_owned(),
            recommendation: r,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct NotificationView {
    #[serde(flatten)]
    pub notification: Notification,
    pub title: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LoginReply {
    pub token: String,
    pub expires_at: crate::ids::Timestamp,
    pub user: UserProfile,
    #[serde(default)]
    pub photo_ref: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ResponseReply {
    pub recommendation: RecView,
    #[serde(default)]
    pub diffusion: Option<DiffusionReport>,
}

#[derive(Deserialize)]
struct LoginBody {
    user: String,
    secret: String,
}

fn secrets_equal(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn login(State(st): State<AppState>, headers: HeaderMap, body: Result<Json<LoginBody>, JsonRejection>) -> Response {
    let scope = format!("anonymous {} /session", Method::POST);
    st.clone().idempotent(&headers, scope, move || {
        let Json(body) = body?;
        let bad = || ApiError::new(StatusCode::UNAUTHORIZED, "bad_credentials", "unknown user or wrong secret");
        let user_id = UserId::new(body.user).map_err(|_| bad())?;
        let profile = {
            let data = st.store().read()?;
            let known = data.credential(&user_id).is_some_and(|s| secrets_equal(s, &body.secret));
            if !known {
                return Err(bad());
            }
            data.user(&user_id).cloned().ok_or_else(bad)?
        };
        let session = st.sessions().create(user_id);
        ok(
            StatusCode::OK,
            LoginReply {
                token: session.token,
                expires_at: session.expires_at,
                photo_ref: profile.photo_ref.clone(),
                user: profile,
            },
        )
    })
}

fn respond_plain(reply: Reply) -> Response {
    match reply {
        Ok((status, body)) => (status, Json(body)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn friends(State(st): State<AppState>, headers: HeaderMap) -> Response {
    respond_plain((|| {
        let s = st.authenticate(&headers)?;
        let data = st.store().read()?;
        let out: Vec<UserSummary> = data
            .graph()
            .friend_users(&s.user_id)
            .iter()
            .filter_map(|u| data.user(u))
            .map(UserSummary::from)
            .collect();
        ok(StatusCode::OK, out)
    })())
}

async fn groups(State(st): State<AppState>, headers: HeaderMap) -> Response {
    respond_plain((|| {
        let s = st.authenticate(&headers)?;
        let data = st.store().read()?;
        let out: Vec<GroupSummary> = match data.graph().node_of_user(&s.user_id) {
            Some(node) => data
                .graph()
                .groups_of(&node.node_id)
                .iter()
                .filter_map(|g| data.group(g))
                .map(GroupSummary::from)
                .collect(),
            None => Vec::new(),
        };
        ok(StatusCode::OK, out)
    })())
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn search_users(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<SearchQuery>) -> Response {
    respond_plain((|| {
        st.authenticate(&headers)?;
        let data = st.store().read()?;
        let out: Vec<UserSummary> = data.search_users(&q.q).into_iter().map(UserSummary::from).collect();
        ok(StatusCode::OK, out)
    })())
}

async fn search_groups(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<SearchQuery>) -> Response {
    respond_plain((|| {
        st.authenticate(&headers)?;
        let data = st.store().read()?;
        let out: Vec<GroupSummary> = data.search_groups(&q.q).into_iter().map(GroupSummary::from).collect();
        ok(StatusCode::OK, out)
    })())
}

#[derive(Deserialize)]
struct SendBody {
    to: String,
    type_code: i64,
    title: String,
    #[serde(default)]
    content: String,
}

async fn send(State(st): State<AppState>, headers: HeaderMap, body: Result<Json<SendBody>, JsonRejection>) -> Response {
    let session = match st.authenticate(&headers) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let scope = format!("{} POST /recommendations", session.user_id);
    st.clone().idempotent(&headers, scope, move || {
        let Json(body) = body?;
        let type_code = TypeCode::new(body.type_code).map_err(|e| ApiError::invalid(e.to_string()))?;
        if body.title.trim().is_empty() {
            return Err(ApiError::invalid("title must not be empty"));
        }
        let to = UserId::new(body.to).map_err(|e| ApiError::invalid(e.to_string()))?;
        {
            let data = st.store().read()?;
            if data.user(&to).is_none() {
                return Err(ApiError::not_found(format!("user `{to}` not found")));
            }
            if !data.graph().friend_users(&session.user_id).contains(&to) {
                return Err(ApiError::new(
                    StatusCode::FORBIDDEN,
                    "not_a_friend",
                    format!("user `{to}` is not a friend of `{}`", session.user_id),
                ));
            }
        }
        let (rec, _) = st
            .store()
            .send_recommendation(&session.user_id, &to, type_code, body.title, body.content)?;
        ok(StatusCode::CREATED, RecView::from(rec))
    })
}

/// One entry of the list before adaptation: an incoming recommendation or
/// an offer derived from the caller's profile.
struct ListItem {
    rec_id: RecId,
    title: String,
    content: String,
}

impl PayloadSource for ListItem {
    fn rec_id(&self) -> &RecId {
        &self.rec_id
    }
    fn title(&self) -> &str {
        &self.title
    }
    fn content(&self) -> &str {
        &self.content
    }
    fn has_image(&self) -> bool {
        true
    }
}

pub const OFFER_PREFIX: &str = "offer.";

/// Incoming open recommendations (by id), then ranked offers, adapted to
/// the caller's device. Sent recommendations that made it into the payload
/// become Delivered.
fn build_list(st: &AppState, user: &UserId) -> Result<AdaptedPayload, ApiError> {
    let (items, device, sent) = {
        let data = st.store().read()?;
        let profile = data
            .user(user)
            .ok_or_else(|| ApiError::not_found(format!("user `{user}` not found")))?;
        let mut items = Vec::new();
        let mut sent = Vec::new();
        for r in data.recommendations() {
            let open = matches!(r.state, RecState::Sent | RecState::Delivered | RecState::Viewed);
            if &r.recipient_id == user && !r.orphaned && open {
                if r.state == RecState::Sent {
                    sent.push(r.rec_id.clone());
                }
                items.push(ListItem {
                    rec_id: r.rec_id.clone(),
                    title: r.title.clone(),
                    content: r.content.clone(),
                });
            }
        }
        let events: Vec<_> = data.events_of(user).cloned().collect();
        let recent = &events[events.len().saturating_sub(RECENT_EVENTS)..];
        for code in rank_candidates(&match_rules(profile, &st.inner.rules), recent) {
            items.push(ListItem {
                rec_id: RecId::new(format!("{OFFER_PREFIX}{}", code.get())).expect("valid id"),
                title: code.label().to_owned(),
                content: code.label().to_owned(),
            });
        }
        let device = data
            .graph()
            .node_of_user(user)
            .and_then(|n| data.device(&n.device_id))
            .cloned()
            .unwrap_or_else(default_device);
        (items, device, sent)
    };
    let payload = adapt_payload(&items, &device);
    for item in &payload.items {
        if sent.contains(&item.rec_id) {
            match st.store().transition(&item.rec_id, RecState::Delivered) {
                // a concurrent request got there first
                Ok(_) | Err(StoreError::Transition(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(payload)
}

async fn list(State(st): State<AppState>, headers: HeaderMap) -> Response {
    let session = match st.authenticate(&headers) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let scope = format!("{} GET /recommendations", session.user_id);
    st.clone().idempotent(&headers, scope, move || {
        ok(StatusCode::OK, build_list(&st, &session.user_id)?)
    })
}

fn owned_rec(st: &AppState, user: &UserId, raw: &str) -> Result<Recommendation, ApiError> {
    let missing = || ApiError::not_found(format!("recommendation `{raw}` not found"));
    let id = RecId::new(raw).map_err(|_| missing())?;
    let rec = st.store().read()?.recommendation(&id).cloned().ok_or_else(missing)?;
    if &rec.recipient_id != user {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "not_recipient",
            format!("recommendation `{id}` is addressed to another user"),
        ));
    }
    Ok(rec)
}

async fn view(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let session = match st.authenticate(&headers) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let scope = format!("{} GET /recommendations/{id}", session.user_id);
    st.clone().idempotent(&headers, scope, move || {
        let mut rec = owned_rec(&st, &session.user_id, &id)?;
        if !rec.orphaned {
            // Viewing something never listed delivers it first.
            let steps: &[RecState] = match rec.state {
                RecState::Sent => &[RecState::Delivered, RecState::Viewed],
                RecState::Delivered => &[RecState::Viewed],
                _ => &[],
            };
            for &to in steps {
                match st.store().transition(&rec.rec_id, to) {
                    Ok((next, _)) => rec = next,
                    Err(StoreError::Transition(TransitionError::Illegal { .. })) => {
                        rec = owned_rec(&st, &session.user_id, &id)?;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        ok(StatusCode::OK, RecView::from(rec))
    })
}

#[derive(Deserialize)]
struct RespondBody {
    accept: bool,
}

async fn respond(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<RespondBody>, JsonRejection>,
) -> Response {
    let session = match st.authenticate(&headers) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let scope = format!("{} POST /recommendations/{id}/response", session.user_id);
    st.clone().idempotent(&headers, scope, move || {
        let Json(body) = body?;
        let rec = owned_rec(&st, &session.user_id, &id)?;
        let to = if body.accept { RecState::Accepted } else { RecState::Rejected };
        let (rec, _) = st.store().transition(&rec.rec_id, to)?;
        let diffusion = if body.accept && st.inner.snowball_on_accept {
            run_snowball(&st, &rec)?
        } else {
            None
        };
        ok(
            StatusCode::OK,
            ResponseReply {
                recommendation: rec.into(),
                diffusion,
            },
        )
    })
}

/// Forward an accepted recommendation through the friendship graph and
/// persist the children. `None` if the recipient has no node.
fn run_snowball(st: &AppState, rec: &Recommendation) -> Result<Option<DiffusionReport>, ApiError> {
    let diffusion = {
        let data = st.store().read()?;
        if data.graph().node_of_user(&rec.recipient_id).is_none() {
            return Ok(None);
        }
        let mut n = 0u64;
        snowball(data.graph(), rec, st.inner.max_hops, &st.inner.rules, &*data, |_, _| {
            n += 1;
            RecId::new(format!("pending{n}")).expect("valid id")
        })
        .map_err(|e| ApiError::not_found(e.to_string()))?
    };
    st.store().insert_children(diffusion.children)?;
    Ok(Some(diffusion.report))
}

async fn notifications(State(st): State<AppState>, headers: HeaderMap) -> Response {
    respond_plain((|| {
        let s = st.authenticate(&headers)?;
        let data = st.store().read()?;
        let out: Vec<NotificationView> = data
            .notifications_for(&s.user_id)
            .map(|n| NotificationView {
                title: data
                    .recommendation(&n.rec_id)
                    .map(|r| r.title.clone())
                    .unwrap_or_default(),
                notification: n.clone(),
            })
            .collect();
        ok(StatusCode::OK, out)
    })())
}
