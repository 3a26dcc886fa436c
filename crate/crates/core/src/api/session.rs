use std::collections::{HashMap, VecDeque};

use axum::http::StatusCode;
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::Value;

use crate::ids::{Timestamp, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: Timestamp,
}

/// Live sessions keyed by token.
pub struct Sessions {
    ttl_ms: u64,
    map: Mutex<HashMap<String, Session>>,
}

/// 128 random bits from the thread-local CSPRNG, hex encoded.
fn new_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl Sessions {
    pub fn new(ttl_secs: u64) -> Sessions {
        Sessions {
            ttl_ms: ttl_secs.saturating_mul(1000),
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn create(&self, user_id: UserId) -> Session {
        let now = Timestamp::now();
        let mut map = self.map.lock();
        map.retain(|_, s| s.expires_at > now);
        loop {
            let token = new_token();
            if map.contains_key(&token) {
                continue;
            }
            let session = Session {
                token: token.clone(),
                user_id,
                expires_at: Timestamp(now.0.saturating_add(self.ttl_ms)),
            };
            map.insert(token, session.clone());
            return session;
        }
    }

    /// The live session for `token`; expired sessions are dropped.
    pub fn resolve(&self, token: &str) -> Option<Session> {
        let now = Timestamp::now();
        let mut map = self.map.lock();
        match map.get(token) {
            Some(s) if s.expires_at > now => Some(s.clone()),
            Some(_) => {
                map.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn sweep(&self) {
        let now = Timestamp::now();
        self.map.lock().retain(|_, s| s.expires_at > now);
    }

    pub fn len(&self) -> usize {
        self.map.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) const IDEMPOTENCY_CAPACITY: usize = 10_000;

type CachedReply = (StatusCode, Value);

/// Replies remembered per (caller scope, idempotency key), oldest evicted
/// first.
#[derive(Default)]
pub(crate) struct IdempotencyCache {
    inner: Mutex<IdemInner>,
}

#[derive(Default)]
struct IdemInner {
    replies: HashMap<(String, String), CachedReply>,
    order: VecDeque<(String, String)>,
}

impl IdempotencyCache {
    /// Run `f` at most once per key. The lock is held while `f` runs so a
    /// concurrent retry waits for the first reply.
    pub(crate) fn run(&self, scope: String, key: String, f: impl FnOnce() -> CachedReply) -> CachedReply {
        let mut inner = self.inner.lock();
        let k = (scope, key);
        if let Some(hit) = inner.replies.get(&k) {
            return hit.clone();
        }
        let reply = f();
        if inner.order.len() >= IDEMPOTENCY_CAPACITY {
            if let Some(old) = inner.order.pop_front() {
                inner.replies.remove(&old);
            }
        }
        inner.order.push_back(k.clone());
        inner.replies.insert(k, reply.clone());
        reply
    }
}
