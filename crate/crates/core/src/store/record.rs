//! Canonical line records shared by the store log, seed files and exports.
//!
//! Every record is one JSON object per line, tagged by `record`. Field order
//! is irrelevant when reading; writers emit struct field order.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Notification, Recommendation};
use crate::graph::{Arc, ArcKind, Node};
use crate::ids::{DeviceId, GroupId, NodeId, RecId, ServiceId, UserId};
use crate::profile::{ContextEvent, DeviceProfile, GroupProfile, ServiceRecord, UserProfile};

pub const STORE_FORMAT: &str = "socialtv-store";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub user_id: UserId,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    User(UserProfile),
    Credential(Credential),
    Device(DeviceProfile),
    Service(ServiceRecord),
    Group(GroupProfile),
    Node(Node),
    Arc(Arc),
    Recommendation(Recommendation),
    Notification(Notification),
    Event(ContextEvent),
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Record, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Parse a seed/export file: one record per non-blank line; `#` comments.
pub fn parse_records(text: &str) -> Result<Vec<Record>, (usize, String)> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(Record::from_line(line).map_err(|e| (idx + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn records_to_text(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entity", rename_all = "snake_case")]
pub enum EntityRef {
    User { id: UserId },
    Device { id: DeviceId },
    Service { id: ServiceId },
    Group { id: GroupId },
    Node { id: NodeId },
    Arc { kind: ArcKind, a: NodeId, b: String },
    Recommendation { id: RecId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEntry {
    Put { record: Record },
    Delete { target: EntityRef },
    Batch { entries: Vec<LogEntry> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub schema_version: u32,
}

impl Header {
    pub fn current() -> Header {
        Header {
            format: STORE_FORMAT.to_owned(),
            schema_version: SCHEMA_VERSION,
        }
    }
}
