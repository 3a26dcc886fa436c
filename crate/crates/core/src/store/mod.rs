//! Persistence and the single point of mutation for every entity.
//!
//! A store is either in-memory or backed by one file. The file starts with a
//! header line, followed by one JSON log entry per committed operation.
//! Every `snapshot_every` commits the file is rewritten as a compact
//! snapshot (header plus one `put` per live entity). A trailing line without
//! a newline is a torn write and is discarded on open.
//!
//! Readers share a consistent view behind a read lock; writers are
//! serialized by the write lock.

mod dataset;
pub mod record;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::{MappedRwLockReadGuard, RwLock, RwLockReadGuard};
use thiserror::Error;

use crate::diffusion::{transition, Notification, RecState, Recommendation, TransitionError};
use crate::graph::{Arc, ArcKind, Endpoint, GraphError, Node};
use crate::ids::{DeviceId, GroupId, NodeId, NotificationId, RecId, ServiceId, Timestamp, UserId};
use crate::profile::{
    validate_device, validate_group, validate_profile, ContextEvent, DeviceProfile, GroupProfile,
    ServiceRecord, TypeCode, UserProfile,
};

pub use dataset::{Dataset, IntegrityIssue};
pub use record::{Credential, EntityRef, Header, LogEntry, Record};

pub const DEFAULT_SNAPSHOT_EVERY: usize = 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store handle is closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported store header: {0}")]
    Header(String),
    #[error("dataset failed integrity check: {}", join_issues(.0))]
    Corrupt(Vec<IntegrityIssue>),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid {entity}: {reason}")]
    Invalid { entity: String, reason: String },
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

fn join_issues(issues: &[IntegrityIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn invalid(entity: impl Into<String>, reason: impl ToString) -> StoreError {
    StoreError::Invalid {
        entity: entity.into(),
        reason: reason.to_string(),
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub snapshot_every: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

struct LogFile {
    path: PathBuf,
    writer: BufWriter<File>,
    since_snapshot: usize,
}

struct Inner {
    data: Dataset,
    log: Option<LogFile>,
    next_rec: u64,
    next_notif: u64,
}

pub struct Store {
    inner: RwLock<Inner>,
    closed: AtomicBool,
    options: StoreOptions,
}

/// Where a store lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    InMemory,
    File(PathBuf),
}

impl Store {
    pub fn in_memory() -> Store {
        Store::from_parts(Dataset::default(), None, StoreOptions::default())
    }

    pub fn open(location: Location) -> Result<Store> {
        Store::open_with(location, StoreOptions::default())
    }

    pub fn open_path(path: impl AsRef<Path>) -> Result<Store> {
        Store::open(Location::File(path.as_ref().to_path_buf()))
    }

    /// Open or create a store. Existing datasets are replayed and must pass
    /// the full integrity scan.
    pub fn open_with(location: Location, options: StoreOptions) -> Result<Store> {
        let path = match location {
            Location::InMemory => return Ok(Store::from_parts(Dataset::default(), None, options)),
            Location::File(path) => path,
        };
        if !path.exists() {
            write_snapshot(&path, &Dataset::default())?;
        }
        let (data, good_len, entries) = replay(&path)?;
        let issues = data.validate();
        if !issues.is_empty() {
            return Err(StoreError::Corrupt(issues));
        }
        let file = OpenOptions::new().write(true).open(&path)?;
        // drop a torn trailing line so new entries start on a fresh line
        file.set_len(good_len)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(&path)?;
        let log = LogFile {
            path,
            writer: BufWriter::new(file),
            since_snapshot: entries,
        };
        Ok(Store::from_parts(data, Some(log), options))
    }

    fn from_parts(data: Dataset, log: Option<LogFile>, options: StoreOptions) -> Store {
        let next_rec = data.recs.len() as u64 + 1;
        let next_notif = data.notifications.len() as u64 + 1;
        Store {
            inner: RwLock::new(Inner {
                data,
                log,
                next_rec,
                next_notif,
            }),
            closed: AtomicBool::new(false),
            options,
        }
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.inner.read().log.as_ref().map(|l| l.path.clone())
    }

    fn check_open(&self) -> Result<()> {
        if self.closed.load(Ordering::Acquire) {
            Err(StoreError::Closed)
        } else {
            Ok(())
        }
    }

    /// Flush and release the file. Every later call fails with `Closed`.
    pub fn close(&self) -> Result<()> {
        if self.closed.swap(true, Ordering::AcqRel) {
            return Ok(());
        }
        let mut inner = self.inner.write();
        if let Some(log) = inner.log.as_mut() {
            log.writer.flush()?;
            log.writer.get_ref().sync_data()?;
        }
        inner.log = None;
        Ok(())
    }

    /// A consistent read-only view.
    pub fn read(&self) -> Result<MappedRwLockReadGuard<'_, Dataset>> {
        self.check_open()?;
        Ok(RwLockReadGuard::map(self.inner.read(), |i| &i.data))
    }

    /// Owned copy of the whole dataset, for long-running jobs.
    pub fn snapshot(&self) -> Result<Dataset> {
        Ok(self.read()?.clone())
    }

    /// Store clock: never goes backwards, follows wall time.
    fn now(data: &Dataset) -> Timestamp {
        data.clock.max(Timestamp::now())
    }

    fn commit(&self, inner: &mut Inner, entries: Vec<LogEntry>) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let entry = if entries.len() == 1 {
            entries.into_iter().next().expect("one entry")
        } else {
            LogEntry::Batch { entries }
        };
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("log entries serialize");
            line.push('\n');
            log.writer.write_all(line.as_bytes())?;
            log.writer.flush()?;
            log.since_snapshot += 1;
        }
        inner.data.apply(entry);
        let due = inner
            .log
            .as_ref()
            .is_some_and(|l| l.since_snapshot >= self.options.snapshot_every);
        if due {
            compact_locked(inner)?;
        }
        Ok(())
    }

    /// Rewrite the backing file as a snapshot of the current state.
    pub fn compact(&self) -> Result<()> {
        self.check_open()?;
        let mut inner = self.inner.write();
        compact_locked(&mut inner)
    }

    fn write<T>(&self, f: impl FnOnce(&mut Inner) -> Result<(Vec<LogEntry>, T)>) -> Result<T> {
        self.check_open()?;
        let mut inner = self.inner.write();
        let (entries, out) = f(&mut inner)?;
        self.commit(&mut inner, entries)?;
        Ok(out)
    }

    pub fn put_user(&self, user: UserProfile) -> Result<()> {
        validate_profile(&user).map_err(|errs| {
            invalid(
                format!("user `{}`", user.user_id),
                errs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            )
        })?;
        self.write(|_| Ok((vec![put(Record::User(user))], ())))
    }

    pub fn put_credential(&self, user_id: UserId, secret: impl Into<String>) -> Result<()> {
        let secret = secret.into();
        self.write(|inner| {
            if inner.data.user(&user_id).is_none() {
                return Err(StoreError::NotFound(format!("user `{user_id}`")));
            }
            Ok((vec![put(Record::Credential(Credential { user_id, secret }))], ()))
        })
    }

    pub fn put_device(&self, device: DeviceProfile) -> Result<()> {
        validate_device(&device).map_err(|errs| {
            invalid(
                format!("device `{}`", device.device_id),
                errs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            )
        })?;
        self.write(|_| Ok((vec![put(Record::Device(device))], ())))
    }

    pub fn put_service(&self, service: ServiceRecord) -> Result<()> {
        self.write(|_| Ok((vec![put(Record::Service(service))], ())))
    }

    /// Nodes are immutable once created; re-putting an identical node is a
    /// no-op.
    pub fn put_node(&self, node: Node) -> Result<()> {
        self.write(|inner| {
            let data = &inner.data;
            if let Some(existing) = data.graph.node(&node.node_id) {
                if existing == &node {
                    return Ok((Vec::new(), ()));
                }
                return Err(GraphError::DuplicateNode(node.node_id).into());
            }
            if let Some(existing) = data.graph.node_of_user(&node.user_id) {
                return Err(GraphError::UserHasNode {
                    user: node.user_id,
                    existing: existing.node_id.clone(),
                }
                .into());
            }
            if data.user(&node.user_id).is_none() {
                return Err(StoreError::NotFound(format!("user `{}`", node.user_id)));
            }
            if data.device(&node.device_id).is_none() {
                return Err(StoreError::NotFound(format!("device `{}`", node.device_id)));
            }
            Ok((vec![put(Record::Node(node))], ()))
        })
    }

    /// Create or replace a group. Members with a node get a user–group arc;
    /// members dropped by a replacement lose theirs. The origin of an
    /// existing group cannot change.
    pub fn put_group(&self, group: GroupProfile) -> Result<()> {
        validate_group(&group).map_err(|e| invalid(format!("group `{}`", group.group_id), e))?;
        self.write(|inner| {
            let data = &inner.data;
            for m in &group.member_ids {
                if data.user(m).is_none() {
                    return Err(StoreError::NotFound(format!("user `{m}`")));
                }
            }
            let mut entries = Vec::new();
            if let Some(existing) = data.group(&group.group_id) {
                if existing.origin != group.origin {
                    return Err(StoreError::Conflict(format!(
                        "group `{}` origin cannot change",
                        group.group_id
                    )));
                }
                for gone in existing.member_ids.difference(&group.member_ids) {
                    if let Some(node) = data.graph.node_of_user(gone) {
                        entries.push(LogEntry::Delete {
                            target: EntityRef::Arc {
                                kind: ArcKind::UserGroup,
                                a: node.node_id.clone(),
                                b: group.group_id.to_string(),
                            },
                        });
                    }
                }
            }
            let at = Store::now(data);
            let target = Endpoint::Group(group.group_id.clone());
            let mut arcs = Vec::new();
            for m in &group.member_ids {
                if let Some(node) = data.graph.node_of_user(m) {
                    if !data.arc_exists(ArcKind::UserGroup, &node.node_id, &target) {
                        arcs.push(put(Record::Arc(Arc::new(
                            ArcKind::UserGroup,
                            node.node_id.clone(),
                            target.clone(),
                            at,
                        ))));
                    }
                }
            }
            entries.push(put(Record::Group(group)));
            entries.extend(arcs);
            Ok((entries, ()))
        })
    }

    /// Record an interaction arc. Returns `false` if it already existed.
    /// A user–group arc also makes the node's user a member of the group.
    pub fn add_interaction(&self, kind: ArcKind, a: NodeId, b: Endpoint) -> Result<bool> {
        self.write(|inner| {
            let data = &inner.data;
            let at = Store::now(data);
            let arc = Arc::new(kind, a, b, at);
            let mut probe = data.graph.clone();
            if !probe.insert_arc(arc.clone())? {
                return Ok((Vec::new(), false));
            }
            let mut entries = vec![put(Record::Arc(arc.clone()))];
            if let Endpoint::Group(gid) = &arc.key.b {
                let user = data
                    .graph
                    .node(&arc.key.a)
                    .map(|n| n.user_id.clone())
                    .expect("endpoint checked");
                let mut group = data.group(gid).cloned().expect("group registered");
                if group.member_ids.insert(user) {
                    entries.insert(0, put(Record::Group(group)));
                }
            }
            Ok((entries, true))
        })
    }

    /// Remove an interaction arc. Removing a user–group arc also removes the
    /// membership; the last member of a user-created group cannot leave.
    pub fn remove_interaction(&self, kind: ArcKind, a: NodeId, b: Endpoint) -> Result<bool> {
        self.write(|inner| {
            let data = &inner.data;
            if !data.arc_exists(kind, &a, &b) {
                return Ok((Vec::new(), false));
            }
            let mut entries = vec![LogEntry::Delete {
                target: EntityRef::Arc {
                    kind,
                    a: a.clone(),
                    b: b.as_str().to_owned(),
                },
            }];
            if let Endpoint::Group(gid) = &b {
                if let (Some(node), Some(group)) = (data.graph.node(&a), data.group(gid)) {
                    let mut group = group.clone();
                    group.member_ids.remove(&node.user_id);
                    validate_group(&group).map_err(|e| StoreError::Conflict(e.to_string()))?;
                    entries.push(put(Record::Group(group)));
                }
            }
            Ok((entries, true))
        })
    }

    /// Delete a user with cascade: arcs and node removed, memberships
    /// dropped, recommendations kept but orphaned.
    pub fn delete_user(&self, id: &UserId) -> Result<()> {
        self.write(|inner| {
            if inner.data.user(id).is_none() {
                return Err(StoreError::NotFound(format!("user `{id}`")));
            }
            Ok((vec![LogEntry::Delete { target: EntityRef::User { id: id.clone() } }], ()))
        })
    }

    pub fn delete_device(&self, id: &DeviceId) -> Result<()> {
        self.write(|inner| {
            let data = &inner.data;
            if data.device(id).is_none() {
                return Err(StoreError::NotFound(format!("device `{id}`")));
            }
            if let Some(node) = data.graph.nodes().find(|n| &n.device_id == id) {
                return Err(StoreError::Conflict(format!(
                    "device `{id}` is used by node `{}`",
                    node.node_id
                )));
            }
            Ok((vec![LogEntry::Delete { target: EntityRef::Device { id: id.clone() } }], ()))
        })
    }

    pub fn delete_group(&self, id: &GroupId) -> Result<()> {
        self.write(|inner| {
            if inner.data.group(id).is_none() {
                return Err(StoreError::NotFound(format!("group `{id}`")));
            }
            Ok((vec![LogEntry::Delete { target: EntityRef::Group { id: id.clone() } }], ()))
        })
    }

    pub fn delete_service(&self, id: &ServiceId) -> Result<()> {
        self.write(|inner| {
            if inner.data.service(id).is_none() {
                return Err(StoreError::NotFound(format!("service `{id}`")));
            }
            Ok((vec![LogEntry::Delete { target: EntityRef::Service { id: id.clone() } }], ()))
        })
    }

    fn fresh_rec_id(inner: &mut Inner) -> RecId {
        loop {
            let id = RecId::new(format!("r{:08}", inner.next_rec)).expect("valid id");
            inner.next_rec += 1;
            if inner.data.recommendation(&id).is_none() {
                return id;
            }
        }
    }

    /// The next unused notification id, without consuming it.
    fn peek_notif_id(inner: &mut Inner) -> NotificationId {
        loop {
            let id = NotificationId::new(format!("nt{:08}", inner.next_notif)).expect("valid id");
            if !inner.data.notifications.iter().any(|n| n.notif_id == id) {
                return id;
            }
            inner.next_notif += 1;
        }
    }

    fn fresh_notif_id(inner: &mut Inner) -> NotificationId {
        let id = Store::peek_notif_id(inner);
        inner.next_notif += 1;
        id
    }

    /// Create a recommendation and send it in one commit: the record is
    /// born `Created`, moves to `Sent`, and the sender gets a notification.
    pub fn send_recommendation(
        &self,
        sender: &UserId,
        recipient: &UserId,
        type_code: TypeCode,
        title: String,
        content: String,
    ) -> Result<(Recommendation, Notification)> {
        self.write(|inner| {
            for u in [sender, recipient] {
                if inner.data.user(u).is_none() {
                    return Err(StoreError::NotFound(format!("user `{u}`")));
                }
            }
            let draft = Recommendation {
                rec_id: Store::fresh_rec_id(inner),
                type_code,
                title,
                content,
                sender_id: sender.clone(),
                recipient_id: recipient.clone(),
                state: RecState::Created,
                hop: 0,
                parent_rec_id: None,
                orphaned: false,
            };
            let at = Store::now(&inner.data);
            let notif_id = Store::fresh_notif_id(inner);
            let (sent, notification) = transition(&draft, RecState::Sent, at, notif_id)?;
            Ok((
                vec![
                    put(Record::Recommendation(sent.clone())),
                    put(Record::Notification(notification.clone())),
                ],
                (sent, notification),
            ))
        })
    }

    /// Atomically move a recommendation to `to` and record the notification.
    pub fn transition(&self, id: &RecId, to: RecState) -> Result<(Recommendation, Notification)> {
        self.write(|inner| {
            let rec = inner
                .data
                .recommendation(id)
                .cloned()
                .ok_or_else(|| StoreError::NotFound(format!("recommendation `{id}`")))?;
            let at = Store::now(&inner.data);
            let notif_id = Store::peek_notif_id(inner);
            let (next, notification) = transition(&rec, to, at, notif_id)?;
            inner.next_notif += 1;
            Ok((
                vec![
                    put(Record::Recommendation(next.clone())),
                    put(Record::Notification(notification.clone())),
                ],
                (next, notification),
            ))
        })
    }

    /// Persist snowball children. Ids are assigned here; parents must exist.
    pub fn insert_children(&self, mut children: Vec<Recommendation>) -> Result<Vec<Recommendation>> {
        self.write(|inner| {
            let mut renamed = std::collections::BTreeMap::new();
            for child in &mut children {
                let fresh = Store::fresh_rec_id(inner);
                renamed.insert(child.rec_id.clone(), fresh.clone());
                child.rec_id = fresh;
            }
            for child in &mut children {
                if let Some(parent) = child.parent_rec_id.as_mut() {
                    if let Some(new) = renamed.get(parent) {
                        *parent = new.clone();
                    }
                }
            }
            for child in &children {
                for u in [&child.sender_id, &child.recipient_id] {
                    if inner.data.user(u).is_none() {
                        return Err(StoreError::NotFound(format!("user `{u}`")));
                    }
                }
                if let Some(parent) = &child.parent_rec_id {
                    let known = inner.data.recommendation(parent).is_some()
                        || children.iter().any(|c| &c.rec_id == parent);
                    if !known {
                        return Err(StoreError::NotFound(format!("recommendation `{parent}`")));
                    }
                }
            }
            let entries = children.iter().cloned().map(|c| put(Record::Recommendation(c))).collect();
            Ok((entries, children))
        })
    }

    /// Append a context event; timestamps must not go backwards per user.
    pub fn record_event(&self, event: ContextEvent) -> Result<()> {
        self.write(|inner| {
            let data = &inner.data;
            if data.user(&event.user_id).is_none() {
                return Err(StoreError::NotFound(format!("user `{}`", event.user_id)));
            }
            if let Some(last) = data.events_of(&event.user_id).map(|e| e.timestamp).max() {
                if event.timestamp < last {
                    return Err(invalid(
                        format!("event for user `{}`", event.user_id),
                        format!("timestamp {} precedes {}", event.timestamp, last),
                    ));
                }
            }
            Ok((vec![put(Record::Event(event))], ()))
        })
    }

    /// Import records as one commit. The result must pass the full
    /// integrity scan or nothing is written.
    pub fn import(&self, records: Vec<Record>) -> Result<usize> {
        self.write(|inner| {
            for r in &records {
                if let Record::User(u) = r {
                    validate_profile(u).map_err(|errs| {
                        invalid(
                            format!("user `{}`", u.user_id),
                            errs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
                        )
                    })?;
                }
            }
            let count = records.len();
            let entries: Vec<LogEntry> = records.into_iter().map(put).collect();
            let mut probe = inner.data.clone();
            probe.apply(LogEntry::Batch { entries: entries.clone() });
            let issues = probe.validate();
            if !issues.is_empty() {
                return Err(StoreError::Corrupt(issues));
            }
            Ok((entries, count))
        })
    }

    pub fn export(&self) -> Result<Vec<Record>> {
        Ok(self.read()?.to_records())
    }

    pub fn validate(&self) -> Result<Vec<IntegrityIssue>> {
        Ok(self.read()?.validate())
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if let Some(log) = self.inner.get_mut().log.as_mut() {
            let _ = log.writer.flush();
        }
    }
}

fn put(record: Record) -> LogEntry {
    LogEntry::Put { record }
}

fn compact_locked(inner: &mut Inner) -> Result<()> {
    let Some(log) = inner.log.as_mut() else {
        return Ok(());
    };
    log.writer.flush()?;
    write_snapshot(&log.path, &inner.data)?;
    let file = OpenOptions::new().append(true).open(&log.path)?;
    log.writer = BufWriter::new(file);
    log.since_snapshot = 0;
    Ok(())
}

/// Atomically replace `path` with a snapshot of `data`.
fn write_snapshot(path: &Path, data: &Dataset) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, &Header::current()).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
        for record in data.to_records() {
            serde_json::to_writer(&mut w, &put(record)).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Replay a store file. Returns the dataset, the byte length of the intact
/// prefix, and the number of log entries read.
fn replay(path: &Path) -> Result<(Dataset, u64, usize)> {
    let text = fs::read_to_string(path)?;
    let mut data = Dataset::default();
    let mut offset = 0u64;
    let mut entries = 0usize;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();

    let Some((_, first)) = lines.next() else {
        return Err(StoreError::Header("empty file".into()));
    };
    if !first.ends_with('\n') {
        return Err(StoreError::Header("truncated header".into()));
    }
    let header: Header = serde_json::from_str(first.trim_end())
        .map_err(|e| StoreError::Header(e.to_string()))?;
    if header != Header::current() {
        return Err(StoreError::Header(format!(
            "expected {} v{}, found {} v{}",
            record::STORE_FORMAT,
            record::SCHEMA_VERSION,
            header.format,
            header.schema_version
        )));
    }
    offset += first.len() as u64;

    while let Some((idx, raw)) = lines.next() {
        let complete = raw.ends_with('\n');
        let body = raw.trim_end();
        if body.is_empty() {
            offset += raw.len() as u64;
            continue;
        }
        match serde_json::from_str::<LogEntry>(body) {
            Ok(entry) if complete => {
                data.apply(entry);
                entries += 1;
                offset += raw.len() as u64;
            }
            // torn final write: never committed
            _ if !complete && lines.peek().is_none() => break,
            Ok(_) => unreachable!("incomplete lines are always last"),
            Err(e) => {
                return Err(StoreError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((data, offset, entries))
}
