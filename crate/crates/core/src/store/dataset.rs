use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::diffusion::{Notification, Recommendation};
use crate::graph::{Arc, ArcKey, ArcKind, Endpoint, Node, SocialGraph};
use crate::ids::{DeviceId, GroupId, NodeId, RecId, ServiceId, Timestamp, UserId};
use crate::profile::{
    validate_device, validate_group, validate_profile, ContextEvent, DeviceLookup, DeviceProfile,
    GroupOrigin, GroupProfile, InteractionKind, ProfileLookup, ServiceRecord, SocialProfile,
    UserProfile,
};

use super::record::{Credential, EntityRef, LogEntry, Record};

/// One referential-integrity or invariant violation found by a full scan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum IntegrityIssue {
    DanglingReference {
        from: String,
        missing: String,
    },
    InvalidEntity {
        entity: String,
        reason: String,
    },
    MembershipMismatch {
        group: GroupId,
        user: UserId,
    },
    EventOrder {
        user: UserId,
    },
    DuplicateNotification {
        id: String,
    },
    CounterMismatch {
        user: UserId,
    },
}

impl fmt::Display for IntegrityIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegrityIssue::DanglingReference { from, missing } => {
                write!(f, "{from} references missing {missing}")
            }
            IntegrityIssue::InvalidEntity { entity, reason } => write!(f, "{entity} is invalid: {reason}"),
            IntegrityIssue::MembershipMismatch { group, user } => write!(
                f,
                "user `{user}` has a user_group arc to group `{group}` but is not a member"
            ),
            IntegrityIssue::EventOrder { user } => {
                write!(f, "context events of user `{user}` go back in time")
            }
            IntegrityIssue::DuplicateNotification { id } => write!(f, "notification `{id}` is duplicated"),
            IntegrityIssue::CounterMismatch { user } => {
                write!(f, "social counters of user `{user}` disagree with arcs and events")
            }
        }
    }
}

fn dangling(from: impl Into<String>, missing: impl Into<String>) -> IntegrityIssue {
    IntegrityIssue::DanglingReference {
        from: from.into(),
        missing: missing.into(),
    }
}

/// The in-memory state of a store.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub(crate) users: BTreeMap<UserId, UserProfile>,
    pub(crate) credentials: BTreeMap<UserId, String>,
    pub(crate) devices: BTreeMap<DeviceId, DeviceProfile>,
    pub(crate) services: BTreeMap<ServiceId, ServiceRecord>,
    pub(crate) groups: BTreeMap<GroupId, GroupProfile>,
    pub(crate) graph: SocialGraph,
    pub(crate) recs: BTreeMap<RecId, Recommendation>,
    pub(crate) notifications: Vec<Notification>,
    pub(crate) events: Vec<ContextEvent>,
    pub(crate) social: BTreeMap<UserId, SocialProfile>,
    /// Nodes whose user or device was missing at replay time; kept so the
    /// validator can name them.
    pub(crate) stray_nodes: Vec<Node>,
    /// Arcs that could not be attached during replay.
    pub(crate) stray_arcs: Vec<(Arc, String)>,
    pub(crate) clock: Timestamp,
}

impl ProfileLookup for Dataset {
    fn profile(&self, id: &UserId) -> Option<&UserProfile> {
        self.users.get(id)
    }
}

impl DeviceLookup for Dataset {
    fn device(&self, id: &DeviceId) -> Option<&DeviceProfile> {
        self.devices.get(id)
    }
}

impl Dataset {
    pub fn user(&self, id: &UserId) -> Option<&UserProfile> {
        self.users.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserProfile> {
        self.users.values()
    }

    pub fn user_profiles(&self) -> &BTreeMap<UserId, UserProfile> {
        &self.users
    }

    pub fn credential(&self, id: &UserId) -> Option<&str> {
        self.credentials.get(id).map(String::as_str)
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceProfile> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceProfile> {
        self.devices.values()
    }

    pub fn service(&self, id: &ServiceId) -> Option<&ServiceRecord> {
        self.services.get(id)
    }

    pub fn group(&self, id: &GroupId) -> Option<&GroupProfile> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupProfile> {
        self.groups.values()
    }

    pub fn graph(&self) -> &SocialGraph {
        &self.graph
    }

    pub fn recommendation(&self, id: &RecId) -> Option<&Recommendation> {
        self.recs.get(id)
    }

    pub fn recommendations(&self) -> impl Iterator<Item = &Recommendation> {
        self.recs.values()
    }

    /// Every notification, in commit order.
    pub fn notifications(&self) -> &[Notification] {
        &self.notifications
    }

    pub fn notifications_for<'a>(&'a self, user: &'a UserId) -> impl Iterator<Item = &'a Notification> + 'a {
        self.notifications.iter().filter(move |n| &n.recipient == user)
    }

    pub fn events(&self) -> &[ContextEvent] {
        &self.events
    }

    pub fn events_of<'a>(&'a self, user: &'a UserId) -> impl Iterator<Item = &'a ContextEvent> + 'a {
        self.events.iter().filter(move |e| &e.user_id == user)
    }

    pub fn social_profile(&self, user: &UserId) -> Option<&SocialProfile> {
        self.social.get(user)
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    /// Case-insensitive substring match on the display name, by id.
    pub fn search_users(&self, pattern: &str) -> Vec<&UserProfile> {
        let needle = pattern.to_lowercase();
        self.users
            .values()
            .filter(|u| u.name.to_lowercase().contains(&needle))
            .collect()
    }

    /// Case-insensitive substring match on the group id or topic, by id.
    pub fn search_groups(&self, pattern: &str) -> Vec<&GroupProfile> {
        let needle = pattern.to_lowercase();
        self.groups
            .values()
            .filter(|g| {
                g.group_id.as_str().to_lowercase().contains(&needle)
                    || g.topic.to_lowercase().contains(&needle)
            })
            .collect()
    }

    fn user_of_node(&self, node: &NodeId) -> Option<&UserId> {
        self.graph.node(node).map(|n| &n.user_id)
    }

    fn bump_arc(&mut self, arc: &Arc, up: bool) {
        let kind = arc.kind().interaction();
        let mut users = Vec::with_capacity(2);
        if let Some(u) = self.user_of_node(&arc.key.a) {
            users.push(u.clone());
        }
        if let Endpoint::Node(b) = &arc.key.b {
            if let Some(u) = self.user_of_node(b) {
                users.push(u.clone());
            }
        }
        for u in users {
            let sp = self
                .social
                .entry(u.clone())
                .or_insert_with(|| SocialProfile::new(u));
            if up {
                sp.bump(kind, arc.created_at);
            } else {
                sp.unbump(kind);
            }
        }
    }

    fn tick(&mut self, at: Timestamp) {
        self.clock = self.clock.max(at);
    }

    /// Apply one log entry without validation. Problems that make an entry
    /// impossible to attach (for example an arc to a missing node) are kept
    /// aside for the validator.
    pub(crate) fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Batch { entries } => {
                for e in entries {
                    self.apply(e);
                }
            }
            LogEntry::Put { record } => self.put(record),
            LogEntry::Delete { target } => self.delete(target),
        }
    }

    fn put(&mut self, record: Record) {
        match record {
            Record::User(u) => {
                self.users.insert(u.user_id.clone(), u);
            }
            Record::Credential(c) => {
                self.credentials.insert(c.user_id, c.secret);
            }
            Record::Device(d) => {
                self.devices.insert(d.device_id.clone(), d);
            }
            Record::Service(s) => {
                self.graph.register_service(s.service_id.clone());
                self.services.insert(s.service_id.clone(), s);
            }
            Record::Group(g) => {
                self.graph.register_group(g.group_id.clone());
                self.groups.insert(g.group_id.clone(), g);
            }
            Record::Node(n) => {
                if self.graph.node(&n.node_id) == Some(&n) {
                    return;
                }
                if let Err(_e) = self.graph.add_node(n.clone()) {
                    self.stray_nodes.push(n);
                }
            }
            Record::Arc(arc) => {
                self.tick(arc.created_at);
                match self.graph.insert_arc(arc.clone()) {
                    Ok(true) => self.bump_arc(&arc, true),
                    Ok(false) => {}
                    Err(e) => self.stray_arcs.push((arc, e.to_string())),
                }
            }
            Record::Recommendation(r) => {
                self.recs.insert(r.rec_id.clone(), r);
            }
            Record::Notification(n) => {
                self.tick(n.at);
                self.notifications.push(n);
            }
            Record::Event(e) => {
                self.tick(e.timestamp);
                let sp = self
                    .social
                    .entry(e.user_id.clone())
                    .or_insert_with(|| SocialProfile::new(e.user_id.clone()));
                sp.bump(e.kind.into(), e.timestamp);
                self.events.push(e);
            }
        }
    }

    fn remove_arc(&mut self, key: &ArcKey) {
        if let Some(arc) = self.graph.remove_arc(key) {
            self.bump_arc(&arc, false);
        }
    }

    fn unlink_arcs(&mut self, removed: &[Arc]) {
        for arc in removed {
            self.bump_arc(arc, false);
        }
    }

    fn delete(&mut self, target: EntityRef) {
        match target {
            EntityRef::User { id } => self.delete_user(&id),
            EntityRef::Device { id } => {
                self.devices.remove(&id);
            }
            EntityRef::Service { id } => {
                let removed = self.graph.unregister_service(&id);
                self.unlink_arcs(&removed);
                self.services.remove(&id);
            }
            EntityRef::Group { id } => {
                let removed = self.graph.unregister_group(&id);
                self.unlink_arcs(&removed);
                self.groups.remove(&id);
            }
            EntityRef::Node { id } => {
                let incident: Vec<Arc> = self.graph.incident_arcs(&id).cloned().collect();
                self.unlink_arcs(&incident);
                let _ = self.graph.remove_node(&id);
            }
            EntityRef::Arc { kind, a, b } => {
                if let Ok(b) = Endpoint::for_kind(kind, &b) {
                    self.remove_arc(&ArcKey::new(kind, a, b));
                }
            }
            EntityRef::Recommendation { id } => {
                self.recs.remove(&id);
            }
        }
    }

    /// Cascade: arcs go, group memberships go (emptied user-created groups
    /// are deleted), events and credentials go, recommendations the user
    /// sent or received are kept but marked orphaned.
    fn delete_user(&mut self, id: &UserId) {
        if let Some(node) = self.graph.node_of_user(id).map(|n| n.node_id.clone()) {
            self.delete(EntityRef::Node { id: node });
        }
        let mut emptied = Vec::new();
        for g in self.groups.values_mut() {
            if g.member_ids.remove(id) && g.member_ids.is_empty() && g.origin == GroupOrigin::UserCreated {
                emptied.push(g.group_id.clone());
            }
        }
        for gid in emptied {
            self.delete(EntityRef::Group { id: gid });
        }
        for r in self.recs.values_mut() {
            if &r.sender_id == id || &r.recipient_id == id {
                r.orphaned = true;
            }
        }
        self.events.retain(|e| &e.user_id != id);
        self.credentials.remove(id);
        self.social.remove(id);
        self.users.remove(id);
    }

    /// Counters recomputed from scratch out of arcs and events.
    pub fn recompute_social(&self) -> BTreeMap<UserId, BTreeMap<InteractionKind, u64>> {
        let mut out: BTreeMap<UserId, BTreeMap<InteractionKind, u64>> = BTreeMap::new();
        for arc in self.graph.arcs() {
            let kind = arc.kind().interaction();
            let mut touch = |node: &NodeId| {
                if let Some(u) = self.user_of_node(node) {
                    *out.entry(u.clone()).or_default().entry(kind).or_insert(0) += 1;
                }
            };
            touch(&arc.key.a);
            if let Endpoint::Node(b) = &arc.key.b {
                touch(b);
            }
        }
        for e in &self.events {
            *out.entry(e.user_id.clone())
                .or_default()
                .entry(e.kind.into())
                .or_insert(0) += 1;
        }
        out
    }

    /// Full-scan validator.
    pub fn validate(&self) -> Vec<IntegrityIssue> {
        let mut issues = Vec::new();

        for u in self.users.values() {
            if let Err(errs) = validate_profile(u) {
                for e in errs {
                    issues.push(IntegrityIssue::InvalidEntity {
                        entity: format!("user `{}`", u.user_id),
                        reason: e.to_string(),
                    });
                }
            }
        }
        for d in self.devices.values() {
            if let Err(errs) = validate_device(d) {
                for e in errs {
                    issues.push(IntegrityIssue::InvalidEntity {
                        entity: format!("device `{}`", d.device_id),
                        reason: e.to_string(),
                    });
                }
            }
        }
        for user in self.credentials.keys() {
            if !self.users.contains_key(user) {
                issues.push(dangling("credential", format!("user `{user}`")));
            }
        }
        for n in self.graph.nodes().chain(self.stray_nodes.iter()) {
            if !self.users.contains_key(&n.user_id) {
                issues.push(dangling(format!("node `{}`", n.node_id), format!("user `{}`", n.user_id)));
            }
            if !self.devices.contains_key(&n.device_id) {
                issues.push(dangling(format!("node `{}`", n.node_id), format!("device `{}`", n.device_id)));
            }
        }
        for n in &self.stray_nodes {
            if let Some(existing) = self.graph.node(&n.node_id) {
                if existing != n {
                    issues.push(IntegrityIssue::InvalidEntity {
                        entity: format!("node `{}`", n.node_id),
                        reason: "defined twice".into(),
                    });
                }
            } else if let Some(other) = self.graph.node_of_user(&n.user_id) {
                issues.push(IntegrityIssue::InvalidEntity {
                    entity: format!("node `{}`", n.node_id),
                    reason: format!("user `{}` already has node `{}`", n.user_id, other.node_id),
                });
            }
        }
        for (arc, _) in &self.stray_arcs {
            let from = format!("arc {}", arc.arc_id());
            let mut named = false;
            for node in std::iter::once(&arc.key.a).chain(match &arc.key.b {
                Endpoint::Node(b) => Some(b),
                _ => None,
            }) {
                if self.graph.node(node).is_none() {
                    issues.push(dangling(from.clone(), format!("node `{node}`")));
                    named = true;
                }
            }
            match &arc.key.b {
                Endpoint::Group(g) if !self.groups.contains_key(g) => {
                    issues.push(dangling(from.clone(), format!("group `{g}`")));
                    named = true;
                }
                Endpoint::Service(s) if !self.services.contains_key(s) => {
                    issues.push(dangling(from.clone(), format!("service `{s}`")));
                    named = true;
                }
                _ => {}
            }
            if !named {
                issues.push(IntegrityIssue::InvalidEntity {
                    entity: from,
                    reason: "self-arc or mismatched endpoint".into(),
                });
            }
        }
        for arc in self.graph.arcs() {
            match &arc.key.b {
                Endpoint::Group(g) => match self.groups.get(g) {
                    None => issues.push(dangling(format!("arc {}", arc.arc_id()), format!("group `{g}`"))),
                    Some(group) => {
                        if let Some(u) = self.user_of_node(&arc.key.a) {
                            if !group.member_ids.contains(u) {
                                issues.push(IntegrityIssue::MembershipMismatch {
                                    group: g.clone(),
                                    user: u.clone(),
                                });
                            }
                        }
                    }
                },
                Endpoint::Service(s) if !self.services.contains_key(s) => {
                    issues.push(dangling(format!("arc {}", arc.arc_id()), format!("service `{s}`")))
                }
                _ => {}
            }
        }
        for g in self.groups.values() {
            if let Err(e) = validate_group(g) {
                issues.push(IntegrityIssue::InvalidEntity {
                    entity: format!("group `{}`", g.group_id),
                    reason: e.to_string(),
                });
            }
            for m in &g.member_ids {
                if !self.users.contains_key(m) {
                    issues.push(dangling(format!("group `{}`", g.group_id), format!("user `{m}`")));
                }
            }
        }
        for r in self.recs.values() {
            let from = format!("recommendation `{}`", r.rec_id);
            if !r.orphaned {
                for u in [&r.sender_id, &r.recipient_id] {
                    if !self.users.contains_key(u) {
                        issues.push(dangling(from.clone(), format!("user `{u}`")));
                    }
                }
            }
            if let Some(parent) = &r.parent_rec_id {
                match self.recs.get(parent) {
                    None => issues.push(dangling(from.clone(), format!("recommendation `{parent}`"))),
                    Some(p) if p.hop + 1 != r.hop => issues.push(IntegrityIssue::InvalidEntity {
                        entity: from.clone(),
                        reason: format!("hop {} does not follow parent hop {}", r.hop, p.hop),
                    }),
                    Some(_) => {}
                }
            }
        }
        let mut seen = BTreeSet::new();
        for n in &self.notifications {
            if !seen.insert(n.notif_id.clone()) {
                issues.push(IntegrityIssue::DuplicateNotification {
                    id: n.notif_id.to_string(),
                });
            }
            match self.recs.get(&n.rec_id) {
                None => issues.push(dangling(
                    format!("notification `{}`", n.notif_id),
                    format!("recommendation `{}`", n.rec_id),
                )),
                Some(r) if !r.orphaned && !self.users.contains_key(&n.recipient) => issues.push(dangling(
                    format!("notification `{}`", n.notif_id),
                    format!("user `{}`", n.recipient),
                )),
                Some(_) => {}
            }
        }
        let mut last: BTreeMap<&UserId, Timestamp> = BTreeMap::new();
        let mut out_of_order = BTreeSet::new();
        for e in &self.events {
            if !self.users.contains_key(&e.user_id) {
                issues.push(dangling("context event", format!("user `{}`", e.user_id)));
            }
            let prev = last.entry(&e.user_id).or_insert(e.timestamp);
            if e.timestamp < *prev {
                out_of_order.insert(e.user_id.clone());
            }
            *prev = e.timestamp.max(*prev);
        }
        for user in out_of_order {
            issues.push(IntegrityIssue::EventOrder { user });
        }
        let recomputed = self.recompute_social();
        let users: BTreeSet<&UserId> = recomputed.keys().chain(self.social.keys()).collect();
        for u in users {
            let stored = self
                .social
                .get(u)
                .map(|s| s.interaction_counters.clone())
                .unwrap_or_default();
            let fresh = recomputed.get(u).cloned().unwrap_or_default();
            if stored != fresh {
                issues.push(IntegrityIssue::CounterMismatch { user: u.clone() });
            }
        }
        issues.sort();
        issues.dedup();
        issues
    }

    /// Every entity as canonical records, in an order that can be replayed.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        out.extend(self.users.values().cloned().map(Record::User));
        out.extend(self.credentials.iter().map(|(u, s)| {
            Record::Credential(Credential {
                user_id: u.clone(),
                secret: s.clone(),
            })
        }));
        out.extend(self.devices.values().cloned().map(Record::Device));
        out.extend(self.services.values().cloned().map(Record::Service));
        out.extend(self.groups.values().cloned().map(Record::Group));
        out.extend(self.graph.nodes().cloned().map(Record::Node));
        out.extend(self.graph.arcs().cloned().map(Record::Arc));
        out.extend(self.recs.values().cloned().map(Record::Recommendation));
        out.extend(self.notifications.iter().cloned().map(Record::Notification));
        out.extend(self.events.iter().cloned().map(Record::Event));
        out
    }

    pub(crate) fn arc_exists(&self, kind: ArcKind, a: &NodeId, b: &Endpoint) -> bool {
        self.graph.contains_arc(&ArcKey::new(kind, a.clone(), b.clone()))
    }
}
