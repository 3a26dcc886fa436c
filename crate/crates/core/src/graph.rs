//! Typed, undirected interaction graph.
//!
//! Nodes pair a user with an access device. Arcs are either *use*
//! interactions (user–user, user–group, user–service) or *resource*
//! interactions between two nodes whose devices can both deploy a service.
//! Centrality is plain degree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{DeviceId, GroupId, IdError, NodeId, ServiceId, Timestamp, UserId};
use crate::profile::{
    DeviceLookup, DeviceProfile, GroupOrigin, GroupProfile, ProfileLookup, TypeCode,
};
use crate::rules::{match_rules, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown group `{0}`")]
    UnknownGroup(GroupId),
    #[error("unknown service `{0}`")]
    UnknownService(ServiceId),
    #[error("{kind} arc cannot connect node `{node}` to itself")]
    SelfArc { kind: ArcKind, node: NodeId },
    #[error("{kind} arc cannot end at {endpoint}")]
    EndpointMismatch { kind: ArcKind, endpoint: Endpoint },
    #[error("node `{0}` already exists")]
    DuplicateNode(NodeId),
    #[error("user `{user}` already has node `{existing}`")]
    UserHasNode { user: UserId, existing: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcKind {
    UserUser,
    UserGroup,
    UserService,
    Resource,
}

impl ArcKind {
    pub const ALL: [ArcKind; 4] = [
        ArcKind::UserUser,
        ArcKind::UserGroup,
        ArcKind::UserService,
        ArcKind::Resource,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArcKind::UserUser => "user_user",
            ArcKind::UserGroup => "user_group",
            ArcKind::UserService => "user_service",
            ArcKind::Resource => "resource",
        }
    }

    /// Whether both endpoints are nodes.
    pub fn is_node_to_node(self) -> bool {
        matches!(self, ArcKind::UserUser | ArcKind::Resource)
    }

    pub fn interaction(self) -> crate::profile::InteractionKind {
        use crate::profile::InteractionKind as K;
        match self {
            ArcKind::UserUser => K::UserUser,
            ArcKind::UserGroup => K::UserGroup,
            ArcKind::UserService => K::UserService,
            ArcKind::Resource => K::Resource,
        }
    }
}

impl fmt::Display for ArcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArcKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ArcKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown arc kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Node(NodeId),
    Group(GroupId),
    Service(ServiceId),
}

impl Endpoint {
    pub fn as_str(&self) -> &str {
        match self {
            Endpoint::Node(id) => id.as_str(),
            Endpoint::Group(id) => id.as_str(),
            Endpoint::Service(id) => id.as_str(),
        }
    }

    /// Interpret a raw id as the far endpoint of an arc of `kind`.
    pub fn for_kind(kind: ArcKind, raw: &str) -> Result<Endpoint, IdError> {
        Ok(match kind {
            ArcKind::UserUser | ArcKind::Resource => Endpoint::Node(NodeId::new(raw)?),
            ArcKind::UserGroup => Endpoint::Group(GroupId::new(raw)?),
            ArcKind::UserService => Endpoint::Service(ServiceId::new(raw)?),
        })
    }

    fn matches_kind(&self, kind: ArcKind) -> bool {
        matches!(
            (kind, self),
            (ArcKind::UserUser | ArcKind::Resource, Endpoint::Node(_))
                | (ArcKind::UserGroup, Endpoint::Group(_))
                | (ArcKind::UserService, Endpoint::Service(_))
        )
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(id) => write!(f, "node `{id}`"),
            Endpoint::Group(id) => write!(f, "group `{id}`"),
            Endpoint::Service(id) => write!(f, "service `{id}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub user_id: UserId,
    pub device_id: DeviceId,
}

/// Identity of an arc: kind plus its normalized endpoint pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArcKey {
    pub kind: ArcKind,
    pub a: NodeId,
    pub b: Endpoint,
}

impl ArcKey {
    /// Node-to-node pairs are stored with the smaller id first.
    pub fn new(kind: ArcKind, a: NodeId, b: Endpoint) -> ArcKey {
        match b {
            Endpoint::Node(other) if kind.is_node_to_node() && other < a => ArcKey {
                kind,
                a: other,
                b: Endpoint::Node(a),
            },
            b => ArcKey { kind, a, b },
        }
    }

    pub fn arc_id(&self) -> String {
        format!("{}:{}:{}", self.kind, self.a, self.b.as_str())
    }

    pub fn touches(&self, node: &NodeId) -> bool {
        &self.a == node || matches!(&self.b, Endpoint::Node(n) if n == node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ArcRepr {
    kind: ArcKind,
    a: NodeId,
    b: String,
    #[serde(default)]
    created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArcRepr", into = "ArcRepr")]
pub struct Arc {
    pub key: ArcKey,
    pub created_at: Timestamp,
}

impl Arc {
    pub fn new(kind: ArcKind, a: NodeId, b: Endpoint, created_at: Timestamp) -> Arc {
        Arc {
            key: ArcKey::new(kind, a, b),
            created_at,
        }
    }

    pub fn kind(&self) -> ArcKind {
        self.key.kind
    }

    pub fn arc_id(&self) -> String {
        self.key.arc_id()
    }
}

impl TryFrom<ArcRepr> for Arc {
    type Error = IdError;
    fn try_from(r: ArcRepr) -> Result<Self, IdError> {
        let b = Endpoint::for_kind(r.kind, &r.b)?;
        Ok(Arc::new(r.kind, r.a, b, r.created_at))
    }
}

impl From<Arc> for ArcRepr {
    fn from(arc: Arc) -> Self {
        ArcRepr {
            kind: arc.key.kind,
            b: arc.key.b.as_str().to_owned(),
            a: arc.key.a,
            created_at: arc.created_at,
        }
    }
}

/// Minimum device capabilities a service needs on both ends of a
/// resource interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRequirements {
    pub image_support: bool,
    pub min_list_items: u32,
    pub min_payload_bytes: u32,
}

impl ServiceRequirements {
    pub fn satisfied_by(&self, d: &DeviceProfile) -> bool {
        (!self.image_support || d.image_support)
            && d.max_list_items >= self.min_list_items
            && d.max_payload_bytes >= self.min_payload_bytes
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SocialGraph {
    nodes: BTreeMap<NodeId, Node>,
    by_user: BTreeMap<UserId, NodeId>,
    groups: BTreeSet<GroupId>,
    services: BTreeSet<ServiceId>,
    arcs: BTreeMap<ArcKey, Arc>,
    incident: BTreeMap<NodeId, BTreeSet<ArcKey>>,
}

impl SocialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Each user owns at most one node.
    pub fn add_node(&mut self, node: Node) -> Result<(), GraphError> {
        if self.nodes.contains_key(&node.node_id) {
            return Err(GraphError::DuplicateNode(node.node_id));
        }
        if let Some(existing) = self.by_user.get(&node.user_id) {
            return Err(GraphError::UserHasNode {
                user: node.user_id,
                existing: existing.clone(),
            });
        }
        self.by_user.insert(node.user_id.clone(), node.node_id.clone());
        self.incident.insert(node.node_id.clone(), BTreeSet::new());
        self.nodes.insert(node.node_id.clone(), node);
        Ok(())
    }

    /// Remove a node and every arc touching it; returns the removed arcs.
    pub fn remove_node(&mut self, id: &NodeId) -> Result<Vec<Arc>, GraphError> {
        let node = self
            .nodes
            .remove(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))?;
        self.by_user.remove(&node.user_id);
        let keys = self.incident.remove(id).unwrap_or_default();
        let mut removed = Vec::with_capacity(keys.len());
        for key in keys {
            if let Some(arc) = self.arcs.remove(&key) {
                if let Endpoint::Node(other) = &key.b {
                    if other != id {
                        if let Some(set) = self.incident.get_mut(other) {
                            set.remove(&key);
                        }
                    }
                }
                if &key.a != id {
                    if let Some(set) = self.incident.get_mut(&key.a) {
                        set.remove(&key);
                    }
                }
                removed.push(arc);
            }
        }
        Ok(removed)
    }

    pub fn register_group(&mut self, id: GroupId) {
        self.groups.insert(id);
    }

    pub fn register_service(&mut self, id: ServiceId) {
        self.services.insert(id);
    }

    /// Drops the group and all user–group arcs pointing at it.
    pub fn unregister_group(&mut self, id: &GroupId) -> Vec<Arc> {
        self.groups.remove(id);
        let target = Endpoint::Group(id.clone());
        self.remove_arcs_where(|k| k.b == target)
    }

    pub fn unregister_service(&mut self, id: &ServiceId) -> Vec<Arc> {
        self.services.remove(id);
        let target = Endpoint::Service(id.clone());
        self.remove_arcs_where(|k| k.b == target)
    }

    fn remove_arcs_where(&mut self, pred: impl Fn(&ArcKey) -> bool) -> Vec<Arc> {
        let keys: Vec<ArcKey> = self.arcs.keys().filter(|k| pred(k)).cloned().collect();
        keys.into_iter()
            .filter_map(|k| self.remove_arc(&k))
            .collect()
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_of_user(&self, user: &UserId) -> Option<&Node> {
        self.by_user.get(user).and_then(|id| self.nodes.get(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn arcs(&self) -> impl Iterator<Item = &Arc> {
        self.arcs.values()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn has_group(&self, id: &GroupId) -> bool {
        self.groups.contains(id)
    }

    pub fn has_service(&self, id: &ServiceId) -> bool {
        self.services.contains(id)
    }

    pub fn contains_arc(&self, key: &ArcKey) -> bool {
        self.arcs.contains_key(key)
    }

    fn check_endpoints(&self, key: &ArcKey) -> Result<(), GraphError> {
        if !key.b.matches_kind(key.kind) {
            return Err(GraphError::EndpointMismatch {
                kind: key.kind,
                endpoint: key.b.clone(),
            });
        }
        if !self.nodes.contains_key(&key.a) {
            return Err(GraphError::UnknownNode(key.a.clone()));
        }
        match &key.b {
            Endpoint::Node(b) => {
                if b == &key.a {
                    return Err(GraphError::SelfArc {
                        kind: key.kind,
                        node: b.clone(),
                    });
                }
                if !self.nodes.contains_key(b) {
                    return Err(GraphError::UnknownNode(b.clone()));
                }
            }
            Endpoint::Group(g) if !self.groups.contains(g) => {
                return Err(GraphError::UnknownGroup(g.clone()))
            }
            Endpoint::Service(s) if !self.services.contains(s) => {
                return Err(GraphError::UnknownService(s.clone()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Record an interaction. Returns `false` when the arc already existed;
    /// the original arc (and its timestamp) is kept.
    pub fn add_interaction(
        &mut self,
        kind: ArcKind,
        a: NodeId,
        b: Endpoint,
        at: Timestamp,
    ) -> Result<bool, GraphError> {
        self.insert_arc(Arc::new(kind, a, b, at))
    }

    pub fn insert_arc(&mut self, arc: Arc) -> Result<bool, GraphError> {
        self.check_endpoints(&arc.key)?;
        if self.arcs.contains_key(&arc.key) {
            return Ok(false);
        }
        let key = arc.key.clone();
        self.incident.entry(key.a.clone()).or_default().insert(key.clone());
        if let Endpoint::Node(b) = &key.b {
            self.incident.entry(b.clone()).or_default().insert(key.clone());
        }
        self.arcs.insert(key, arc);
        Ok(true)
    }

    pub fn remove_arc(&mut self, key: &ArcKey) -> Option<Arc> {
        let arc = self.arcs.remove(key)?;
        if let Some(set) = self.incident.get_mut(&key.a) {
            set.remove(key);
        }
        if let Endpoint::Node(b) = &key.b {
            if let Some(set) = self.incident.get_mut(b) {
                set.remove(key);
            }
        }
        Some(arc)
    }

    pub fn remove_interaction(&mut self, kind: ArcKind, a: NodeId, b: Endpoint) -> Option<Arc> {
        self.remove_arc(&ArcKey::new(kind, a, b))
    }

    /// Number of arcs of any kind incident to `node`.
    pub fn degree(&self, node: &NodeId) -> Result<usize, GraphError> {
        self.incident
            .get(node)
            .map(BTreeSet::len)
            .ok_or_else(|| GraphError::UnknownNode(node.clone()))
    }

    /// Arcs incident to a node, in key order.
    pub fn incident_arcs<'a>(&'a self, node: &NodeId) -> impl Iterator<Item = &'a Arc> + 'a {
        self.incident
            .get(node)
            .into_iter()
            .flatten()
            .filter_map(move |k| self.arcs.get(k))
    }

    /// The `k` highest-degree nodes, descending, ties by ascending id.
    pub fn central_points(&self, k: usize) -> Vec<NodeId> {
        let mut ranked: Vec<(usize, &NodeId)> = self
            .incident
            .iter()
            .map(|(id, arcs)| (arcs.len(), id))
            .collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.cmp(y.1)));
        ranked.into_iter().take(k).map(|(_, id)| id.clone()).collect()
    }

    /// Nodes joined to `node` by a user–user arc, ascending.
    pub fn friends(&self, node: &NodeId) -> BTreeSet<NodeId> {
        self.neighbors_by(node, ArcKind::UserUser)
    }

    fn neighbors_by(&self, node: &NodeId, kind: ArcKind) -> BTreeSet<NodeId> {
        self.incident
            .get(node)
            .into_iter()
            .flatten()
            .filter(|k| k.kind == kind)
            .filter_map(|k| match &k.b {
                Endpoint::Node(b) if b != node => Some(b.clone()),
                Endpoint::Node(_) => Some(k.a.clone()),
                _ => None,
            })
            .collect()
    }

    /// Groups a node is linked to through user–group arcs.
    pub fn groups_of(&self, node: &NodeId) -> BTreeSet<GroupId> {
        self.incident
            .get(node)
            .into_iter()
            .flatten()
            .filter_map(|k| match &k.b {
                Endpoint::Group(g) => Some(g.clone()),
                _ => None,
            })
            .collect()
    }

    /// Users adjacent over user–user arcs, keyed by user id.
    pub fn friend_users(&self, user: &UserId) -> BTreeSet<UserId> {
        let Some(node) = self.by_user.get(user) else {
            return BTreeSet::new();
        };
        self.friends(node)
            .iter()
            .filter_map(|n| self.nodes.get(n).map(|n| n.user_id.clone()))
            .collect()
    }

    /// A resource arc between every pair of distinct nodes whose devices
    /// both meet `req`. Nodes whose device is unknown never qualify.
    pub fn compute_resource_arcs(
        &self,
        req: &ServiceRequirements,
        devices: &impl DeviceLookup,
        at: Timestamp,
    ) -> Vec<Arc> {
        let capable: Vec<&NodeId> = self
            .nodes
            .values()
            .filter(|n| devices.device(&n.device_id).is_some_and(|d| req.satisfied_by(d)))
            .map(|n| &n.node_id)
            .collect();
        let mut out = Vec::with_capacity(capable.len() * capable.len().saturating_sub(1) / 2);
        for (i, a) in capable.iter().enumerate() {
            for b in &capable[i + 1..] {
                out.push(Arc::new(
                    ArcKind::Resource,
                    (*a).clone(),
                    Endpoint::Node((*b).clone()),
                    at,
                ));
            }
        }
        out
    }

    /// Build a system group around `seed`: the seed's user plus every
    /// friend who shares at least one matched recommendation type with the
    /// seed. The topic is the label of the type shared by the most members
    /// (ties by lowest code).
    pub fn generate_system_group(
        &self,
        seed: &NodeId,
        profiles: &impl ProfileLookup,
        rules: &RuleSet,
    ) -> Result<GroupProfile, GraphError> {
        let seed_node = self
            .nodes
            .get(seed)
            .ok_or_else(|| GraphError::UnknownNode(seed.clone()))?;
        let candidates = |user: &UserId| {
            profiles
                .profile(user)
                .map(|p| match_rules(p, rules))
                .unwrap_or_default()
        };
        let seed_types = candidates(&seed_node.user_id);

        let mut members = BTreeSet::from([seed_node.user_id.clone()]);
        let mut shared_counts: BTreeMap<TypeCode, usize> = BTreeMap::new();
        for friend in self.friends(seed) {
            let Some(friend_node) = self.nodes.get(&friend) else {
                continue;
            };
            let friend_types = candidates(&friend_node.user_id);
            let shared: Vec<TypeCode> = seed_types.intersection(&friend_types).copied().collect();
            if shared.is_empty() {
                continue;
            }
            members.insert(friend_node.user_id.clone());
            for code in shared {
                *shared_counts.entry(code).or_insert(0) += 1;
            }
        }

        let topic = shared_counts
            .iter()
            .max_by(|x, y| x.1.cmp(y.1).then_with(|| y.0.cmp(x.0)))
            .map(|(code, _)| *code)
            .or_else(|| seed_types.iter().next().copied())
            .map(|code| code.label().to_owned())
            .unwrap_or_else(|| "unclassified".to_owned());

        let stem = &seed.as_str()[..seed.as_str().len().min(60)];
        let group_id = GroupId::new(format!("sys.{stem}")).expect("node ids are valid ids");
        Ok(GroupProfile {
            group_id,
            topic,
            member_ids: members,
            origin: GroupOrigin::SystemGenerated,
            preference_codes: shared_counts.keys().map(|c| c.get() as u32).collect(),
        })
    }

    /// Line-oriented dump: `node <id> <user> <device>` lines, then
    /// `arc <kind> <a> <b>` lines, both in id order.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            out.push_str(&format!("node {} {} {}\n", n.node_id, n.user_id, n.device_id));
        }
        for key in self.arcs.keys() {
            out.push_str(&format!("arc {} {} {}\n", key.kind, key.a, key.b.as_str()));
        }
        out
    }

    /// Parse an edge list. Groups and services named by arcs are
    /// registered implicitly; arc timestamps are zero.
    pub fn from_edge_list(text: &str) -> Result<SocialGraph, EdgeListError> {
        let mut g = SocialGraph::new();
        let mut pending = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| EdgeListError { line, message };
            let fields: Vec<&str> = raw.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [first, ..] if first.starts_with('#') => {}
                ["node", id, user, device] => {
                    let node = Node {
                        node_id: NodeId::new(*id).map_err(|e| err(e.to_string()))?,
                        user_id: UserId::new(*user).map_err(|e| err(e.to_string()))?,
                        device_id: DeviceId::new(*device).map_err(|e| err(e.to_string()))?,
                    };
                    g.add_node(node).map_err(|e| err(e.to_string()))?;
                }
                ["arc", kind, a, b] => {
                    let kind: ArcKind = kind.parse().map_err(err)?;
                    let a = NodeId::new(*a).map_err(|e| err(e.to_string()))?;
                    let b = Endpoint::for_kind(kind, b).map_err(|e| err(e.to_string()))?;
                    match &b {
                        Endpoint::Group(id) => g.register_group(id.clone()),
                        Endpoint::Service(id) => g.register_service(id.clone()),
                        Endpoint::Node(_) => {}
                    }
                    pending.push((line, Arc::new(kind, a, b, Timestamp(0))));
                }
                _ => return Err(err(format!("unrecognized record `{raw}`"))),
            }
        }
        for (line, arc) in pending {
            g.insert_arc(arc).map_err(|e| EdgeListError {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("edge list line {line}: {message}")]
pub struct EdgeListError {
    pub line: usize,
    pub message: String,
}
