//! Recommendation lifecycle, sender notifications, and snowball
//! propagation over friendship arcs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::SocialGraph;
use crate::ids::{NotificationId, RecId, Timestamp, UserId};
use crate::profile::{ProfileLookup, TypeCode};
use crate::rules::{match_rules, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecState {
    Created,
    Sent,
    Delivered,
    Viewed,
    Accepted,
    Rejected,
}

impl RecState {
    pub const ALL: [RecState; 6] = [
        RecState::Created,
        RecState::Sent,
        RecState::Delivered,
        RecState::Viewed,
        RecState::Accepted,
        RecState::Rejected,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, RecState::Accepted | RecState::Rejected)
    }

    pub fn can_move_to(self, to: RecState) -> bool {
        use RecState::*;
        matches!(
            (self, to),
            (Created, Sent)
                | (Sent, Delivered)
                | (Delivered, Viewed)
                | (Viewed, Accepted)
                | (Viewed, Rejected)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecState::Created => "created",
            RecState::Sent => "sent",
            RecState::Delivered => "delivered",
            RecState::Viewed => "viewed",
            RecState::Accepted => "accepted",
            RecState::Rejected => "rejected",
        }
    }
}

impl fmt::Display for RecState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rec_id: RecId,
    pub type_code: TypeCode,
    pub title: String,
    pub content: String,
    pub sender_id: UserId,
    pub recipient_id: UserId,
    pub state: RecState,
    #[serde(default)]
    pub hop: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_rec_id: Option<RecId>,
    /// Set when the sender or recipient was deleted; the record stays for
    /// the notification history but no longer moves.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub orphaned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub notif_id: NotificationId,
    pub rec_id: RecId,
    /// The sender of the recommendation.
    pub recipient: UserId,
    pub old_state: RecState,
    pub new_state: RecState,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition from {from} to {to}")]
    Illegal { from: RecState, to: RecState },
    #[error("recommendation is in terminal state {state}")]
    Terminal { state: RecState },
    #[error("recommendation `{0}` is orphaned")]
    Orphaned(RecId),
}

/// Move `rec` to `to`, producing the updated record and the notification
/// addressed to its sender.
pub fn transition(
    rec: &Recommendation,
    to: RecState,
    at: Timestamp,
    notif_id: NotificationId,
) -> Result<(Recommendation, Notification), TransitionError> {
    if rec.state.is_terminal() {
        return Err(TransitionError::Terminal { state: rec.state });
    }
    if !rec.state.can_move_to(to) {
        return Err(TransitionError::Illegal {
            from: rec.state,
            to,
        });
    }
    if rec.orphaned {
        return Err(TransitionError::Orphaned(rec.rec_id.clone()));
    }
    let mut next = rec.clone();
    next.state = to;
    let notification = Notification {
        notif_id,
        rec_id: rec.rec_id.clone(),
        recipient: rec.sender_id.clone(),
        old_state: rec.state,
        new_state: to,
        at,
    };
    Ok((next, notification))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub seed: UserId,
    /// Reached users and the hop (1-based, relative to the seed) at which
    /// each was first reached.
    pub reached: BTreeMap<UserId, u32>,
    pub eligible_filtered: usize,
    pub max_hops: u32,
}

impl DiffusionReport {
    /// Number of users first reached at each hop `1..=max_hops`.
    pub fn coverage(&self) -> BTreeMap<u32, usize> {
        let mut table: BTreeMap<u32, usize> = (1..=self.max_hops).map(|h| (h, 0)).collect();
        for hop in self.reached.values() {
            *table.entry(*hop).or_insert(0) += 1;
        }
        table
    }

    /// `user,hop` rows with a header, ordered by user id.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["user", "hop"]).expect("in-memory write");
        for (user, hop) in &self.reached {
            w.write_record([user.as_str(), &hop.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn reached_from_csv(text: &str) -> Result<BTreeMap<UserId, u32>, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut out = BTreeMap::new();
        for row in r.records() {
            let row = row.map_err(|e| e.to_string())?;
            if row.len() != 2 {
                return Err(format!("expected 2 fields, got {}", row.len()));
            }
            let user = UserId::new(&row[0]).map_err(|e| e.to_string())?;
            let hop = row[1].parse::<u32>().map_err(|e| e.to_string())?;
            out.insert(user, hop);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diffusion {
    pub report: DiffusionReport,
    /// One child per reached user, in the order they were reached.
    pub children: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffusionError {
    #[error("user `{0}` is not in the graph")]
    UnknownUser(UserId),
}

/// Breadth-first propagation from the seed recipient over user–user arcs.
/// A friend is reached when some holder at the previous hop is adjacent and
/// the friend's matched types include the recommendation's type. Each user
/// is examined at most once; friends failing the rule filter are counted in
/// `eligible_filtered` and never forward the recommendation. The seed's
/// sender already holds it and is never reached.
pub fn snowball(
    g: &SocialGraph,
    seed_rec: &Recommendation,
    max_hops: u32,
    eligibility: &RuleSet,
    profiles: &impl ProfileLookup,
    mut next_id: impl FnMut(&UserId, u32) -> RecId,
) -> Result<Diffusion, DiffusionError> {
    let seed = &seed_rec.recipient_id;
    if g.node_of_user(seed).is_none() {
        return Err(DiffusionError::UnknownUser(seed.clone()));
    }
    let eligible = |user: &UserId| {
        profiles
            .profile(user)
            .is_some_and(|p| match_rules(p, eligibility).contains(&seed_rec.type_code))
    };

    let mut visited: BTreeSet<UserId> = BTreeSet::from([seed.clone(), seed_rec.sender_id.clone()]);
    let mut reached = BTreeMap::new();
    let mut children = Vec::new();
    let mut filtered = 0usize;
    let mut frontier: Vec<Recommendation> = vec![seed_rec.clone()];

    for hop in 1..=max_hops {
        let mut next: Vec<Recommendation> = Vec::new();
        for holder in &frontier {
            for friend in g.friend_users(&holder.recipient_id) {
                if !visited.insert(friend.clone()) {
                    continue;
                }
                if !eligible(&friend) {
                    filtered += 1;
                    continue;
                }
                let child = Recommendation {
                    rec_id: next_id(&friend, hop),
                    type_code: seed_rec.type_code,
                    title: seed_rec.title.clone(),
                    content: seed_rec.content.clone(),
                    sender_id: holder.recipient_id.clone(),
                    recipient_id: friend.clone(),
                    state: RecState::Sent,
                    hop: holder.hop + 1,
                    parent_rec_id: Some(holder.rec_id.clone()),
                    orphaned: false,
                };
                reached.insert(friend, hop);
                next.push(child);
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| a.recipient_id.cmp(&b.recipient_id));
        children.extend(next.iter().cloned());
        frontier = next;
    }

    Ok(Diffusion {
        report: DiffusionReport {
            seed: seed.clone(),
            reached,
            eligible_filtered: filtered,
            max_hops,
        },
        children,
    })
}

/// Offer a service type to `entry` and let it spread from there, exactly as
/// [`snowball`] does for a recommendation the entry user already holds.
pub fn nominate_service_to_user(
    g: &SocialGraph,
    service_type: TypeCode,
    entry: &UserId,
    max_hops: u32,
    eligibility: &RuleSet,
    profiles: &impl ProfileLookup,
    next_id: impl FnMut(&UserId, u32) -> RecId,
) -> Result<Diffusion, DiffusionError> {
    let synthetic = Recommendation {
        rec_id: RecId::new(format!("svc.{}", service_type)).expect("valid id"),
        type_code: service_type,
        title: service_type.label().to_owned(),
        content: String::new(),
        sender_id: entry.clone(),
        recipient_id: entry.clone(),
        state: RecState::Sent,
        hop: 0,
        parent_rec_id: None,
        orphaned: false,
    };
    snowball(g, &synthetic, max_hops, eligibility, profiles, next_id)
}

/// Sequential child ids `<prefix>.<n>`, shortened to fit the id limit.
pub fn sequential_ids(prefix: &str) -> impl FnMut(&UserId, u32) -> RecId {
    let stem: String = prefix.chars().take(50).collect();
    let mut n = 0u64;
    move |_, _| {
        n += 1;
        RecId::new(format!("{stem}.{n}")).expect("valid id")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ArcKind, Endpoint, Node};
    use crate::ids::{DeviceId, NodeId};
    use crate::profile::UserProfile;

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn rec(state: RecState) -> Recommendation {
        Recommendation {
            rec_id: RecId::new("r1").unwrap(),
            type_code: TypeCode::new(27).unwrap(),
            title: "t".into(),
            content: "c".into(),
            sender_id: uid("a"),
            recipient_id: uid("b"),
            state,
            hop: 0,
            parent_rec_id: None,
            orphaned: false,
        }
    }

    fn nid() -> NotificationId {
        NotificationId::new("n1").unwrap()
    }

    #[test]
    fn first_edge_notifies_sender() {
        let (next, n) = transition(&rec(RecState::Created), RecState::Sent, Timestamp(3), nid()).unwrap();
        assert_eq!(next.state, RecState::Sent);
        assert_eq!(n.recipient, uid("a"));
        assert_eq!((n.old_state, n.new_state), (RecState::Created, RecState::Sent));
    }

    #[test]
    fn illegal_and_terminal() {
        assert_eq!(
            transition(&rec(RecState::Viewed), RecState::Sent, Timestamp(0), nid()).unwrap_err(),
            TransitionError::Illegal { from: RecState::Viewed, to: RecState::Sent }
        );
        for to in RecState::ALL {
            assert_eq!(
                transition(&rec(RecState::Accepted), to, Timestamp(0), nid()).unwrap_err(),
                TransitionError::Terminal { state: RecState::Accepted }
            );
        }
    }

    #[test]
    fn orphans_do_not_move() {
        let mut r = rec(RecState::Sent);
        r.orphaned = true;
        assert!(matches!(
            transition(&r, RecState::Delivered, Timestamp(0), nid()),
            Err(TransitionError::Orphaned(_))
        ));
    }

    fn graph(users: &[&str], edges: &[(&str, &str)]) -> SocialGraph {
        let mut g = SocialGraph::new();
        for u in users {
            g.add_node(Node {
                node_id: NodeId::new(format!("n{u}")).unwrap(),
                user_id: uid(u),
                device_id: DeviceId::new("tv").unwrap(),
            })
            .unwrap();
        }
        for (a, b) in edges {
            g.add_interaction(
                ArcKind::UserUser,
                NodeId::new(format!("n{a}")).unwrap(),
                Endpoint::Node(NodeId::new(format!("n{b}")).unwrap()),
                Timestamp(0),
            )
            .unwrap();
        }
        g
    }

    fn women(users: &[&str]) -> BTreeMap<UserId, UserProfile> {
        users
            .iter()
            .map(|u| {
                (
                    uid(u),
                    UserProfile {
                        user_id: uid(u),
                        name: u.to_string(),
                        gender_code: 1,
                        age: 30,
                        activity_prefs: BTreeSet::new(),
                        photo_ref: None,
                    },
                )
            })
            .collect()
    }

    fn seeded(user: &str) -> Recommendation {
        let mut r = rec(RecState::Sent);
        r.recipient_id = uid(user);
        r
    }

    fn hops(pairs: &[(&str, u32)]) -> BTreeMap<UserId, u32> {
        pairs.iter().map(|(u, h)| (uid(u), *h)).collect()
    }

    #[test]
    fn zero_hops_reaches_nobody() {
        let g = graph(&["a", "b"], &[("a", "b")]);
        let d = snowball(&g, &seeded("a"), 0, &crate::rules::default_rules(), &women(&["a", "b"]), sequential_ids("x"))
            .unwrap();
        assert!(d.report.reached.is_empty());
        assert!(d.children.is_empty());
    }

    #[test]
    fn chain() {
        let users = ["a", "b", "c"];
        let g = graph(&users, &[("a", "b"), ("b", "c")]);
        let d = snowball(&g, &seeded("a"), 2, &crate::rules::default_rules(), &women(&users), sequential_ids("x"))
            .unwrap();
        assert_eq!(d.report.reached, hops(&[("b", 1), ("c", 2)]));
        assert_eq!(d.children.len(), 2);
        assert_eq!(d.children[1].parent_rec_id, Some(d.children[0].rec_id.clone()));
        assert_eq!(d.children[1].hop, 2);
        assert_eq!(d.children[1].sender_id, uid("b"));
        assert!(d.children.iter().all(|c| c.state == RecState::Sent));
    }

    #[test]
    fn star_from_leaf() {
        let users = ["hub", "l1", "l2", "l3", "l4"];
        let g = graph(&users, &[("hub", "l1"), ("hub", "l2"), ("hub", "l3"), ("hub", "l4")]);
        let d = snowball(&g, &seeded("l1"), 2, &crate::rules::default_rules(), &women(&users), sequential_ids("x"))
            .unwrap();
        assert_eq!(d.report.reached, hops(&[("hub", 1), ("l2", 2), ("l3", 2), ("l4", 2)]));
    }

    #[test]
    fn unknown_seed() {
        let g = graph(&["a"], &[]);
        let err = snowball(&g, &seeded("zz"), 1, &RuleSet::default(), &women(&[]), sequential_ids("x"))
            .unwrap_err();
        assert_eq!(err, DiffusionError::UnknownUser(uid("zz")));
    }

    #[test]
    fn nomination_in_a_clique() {
        let users = ["a", "b", "c"];
        let g = graph(&users, &[("a", "b"), ("b", "c"), ("a", "c")]);
        let women27 = TypeCode::new(27).unwrap();
        let d = nominate_service_to_user(&g, women27, &uid("a"), 1, &crate::rules::default_rules(), &women(&users), sequential_ids("x"))
            .unwrap();
        assert_eq!(d.report.reached, hops(&[("b", 1), ("c", 1)]));

        let men26 = TypeCode::new(26).unwrap();
        let d = nominate_service_to_user(&g, men26, &uid("a"), 1, &crate::rules::default_rules(), &women(&users), sequential_ids("x"))
            .unwrap();
        assert!(d.report.reached.is_empty());
        assert_eq!(d.report.eligible_filtered, 2);

        let lone = graph(&["a"], &[]);
        let d = nominate_service_to_user(&lone, women27, &uid("a"), 3, &crate::rules::default_rules(), &women(&["a"]), sequential_ids("x"))
            .unwrap();
        assert!(d.report.reached.is_empty());
    }

    #[test]
    fn ineligible_users_block_propagation() {
        let users = ["a", "b", "c"];
        let g = graph(&users, &[("a", "b"), ("b", "c")]);
        let mut profiles = women(&users);
        profiles.get_mut(&uid("b")).unwrap().gender_code = 0;
        let d = snowball(&g, &seeded("a"), 5, &crate::rules::default_rules(), &profiles, sequential_ids("x"))
            .unwrap();
        assert!(d.report.reached.is_empty());
        assert_eq!(d.report.eligible_filtered, 1);
    }

    #[test]
    fn coverage_and_csv() {
        let report = DiffusionReport {
            seed: uid("a"),
            reached: hops(&[("b", 1), ("c", 2)]),
            eligible_filtered: 0,
            max_hops: 3,
        };
        let cov: Vec<(u32, usize)> = report.coverage().into_iter().collect();
        assert_eq!(cov, vec![(1, 1), (2, 1), (3, 0)]);
        let csv = report.to_csv();
        assert_eq!(csv, "user,hop\nb,1\nc,2\n");
        assert_eq!(DiffusionReport::reached_from_csv(&csv).unwrap(), report.reached);
    }
}
