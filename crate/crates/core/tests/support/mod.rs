//! Brute-force oracles and fixtures shared by the integration suites. None of
//! these reuse the library's matching or traversal code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use socialtv::graph::{Arc, ArcKind, Endpoint, Node, SocialGraph};
use socialtv::ids::{DeviceId, GroupId, NodeId, ServiceId, Timestamp, UserId};
use socialtv::profile::UserProfile;

pub const OPEN: i32 = i32::MAX;

/// The association table typed in row by row: (gender, lo, hi, pref, type).
/// `>N` bounds are strict, so `>19` starts at 20.
pub const TABLE: [(Option<i32>, i32, i32, Option<u32>, u8); 24] = [
    (Some(0), 0, 10, None, 17),
    (Some(0), 11, 30, None, 18),
    (Some(1), 19, 60, None, 6),
    (Some(0), 0, 3, None, 22),
    (Some(0), 4, 10, None, 23),
    (Some(0), 11, 18, None, 25),
    (Some(0), 20, OPEN, None, 26),
    (Some(1), 0, 3, None, 22),
    (Some(1), 4, 10, None, 24),
    (Some(1), 11, 18, None, 25),
    (Some(1), 20, OPEN, None, 27),
    (None, 7, 40, Some(3), 5),
    (None, 7, 40, Some(0), 5),
    (None, 7, 40, Some(1), 5),
    (None, 7, 40, Some(0), 7),
    (None, 7, 40, Some(1), 7),
    (None, 7, 10, None, 1),
    (None, 11, 18, None, 2),
    (None, 19, 40, None, 3),
    (None, 19, 50, None, 4),
    (None, 7, 50, None, 21),
    (None, 11, 50, None, 16),
    (None, 19, OPEN, None, 8),
    (None, 19, OPEN, None, 9),
];

/// Row scan over [`TABLE`].
pub fn oracle_match(gender: i32, age: i32, prefs: &BTreeSet<u32>) -> BTreeSet<u8> {
    let mut out = BTreeSet::new();
    for &(g, lo, hi, pref, ty) in TABLE.iter() {
        let g_ok = g.is_none_or(|g| g == gender);
        let age_ok = age >= lo && age <= hi;
        let pref_ok = pref.is_none_or(|p| prefs.contains(&p));
        if g_ok && age_ok && pref_ok {
            out.insert(ty);
        }
    }
    out
}

pub fn uid(i: usize) -> UserId {
    UserId::new(format!("u{i:03}")).unwrap()
}

pub fn nid(i: usize) -> NodeId {
    NodeId::new(format!("n{i:03}")).unwrap()
}

pub fn random_profile(rng: &mut impl Rng, i: usize) -> UserProfile {
    let prefs = [0u32, 1, 3].into_iter().filter(|_| rng.random_bool(0.4)).collect();
    UserProfile {
        user_id: uid(i),
        name: format!("User {i}"),
        gender_code: rng.random_range(0..=1),
        age: rng.random_range(0..=100),
        activity_prefs: prefs,
        photo_ref: None,
    }
}

/// A random population: node `i` belongs to user `i`; every unordered pair
/// is a friendship with probability `density`.
pub struct Fixture {
    pub profiles: BTreeMap<UserId, UserProfile>,
    pub graph: SocialGraph,
    pub edges: Vec<(usize, usize)>,
    pub n: usize,
}

pub fn random_fixture(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Fixture {
    let mut graph = SocialGraph::new();
    let mut profiles = BTreeMap::new();
    for i in 0..n {
        let p = random_profile(rng, i);
        profiles.insert(p.user_id.clone(), p);
        graph
            .add_node(Node {
                node_id: nid(i),
                user_id: uid(i),
                device_id: DeviceId::new("tv").unwrap(),
            })
            .unwrap();
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push((i, j));
                graph
                    .insert_arc(Arc::new(ArcKind::UserUser, nid(i), Endpoint::Node(nid(j)), Timestamp(0)))
                    .unwrap();
            }
        }
    }
    Fixture {
        profiles,
        graph,
        edges,
        n,
    }
}

/// Filtered breadth-first search: the seed holds the item; an eligible
/// user adjacent to a holder at distance d becomes a holder at d + 1.
/// Returns reached hops and the number of distinct ineligible users adjacent
/// to a holder within the hop budget.
pub fn oracle_bfs(
    n: usize,
    edges: &[(usize, usize)],
    eligible: &dyn Fn(usize) -> bool,
    seed: usize,
    max_hops: u32,
) -> (BTreeMap<usize, u32>, usize) {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist: Vec<Option<u32>> = vec![None; n];
    dist[seed] = Some(0);
    let mut queue = VecDeque::from([seed]);
    let mut blocked = BTreeSet::new();
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        if d >= max_hops {
            continue;
        }
        for &v in &adj[u] {
            if v == seed || dist[v].is_some() {
                continue;
            }
            if eligible(v) {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            } else {
                blocked.insert(v);
            }
        }
    }
    let reached = (0..n)
        .filter(|&i| i != seed)
        .filter_map(|i| dist[i].map(|d| (i, d)))
        .collect();
    (reached, blocked.len())
}

/// A graph with groups and services too, for degree checks. Returns the graph
/// and the list of every arc endpoint pair inserted.
pub fn random_mixed_graph(rng: &mut ChaCha8Rng, n: usize) -> (SocialGraph, Vec<(NodeId, Option<NodeId>)>) {
    let mut g = SocialGraph::new();
    for i in 0..n {
        g.add_node(Node {
            node_id: nid(i),
            user_id: uid(i),
            device_id: DeviceId::new("tv").unwrap(),
        })
        .unwrap();
    }
    let groups: Vec<GroupId> = (0..3).map(|i| GroupId::new(format!("g{i}")).unwrap()).collect();
    let services: Vec<ServiceId> = (0..2).map(|i| ServiceId::new(format!("s{i}")).unwrap()).collect();
    for gr in &groups {
        g.register_group(gr.clone());
    }
    for s in &services {
        g.register_service(s.clone());
    }
    let density: f64 = rng.random();
    let mut arcs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                g.insert_arc(Arc::new(ArcKind::UserUser, nid(i), Endpoint::Node(nid(j)), Timestamp(0)))
                    .unwrap();
                arcs.push((nid(i), Some(nid(j))));
            }
        }
        for gr in &groups {
            if rng.random_bool(0.2) {
                g.insert_arc(Arc::new(ArcKind::UserGroup, nid(i), Endpoint::Group(gr.clone()), Timestamp(0)))
                    .unwrap();
                arcs.push((nid(i), None));
            }
        }
        for s in &services {
            if rng.random_bool(0.2) {
                g.insert_arc(Arc::new(ArcKind::UserService, nid(i), Endpoint::Service(s.clone()), Timestamp(0)))
                    .unwrap();
                arcs.push((nid(i), None));
            }
        }
    }
    (g, arcs)
}

/// Degree by counting endpoint occurrences, sorted by degree descending
/// then node id ascending, cut to `k`.
pub fn oracle_central(n: usize, arcs: &[(NodeId, Option<NodeId>)], k: usize) -> Vec<NodeId> {
    let mut degree: BTreeMap<NodeId, usize> = (0..n).map(|i| (nid(i), 0)).collect();
    for (a, b) in arcs {
        *degree.get_mut(a).unwrap() += 1;
        if let Some(b) = b {
            *degree.get_mut(b).unwrap() += 1;
        }
    }
    let mut all: Vec<(NodeId, usize)> = degree.into_iter().collect();
    for i in 0..all.len() {
        for j in 0..all.len() - 1 - i {
            let swap = all[j].1 < all[j + 1].1 || (all[j].1 == all[j + 1].1 && all[j].0 > all[j + 1].0);
            if swap {
                all.swap(j, j + 1);
            }
        }
    }
    all.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Serve `state` on an ephemeral local port; returns the base URL.
pub async fn spawn_server(state: socialtv::api::AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, socialtv::api::router(state)).await.unwrap();
    });
    format!("http://{addr}")
}

/// Users `a`, `b`, `c` on TV nodes with secret `pw-<id>`; friendships
/// a–b and b–c.
pub fn three_user_records() -> Vec<socialtv::store::Record> {
    use socialtv::profile::{DeviceProfile, ScreenClass};
    use socialtv::store::{Credential, Record};
    let mut out = vec![Record::Device(DeviceProfile {
        device_id: DeviceId::new("tv").unwrap(),
        screen_class: ScreenClass::Tv,
        image_support: true,
        max_list_items: 8,
        max_payload_bytes: 8192,
    })];
    for (id, name, gender, age) in [("a", "Ana", 1, 34), ("b", "Mery", 1, 29), ("c", "Juan", 0, 41)] {
        let user = UserId::new(id).unwrap();
        out.push(Record::User(UserProfile {
            user_id: user.clone(),
            name: name.into(),
            gender_code: gender,
            age,
            activity_prefs: BTreeSet::new(),
            photo_ref: Some(format!("photos/{id}.png")),
        }));
        out.push(Record::Credential(Credential {
            user_id: user.clone(),
            secret: format!("pw-{id}"),
        }));
        out.push(Record::Node(Node {
            node_id: NodeId::new(format!("n-{id}")).unwrap(),
            user_id: user,
            device_id: DeviceId::new("tv").unwrap(),
        }));
    }
    for (a, b) in [("n-a", "n-b"), ("n-b", "n-c")] {
        out.push(Record::Arc(Arc::new(
            ArcKind::UserUser,
            NodeId::new(a).unwrap(),
            Endpoint::Node(NodeId::new(b).unwrap()),
            Timestamp(1),
        )));
    }
    out
}
