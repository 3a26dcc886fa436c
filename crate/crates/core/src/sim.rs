//! Synthetic populations and diffusion experiments.
//!
//! A distribution spec is a line-oriented text:
//!
//! ```text
//! # weighted age buckets, inclusive
//! age 0..17 1
//! age 18..64 3
//! # probability of gender code 1
//! gender1 0.5
//! # independent probability per preference code
//! pref 3 0.4
//! # weighted device classes
//! device tv 3
//! device mobile 1
//! ```

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::{nominate_service_to_user, sequential_ids, DiffusionError, DiffusionReport};
use crate::graph::{Arc, ArcKind, Endpoint, Node};
use crate::ids::{DeviceId, NodeId, Timestamp, UserId};
use crate::profile::{DeviceProfile, ScreenClass, TypeCode, UserProfile};
use crate::rules::RuleSet;
use crate::store::{Credential, Dataset, Record};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeBucket {
    pub lo: i32,
    pub hi: i32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSpec {
    pub ages: Vec<AgeBucket>,
    pub gender1: f64,
    pub prefs: BTreeMap<u32, f64>,
    pub devices: Vec<(ScreenClass, f64)>,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec {
            ages: vec![AgeBucket {
                lo: 0,
                hi: 100,
                weight: 1.0,
            }],
            gender1: 0.5,
            prefs: [(0, 0.3), (1, 0.3), (3, 0.3)].into(),
            devices: vec![(ScreenClass::Tv, 1.0)],
        }
    }
}

fn screen_class(raw: &str) -> Option<ScreenClass> {
    match raw {
        "tv" => Some(ScreenClass::Tv),
        "mobile" => Some(ScreenClass::Mobile),
        "desktop" => Some(ScreenClass::Desktop),
        _ => None,
    }
}

fn class_name(c: ScreenClass) -> &'static str {
    match c {
        ScreenClass::Tv => "tv",
        ScreenClass::Mobile => "mobile",
        ScreenClass::Desktop => "desktop",
    }
}

/// Capabilities shared by every seeded device of a class.
pub fn class_device(c: ScreenClass) -> DeviceProfile {
    let (items, bytes) = match c {
        ScreenClass::Tv => (8, 16 * 1024),
        ScreenClass::Mobile => (5, 4 * 1024),
        ScreenClass::Desktop => (20, 64 * 1024),
    };
    DeviceProfile {
        device_id: DeviceId::new(format!("dev.{}", class_name(c))).expect("valid id"),
        screen_class: c,
        image_support: true,
        max_list_items: items,
        max_payload_bytes: bytes,
    }
}

impl DistributionSpec {
    /// Sections absent from `text` keep their defaults.
    pub fn parse(text: &str) -> Result<DistributionSpec, SimError> {
        let mut spec = DistributionSpec::default();
        let (mut ages, mut prefs, mut devices) = (Vec::new(), None::<BTreeMap<u32, f64>>, Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SimError::Spec { line: idx + 1, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64, SimError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| err(format!("bad number `{s}`")))
            };
            let prob = |s: &str| -> Result<f64, SimError> {
                let v = num(s)?;
                if v > 1.0 {
                    return Err(err(format!("probability `{s}` above 1")));
                }
                Ok(v)
            };
            match words.as_slice() {
                ["age", range, weight] => {
                    let (lo, hi) = range
                        .split_once("..")
                        .and_then(|(a, b)| Some((a.parse::<i32>().ok()?, b.parse::<i32>().ok()?)))
                        .filter(|(lo, hi)| *lo >= 0 && lo <= hi)
                        .ok_or_else(|| err(format!("bad age range `{range}`")))?;
                    ages.push(AgeBucket {
                        lo,
                        hi,
                        weight: num(weight)?,
                    });
                }
                ["gender1", p] => spec.gender1 = prob(p)?,
                ["pref", code, p] => {
                    let code = code.parse::<u32>().map_err(|_| err(format!("bad preference code `{code}`")))?;
                    prefs.get_or_insert_with(BTreeMap::new).insert(code, prob(p)?);
                }
                ["device", class, weight] => {
                    let c = screen_class(class).ok_or_else(|| err(format!("unknown device class `{class}`")))?;
                    devices.push((c, num(weight)?));
                }
                _ => return Err(err(format!("unrecognised line `{line}`"))),
            }
        }
        if !ages.is_empty() {
            spec.ages = ages;
        }
        if let Some(p) = prefs {
            spec.prefs = p;
        }
        if !devices.is_empty() {
            spec.devices = devices;
        }
        if spec.ages.iter().map(|b| b.weight).sum::<f64>() <= 0.0 {
            return Err(SimError::Spec { line: 0, message: "age weights sum to zero".into() });
        }
        if spec.devices.iter().map(|d| d.1).sum::<f64>() <= 0.0 {
            return Err(SimError::Spec { line: 0, message: "device weights sum to zero".into() });
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedParams {
    pub population: usize,
    pub density: f64,
    pub random_seed: u64,
    pub spec: DistributionSpec,
}

/// Names cycled through for seeded users.
const FIRST_NAMES: [&str; 12] = [
    "Ana", "Juan", "Mery", "Luis", "Carmen", "Pablo", "Rosa", "Diego", "Elena", "Jorge", "Lucia", "Mateo",
];

/// A reproducible population: users with credentials, one node each on a
/// class device, and each unordered pair befriended with probability
/// `density`.
pub fn generate(params: &SeedParams) -> Result<Vec<Record>, SimError> {
    if params.population < 1 {
        return Err(SimError::Param("population size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&params.density) {
        return Err(SimError::Param(format!("density {} outside [0, 1]", params.density)));
    }
    let spec = &params.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(params.random_seed);
    let age_pick = WeightedIndex::new(spec.ages.iter().map(|b| b.weight))
        .map_err(|e| SimError::Param(format!("age weights: {e}")))?;
    let device_pick = WeightedIndex::new(spec.devices.iter().map(|d| d.1))
        .map_err(|e| SimError::Param(format!("device weights: {e}")))?;
    let width = params.population.to_string().len().max(4);

    let mut users = Vec::with_capacity(params.population);
    let mut creds = Vec::with_capacity(params.population);
    let mut nodes = Vec::with_capacity(params.population);
    let mut classes = std::collections::BTreeSet::new();
    for i in 1..=params.population {
        let bucket = &spec.ages[age_pick.sample(&mut rng)];
        let age = rng.random_range(bucket.lo..=bucket.hi);
        let gender_code = i32::from(rng.random_bool(spec.gender1));
        let activity_prefs = spec
            .prefs
            .iter()
            .filter(|(_, p)| rng.random_bool(**p))
            .map(|(c, _)| *c)
            .collect();
        let name = format!("{} {i}", FIRST_NAMES[rng.random_range(0..FIRST_NAMES.len())]);
        let class = spec.devices[device_pick.sample(&mut rng)].0;
        let secret = format!("{:032x}", rng.random::<u128>());

        let user_id = UserId::new(format!("u{i:0width$}")).expect("valid id");
        classes.insert(class_name(class));
        nodes.push(Node {
            node_id: NodeId::new(format!("n{i:0width$}")).expect("valid id"),
            user_id: user_id.clone(),
            device_id: class_device(class).device_id,
        });
        creds.push(Credential {
            user_id: user_id.clone(),
            secret,
        });
        users.push(UserProfile {
            user_id,
            name,
            gender_code,
            age,
            activity_prefs,
            photo_ref: None,
        });
    }

    let mut arcs = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if rng.random_bool(params.density) {
                arcs.push(Arc::new(
                    ArcKind::UserUser,
                    nodes[i].node_id.clone(),
                    Endpoint::Node(nodes[j].node_id.clone()),
                    Timestamp(0),
                ));
            }
        }
    }

    let mut out = Vec::new();
    out.extend(users.into_iter().map(Record::User));
    out.extend(creds.into_iter().map(Record::Credential));
    out.extend(
        classes
            .into_iter()
            .filter_map(screen_class)
            .map(|c| Record::Device(class_device(c))),
    );
    out.extend(nodes.into_iter().map(Record::Node));
    out.extend(arcs.into_iter().map(Record::Arc));
    Ok(out)
}

/// Result of one diffusion experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulationRun {
    pub type_code: TypeCode,
    pub coverage: BTreeMap<u32, usize>,
    pub eligible_filtered: usize,
    pub report: DiffusionReport,
}

/// Nominate `type_code` to `seed` and spread it over friendships.
pub fn simulate(
    data: &Dataset,
    seed: &UserId,
    type_code: TypeCode,
    max_hops: u32,
    rules: &RuleSet,
) -> Result<SimulationRun, SimError> {
    let d = nominate_service_to_user(
        data.graph(),
        type_code,
        seed,
        max_hops,
        rules,
        data,
        sequential_ids("sim"),
    )?;
    Ok(SimulationRun {
        type_code,
        coverage: d.report.coverage(),
        eligible_filtered: d.report.eligible_filtered,
        report: d.report,
    })
}

/// Independent runs over the same snapshot, one thread each. Results keep
/// the order of `seeds`.
pub fn simulate_many(
    data: &Dataset,
    seeds: &[UserId],
    type_code: TypeCode,
    max_hops: u32,
    rules: &RuleSet,
) -> Vec<Result<SimulationRun, SimError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|s| scope.spawn(move || simulate(data, s, type_code, max_hops, rules)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("diffusion thread panicked"))
            .collect()
    })
}
