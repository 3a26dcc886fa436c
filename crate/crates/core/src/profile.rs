//! Profile vocabulary: user, group, device, context and social profiles,
//! plus the 27-entry recommendation taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{DeviceId, GroupId, ServiceId, Timestamp, UserId};

/// Labels of the recommendation taxonomy, indexed by `code - 1`.
pub const TYPE_LABELS: [&str; 27] = [
    "Academic-elementary",
    "Academic-high school",
    "Academic-undergraduate",
    "Academic-Postgraduate",
    "Sport",
    "Esthetics",
    "Movies",
    "News",
    "Information",
    "Food",
    "Music",
    "Religion",
    "Adults",
    "Health",
    "Home",
    "Technology",
    "Child games",
    "Teenage games",
    "Culture",
    "Events",
    "General academic",
    "Babies clothing",
    "Boys clothing",
    "Girls clothing",
    "Teenagers clothing",
    "Men clothing",
    "Women clothing",
];

pub const MIN_TYPE_CODE: u8 = 1;
pub const MAX_TYPE_CODE: u8 = 27;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("recommendation type code {0} is outside 1..=27")]
    TypeCodeOutOfRange(i64),
    #[error("unknown recommendation type label `{0}`")]
    UnknownLabel(String),
}

/// A recommendation type, guaranteed to lie in `1..=27`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct TypeCode(u8);

impl TypeCode {
    pub fn new(code: i64) -> Result<Self, ProfileError> {
        if (MIN_TYPE_CODE as i64..=MAX_TYPE_CODE as i64).contains(&code) {
            Ok(TypeCode(code as u8))
        } else {
            Err(ProfileError::TypeCodeOutOfRange(code))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        TYPE_LABELS[self.0 as usize - 1]
    }

    pub fn from_label(label: &str) -> Result<Self, ProfileError> {
        TYPE_LABELS
            .iter()
            .position(|l| *l == label)
            .map(|i| TypeCode(i as u8 + 1))
            .ok_or_else(|| ProfileError::UnknownLabel(label.to_owned()))
    }

    pub fn all() -> impl Iterator<Item = TypeCode> {
        (MIN_TYPE_CODE..=MAX_TYPE_CODE).map(TypeCode)
    }
}

impl TryFrom<i64> for TypeCode {
    type Error = ProfileError;
    fn try_from(code: i64) -> Result<Self, ProfileError> {
        TypeCode::new(code)
    }
}

impl From<TypeCode> for u8 {
    fn from(code: TypeCode) -> u8 {
        code.0
    }
}

impl fmt::Display for TypeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Label of a recommendation type code.
pub fn type_label(code: i64) -> Result<&'static str, ProfileError> {
    TypeCode::new(code).map(TypeCode::label)
}

/// Gender coding used by the association rules: 0 = male, 1 = female.
pub const GENDER_MALE: i32 = 0;
pub const GENDER_FEMALE: i32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub name: String,
    pub gender_code: i32,
    pub age: i32,
    #[serde(default)]
    pub activity_prefs: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileViolation {
    #[error("gender_code {0} out of range (expected 0 or 1)")]
    GenderOutOfRange(i32),
    #[error("age {0} is negative")]
    NegativeAge(i32),
}

/// Checks every user-profile invariant that can be decided locally.
/// Uniqueness of `user_id` is the store's business.
pub fn validate_profile(p: &UserProfile) -> Result<(), Vec<ProfileViolation>> {
    let mut errors = Vec::new();
    if p.gender_code != GENDER_MALE && p.gender_code != GENDER_FEMALE {
        errors.push(ProfileViolation::GenderOutOfRange(p.gender_code));
    }
    if p.age < 0 {
        errors.push(ProfileViolation::NegativeAge(p.age));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupOrigin {
    SystemGenerated,
    UserCreated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub group_id: GroupId,
    pub topic: String,
    #[serde(default)]
    pub member_ids: BTreeSet<UserId>,
    pub origin: GroupOrigin,
    #[serde(default)]
    pub preference_codes: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupViolation {
    #[error("user-created group `{0}` has no members")]
    EmptyUserGroup(GroupId),
}

pub fn validate_group(g: &GroupProfile) -> Result<(), GroupViolation> {
    if g.origin == GroupOrigin::UserCreated && g.member_ids.is_empty() {
        return Err(GroupViolation::EmptyUserGroup(g.group_id.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenClass {
    Tv,
    Mobile,
    Desktop,
}

/// Fixed five-field reduction of a CC/PP capability document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub screen_class: ScreenClass,
    pub image_support: bool,
    pub max_list_items: u32,
    pub max_payload_bytes: u32,
}

pub const MIN_PAYLOAD_BYTES: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceViolation {
    #[error("max_list_items must be at least 1")]
    NoListItems,
    #[error("max_payload_bytes {0} is below the {MIN_PAYLOAD_BYTES}-byte floor")]
    PayloadTooSmall(u32),
}

pub fn validate_device(d: &DeviceProfile) -> Result<(), Vec<DeviceViolation>> {
    let mut errors = Vec::new();
    if d.max_list_items < 1 {
        errors.push(DeviceViolation::NoListItems);
    }
    if d.max_payload_bytes < MIN_PAYLOAD_BYTES {
        errors.push(DeviceViolation::PayloadTooSmall(d.max_payload_bytes));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProgramWatched,
    ServiceUsed,
    RecommendationViewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEvent {
    pub user_id: UserId,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    pub timestamp: Timestamp,
}

/// Everything counted in a social profile: arc kinds and context event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    UserUser,
    UserGroup,
    UserService,
    Resource,
    ProgramWatched,
    ServiceUsed,
    RecommendationViewed,
}

impl From<EventKind> for InteractionKind {
    fn from(kind: EventKind) -> Self {
        match kind {
            EventKind::ProgramWatched => InteractionKind::ProgramWatched,
            EventKind::ServiceUsed => InteractionKind::ServiceUsed,
            EventKind::RecommendationViewed => InteractionKind::RecommendationViewed,
        }
    }
}

/// Derived view of a user's activity. Recomputable from arcs and events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialProfile {
    pub user_id: UserId,
    #[serde(default)]
    pub interaction_counters: BTreeMap<InteractionKind, u64>,
    pub last_active: Timestamp,
}

impl SocialProfile {
    pub fn new(user_id: UserId) -> Self {
        SocialProfile {
            user_id,
            interaction_counters: BTreeMap::new(),
            last_active: Timestamp::default(),
        }
    }

    pub fn bump(&mut self, kind: InteractionKind, at: Timestamp) {
        *self.interaction_counters.entry(kind).or_insert(0) += 1;
        self.last_active = self.last_active.max(at);
    }

    /// Undo one `bump`. Zero counters are removed so that recomputed and
    /// incrementally maintained profiles compare equal.
    pub fn unbump(&mut self, kind: InteractionKind) {
        if let Some(count) = self.interaction_counters.get_mut(&kind) {
            *count = count.saturating_sub(1);
            if *count == 0 {
                self.interaction_counters.remove(&kind);
            }
        }
    }

    pub fn count(&self, kind: InteractionKind) -> u64 {
        self.interaction_counters.get(&kind).copied().unwrap_or(0)
    }
}

/// A service that users can interact with (UserService arcs point here).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub service_id: ServiceId,
    pub name: String,
}

/// Read access to user profiles, for code that evaluates rules per user.
pub trait ProfileLookup {
    fn profile(&self, id: &UserId) -> Option<&UserProfile>;
}

impl ProfileLookup for BTreeMap<UserId, UserProfile> {
    fn profile(&self, id: &UserId) -> Option<&UserProfile> {
        self.get(id)
    }
}

impl ProfileLookup for std::collections::HashMap<UserId, UserProfile> {
    fn profile(&self, id: &UserId) -> Option<&UserProfile> {
        self.get(id)
    }
}

pub trait DeviceLookup {
    fn device(&self, id: &DeviceId) -> Option<&DeviceProfile>;
}

impl DeviceLookup for BTreeMap<DeviceId, DeviceProfile> {
    fn device(&self, id: &DeviceId) -> Option<&DeviceProfile> {
        self.get(id)
    }
}
