//! Fixed association rules mapping (gender, age, activity preference) to
//! recommendation types, and context-aware ranking of the matched types.
//!
//! Rule files hold one rule per line:
//!
//! ```text
//! gender=<0|1|*> age=<lo>..<hi>|<lo>..|>N pref=<code|*> => <type-code>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{ContextEvent, EventKind, TypeCode, UserProfile};

/// The shipped default rule file.
pub const DEFAULT_RULES_TEXT: &str = include_str!("../rules/default.rules");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AgeRange {
    /// `lo..=hi`
    Between { lo: u32, hi: u32 },
    /// `lo..`, no upper bound.
    AtLeast { lo: u32 },
    /// Strictly greater than the bound.
    GreaterThan { bound: u32 },
}

impl AgeRange {
    pub fn contains(&self, age: i32) -> bool {
        if age < 0 {
            return false;
        }
        let age = age as u32;
        match *self {
            AgeRange::Between { lo, hi } => lo <= age && age <= hi,
            AgeRange::AtLeast { lo } => age >= lo,
            AgeRange::GreaterThan { bound } => age > bound,
        }
    }

    pub fn is_empty(&self) -> bool {
        match *self {
            AgeRange::Between { lo, hi } => lo > hi,
            AgeRange::AtLeast { .. } => false,
            AgeRange::GreaterThan { bound } => bound == u32::MAX,
        }
    }
}

impl fmt::Display for AgeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AgeRange::Between { lo, hi } => write!(f, "{lo}..{hi}"),
            AgeRange::AtLeast { lo } => write!(f, "{lo}.."),
            AgeRange::GreaterThan { bound } => write!(f, ">{bound}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssociationRule {
    pub gender_cond: Option<i32>,
    pub age_range: AgeRange,
    pub pref_cond: Option<u32>,
    pub consequent: TypeCode,
}

impl AssociationRule {
    /// A rule with no preference condition ignores preferences entirely.
    pub fn matches(&self, p: &UserProfile) -> bool {
        if let Some(g) = self.gender_cond {
            if p.gender_code != g {
                return false;
            }
        }
        if !self.age_range.contains(p.age) {
            return false;
        }
        match self.pref_cond {
            Some(code) => p.activity_prefs.contains(&code),
            None => true,
        }
    }
}

impl fmt::Display for AssociationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gender_cond {
            Some(g) => write!(f, "gender={g}")?,
            None => f.write_str("gender=*")?,
        }
        write!(f, " age={}", self.age_range)?;
        match self.pref_cond {
            Some(p) => write!(f, " pref={p}")?,
            None => f.write_str(" pref=*")?,
        }
        write!(f, " => {}", self.consequent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

fn syntax(line: usize, message: impl Into<String>) -> RuleParseError {
    RuleParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_age(raw: &str, line: usize) -> Result<AgeRange, RuleParseError> {
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| syntax(line, format!("bad age bound `{s}`")))
    };
    let range = if let Some(bound) = raw.strip_prefix('>') {
        AgeRange::GreaterThan { bound: num(bound)? }
    } else if let Some((lo, hi)) = raw.split_once("..") {
        if hi.is_empty() {
            AgeRange::AtLeast { lo: num(lo)? }
        } else {
            AgeRange::Between {
                lo: num(lo)?,
                hi: num(hi)?,
            }
        }
    } else {
        return Err(syntax(line, format!("bad age range `{raw}`")));
    };
    if range.is_empty() {
        return Err(syntax(line, format!("empty age range `{raw}`")));
    }
    Ok(range)
}

fn parse_rule(text: &str, line: usize) -> Result<AssociationRule, RuleParseError> {
    let (lhs, rhs) = text
        .rsplit_once("=>")
        .ok_or_else(|| syntax(line, "missing `=>`"))?;
    let code: i64 = rhs
        .trim()
        .parse()
        .map_err(|_| syntax(line, format!("bad type code `{}`", rhs.trim())))?;
    let consequent = TypeCode::new(code).map_err(|e| syntax(line, e.to_string()))?;

    let mut gender_cond = None;
    let mut age_range = None;
    let mut pref_cond = None;
    for token in lhs.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected key=value, got `{token}`")))?;
        match key {
            "gender" => {
                gender_cond = match value {
                    "*" => None,
                    "0" => Some(0),
                    "1" => Some(1),
                    other => return Err(syntax(line, format!("bad gender `{other}`"))),
                }
            }
            "age" => age_range = Some(parse_age(value, line)?),
            "pref" => {
                pref_cond = match value {
                    "*" => None,
                    v => Some(
                        v.parse::<u32>()
                            .map_err(|_| syntax(line, format!("bad preference code `{v}`")))?,
                    ),
                }
            }
            other => return Err(syntax(line, format!("unknown field `{other}`"))),
        }
    }
    let age_range = age_range.ok_or_else(|| syntax(line, "missing age condition"))?;
    Ok(AssociationRule {
        gender_cond,
        age_range,
        pref_cond,
        consequent,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<AssociationRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<AssociationRule>) -> Self {
        RuleSet { rules }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, RuleParseError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            rules.push(parse_rule(trimmed, idx + 1)?);
        }
        Ok(RuleSet { rules })
    }

    /// Rule-file text, one rule per line with a trailing newline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            out.push_str(&rule.to_string());
            out.push('\n');
        }
        out
    }
}

impl FromStr for RuleSet {
    type Err = RuleParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleSet::parse(s)
    }
}

fn rule(gender: Option<i32>, age: AgeRange, pref: Option<u32>, code: u8) -> AssociationRule {
    AssociationRule {
        gender_cond: gender,
        age_range: age,
        pref_cond: pref,
        consequent: TypeCode::new(code as i64).expect("table codes are in range"),
    }
}

/// The 24 published rows: the 11 (gender, age) rules, then the 13
/// (age, preference) rules. "X a Y" is inclusive, ">N" is strict.
pub fn default_rules() -> RuleSet {
    use AgeRange::{Between, GreaterThan};
    let b = |lo, hi| Between { lo, hi };
    let gt = |bound| GreaterThan { bound };
    RuleSet::new(vec![
        rule(Some(0), b(0, 10), None, 17),
        rule(Some(0), b(11, 30), None, 18),
        rule(Some(1), b(19, 60), None, 6),
        rule(Some(0), b(0, 3), None, 22),
        rule(Some(0), b(4, 10), None, 23),
        rule(Some(0), b(11, 18), None, 25),
        rule(Some(0), gt(19), None, 26),
        rule(Some(1), b(0, 3), None, 22),
        rule(Some(1), b(4, 10), None, 24),
        rule(Some(1), b(11, 18), None, 25),
        rule(Some(1), gt(19), None, 27),
        rule(None, b(7, 40), Some(3), 5),
        rule(None, b(7, 40), Some(0), 5),
        rule(None, b(7, 40), Some(1), 5),
        rule(None, b(7, 40), Some(0), 7),
        rule(None, b(7, 40), Some(1), 7),
        rule(None, b(7, 10), None, 1),
        rule(None, b(11, 18), None, 2),
        rule(None, b(19, 40), None, 3),
        rule(None, b(19, 50), None, 4),
        rule(None, b(7, 50), None, 21),
        rule(None, b(11, 50), None, 16),
        rule(None, gt(18), None, 8),
        rule(None, gt(18), None, 9),
    ])
}

/// Union of the consequents of every rule whose conditions all hold.
pub fn match_rules(p: &UserProfile, rs: &RuleSet) -> BTreeSet<TypeCode> {
    rs.rules
        .iter()
        .filter(|r| r.matches(p))
        .map(|r| r.consequent)
        .collect()
}

/// Orders candidates so that types whose label equals the genre of a
/// recent `ProgramWatched` event come first; ties by ascending code.
pub fn rank_candidates(candidates: &BTreeSet<TypeCode>, recent: &[ContextEvent]) -> Vec<TypeCode> {
    let watched: BTreeSet<&str> = recent
        .iter()
        .filter(|e| e.kind == EventKind::ProgramWatched)
        .filter_map(|e| e.genre.as_deref())
        .collect();
    let mut ranked: Vec<TypeCode> = candidates.iter().copied().collect();
    ranked.sort_by_key(|code| (!watched.contains(code.label()), *code));
    ranked
}
