use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::discretize::{HourId, RegionId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeywordId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// The four kinds of units that share the embedding space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Region,
    Hour,
    Keyword,
    User,
}

impl Modality {
    /// Fixed order used by snapshots and anything else that iterates modalities.
    pub const ALL: [Modality; 4] = [
        Modality::Region,
        Modality::Hour,
        Modality::Keyword,
        Modality::User,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Region => "region",
            Modality::Hour => "hour",
            Modality::Keyword => "keyword",
            Modality::User => "user",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Modality::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A modality-tagged row index into one of the embedding tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub modality: Modality,
    pub index: u32,
}

impl UnitId {
    pub fn new(modality: Modality, index: u32) -> Self {
        UnitId { modality, index }
    }

    pub fn row(self) -> usize {
        self.index as usize
    }
}

impl From<RegionId> for UnitId {
    fn from(r: RegionId) -> Self {
        UnitId::new(Modality::Region, r.0)
    }
}

impl From<HourId> for UnitId {
    fn from(h: HourId) -> Self {
        UnitId::new(Modality::Hour, h.0 as u32)
    }
}

impl From<KeywordId> for UnitId {
    fn from(w: KeywordId) -> Self {
        UnitId::new(Modality::Keyword, w.0)
    }
}

impl From<UserId> for UnitId {
    fn from(u: UserId) -> Self {
        UnitId::new(Modality::User, u.0)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.modality, self.index)
    }
}
