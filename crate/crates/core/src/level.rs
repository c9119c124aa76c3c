use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Failure granularity a detector watches for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// An error inside a single reasoning step.
    Intra,
    /// Looping or stagnation across steps.
    Inter,
    /// Over-thinking on an easy instance.
    Inst,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Intra, Level::Inter, Level::Inst];

    /// Feature dimension consumed by this level's detector.
    pub const fn dim(self) -> usize {
        match self {
            Level::Intra => 3,
            Level::Inter | Level::Inst => 2,
        }
    }

    pub const fn index(self) -> usize {
        match self {
            Level::Intra => 0,
            Level::Inter => 1,
            Level::Inst => 2,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Level::Intra => "intra",
            Level::Inter => "inter",
            Level::Inst => "inst",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self.index() as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Level> {
        Level::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "intra" => Ok(Level::Intra),
            "inter" => Ok(Level::Inter),
            "inst" | "instance" => Ok(Level::Inst),
            other => Err(Error::InvalidInput(format!("unknown level '{other}'"))),
        }
    }
}

/// One value per level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerLevel<T> {
    pub intra: T,
    pub inter: T,
    pub inst: T,
}

impl<T> PerLevel<T> {
    pub fn new(intra: T, inter: T, inst: T) -> Self {
        Self { intra, inter, inst }
    }

    pub fn from_fn(mut f: impl FnMut(Level) -> T) -> Self {
        Self { intra: f(Level::Intra), inter: f(Level::Inter), inst: f(Level::Inst) }
    }

    pub fn get(&self, level: Level) -> &T {
        match level {
            Level::Intra => &self.intra,
            Level::Inter => &self.inter,
            Level::Inst => &self.inst,
        }
    }

    pub fn get_mut(&mut self, level: Level) -> &mut T {
        match level {
            Level::Intra => &mut self.intra,
            Level::Inter => &mut self.inter,
            Level::Inst => &mut self.inst,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(Level, T) -> U) -> PerLevel<U> {
        PerLevel { intra: f(Level::Intra, self.intra), inter: f(Level::Inter, self.inter), inst: f(Level::Inst, self.inst) }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Level, &T)> {
        Level::ALL.into_iter().map(move |l| (l, self.get(l)))
    }
}

impl<T> std::ops::Index<Level> for PerLevel<T> {
    type Output = T;

    fn index(&self, level: Level) -> &T {
        self.get(level)
    }
}

impl<T> std::ops::IndexMut<Level> for PerLevel<T> {
    fn index_mut(&mut self, level: Level) -> &mut T {
        self.get_mut(level)
    }
}
