//! Core domain types and file formats.
//!
//! * [`FeatureTable`]: one row per record, demographics plus named features
//!   (CSV, see [`table`]).
//! * [`EpochSet`]: component time series of one record, stored as a
//!   `key=value` manifest plus a little-endian `f32` payload (see [`epochs`]).
//! * [`CohortManifest`]: per-site, per-group demographic summary.

pub mod bands;
pub mod epochs;
pub mod manifest;
pub mod names;
pub mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bands::{Band, BandScheme};
pub use epochs::{load_epochs, write_epochs, EpochSet};
pub use manifest::{manifest, CohortManifest, ManifestRow};
pub use names::FeatureName;
pub use table::{load_feature_table, write_feature_table, FeatureTable, LoadOptions};

/// Diagnostic group. `HC` is class index 0, `ACr` class index 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    HC,
    ACr,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::HC, Group::ACr];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::HC => "HC",
            Group::ACr => "ACr",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Group::HC => 0,
            Group::ACr => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Group> {
        match i {
            0 => Some(Group::HC),
            1 => Some(Group::ACr),
            _ => None,
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::HC => Group::ACr,
            Group::ACr => Group::HC,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "HC" => Ok(Group::HC),
            "ACr" => Ok(Group::ACr),
            other => Err(format!("group must be HC or ACr, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
        }
    }

    /// Numeric coding used by every regression in the crate: F = 0, M = 1.
    pub fn code(self) -> f64 {
        match self {
            Sex::F => 0.0,
            Sex::M => 1.0,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(format!("sex must be F or M, got `{other}`")),
        }
    }
}

/// Demographics and labels of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub subject_id: String,
    pub site: String,
    pub group: Group,
    pub age: f64,
    pub sex: Sex,
}

impl RecordMeta {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::Validation("empty subject_id".into()));
        }
        if self.site.is_empty() {
            return Err(Error::Validation(format!(
                "record `{}` has an empty site",
                self.subject_id
            )));
        }
        if !(self.age > 0.0 && self.age < 120.0) {
            return Err(Error::Validation(format!(
                "record `{}` has age {} outside (0, 120)",
                self.subject_id, self.age
            )));
        }
        for (field, value) in [("subject_id", &self.subject_id), ("site", &self.site)] {
            if value.contains([',', '"', '\n', '\r', '=']) {
                return Err(Error::Validation(format!(
                    "{field} `{value}` contains a reserved character"
                )));
            }
        }
        Ok(())
    }
}

/// Numeric class labels (HC = 0, ACr = 1) for a slice of records.
pub fn class_labels(records: &[RecordMeta]) -> Vec<usize> {
    records.iter().map(|r| r.group.index()).collect()
}
