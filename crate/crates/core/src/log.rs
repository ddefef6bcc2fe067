//! Per-user interaction histories.
//!
//! On disk a log is a JSON array of users, each an array of
//! `{"t": 1, "arm": 2, "reward": 0.31}` records. Rounds and arms are 1-based
//! in files and 0-based for arms in memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One round of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    #[serde(with = "one_based")]
    pub arm: usize,
    pub reward: f64,
}

mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(arm: &usize, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*arm as u64 + 1)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
        let v = u64::deserialize(d)?;
        if v == 0 {
            return Err(serde::de::Error::custom("arm indices are 1-based"));
        }
        Ok(v as usize - 1)
    }
}

/// Time-ordered records for many users.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InteractionLog {
    pub users: Vec<Vec<Record>>,
}

impl InteractionLog {
    pub fn new(users: Vec<Vec<Record>>) -> Self {
        InteractionLog { users }
    }

    /// Checks one record per round with rounds exactly `1..=T`.
    pub fn validate(&self) -> Result<()> {
        for (u, recs) in self.users.iter().enumerate() {
            for (i, r) in recs.iter().enumerate() {
                if r.t != i + 1 {
                    return Err(Error::config(
                        format!("[{u}][{i}].t"),
                        format!("expected round {} but found {}", i + 1, r.t),
                    ));
                }
                if !r.reward.is_finite() {
                    return Err(Error::config(format!("[{u}][{i}].reward"), "must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let log: InteractionLog = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        log.validate()?;
        Ok(log)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    /// Largest arm index seen plus one.
    pub fn n_arms(&self) -> usize {
        self.users
            .iter()
            .flatten()
            .map(|r| r.arm + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Rounds (1-based) at which `arm` was pulled.
pub fn pull_times(records: &[Record], arm: usize) -> Vec<usize> {
    records.iter().filter(|r| r.arm == arm).map(|r| r.t).collect()
}

/// Indicator sequence `π_{a,t}` for `t = 1..=T`, index `t − 1`.
pub fn indicators(records: &[Record], arm: usize) -> Vec<bool> {
    records.iter().map(|r| r.arm == arm).collect()
}
