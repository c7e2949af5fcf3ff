//! Opposition-space bookkeeping across a grasp sequence.

use rand::Rng;

use super::HandSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailableOs {
    pub id: usize,
    /// Current joint mask, with joints of consumed spaces zeroed out.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumedOs {
    pub id: usize,
    /// Mask at selection time; these joints are frozen afterwards.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OsState {
    pub available: Vec<AvailableOs>,
    pub consumed: Vec<ConsumedOs>,
}

impl OsState {
    pub fn new(spec: &HandSpec) -> Self {
        Self {
            available: spec
                .os_catalog
                .iter()
                .map(|o| AvailableOs {
                    id: o.id,
                    mask: o.mask.clone(),
                })
                .collect(),
            consumed: Vec::new(),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.available.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&AvailableOs> {
        self.available.iter().find(|o| o.id == id)
    }

    /// Uniform draw over the available spaces.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&AvailableOs> {
        if self.available.is_empty() {
            return Err(Error::OppositionSpacesExhausted);
        }
        Ok(&self.available[rng.random_range(0..self.available.len())])
    }

    /// Remove `id`, zero its joints out of every remaining mask, and drop
    /// spaces left without controllable joints.
    pub fn consume(&self, id: usize) -> Result<OsState> {
        let used = self.get(id).ok_or(Error::OppositionSpaceUnavailable(id))?.mask.clone();
        let available = self
            .available
            .iter()
            .filter(|o| o.id != id)
            .map(|o| AvailableOs {
                id: o.id,
                mask: o.mask.iter().zip(&used).map(|(&a, &u)| a && !u).collect(),
            })
            .filter(|o| o.mask.iter().any(|&b| b))
            .collect();
        let mut consumed = self.consumed.clone();
        consumed.push(ConsumedOs { id, mask: used });
        Ok(OsState { available, consumed })
    }

    /// Joints frozen by earlier grasps.
    pub fn frozen_mask(&self, dof: usize) -> Vec<bool> {
        let mut m = vec![false; dof];
        for c in &self.consumed {
            for (f, &b) in m.iter_mut().zip(&c.mask) {
                *f |= b;
            }
        }
        m
    }
}
