//! Pedestrian motion map: per-hexagon face-transition counters and the
//! resulting transition probabilities.
//!
//! Lateral faces (1..6) carry counters with a unit pseudo-count floor; their
//! probabilities are the normalized counts. Vertical faces (7, 8) carry a
//! fixed small probability `p_v` and are never counted.
//!
//! Counts are attached to the tile being exited: a crossing from tile A to
//! tile B through A's face j is recorded on A's counter j.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::hexgrid::{FaceCrossing, HexIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTile {
    pub idx: HexIndex,
    /// Transition counters for lateral faces 1..6, floor 1.
    pub counts: [u64; 6],
}

impl MotionTile {
    pub fn fresh(idx: HexIndex) -> Self {
        MotionTile {
            idx,
            counts: [1; 6],
        }
    }

    /// Transition probability of `face` (1..6 lateral, 7..8 vertical).
    pub fn transition_prob(&self, face: u8, p_v: f64) -> f64 {
        match face {
            1..=6 => {
                let total: u64 = self.counts.iter().sum();
                self.counts[face as usize - 1] as f64 / total as f64
            }
            7 | 8 => p_v,
            _ => panic!("face index {face} out of range"),
        }
    }

    /// Increment the counter of a lateral face. Vertical faces are not
    /// counted; their probability is fixed at `p_v`.
    pub fn record_transition(&mut self, face: u8) {
        assert!((1..=6).contains(&face), "only lateral faces are counted");
        self.counts[face as usize - 1] += 1;
    }
}

/// One particle's motion map. Tiles are shared copy-on-write between
/// resampled particles and cloned on first write.
#[derive(Debug, Clone, Default)]
pub struct MotionMap {
    tiles: HashMap<HexIndex, Arc<MotionTile>>,
}

impl MotionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tile(&self, idx: HexIndex) -> Option<&MotionTile> {
        self.tiles.get(&idx).map(|t| t.as_ref())
    }

    pub fn tiles(&self) -> impl Iterator<Item = &MotionTile> {
        self.tiles.values().map(|t| t.as_ref())
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Ensure a tile exists, creating it fresh (uniform counts) if needed.
    pub fn ensure(&mut self, idx: HexIndex) {
        self.tiles
            .entry(idx)
            .or_insert_with(|| Arc::new(MotionTile::fresh(idx)));
    }

    /// Log of the motion weight `w_u`: product of transition probabilities of
    /// the crossed faces along the step's crossing chain. Tiles not yet in
    /// the map are instantiated fresh before evaluation.
    pub fn log_motion_weight(&mut self, crossings: &[FaceCrossing], p_v: f64) -> f64 {
        let mut lw = 0.0;
        for c in crossings {
            self.ensure(c.from);
            let tile = self.tiles.get(&c.from).expect("just ensured");
            lw += tile.transition_prob(c.face, p_v).ln();
        }
        lw
    }

    /// Record the lateral crossings of a step on the exited tiles.
    pub fn record_crossings(&mut self, crossings: &[FaceCrossing]) {
        for c in crossings {
            if (1..=6).contains(&c.face) {
                self.ensure(c.from);
                let tile = self.tiles.get_mut(&c.from).expect("just ensured");
                Arc::make_mut(tile).record_transition(c.face);
            }
            self.ensure(c.to);
        }
    }
}
