//! Engine for the sequential collaborative reference game.
//!
//! Two agents with partial, circular views of a plane of moving grayscale
//! dots must repeatedly agree on a common dot. Each game runs at most five
//! turns; its score is the number of leading turns on which both agents
//! picked the same dot.
//!
//! - [`geometry`]: Bézier trajectories, visibility, frame sampling
//! - [`scenario`]: constrained scene generation, validation, file format
//! - [`game`]: the turn state machine, observations, features
//! - [`transcript`]: JSON-lines game records
//! - [`agents`]: scripted policies, selfplay and target-selection harnesses
//! - [`analytics`]: corpus ingestion and dialogue statistics

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod agents;
pub mod analytics;
pub mod canonical;
pub mod game;
pub mod geometry;
pub mod scenario;
pub mod transcript;

pub use geometry::{Point, Trajectory, View};

/// Stable identifier of an entity within one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the two players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Seat {
    A,
    B,
}

impl Seat {
    pub const BOTH: [Seat; 2] = [Seat::A, Seat::B];

    pub fn index(self) -> usize {
        match self {
            Seat::A => 0,
            Seat::B => 1,
        }
    }

    pub fn partner(self) -> Seat {
        match self {
            Seat::A => Seat::B,
            Seat::B => Seat::A,
        }
    }
}

impl fmt::Display for Seat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Seat::A => "A",
            Seat::B => "B",
        })
    }
}
