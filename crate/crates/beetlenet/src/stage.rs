//! Attack-stage labels and flight identifiers.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Visual phase of bark-beetle infestation. Ordinals 0..3 follow the
/// progression of crown discoloration: Green (healthy), Yellow, Red, Leafless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackStage {
    Green,
    Yellow,
    Red,
    Leafless,
}

pub const NUM_STAGES: usize = 4;

impl AttackStage {
    pub const ALL: [AttackStage; NUM_STAGES] = [
        AttackStage::Green,
        AttackStage::Yellow,
        AttackStage::Red,
        AttackStage::Leafless,
    ];

    /// Fixed ordinal index in 0..4.
    pub fn ordinal(self) -> usize {
        match self {
            AttackStage::Green => 0,
            AttackStage::Yellow => 1,
            AttackStage::Red => 2,
            AttackStage::Leafless => 3,
        }
    }

    pub fn from_ordinal(idx: usize) -> Option<AttackStage> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackStage::Green => "Green",
            AttackStage::Yellow => "Yellow",
            AttackStage::Red => "Red",
            AttackStage::Leafless => "Leafless",
        }
    }
}

impl fmt::Display for AttackStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackStage {
    type Err = Error;

    /// Case-sensitive, matching the annotation CSV contract exactly.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Green" => Ok(AttackStage::Green),
            "Yellow" => Ok(AttackStage::Yellow),
            "Red" => Ok(AttackStage::Red),
            "Leafless" => Ok(AttackStage::Leafless),
            other => Err(Error::Data(format!("unknown attack stage `{other}`"))),
        }
    }
}

/// One UAV data-collection run: month plus altitude above ground in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlightSpec {
    Jun60,
    Jul90,
    Jul100,
    Aug90,
    Aug100,
}

impl FlightSpec {
    pub const ALL: [FlightSpec; 5] = [
        FlightSpec::Jun60,
        FlightSpec::Jul90,
        FlightSpec::Jul100,
        FlightSpec::Aug90,
        FlightSpec::Aug100,
    ];

    /// Calendar month of the flight (1-based).
    pub fn month(self) -> u32 {
        match self {
            FlightSpec::Jun60 => 6,
            FlightSpec::Jul90 | FlightSpec::Jul100 => 7,
            FlightSpec::Aug90 | FlightSpec::Aug100 => 8,
        }
    }

    /// Average height above ground in meters.
    pub fn altitude_m(self) -> u32 {
        match self {
            FlightSpec::Jun60 => 60,
            FlightSpec::Jul90 | FlightSpec::Aug90 => 90,
            FlightSpec::Jul100 | FlightSpec::Aug100 => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlightSpec::Jun60 => "Jun60",
            FlightSpec::Jul90 => "Jul90",
            FlightSpec::Jul100 => "Jul100",
            FlightSpec::Aug90 => "Aug90",
            FlightSpec::Aug100 => "Aug100",
        }
    }
}

impl fmt::Display for FlightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlightSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Jun60" => Ok(FlightSpec::Jun60),
            "Jul90" => Ok(FlightSpec::Jul90),
            "Jul100" => Ok(FlightSpec::Jul100),
            "Aug90" => Ok(FlightSpec::Aug90),
            "Aug100" => Ok(FlightSpec::Aug100),
            other => Err(Error::Data(format!("unknown flight `{other}`"))),
        }
    }
}
