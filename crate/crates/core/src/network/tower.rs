use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Point;

/// Radio access technology generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rat {
    G2,
    G3,
    G4,
    G5,
}

impl Rat {
    pub const ALL: [Rat; 4] = [Rat::G2, Rat::G3, Rat::G4, Rat::G5];

    pub fn as_str(self) -> &'static str {
        match self {
            Rat::G2 => "2G",
            Rat::G3 => "3G",
            Rat::G4 => "4G",
            Rat::G5 => "5G",
        }
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownRat(pub String);

impl fmt::Display for UnknownRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown RAT `{}` (expected 2G, 3G, 4G or 5G)", self.0)
    }
}

impl std::error::Error for UnknownRat {}

impl FromStr for Rat {
    type Err = UnknownRat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "2G" => Ok(Rat::G2),
            "3G" => Ok(Rat::G3),
            "4G" => Ok(Rat::G4),
            "5G" => Ok(Rat::G5),
            _ => Err(UnknownRat(s.to_owned())),
        }
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTower {
    pub tower_id: String,
    pub position: Point,
    pub rat: Rat,
    pub max_bandwidth_bps: f64,
    pub range_m: f64,
    pub base_latency_s: f64,
    /// Source coordinates when the tower came from a capture file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoCoord>,
}

impl CellTower {
    pub fn validate(&self) -> Result<(), String> {
        if self.tower_id.trim().is_empty() {
            return Err("tower_id is empty".into());
        }
        if !(self.range_m > 0.0 && self.range_m.is_finite()) {
            return Err(format!("range_m must be > 0, got {}", self.range_m));
        }
        if !(self.max_bandwidth_bps > 0.0 && self.max_bandwidth_bps.is_finite()) {
            return Err(format!("max_bandwidth_bps must be > 0, got {}", self.max_bandwidth_bps));
        }
        if !(self.base_latency_s >= 0.0 && self.base_latency_s.is_finite()) {
            return Err(format!("base_latency_s must be >= 0, got {}", self.base_latency_s));
        }
        if !(self.position.x.is_finite() && self.position.y.is_finite()) {
            return Err("position is not finite".into());
        }
        Ok(())
    }
}
