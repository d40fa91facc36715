//! Scenario file schema and I/O.
//!
//! A scenario is a single JSON document with top-level keys `config`, `lanes`,
//! `links`, `vehicles`, and optional `controls`. Field names match the Rust
//! struct fields verbatim (snake_case), and a parsed scenario serializes back
//! to an equivalent document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::ScenarioError;
use crate::state::{BoundaryCondition, CellState, IdmParams, LeadBoundary};
use crate::topology::Link;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SolverConfig,
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<ControlsSpec>,
}

/// One lane, tagged by representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LaneSpec {
    Macro {
        id: u64,
        dx: f64,
        u_max: f64,
        cells: Vec<CellState>,
        upstream_boundary: BoundaryCondition,
        downstream_boundary: BoundaryCondition,
    },
    Micro {
        id: u64,
        length: f64,
        #[serde(default)]
        lead_boundary: LeadBoundary,
        /// Parameter ranges for vehicles emitted onto this lane. Required when
        /// the lane is the target of a macro->micro link.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idm_ranges: Option<IdmRanges>,
    },
}

impl LaneSpec {
    pub fn id(&self) -> u64 {
        match self {
            LaneSpec::Macro { id, .. } | LaneSpec::Micro { id, .. } => *id,
        }
    }

    pub fn is_macro(&self) -> bool {
        matches!(self, LaneSpec::Macro { .. })
    }
}

/// Closed parameter ranges, sampled uniformly per emitted vehicle. Collapsed
/// ranges (lo == hi) give deterministic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmRanges {
    pub s_min: [f64; 2],
    pub t_pref: [f64; 2],
    pub a_max: [f64; 2],
    pub a_pref: [f64; 2],
    pub v_targ: [f64; 2],
    pub length: [f64; 2],
}

impl IdmRanges {
    pub fn fixed(p: IdmParams) -> Self {
        IdmRanges {
            s_min: [p.s_min, p.s_min],
            t_pref: [p.t_pref, p.t_pref],
            a_max: [p.a_max, p.a_max],
            a_pref: [p.a_pref, p.a_pref],
            v_targ: [p.v_targ, p.v_targ],
            length: [p.length, p.length],
        }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> IdmParams {
        let draw = |r: [f64; 2], rng: &mut dyn rand::RngCore| {
            if r[0] == r[1] {
                r[0]
            } else {
                rand::Rng::gen_range(&mut *rng, r[0]..=r[1])
            }
        };
        IdmParams {
            s_min: draw(self.s_min, rng),
            t_pref: draw(self.t_pref, rng),
            a_max: draw(self.a_max, rng),
            a_pref: draw(self.a_pref, rng),
            v_targ: draw(self.v_targ, rng),
            length: draw(self.length, rng),
        }
    }
}

/// Initial placement of one vehicle on a micro lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub lane: u64,
    pub p: f64,
    pub v: f64,
    pub params: IdmParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pace_car: Option<PaceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalSpec>,
}

/// Direct acceleration control of the lead vehicle of one micro lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaceSpec {
    pub lane: u64,
    /// Acceleration per step; shorter schedules are zero-extended.
    pub accel: Vec<f64>,
    /// Admissible magnitude for each entry.
    pub bound: f64,
}

/// A two-approach signalized junction. Within each phase of fixed length the
/// west-east approaches get green first, then the north-south approaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub we_lanes: Vec<u64>,
    pub ns_lanes: Vec<u64>,
    /// Phase length in seconds.
    pub phase_length: f64,
    /// Green time given to the west-east approaches in each phase; the
    /// north-south approaches get the remainder.
    pub green_we: Vec<f64>,
    /// Lower bound on either approach's green time within a phase.
    pub min_green: f64,
}

impl Scenario {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    pub fn lane(&self, id: u64) -> Option<&LaneSpec> {
        self.lanes.iter().find(|l| l.id() == id)
    }

    pub fn vehicles_on(&self, lane: u64) -> impl Iterator<Item = &VehicleSpec> {
        self.vehicles.iter().filter(move |v| v.lane == lane)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders;

    #[test]
    fn round_trip_preserves_the_document() {
        let sc = builders::hybrid_chain_scenario(&builders::HybridChainParams::default());
        let json = sc.to_json_pretty();
        let back = Scenario::from_json(&json).unwrap();
        assert_eq!(sc, back);
        // And a second serialization is byte-identical.
        assert_eq!(json, back.to_json_pretty());
    }

    #[test]
    fn boundary_conditions_use_kind_tags() {
        let sc = builders::single_cell_scenario();
        let json = sc.to_json_pretty();
        assert!(json.contains("\"kind\": \"outflow\""), "{json}");
        assert!(json.contains("\"kind\": \"inflow\""), "{json}");
    }

    #[test]
    fn missing_required_field_names_the_key() {
        let err = Scenario::from_json(r#"{"config": {"gamma": 0.5}, "lanes": []}"#).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let sc = builders::single_cell_scenario();
        sc.save(&path).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), sc);
    }
}
