//! The step tape: full state checkpoints, per-step records of every discrete
//! decision, and per-step state fingerprints. The reverse sweep recomputes
//! Jacobians from the checkpoints and trusts the records only after the
//! fingerprints confirm the tape is internally consistent.

use difftraffic_core::hash::StreamHasher;

use crate::forward::StepRecord;
use crate::network::{Engine, EngineError, NetworkState};

#[derive(Debug, Clone)]
pub struct StepTape {
    /// Fingerprint of the solver configuration the tape was recorded under.
    pub config_hash: u64,
    /// States x_0 .. x_T; `snapshots[t]` is the input of step t.
    pub snapshots: Vec<NetworkState>,
    /// One record per executed step.
    pub records: Vec<StepRecord>,
    /// `hashes[t]` fingerprints `snapshots[t + 1]`.
    pub hashes: Vec<u64>,
}

impl StepTape {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn initial_state(&self) -> &NetworkState {
        &self.snapshots[0]
    }

    pub fn final_state(&self) -> &NetworkState {
        self.snapshots.last().expect("tape holds at least the initial state")
    }

    pub fn final_hash(&self) -> u64 {
        match self.hashes.last() {
            Some(&h) => h,
            None => self.final_state().digest(),
        }
    }

    /// Approximate heap footprint, linear in run length for a fixed network.
    pub fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        let mut bytes = size_of::<StepTape>();
        bytes += self.hashes.len() * size_of::<u64>();
        for s in &self.snapshots {
            bytes += size_of::<NetworkState>();
            for lane in s.macro_lanes.values() {
                bytes += size_of::<u64>()
                    + size_of::<difftraffic_core::MacroLaneState>()
                    + lane.cells.capacity() * size_of::<difftraffic_core::CellState>();
            }
            for lane in s.micro_lanes.values() {
                bytes += size_of::<u64>()
                    + size_of::<difftraffic_idm::MicroLaneState>()
                    + lane.vehicles.capacity() * size_of::<difftraffic_core::VehicleState>();
            }
            for cap in s.capacitors.values() {
                bytes += size_of::<u64>()
                    + size_of::<crate::network::CapacitorRuntime>()
                    + cap.queue.capacity() * size_of::<difftraffic_coupling::EmissionCredit>();
            }
        }
        for r in &self.records {
            bytes += size_of::<StepRecord>();
            for m in r.macro_records.values() {
                bytes += size_of::<u64>()
                    + size_of::<crate::forward::MacroStepRecord>()
                    + m.cases.capacity() * size_of::<difftraffic_arz::RiemannCase>()
                    + m.clamps.capacity() * size_of::<difftraffic_arz::CellClamp>();
            }
            for m in r.micro_records.values() {
                bytes += size_of::<u64>()
                    + size_of::<crate::forward::MicroStepRecord>()
                    + m.clamped.capacity()
                    + m.exited.capacity() * size_of::<(u64, f64)>();
            }
            for e in r.emissions.values() {
                bytes += size_of::<u64>()
                    + size_of::<crate::forward::EmissionRecord>()
                    + e.credits.capacity() * size_of::<difftraffic_coupling::EmissionCredit>();
            }
            for a in r.aggregations.values() {
                bytes += size_of::<u64>()
                    + size_of::<crate::forward::AggRecord>()
                    + a.aggregate.member_ids.capacity() * size_of::<u64>()
                    + a.aggregate.member_lens.capacity() * size_of::<f64>();
            }
        }
        bytes
    }

    /// Fingerprint of the run's discrete event structure: interface cases,
    /// clamp masks, emissions, exits, and window membership. Two runs with
    /// equal signatures took the same branches everywhere, which is what a
    /// finite-difference probe needs to stay on one smooth piece.
    pub fn event_signature(&self) -> u64 {
        let mut h = StreamHasher::new();
        for r in &self.records {
            for (&lane, m) in &r.macro_records {
                h.write_u64(lane);
                for c in &m.cases {
                    h.write_u64(case_tag(*c));
                }
                for c in &m.clamps {
                    h.write_u64(clamp_tag(*c));
                }
            }
            for (&lane, m) in &r.micro_records {
                h.write_u64(lane);
                for &c in &m.clamped {
                    h.write_u64(c as u64);
                }
                for &(id, _) in &m.exited {
                    h.write_u64(id);
                }
            }
            for (&lane, e) in &r.emissions {
                h.write_u64(lane);
                h.write_u64(e.credits.len() as u64);
                h.write_u64(e.drawn.map_or(u64::MAX, |d| d));
                h.write_u64(e.placed.map_or(u64::MAX, |v| v.id));
            }
            for (&lane, a) in &r.aggregations {
                h.write_u64(lane);
                for &id in &a.aggregate.member_ids {
                    h.write_u64(id);
                }
                h.write_u64(a.aggregate.rho_clamped as u64);
            }
        }
        h.finish()
    }

    /// Re-step every checkpoint and require the recorded fingerprints back,
    /// bit for bit.
    pub fn verify_replay(&self, engine: &Engine) -> Result<(), EngineError> {
        for t in 0..self.steps() {
            let mut state = self.snapshots[t].clone();
            engine.step(&mut state)?;
            let got = state.digest();
            if got != self.hashes[t] {
                return Err(EngineError::ReplayDiverged {
                    step: t,
                    expected: self.hashes[t],
                    got,
                });
            }
        }
        Ok(())
    }
}

fn case_tag(c: difftraffic_arz::RiemannCase) -> u64 {
    use difftraffic_arz::RiemannCase::*;
    match c {
        EqualVelocity => 0,
        LeftVacuum => 1,
        ShockLeft => 2,
        ShockMiddle => 3,
        RarefactionLeft => 4,
        RarefactionMiddle => 5,
        RarefactionFan => 6,
    }
}

fn clamp_tag(c: difftraffic_arz::CellClamp) -> u64 {
    match c {
        difftraffic_arz::CellClamp::Free => 0,
        difftraffic_arz::CellClamp::Low => 1,
        difftraffic_arz::CellClamp::High => 2,
    }
}
