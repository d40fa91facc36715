//! Gradient container shared by the reverse sweep, the finite-difference
//! oracle, and the optimizers: one slot per differentiable input of a run.

use std::collections::BTreeMap;

use difftraffic_core::Vec2;
use serde::{Deserialize, Serialize};

/// Gradients with respect to every differentiable input: initial macro cells
/// (per lane, per cell, d/d rho and d/d y), initial vehicles (keyed by id,
/// d/d p and d/d v), the pace schedule, the green schedule, and named scalar
/// parameters such as `u_max[lane]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientBundle {
    pub macro_cells: BTreeMap<u64, Vec<Vec2>>,
    pub vehicles: BTreeMap<u64, Vec2>,
    pub pace: Vec<f64>,
    pub green: Vec<f64>,
    pub scalars: BTreeMap<String, f64>,
}

impl GradientBundle {
    /// Inner product over the slots both bundles populate.
    pub fn dot(&self, other: &GradientBundle) -> f64 {
        let mut acc = 0.0;
        for (lane, cells) in &self.macro_cells {
            if let Some(o) = other.macro_cells.get(lane) {
                acc += cells.iter().zip(o).map(|(a, b)| a.dot(*b)).sum::<f64>();
            }
        }
        for (id, v) in &self.vehicles {
            if let Some(o) = other.vehicles.get(id) {
                acc += v.dot(*o);
            }
        }
        acc += self.pace.iter().zip(&other.pace).map(|(a, b)| a * b).sum::<f64>();
        acc += self.green.iter().zip(&other.green).map(|(a, b)| a * b).sum::<f64>();
        for (name, v) in &self.scalars {
            if let Some(o) = other.scalars.get(name) {
                acc += v * o;
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for cells in self.macro_cells.values() {
            for c in cells {
                m = m.max(c.0.abs()).max(c.1.abs());
            }
        }
        for v in self.vehicles.values() {
            m = m.max(v.0.abs()).max(v.1.abs());
        }
        for &x in self.pace.iter().chain(&self.green).chain(self.scalars.values()) {
            m = m.max(x.abs());
        }
        m
    }

    pub fn scaled(&self, s: f64) -> GradientBundle {
        let mut out = self.clone();
        for cells in out.macro_cells.values_mut() {
            for c in cells.iter_mut() {
                *c = c.scale(s);
            }
        }
        for v in out.vehicles.values_mut() {
            *v = v.scale(s);
        }
        for x in out.pace.iter_mut().chain(out.green.iter_mut()) {
            *x *= s;
        }
        for x in out.scalars.values_mut() {
            *x *= s;
        }
        out
    }

    /// self += s * other, creating any slots self lacks.
    pub fn add_scaled(&mut self, other: &GradientBundle, s: f64) {
        for (lane, cells) in &other.macro_cells {
            let mine = self.macro_cells.entry(*lane).or_insert_with(|| vec![Vec2::ZERO; cells.len()]);
            if mine.len() < cells.len() {
                mine.resize(cells.len(), Vec2::ZERO);
            }
            for (m, c) in mine.iter_mut().zip(cells) {
                *m += c.scale(s);
            }
        }
        for (id, v) in &other.vehicles {
            let mine = self.vehicles.entry(*id).or_insert(Vec2::ZERO);
            *mine += v.scale(s);
        }
        if self.pace.len() < other.pace.len() {
            self.pace.resize(other.pace.len(), 0.0);
        }
        for (m, o) in self.pace.iter_mut().zip(&other.pace) {
            *m += s * o;
        }
        if self.green.len() < other.green.len() {
            self.green.resize(other.green.len(), 0.0);
        }
        for (m, o) in self.green.iter_mut().zip(&other.green) {
            *m += s * o;
        }
        for (name, o) in &other.scalars {
            *self.scalars.entry(name.clone()).or_insert(0.0) += s * o;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gradient bundle serializes")
    }
}
