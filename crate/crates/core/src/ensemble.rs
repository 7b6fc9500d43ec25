use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::grid::TimeGrid;

/// Simulated paths on a grid starting at time `t_start`.
///
/// Storage is ragged: path `p` keeps `stored_len(p)` nodes of state and one
/// increment fewer (the increment at node `i` drives the step `i → i+1`).
/// Paths simulated only up to their exit are therefore cheap to hold.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    t_start: f64,
    seed: u64,
    d: usize,
    l: usize,
    offsets: Vec<usize>,
    increments: Vec<f64>,
    states: Vec<f64>,
}

impl PathEnsemble {
    /// `lens[p]` is the number of stored nodes of path `p`. `states` may be
    /// empty (`l = 0`) for a bare Brownian ensemble.
    pub fn from_parts(
        grid: TimeGrid,
        t_start: f64,
        seed: u64,
        d: usize,
        l: usize,
        lens: &[usize],
        increments: Vec<f64>,
        states: Vec<f64>,
    ) -> Result<Self> {
        if lens.is_empty() {
            return config("ensemble needs at least one path");
        }
        let mut offsets = Vec::with_capacity(lens.len() + 1);
        offsets.push(0usize);
        for (p, &n) in lens.iter().enumerate() {
            if n == 0 || n > grid.len() {
                return Err(Error::Invariant(format!("path {p}: stored length {n} outside 1..={}", grid.len())));
            }
            offsets.push(offsets[p] + n);
        }
        let total = *offsets.last().unwrap();
        if increments.len() != (total - lens.len()) * d {
            return Err(Error::Invariant("increment buffer has the wrong size".into()));
        }
        if states.len() != total * l {
            return Err(Error::Invariant("state buffer has the wrong size".into()));
        }
        Ok(PathEnsemble {
            grid,
            t_start,
            seed,
            d,
            l,
            offsets,
            increments,
            states,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn has_states(&self) -> bool {
        self.l > 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + self.grid.node(i)
    }

    pub fn stored_len(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let s = (self.offsets[p] + i) * self.l;
        &self.states[s..s + self.l]
    }

    pub fn increment(&self, p: usize, i: usize) -> &[f64] {
        let s = (self.offsets[p] - p + i) * self.d;
        &self.increments[s..s + self.d]
    }

    pub fn path_states(&self, p: usize) -> &[f64] {
        &self.states[self.offsets[p] * self.l..self.offsets[p + 1] * self.l]
    }

    pub fn path_increments(&self, p: usize) -> &[f64] {
        &self.increments[(self.offsets[p] - p) * self.d..(self.offsets[p + 1] - p - 1) * self.d]
    }

    pub fn increments_raw(&self) -> &[f64] {
        &self.increments
    }

    pub fn states_raw(&self) -> &[f64] {
        &self.states
    }

    pub fn lens(&self) -> Vec<usize> {
        (0..self.n_paths()).map(|p| self.stored_len(p)).collect()
    }

    /// History of path `p` up to node `index`.
    pub fn view(&self, p: usize, index: usize) -> PathView<'_> {
        let states = &self.path_states(p)[..(index + 1) * self.l];
        let increments = &self.path_increments(p)[..index * self.d];
        PathView {
            grid: &self.grid,
            t_start: self.t_start,
            l: self.l,
            d: self.d,
            index,
            states,
            increments,
        }
    }
}

/// Read-only history of one path up to a terminal node.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub grid: &'a TimeGrid,
    pub t_start: f64,
    pub l: usize,
    pub d: usize,
    pub index: usize,
    pub states: &'a [f64],
    pub increments: &'a [f64],
}

impl PathView<'_> {
    pub fn time(&self, i: usize) -> f64 {
        self.t_start + self.grid.node(i)
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.l..(i + 1) * self.l]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.index)
    }

    /// `B_τ − B_0` component `j`.
    pub fn brownian(&self, j: usize) -> f64 {
        (0..self.index).map(|i| self.increments[i * self.d + j]).sum()
    }

    /// Elapsed time from the start of the path to its terminal node.
    pub fn elapsed(&self) -> f64 {
        self.grid.node(self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalKind {
    Deterministic { t: f64 },
    StoppingTime { domain: String, t_cap: f64 },
    CappedInfinite { t_cap: f64 },
}

/// Per-path terminal node. `capped[p]` marks paths whose horizon was cut at
/// `t_cap` rather than reached; `truncation_mass` is their fraction.
#[derive(Debug, Clone, Serialize)]
pub struct TerminalTime {
    pub kind: TerminalKind,
    pub per_path_index: Vec<usize>,
    pub capped: Vec<bool>,
    pub truncation_mass: f64,
}

impl TerminalTime {
    pub fn deterministic(grid: &TimeGrid, n_paths: usize) -> Self {
        TerminalTime {
            kind: TerminalKind::Deterministic { t: grid.t_cap() },
            per_path_index: vec![grid.n_steps(); n_paths],
            capped: vec![false; n_paths],
            truncation_mass: 0.0,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.per_path_index.len()
    }

    /// Paths still running at node `i` (terminal index strictly after `i`).
    pub fn alive_at(&self, i: usize) -> Vec<usize> {
        (0..self.n_paths()).filter(|&p| self.per_path_index[p] > i).collect()
    }

    pub fn max_index(&self) -> usize {
        self.per_path_index.iter().copied().max().unwrap_or(0)
    }
}
