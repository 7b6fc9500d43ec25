use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::ensemble::PathView;

/// `ξ = A exp(c b B_τ − κ b² τ)` for a constant `b` (first noise coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFunctional {
    pub amplitude: f64,
    pub c: f64,
    pub kappa: f64,
    pub b: f64,
}

impl ExpFunctional {
    pub fn value(&self, b_tau: f64, tau: f64) -> f64 {
        self.amplitude * (self.c * self.b * b_tau - self.kappa * self.b * self.b * tau).exp()
    }
}

pub type StateFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type PathFn = dyn Fn(&PathView, &mut [f64]) + Send + Sync;

/// Terminal value `ξ`, measurable with respect to the path up to `τ`.
#[derive(Clone)]
pub enum TerminalCondition {
    Constant(Vec<f64>),
    ExpFunctional(ExpFunctional),
    /// `ξ = φ(X_τ)`.
    State { k: usize, f: Arc<StateFn>, name: String },
    /// General functional of the stopped path.
    Path { k: usize, f: Arc<PathFn>, name: String },
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalCondition::Constant(c) => write!(f, "Constant({c:?})"),
            TerminalCondition::ExpFunctional(e) => write!(f, "{e:?}"),
            TerminalCondition::State { name, .. } => write!(f, "State({name})"),
            TerminalCondition::Path { name, .. } => write!(f, "Path({name})"),
        }
    }
}

impl TerminalCondition {
    pub fn state(k: usize, name: impl Into<String>, f: Arc<StateFn>) -> Self {
        TerminalCondition::State { k, f, name: name.into() }
    }

    pub fn path(k: usize, name: impl Into<String>, f: Arc<PathFn>) -> Self {
        TerminalCondition::Path { k, f, name: name.into() }
    }

    pub fn k(&self) -> usize {
        match self {
            TerminalCondition::Constant(c) => c.len(),
            TerminalCondition::ExpFunctional(_) => 1,
            TerminalCondition::State { k, .. } | TerminalCondition::Path { k, .. } => *k,
        }
    }

    pub fn eval(&self, view: &PathView, out: &mut [f64]) {
        match self {
            TerminalCondition::Constant(c) => out.copy_from_slice(c),
            TerminalCondition::ExpFunctional(e) => out[0] = e.value(view.brownian(0), view.elapsed()),
            TerminalCondition::State { f, .. } => f(view.terminal_state(), out),
            TerminalCondition::Path { f, .. } => f(view, out),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TerminalCondition::Constant(c) => format!("constant{c:?}"),
            TerminalCondition::ExpFunctional(e) => {
                format!("exp-functional(A = {}, c = {}, kappa = {}, b = {})", e.amplitude, e.c, e.kappa, e.b)
            }
            TerminalCondition::State { name, .. } | TerminalCondition::Path { name, .. } => name.clone(),
        }
    }
}
