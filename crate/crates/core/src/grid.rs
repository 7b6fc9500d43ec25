use serde::Serialize;

use crate::error::{config, Result};

/// Uniform grid `t_i = i * t_cap / n_steps` on `[0, t_cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_cap: f64,
    n_steps: usize,
}

pub fn make_grid(t_cap: f64, n_steps: usize) -> Result<TimeGrid> {
    if !t_cap.is_finite() || t_cap <= 0.0 {
        return config(format!("t_cap must be finite and > 0 (got {t_cap})"));
    }
    if n_steps == 0 {
        return config("n_steps must be ≥ 1");
    }
    Ok(TimeGrid { t_cap, n_steps })
}

impl TimeGrid {
    pub fn t_cap(&self) -> f64 {
        self.t_cap
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t_cap / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_cap
        } else {
            i as f64 * self.t_cap / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Same step, `factor` times the horizon.
    pub fn extended(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t_cap: self.t_cap * factor as f64,
            n_steps: self.n_steps * factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_grid() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
        assert!(make_grid(f64::NAN, 4).is_err());
        assert!(make_grid(1.0, 0).is_err());
    }

    #[test]
    fn last_node_is_exact() {
        let g = make_grid(0.3, 7).unwrap();
        assert_eq!(g.node(7), 0.3);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }
}
