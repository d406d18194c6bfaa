use crate::error::{Error, Result};

/// Partition `0 = t_0 < t_1 < ... < t_N = T` of the time horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    h: f64,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "time grid must start at 0, got {}",
                nodes[0]
            )));
        }
        let mut h: f64 = 0.0;
        for w in nodes.windows(2) {
            let dt = w[1] - w[0];
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "time grid must be strictly increasing ({} -> {})",
                    w[0], w[1]
                )));
            }
            h = h.max(dt);
        }
        Ok(Self { nodes, h })
    }

    /// Equidistant grid with `steps` intervals on `[0, terminal_time]`.
    pub fn uniform(terminal_time: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(terminal_time > 0.0) || !terminal_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "terminal time must be positive, got {terminal_time}"
            )));
        }
        let nodes = (0..=steps)
            .map(|n| terminal_time * n as f64 / steps as f64)
            .collect::<Vec<_>>();
        Self::new(nodes)
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, n: usize) -> f64 {
        self.nodes[n]
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    /// Mesh size `max_n (t_{n+1} - t_n)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn terminal_time(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        assert_eq!(g.steps(), 20);
        assert!((g.h() - 0.05).abs() < 1e-15);
        assert_eq!(g.terminal_time(), 1.0);
    }

    #[test]
    fn rejects_non_increasing() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.6, 0.4]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn h_is_max_step() {
        let g = TimeGrid::new(vec![0.0, 0.1, 0.4, 0.5]).unwrap();
        assert!((g.h() - 0.3).abs() < 1e-15);
    }
}
