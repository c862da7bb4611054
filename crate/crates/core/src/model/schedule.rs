//! Predictable observation times: fixed dates or threshold rules on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Fixed times `0 < T_1 < ... < T_K`; every event carries one signal jump.
    Deterministic { times: Vec<f64> },
    /// `Y` is observed at every grid point; the signal jumps once for each
    /// threshold when the observed level first falls to or below it.
    /// Thresholds are listed from `theta_K` down to `theta_1`.
    Threshold { grid: Vec<f64>, thresholds: Vec<f64> },
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Schedule {
    /// Maximum number of signal jumps `K`.
    pub fn max_jumps(&self) -> usize {
        match self {
            Schedule::Deterministic { times } => times.len(),
            Schedule::Threshold { thresholds, .. } => thresholds.len(),
        }
    }

    /// Candidate event times up to and including `horizon`.
    pub fn event_times(&self, horizon: f64) -> Vec<f64> {
        let all = match self {
            Schedule::Deterministic { times } => times,
            Schedule::Threshold { grid, .. } => grid,
        };
        all.iter().copied().filter(|t| *t <= horizon).collect()
    }

    /// Scheduled times that fall after the horizon.
    pub fn dropped_times(&self, horizon: f64) -> Vec<f64> {
        let all = match self {
            Schedule::Deterministic { times } => times,
            Schedule::Threshold { grid, .. } => grid,
        };
        all.iter().copied().filter(|t| *t > horizon).collect()
    }

    pub fn last_deterministic_time(&self) -> Option<f64> {
        match self {
            Schedule::Deterministic { times } => times.last().copied(),
            Schedule::Threshold { .. } => None,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Schedule::Deterministic { times } => {
                if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || !strictly_increasing(times) {
                    return Err(Error::NonIncreasingTimes(format!("{times:?}")));
                }
            }
            Schedule::Threshold { grid, thresholds } => {
                if grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || !strictly_increasing(grid) {
                    return Err(Error::NonIncreasingTimes(format!("observation grid {grid:?}")));
                }
                if thresholds.iter().any(|t| !t.is_finite())
                    || !thresholds.windows(2).all(|w| w[0] > w[1])
                {
                    return Err(Error::NonIncreasingTimes(format!(
                        "thresholds must be strictly decreasing: {thresholds:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tracker used while observations arrive on a threshold grid.
    pub fn tracker(&self) -> ThresholdTracker {
        match self {
            Schedule::Deterministic { .. } => ThresholdTracker { thresholds: Vec::new(), fired: Vec::new() },
            Schedule::Threshold { thresholds, .. } => ThresholdTracker {
                thresholds: thresholds.clone(),
                fired: vec![false; thresholds.len()],
            },
        }
    }

    /// Number of signal jumps attached to each event, given the observed
    /// levels `Y` right after each event (first component).
    pub fn jumps_per_event(&self, y_after: &[f64]) -> Vec<usize> {
        match self {
            Schedule::Deterministic { .. } => vec![1; y_after.len()],
            Schedule::Threshold { .. } => {
                let mut tr = self.tracker();
                y_after.iter().map(|y| tr.observe(*y)).collect()
            }
        }
    }
}

/// Causal first-passage bookkeeping; each threshold fires at most once and
/// is never reset.
#[derive(Debug, Clone)]
pub struct ThresholdTracker {
    thresholds: Vec<f64>,
    fired: Vec<bool>,
}

impl ThresholdTracker {
    /// Registers the level observed at the next grid point and returns how
    /// many thresholds fire there.
    pub fn observe(&mut self, y: f64) -> usize {
        let mut count = 0;
        for (theta, fired) in self.thresholds.iter().zip(self.fired.iter_mut()) {
            if !*fired && y <= *theta {
                *fired = true;
                count += 1;
            }
        }
        count
    }
}

/// First-passage times `T_i = inf { s_j : Y_{s_j} <= theta_i }` from the
/// levels observed so far (`y_values[j]` belongs to `grid[j]`).
///
/// `thresholds` lists `theta_K > ... > theta_1`; the result is ordered
/// `T_1, ..., T_K`, with `+inf` for thresholds not yet reached.
pub fn resolve_threshold_times(grid: &[f64], thresholds: &[f64], y_values: &[f64]) -> Vec<f64> {
    let k = thresholds.len();
    let mut times = vec![f64::INFINITY; k];
    for (pos, theta) in thresholds.iter().enumerate() {
        let i = k - pos; // theta_i
        if let Some(j) = y_values.iter().zip(grid).position(|(y, _)| *y <= *theta) {
            times[i - 1] = grid[j];
        }
    }
    times
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_crossing() {
        let t = resolve_threshold_times(&[1.0, 2.0, 3.0], &[0.5], &[0.9, 0.7, 0.4]);
        assert_eq!(t, vec![3.0]);
    }

    #[test]
    fn never_reached_is_infinite() {
        let t = resolve_threshold_times(&[1.0, 2.0], &[0.5], &[0.9, 0.7]);
        assert_eq!(t, vec![f64::INFINITY]);
    }

    #[test]
    fn decreasing_thresholds_fire_in_order() {
        // theta_2 = 0.8 fires at s = 1, theta_1 = 0.5 at s = 2
        let t = resolve_threshold_times(&[1.0, 2.0], &[0.8, 0.5], &[0.7, 0.45]);
        assert_eq!(t, vec![2.0, 1.0]);
    }

    #[test]
    fn causal_use_of_partial_history() {
        let grid = [1.0, 2.0, 3.0];
        let th = [0.8, 0.5];
        assert_eq!(resolve_threshold_times(&grid, &th, &[0.7]), vec![f64::INFINITY, 1.0]);
        assert_eq!(resolve_threshold_times(&grid, &th, &[0.7, 0.9, 0.3]), vec![3.0, 1.0]);
    }

    #[test]
    fn tracker_counts_simultaneous_crossings_once() {
        let s = Schedule::Threshold { grid: vec![1.0, 2.0, 3.0], thresholds: vec![0.8, 0.5] };
        assert_eq!(s.jumps_per_event(&[0.9, 0.4, 0.1]), vec![0, 2, 0]);
        let d = Schedule::Deterministic { times: vec![0.5, 1.0] };
        assert_eq!(d.jumps_per_event(&[0.0, 0.0]), vec![1, 1]);
    }

    #[test]
    fn ordering_violations() {
        assert!(Schedule::Deterministic { times: vec![1.0, 0.5] }.check().is_err());
        assert!(Schedule::Deterministic { times: vec![0.0, 0.5] }.check().is_err());
        assert!(Schedule::Deterministic { times: vec![] }.check().is_ok());
        let th = Schedule::Threshold { grid: vec![1.0, 2.0], thresholds: vec![0.5, 0.8] };
        assert!(matches!(th.check(), Err(Error::NonIncreasingTimes(_))));
    }
}
