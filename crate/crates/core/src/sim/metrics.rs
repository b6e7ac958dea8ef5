use serde::{Deserialize, Serialize};

use super::{PhaseTimes, RunLog, Scenario};

/// Aggregate statistics over the runs of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub runs: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    /// Percentage of (run, step) pairs with `H_i x_k > h_i` over
    /// `k = 1..=N`, one entry per state constraint.
    pub violation_pct: Vec<f64>,
    /// Same over the whole simulation.
    pub violation_pct_full: Vec<f64>,
    /// Mean back-off in use at each step `k = 0..=T_s`.
    pub mean_eta: Vec<Vec<f64>>,
    /// Fraction of accepted updates, when the loop performs updates.
    pub flag_rate: Option<f64>,
    pub mean_times: PhaseTimes,
}

fn violation_pct(logs: &[RunLog], steps: usize, rows: usize) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            let mut hits = 0usize;
            let mut total = 0usize;
            for log in logs {
                for v in log.violations.iter().take(steps) {
                    total += 1;
                    hits += v[i] as usize;
                }
            }
            if total == 0 {
                0.0
            } else {
                100.0 * hits as f64 / total as f64
            }
        })
        .collect()
}

pub fn metrics(logs: &[RunLog], scn: &Scenario) -> Summary {
    let count = logs.len();
    let costs: Vec<f64> = logs.iter().map(|l| l.j_cost).collect();
    let mean_cost = if count == 0 { 0.0 } else { costs.iter().sum::<f64>() / count as f64 };
    let std_cost = if count < 2 {
        0.0
    } else {
        (costs.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    };
    let rows = scn.cfg.x_set.n_rows();
    let horizon = scn.cfg.horizon;
    let steps = logs.iter().map(|l| l.steps.len()).max().unwrap_or(0);
    let mean_eta = (0..steps)
        .map(|k| {
            let mut acc = vec![0.0; rows];
            let mut c = 0usize;
            for l in logs {
                if let Some(s) = l.steps.get(k) {
                    for (a, e) in acc.iter_mut().zip(s.eta.iter()) {
                        *a += e;
                    }
                    c += 1;
                }
            }
            acc.iter().map(|a| a / c.max(1) as f64).collect()
        })
        .collect();
    let flags: Vec<bool> = logs.iter().flat_map(|l| l.steps.iter().filter_map(|s| s.flag)).collect();
    let flag_rate = if flags.is_empty() {
        None
    } else {
        Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
    };
    let mut mean_times = PhaseTimes::default();
    let mut samples = 0usize;
    for l in logs {
        for s in &l.steps {
            mean_times.add(&s.times);
            samples += 1;
        }
    }
    if samples > 0 {
        mean_times.scale(1.0 / samples as f64);
    }
    Summary {
        scenario: scn.name.clone(),
        runs: count,
        mean_cost,
        std_cost,
        violation_pct: violation_pct(logs, horizon, rows),
        violation_pct_full: violation_pct(logs, usize::MAX, rows),
        mean_eta,
        flag_rate,
        mean_times,
    }
}
