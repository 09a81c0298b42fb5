use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, JointModel, PreparedData, Prf, TrainHistory, Trainer};
use crate::config::{Ablation, TrainConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub arm: Ablation,
    pub seed: u64,
    pub dev_f1: Option<f64>,
    pub test: Option<Prf>,
    pub test_macro: Option<Prf>,
    pub history: Option<TrainHistory>,
    /// Error message when the run failed.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Ablation,
    /// Field-wise medians of micro test scores over successful runs.
    pub median: Option<Prf>,
    /// Test scores of the run with the best dev F1 (earliest seed on ties).
    pub best_by_dev: Option<Prf>,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunOutcome>,
    pub arms: Vec<ArmSummary>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

impl AblationTable {
    pub fn arm(&self, arm: Ablation) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn median_f1(&self, arm: Ablation) -> Option<f64> {
        self.arm(arm).and_then(|a| a.median.map(|m| m.f1))
    }

    /// Fixed-width table, scores as percentages with one decimal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>5}", "arm", "P", "R", "F1", "runs");
        for a in &self.arms {
            let cells = match a.median {
                Some(m) => format!("{:>9.1} {:>9.1} {:>9.1}", 100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1),
                None => format!("{:>9} {:>9} {:>9}", "failed", "-", "-"),
            };
            let runs = if a.failed > 0 {
                format!("{}/{}*", a.succeeded, a.succeeded + a.failed)
            } else {
                a.succeeded.to_string()
            };
            let _ = writeln!(out, "{:<12} {cells} {runs:>5}", a.arm.as_str());
        }
        if self.arms.iter().any(|a| a.failed > 0) {
            out.push_str("* some runs failed; medians cover successful runs only\n");
        }
        out
    }
}

/// Train every ablation arm once per seed on the same data and score each
/// best-dev model on the test split. A failed run is recorded, not fatal.
pub fn ablate(config: &TrainConfig, data: &PreparedData, seeds: &[u64]) -> Result<AblationTable> {
    if data.test.is_empty() {
        return Err(Error::Input("ablation needs a test split".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for arm in Ablation::ALL {
        for &seed in seeds {
            let cfg = config.with_ablation(arm).with_seed(seed);
            let outcome = train(&cfg, data, None).and_then(|o| {
                let eval = o.model.evaluate(&data.test, cfg.trainer.batch_size, data.no_relation())?;
                Ok((o, eval))
            });
            runs.push(match outcome {
                Ok((o, eval)) => RunOutcome {
                    arm,
                    seed,
                    dev_f1: Some(o.history.best_dev_f1),
                    test: Some(Prf::from(&eval.micro)),
                    test_macro: Some(Prf::from(&eval.macro_avg)),
                    history: Some(o.history),
                    failure: None,
                },
                Err(e) => RunOutcome {
                    arm,
                    seed,
                    dev_f1: None,
                    test: None,
                    test_macro: None,
                    history: None,
                    failure: Some(e.to_string()),
                },
            });
        }
    }
    let arms = Ablation::ALL
        .into_iter()
        .map(|arm| {
            let ok: Vec<&RunOutcome> = runs.iter().filter(|r| r.arm == arm && r.test.is_some()).collect();
            let failed = runs.iter().filter(|r| r.arm == arm && r.failure.is_some()).count();
            let field = |f: fn(&Prf) -> f64| median(ok.iter().map(|r| f(r.test.as_ref().unwrap())).collect());
            let median = (!ok.is_empty()).then(|| Prf {
                precision: field(|p| p.precision),
                recall: field(|p| p.recall),
                f1: field(|p| p.f1),
            });
            let mut best: Option<&RunOutcome> = None;
            for r in &ok {
                if best.is_none_or(|b| r.dev_f1 > b.dev_f1) {
                    best = Some(r);
                }
            }
            ArmSummary {
                arm,
                median,
                best_by_dev: best.and_then(|r| r.test),
                succeeded: ok.len(),
                failed,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        runs,
        arms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Mean per-batch time of the full objective over the baseline's.
    pub ratio: f64,
    /// Same, for the full graph built with both weights at zero.
    pub forced_zero_ratio: f64,
    pub full_seconds: f64,
    pub baseline_seconds: f64,
    pub forced_zero_seconds: f64,
    /// Batches timed per configuration (first epoch excluded).
    pub batches: usize,
}

/// Time the full objective against the baseline on identical batches.
/// The three configurations step in lockstep, batch by batch and in
/// rotating order, so drift in machine load hits all of them alike; the
/// first epoch is warm-up.
pub fn measure_overhead(config: &TrainConfig, data: &PreparedData, epochs: usize) -> Result<OverheadReport> {
    if epochs < 2 {
        return Err(Error::Config("overhead measurement needs at least two epochs".into()));
    }
    let full_cfg = config.with_ablation(Ablation::Full);
    let base_cfg = config.with_ablation(Ablation::Baseline);
    let mut forced_cfg = base_cfg.clone();
    forced_cfg.objective.force_aux_graph = true;
    let mut trainers = [&full_cfg, &base_cfg, &forced_cfg]
        .into_iter()
        .map(|c| Trainer::new(c, data, JointModel::new(c, &data.vocab, &data.answers)?))
        .collect::<Result<Vec<_>>>()?;
    let mut times = [Vec::new(), Vec::new(), Vec::new()];
    for epoch in 0..epochs {
        let plans: Vec<Vec<Vec<usize>>> = trainers.iter_mut().map(|t| t.epoch_batches()).collect();
        let steps = plans[0].len();
        #[allow(clippy::needless_range_loop)]
        for i in 0..steps {
            // Rotate the order so no configuration always runs first.
            for r in 0..trainers.len() {
                let k = (i + r) % trainers.len();
                let t = &mut trainers[k];
                let batch = t.make_batch(&plans[k][i])?;
                let rec = t.step(epoch, &batch)?;
                if epoch > 0 {
                    times[k].push(rec.seconds);
                }
            }
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (full, base, forced) = (mean(&times[0]), mean(&times[1]), mean(&times[2]));
    Ok(OverheadReport {
        ratio: full / base,
        forced_zero_ratio: forced / base,
        full_seconds: full,
        baseline_seconds: base,
        forced_zero_seconds: forced,
        batches: times[0].len(),
    })
}
