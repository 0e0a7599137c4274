//! Kernel-approximation experiments: error metrics against the exact
//! kernel, Hoeffding budgets and coverage checks.

use std::io::Write;

use crate::data::{synthesize, SynthKind};
use crate::embedding::{empirical_kernel, Embedder, InputRecord, Mode};
use crate::error::{Error, Result};
use crate::features::build_registry;
use crate::kernel_oracle::{exact_kernel, kernel_matrix};
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::skeleton::Skeleton;

/// Relative slack applied before rounding the budget up, so that values
/// like `4 + 1e-15` from `ln` rounding do not jump to the next integer.
const CEIL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetRule {
    pub c: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// `2 C^4 ln(2/delta) / epsilon^2` before rounding.
    pub bound: f64,
    pub q_min: usize,
}

/// Smallest `q` for which `P(|k_hat - k| >= epsilon) <= delta` per pair.
pub fn hoeffding_budget(c: f64, epsilon: f64, delta: f64) -> Result<BudgetRule> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C must be >= 1, got {c}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must be in (0, 1), got {delta}")));
    }
    let bound = 2.0 * c.powi(4) * (2.0 / delta).ln() / (epsilon * epsilon);
    let q_min = (bound * (1.0 - CEIL_SLACK)).ceil().max(1.0);
    if q_min > usize::MAX as f64 {
        return Err(Error::Parameter(format!("budget {bound} is too large")));
    }
    Ok(BudgetRule {
        c,
        epsilon,
        delta,
        bound,
        q_min: q_min as usize,
    })
}

/// Error metrics for one budget. `trial` is `None` for the pooled row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxReport {
    pub budget: usize,
    pub trial: Option<usize>,
    pub trials: usize,
    pub pairs: usize,
    pub mae: f64,
    pub rmse: f64,
    pub max_err: f64,
    pub pearson: f64,
}

/// Running sums over (exact, estimate) pairs.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    abs: f64,
    sq: f64,
    max: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    fn push(&mut self, exact: f64, est: f64) {
        let e = (est - exact).abs();
        self.n += 1;
        self.abs += e;
        self.sq += e * e;
        self.max = self.max.max(e);
        self.sx += exact;
        self.sy += est;
        self.sxx += exact * exact;
        self.syy += est * est;
        self.sxy += exact * est;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.abs += o.abs;
        self.sq += o.sq;
        self.max = self.max.max(o.max);
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }

    fn report(&self, budget: usize, trial: Option<usize>, trials: usize, pairs: usize) -> ApproxReport {
        let n = self.n as f64;
        let max_err = self.max;
        let rmse = (self.sq / n).sqrt().min(max_err);
        let mae = (self.abs / n).min(rmse);
        let vx = self.sxx - self.sx * self.sx / n;
        let vy = self.syy - self.sy * self.sy / n;
        let cov = self.sxy - self.sx * self.sy / n;
        let pearson = if vx > 0.0 && vy > 0.0 {
            (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0)
        } else if max_err == 0.0 {
            1.0
        } else {
            0.0
        };
        ApproxReport {
            budget,
            trial,
            trials,
            pairs,
            mae,
            rmse,
            max_err,
            pearson,
        }
    }
}

/// Per-trial rows followed by one pooled row per budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResults {
    pub per_trial: Vec<ApproxReport>,
    pub pooled: Vec<ApproxReport>,
}

/// Seed of the registry for `(budget index, trial)`.
pub fn trial_seed(seed: u64, budget_index: usize, trial: usize, trials: usize) -> u64 {
    derive_seed(seed, (budget_index * trials + trial) as u64)
}

/// Compares empirical and exact kernels on all off-diagonal pairs `i < j`,
/// for every budget and trial.
pub fn run_approx_experiment(
    skeleton: &Skeleton,
    inputs: &[InputRecord],
    budgets: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<ApproxResults> {
    if inputs.len() < 2 {
        return Err(Error::Parameter("need at least 2 inputs".into()));
    }
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::Parameter("budgets must be nonempty and positive".into()));
    }
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let n = inputs.len();
    let exact = kernel_matrix(skeleton, inputs, exec)?;
    let pairs = n * (n - 1) / 2;
    let tasks = budgets.len() * trials;
    let moments = par::map_range(exec, tasks, |t| -> Result<Moments> {
        let (b, trial) = (t / trials, t % trials);
        let registry = build_registry(
            skeleton,
            budgets[b],
            trial_seed(seed, b, trial, trials),
            Execution::Sequential,
        )?;
        let emb = Embedder::new(skeleton, &registry, Mode::Complex)?;
        let e = emb.embed_batch(inputs, Execution::Sequential)?;
        let mut m = Moments::default();
        for i in 0..n {
            for j in i + 1..n {
                m.push(exact[i * n + j], empirical_kernel(&e[i], &e[j])?);
            }
        }
        Ok(m)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut per_trial = Vec::with_capacity(tasks);
    let mut pooled = Vec::with_capacity(budgets.len());
    for (b, &q) in budgets.iter().enumerate() {
        let mut all = Moments::default();
        for trial in 0..trials {
            let m = &moments[b * trials + trial];
            per_trial.push(m.report(q, Some(trial), trials, pairs));
            all.merge(m);
        }
        pooled.push(all.report(q, None, trials, pairs));
    }
    Ok(ApproxResults { per_trial, pooled })
}

impl ApproxResults {
    /// Mean of the per-trial rmse values at each budget.
    pub fn mean_rmse(&self) -> Vec<(usize, f64)> {
        self.pooled
            .iter()
            .map(|p| {
                let rows: Vec<f64> = self
                    .per_trial
                    .iter()
                    .filter(|r| r.budget == p.budget)
                    .map(|r| r.rmse)
                    .collect();
                (p.budget, rows.iter().sum::<f64>() / rows.len() as f64)
            })
            .collect()
    }

    /// Per-trial rows then pooled rows, header `budget,trial,mae,rmse,max_err,pearson`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget", "trial", "mae", "rmse", "max_err", "pearson"])?;
        for r in self.per_trial.iter().chain(&self.pooled) {
            let trial = r.trial.map_or_else(|| "pooled".to_string(), |t| t.to_string());
            w.write_record([
                r.budget.to_string(),
                trial,
                r.mae.to_string(),
                r.rmse.to_string(),
                r.max_err.to_string(),
                r.pearson.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:>8} {:>6} {:>12} {:>12} {:>12} {:>9}\n",
            "budget", "trials", "mae", "rmse", "max_err", "pearson"
        );
        for r in &self.pooled {
            s.push_str(&format!(
                "{:>8} {:>6} {:>12.6e} {:>12.6e} {:>12.6e} {:>9.6}\n",
                r.budget, r.trials, r.mae, r.rmse, r.max_err, r.pearson
            ));
        }
        s
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub failures: usize,
    pub events: usize,
    pub rate: f64,
    /// `delta + 3 sqrt(delta (1 - delta) / events)`.
    pub allowed: f64,
}

impl CoverageReport {
    pub fn passed(&self) -> bool {
        self.rate <= self.allowed
    }
}

/// Fraction of `(pair, registry)` events with `|k_hat - k| >= epsilon`, over
/// `reps` registries of `q_min` draws and `pairs` synthetic input pairs.
pub fn coverage_check(
    skeleton: &Skeleton,
    rule: &BudgetRule,
    pairs: usize,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<CoverageReport> {
    let bound = skeleton.feature_bound();
    if bound > rule.c * (1.0 + 1e-12) {
        return Err(Error::Parameter(format!(
            "skeleton feature bound {bound} exceeds C = {}",
            rule.c
        )));
    }
    if pairs == 0 || reps == 0 {
        return Err(Error::Parameter("pairs and reps must be positive".into()));
    }
    let points = synthesize(skeleton, 2 * pairs, SynthKind::Iid, 0.0, derive_seed(seed, u64::MAX))?;
    let exact = (0..pairs)
        .map(|p| exact_kernel(skeleton, &points[2 * p], &points[2 * p + 1]))
        .collect::<Result<Vec<f64>>>()?;
    let counts = par::map_range(exec, reps, |r| -> Result<usize> {
        let registry = build_registry(skeleton, rule.q_min, derive_seed(seed, r as u64), Execution::Sequential)?;
        let emb = Embedder::new(skeleton, &registry, Mode::Complex)?;
        let e = emb.embed_batch(&points, Execution::Sequential)?;
        let mut fails = 0;
        for (p, k) in exact.iter().enumerate() {
            if (empirical_kernel(&e[2 * p], &e[2 * p + 1])? - k).abs() >= rule.epsilon {
                fails += 1;
            }
        }
        Ok(fails)
    });
    let failures = counts.into_iter().sum::<Result<usize>>()?;
    let events = pairs * reps;
    let d = rule.delta;
    Ok(CoverageReport {
        failures,
        events,
        rate: failures as f64 / events as f64,
        allowed: d + 3.0 * (d * (1.0 - d) / events as f64).sqrt(),
    })
}
