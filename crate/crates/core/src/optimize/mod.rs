//! Derivative-free global optimization: differential evolution, dual
//! annealing, and the multi-run protocol with early stop on zero objective.

mod da;
mod de;

pub use da::dual_annealing;
pub use de::differential_evolution;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optimization method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    De,
    Da,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::De => write!(f, "de"),
            Method::Da => write!(f, "da"),
        }
    }
}

/// Differential-evolution hyperparameters (rand/1/bin with dithered mutation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    /// Explicit population size; `None` selects `pop_factor × dimension`.
    pub population: Option<usize>,
    pub pop_factor: usize,
    /// Mutation factor is drawn uniformly from this range once per generation.
    pub f_min: f64,
    pub f_max: f64,
    pub crossover: f64,
    /// Relative fitness spread below which the population counts as stagnant.
    pub stagnation_tol: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self {
            population: None,
            pop_factor: 15,
            f_min: 0.5,
            f_max: 1.0,
            crossover: 0.7,
            stagnation_tol: 1e-10,
        }
    }
}

/// Dual-annealing hyperparameters (generalized simulated annealing with a
/// Tsallis visiting distribution).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaParams {
    pub initial_temp: f64,
    /// Visiting-distribution shape parameter, in (1, 3).
    pub visit: f64,
    /// Acceptance shape parameter (non-positive favors strict descent).
    pub accept: f64,
    /// Fraction of the initial temperature at which the schedule reanneals.
    pub restart_temp_ratio: f64,
    /// Run a coordinate-wise pattern search on the incumbent at each restart
    /// and before returning.
    pub polish: bool,
}

impl Default for DaParams {
    fn default() -> Self {
        Self {
            initial_temp: 5230.0,
            visit: 2.62,
            accept: -5.0,
            restart_temp_ratio: 2e-5,
            polish: true,
        }
    }
}

/// Budget, seed, and method-specific knobs for a single optimizer run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Absolute objective threshold that terminates a run early. Only
    /// meaningful for objectives bounded below by zero; pass `None` to
    /// disable.
    pub stop_tol: Option<f64>,
    pub de: DeParams,
    pub da: DaParams,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::De,
            budget: 30_000,
            seed: 0,
            stop_tol: Some(1e-12),
            de: DeParams::default(),
            da: DaParams::default(),
        }
    }
}

/// Rectangular search region.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidConfig(
                "bound vectors must be non-empty and of equal length".into(),
            ));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "degenerate bound interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn span(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub(crate) fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
            .collect()
    }
}

/// Summary of one optimizer run inside a multi-run protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub best_value: f64,
    pub evaluations: usize,
}

/// Outcome of an optimization: the best decision vector over every evaluation
/// performed, with bookkeeping for reproducibility checks.
#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub runs: usize,
    pub terminated_early: bool,
    pub run_log: Vec<RunSummary>,
}

/// Evaluation harness shared by the optimizers: counts evaluations, enforces
/// the budget, tracks the best point ever seen, and maps non-finite objective
/// values to a worst-value sentinel.
pub(crate) struct Tracker<'a, F: ?Sized> {
    f: &'a F,
    bounds: &'a Bounds,
    budget: usize,
    stop_tol: Option<f64>,
    pub used: usize,
    pub best_value: f64,
    pub best_point: Vec<f64>,
    hit_stop: bool,
}

impl<'a, F: Fn(&[f64]) -> f64 + ?Sized> Tracker<'a, F> {
    pub fn new(f: &'a F, bounds: &'a Bounds, budget: usize, stop_tol: Option<f64>) -> Self {
        Self {
            f,
            bounds,
            budget,
            stop_tol,
            used: 0,
            best_value: f64::INFINITY,
            best_point: vec![0.0; bounds.dim()],
            hit_stop: false,
        }
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        debug_assert!(self.bounds.contains(x), "candidate left the search box");
        let raw = (self.f)(x);
        let value = if raw.is_nan() { f64::MAX } else { raw };
        self.used += 1;
        if value < self.best_value {
            self.best_value = value;
            self.best_point.copy_from_slice(x);
            if let Some(tol) = self.stop_tol {
                if value <= tol {
                    self.hit_stop = true;
                }
            }
        }
        value
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    pub fn should_stop(&self) -> bool {
        self.hit_stop || self.exhausted()
    }

    pub fn into_result(self, method: Method, seed: u64) -> OptResult {
        let summary = RunSummary {
            method,
            seed,
            best_value: self.best_value,
            evaluations: self.used,
        };
        OptResult {
            best_point: self.best_point,
            best_value: self.best_value,
            evaluations: self.used,
            runs: 1,
            terminated_early: self.hit_stop,
            run_log: vec![summary],
        }
    }
}

const SEED_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SEED_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derive a child seed from a base seed and salt values, so
/// batches of runs are reproducible regardless of scheduling order.
pub fn mix_seed(base: u64, salts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for s in salts {
        acc = splitmix64(acc ^ s.wrapping_mul(SEED_GAMMA));
    }
    acc
}

/// Ordered methods, attempt counts, and early-stop policy for repeated runs on
/// one minimization problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRunPlan {
    pub methods: Vec<Method>,
    pub runs_per_method: usize,
    /// A best value at or below this threshold counts as an exact solution.
    pub zero_tol: f64,
    /// Whether the objective is bounded below by zero; early stop applies only
    /// then.
    pub objective_nonnegative: bool,
    /// Optional per-run initial temperatures for the annealer; run `i` of the
    /// annealing method uses entry `i` when present.
    #[serde(default)]
    pub da_temps: Vec<f64>,
}

impl Default for MultiRunPlan {
    fn default() -> Self {
        Self {
            methods: vec![Method::De, Method::Da],
            runs_per_method: 2,
            zero_tol: 1e-12,
            objective_nonnegative: true,
            da_temps: Vec::new(),
        }
    }
}

/// Execute up to `runs_per_method` seeded runs of each method in order,
/// stopping as soon as a non-negative objective reaches zero. Returns the best
/// result over all evaluations of all runs.
pub fn multi_run<F>(f: &F, bounds: &Bounds, base: &OptimizerConfig, plan: &MultiRunPlan) -> OptResult
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    assert!(plan.runs_per_method >= 1, "at least one run per method");
    let mut best_point = Vec::new();
    let mut best_value = f64::INFINITY;
    let mut evaluations = 0;
    let mut run_log = Vec::new();
    let mut terminated_early = false;

    'methods: for (mi, &method) in plan.methods.iter().enumerate() {
        for run in 0..plan.runs_per_method {
            let mut cfg = *base;
            cfg.method = method;
            cfg.seed = mix_seed(base.seed, &[mi as u64, run as u64]);
            cfg.stop_tol = plan.objective_nonnegative.then_some(plan.zero_tol);
            if method == Method::Da {
                if let Some(&temp) = plan.da_temps.get(run) {
                    cfg.da.initial_temp = temp;
                }
            }
            let result = match method {
                Method::De => differential_evolution(f, bounds, &cfg),
                Method::Da => dual_annealing(f, bounds, &cfg),
            };
            evaluations += result.evaluations;
            run_log.extend(result.run_log);
            if result.best_value < best_value {
                best_value = result.best_value;
                best_point = result.best_point;
            }
            if plan.objective_nonnegative && best_value <= plan.zero_tol {
                terminated_early = true;
                break 'methods;
            }
        }
    }

    OptResult {
        best_point,
        best_value,
        evaluations,
        runs: run_log.len(),
        terminated_early,
        run_log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn cube(dim: usize, half: f64) -> Bounds {
        Bounds::new(vec![-half; dim], vec![half; dim]).unwrap()
    }

    #[test]
    fn both_methods_solve_a_convex_quadratic() {
        let center = [0.3, -0.4, 0.1, 0.55];
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(center.iter())
                .map(|(a, c)| (a - c) * (a - c))
                .sum()
        };
        let bounds = cube(4, 1.0);
        for method in [Method::De, Method::Da] {
            let cfg = OptimizerConfig {
                method,
                budget: 20_000,
                seed: 7,
                stop_tol: Some(1e-10),
                ..OptimizerConfig::default()
            };
            let res = match method {
                Method::De => differential_evolution(&f, &bounds, &cfg),
                Method::Da => dual_annealing(&f, &bounds, &cfg),
            };
            assert!(
                res.best_value <= 1e-8,
                "{method}: best {:e} after {} evals",
                res.best_value,
                res.evaluations
            );
            assert!(res.evaluations <= 20_000);
        }
    }

    #[test]
    fn deterministic_replay() {
        let bounds = cube(5, 2.0);
        for method in [Method::De, Method::Da] {
            let cfg = OptimizerConfig {
                method,
                budget: 3000,
                seed: 42,
                stop_tol: None,
                ..OptimizerConfig::default()
            };
            let run = || match method {
                Method::De => differential_evolution(&sphere, &bounds, &cfg),
                Method::Da => dual_annealing(&sphere, &bounds, &cfg),
            };
            let a = run();
            let b = run();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn budget_is_respected() {
        let bounds = cube(6, 1.0);
        for budget in [97, 500, 2001] {
            for method in [Method::De, Method::Da] {
                let cfg = OptimizerConfig {
                    method,
                    budget,
                    seed: 3,
                    stop_tol: None,
                    ..OptimizerConfig::default()
                };
                let res = match method {
                    Method::De => differential_evolution(&sphere, &bounds, &cfg),
                    Method::Da => dual_annealing(&sphere, &bounds, &cfg),
                };
                assert!(res.evaluations <= budget);
            }
        }
    }

    #[test]
    fn every_candidate_stays_inside_the_box() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let violations = AtomicUsize::new(0);
        let lower = vec![-3.0, 0.5, -0.25];
        let upper = vec![-1.0, 2.0, 0.25];
        let bounds = Bounds::new(lower.clone(), upper.clone()).unwrap();
        let f = |x: &[f64]| -> f64 {
            for (v, (lo, hi)) in x.iter().zip(lower.iter().zip(&upper)) {
                if v < lo || v > hi {
                    violations.fetch_add(1, Ordering::Relaxed);
                }
            }
            sphere(x)
        };
        for method in [Method::De, Method::Da] {
            for seed in 0..5 {
                let cfg = OptimizerConfig {
                    method,
                    budget: 2000,
                    seed,
                    stop_tol: None,
                    ..OptimizerConfig::default()
                };
                match method {
                    Method::De => differential_evolution(&f, &bounds, &cfg),
                    Method::Da => dual_annealing(&f, &bounds, &cfg),
                };
            }
        }
        assert_eq!(violations.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn multi_run_early_stops_on_identically_zero_objective() {
        let f = |_: &[f64]| 0.0;
        let bounds = cube(3, 1.0);
        let res = multi_run(
            &f,
            &bounds,
            &OptimizerConfig::default(),
            &MultiRunPlan::default(),
        );
        assert_eq!(res.evaluations, 1);
        assert!(res.terminated_early);
        assert_eq!(res.runs, 1);
    }

    #[test]
    fn multi_run_exhausts_runs_on_positive_objective() {
        let f = |x: &[f64]| 1.0 + sphere(x);
        let bounds = cube(2, 1.0);
        let plan = MultiRunPlan {
            methods: vec![Method::De, Method::Da],
            runs_per_method: 2,
            zero_tol: 1e-12,
            objective_nonnegative: true,
            da_temps: Vec::new(),
        };
        let cfg = OptimizerConfig {
            budget: 500,
            ..OptimizerConfig::default()
        };
        let res = multi_run(&f, &bounds, &cfg, &plan);
        assert_eq!(res.runs, 4);
        assert!(!res.terminated_early);
        assert!(res.best_value >= 1.0);
    }

    #[test]
    fn mixed_seeds_are_distinct_and_stable() {
        let a = mix_seed(1, &[0, 0]);
        let b = mix_seed(1, &[0, 1]);
        let c = mix_seed(1, &[1, 0]);
        let d = mix_seed(2, &[0, 0]);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, mix_seed(1, &[0, 0]));
    }

    #[test]
    fn tracker_best_is_monotone_and_maps_nan_to_worst() {
        let calls = std::cell::Cell::new(0usize);
        let f = |x: &[f64]| -> f64 {
            calls.set(calls.get() + 1);
            match calls.get() {
                1 => 5.0,
                2 => f64::NAN,
                3 => 2.0,
                _ => x[0],
            }
        };
        let bounds = cube(1, 1.0);
        let mut tracker = Tracker::new(&f, &bounds, 10, None);
        assert_eq!(tracker.eval(&[0.0]), 5.0);
        assert_eq!(tracker.eval(&[0.0]), f64::MAX);
        assert_eq!(tracker.best_value, 5.0);
        assert_eq!(tracker.eval(&[0.0]), 2.0);
        assert_eq!(tracker.best_value, 2.0);
    }
}
