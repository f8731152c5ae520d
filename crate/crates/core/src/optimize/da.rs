//! Dual annealing: generalized simulated annealing with a Tsallis visiting
//! distribution, a slow power-law temperature schedule, generalized Metropolis
//! acceptance, and an optional coordinate-wise pattern-search polish of the
//! incumbent at each reannealing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use super::{Bounds, Method, OptResult, OptimizerConfig, Tracker};

/// Displacements larger than this are resampled uniformly below the limit.
const TAIL_LIMIT: f64 = 1e8;

/// Sampler for the heavy-tailed visiting distribution. The shape parameter
/// `qv ∈ (1, 3)` interpolates between Gaussian-like and Cauchy-like tails.
struct VisitSampler {
    qv: f64,
    factor4_p: f64,
    factor6: f64,
}

impl VisitSampler {
    fn new(qv: f64) -> Self {
        assert!(qv > 1.0 && qv < 3.0, "visiting parameter must lie in (1, 3)");
        let factor2 = ((4.0 - qv) * (qv - 1.0).ln()).exp();
        let factor3 = ((2.0 - qv) * 2f64.ln() / (qv - 1.0)).exp();
        let factor4_p = std::f64::consts::PI.sqrt() * factor2 / (factor3 * (3.0 - qv));
        let factor5 = 1.0 / (qv - 1.0) - 0.5;
        let d1 = 2.0 - factor5;
        let factor6 = std::f64::consts::PI * (1.0 - factor5)
            / (std::f64::consts::PI * (1.0 - factor5)).sin()
            / ln_gamma(d1).exp();
        Self {
            qv,
            factor4_p,
            factor6,
        }
    }

    fn sample(&self, temperature: f64, rng: &mut ChaCha8Rng) -> f64 {
        let factor1 = (temperature.ln() / (self.qv - 1.0)).exp();
        let factor4 = self.factor4_p * factor1;
        let sigmax = (-(self.qv - 1.0) * (self.factor6 / factor4).ln() / (3.0 - self.qv)).exp();
        let x: f64 = sigmax * rng.sample::<f64, _>(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let den = ((self.qv - 1.0) * y.abs().ln() / (3.0 - self.qv)).exp();
        let visit = x / den;
        if !visit.is_finite() || visit.abs() > TAIL_LIMIT {
            let sign = if visit.is_nan() {
                if rng.gen::<f64>() < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                visit.signum()
            };
            sign * TAIL_LIMIT * rng.gen::<f64>()
        } else {
            visit
        }
    }

    /// One Markov-chain proposal: the first `dim` steps of a chain displace
    /// every coordinate, the remaining steps displace a single one.
    /// Candidates are clipped to the box.
    fn propose(
        &self,
        current: &[f64],
        step: usize,
        temperature: f64,
        bounds: &Bounds,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let dim = current.len();
        let mut out = current.to_vec();
        if step < dim {
            for (j, value) in out.iter_mut().enumerate() {
                let visit = self.sample(temperature, rng);
                *value = (current[j] + visit).clamp(bounds.lower()[j], bounds.upper()[j]);
            }
        } else {
            let j = step - dim;
            let visit = self.sample(temperature, rng);
            out[j] = (current[j] + visit).clamp(bounds.lower()[j], bounds.upper()[j]);
        }
        out
    }
}

/// Greedy compass search from the tracker's incumbent: accept coordinate moves
/// that improve, halve the step when a full sweep fails, stop when steps are
/// negligible or the local evaluation cap is spent.
fn pattern_search<F>(tracker: &mut Tracker<'_, F>, bounds: &Bounds, cap: usize)
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    if tracker.used == 0 || cap == 0 {
        return;
    }
    let dim = bounds.dim();
    let mut x = tracker.best_point.clone();
    let mut fx = tracker.best_value;
    let mut steps: Vec<f64> = (0..dim).map(|j| 0.1 * bounds.span(j)).collect();
    let mut local_used = 0;

    loop {
        let live = steps
            .iter()
            .enumerate()
            .any(|(j, s)| *s > 1e-9 * bounds.span(j));
        if !live || local_used >= cap || tracker.should_stop() {
            break;
        }
        let mut improved = false;
        'coords: for j in 0..dim {
            for dir in [1.0, -1.0] {
                if local_used >= cap || tracker.should_stop() {
                    break 'coords;
                }
                let old = x[j];
                let candidate = (old + dir * steps[j]).clamp(bounds.lower()[j], bounds.upper()[j]);
                if candidate == old {
                    continue;
                }
                x[j] = candidate;
                let value = tracker.eval(&x);
                local_used += 1;
                if value < fx {
                    fx = value;
                    improved = true;
                    break;
                }
                x[j] = old;
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }
}

/// Minimize `f` over `bounds` with dual annealing.
pub fn dual_annealing<F>(f: &F, bounds: &Bounds, cfg: &OptimizerConfig) -> OptResult
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let dim = bounds.dim();
    let qv = cfg.da.visit;
    let qa = cfg.da.accept;
    let sampler = VisitSampler::new(qv);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker::new(f, bounds, cfg.budget, cfg.stop_tol);

    let polish_cap = if cfg.da.polish {
        (150 * dim).min(cfg.budget / 4).max(1)
    } else {
        0
    };
    // Reserve a slice of the budget so the final polish can always run.
    let anneal_budget = cfg.budget.saturating_sub(polish_cap);

    let mut current = bounds.sample(&mut rng);
    let mut current_energy = tracker.eval(&current);

    let schedule_scale = 2f64.powf(qv - 1.0) - 1.0;
    let mut k: u64 = 1;
    while !tracker.should_stop() && tracker.used < anneal_budget {
        let temperature = cfg.da.initial_temp * schedule_scale
            / ((1.0 + k as f64).powf(qv - 1.0) - 1.0);
        if temperature < cfg.da.restart_temp_ratio * cfg.da.initial_temp {
            if cfg.da.polish {
                pattern_search(&mut tracker, bounds, polish_cap);
            }
            if tracker.should_stop() {
                break;
            }
            current = bounds.sample(&mut rng);
            current_energy = tracker.eval(&current);
            k = 1;
            continue;
        }
        let acceptance_temp = temperature / k as f64;
        for step in 0..(2 * dim) {
            if tracker.should_stop() || tracker.used >= anneal_budget {
                break;
            }
            let candidate = sampler.propose(&current, step, temperature, bounds, &mut rng);
            let energy = tracker.eval(&candidate);
            let accept = if energy < current_energy {
                true
            } else {
                let base = 1.0 - (1.0 - qa) * (energy - current_energy) / acceptance_temp;
                base > 0.0 && rng.gen::<f64>() < base.powf(1.0 / (1.0 - qa))
            };
            if accept {
                current = candidate;
                current_energy = energy;
            }
        }
        k += 1;
    }

    if cfg.da.polish && !tracker.should_stop() {
        pattern_search(&mut tracker, bounds, polish_cap);
    }

    tracker.into_result(Method::Da, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Asymmetric double well on [-2, 2] with its global minimum in the left
    /// basin near x = -1.02 and a strictly worse local minimum near x = +0.96.
    fn double_well(x: &[f64]) -> f64 {
        let t = x[0];
        (t * t - 1.0) * (t * t - 1.0) + 0.3 * t
    }

    #[test]
    fn finds_the_global_basin_of_a_double_well() {
        // Certify the global basin by brute-force scan.
        let mut best_grid = (f64::INFINITY, 0.0);
        for i in 0..=400_000 {
            let t = -2.0 + 4.0 * i as f64 / 400_000.0;
            let v = double_well(&[t]);
            if v < best_grid.0 {
                best_grid = (v, t);
            }
        }
        assert!(best_grid.1 < 0.0);
        let local_min_value = {
            let mut best = f64::INFINITY;
            for i in 0..=200_000 {
                let t = 0.5 + 1.5 * i as f64 / 200_000.0;
                best = best.min(double_well(&[t]));
            }
            best
        };

        let bounds = Bounds::new(vec![-2.0], vec![2.0]).unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let cfg = OptimizerConfig {
                method: Method::Da,
                budget: 2000,
                seed,
                stop_tol: None,
                ..OptimizerConfig::default()
            };
            let res = dual_annealing(&double_well, &bounds, &cfg);
            if res.best_value < local_min_value - 1e-3 && res.best_point[0] < 0.0 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "global basin found in only {hits}/100 runs");
    }

    #[test]
    fn visit_sampler_produces_finite_clipped_proposals() {
        let sampler = VisitSampler::new(2.62);
        let bounds = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let current = vec![0.0; 3];
        for step in 0..600 {
            for temp in [5230.0, 10.0, 1e-3] {
                let cand = sampler.propose(&current, step % 6, temp, &bounds, &mut rng);
                assert!(bounds.contains(&cand), "proposal left the box: {cand:?}");
            }
        }
    }

    #[test]
    fn pattern_search_refines_a_quadratic_incumbent() {
        let f = |x: &[f64]| (x[0] - 0.3) * (x[0] - 0.3) + (x[1] + 0.4) * (x[1] + 0.4);
        let bounds = Bounds::new(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let mut tracker = Tracker::new(&f, &bounds, 5000, None);
        tracker.eval(&[0.0, 0.0]);
        pattern_search(&mut tracker, &bounds, 4000);
        assert!(tracker.best_value < 1e-10);
    }
}
