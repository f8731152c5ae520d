//! Differential evolution, the classic rand/1/bin scheme: uniform population
//! initialization, difference-vector mutation with a per-generation dithered
//! factor, binomial crossover, greedy selection, and reflection of mutants
//! back into the search box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bounds, Method, OptResult, OptimizerConfig, Tracker};

/// Reflect a value into `[lo, hi]` by folding the triangular wave of period
/// `2·(hi − lo)`, so mutants keep their diversity near the bounds.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        return x;
    }
    let span = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * span);
    if t <= span {
        lo + t
    } else {
        hi - (t - span)
    }
}

/// Minimize `f` over `bounds` with differential evolution.
///
/// The run stops at the evaluation budget, when the best value reaches the
/// configured stop threshold, or when the population fitness spread collapses.
pub fn differential_evolution<F>(f: &F, bounds: &Bounds, cfg: &OptimizerConfig) -> OptResult
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let dim = bounds.dim();
    let np = cfg.de.population.unwrap_or(cfg.de.pop_factor * dim).max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker::new(f, bounds, cfg.budget, cfg.stop_tol);

    let mut population: Vec<Vec<f64>> = (0..np).map(|_| bounds.sample(&mut rng)).collect();
    let mut fitness = vec![f64::MAX; np];
    for (member, fit) in population.iter().zip(fitness.iter_mut()) {
        if tracker.should_stop() {
            break;
        }
        *fit = tracker.eval(member);
    }

    let mut trial = vec![0.0; dim];
    while !tracker.should_stop() {
        let factor = rng.gen_range(cfg.de.f_min..=cfg.de.f_max);
        for i in 0..np {
            if tracker.should_stop() {
                break;
            }
            let mut pick = |exclude: &[usize]| loop {
                let r = rng.gen_range(0..np);
                if !exclude.contains(&r) {
                    return r;
                }
            };
            let r1 = pick(&[i]);
            let r2 = pick(&[i, r1]);
            let r3 = pick(&[i, r1, r2]);
            let j_rand = rng.gen_range(0..dim);
            for j in 0..dim {
                let crossed = j == j_rand || rng.gen::<f64>() < cfg.de.crossover;
                trial[j] = if crossed {
                    let mutant = population[r1][j]
                        + factor * (population[r2][j] - population[r3][j]);
                    reflect(mutant, bounds.lower()[j], bounds.upper()[j])
                } else {
                    population[i][j]
                };
            }
            let trial_fit = tracker.eval(&trial);
            if trial_fit <= fitness[i] {
                population[i].copy_from_slice(&trial);
                fitness[i] = trial_fit;
            }
        }

        let (lo, hi) = fitness
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(*v), h.max(*v))
            });
        let scale = lo.abs().max(hi.abs()).max(1e-30);
        if hi - lo <= cfg.de.stagnation_tol * scale {
            break;
        }
    }

    tracker.into_result(Method::De, cfg.seed)
}
