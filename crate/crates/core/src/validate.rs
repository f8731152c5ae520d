//! Built-in oracle suite: fast self-checks of the numerical core against
//! independently computed references, runnable from the command line on any
//! installation.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controls::{
    regularizer_bounds, suggest_weights, ControlBox, PiecewiseControl,
};
use crate::dynamics::{
    bloch_from_density, bloch_matrices, density_from_bloch, propagate_adaptive,
    propagate_endpoint_exact, propagate_exact, propagate_gksl_adaptive, BlochMatrices,
    BlochVector, SystemParams, BALL_TOL,
};
use crate::estimation::{build_grid, GridSpec};
use crate::objectives::PNorm;
use crate::optimize::{
    differential_evolution, dual_annealing, Bounds, Method, OptimizerConfig,
};

/// Outcome of one self-check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            detail,
        }
    }
}

fn reference_params() -> SystemParams {
    SystemParams::new(1.0, 0.05, 0.01).unwrap()
}

fn reference_box() -> ControlBox {
    ControlBox::new(-100.0, 100.0, 20.0, 1.0, 10, 10).unwrap()
}

fn random_control(rng: &mut ChaCha8Rng, cbox: &ControlBox, t_final: f64) -> PiecewiseControl {
    let (v_lo, v_hi) = cbox.v_bounds();
    let (_, n_hi) = cbox.n_bounds();
    let v = (0..cbox.steps_v).map(|_| rng.gen_range(v_lo..=v_hi)).collect();
    let n = (0..cbox.steps_n).map(|_| rng.gen_range(0.0..=n_hi)).collect();
    PiecewiseControl::new(t_final, v, n).unwrap()
}

fn check_grid() -> Check {
    let spec = GridSpec::new(20, 1.0, PNorm::L1).unwrap();
    let n20 = build_grid(spec).len();
    let n2 = build_grid(GridSpec::new(2, 1.0, PNorm::L1).unwrap()).len();
    if n20 == 4169 && n2 == 7 {
        Check::pass("grid-cardinality", format!("M=20 -> {n20}, M=2 -> {n2}"))
    } else {
        Check::fail(
            "grid-cardinality",
            format!("M=20 -> {n20} (want 4169), M=2 -> {n2} (want 7)"),
        )
    }
}

/// Entrywise comparison against independently written constants, so a
/// corrupted matrix element is caught even if both propagation routes share
/// the same matrices.
pub fn matrices_match_reference(m: &BlochMatrices, p: &SystemParams) -> bool {
    let (w, g, k) = (p.omega, p.gamma, p.kappa);
    let expected_a = [
        [-g / 2.0, w, 0.0],
        [-w, -g / 2.0, 0.0],
        [0.0, 0.0, -g],
    ];
    let expected_bv = [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, -2.0 * k],
        [0.0, 2.0 * k, 0.0],
    ];
    let expected_bn = [
        [-g, 0.0, 0.0],
        [0.0, -g, 0.0],
        [0.0, 0.0, -2.0 * g],
    ];
    for i in 0..3 {
        for j in 0..3 {
            if m.a[(i, j)] != expected_a[i][j]
                || m.bv[(i, j)] != expected_bv[i][j]
                || m.bn[(i, j)] != expected_bn[i][j]
            {
                return false;
            }
        }
    }
    m.d == Vector3::new(0.0, 0.0, g)
}

fn check_matrices() -> Check {
    let p = reference_params();
    let m = bloch_matrices(&p);
    if matrices_match_reference(&m, &p) {
        Check::pass("matrix-constants", "all entries match".into())
    } else {
        Check::fail("matrix-constants", "entry deviates from reference".into())
    }
}

fn check_propagator_cross_validation() -> Check {
    let p = reference_params();
    let cbox = reference_box();
    let mut rng = ChaCha8Rng::seed_from_u64(20_210_603);
    let mut worst_adaptive = 0.0f64;
    let mut worst_gksl = 0.0f64;
    for _ in 0..20 {
        let x0 = sample_ball(&mut rng);
        let u = random_control(&mut rng, &cbox, 10.0);
        let exact = propagate_endpoint_exact(&x0, &u, &p).unwrap();
        let adaptive = propagate_adaptive(&x0, &u, &p, 1e-10, 1e-10).unwrap();
        worst_adaptive = worst_adaptive.max((exact - adaptive).norm());
        let rho = propagate_gksl_adaptive(
            &density_from_bloch(&x0).unwrap(),
            &u,
            &p,
            1e-10,
            1e-12,
        )
        .unwrap();
        worst_gksl = worst_gksl.max((exact - bloch_from_density(&rho).unwrap()).norm());
    }
    let detail = format!("adaptive {worst_adaptive:.2e}, master-equation {worst_gksl:.2e}");
    if worst_adaptive <= 1e-8 && worst_gksl <= 1e-7 {
        Check::pass("propagator-cross-validation", detail)
    } else {
        Check::fail("propagator-cross-validation", detail)
    }
}

fn sample_ball(rng: &mut ChaCha8Rng) -> BlochVector {
    loop {
        let c = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if c.norm_squared() <= 1.0 {
            return c;
        }
    }
}

fn check_steady_states() -> Check {
    let p = reference_params();
    let mut worst = 0.0f64;
    for n in [0.0, 0.5, 2.0, 20.0] {
        let u = PiecewiseControl::constant(400.0, 0.0, n, 10).unwrap();
        let end = propagate_endpoint_exact(&Vector3::zeros(), &u, &p).unwrap();
        let expected = Vector3::new(0.0, 0.0, 1.0 / (1.0 + 2.0 * n));
        worst = worst.max((end - expected).norm());
    }
    if worst <= 1e-3 {
        Check::pass("steady-states", format!("worst deviation {worst:.2e}"))
    } else {
        Check::fail("steady-states", format!("worst deviation {worst:.2e}"))
    }
}

fn check_weight_balancing() -> Check {
    let cbox = reference_box().scaled(0.4).unwrap();
    let bounds = regularizer_bounds(&cbox, 10.0, 0.5);
    if bounds.step_excess_v != 70.0 || bounds.step_excess_n != 7.5 {
        return Check::fail(
            "weight-balancing",
            format!(
                "bounds ({}, {}) differ from (70, 7.5)",
                bounds.step_excess_v, bounds.step_excess_n
            ),
        );
    }
    let cases = [
        ((10.0, 0.5), (36.0, 1.0, 9.0)),
        ((20.0, 1.0), (31.0, 1.0, 9.0)),
        ((40.0, 2.0), (21.0, 1.0, 7.0)),
    ];
    for ((dv, dn), want) in cases {
        let w = suggest_weights(&cbox, dv, dn, 0.05, PNorm::L1);
        if (w.beta_xt, w.beta_dv, w.beta_dn) != want {
            return Check::fail(
                "weight-balancing",
                format!(
                    "thresholds ({dv}, {dn}) gave ({}, {}, {}), want {want:?}",
                    w.beta_xt, w.beta_dv, w.beta_dn
                ),
            );
        }
    }
    Check::pass("weight-balancing", "all published triples reproduced".into())
}

fn check_optimizers() -> Check {
    let center = [0.3, -0.4, 0.1, 0.55];
    let f = |x: &[f64]| -> f64 {
        x.iter()
            .zip(center.iter())
            .map(|(a, c)| (a - c) * (a - c))
            .sum()
    };
    let bounds = Bounds::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
    let mut details = Vec::new();
    for method in [Method::De, Method::Da] {
        let cfg = OptimizerConfig {
            method,
            budget: 20_000,
            seed: 11,
            stop_tol: Some(1e-10),
            ..OptimizerConfig::default()
        };
        let res = match method {
            Method::De => differential_evolution(&f, &bounds, &cfg),
            Method::Da => dual_annealing(&f, &bounds, &cfg),
        };
        details.push(format!("{method} {:.1e}", res.best_value));
        if res.best_value > 1e-8 {
            return Check::fail("optimizer-sanity", details.join(", "));
        }
    }
    Check::pass("optimizer-sanity", details.join(", "))
}

fn check_ball_invariance() -> Check {
    let p = reference_params();
    let cbox = reference_box();
    let mut rng = ChaCha8Rng::seed_from_u64(4_242);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let zc: f64 = rng.gen_range(-1.0..1.0);
        let r = (1.0 - zc * zc).sqrt();
        let x0 = Vector3::new(r * theta.cos(), r * theta.sin(), zc);
        let u = random_control(&mut rng, &cbox, 5.0);
        for x in propagate_exact(&x0, &u, &p).unwrap() {
            worst = worst.max(x.norm_squared());
        }
    }
    if worst <= 1.0 + BALL_TOL {
        Check::pass("ball-invariance", format!("max |x|^2 = {worst:.12}"))
    } else {
        Check::fail("ball-invariance", format!("max |x|^2 = {worst:.12}"))
    }
}

/// Run every self-check and return the results.
pub fn run_all() -> Vec<Check> {
    vec![
        check_grid(),
        check_matrices(),
        check_propagator_cross_validation(),
        check_steady_states(),
        check_weight_balancing(),
        check_optimizers(),
        check_ball_invariance(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_every_check() {
        for check in run_all() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn corrupted_matrix_constant_is_caught() {
        let p = reference_params();
        let mut m = bloch_matrices(&p);
        assert!(matrices_match_reference(&m, &p));
        m.a[(2, 2)] = -0.049;
        assert!(!matrices_match_reference(&m, &p));
    }
}
