//! Bloch-vector dynamics of the two-level open system: drift/control matrices,
//! exact piecewise propagation through the exponential of a 4×4 augmented
//! matrix, an adaptive Runge–Kutta integrator used as an independent oracle,
//! and the density-matrix bijection with the master-equation right-hand side
//! for cross-validation.

use nalgebra::{Matrix2, Matrix3, Matrix4, SVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::controls::PiecewiseControl;
use crate::{Error, Result};

/// State of the system: a point of the closed unit ball in R³.
pub type BlochVector = Vector3<f64>;

/// 2×2 complex density matrix.
pub type DensityMatrix = Matrix2<Complex64>;

/// Tolerance on unit-ball membership for propagated states.
pub const BALL_TOL: f64 = 1e-9;

/// Physical constants defining the Bloch dynamics matrices.
///
/// `kappa` is the dipole coupling divided by the reduced Planck constant;
/// `omega` and `gamma` are the transition frequency and the decay rate, all in
/// dimensionless units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl SystemParams {
    pub fn new(omega: f64, gamma: f64, kappa: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidParams(format!(
                "omega must be positive, got {omega}"
            )));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParams(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(kappa.is_finite() && kappa != 0.0) {
            return Err(Error::InvalidParams(format!(
                "kappa must be finite and non-zero, got {kappa}"
            )));
        }
        Ok(Self {
            omega,
            gamma,
            kappa,
        })
    }
}

/// Matrices of the linear-affine Bloch system
/// `dx/dt = (A + Bᵛ v + Bⁿ n) x + d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochMatrices {
    pub a: Matrix3<f64>,
    pub bv: Matrix3<f64>,
    pub bn: Matrix3<f64>,
    pub d: Vector3<f64>,
}

/// Populate the drift, control, and affine matrices from the physical
/// parameters.
pub fn bloch_matrices(params: &SystemParams) -> BlochMatrices {
    let SystemParams {
        omega,
        gamma,
        kappa,
    } = *params;
    BlochMatrices {
        a: Matrix3::new(
            -gamma / 2.0,
            omega,
            0.0,
            -omega,
            -gamma / 2.0,
            0.0,
            0.0,
            0.0,
            -gamma,
        ),
        bv: Matrix3::new(
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            -2.0 * kappa,
            0.0,
            2.0 * kappa,
            0.0,
        ),
        bn: Matrix3::from_diagonal(&Vector3::new(-gamma, -gamma, -2.0 * gamma)),
        d: Vector3::new(0.0, 0.0, gamma),
    }
}

impl BlochMatrices {
    /// Combined system matrix for constant control values `(v, n)`.
    pub fn drift(&self, v: f64, n: f64) -> Matrix3<f64> {
        self.a + self.bv * v + self.bn * n
    }
}

/// Exact single-segment map `x ↦ R x + s` obtained from the exponential of the
/// augmented matrix `[[W·dt, d·dt], [0, 0]]`.
fn segment_map(mats: &BlochMatrices, v: f64, n: f64, dt: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let w = mats.drift(v, n);
    let mut g = Matrix4::<f64>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(w * dt));
    g.fixed_view_mut::<3, 1>(0, 3).copy_from(&(mats.d * dt));
    let e = g.exp();
    (
        e.fixed_view::<3, 3>(0, 0).into(),
        e.fixed_view::<3, 1>(0, 3).into(),
    )
}

/// Exact piecewise-constant propagator for a fixed horizon and step count.
///
/// Within one call, segment maps are cached by control value so constant and
/// repeated segments cost a single matrix exponential.
pub struct SegmentPropagator {
    mats: BlochMatrices,
    dt: f64,
    steps: usize,
}

impl SegmentPropagator {
    pub fn new(params: &SystemParams, t_final: f64, steps: usize) -> Self {
        Self {
            mats: bloch_matrices(params),
            dt: if steps == 0 { 0.0 } else { t_final / steps as f64 },
            steps,
        }
    }

    fn maps<'c>(
        &self,
        v: f64,
        n: f64,
        cache: &'c mut Vec<(u64, u64, Matrix3<f64>, Vector3<f64>)>,
    ) -> (&'c Matrix3<f64>, &'c Vector3<f64>) {
        let key = (v.to_bits(), n.to_bits());
        let pos = cache.iter().position(|e| (e.0, e.1) == key).unwrap_or_else(|| {
            let (r, s) = segment_map(&self.mats, v, n, self.dt);
            cache.push((key.0, key.1, r, s));
            cache.len() - 1
        });
        let entry = &cache[pos];
        (&entry.2, &entry.3)
    }

    /// Endpoint of the trajectory started at `x0`.
    pub fn endpoint(&self, x0: &BlochVector, v: &[f64], n: &[f64]) -> BlochVector {
        debug_assert_eq!(v.len(), self.steps);
        debug_assert_eq!(n.len(), self.steps);
        if self.dt == 0.0 {
            return *x0;
        }
        let mut cache = Vec::with_capacity(self.steps.min(8));
        let mut x = *x0;
        for j in 0..self.steps {
            let (r, s) = self.maps(v[j], n[j], &mut cache);
            x = r * x + s;
        }
        x
    }

    /// States at every control breakpoint `t_j = j·T/N`, including `x0` and
    /// the endpoint.
    pub fn trajectory(&self, x0: &BlochVector, v: &[f64], n: &[f64]) -> Vec<BlochVector> {
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(*x0);
        if self.dt == 0.0 {
            return out;
        }
        let mut cache = Vec::with_capacity(self.steps.min(8));
        let mut x = *x0;
        for j in 0..self.steps {
            let (r, s) = self.maps(v[j], n[j], &mut cache);
            x = r * x + s;
            out.push(x);
        }
        out
    }
}

fn check_initial_state(x0: &BlochVector) -> Result<()> {
    if x0.norm_squared() > 1.0 + BALL_TOL {
        return Err(Error::InvalidState(format!(
            "initial state outside the closed unit ball: |x|^2 = {}",
            x0.norm_squared()
        )));
    }
    Ok(())
}

/// States at all control breakpoints and at the final time, via per-segment
/// matrix exponentials. A zero-length horizon returns just `x0`.
pub fn propagate_exact(
    x0: &BlochVector,
    u: &PiecewiseControl,
    params: &SystemParams,
) -> Result<Vec<BlochVector>> {
    check_initial_state(x0)?;
    let prop = SegmentPropagator::new(params, u.t_final(), u.steps());
    Ok(prop.trajectory(x0, u.v_values(), u.n_values()))
}

/// Endpoint-only variant of [`propagate_exact`].
pub fn propagate_endpoint_exact(
    x0: &BlochVector,
    u: &PiecewiseControl,
    params: &SystemParams,
) -> Result<BlochVector> {
    check_initial_state(x0)?;
    let prop = SegmentPropagator::new(params, u.t_final(), u.steps());
    Ok(prop.endpoint(x0, u.v_values(), u.n_values()))
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) integration of an autonomous right-hand side
/// over `[0, span]`.
fn rk45<const N: usize, F>(
    rhs: F,
    y0: SVector<f64, N>,
    span: f64,
    rtol: f64,
    atol: f64,
) -> Result<SVector<f64, N>>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    if span == 0.0 {
        return Ok(y0);
    }
    let h_min = (span * 1e-14).max(f64::MIN_POSITIVE * 16.0);
    let mut t = 0.0;
    let mut h = span;
    let mut y = y0;
    let mut k = [SVector::<f64, N>::zeros(); 7];
    k[0] = rhs(&y);

    while t < span {
        if h < h_min {
            return Err(Error::IntegrationFailure(format!(
                "step size underflow at t = {t} (h = {h})"
            )));
        }
        if t + h > span {
            h = span - t;
        }
        for stage in 0..6 {
            let mut arg = y;
            for (j, kj) in k.iter().enumerate().take(stage + 1) {
                arg += *kj * (DP_A[stage][j] * h);
            }
            let _ = DP_C[stage];
            k[stage + 1] = rhs(&arg);
        }
        // Fifth-order solution: stage weights equal the last tableau row.
        let mut y_new = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            y_new += *kj * (DP_A[5][j] * h);
        }
        let mut err_sq = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += DP_E[j] * kj[i];
            }
            e *= h;
            let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / N as f64).sqrt();
        if err <= 1.0 {
            t += h;
            y = y_new;
            k[0] = k[6]; // first-same-as-last
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            k[0] = rhs(&y);
        }
    }
    Ok(y)
}

/// Endpoint by adaptive Runge–Kutta integration, restarted at every control
/// breakpoint so each integrated segment has a smooth right-hand side.
pub fn propagate_adaptive(
    x0: &BlochVector,
    u: &PiecewiseControl,
    params: &SystemParams,
    rtol: f64,
    atol: f64,
) -> Result<BlochVector> {
    check_initial_state(x0)?;
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::IntegrationFailure(
            "tolerances must be positive".into(),
        ));
    }
    let mats = bloch_matrices(params);
    let dt = u.segment_duration();
    let mut x = *x0;
    for j in 0..u.steps() {
        let w = mats.drift(u.v_values()[j], u.n_values()[j]);
        x = rk45(|y| w * y + mats.d, x, dt, rtol, atol)?;
    }
    Ok(x)
}

const SIGMA_1: Matrix2<Complex64> = Matrix2::new(
    Complex64::new(0.0, 0.0),
    Complex64::new(1.0, 0.0),
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 0.0),
);
const SIGMA_2: Matrix2<Complex64> = Matrix2::new(
    Complex64::new(0.0, 0.0),
    Complex64::new(0.0, -1.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(0.0, 0.0),
);
const SIGMA_3: Matrix2<Complex64> = Matrix2::new(
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 0.0),
    Complex64::new(0.0, 0.0),
    Complex64::new(-1.0, 0.0),
);
// Transition operators between the two levels.
const SIGMA_PLUS: Matrix2<Complex64> = Matrix2::new(
    Complex64::new(0.0, 0.0),
    Complex64::new(0.0, 0.0),
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 0.0),
);
const SIGMA_MINUS: Matrix2<Complex64> = Matrix2::new(
    Complex64::new(0.0, 0.0),
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 0.0),
    Complex64::new(0.0, 0.0),
);

/// Density matrix of a Bloch vector: `ρ = (σ0 + Σ xj σj) / 2`.
pub fn density_from_bloch(x: &BlochVector) -> Result<DensityMatrix> {
    if x.norm_squared() > 1.0 + BALL_TOL {
        return Err(Error::InvalidState(format!(
            "Bloch vector outside the closed unit ball: |x|^2 = {}",
            x.norm_squared()
        )));
    }
    let half = Complex64::new(0.5, 0.0);
    Ok(Matrix2::new(
        Complex64::new(1.0 + x[2], 0.0) * half,
        Complex64::new(x[0], -x[1]) * half,
        Complex64::new(x[0], x[1]) * half,
        Complex64::new(1.0 - x[2], 0.0) * half,
    ))
}

/// Bloch vector of a density matrix: `xj = Tr(ρ σj)`. Rejects input that is
/// not Hermitian with unit trace.
pub fn bloch_from_density(rho: &DensityMatrix) -> Result<BlochVector> {
    let tol = 1e-9;
    let herm_defect = (rho[(0, 1)] - rho[(1, 0)].conj()).norm()
        .max(rho[(0, 0)].im.abs())
        .max(rho[(1, 1)].im.abs());
    if herm_defect > tol {
        return Err(Error::InvalidState(format!(
            "matrix is not Hermitian (defect {herm_defect})"
        )));
    }
    let trace = rho[(0, 0)] + rho[(1, 1)];
    if (trace - Complex64::new(1.0, 0.0)).norm() > tol {
        return Err(Error::InvalidState(format!("trace is {trace}, expected 1")));
    }
    Ok(Vector3::new(
        (rho * SIGMA_1).trace().re,
        (rho * SIGMA_2).trace().re,
        (rho * SIGMA_3).trace().re,
    ))
}

/// Right-hand side of the master equation for constant control values:
/// commutator with the controlled Hamiltonian plus the dissipator modulated by
/// the incoherent control. Used as a cross-validation oracle for the Bloch
/// form.
pub fn gksl_rhs(
    rho: &DensityMatrix,
    v: f64,
    n: f64,
    params: &SystemParams,
) -> DensityMatrix {
    let i = Complex64::new(0.0, 1.0);
    let h = Matrix2::new(
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(params.omega, 0.0),
    ) + SIGMA_1 * Complex64::new(params.kappa * v, 0.0);
    let commutator = h * rho - rho * h;

    let anticomm = |a: &Matrix2<Complex64>, b: &Matrix2<Complex64>| a * b + b * a;
    let down = SIGMA_MINUS * rho * SIGMA_PLUS
        - anticomm(&(SIGMA_PLUS * SIGMA_MINUS), rho) * Complex64::new(0.5, 0.0);
    let up = SIGMA_PLUS * rho * SIGMA_MINUS
        - anticomm(&(SIGMA_MINUS * SIGMA_PLUS), rho) * Complex64::new(0.5, 0.0);

    commutator * (-i)
        + down * Complex64::new(params.gamma * (n + 1.0), 0.0)
        + up * Complex64::new(params.gamma * n, 0.0)
}

fn density_to_vec(rho: &DensityMatrix) -> SVector<f64, 8> {
    SVector::<f64, 8>::from([
        rho[(0, 0)].re,
        rho[(0, 0)].im,
        rho[(0, 1)].re,
        rho[(0, 1)].im,
        rho[(1, 0)].re,
        rho[(1, 0)].im,
        rho[(1, 1)].re,
        rho[(1, 1)].im,
    ])
}

fn vec_to_density(y: &SVector<f64, 8>) -> DensityMatrix {
    Matrix2::new(
        Complex64::new(y[0], y[1]),
        Complex64::new(y[2], y[3]),
        Complex64::new(y[4], y[5]),
        Complex64::new(y[6], y[7]),
    )
}

/// Adaptive integration of the master equation itself, restarted at control
/// breakpoints. Independent of the Bloch-form propagators.
pub fn propagate_gksl_adaptive(
    rho0: &DensityMatrix,
    u: &PiecewiseControl,
    params: &SystemParams,
    rtol: f64,
    atol: f64,
) -> Result<DensityMatrix> {
    let dt = u.segment_duration();
    let mut y = density_to_vec(rho0);
    for j in 0..u.steps() {
        let (v, n) = (u.v_values()[j], u.n_values()[j]);
        y = rk45(
            |s| density_to_vec(&gksl_rhs(&vec_to_density(s), v, n, params)),
            y,
            dt,
            rtol,
            atol,
        )?;
    }
    Ok(vec_to_density(&y))
}
