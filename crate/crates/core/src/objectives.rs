//! Endpoint-mismatch function and the composite objective functionals: node
//! reachability and controllability objectives, outer-box direction
//! objectives, and the controllability box objective over an augmented
//! (initial point, control) decision vector.

use serde::{Deserialize, Serialize};

use crate::controls::{max_step_excess, ControlBox, RegularizerSpec};
use crate::dynamics::{BlochVector, SegmentPropagator, SystemParams};

/// Norm order of the mismatch function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PNorm {
    L1,
    L2,
}

impl PNorm {
    pub fn value(&self) -> f64 {
        match self {
            PNorm::L1 => 1.0,
            PNorm::L2 => 2.0,
        }
    }

    /// `‖x − y‖_p^p` without the outer root.
    fn dist_pow(&self, x: &BlochVector, y: &BlochVector) -> f64 {
        match self {
            PNorm::L1 => (x - y).abs().sum(),
            PNorm::L2 => (x - y).norm_squared(),
        }
    }
}

/// Exponent applied to the clamped mismatch. The literal formula raises the
/// clamp to the power `p` again; the alternative reading leaves it linear.
/// Both coincide for `p = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterExponent {
    #[default]
    MatchP,
    One,
}

/// Norm order and reachability tolerance of the mismatch function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchSpec {
    pub p: PNorm,
    pub delta_xt: f64,
    pub outer: OuterExponent,
}

impl MismatchSpec {
    pub fn new(p: PNorm, delta_xt: f64) -> Self {
        assert!(delta_xt >= 0.0, "reachability tolerance must be non-negative");
        Self {
            p,
            delta_xt,
            outer: OuterExponent::MatchP,
        }
    }

    pub fn with_outer(mut self, outer: OuterExponent) -> Self {
        self.outer = outer;
        self
    }
}

/// Mismatch between two ball points:
/// `(max{‖x − x̂‖_p^p − δ^p, 0})^p`, with the convention that a zero
/// tolerance yields `‖x − x̂‖_p^p` directly.
pub fn mismatch(x: &BlochVector, xhat: &BlochVector, spec: &MismatchSpec) -> f64 {
    let dist = spec.p.dist_pow(x, xhat);
    if spec.delta_xt == 0.0 {
        return dist;
    }
    let clamped = (dist - spec.delta_xt.powf(spec.p.value())).max(0.0);
    match (spec.outer, spec.p) {
        (OuterExponent::One, _) | (_, PNorm::L1) => clamped,
        (OuterExponent::MatchP, PNorm::L2) => clamped * clamped,
    }
}

/// One of the six signed coordinate axis directions used by the outer-box
/// problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub axis: usize,
    pub negative: bool,
}

impl Direction {
    pub fn all() -> [Direction; 6] {
        let mut out = [Direction {
            axis: 0,
            negative: false,
        }; 6];
        for axis in 0..3 {
            out[2 * axis] = Direction {
                axis,
                negative: false,
            };
            out[2 * axis + 1] = Direction {
                axis,
                negative: true,
            };
        }
        out
    }

    pub fn vector(&self) -> BlochVector {
        let mut v = BlochVector::zeros();
        v[self.axis] = if self.negative { -1.0 } else { 1.0 };
        v
    }

    pub fn label(&self) -> String {
        format!(
            "{}x{}",
            if self.negative { '-' } else { '+' },
            self.axis + 1
        )
    }
}

/// Worst-value sentinel returned for decision vectors the evaluators cannot
/// decode; derivative-free optimizers discard such points.
pub const INFEASIBLE: f64 = f64::MAX;

/// Term-by-term breakdown of one objective evaluation.
#[derive(Clone, Debug)]
pub struct ObjectiveParts {
    pub total: f64,
    /// Endpoint mismatch term (before its weight), when the objective has one.
    pub mismatch: Option<f64>,
    /// Regularizer value (before scaling it is already weighted internally).
    pub regularizer: Option<f64>,
    /// Inner product `⟨a, ·⟩` term of box objectives (before its weight).
    pub inner: Option<f64>,
    /// Largest-step excesses `(v, n)` when the max-step regularizer is active.
    pub step_excess: Option<(f64, f64)>,
    /// Endpoint of the propagated trajectory.
    pub endpoint: BlochVector,
    /// Initial state actually used (the projected controlling point for the
    /// controllability box objective).
    pub initial: BlochVector,
}

fn regularizer_parts(
    v: &[f64],
    n: &[f64],
    reg: &RegularizerSpec,
) -> (f64, Option<(f64, f64)>) {
    match *reg {
        RegularizerSpec::None => (0.0, None),
        RegularizerSpec::Var { beta_dv, beta_dn } => (
            beta_dv * crate::controls::variation(v) + beta_dn * crate::controls::variation(n),
            None,
        ),
        RegularizerSpec::Abs { beta_v, beta_n } => {
            let sum_v: f64 = v.iter().map(|x| x.abs()).sum();
            let sum_n: f64 = n.iter().sum();
            (beta_v * sum_v + beta_n * sum_n, None)
        }
        RegularizerSpec::MaxStep {
            beta_dv,
            beta_dn,
            delta_dv,
            delta_dn,
        } => {
            let (_, ev) = max_step_excess(v, delta_dv);
            let (_, en) = max_step_excess(n, delta_dn);
            (beta_dv * ev + beta_dn * en, Some((ev, en)))
        }
    }
}

/// Reach-a-target objective: propagate a fixed initial state under the decoded
/// control and score the endpoint mismatch to a fixed target, plus the active
/// regularizer. Covers both node reachability (fixed start, grid-node target)
/// and node controllability (grid-node start, fixed target).
pub struct NodeProblem {
    start: BlochVector,
    target: BlochVector,
    beta_xt: f64,
    mismatch: MismatchSpec,
    reg: RegularizerSpec,
    steps_v: usize,
    propagator: SegmentPropagator,
}

impl NodeProblem {
    /// Reachability form: is `target` attainable at `t_final` from `x0`?
    #[allow(clippy::too_many_arguments)]
    pub fn reach(
        x0: BlochVector,
        target: BlochVector,
        t_final: f64,
        params: &SystemParams,
        cbox: &ControlBox,
        mismatch: MismatchSpec,
        reg: RegularizerSpec,
        beta_xt: f64,
    ) -> Self {
        Self {
            start: x0,
            target,
            beta_xt,
            mismatch,
            reg,
            steps_v: cbox.steps_v,
            propagator: SegmentPropagator::new(params, t_final, cbox.steps_v),
        }
    }

    /// Controllability form: does some control steer `start` to `x_target`?
    #[allow(clippy::too_many_arguments)]
    pub fn control(
        start: BlochVector,
        x_target: BlochVector,
        t_final: f64,
        params: &SystemParams,
        cbox: &ControlBox,
        mismatch: MismatchSpec,
        reg: RegularizerSpec,
        beta_xt: f64,
    ) -> Self {
        Self::reach(start, x_target, t_final, params, cbox, mismatch, reg, beta_xt)
    }

    pub fn dimension(&self) -> usize {
        2 * self.steps_v
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.parts(z).total
    }

    pub fn parts(&self, z: &[f64]) -> ObjectiveParts {
        if z.len() != self.dimension() {
            return ObjectiveParts {
                total: INFEASIBLE,
                mismatch: None,
                regularizer: None,
                inner: None,
                step_excess: None,
                endpoint: self.start,
                initial: self.start,
            };
        }
        let (v, n) = z.split_at(self.steps_v);
        let endpoint = self.propagator.endpoint(&self.start, v, n);
        let m = mismatch(&endpoint, &self.target, &self.mismatch);
        let (reg, excess) = regularizer_parts(v, n, &self.reg);
        ObjectiveParts {
            total: self.beta_xt * m + reg,
            mismatch: Some(m),
            regularizer: Some(reg),
            inner: None,
            step_excess: excess,
            endpoint,
            initial: self.start,
        }
    }
}

/// Outer-box direction objective: minimize `⟨a, x(T|u)⟩` (optionally weighted
/// against a regularizer) to extremize one endpoint coordinate.
pub struct BoxProblem {
    x0: BlochVector,
    direction: Direction,
    beta_xt: f64,
    reg: RegularizerSpec,
    steps_v: usize,
    propagator: SegmentPropagator,
}

impl BoxProblem {
    pub fn new(
        x0: BlochVector,
        direction: Direction,
        t_final: f64,
        params: &SystemParams,
        cbox: &ControlBox,
        reg: RegularizerSpec,
        beta_xt: f64,
    ) -> Self {
        Self {
            x0,
            direction,
            beta_xt,
            reg,
            steps_v: cbox.steps_v,
            propagator: SegmentPropagator::new(params, t_final, cbox.steps_v),
        }
    }

    pub fn dimension(&self) -> usize {
        2 * self.steps_v
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.parts(z).total
    }

    pub fn parts(&self, z: &[f64]) -> ObjectiveParts {
        if z.len() != self.dimension() {
            return ObjectiveParts {
                total: INFEASIBLE,
                mismatch: None,
                regularizer: None,
                inner: None,
                step_excess: None,
                endpoint: self.x0,
                initial: self.x0,
            };
        }
        let (v, n) = z.split_at(self.steps_v);
        let endpoint = self.propagator.endpoint(&self.x0, v, n);
        let inner = self.direction.vector().dot(&endpoint);
        let (reg, excess) = regularizer_parts(v, n, &self.reg);
        ObjectiveParts {
            total: self.beta_xt * inner + reg,
            mismatch: None,
            regularizer: Some(reg),
            inner: Some(inner),
            step_excess: excess,
            endpoint,
            initial: self.x0,
        }
    }
}

/// Controllability box objective over the augmented decision vector
/// `(p, u)`: minimize `β_x0 ⟨a, p⟩ + β_xT M(x(T|u, x(0)=p), x_target; δ)`.
/// The optimizer samples `p` in the cube `[-1, 1]³`; points outside the unit
/// ball are projected radially onto it before evaluation.
pub struct CsBoxProblem {
    x_target: BlochVector,
    direction: Direction,
    beta_x0: f64,
    beta_xt: f64,
    mismatch: MismatchSpec,
    steps_v: usize,
    propagator: SegmentPropagator,
}

impl CsBoxProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_target: BlochVector,
        direction: Direction,
        t_final: f64,
        params: &SystemParams,
        cbox: &ControlBox,
        mismatch: MismatchSpec,
        beta_x0: f64,
        beta_xt: f64,
    ) -> Self {
        Self {
            x_target,
            direction,
            beta_x0,
            beta_xt,
            mismatch,
            steps_v: cbox.steps_v,
            propagator: SegmentPropagator::new(params, t_final, cbox.steps_v),
        }
    }

    pub fn dimension(&self) -> usize {
        3 + 2 * self.steps_v
    }

    /// Bounds of the augmented decision vector: the `p` cube followed by the
    /// control box.
    pub fn bounds(&self, cbox: &ControlBox) -> (Vec<f64>, Vec<f64>) {
        let mut lower = vec![-1.0; 3];
        let mut upper = vec![1.0; 3];
        lower.extend(cbox.lower());
        upper.extend(cbox.upper());
        (lower, upper)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.parts(z).total
    }

    pub fn parts(&self, z: &[f64]) -> ObjectiveParts {
        if z.len() != self.dimension() {
            return ObjectiveParts {
                total: INFEASIBLE,
                mismatch: None,
                regularizer: None,
                inner: None,
                step_excess: None,
                endpoint: self.x_target,
                initial: self.x_target,
            };
        }
        let mut p = BlochVector::new(z[0], z[1], z[2]);
        let norm = p.norm();
        if norm > 1.0 {
            p /= norm;
        }
        let (v, n) = z[3..].split_at(self.steps_v);
        let endpoint = self.propagator.endpoint(&p, v, n);
        let m = mismatch(&endpoint, &self.x_target, &self.mismatch);
        let inner = self.direction.vector().dot(&p);
        ObjectiveParts {
            total: self.beta_x0 * inner + self.beta_xt * m,
            mismatch: Some(m),
            regularizer: None,
            inner: Some(inner),
            step_excess: None,
            endpoint,
            initial: p,
        }
    }
}
