//! Piecewise-constant control representation, magnitude boxes, variation
//! measures and regularizers, and the closed-form upper bounds used to balance
//! objective weights.

use serde::{Deserialize, Serialize};

use crate::objectives::PNorm;
use crate::{Error, Result};

/// Step-constant coherent (`v`) and incoherent (`n`) control values on a
/// uniform time grid over `[0, t_final]`.
///
/// Both channels share the same number of steps; the incoherent channel is
/// non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseControl {
    t_final: f64,
    v_values: Vec<f64>,
    n_values: Vec<f64>,
}

impl PiecewiseControl {
    pub fn new(t_final: f64, v_values: Vec<f64>, n_values: Vec<f64>) -> Result<Self> {
        if !t_final.is_finite() || t_final < 0.0 {
            return Err(Error::InvalidControl(format!(
                "final time must be finite and non-negative, got {t_final}"
            )));
        }
        if v_values.is_empty() || n_values.is_empty() {
            return Err(Error::InvalidControl("empty control vector".into()));
        }
        if v_values.len() != n_values.len() {
            return Err(Error::InvalidControl(format!(
                "channel step counts differ: {} vs {}",
                v_values.len(),
                n_values.len()
            )));
        }
        if v_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidControl("non-finite coherent value".into()));
        }
        if n_values.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return Err(Error::InvalidControl(
                "incoherent values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            t_final,
            v_values,
            n_values,
        })
    }

    /// Constant control on both channels.
    pub fn constant(t_final: f64, v: f64, n: f64, steps: usize) -> Result<Self> {
        Self::new(t_final, vec![v; steps], vec![n; steps])
    }

    /// The free flow: both channels identically zero.
    pub fn free(t_final: f64, steps: usize) -> Result<Self> {
        Self::constant(t_final, 0.0, 0.0, steps)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.v_values.len()
    }

    pub fn segment_duration(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    pub fn v_values(&self) -> &[f64] {
        &self.v_values
    }

    pub fn n_values(&self) -> &[f64] {
        &self.n_values
    }

    /// Decision vector `(v_0..v_{N-1}, n_0..n_{N-1})`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.steps());
        out.extend_from_slice(&self.v_values);
        out.extend_from_slice(&self.n_values);
        out
    }

    /// Restriction of the control to `[0, t_final/2]` and `[t_final/2, t_final]`.
    /// Requires an even step count.
    pub fn split_halves(&self) -> Result<(Self, Self)> {
        let n = self.steps();
        if n % 2 != 0 {
            return Err(Error::InvalidControl(
                "cannot split an odd number of steps at the midpoint".into(),
            ));
        }
        let half = self.t_final * 0.5;
        let first = Self::new(
            half,
            self.v_values[..n / 2].to_vec(),
            self.n_values[..n / 2].to_vec(),
        )?;
        let second = Self::new(
            half,
            self.v_values[n / 2..].to_vec(),
            self.n_values[n / 2..].to_vec(),
        )?;
        Ok((first, second))
    }
}

/// Magnitude bounds and step counts defining the finite-dimensional search
/// space `[v_min·d, v_max·d]^Nv × [0, n_max·d]^Nn`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub v_min: f64,
    pub v_max: f64,
    pub n_max: f64,
    pub d_mult: f64,
    pub steps_v: usize,
    pub steps_n: usize,
}

impl ControlBox {
    pub fn new(
        v_min: f64,
        v_max: f64,
        n_max: f64,
        d_mult: f64,
        steps_v: usize,
        steps_n: usize,
    ) -> Result<Self> {
        if !(v_min < v_max) {
            return Err(Error::InvalidControl(format!(
                "coherent bounds must satisfy v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        if !(n_max > 0.0) {
            return Err(Error::InvalidControl(format!(
                "incoherent bound must be positive, got {n_max}"
            )));
        }
        if !(d_mult > 0.0 && d_mult <= 1.0) {
            return Err(Error::InvalidControl(format!(
                "scale multiplier must lie in (0, 1], got {d_mult}"
            )));
        }
        if steps_v == 0 || steps_n == 0 {
            return Err(Error::InvalidControl("step counts must be positive".into()));
        }
        Ok(Self {
            v_min,
            v_max,
            n_max,
            d_mult,
            steps_v,
            steps_n,
        })
    }

    /// Effective coherent bounds after the multiplier.
    pub fn v_bounds(&self) -> (f64, f64) {
        (self.v_min * self.d_mult, self.v_max * self.d_mult)
    }

    /// Effective incoherent bounds after the multiplier.
    pub fn n_bounds(&self) -> (f64, f64) {
        (0.0, self.n_max * self.d_mult)
    }

    pub fn v_span(&self) -> f64 {
        (self.v_max - self.v_min) * self.d_mult
    }

    /// Dimension of the decision space.
    pub fn dimension(&self) -> usize {
        self.steps_v + self.steps_n
    }

    /// Shrink the box by an additional multiplier, nesting the search space.
    pub fn scaled(&self, d_mult: f64) -> Result<Self> {
        if !(d_mult > 0.0 && d_mult <= 1.0) {
            return Err(Error::InvalidControl(format!(
                "scale multiplier must lie in (0, 1], got {d_mult}"
            )));
        }
        Ok(Self {
            d_mult: self.d_mult * d_mult,
            ..*self
        })
    }

    /// Lower bounds of the flattened decision vector `(v.., n..)`.
    pub fn lower(&self) -> Vec<f64> {
        let (v_lo, _) = self.v_bounds();
        let mut out = vec![v_lo; self.steps_v];
        out.extend(std::iter::repeat_n(0.0, self.steps_n));
        out
    }

    /// Upper bounds of the flattened decision vector `(v.., n..)`.
    pub fn upper(&self) -> Vec<f64> {
        let (_, v_hi) = self.v_bounds();
        let (_, n_hi) = self.n_bounds();
        let mut out = vec![v_hi; self.steps_v];
        out.extend(std::iter::repeat_n(n_hi, self.steps_n));
        out
    }

    fn check_component(&self, idx: usize, value: f64) -> Result<()> {
        let (lo, hi) = if idx < self.steps_v {
            self.v_bounds()
        } else {
            self.n_bounds()
        };
        // Tiny slack absorbs round-off from optimizer boundary handling.
        let slack = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
        if value < lo - slack || value > hi + slack {
            return Err(Error::OutOfBox(format!(
                "component {idx} = {value} outside [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Decode a decision vector into a control, rejecting out-of-box values.
    pub fn unflatten(&self, vector: &[f64], t_final: f64) -> Result<PiecewiseControl> {
        if vector.len() != self.dimension() {
            return Err(Error::OutOfBox(format!(
                "decision vector has length {}, expected {}",
                vector.len(),
                self.dimension()
            )));
        }
        for (idx, value) in vector.iter().enumerate() {
            self.check_component(idx, *value)?;
        }
        let v = vector[..self.steps_v].to_vec();
        let mut n = vector[self.steps_v..].to_vec();
        // Clamp round-off below zero on the incoherent channel.
        for x in &mut n {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        PiecewiseControl::new(t_final, v, n)
    }

    /// Decode with explicit clamping of every component into the box.
    pub fn unflatten_clamped(&self, vector: &[f64], t_final: f64) -> Result<PiecewiseControl> {
        if vector.len() != self.dimension() {
            return Err(Error::OutOfBox(format!(
                "decision vector has length {}, expected {}",
                vector.len(),
                self.dimension()
            )));
        }
        let (v_lo, v_hi) = self.v_bounds();
        let (n_lo, n_hi) = self.n_bounds();
        let v = vector[..self.steps_v]
            .iter()
            .map(|x| x.clamp(v_lo, v_hi))
            .collect();
        let n = vector[self.steps_v..]
            .iter()
            .map(|x| x.clamp(n_lo, n_hi))
            .collect();
        PiecewiseControl::new(t_final, v, n)
    }
}

/// Total variation of a step sequence: `Σ |a_j − a_{j−1}|`.
pub fn variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Largest step and its excess over a threshold:
/// `(max_j |a_j − a_{j−1}|, max{max_step − delta, 0})`.
///
/// A single-element sequence has no steps and returns `(0, 0)`.
pub fn max_step_excess(values: &[f64], delta: f64) -> (f64, f64) {
    let max_step = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    (max_step, (max_step - delta).max(0.0))
}

/// Which variation-constraint mechanism is active, with its weights and
/// thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegularizerSpec {
    /// No additional constraint on control variation.
    None,
    /// Total-variation penalty on both channels.
    Var { beta_dv: f64, beta_dn: f64 },
    /// Absolute-magnitude penalty: `β_v Σ|v_j| + β_n Σ n_j`.
    Abs { beta_v: f64, beta_n: f64 },
    /// Penalty on the excess of the largest step over per-channel thresholds.
    MaxStep {
        beta_dv: f64,
        beta_dn: f64,
        delta_dv: f64,
        delta_dn: f64,
    },
}

impl RegularizerSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, RegularizerSpec::None)
    }
}

/// Scalar penalty of the active regularizer for a control.
///
/// The incoherent channel is non-negative, so its absolute sum is a plain sum.
pub fn regularizer_value(u: &PiecewiseControl, spec: &RegularizerSpec) -> Result<f64> {
    match *spec {
        RegularizerSpec::None => Err(Error::NoRegularizer),
        RegularizerSpec::Var { beta_dv, beta_dn } => {
            Ok(beta_dv * variation(u.v_values()) + beta_dn * variation(u.n_values()))
        }
        RegularizerSpec::Abs { beta_v, beta_n } => {
            let sum_v: f64 = u.v_values().iter().map(|v| v.abs()).sum();
            let sum_n: f64 = u.n_values().iter().sum();
            Ok(beta_v * sum_v + beta_n * sum_n)
        }
        RegularizerSpec::MaxStep {
            beta_dv,
            beta_dn,
            delta_dv,
            delta_dn,
        } => {
            let (_, excess_v) = max_step_excess(u.v_values(), delta_dv);
            let (_, excess_n) = max_step_excess(u.n_values(), delta_dn);
            Ok(beta_dv * excess_v + beta_dn * excess_n)
        }
    }
}

/// Closed-form upper bounds of the variation measures over a control box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerBounds {
    pub var_v: f64,
    pub var_n: f64,
    pub abs_v: f64,
    pub abs_n: f64,
    pub max_step_v: f64,
    pub max_step_n: f64,
    pub step_excess_v: f64,
    pub step_excess_n: f64,
}

/// Upper bounds attained by controls inside `cbox` for the variation, the
/// absolute sums, the largest step, and the step excess over `(delta_dv,
/// delta_dn)`.
pub fn regularizer_bounds(cbox: &ControlBox, delta_dv: f64, delta_dn: f64) -> RegularizerBounds {
    let span_v = cbox.v_span();
    let (_, n_hi) = cbox.n_bounds();
    let abs_v_peak = cbox.d_mult * cbox.v_min.abs().max(cbox.v_max);
    RegularizerBounds {
        var_v: span_v * (cbox.steps_v as f64 - 1.0),
        var_n: n_hi * (cbox.steps_n as f64 - 1.0),
        abs_v: abs_v_peak * cbox.steps_v as f64,
        abs_n: n_hi * cbox.steps_n as f64,
        max_step_v: span_v,
        max_step_n: n_hi,
        step_excess_v: (span_v - delta_dv).max(0.0),
        step_excess_n: (n_hi - delta_dn).max(0.0),
    }
}

/// Weight triple balancing the endpoint-mismatch and step-excess terms of a
/// composite objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestedWeights {
    pub beta_xt: f64,
    pub beta_dv: f64,
    pub beta_dn: f64,
}

/// Balance objective weights from the box bounds: the coherent step-excess
/// bound is the reference scale, divided by the endpoint-mismatch bound
/// `2^p − δ_xT^p` and by the incoherent step-excess bound, each ratio rounded
/// to the nearest integer. Degenerate bounds fall back to weight 1.
pub fn suggest_weights(
    cbox: &ControlBox,
    delta_dv: f64,
    delta_dn: f64,
    delta_xt: f64,
    p: PNorm,
) -> SuggestedWeights {
    let bounds = regularizer_bounds(cbox, delta_dv, delta_dn);
    let pf = p.value();
    let mismatch_bound = 2f64.powf(pf) - delta_xt.powf(pf);
    let ratio = |num: f64, den: f64| -> f64 {
        if num <= 0.0 || den <= 0.0 {
            1.0
        } else {
            (num / den).round().max(1.0)
        }
    };
    SuggestedWeights {
        beta_xt: ratio(bounds.step_excess_v, mismatch_bound),
        beta_dv: 1.0,
        beta_dn: ratio(bounds.step_excess_v, bounds.step_excess_n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::PNorm;
    use proptest::prelude::*;

    fn ref_box() -> ControlBox {
        ControlBox::new(-100.0, 100.0, 20.0, 1.0, 10, 10).unwrap()
    }

    #[test]
    fn flatten_ordering() {
        let u = PiecewiseControl::new(1.0, vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(u.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unflatten_round_trip() {
        let cbox = ControlBox::new(-5.0, 5.0, 4.0, 1.0, 2, 2).unwrap();
        let u = PiecewiseControl::new(2.0, vec![1.0, -2.0], vec![3.0, 0.5]).unwrap();
        let back = cbox.unflatten(&u.flatten(), 2.0).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn negative_incoherent_component_rejected() {
        let cbox = ControlBox::new(-5.0, 5.0, 4.0, 1.0, 2, 2).unwrap();
        let err = cbox.unflatten(&[0.0, 0.0, -0.1, 0.0], 1.0);
        assert!(matches!(err, Err(Error::OutOfBox(_))));
    }

    #[test]
    fn unequal_channel_lengths_rejected() {
        assert!(PiecewiseControl::new(1.0, vec![0.0, 0.0], vec![0.0]).is_err());
    }

    #[test]
    fn negative_incoherent_values_rejected() {
        assert!(PiecewiseControl::new(1.0, vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn variation_examples() {
        assert_eq!(variation(&[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(variation(&[0.0, 3.0, 1.0]), 5.0);
        assert_eq!(variation(&[7.0]), 0.0);
    }

    #[test]
    fn max_step_excess_examples() {
        assert_eq!(max_step_excess(&[0.0, 10.0, 15.0], 6.0), (10.0, 4.0));
        assert_eq!(max_step_excess(&[1.0], 0.5), (0.0, 0.0));
        // Steps inside the threshold leave no excess.
        let (_, excess) = max_step_excess(&[0.0, 5.0, 9.0], 6.0);
        assert_eq!(excess, 0.0);
    }

    #[test]
    fn regularizer_values() {
        let u = PiecewiseControl::new(1.0, vec![1.0, -1.0], vec![0.5, 0.5]).unwrap();
        let abs = RegularizerSpec::Abs {
            beta_v: 2.0,
            beta_n: 3.0,
        };
        assert_eq!(regularizer_value(&u, &abs).unwrap(), 7.0);

        let var = RegularizerSpec::Var {
            beta_dv: 1.0,
            beta_dn: 1.0,
        };
        let constant = PiecewiseControl::constant(1.0, 4.0, 2.0, 3).unwrap();
        assert_eq!(regularizer_value(&constant, &var).unwrap(), 0.0);

        // Hand evaluation: v step 25 exceeds 10 by 15, n step 1 exceeds 0.5 by 0.5.
        let max_step = RegularizerSpec::MaxStep {
            beta_dv: 1.0,
            beta_dn: 9.0,
            delta_dv: 10.0,
            delta_dn: 0.5,
        };
        let u2 = PiecewiseControl::new(1.0, vec![0.0, 25.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(regularizer_value(&u2, &max_step).unwrap(), 15.0 + 4.5);

        assert!(matches!(
            regularizer_value(&u, &RegularizerSpec::None),
            Err(Error::NoRegularizer)
        ));
    }

    #[test]
    fn scaled_box_reference_values() {
        let scaled = ref_box().scaled(0.4).unwrap();
        assert_eq!(scaled.v_bounds(), (-40.0, 40.0));
        assert_eq!(scaled.n_bounds(), (0.0, 8.0));

        let identity = ref_box().scaled(1.0).unwrap();
        assert_eq!(identity, ref_box());

        let tiny = ref_box().scaled(0.05).unwrap();
        assert_eq!(tiny.v_bounds(), (-5.0, 5.0));
        assert_eq!(tiny.n_bounds(), (0.0, 1.0));
    }

    #[test]
    fn scaled_box_nesting_follows_multipliers() {
        let mults = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05];
        let boxes: Vec<ControlBox> = mults.iter().map(|d| ref_box().scaled(*d).unwrap()).collect();
        for pair in boxes.windows(2) {
            let (outer, inner) = (&pair[0], &pair[1]);
            assert!(inner.v_bounds().0 >= outer.v_bounds().0);
            assert!(inner.v_bounds().1 <= outer.v_bounds().1);
            assert!(inner.n_bounds().1 <= outer.n_bounds().1);
        }
    }

    #[test]
    fn bounds_reference_values() {
        let cbox = ref_box().scaled(0.4).unwrap();
        let b = regularizer_bounds(&cbox, 10.0, 0.5);
        assert_eq!(b.step_excess_v, 70.0);
        assert_eq!(b.step_excess_n, 7.5);
        assert_eq!(b.var_v, 80.0 * 9.0);
        assert_eq!(b.abs_n, 8.0 * 10.0);

        // Threshold at least the span clamps the excess to zero.
        let none = regularizer_bounds(&cbox, 80.0, 8.0);
        assert_eq!(none.step_excess_v, 0.0);
        assert_eq!(none.step_excess_n, 0.0);
    }

    #[test]
    fn suggested_weights_known_triples() {
        let cbox = ref_box().scaled(0.4).unwrap();
        let w1 = suggest_weights(&cbox, 10.0, 0.5, 0.05, PNorm::L1);
        assert_eq!((w1.beta_xt, w1.beta_dv, w1.beta_dn), (36.0, 1.0, 9.0));
        let w2 = suggest_weights(&cbox, 20.0, 1.0, 0.05, PNorm::L1);
        assert_eq!((w2.beta_xt, w2.beta_dv, w2.beta_dn), (31.0, 1.0, 9.0));
        let w3 = suggest_weights(&cbox, 40.0, 2.0, 0.05, PNorm::L1);
        assert_eq!((w3.beta_xt, w3.beta_dv, w3.beta_dn), (21.0, 1.0, 7.0));
    }

    #[test]
    fn suggested_weights_degenerate_bounds_default_to_one() {
        let cbox = ref_box().scaled(0.4).unwrap();
        let w = suggest_weights(&cbox, 100.0, 10.0, 0.05, PNorm::L1);
        assert_eq!((w.beta_xt, w.beta_dv, w.beta_dn), (1.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn variation_bound_holds(values in prop::collection::vec(-40.0f64..40.0, 2..12)) {
            let n = values.len();
            prop_assert!(variation(&values) <= 80.0 * (n as f64 - 1.0) + 1e-9);
        }

        #[test]
        fn regularizers_are_nonnegative(
            v in prop::collection::vec(-40.0f64..40.0, 2..8),
            n in prop::collection::vec(0.0f64..8.0, 2..8),
            delta in 0.0f64..10.0,
        ) {
            let len = v.len().min(n.len());
            let u = PiecewiseControl::new(
                1.0, v[..len].to_vec(), n[..len].to_vec()).unwrap();
            for spec in [
                RegularizerSpec::Var { beta_dv: 1.0, beta_dn: 9.0 },
                RegularizerSpec::Abs { beta_v: 1.0, beta_n: 2.0 },
                RegularizerSpec::MaxStep {
                    beta_dv: 1.0, beta_dn: 9.0, delta_dv: delta, delta_dn: delta,
                },
            ] {
                prop_assert!(regularizer_value(&u, &spec).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn bounds_hold_for_random_controls() {
        use rand::{Rng, SeedableRng};
        let cbox = ref_box().scaled(0.4).unwrap();
        let (delta_dv, delta_dn) = (10.0, 0.5);
        let b = regularizer_bounds(&cbox, delta_dv, delta_dn);
        let (v_lo, v_hi) = cbox.v_bounds();
        let (_, n_hi) = cbox.n_bounds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..cbox.steps_v).map(|_| rng.gen_range(v_lo..=v_hi)).collect();
            let n: Vec<f64> = (0..cbox.steps_n).map(|_| rng.gen_range(0.0..=n_hi)).collect();
            assert!(variation(&v) <= b.var_v);
            assert!(variation(&n) <= b.var_n);
            assert!(v.iter().map(|x| x.abs()).sum::<f64>() <= b.abs_v);
            assert!(n.iter().sum::<f64>() <= b.abs_n);
            let (step_v, excess_v) = max_step_excess(&v, delta_dv);
            let (step_n, excess_n) = max_step_excess(&n, delta_dn);
            assert!(step_v <= b.max_step_v && excess_v <= b.step_excess_v);
            assert!(step_n <= b.max_step_n && excess_n <= b.step_excess_n);
        }
    }

    /// Every bound is attained by an extremal control: alternating bang-bang
    /// maximizes variation and step size, constant-at-peak maximizes the
    /// absolute sums.
    #[test]
    fn bounds_attained_by_extremal_controls() {
        let cbox = ref_box().scaled(0.4).unwrap();
        let b = regularizer_bounds(&cbox, 10.0, 0.5);
        let (v_lo, v_hi) = cbox.v_bounds();
        let (_, n_hi) = cbox.n_bounds();

        let alternating_v: Vec<f64> = (0..cbox.steps_v)
            .map(|j| if j % 2 == 0 { v_lo } else { v_hi })
            .collect();
        let alternating_n: Vec<f64> = (0..cbox.steps_n)
            .map(|j| if j % 2 == 0 { 0.0 } else { n_hi })
            .collect();
        assert_eq!(variation(&alternating_v), b.var_v);
        assert_eq!(variation(&alternating_n), b.var_n);
        assert_eq!(max_step_excess(&alternating_v, 10.0).1, b.step_excess_v);
        assert_eq!(max_step_excess(&alternating_n, 0.5).1, b.step_excess_n);

        let peak = cbox.d_mult * cbox.v_min.abs().max(cbox.v_max);
        let abs_sum: f64 = vec![peak; cbox.steps_v].iter().sum();
        assert_eq!(abs_sum, b.abs_v);
        let n_sum: f64 = vec![n_hi; cbox.steps_n].iter().sum();
        assert_eq!(n_sum, b.abs_n);
    }
}
