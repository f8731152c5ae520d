//! Run configuration: a single TOML file whose keys follow the symbols of the
//! model (omega, gamma, kappa, v_min, v_max, n_max, N_v, N_n, M, z, p,
//! d_multipliers, delta_dv, delta_dn, beta_*). Unknown keys are errors; every
//! omitted key falls back to the reference experiment defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controls::{suggest_weights, ControlBox, RegularizerSpec};
use crate::dynamics::{BlochVector, SystemParams};
use crate::estimation::{EstimatorConfig, GridSpec, SetKind};
use crate::objectives::{OuterExponent, PNorm};
use crate::optimize::{DaParams, DeParams, Method, MultiRunPlan, OptimizerConfig};
use crate::{Error, Result};

fn d_omega() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    0.05
}
fn d_kappa() -> f64 {
    0.01
}
fn d_t() -> Vec<f64> {
    vec![5.0]
}
fn d_v_min() -> f64 {
    -100.0
}
fn d_v_max() -> f64 {
    100.0
}
fn d_n_max() -> f64 {
    20.0
}
fn d_steps() -> usize {
    10
}
fn d_multipliers() -> Vec<f64> {
    vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05]
}
fn d_m() -> u32 {
    20
}
fn d_z() -> f64 {
    1.0
}
fn d_p() -> u8 {
    1
}
fn d_beta_x0() -> f64 {
    1.0
}
fn d_beta_box_xt() -> f64 {
    100.0
}
fn d_out_dir() -> String {
    "runs".into()
}
fn d_methods() -> Vec<Method> {
    vec![Method::De, Method::Da]
}
fn d_runs_per_method() -> usize {
    2
}
fn d_budget() -> usize {
    30_000
}
fn d_zero_tol() -> f64 {
    1e-12
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RegularizerKey {
    #[default]
    None,
    Var,
    Abs,
    MaxStep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
enum OuterPowerKey {
    #[default]
    #[serde(rename = "p")]
    P,
    #[serde(rename = "one")]
    One,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    #[serde(default = "d_methods")]
    methods: Vec<Method>,
    #[serde(default = "d_runs_per_method")]
    runs_per_method: usize,
    #[serde(default = "d_budget")]
    budget: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_zero_tol")]
    zero_tol: f64,
    #[serde(default)]
    de_population: usize,
    #[serde(default)]
    de_pop_factor: Option<usize>,
    #[serde(default)]
    de_crossover: Option<f64>,
    #[serde(default)]
    de_f_min: Option<f64>,
    #[serde(default)]
    de_f_max: Option<f64>,
    #[serde(default)]
    da_initial_temp: Option<f64>,
    #[serde(default)]
    da_visit: Option<f64>,
    #[serde(default)]
    da_accept: Option<f64>,
    #[serde(default)]
    da_restart_ratio: Option<f64>,
    #[serde(default)]
    da_polish: Option<bool>,
    /// Optional per-run initial temperatures for the annealer.
    #[serde(default)]
    da_temps: Vec<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        toml::from_str("").expect("empty optimizer section")
    }
}

/// On-disk schema. Field names mirror the model symbols.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: SetKind,
    anchor: [f64; 3],
    #[serde(rename = "T", default = "d_t")]
    t: Vec<f64>,
    #[serde(default = "d_omega")]
    omega: f64,
    #[serde(default = "d_gamma")]
    gamma: f64,
    #[serde(default = "d_kappa")]
    kappa: f64,
    #[serde(default = "d_v_min")]
    v_min: f64,
    #[serde(default = "d_v_max")]
    v_max: f64,
    #[serde(default = "d_n_max")]
    n_max: f64,
    #[serde(rename = "N_v", default = "d_steps")]
    n_v: usize,
    #[serde(rename = "N_n", default = "d_steps")]
    n_n: usize,
    #[serde(default = "d_multipliers")]
    d_multipliers: Vec<f64>,
    #[serde(rename = "M", default = "d_m")]
    m: u32,
    #[serde(default = "d_z")]
    z: f64,
    #[serde(default = "d_p")]
    p: u8,
    #[serde(default)]
    mismatch_outer_power: OuterPowerKey,
    #[serde(default)]
    regularizer: RegularizerKey,
    #[serde(default)]
    beta_dv: Option<f64>,
    #[serde(default)]
    beta_dn: Option<f64>,
    #[serde(default)]
    beta_v: Option<f64>,
    #[serde(default)]
    beta_n: Option<f64>,
    #[serde(default)]
    delta_dv: Option<f64>,
    #[serde(default)]
    delta_dn: Option<f64>,
    #[serde(rename = "beta_xT", default)]
    beta_xt: Option<f64>,
    #[serde(default = "d_beta_x0")]
    beta_x0: f64,
    #[serde(rename = "beta_box_xT", default = "d_beta_box_xt")]
    beta_box_xt: f64,
    #[serde(default)]
    optimizer: OptimizerSection,
    /// Worker threads for node batches; 0 selects the number of cores.
    #[serde(default)]
    workers: usize,
    #[serde(default = "d_out_dir")]
    out_dir: String,
}

/// Which regularizer the run uses and how its weights are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegularizerChoice {
    None,
    Var {
        beta_dv: f64,
        beta_dn: f64,
        beta_xt: f64,
    },
    Abs {
        beta_v: f64,
        beta_n: f64,
        beta_xt: f64,
    },
    /// Explicit weight triple.
    MaxStep {
        delta_dv: f64,
        delta_dn: f64,
        beta_dv: f64,
        beta_dn: f64,
        beta_xt: f64,
    },
    /// Weights balanced per stage from the box bounds.
    MaxStepAuto { delta_dv: f64, delta_dn: f64 },
}

/// Validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: SetKind,
    pub anchor: [f64; 3],
    pub t_values: Vec<f64>,
    pub params: SystemParams,
    pub v_min: f64,
    pub v_max: f64,
    pub n_max: f64,
    pub steps_v: usize,
    pub steps_n: usize,
    pub multipliers: Vec<f64>,
    pub grid: GridSpec,
    pub outer_exponent: OuterExponent,
    pub regularizer: RegularizerChoice,
    pub beta_x0: f64,
    pub beta_box_xt: f64,
    pub methods: Vec<Method>,
    pub runs_per_method: usize,
    pub zero_tol: f64,
    pub optimizer: OptimizerConfig,
    pub da_temps: Vec<f64>,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let params = SystemParams::new(raw.omega, raw.gamma, raw.kappa)
            .map_err(|e| Error::InvalidConfig(format!("system parameters: {e}")))?;
        let anchor = BlochVector::from(raw.anchor);
        if anchor.norm_squared() > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "anchor must lie in the closed unit ball, |anchor|^2 = {}",
                anchor.norm_squared()
            )));
        }
        if raw.t.is_empty() || raw.t.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidConfig(
                "T must be a non-empty list of positive final times".into(),
            ));
        }
        if raw.n_v != raw.n_n {
            return Err(Error::InvalidConfig(format!(
                "N_v and N_n must be equal, got {} and {}",
                raw.n_v, raw.n_n
            )));
        }
        // Validates the bounds and step counts.
        ControlBox::new(raw.v_min, raw.v_max, raw.n_max, 1.0, raw.n_v, raw.n_n)
            .map_err(|e| Error::InvalidConfig(format!("control box: {e}")))?;
        let p = match raw.p {
            1 => PNorm::L1,
            2 => PNorm::L2,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "p must be 1 or 2, got {other}"
                )))
            }
        };
        let grid = GridSpec::new(raw.m, raw.z, p)?;
        crate::estimation::validate_multipliers(&raw.d_multipliers)?;

        let need = |name: &str, v: Option<f64>| -> Result<f64> {
            v.filter(|x| x.is_finite() && *x > 0.0).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "regularizer '{:?}' requires positive key {name}",
                    raw.regularizer
                ))
            })
        };
        let regularizer = match raw.regularizer {
            RegularizerKey::None => RegularizerChoice::None,
            RegularizerKey::Var => RegularizerChoice::Var {
                beta_dv: need("beta_dv", raw.beta_dv)?,
                beta_dn: need("beta_dn", raw.beta_dn)?,
                beta_xt: raw.beta_xt.unwrap_or(1.0),
            },
            RegularizerKey::Abs => RegularizerChoice::Abs {
                beta_v: need("beta_v", raw.beta_v)?,
                beta_n: need("beta_n", raw.beta_n)?,
                beta_xt: raw.beta_xt.unwrap_or(1.0),
            },
            RegularizerKey::MaxStep => {
                let delta_dv = need("delta_dv", raw.delta_dv)?;
                let delta_dn = need("delta_dn", raw.delta_dn)?;
                if delta_dv >= raw.v_max - raw.v_min {
                    return Err(Error::InvalidConfig(
                        "delta_dv must be smaller than the coherent span".into(),
                    ));
                }
                if delta_dn >= raw.n_max {
                    return Err(Error::InvalidConfig(
                        "delta_dn must be smaller than n_max".into(),
                    ));
                }
                match (raw.beta_xt, raw.beta_dv, raw.beta_dn) {
                    (None, None, None) => RegularizerChoice::MaxStepAuto { delta_dv, delta_dn },
                    (Some(beta_xt), Some(beta_dv), Some(beta_dn)) => {
                        RegularizerChoice::MaxStep {
                            delta_dv,
                            delta_dn,
                            beta_dv,
                            beta_dn,
                            beta_xt,
                        }
                    }
                    _ => {
                        return Err(Error::InvalidConfig(
                            "max_step weights must be given completely (beta_xT, beta_dv, \
                             beta_dn) or not at all (auto balancing)"
                                .into(),
                        ))
                    }
                }
            }
        };

        let o = &raw.optimizer;
        if o.methods.is_empty() {
            return Err(Error::InvalidConfig("optimizer.methods is empty".into()));
        }
        if o.runs_per_method == 0 {
            return Err(Error::InvalidConfig(
                "optimizer.runs_per_method must be >= 1".into(),
            ));
        }
        let de_defaults = DeParams::default();
        let da_defaults = DaParams::default();
        let de = DeParams {
            population: (o.de_population > 0).then_some(o.de_population),
            pop_factor: o.de_pop_factor.unwrap_or(de_defaults.pop_factor),
            f_min: o.de_f_min.unwrap_or(de_defaults.f_min),
            f_max: o.de_f_max.unwrap_or(de_defaults.f_max),
            crossover: o.de_crossover.unwrap_or(de_defaults.crossover),
            stagnation_tol: de_defaults.stagnation_tol,
        };
        if !(de.crossover >= 0.0 && de.crossover <= 1.0) {
            return Err(Error::InvalidConfig(
                "optimizer.de_crossover must lie in [0, 1]".into(),
            ));
        }
        let da = DaParams {
            initial_temp: o.da_initial_temp.unwrap_or(da_defaults.initial_temp),
            visit: o.da_visit.unwrap_or(da_defaults.visit),
            accept: o.da_accept.unwrap_or(da_defaults.accept),
            restart_temp_ratio: o.da_restart_ratio.unwrap_or(da_defaults.restart_temp_ratio),
            polish: o.da_polish.unwrap_or(da_defaults.polish),
        };
        if !(da.visit > 1.0 && da.visit < 3.0) {
            return Err(Error::InvalidConfig(
                "optimizer.da_visit must lie in (1, 3)".into(),
            ));
        }
        let pop = de
            .population
            .unwrap_or(de.pop_factor * (raw.n_v + raw.n_n));
        if o.budget < pop {
            return Err(Error::InvalidConfig(format!(
                "optimizer.budget ({}) must cover at least one population ({pop})",
                o.budget
            )));
        }
        let optimizer = OptimizerConfig {
            method: o.methods[0],
            budget: o.budget,
            seed: o.seed,
            stop_tol: Some(o.zero_tol),
            de,
            da,
        };

        Ok(Self {
            kind: raw.kind,
            anchor: raw.anchor,
            t_values: raw.t,
            params,
            v_min: raw.v_min,
            v_max: raw.v_max,
            n_max: raw.n_max,
            steps_v: raw.n_v,
            steps_n: raw.n_n,
            multipliers: raw.d_multipliers,
            grid,
            outer_exponent: match raw.mismatch_outer_power {
                OuterPowerKey::P => OuterExponent::MatchP,
                OuterPowerKey::One => OuterExponent::One,
            },
            regularizer,
            beta_x0: raw.beta_x0,
            beta_box_xt: raw.beta_box_xt,
            methods: o.methods.clone(),
            runs_per_method: o.runs_per_method,
            zero_tol: o.zero_tol,
            optimizer,
            da_temps: o.da_temps.clone(),
            workers: raw.workers,
            out_dir: PathBuf::from(raw.out_dir),
        })
    }

    /// Unscaled control box of the run.
    pub fn base_box(&self) -> ControlBox {
        ControlBox::new(
            self.v_min,
            self.v_max,
            self.n_max,
            1.0,
            self.steps_v,
            self.steps_n,
        )
        .expect("validated at parse time")
    }

    /// Regularizer and mismatch weight for one stage box, balancing weights
    /// from the box bounds when requested.
    pub fn stage_regularizer(&self, cbox: &ControlBox) -> (RegularizerSpec, f64) {
        match self.regularizer {
            RegularizerChoice::None => (RegularizerSpec::None, 1.0),
            RegularizerChoice::Var {
                beta_dv,
                beta_dn,
                beta_xt,
            } => (RegularizerSpec::Var { beta_dv, beta_dn }, beta_xt),
            RegularizerChoice::Abs {
                beta_v,
                beta_n,
                beta_xt,
            } => (RegularizerSpec::Abs { beta_v, beta_n }, beta_xt),
            RegularizerChoice::MaxStep {
                delta_dv,
                delta_dn,
                beta_dv,
                beta_dn,
                beta_xt,
            } => (
                RegularizerSpec::MaxStep {
                    beta_dv,
                    beta_dn,
                    delta_dv,
                    delta_dn,
                },
                beta_xt,
            ),
            RegularizerChoice::MaxStepAuto { delta_dv, delta_dn } => {
                let w = suggest_weights(cbox, delta_dv, delta_dn, self.grid.delta_xt(), self.grid.p);
                (
                    RegularizerSpec::MaxStep {
                        beta_dv: w.beta_dv,
                        beta_dn: w.beta_dn,
                        delta_dv,
                        delta_dn,
                    },
                    w.beta_xt,
                )
            }
        }
    }

    /// Estimator configuration for one stage box.
    pub fn estimator_for(&self, cbox: &ControlBox, stage_seed: u64) -> EstimatorConfig {
        let (reg, beta_xt) = self.stage_regularizer(cbox);
        let mut optimizer = self.optimizer;
        optimizer.seed = stage_seed;
        EstimatorConfig {
            params: self.params,
            grid: self.grid,
            outer_exponent: self.outer_exponent,
            reg,
            beta_xt,
            beta_box_xt: self.beta_box_xt,
            cs_beta_x0: self.beta_x0,
            cs_beta_xt: self.beta_box_xt,
            optimizer,
            plan: MultiRunPlan {
                methods: self.methods.clone(),
                runs_per_method: self.runs_per_method,
                zero_tol: self.zero_tol,
                objective_nonnegative: true,
                da_temps: self.da_temps.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "rs"
anchor = [0.0, 0.0, 0.0]
"#;

    #[test]
    fn minimal_config_gets_reference_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.params.omega, 1.0);
        assert_eq!(cfg.params.gamma, 0.05);
        assert_eq!(cfg.params.kappa, 0.01);
        assert_eq!((cfg.v_min, cfg.v_max, cfg.n_max), (-100.0, 100.0, 20.0));
        assert_eq!((cfg.steps_v, cfg.steps_n), (10, 10));
        assert_eq!(cfg.grid.m, 20);
        assert_eq!(cfg.grid.z, 1.0);
        assert_eq!(cfg.grid.p, PNorm::L1);
        assert_eq!(
            cfg.multipliers,
            vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05]
        );
        assert_eq!(cfg.t_values, vec![5.0]);
        assert_eq!(cfg.methods, vec![Method::De, Method::Da]);
        assert_eq!(cfg.runs_per_method, 2);
        assert_eq!(cfg.optimizer.budget, 30_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nnot_a_key = 3\n");
        let err = RunConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn invalid_fields_are_rejected_with_field_messages() {
        for (snippet, needle) in [
            ("p = 3", "p must be 1 or 2"),
            ("T = []", "T must be"),
            ("N_v = 4", "N_v and N_n"),
            ("d_multipliers = [0.4, 0.8]", "strictly decreasing"),
            ("anchor = [1.0, 1.0, 1.0]", "unit ball"),
            ("gamma = -1.0", "system parameters"),
        ] {
            let text = format!("kind = \"rs\"\nanchor = [0.0, 0.0, 0.0]\n{snippet}\n");
            let text = if snippet.starts_with("anchor") {
                format!("kind = \"rs\"\n{snippet}\n")
            } else {
                text
            };
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            assert!(
                err.to_string().contains(needle),
                "snippet {snippet:?} gave: {err}"
            );
        }
    }

    #[test]
    fn max_step_weights_all_or_nothing() {
        let auto = format!(
            "{MINIMAL}\nregularizer = \"max_step\"\ndelta_dv = 10.0\ndelta_dn = 0.5\n"
        );
        let cfg = RunConfig::from_toml_str(&auto).unwrap();
        assert!(matches!(
            cfg.regularizer,
            RegularizerChoice::MaxStepAuto { .. }
        ));

        // Balanced per stage: the d = 0.4 box reproduces the published triple.
        let cbox = cfg.base_box().scaled(0.4).unwrap();
        let (reg, beta_xt) = cfg.stage_regularizer(&cbox);
        assert_eq!(beta_xt, 36.0);
        assert!(matches!(
            reg,
            RegularizerSpec::MaxStep {
                beta_dv, beta_dn, ..
            } if beta_dv == 1.0 && beta_dn == 9.0
        ));

        let partial = format!("{auto}beta_xT = 36.0\n");
        assert!(RunConfig::from_toml_str(&partial).is_err());

        let full = format!("{auto}beta_xT = 36.0\nbeta_dv = 1.0\nbeta_dn = 9.0\n");
        let cfg_full = RunConfig::from_toml_str(&full).unwrap();
        assert!(matches!(
            cfg_full.regularizer,
            RegularizerChoice::MaxStep { .. }
        ));
    }

    #[test]
    fn config_round_trips_through_serde() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
