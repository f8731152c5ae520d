//! The section method: a uniform grid over the Bloch ball, outer
//! parallelepipedal estimation by endpoint-coordinate extremization, pointwise
//! estimation by per-node global optimization, shrinking-box sweeps over
//! nested control classes, and volume metrics.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::{ControlBox, RegularizerSpec};
use crate::dynamics::{BlochVector, SystemParams};
use crate::objectives::{
    BoxProblem, CsBoxProblem, Direction, MismatchSpec, NodeProblem, OuterExponent, PNorm,
};
use crate::optimize::{
    mix_seed, multi_run, Bounds, MultiRunPlan, OptimizerConfig, RunSummary,
};
use crate::{Error, Result};

const SALT_NODE: u64 = 1;
const SALT_BOX: u64 = 2;
const SALT_CS_BOX: u64 = 3;
const SALT_CS_RETRY: u64 = 4;

/// Uniform ball grid: nodes at `-1 + 2i/M` per axis, kept when inside the
/// closed unit ball, with the mismatch tolerance `δ_xT = 1/(M·z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: u32,
    pub z: f64,
    pub p: PNorm,
}

impl GridSpec {
    pub fn new(m: u32, z: f64, p: PNorm) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("grid subdivision must be >= 1".into()));
        }
        if !(z.is_finite() && z >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance divisor must be >= 1, got {z}"
            )));
        }
        Ok(Self { m, z, p })
    }

    /// Half the node spacing: the radius of the covering neighborhoods.
    pub fn eps_xt(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Reachability tolerance used in node problems.
    pub fn delta_xt(&self) -> f64 {
        1.0 / (self.m as f64 * self.z)
    }

    /// Volume of one covering cube (edge length twice the neighborhood
    /// radius, independent of `z`).
    pub fn cube_volume(&self) -> f64 {
        let m = self.m as f64;
        8.0 / (m * m * m)
    }

    pub fn mismatch_spec(&self, outer: OuterExponent) -> MismatchSpec {
        MismatchSpec::new(self.p, self.delta_xt()).with_outer(outer)
    }
}

/// One grid node: integer lattice index and its ball coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridNode {
    pub idx: [u32; 3],
    pub point: BlochVector,
}

/// The grid as an ordered node list (lexicographic by lattice index).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub nodes: Vec<GridNode>,
}

impl Grid {
    /// Enumerate the lattice and keep nodes inside the closed unit ball. The
    /// membership test is exact integer arithmetic, so the node set is
    /// identical on every platform.
    pub fn build(spec: GridSpec) -> Self {
        let m = spec.m as i64;
        let mut nodes = Vec::new();
        for i1 in 0..=m {
            let s1 = (2 * i1 - m) * (2 * i1 - m);
            for i2 in 0..=m {
                let s2 = s1 + (2 * i2 - m) * (2 * i2 - m);
                if s2 > m * m {
                    continue;
                }
                for i3 in 0..=m {
                    let s3 = s2 + (2 * i3 - m) * (2 * i3 - m);
                    if s3 <= m * m {
                        let coord = |i: i64| (2 * i - m) as f64 / m as f64;
                        nodes.push(GridNode {
                            idx: [i1 as u32, i2 as u32, i3 as u32],
                            point: BlochVector::new(coord(i1), coord(i2), coord(i3)),
                        });
                    }
                }
            }
        }
        Self { spec, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// All grid nodes inside the closed unit ball, in deterministic order.
pub fn build_grid(spec: GridSpec) -> Vec<BlochVector> {
    Grid::build(spec).nodes.iter().map(|n| n.point).collect()
}

/// Axis-aligned outer box of an estimated set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl OuterBox {
    pub fn contains(&self, p: &BlochVector, inflation: f64) -> bool {
        (0..3).all(|j| p[j] >= self.min[j] - inflation && p[j] <= self.max[j] + inflation)
    }

    pub fn half_widths(&self) -> [f64; 3] {
        [
            (self.max[0] - self.min[0]) / 2.0,
            (self.max[1] - self.min[1]) / 2.0,
            (self.max[2] - self.min[2]) / 2.0,
        ]
    }
}

/// Whether an estimation targets a reachable set (fixed initial state) or a
/// controllability set (fixed target state).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Rs,
    Cs,
}

/// Classification record of one grid node with its solver evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    /// Index into the full grid node list.
    pub node: usize,
    pub point: [f64; 3],
    pub member: bool,
    pub best_value: f64,
    pub best_mismatch: f64,
    pub regularizer: f64,
    /// Largest-step excesses of the winning control when the max-step
    /// regularizer is active.
    pub step_excess: Option<(f64, f64)>,
    /// Winning decision vector (the flattened control).
    pub winning: Vec<f64>,
    pub evaluations: usize,
    pub runs: Vec<RunSummary>,
}

/// Outer box plus classified grid nodes for one control class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimation {
    pub kind: SetKind,
    pub anchor: [f64; 3],
    pub t_final: f64,
    pub d_mult: f64,
    pub params: SystemParams,
    pub grid: GridSpec,
    /// Cardinality of the full grid (for percentage reporting).
    pub grid_total: usize,
    pub cbox: ControlBox,
    pub reg: RegularizerSpec,
    pub beta_xt: f64,
    pub mismatch: MismatchSpec,
    /// `None` when the stage was skipped (empty candidate set) or no feasible
    /// box exists.
    pub outer: Option<OuterBox>,
    /// Number of candidate nodes solved at this stage.
    pub candidates: usize,
    pub nodes: Vec<NodeResult>,
}

impl Estimation {
    pub fn members(&self) -> impl Iterator<Item = &NodeResult> {
        self.nodes.iter().filter(|n| n.member)
    }

    pub fn member_count(&self) -> usize {
        self.members().count()
    }

    pub fn member_indices(&self) -> Vec<usize> {
        self.members().map(|n| n.node).collect()
    }

    fn node_problem(&self, point: BlochVector) -> NodeProblem {
        let anchor = BlochVector::from(self.anchor);
        let (start, target) = match self.kind {
            SetKind::Rs => (anchor, point),
            SetKind::Cs => (point, anchor),
        };
        NodeProblem::reach(
            start,
            target,
            self.t_final,
            &self.params,
            &self.cbox,
            self.mismatch,
            self.reg,
            self.beta_xt,
        )
    }

    /// Re-propagate every stored winning control and require the recomputed
    /// objective value and mismatch term to match the stored ones.
    pub fn replay(&self, tol: f64) -> Result<()> {
        for node in &self.nodes {
            let problem = self.node_problem(BlochVector::from(node.point));
            let parts = problem.parts(&node.winning);
            let recomputed = parts.total;
            if (recomputed - node.best_value).abs() > tol {
                return Err(Error::ReplayMismatch {
                    node: node.node,
                    stored: node.best_value,
                    recomputed,
                });
            }
            let mismatch_replayed = parts.mismatch.unwrap_or(f64::INFINITY);
            if (mismatch_replayed - node.best_mismatch).abs() > tol {
                return Err(Error::ReplayMismatch {
                    node: node.node,
                    stored: node.best_mismatch,
                    recomputed: mismatch_replayed,
                });
            }
        }
        Ok(())
    }
}

/// Volume and distance metrics of a pointwise estimation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub member_count: usize,
    pub cube_volume: f64,
    pub volume: f64,
    pub ball_fraction: f64,
    pub grid_fraction: f64,
    pub farthest_distance: Option<f64>,
}

/// Estimated volume (member count times covering-cube volume), fractions of
/// the ball volume and of the grid cardinality, and the Euclidean distance
/// from the anchor to the farthest member node.
pub fn metrics(est: &Estimation, anchor: &BlochVector) -> Metrics {
    let member_count = est.member_count();
    let cube_volume = est.grid.cube_volume();
    let volume = member_count as f64 * cube_volume;
    let ball_volume = 4.0 * std::f64::consts::PI / 3.0;
    let farthest = est
        .members()
        .map(|n| (BlochVector::from(n.point) - anchor).norm())
        .reduce(f64::max);
    Metrics {
        member_count,
        cube_volume,
        volume,
        ball_fraction: volume / ball_volume,
        grid_fraction: if est.grid_total == 0 {
            0.0
        } else {
            member_count as f64 / est.grid_total as f64
        },
        farthest_distance: farthest,
    }
}

/// Shared knobs of the estimation pipeline.
#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub params: SystemParams,
    pub grid: GridSpec,
    pub outer_exponent: OuterExponent,
    /// Regularizer of the node problems (the outer-box step of a sweep always
    /// runs unregularized).
    pub reg: RegularizerSpec,
    /// Weight on the endpoint mismatch in regularized node problems.
    pub beta_xt: f64,
    /// Weight on the coordinate term in regularized outer-box problems.
    pub beta_box_xt: f64,
    /// Weights of the controllability box objective.
    pub cs_beta_x0: f64,
    pub cs_beta_xt: f64,
    pub optimizer: OptimizerConfig,
    pub plan: MultiRunPlan,
}

impl EstimatorConfig {
    pub fn new(params: SystemParams, grid: GridSpec) -> Self {
        Self {
            params,
            grid,
            outer_exponent: OuterExponent::MatchP,
            reg: RegularizerSpec::None,
            beta_xt: 1.0,
            beta_box_xt: 1.0,
            cs_beta_x0: 1.0,
            cs_beta_xt: 100.0,
            optimizer: OptimizerConfig::default(),
            plan: MultiRunPlan::default(),
        }
    }

    fn node_beta_xt(&self) -> f64 {
        if self.reg.is_none() {
            1.0
        } else {
            self.beta_xt
        }
    }

    fn control_bounds(&self, cbox: &ControlBox) -> Result<Bounds> {
        Bounds::new(cbox.lower(), cbox.upper())
    }
}

/// Hooks into the node-classification loop: previously solved nodes to reuse,
/// a callback announcing the filtered candidate order before solving starts,
/// and a completion callback (invoked from worker threads; presolved nodes are
/// re-announced through it).
#[derive(Clone, Copy, Default)]
#[allow(clippy::type_complexity)]
pub struct NodeHooks<'a> {
    pub presolved: Option<&'a HashMap<usize, NodeResult>>,
    pub on_candidates: Option<&'a (dyn Fn(&[usize]) + Sync)>,
    pub on_complete: Option<&'a (dyn Fn(&NodeResult) + Sync)>,
}

/// Outer box of a reachable set: for each signed axis direction, minimize the
/// endpoint coordinate over the control class and read the coordinate off the
/// re-propagated winner. Coordinates are clamped to the ball's bounding cube.
pub fn outer_box_rs(
    cfg: &EstimatorConfig,
    x0: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
    reg: &RegularizerSpec,
) -> Result<OuterBox> {
    let bounds = cfg.control_bounds(cbox)?;
    let beta = if reg.is_none() { 1.0 } else { cfg.beta_box_xt };
    let extremes: Vec<(Direction, f64)> = Direction::all()
        .into_par_iter()
        .enumerate()
        .map(|(di, direction)| -> Result<(Direction, f64)> {
            let problem =
                BoxProblem::new(*x0, direction, t_final, &cfg.params, cbox, *reg, beta);
            let mut opt = cfg.optimizer;
            opt.seed = mix_seed(cfg.optimizer.seed, &[SALT_BOX, di as u64]);
            let plan = MultiRunPlan {
                objective_nonnegative: false,
                ..cfg.plan.clone()
            };
            let result = multi_run(&|z: &[f64]| problem.value(z), &bounds, &opt, &plan);
            if !result.best_value.is_finite() {
                return Err(Error::DirectionFailed(direction.label()));
            }
            let parts = problem.parts(&result.best_point);
            Ok((direction, parts.endpoint[direction.axis].clamp(-1.0, 1.0)))
        })
        .collect::<Result<_>>()?;
    Ok(assemble_box(&extremes))
}

fn assemble_box(extremes: &[(Direction, f64)]) -> OuterBox {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for (direction, coord) in extremes {
        if direction.negative {
            max[direction.axis] = *coord;
        } else {
            min[direction.axis] = *coord;
        }
    }
    // Stochastic optima can cross on near-degenerate sets; normalize.
    for j in 0..3 {
        if min[j] > max[j] {
            std::mem::swap(&mut min[j], &mut max[j]);
        }
    }
    OuterBox { min, max }
}

/// Outer box of a controllability set: extremize the coordinates of a
/// controlling initial point `p` subject to the endpoint actually reaching the
/// target. A direction whose winner fails the feasibility check is retried
/// with the endpoint weight escalated; persistent infeasibility is an error.
pub fn outer_box_cs(
    cfg: &EstimatorConfig,
    x_target: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
) -> Result<OuterBox> {
    let mismatch_spec = cfg.grid.mismatch_spec(cfg.outer_exponent);
    let extremes: Vec<(Direction, f64)> = Direction::all()
        .into_par_iter()
        .enumerate()
        .map(|(di, direction)| -> Result<(Direction, f64)> {
            let attempts = [
                (cfg.cs_beta_xt, SALT_CS_BOX),
                (cfg.cs_beta_xt * 100.0, SALT_CS_RETRY),
            ];
            for (beta_xt, salt) in attempts {
                let problem = CsBoxProblem::new(
                    *x_target,
                    direction,
                    t_final,
                    &cfg.params,
                    cbox,
                    mismatch_spec,
                    cfg.cs_beta_x0,
                    beta_xt,
                );
                let (lower, upper) = problem.bounds(cbox);
                let bounds = Bounds::new(lower, upper)?;
                let mut opt = cfg.optimizer;
                opt.seed = mix_seed(cfg.optimizer.seed, &[salt, di as u64]);
                let plan = MultiRunPlan {
                    objective_nonnegative: false,
                    ..cfg.plan.clone()
                };
                let result = multi_run(&|z: &[f64]| problem.value(z), &bounds, &opt, &plan);
                let parts = problem.parts(&result.best_point);
                if parts.mismatch.unwrap_or(f64::INFINITY) <= cfg.plan.zero_tol {
                    return Ok((direction, parts.initial[direction.axis].clamp(-1.0, 1.0)));
                }
            }
            Err(Error::CsInfeasible(direction.label()))
        })
        .collect::<Result<_>>()?;
    Ok(assemble_box(&extremes))
}

#[allow(clippy::too_many_arguments)]
fn classify_nodes(
    cfg: &EstimatorConfig,
    kind: SetKind,
    anchor: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
    grid: &Grid,
    candidate_indices: &[usize],
    hooks: &NodeHooks,
) -> Result<Vec<NodeResult>> {
    let bounds = cfg.control_bounds(cbox)?;
    let mismatch_spec = cfg.grid.mismatch_spec(cfg.outer_exponent);
    let beta_xt = cfg.node_beta_xt();
    candidate_indices
        .par_iter()
        .map(|&ni| -> Result<NodeResult> {
            if let Some(done) = hooks.presolved.and_then(|m| m.get(&ni)) {
                let record = done.clone();
                if let Some(callback) = hooks.on_complete {
                    callback(&record);
                }
                return Ok(record);
            }
            let point = grid.nodes[ni].point;
            let (start, target) = match kind {
                SetKind::Rs => (*anchor, point),
                SetKind::Cs => (point, *anchor),
            };
            let problem = NodeProblem::reach(
                start,
                target,
                t_final,
                &cfg.params,
                cbox,
                mismatch_spec,
                cfg.reg,
                beta_xt,
            );
            let mut opt = cfg.optimizer;
            opt.seed = mix_seed(cfg.optimizer.seed, &[SALT_NODE, ni as u64]);
            let result = multi_run(&|z: &[f64]| problem.value(z), &bounds, &opt, &cfg.plan);
            let parts = problem.parts(&result.best_point);
            let best_mismatch = parts.mismatch.unwrap_or(f64::INFINITY);
            let excess_ok = parts
                .step_excess
                .is_none_or(|(ev, en)| ev == 0.0 && en == 0.0);
            let record = NodeResult {
                node: ni,
                point: [point[0], point[1], point[2]],
                member: best_mismatch <= cfg.plan.zero_tol && excess_ok,
                best_value: result.best_value,
                best_mismatch,
                regularizer: parts.regularizer.unwrap_or(0.0),
                step_excess: parts.step_excess,
                winning: result.best_point,
                evaluations: result.evaluations,
                runs: result.run_log,
            };
            if let Some(callback) = hooks.on_complete {
                callback(&record);
            }
            Ok(record)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn make_estimation(
    cfg: &EstimatorConfig,
    kind: SetKind,
    anchor: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
    grid: &Grid,
    outer: Option<OuterBox>,
    nodes: Vec<NodeResult>,
) -> Estimation {
    Estimation {
        kind,
        anchor: [anchor[0], anchor[1], anchor[2]],
        t_final,
        d_mult: cbox.d_mult,
        params: cfg.params,
        grid: cfg.grid,
        grid_total: grid.len(),
        cbox: *cbox,
        reg: cfg.reg,
        beta_xt: cfg.node_beta_xt(),
        mismatch: cfg.grid.mismatch_spec(cfg.outer_exponent),
        outer,
        candidates: nodes.len(),
        nodes,
    }
}

fn filter_candidates(
    grid: &Grid,
    candidates: Option<&[usize]>,
    outer: &OuterBox,
    inflation: f64,
) -> Vec<usize> {
    let inside = |ni: &usize| outer.contains(&grid.nodes[*ni].point, inflation);
    match candidates {
        Some(list) => list.iter().copied().filter(inside).collect(),
        None => (0..grid.len()).filter(inside).collect(),
    }
}

/// Pointwise estimation of a reachable set: solve one node-reachability
/// problem per candidate grid node; a node is a member when the winning
/// control's mismatch term vanishes (and, under the max-step regularizer, both
/// step excesses are exactly zero). Candidates default to the grid nodes
/// inside the outer box, inflated by the reachability tolerance.
pub fn pointwise_rs(
    cfg: &EstimatorConfig,
    x0: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
    grid: &Grid,
    candidates: Option<&[usize]>,
    hooks: &NodeHooks,
) -> Result<Estimation> {
    let outer = outer_box_rs(cfg, x0, t_final, cbox, &RegularizerSpec::None)?;
    let kept = filter_candidates(grid, candidates, &outer, cfg.grid.delta_xt());
    if let Some(callback) = hooks.on_candidates {
        callback(&kept);
    }
    let nodes = classify_nodes(cfg, SetKind::Rs, x0, t_final, cbox, grid, &kept, hooks)?;
    Ok(make_estimation(
        cfg,
        SetKind::Rs,
        x0,
        t_final,
        cbox,
        grid,
        Some(outer),
        nodes,
    ))
}

/// Pointwise estimation of a controllability set: symmetric to the reachable
/// case with each candidate node acting as the initial state. An infeasible
/// outer box yields an empty estimation.
pub fn pointwise_cs(
    cfg: &EstimatorConfig,
    x_target: &BlochVector,
    t_final: f64,
    cbox: &ControlBox,
    grid: &Grid,
    candidates: Option<&[usize]>,
    hooks: &NodeHooks,
) -> Result<Estimation> {
    let outer = match outer_box_cs(cfg, x_target, t_final, cbox) {
        Ok(b) => b,
        Err(Error::CsInfeasible(_)) => {
            return Ok(make_estimation(
                cfg,
                SetKind::Cs,
                x_target,
                t_final,
                cbox,
                grid,
                None,
                Vec::new(),
            ));
        }
        Err(e) => return Err(e),
    };
    let kept = filter_candidates(grid, candidates, &outer, cfg.grid.delta_xt());
    if let Some(callback) = hooks.on_candidates {
        callback(&kept);
    }
    let nodes = classify_nodes(cfg, SetKind::Cs, x_target, t_final, cbox, grid, &kept, hooks)?;
    Ok(make_estimation(
        cfg,
        SetKind::Cs,
        x_target,
        t_final,
        cbox,
        grid,
        Some(outer),
        nodes,
    ))
}

/// Shrinking-box sweep: stage `q` solves the control class scaled by the
/// `q`-th multiplier, with candidates restricted to the previous stage's
/// member nodes. Stages after an empty member set are emitted empty without
/// solving. `stage_hooks`, when non-empty, must provide one entry per stage.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cfg: &EstimatorConfig,
    kind: SetKind,
    anchor: &BlochVector,
    t_final: f64,
    base_box: &ControlBox,
    multipliers: &[f64],
    grid: &Grid,
    stage_hooks: &[NodeHooks],
) -> Result<Vec<Estimation>> {
    validate_multipliers(multipliers)?;
    if !stage_hooks.is_empty() && stage_hooks.len() != multipliers.len() {
        return Err(Error::InvalidConfig(
            "stage hook count must match multiplier count".into(),
        ));
    }
    let default_hooks = NodeHooks::default();
    let mut estimations = Vec::with_capacity(multipliers.len());
    let mut candidates: Option<Vec<usize>> = None;
    let mut exhausted = false;

    for (stage, &mult) in multipliers.iter().enumerate() {
        let cbox = base_box.scaled(mult)?;
        let hooks = stage_hooks.get(stage).unwrap_or(&default_hooks);
        if exhausted {
            estimations.push(make_estimation(
                cfg,
                kind,
                anchor,
                t_final,
                &cbox,
                grid,
                None,
                Vec::new(),
            ));
            continue;
        }
        let est = match kind {
            SetKind::Rs => pointwise_rs(
                cfg,
                anchor,
                t_final,
                &cbox,
                grid,
                candidates.as_deref(),
                hooks,
            )?,
            SetKind::Cs => pointwise_cs(
                cfg,
                anchor,
                t_final,
                &cbox,
                grid,
                candidates.as_deref(),
                hooks,
            )?,
        };
        let members = est.member_indices();
        exhausted = members.is_empty();
        candidates = Some(members);
        estimations.push(est);
    }
    Ok(estimations)
}

/// Check a shrinking-multiplier list: entries in (0, 1], strictly decreasing.
pub fn validate_multipliers(multipliers: &[f64]) -> Result<()> {
    if multipliers.is_empty() {
        return Err(Error::InvalidConfig("empty multiplier list".into()));
    }
    for pair in multipliers.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidConfig(format!(
                "multipliers must be strictly decreasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if multipliers.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(Error::InvalidConfig("multipliers must lie in (0, 1]".into()));
    }
    Ok(())
}
