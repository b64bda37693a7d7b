//! Sampled-data NMPC by direct single shooting.
//!
//! The decision variables are `N_p` piecewise-constant task wrenches. The
//! penalized cost is written as a sum of squares `|r(z)|^2` over the
//! normalized inputs `z = u / scale` and minimized with Levenberg-Marquardt
//! on a forward-difference Jacobian.

mod agent_model;
mod controller;
mod surrogate;

pub use agent_model::AgentPrediction;
pub use controller::{ControlAction, Controller, LocalMeasurement, ReadAudit};
pub use surrogate::{lqr_first_input, DoubleIntegrator};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::constraints::PenaltyWeights;
use crate::error::{Error, Result};
use crate::navfun::Reference;
use crate::par::{self, Execution};
use crate::spatial::{pose_error, Pose6};

/// A 6x6 weight given as a scalar multiple of the identity, a diagonal, or
/// a full row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightMatrix {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl WeightMatrix {
    pub fn to_matrix(&self, name: &str) -> Result<Matrix6<f64>> {
        let bad = |s: String| Error::Validation(format!("nmpc.{name}: {s}"));
        match self {
            WeightMatrix::Scalar(s) => Ok(Matrix6::identity() * *s),
            WeightMatrix::Diagonal(d) => {
                if d.len() != 6 {
                    return Err(bad(format!("expected 6 diagonal entries, got {}", d.len())));
                }
                Ok(Matrix6::from_diagonal(&Vector6::from_column_slice(d)))
            }
            WeightMatrix::Full(rows) => {
                if rows.len() != 6 || rows.iter().any(|r| r.len() != 6) {
                    return Err(bad("expected a 6x6 matrix".into()));
                }
                Ok(Matrix6::from_fn(|r, c| rows[r][c]))
            }
        }
    }

    /// Lower Cholesky factor `L` with `W = L L^T`; fails unless `W` is
    /// symmetric positive definite.
    pub fn factor(&self, name: &str) -> Result<Matrix6<f64>> {
        let w = self.to_matrix(name)?;
        if w.iter().any(|x| !x.is_finite()) || (w - w.transpose()).abs().max() > 1e-12 * w.abs().max().max(1.0) {
            return Err(Error::Validation(format!("nmpc.{name} must be a finite symmetric matrix")));
        }
        w.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Validation(format!("nmpc.{name} is not positive definite")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    #[serde(default = "default_relative_tolerance")]
    pub relative_tolerance: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_max_iterations() -> usize {
    200
}
fn default_gradient_tolerance() -> f64 {
    1e-6
}
fn default_relative_tolerance() -> f64 {
    1e-6
}
fn default_fd_step() -> f64 {
    1e-6
}
fn default_substeps() -> usize {
    2
}
fn default_tightening() -> f64 {
    0.9
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            relative_tolerance: default_relative_tolerance(),
            fd_step: default_fd_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmpcConfig {
    /// Sampling period [s].
    pub h: f64,
    /// Prediction horizon [s], an integer multiple of `h`.
    pub horizon: f64,
    pub q_x: WeightMatrix,
    pub q_v: WeightMatrix,
    pub r_u: WeightMatrix,
    pub p_x: WeightMatrix,
    #[serde(default)]
    pub penalty: PenaltyWeights,
    #[serde(default)]
    pub solver: SolverConfig,
    /// RK4 steps per sampling interval in the prediction.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Factor applied to the box bounds seen by the prediction.
    #[serde(default = "default_tightening")]
    pub tightening: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            h: 0.12,
            horizon: 0.6,
            q_x: WeightMatrix::Scalar(0.8),
            q_v: WeightMatrix::Scalar(0.4),
            r_u: WeightMatrix::Scalar(0.3),
            p_x: WeightMatrix::Scalar(0.8),
            penalty: PenaltyWeights::default(),
            solver: SolverConfig::default(),
            substeps: default_substeps(),
            tightening: default_tightening(),
        }
    }
}

/// Cholesky factors of the cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFactors {
    pub q_x: Matrix6<f64>,
    pub q_v: Matrix6<f64>,
    pub r_u: Matrix6<f64>,
    pub p_x: Matrix6<f64>,
}

impl NmpcConfig {
    /// Number of decision blocks `N_p = T_p / h`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    pub fn factors(&self) -> Result<WeightFactors> {
        Ok(WeightFactors {
            q_x: self.q_x.factor("q_x")?,
            q_v: self.q_v.factor("q_v")?,
            r_u: self.r_u.factor("r_u")?,
            p_x: self.p_x.factor("p_x")?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::Validation(s));
        if !(self.h > 0.0) || !(self.horizon > self.h) {
            return bad(format!("nmpc: need 0 < h < horizon, got h = {} and horizon = {}", self.h, self.horizon));
        }
        let ratio = self.horizon / self.h;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad(format!("nmpc.horizon = {} is not an integer multiple of h = {}", self.horizon, self.h));
        }
        self.factors()?;
        if self.substeps == 0 {
            return bad("nmpc.substeps must be at least 1".into());
        }
        if !(self.tightening > 0.0 && self.tightening <= 1.0) {
            return bad("nmpc.tightening must lie in (0, 1]".into());
        }
        if !(self.penalty.interior >= 0.0 && self.penalty.bounds >= 0.0) {
            return bad("nmpc.penalty weights must be non-negative".into());
        }
        let s = &self.solver;
        if s.max_iterations == 0 || !(s.fd_step > 0.0) || !(s.gradient_tolerance > 0.0) || !(s.relative_tolerance >= 0.0) {
            return bad("nmpc.solver: iterations, step and tolerances must be positive".into());
        }
        Ok(())
    }
}

/// What the cost sees of one predicted state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pose: Pose6,
    pub twist: Vector6<f64>,
    /// Normalized state margins (positive = satisfied).
    pub state_margins: Vec<f64>,
    /// Normalized input margins for the input held from this state; empty at
    /// the end of the horizon.
    pub input_margins: Vec<f64>,
}

/// Model used inside the optimizer.
pub trait PredictionModel: Sync {
    type State: Clone + Send + Sync;

    /// Observation at `x` for input `u`, and the state after holding `u` for `h`.
    fn step(&self, x: &Self::State, u: &Vector6<f64>, h: f64, substeps: usize) -> Result<(Observation, Self::State)>;

    /// Observation without input margins.
    fn observe(&self, x: &Self::State) -> Result<Observation>;

    /// Per-coordinate scale of the decision variables.
    fn input_scale(&self) -> Vector6<f64>;

    fn state_weights(&self) -> &[f64];

    fn input_weights(&self) -> &[f64];

    /// Feedforward inputs that realize the reference in the model; the input
    /// weight penalizes deviations from them.
    fn reference_inputs(
        &self,
        _x0: &Self::State,
        reference: &Reference,
        _h: f64,
        _substeps: usize,
    ) -> Result<Vec<Vector6<f64>>> {
        Ok(vec![Vector6::zeros(); reference.steps()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostBreakdown {
    pub state: f64,
    pub input: f64,
    pub terminal: f64,
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.state + self.input + self.terminal + self.penalty
    }
}

/// Penalized cost of a predicted trace. `observations` holds the `N + 1`
/// grid points, `inputs` and `input_ref` the `N` blocks.
#[allow(clippy::too_many_arguments)]
pub fn cost(
    observations: &[Observation],
    reference: &Reference,
    inputs: &[Vector6<f64>],
    input_ref: &[Vector6<f64>],
    cfg: &NmpcConfig,
    state_weights: &[f64],
    input_weights: &[f64],
) -> Result<CostBreakdown> {
    let n = inputs.len();
    if observations.len() != n + 1 || reference.poses.len() < n + 1 || input_ref.len() != n {
        return Err(Error::DimensionMismatch { context: "nmpc cost", expected: n + 1, got: observations.len() });
    }
    let (qx, qv, r, p) = (
        cfg.q_x.to_matrix("q_x")?,
        cfg.q_v.to_matrix("q_v")?,
        cfg.r_u.to_matrix("r_u")?,
        cfg.p_x.to_matrix("p_x")?,
    );
    let h = cfg.h;
    let mut out = CostBreakdown::default();
    for k in 0..n {
        let o = &observations[k];
        let ex = pose_error(&o.pose, &reference.poses[k]);
        let ev = o.twist - reference.twists[k];
        let du = inputs[k] - input_ref[k];
        out.state += h * ((ex.transpose() * qx * ex)[0] + (ev.transpose() * qv * ev)[0]);
        out.input += h * (du.transpose() * r * du)[0];
        if k > 0 {
            out.penalty += crate::constraints::penalty(&o.state_margins, state_weights);
        }
        out.penalty += crate::constraints::penalty(&o.input_margins, input_weights);
    }
    let last = &observations[n];
    let ex = pose_error(&last.pose, &reference.poses[n]);
    out.terminal = (ex.transpose() * p * ex)[0];
    out.penalty += crate::constraints::penalty(&last.state_margins, state_weights);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    /// Iteration cap hit; the best point found is returned.
    MaxIterations,
    /// No descent direction could be accepted.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct HorizonSolution<S> {
    pub inputs: Vec<Vector6<f64>>,
    pub reference_inputs: Vec<Vector6<f64>>,
    pub states: Vec<S>,
    pub observations: Vec<Observation>,
    pub cost: CostBreakdown,
    /// Penalized cost at the starting guess.
    pub initial_cost: f64,
    /// Penalized cost after each accepted iteration, starting guess first.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl<S> HorizonSolution<S> {
    pub fn first_input(&self) -> Vector6<f64> {
        self.inputs[0]
    }
}

/// Open-loop prediction: the states on the sampling grid and their
/// observations, `inputs.len() + 1` of each.
pub fn predict<M: PredictionModel>(
    model: &M,
    x0: &M::State,
    inputs: &[Vector6<f64>],
    h: f64,
    substeps: usize,
) -> Result<(Vec<M::State>, Vec<Observation>)> {
    let mut states = vec![x0.clone()];
    let mut observations = Vec::with_capacity(inputs.len() + 1);
    for u in inputs {
        let (obs, next) = model.step(states.last().unwrap(), u, h, substeps)?;
        observations.push(obs);
        states.push(next);
    }
    observations.push(model.observe(states.last().unwrap())?);
    Ok((states, observations))
}

/// Fixed data of one solve.
struct Problem<'a, M: PredictionModel> {
    model: &'a M,
    x0: &'a M::State,
    reference: &'a Reference,
    input_ref: Vec<Vector6<f64>>,
    scale: Vector6<f64>,
    blocks: usize,
    h: f64,
    substeps: usize,
    factors: WeightFactors,
    sqrt_h: f64,
    state_w: Vec<f64>,
    input_w: Vec<f64>,
    block_len: usize,
}

struct Rollout<S> {
    states: Vec<S>,
    observations: Vec<Observation>,
    residual: DVector<f64>,
}

impl<M: PredictionModel> Problem<'_, M> {
    fn rows(&self) -> usize {
        self.blocks * self.block_len + 6 + self.state_w.len()
    }

    fn inputs(&self, z: &DVector<f64>) -> Vec<Vector6<f64>> {
        (0..self.blocks)
            .map(|k| Vector6::from_fn(|r, _| z[6 * k + r] * self.scale[r]))
            .collect()
    }

    fn write_margins(out: &mut [f64], margins: &[f64], weights: &[f64]) {
        for ((o, m), w) in out.iter_mut().zip(margins).zip(weights) {
            *o = w * (-m).max(0.0);
        }
    }

    fn write_block(&self, k: usize, obs: &Observation, u: &Vector6<f64>, out: &mut [f64]) {
        let ex = pose_error(&obs.pose, &self.reference.poses[k]);
        let ev = obs.twist - self.reference.twists[k];
        let du = u - self.input_ref[k];
        let seg = [
            self.factors.q_x.tr_mul(&ex) * self.sqrt_h,
            self.factors.q_v.tr_mul(&ev) * self.sqrt_h,
            self.factors.r_u.tr_mul(&du) * self.sqrt_h,
        ];
        for (j, s) in seg.iter().enumerate() {
            out[6 * j..6 * j + 6].copy_from_slice(s.as_slice());
        }
        let ns = self.state_w.len();
        if k > 0 {
            Self::write_margins(&mut out[18..18 + ns], &obs.state_margins, &self.state_w);
        } else {
            out[18..18 + ns].fill(0.0);
        }
        Self::write_margins(&mut out[18 + ns..], &obs.input_margins, &self.input_w);
    }

    fn write_terminal(&self, obs: &Observation, out: &mut [f64]) {
        let ex = pose_error(&obs.pose, &self.reference.poses[self.blocks]);
        out[..6].copy_from_slice(self.factors.p_x.tr_mul(&ex).as_slice());
        Self::write_margins(&mut out[6..], &obs.state_margins, &self.state_w);
    }

    /// Rolls out from block `from` and state `x`, writing the residual
    /// segments of blocks `from..` into `residual`.
    fn roll_from(
        &self,
        from: usize,
        x: &M::State,
        inputs: &[Vector6<f64>],
        residual: &mut [f64],
        mut keep: Option<(&mut Vec<M::State>, &mut Vec<Observation>)>,
    ) -> Result<()> {
        let mut x = x.clone();
        for (k, u) in inputs.iter().enumerate().skip(from) {
            let (obs, next) = self.model.step(&x, u, self.h, self.substeps)?;
            let off = k * self.block_len;
            self.write_block(k, &obs, u, &mut residual[off..off + self.block_len]);
            if let Some((states, observations)) = keep.as_mut() {
                states.push(x);
                observations.push(obs);
            }
            x = next;
        }
        let obs = self.model.observe(&x)?;
        self.write_terminal(&obs, &mut residual[self.blocks * self.block_len..]);
        if let Some((states, observations)) = keep {
            states.push(x);
            observations.push(obs);
        }
        Ok(())
    }

    fn rollout(&self, z: &DVector<f64>) -> Result<Rollout<M::State>> {
        let mut residual = DVector::zeros(self.rows());
        let mut states = Vec::with_capacity(self.blocks + 1);
        let mut observations = Vec::with_capacity(self.blocks + 1);
        self.roll_from(0, self.x0, &self.inputs(z), residual.as_mut_slice(), Some((&mut states, &mut observations)))?;
        Ok(Rollout { states, observations, residual })
    }

    /// Forward differences; column `j` only re-simulates from its own block.
    /// Columns whose perturbed rollout fails are left at zero.
    fn jacobian(&self, z: &DVector<f64>, base: &Rollout<M::State>, step: f64, exec: Execution) -> DMatrix<f64> {
        let rows = self.rows();
        let cols = par::map_range(exec, z.len(), |j| {
            let b = j / 6;
            let mut zp = z.clone();
            zp[j] += step;
            let mut r = base.residual.clone();
            match self.roll_from(b, &base.states[b], &self.inputs(&zp), r.as_mut_slice(), None) {
                Ok(()) => (r - &base.residual) / step,
                Err(_) => DVector::zeros(rows),
            }
        });
        DMatrix::from_columns(&cols)
    }
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Solves the finite-horizon problem from `x0` against `reference`.
///
/// The starting guess is `warm_start` when given (it must hold `N_p`
/// blocks), otherwise the model's reference inputs.
pub fn solve_fhocp<M: PredictionModel>(
    model: &M,
    x0: &M::State,
    reference: &Reference,
    warm_start: Option<&[Vector6<f64>]>,
    cfg: &NmpcConfig,
    exec: Execution,
) -> Result<HorizonSolution<M::State>> {
    let blocks = cfg.steps();
    if reference.steps() < blocks {
        return Err(Error::DimensionMismatch { context: "nmpc reference", expected: blocks + 1, got: reference.poses.len() });
    }
    model.observe(x0).map_err(|e| Error::InfeasibleStart(e.to_string()))?;
    let input_ref = match model.reference_inputs(x0, reference, cfg.h, cfg.substeps) {
        Ok(u) if u.len() >= blocks => u[..blocks].to_vec(),
        _ => vec![Vector6::zeros(); blocks],
    };
    let state_w: Vec<f64> = model.state_weights().iter().map(|w| w.sqrt()).collect();
    let input_w: Vec<f64> = model.input_weights().iter().map(|w| w.sqrt()).collect();
    let p = Problem {
        model,
        x0,
        reference,
        scale: model.input_scale(),
        blocks,
        h: cfg.h,
        substeps: cfg.substeps,
        factors: cfg.factors()?,
        sqrt_h: cfg.h.sqrt(),
        block_len: 18 + state_w.len() + input_w.len(),
        state_w,
        input_w,
        input_ref,
    };
    let normalize = |u: &[Vector6<f64>]| {
        DVector::from_iterator(6 * blocks, u.iter().take(blocks).flat_map(|b| (0..6).map(move |r| b[r] / p.scale[r])))
    };

    let mut guesses = Vec::new();
    if let Some(w) = warm_start.filter(|w| w.len() == blocks) {
        guesses.push(normalize(w));
    }
    guesses.push(normalize(&p.input_ref));
    guesses.push(DVector::zeros(6 * blocks));
    let mut start = None;
    let mut last_err = None;
    for z in guesses {
        match p.rollout(&z) {
            Ok(r) => {
                start = Some((z, r));
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (mut z, mut current) = match start {
        Some(s) => s,
        None => return Err(last_err.unwrap_or(Error::InfeasibleStart("no feasible rollout".into()))),
    };

    let mut f = cost_of(&current.residual);
    let initial_cost = f;
    let mut history = vec![f];
    let mut mu = 1e-3;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let sc = &cfg.solver;
    // finite differences once, then Broyden updates; refreshed when a
    // Broyden model cannot produce an accepted step
    let mut jac = p.jacobian(&z, &current, sc.fd_step, exec);
    let mut fresh = true;
    while iterations < sc.max_iterations {
        let g = jac.tr_mul(&current.residual);
        if 2.0 * g.amax() <= sc.gradient_tolerance {
            if fresh {
                status = SolveStatus::Converged;
                break;
            }
            jac = p.jacobian(&z, &current, sc.fd_step, exec);
            fresh = true;
            continue;
        }
        iterations += 1;
        let hess = jac.tr_mul(&jac);
        let diag = DVector::from_fn(hess.nrows(), |i, _| hess[(i, i)].max(1e-9));
        let mut accepted = None;
        while mu < 1e12 {
            let mut a = hess.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * diag[i];
            }
            let Some(ch) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let z_new = &z - ch.solve(&g);
            match p.rollout(&z_new) {
                Ok(r) if cost_of(&r.residual) < f => {
                    accepted = Some((z_new, r));
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        let Some((z_new, r)) = accepted else {
            if fresh {
                status = SolveStatus::Stalled;
                break;
            }
            jac = p.jacobian(&z, &current, sc.fd_step, exec);
            fresh = true;
            mu = 1e-3;
            continue;
        };
        let f_new = cost_of(&r.residual);
        let decrease = f - f_new;
        let step = &z_new - &z;
        let ss = step.norm_squared();
        if ss > 0.0 {
            let miss = (&r.residual - &current.residual) - &jac * &step;
            jac.ger(1.0 / ss, &miss, &step, 1.0);
        }
        fresh = false;
        z = z_new;
        current = r;
        f = f_new;
        history.push(f);
        mu = (mu / 3.0).max(1e-12);
        if decrease <= sc.relative_tolerance * f.max(f64::MIN_POSITIVE) {
            status = SolveStatus::Converged;
            break;
        }
    }
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0]));

    let inputs = p.inputs(&z);
    let breakdown = cost(
        &current.observations,
        reference,
        &inputs,
        &p.input_ref,
        cfg,
        model.state_weights(),
        model.input_weights(),
    )?;
    Ok(HorizonSolution {
        inputs,
        reference_inputs: p.input_ref,
        states: current.states,
        observations: current.observations,
        cost: breakdown,
        initial_cost,
        history,
        iterations,
        status,
    })
}

/// Previous solution shifted by one block and padded with its last block.
pub fn shift_warm_start(previous: &[Vector6<f64>]) -> Vec<Vector6<f64>> {
    match previous.split_first() {
        Some((_, rest)) if !rest.is_empty() => {
            let mut out = rest.to_vec();
            out.push(*rest.last().unwrap());
            out
        }
        _ => previous.to_vec(),
    }
}

#[cfg(test)]
mod tests;
