//! Linear double integrator used to check the optimizer against the
//! discrete Riccati solution.

use nalgebra::{SMatrix, SVector, Vector6};

use super::{NmpcConfig, Observation, PredictionModel};
use crate::error::{Error, Result};
use crate::spatial::Pose6;

/// `p' = v`, `v' = u` in all six pose coordinates, unit mass, no coupling.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

/// `(p, v)`
pub type IntegratorState = (Vector6<f64>, Vector6<f64>);

impl PredictionModel for DoubleIntegrator {
    type State = IntegratorState;

    fn step(&self, x: &IntegratorState, u: &Vector6<f64>, h: f64, substeps: usize) -> Result<(Observation, IntegratorState)> {
        let dt = h / substeps as f64;
        let (mut p, mut v) = *x;
        for _ in 0..substeps {
            // RK4 on a double integrator with constant input
            let (k1p, k1v) = (v, *u);
            let (k2p, k2v) = (v + k1v * (dt / 2.0), *u);
            let (k3p, k3v) = (v + k2v * (dt / 2.0), *u);
            let (k4p, k4v) = (v + k3v * dt, *u);
            p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
        }
        Ok((self.observe(x)?, (p, v)))
    }

    fn observe(&self, x: &IntegratorState) -> Result<Observation> {
        Ok(Observation {
            pose: Pose6 { position: x.0.fixed_rows::<3>(0).into(), euler: x.0.fixed_rows::<3>(3).into() },
            twist: x.1,
            state_margins: Vec::new(),
            input_margins: Vec::new(),
        })
    }

    fn input_scale(&self) -> Vector6<f64> {
        Vector6::repeat(1.0)
    }

    fn state_weights(&self) -> &[f64] {
        &[]
    }

    fn input_weights(&self) -> &[f64] {
        &[]
    }
}

type M12 = SMatrix<f64, 12, 12>;

/// First input of the finite-horizon LQR with stage cost
/// `h (p'Q_x p + v'Q_v v + u'R u)` and terminal cost `p'P_x p`, regulating to
/// the origin.
pub fn lqr_first_input(x0: &IntegratorState, cfg: &NmpcConfig) -> Result<Vector6<f64>> {
    let h = cfg.h;
    let n = cfg.steps();
    let mut a = M12::identity();
    a.fixed_view_mut::<6, 6>(0, 6).fill_diagonal(h);
    let mut b = SMatrix::<f64, 12, 6>::zeros();
    b.fixed_view_mut::<6, 6>(0, 0).fill_diagonal(h * h / 2.0);
    b.fixed_view_mut::<6, 6>(6, 0).fill_diagonal(h);
    let mut q = M12::zeros();
    q.fixed_view_mut::<6, 6>(0, 0).copy_from(&(cfg.q_x.to_matrix("q_x")? * h));
    q.fixed_view_mut::<6, 6>(6, 6).copy_from(&(cfg.q_v.to_matrix("q_v")? * h));
    let r = cfg.r_u.to_matrix("r_u")? * h;
    let mut p = M12::zeros();
    p.fixed_view_mut::<6, 6>(0, 0).copy_from(&cfg.p_x.to_matrix("p_x")?);

    let singular = || Error::Validation("LQR recursion hit a singular input Hessian".into());
    let mut gain = SMatrix::<f64, 6, 12>::zeros();
    for _ in 0..n {
        let s = r + b.transpose() * p * b;
        let s_inv = s.try_inverse().ok_or_else(singular)?;
        gain = s_inv * b.transpose() * p * a;
        p = q + a.transpose() * p * (a - b * gain);
        p = (p + p.transpose()) * 0.5;
    }
    let mut x = SVector::<f64, 12>::zeros();
    x.fixed_rows_mut::<6>(0).copy_from(&x0.0);
    x.fixed_rows_mut::<6>(6).copy_from(&x0.1);
    Ok(-(gain * x))
}
