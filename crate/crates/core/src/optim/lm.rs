use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::problem::{BaProblem, ObservationJacobian};
use super::OptimError;

const MAX_DAMPING: f64 = 1e12;
/// Per-observation cost below which a state counts as exact.
const EXACT_COST_PER_OBS: f64 = 1e-22;

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop once the step norm falls below this fraction of the state norm.
    pub param_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Huber threshold in pixels; `None` selects plain least squares.
    pub robust_loss_scale: Option<f64>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            cost_tolerance: 1e-10,
            param_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.5,
            robust_loss_scale: Some(3.0),
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let positive = [
            self.cost_tolerance,
            self.param_tolerance,
            self.initial_damping,
            self.damping_up,
            self.damping_down,
        ];
        if self.max_iters == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(OptimError::InvalidProblem("LM settings must be positive"));
        }
        if self.robust_loss_scale.is_some_and(|k| !(k > 0.0)) {
            return Err(OptimError::InvalidProblem("robust loss scale must be positive"));
        }
        Ok(())
    }

    /// Huber loss of a squared residual norm.
    pub fn loss(&self, s: f64) -> f64 {
        match self.robust_loss_scale {
            Some(k) if s > k * k => 2.0 * k * s.sqrt() - k * k,
            _ => s,
        }
    }

    /// Derivative of [`Self::loss`], the IRLS weight.
    pub fn loss_weight(&self, s: f64) -> f64 {
        match self.robust_loss_scale {
            Some(k) if s > k * k => k / s.sqrt(),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    AlreadyOptimal,
    CostTolerance,
    ParamTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    /// Initial cost followed by the cost after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
}

impl LmReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_trace[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace starts with the initial cost")
    }
}

/// Robust total cost, `None` if any point sits behind its camera.
pub(crate) fn total_cost(problem: &BaProblem, cfg: &LmConfig) -> Option<f64> {
    let mut cost = 0.0;
    for o in &problem.observations {
        cost += cfg.loss(problem.residual(o)?.norm_squared());
    }
    Some(cost)
}

type CamBlock = SMatrix<f64, 6, 3>;

struct NormalEquations {
    hcc: DMatrix<f64>,
    gc: DVector<f64>,
    hpp: Vec<Matrix3<f64>>,
    gp: Vec<Vector3<f64>>,
    /// Per point: (camera offset, dof, camera-point coupling block).
    coupling: Vec<Vec<(usize, usize, CamBlock)>>,
}

fn build(problem: &BaProblem, cfg: &LmConfig, jac: &[ObservationJacobian]) -> NormalEquations {
    let (offsets, ncam) = problem.camera_offsets();
    let npts = problem.points.len();
    let mut eq = NormalEquations {
        hcc: DMatrix::zeros(ncam, ncam),
        gc: DVector::zeros(ncam),
        hpp: vec![Matrix3::zeros(); npts],
        gp: vec![Vector3::zeros(); npts],
        coupling: vec![Vec::new(); npts],
    };
    for (o, j) in problem.observations.iter().zip(jac) {
        let w = cfg.loss_weight(j.residual.norm_squared());
        let jp = j.point;
        eq.hpp[o.point] += jp.transpose() * jp * w;
        eq.gp[o.point] += jp.transpose() * j.residual * w;
        if let Some(off) = offsets[o.camera] {
            let dof = problem.cameras[o.camera].gauge.dof();
            let jc = j.camera;
            let hc = jc.transpose() * jc * w;
            let gc = jc.transpose() * j.residual * w;
            for r in 0..dof {
                eq.gc[off + r] += gc[r];
                for c in 0..dof {
                    eq.hcc[(off + r, off + c)] += hc[(r, c)];
                }
            }
            eq.coupling[o.point].push((off, dof, jc.transpose() * jp * w));
        }
    }
    eq
}

fn damp(v: f64, lambda: f64) -> f64 {
    v + lambda * v.max(1e-9)
}

/// Solves the damped system by eliminating the point blocks.
fn solve(eq: &NormalEquations, lambda: f64) -> Option<Vec<f64>> {
    let ncam = eq.gc.len();
    let npts = eq.hpp.len();
    let mut s = eq.hcc.clone();
    for i in 0..ncam {
        s[(i, i)] = damp(s[(i, i)], lambda);
    }
    let mut rhs = -eq.gc.clone();
    let mut vinv = Vec::with_capacity(npts);
    for p in 0..npts {
        let mut v = eq.hpp[p];
        for i in 0..3 {
            v[(i, i)] = damp(v[(i, i)], lambda);
        }
        let inv = v.try_inverse()?;
        let blocks = &eq.coupling[p];
        for &(oa, da, wa) in blocks {
            let wv = wa * inv;
            let t = wv * eq.gp[p];
            for r in 0..da {
                rhs[oa + r] += t[r];
            }
            for &(ob, db, wb) in blocks {
                let m = wv * wb.transpose();
                for r in 0..da {
                    for c in 0..db {
                        s[(oa + r, ob + c)] -= m[(r, c)];
                    }
                }
            }
        }
        vinv.push(inv);
    }

    let dc = if ncam == 0 {
        DVector::zeros(0)
    } else {
        match s.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => s.lu().solve(&rhs)?,
        }
    };
    let mut delta = Vec::with_capacity(ncam + 3 * npts);
    delta.extend(dc.iter().copied());
    for p in 0..npts {
        let mut b = -eq.gp[p];
        for &(oa, da, wa) in &eq.coupling[p] {
            for c in 0..3 {
                for r in 0..da {
                    b[c] -= wa[(r, c)] * dc[oa + r];
                }
            }
        }
        let dp = vinv[p] * b;
        delta.extend(dp.iter().copied());
    }
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

fn state_norm(problem: &BaProblem) -> f64 {
    let mut s = 0.0;
    for c in &problem.cameras {
        s += c.pose.translation.norm_squared();
    }
    for p in &problem.points {
        s += p.norm_squared();
    }
    s.sqrt()
}

/// Levenberg-Marquardt on the (Huber-robustified) reprojection error.
///
/// Rotations are updated by a left-multiplied axis-angle increment; fixed
/// cameras are never written to. Only steps that strictly lower the cost
/// are accepted, so the reported cost trace is non-increasing.
pub fn lm_minimize(problem: &BaProblem, cfg: &LmConfig) -> Result<(BaProblem, LmReport), OptimError> {
    problem.validate()?;
    cfg.validate()?;
    let mut state = problem.clone();
    let mut cost = total_cost(&state, cfg).ok_or(OptimError::InvalidProblem("a point is behind a camera"))?;
    if !cost.is_finite() {
        return Err(OptimError::InvalidProblem("non-finite initial cost"));
    }
    let mut report = LmReport {
        cost_trace: vec![cost],
        iterations: 0,
        accepted_steps: 0,
        termination: Termination::MaxIterations,
    };
    let exact = EXACT_COST_PER_OBS * state.observations.len().max(1) as f64;
    if cost <= exact {
        report.termination = Termination::AlreadyOptimal;
        return Ok((state, report));
    }

    let mut lambda = cfg.initial_damping;
    'outer: while report.iterations < cfg.max_iters {
        report.iterations += 1;
        let jac: Vec<ObservationJacobian> = state
            .observations
            .iter()
            .map(|o| state.jacobian(o))
            .collect::<Option<_>>()
            .ok_or(OptimError::InvalidProblem("a point is behind a camera"))?;
        let eq = build(&state, cfg, &jac);
        let threshold = cfg.param_tolerance * (state_norm(&state) + cfg.param_tolerance);
        loop {
            if let Some(delta) = solve(&eq, lambda) {
                let step = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if step <= threshold {
                    report.termination = Termination::ParamTolerance;
                    break 'outer;
                }
                let candidate = state.retract(&delta);
                if let Some(new_cost) = total_cost(&candidate, cfg) {
                    if new_cost < cost {
                        let relative = (cost - new_cost) / cost;
                        state = candidate;
                        cost = new_cost;
                        report.cost_trace.push(cost);
                        report.accepted_steps += 1;
                        lambda = (lambda * cfg.damping_down).max(1e-15);
                        if relative < cfg.cost_tolerance {
                            report.termination = Termination::CostTolerance;
                            break 'outer;
                        }
                        if cost <= exact {
                            report.termination = Termination::AlreadyOptimal;
                            break 'outer;
                        }
                        break;
                    }
                }
            }
            lambda *= cfg.damping_up;
            if lambda > MAX_DAMPING {
                return Err(OptimError::NonConvergence {
                    damping: lambda,
                    best: Box::new(state),
                    report,
                });
            }
        }
    }
    Ok((state, report))
}
