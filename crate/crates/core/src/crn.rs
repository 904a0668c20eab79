//! Cubic-regularized Newton phase for saddle problems: the cubic saddle
//! subproblem, regularization backtracking and merit-based step selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolverError};
use crate::linalg::{min_sym_eigenvalue, solve, spectral_norm};
use crate::oracle::{jacobian, merit_of, operator_f, SaddleOracle};
use crate::params::SolverParams;
use crate::point::{norm_z, PointZ};
use crate::trace::{OracleCounts, Phase, TraceRecorder};

pub const MAX_SUBPROBLEM_ITERATIONS: usize = 100;
pub const FIXED_POINT_ATTEMPTS: usize = 30;
pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const MAX_BACKTRACKS: usize = 200;

/// Model of `g` around `z_k` with cubic regularization `gamma_k / 3` per block.
#[derive(Debug, Clone)]
pub struct CubicSubproblem {
    pub z_k: PointZ,
    pub gamma_k: f64,
    pub f_k: PointZ,
    pub jac_k: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CubicSolution {
    pub d: PointZ,
    pub residual: f64,
    pub iterations: usize,
    pub used_bisection: bool,
}

impl CubicSubproblem {
    /// `|F + J d + gamma (|d_x| d_x, |d_y| d_y)|`
    pub fn residual(&self, d: &PointZ) -> Result<f64> {
        let jd = PointZ::from_dvector(&(&self.jac_k * d.to_dvector()), d.n())?;
        let (nx, ny) = (d.norm_x(), d.norm_y());
        let reg = PointZ::new(
            d.x().iter().map(|v| self.gamma_k * nx * v).collect(),
            d.y().iter().map(|v| self.gamma_k * ny * v).collect(),
        )?;
        Ok(norm_z(&self.f_k.add(&jd)?.add(&reg)?))
    }

    /// Displacement for fixed radii: `(J + gamma blockdiag(r_x I, r_y I)) d = -F`.
    fn displacement(&self, rx: f64, ry: f64) -> Result<PointZ> {
        let n = self.z_k.n();
        let mut lhs = self.jac_k.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += self.gamma_k * if i < n { rx } else { ry };
        }
        let rhs: DVector<f64> = -self.f_k.to_dvector();
        PointZ::from_dvector(&solve(&lhs, &rhs, "cubic subproblem system")?, n)
    }
}

/// Solves the stationarity system of the cubic saddle model.
///
/// The radii `r_x = |d_x|`, `r_y = |d_y|` are found by a damped fixed-point
/// iteration on the inner linear solve, falling back to nested bisection.
pub fn solve_cubic_subproblem(sub: &CubicSubproblem, tol: f64) -> Result<CubicSolution> {
    if !(sub.gamma_k >= 0.0 && sub.gamma_k.is_finite()) {
        return Err(SolverError::InvalidParams(format!(
            "regularization must be nonnegative, got {}",
            sub.gamma_k
        )));
    }
    let target = tol * (1.0 + norm_z(&sub.f_k));
    let newton = sub.displacement(0.0, 0.0)?;
    if sub.gamma_k == 0.0 || norm_z(&sub.f_k) == 0.0 {
        let residual = sub.residual(&newton)?;
        return check(newton, residual, target, 0, false);
    }

    let (mut rx, mut ry) = (newton.norm_x(), newton.norm_y());
    let mut best: Option<(PointZ, f64)> = None;
    for it in 1..=FIXED_POINT_ATTEMPTS {
        let d = sub.displacement(rx, ry)?;
        let residual = sub.residual(&d)?;
        if residual <= target {
            return Ok(CubicSolution {
                d,
                residual,
                iterations: it,
                used_bisection: false,
            });
        }
        rx = (1.0 - FIXED_POINT_DAMPING) * rx + FIXED_POINT_DAMPING * d.norm_x();
        ry = (1.0 - FIXED_POINT_DAMPING) * ry + FIXED_POINT_DAMPING * d.norm_y();
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((d, residual));
        }
    }

    // |d| <= |F| / lambda_min(sym J) for every nonnegative radius pair.
    let lam = min_sym_eigenvalue(&sub.jac_k);
    let bound = if lam > 0.0 {
        norm_z(&sub.f_k) / lam
    } else {
        newton.norm_x().max(newton.norm_y()).max(1.0) * 1e6
    };
    let budget = MAX_SUBPROBLEM_ITERATIONS - FIXED_POINT_ATTEMPTS;
    let mut inner_solves = 0usize;
    let mut inner_y = |rx: f64| -> Result<(f64, PointZ)> {
        let (mut lo, mut hi) = (0.0, bound);
        let mut d = sub.displacement(rx, hi)?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            d = sub.displacement(rx, mid)?;
            inner_solves += 1;
            if d.norm_y() > mid {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        Ok((0.5 * (lo + hi), d))
    };
    let (mut lo, mut hi) = (0.0, bound);
    for outer in 0..budget {
        let mid = 0.5 * (lo + hi);
        let (ry, _) = inner_y(mid)?;
        let d = sub.displacement(mid, ry)?;
        let residual = sub.residual(&d)?;
        if residual <= target {
            return Ok(CubicSolution {
                d,
                residual,
                iterations: FIXED_POINT_ATTEMPTS + outer + 1,
                used_bisection: true,
            });
        }
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((d.clone(), residual));
        }
        if d.norm_x() > mid {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (d, residual) = best.expect("at least one trial point");
    check(d, residual, target, MAX_SUBPROBLEM_ITERATIONS, true)
}

fn check(d: PointZ, residual: f64, target: f64, iterations: usize, used_bisection: bool) -> Result<CubicSolution> {
    if residual <= target {
        Ok(CubicSolution {
            d,
            residual,
            iterations,
            used_bisection,
        })
    } else {
        Err(SolverError::InnerSolveFailed(format!(
            "cubic subproblem residual {residual:.3e} above {target:.3e}"
        )))
    }
}

/// Iterate of the CRN phase.
#[derive(Debug, Clone)]
pub struct CrnState {
    pub z_k: PointZ,
    pub f_k: PointZ,
    pub gamma_k: f64,
    pub k: usize,
}

impl CrnState {
    pub fn new(oracle: &dyn SaddleOracle, z0: &PointZ, counts: &mut OracleCounts) -> Result<CrnState> {
        Ok(CrnState {
            z_k: z0.clone(),
            f_k: operator_f(oracle, z0, counts)?,
            gamma_k: 0.0,
            k: 0,
        })
    }

    pub fn merit(&self) -> f64 {
        merit_of(&self.f_k)
    }
}

/// What one accepted step did.
#[derive(Debug, Clone)]
pub struct CrnStepInfo {
    pub from: PointZ,
    pub to: PointZ,
    pub gamma: f64,
    pub backtracks: usize,
    pub used_alpha: bool,
    pub subproblem_residual: f64,
}

/// One outer iteration: reset to `gamma_bar`, backtrack until
/// `gamma (|d_x| + |d_y|) <= mu`, then take the better of `z + d`, `z + alpha d`.
pub fn crn_step(
    oracle: &dyn SaddleOracle,
    state: &CrnState,
    params: &SolverParams,
    counts: &mut OracleCounts,
) -> Result<(CrnState, CrnStepInfo)> {
    let jac_k = jacobian(oracle, &state.z_k, counts)?;
    let mut sub = CubicSubproblem {
        z_k: state.z_k.clone(),
        gamma_k: params.gamma_bar,
        f_k: state.f_k.clone(),
        jac_k,
    };
    let tol = params.inner_tol * (1.0 + spectral_norm(&sub.jac_k));
    let mut backtracks = 0;
    let solution = loop {
        let sol = solve_cubic_subproblem(&sub, tol)?;
        if sub.gamma_k * (sol.d.norm_x() + sol.d.norm_y()) <= params.mu {
            break sol;
        }
        backtracks += 1;
        if backtracks > MAX_BACKTRACKS {
            return Err(SolverError::InnerSolveFailed(format!(
                "regularization backtracking exceeded {MAX_BACKTRACKS} reductions"
            )));
        }
        sub.gamma_k *= params.rho;
    };
    if sub.gamma_k * (solution.d.norm_x() + solution.d.norm_y()) > params.mu {
        return Err(SolverError::InnerSolveFailed("backtracking condition violated".into()));
    }

    let full = state.z_k.add(&solution.d)?;
    let damped = state.z_k.axpy(params.alpha, &solution.d)?;
    let f_full = operator_f(oracle, &full, counts)?;
    let f_damped = operator_f(oracle, &damped, counts)?;
    let used_alpha = merit_of(&f_damped) < merit_of(&f_full);
    let (z_next, f_next) = if used_alpha { (damped, f_damped) } else { (full, f_full) };

    let info = CrnStepInfo {
        from: state.z_k.clone(),
        to: z_next.clone(),
        gamma: sub.gamma_k,
        backtracks,
        used_alpha,
        subproblem_residual: solution.residual,
    };
    let next = CrnState {
        z_k: z_next,
        f_k: f_next,
        gamma_k: sub.gamma_k,
        k: state.k + 1,
    };
    Ok((next, info))
}

#[derive(Debug, Clone)]
pub struct CrnOutcome {
    pub point: PointZ,
    pub merit: f64,
    pub steps: Vec<CrnStepInfo>,
}

/// Iterates until `m(z) <= eps_merit` or the recorder's CRN budget runs out.
pub fn crn_run(
    oracle: &dyn SaddleOracle,
    z0: &PointZ,
    eps_merit: f64,
    params: &SolverParams,
    restart_index: usize,
    trace: &mut TraceRecorder,
) -> Result<CrnOutcome> {
    if !(eps_merit > 0.0) {
        return Err(SolverError::InvalidParams(format!("merit target must be positive, got {eps_merit}")));
    }
    let cap = trace.limits().crn_max_iter;
    let mut state = CrnState::new(oracle, z0, trace.calls_mut())?;
    let mut steps = Vec::new();
    while state.merit() > eps_merit {
        if steps.len() >= cap {
            return Err(SolverError::BudgetExceeded(cap));
        }
        trace.check_budget()?;
        let (next, info) = crn_step(oracle, &state, params, trace.calls_mut())?;
        trace.record(Phase::Crn, restart_index, state.k, info.gamma, &next.f_k, &next.z_k)?;
        steps.push(info);
        state = next;
    }
    Ok(CrnOutcome {
        merit: state.merit(),
        point: state.z_k,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::toy_quadratic;

    fn pz(x: f64, y: f64) -> PointZ {
        PointZ::new(vec![x], vec![y]).unwrap()
    }

    fn toy_sub(z: PointZ, gamma_k: f64) -> CubicSubproblem {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        CubicSubproblem {
            f_k: operator_f(&q, &z, &mut c).unwrap(),
            jac_k: jacobian(&q, &z, &mut c).unwrap(),
            z_k: z,
            gamma_k,
        }
    }

    #[test]
    fn zero_regularization_is_newton() {
        let sol = solve_cubic_subproblem(&toy_sub(pz(1.0, 1.0), 0.0), 1e-12).unwrap();
        // J = [[1, 1], [-1, 1]], F = (2, 0): Newton step is (-1, -1).
        assert!((sol.d.x()[0] + 1.0).abs() < 1e-15 && (sol.d.y()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn solution_point_has_zero_step() {
        for g in [0.0, 0.3, 5.0] {
            let sol = solve_cubic_subproblem(&toy_sub(pz(0.0, 0.0), g), 1e-12).unwrap();
            assert_eq!(norm_z(&sol.d), 0.0);
        }
    }

    #[test]
    fn regularized_stationarity() {
        for g in [0.1, 1.0, 10.0, 1e3] {
            let sub = toy_sub(pz(1.0, 1.0), g);
            let sol = solve_cubic_subproblem(&sub, 1e-12).unwrap();
            assert!(sub.residual(&sol.d).unwrap() <= 1e-10, "gamma {g}");
        }
    }

    #[test]
    fn quadratic_newton_converges_in_one_step() {
        let q = toy_quadratic();
        let params = SolverParams { gamma_bar: 0.0, ..Default::default() };
        let mut rec = TraceRecorder::default();
        let out = crn_run(&q, &pz(3.0, -2.0), 1e-20, &params, 0, &mut rec).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert!(!out.steps[0].used_alpha);
        assert!(out.merit <= 1e-28);
    }

    #[test]
    fn already_converged_start_takes_no_steps() {
        let q = toy_quadratic();
        let mut rec = TraceRecorder::default();
        let out = crn_run(&q, &pz(0.0, 0.0), 1e-16, &SolverParams::default(), 0, &mut rec).unwrap();
        assert!(out.steps.is_empty());
        assert_eq!(rec.calls().f, 1);
    }

    #[test]
    fn budget_reports_exhaustion() {
        let q = toy_quadratic();
        let params = SolverParams { gamma_bar: 50.0, ..Default::default() };
        let mut rec = TraceRecorder::new(
            None,
            crate::trace::RunLimits {
                max_iterations: None,
                crn_max_iter: 1,
            },
        );
        let err = crn_run(&q, &pz(30.0, 30.0), 1e-30, &params, 0, &mut rec).unwrap_err();
        assert_eq!(err, SolverError::BudgetExceeded(1));
    }
}
