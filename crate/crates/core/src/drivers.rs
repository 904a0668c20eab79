//! Top-level solvers: restarted Mirror-Prox, the Mirror-Prox/CRN hybrid and
//! the gradient-norm minimizer built on a regularized problem.

use nalgebra::DMatrix;

use crate::crn::{crn_run, solve_cubic_subproblem, CrnOutcome, CubicSubproblem};
use crate::error::{Result, SolverError};
use crate::homp::{factorial, homp_run, HompOutcome};
use crate::oracle::{jacobian, operator_f, SaddleOracle};
use crate::params::SolverParams;
use crate::point::{norm_z, PointZ};
use crate::trace::{OracleCounts, Phase, TraceRecorder};

/// `ceil(x)`, except that values within relative 1e-9 of an integer snap to
/// it, so `64^{2/3}` yields 16 rather than 17.
pub fn snapped_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// Restart count, radii `R_i = R / 2^{i-1}` and budgets
/// `T_i = ceil((64 L_p R_i^{p-1} / mu)^{2/(p+1)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartSchedule {
    pub n: usize,
    pub radii: Vec<f64>,
    pub budgets: Vec<usize>,
}

impl RestartSchedule {
    pub fn with_count(params: &SolverParams, n: usize) -> Result<RestartSchedule> {
        if n == 0 {
            return Err(SolverError::InvalidParams("restart count must be at least 1".into()));
        }
        if !(params.lp > 0.0) {
            return Err(SolverError::InvalidParams("lp must be positive".into()));
        }
        let p = params.p as i32;
        let radii: Vec<f64> = (0..n).map(|i| params.r0 / 2f64.powi(i as i32)).collect();
        let budgets = radii
            .iter()
            .map(|r| {
                let base = 64.0 * params.lp * r.powi(p - 1) / params.mu;
                snapped_ceil(base.powf(2.0 / (p as f64 + 1.0))).max(1)
            })
            .collect();
        Ok(RestartSchedule { n, radii, budgets })
    }

    /// `n = ceil(log2(mu R^2 / eps_gap) / 2)`, at least one.
    pub fn for_gap(params: &SolverParams) -> Result<RestartSchedule> {
        let ratio = params.mu * params.r0 * params.r0 / params.eps_gap;
        Self::with_count(params, snapped_ceil((0.5 * ratio.log2()).max(1.0)))
    }

    pub fn total_iterations(&self) -> usize {
        self.budgets.iter().sum()
    }
}

/// `n = ceil(log2(L2 R xi / mu) + 1)`, at least one; one when `L2 = 0`.
pub fn hybrid_restart_count(params: &SolverParams) -> usize {
    if params.l2 == 0.0 {
        return 1;
    }
    let v = (params.l2 * params.r0 * params.xi() / params.mu).log2() + 1.0;
    snapped_ceil(v.max(1.0))
}

#[derive(Debug, Clone)]
pub struct RestartRun {
    pub radius: f64,
    pub budget: usize,
    pub start: PointZ,
    pub end: PointZ,
    pub homp: HompOutcome,
}

#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub point: PointZ,
    pub schedule: RestartSchedule,
    pub runs: Vec<RestartRun>,
}

impl RestartOutcome {
    pub fn homp_iterations(&self) -> usize {
        self.schedule.total_iterations()
    }
}

pub fn run_schedule(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    params: &SolverParams,
    schedule: RestartSchedule,
    trace: &mut TraceRecorder,
) -> Result<RestartOutcome> {
    let mut z = z1.clone();
    let mut runs = Vec::with_capacity(schedule.n);
    for (i, (&radius, &budget)) in schedule.radii.iter().zip(&schedule.budgets).enumerate() {
        let homp = homp_run(oracle, &z, params, budget, i, trace)?;
        log::debug!("restart {i}: radius {radius:.3e}, {budget} iterations");
        let end = homp.average.clone();
        runs.push(RestartRun {
            radius,
            budget,
            start: z,
            end: end.clone(),
            homp,
        });
        z = end;
    }
    Ok(RestartOutcome { point: z, schedule, runs })
}

/// Restarted Mirror-Prox with the gap-driven restart count.
pub fn restarted_homp(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    params: &SolverParams,
    trace: &mut TraceRecorder,
) -> Result<RestartOutcome> {
    params.validate()?;
    run_schedule(oracle, z1, params, RestartSchedule::for_gap(params)?, trace)
}

#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub point: PointZ,
    pub handoff: PointZ,
    pub eps_merit: f64,
    pub restarts: RestartOutcome,
    pub crn: CrnOutcome,
}

/// `mu^2 eps_gap / L1`: a merit level that certifies gap `eps_gap`.
pub fn merit_target_for_gap(params: &SolverParams, eps_gap: f64) -> f64 {
    if params.l1 > 0.0 {
        params.mu * params.mu * eps_gap / params.l1
    } else {
        eps_gap * params.mu
    }
}

/// Restarted Mirror-Prox into the quadratic-convergence region, then CRN.
pub fn hybrid_solve(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    params: &SolverParams,
    trace: &mut TraceRecorder,
) -> Result<HybridOutcome> {
    params.validate()?;
    let schedule = RestartSchedule::with_count(params, hybrid_restart_count(params))?;
    let restarts = run_schedule(oracle, z1, params, schedule, trace)?;
    let eps_merit = merit_target_for_gap(params, params.eps_gap);
    let crn = crn_run(oracle, &restarts.point, eps_merit, params, 0, trace)?;
    Ok(HybridOutcome {
        point: crn.point.clone(),
        handoff: restarts.point.clone(),
        eps_merit,
        restarts,
        crn,
    })
}

/// `g_mu(x, y) = g(x, y) + (mu_reg / 2)(|x - x1|^2 - |y - y1|^2)`
pub struct RegularizedOracle<'a> {
    pub base: &'a dyn SaddleOracle,
    pub anchor: PointZ,
    pub mu_reg: f64,
}

impl<'a> RegularizedOracle<'a> {
    pub fn new(base: &'a dyn SaddleOracle, anchor: PointZ, mu_reg: f64) -> Result<Self> {
        let (n, m) = base.dims();
        if anchor.n() != n || anchor.m() != m {
            return Err(SolverError::DimensionMismatch {
                expected_n: n,
                expected_m: m,
                got_n: anchor.n(),
                got_m: anchor.m(),
            });
        }
        if !(mu_reg >= 0.0 && mu_reg.is_finite()) {
            return Err(SolverError::InvalidParams(format!("mu_reg must be nonnegative, got {mu_reg}")));
        }
        Ok(RegularizedOracle { base, anchor, mu_reg })
    }

    /// Constants of `g_mu`: `mu + mu_reg` and `L1 + mu_reg`; higher orders unchanged.
    pub fn adjusted_params(&self, params: &SolverParams) -> SolverParams {
        let mut out = params.clone();
        out.mu = params.mu + self.mu_reg;
        out.l1 = params.l1 + self.mu_reg;
        out.gamma_bar = out.theory_gamma_bar();
        out
    }
}

impl SaddleOracle for RegularizedOracle<'_> {
    fn dims(&self) -> (usize, usize) {
        self.base.dims()
    }

    fn value(&self, z: &PointZ) -> Result<f64> {
        let diff = z.sub(&self.anchor)?;
        let nx = diff.norm_x();
        let ny = diff.norm_y();
        Ok(self.base.value(z)? + 0.5 * self.mu_reg * (nx * nx - ny * ny))
    }

    fn grad(&self, z: &PointZ) -> Result<PointZ> {
        let diff = z.sub(&self.anchor)?;
        let g = self.base.grad(z)?;
        PointZ::new(
            g.x().iter().zip(diff.x()).map(|(a, d)| a + self.mu_reg * d).collect(),
            g.y().iter().zip(diff.y()).map(|(a, d)| a - self.mu_reg * d).collect(),
        )
    }

    fn jacobian_f(&self, z: &PointZ) -> Result<DMatrix<f64>> {
        let j = self.base.jacobian_f(z)?;
        let dim = j.nrows();
        Ok(j + DMatrix::identity(dim, dim) * self.mu_reg)
    }

    fn apply_third(&self, z: &PointZ, d: &PointZ) -> Option<Result<DMatrix<f64>>> {
        self.base.apply_third(z, d)
    }
}

#[derive(Debug, Clone)]
pub struct TensorStepOutcome {
    pub point: PointZ,
    pub displacement: PointZ,
    pub residual: f64,
    /// Left side of the gradient-norm/decrease inequality.
    pub lemma_lhs: f64,
    /// `g(x, y_new) - g(x_new, y)`.
    pub lemma_rhs: f64,
}

/// `|grad g(z_new)|^{(p+1)/p} M^{(3p+1)/(2p)} / (2^{(2p^2+p+1)/(2p)} p (p+1)!)`
pub fn tensor_lemma_lhs(grad_norm: f64, p: u32, m_coef: f64) -> f64 {
    let pf = p as f64;
    grad_norm.powf((pf + 1.0) / pf) * m_coef.powf((3.0 * pf + 1.0) / (2.0 * pf))
        / (2f64.powf((2.0 * pf * pf + pf + 1.0) / (2.0 * pf)) * pf * factorial(p + 1))
}

/// Min-max point of the cubic-regularized second-order model of `g` at `z`
/// with coefficient `M`: the cubic solver with `gamma = M sqrt(2) / 2`.
pub fn tensor_step(
    oracle: &dyn SaddleOracle,
    z: &PointZ,
    p: u32,
    m_coef: f64,
    tol: f64,
    counts: &mut OracleCounts,
) -> Result<TensorStepOutcome> {
    if p != 2 {
        return Err(SolverError::UnsupportedOrder(p));
    }
    if !(m_coef >= 0.0 && m_coef.is_finite()) {
        return Err(SolverError::InvalidParams(format!("M must be nonnegative, got {m_coef}")));
    }
    let sub = CubicSubproblem {
        z_k: z.clone(),
        gamma_k: m_coef * std::f64::consts::SQRT_2 / 2.0,
        f_k: operator_f(oracle, z, counts)?,
        jac_k: jacobian(oracle, z, counts)?,
    };
    let sol = solve_cubic_subproblem(&sub, tol)?;
    let point = z.add(&sol.d)?;
    let grad_new = operator_f(oracle, &point, counts)?;
    let mixed_upper = PointZ::new(z.x().to_vec(), point.y().to_vec())?;
    let mixed_lower = PointZ::new(point.x().to_vec(), z.y().to_vec())?;
    let lemma_rhs = crate::oracle::value(oracle, &mixed_upper, counts)? - crate::oracle::value(oracle, &mixed_lower, counts)?;
    Ok(TensorStepOutcome {
        lemma_lhs: tensor_lemma_lhs(norm_z(&grad_new), p, m_coef),
        lemma_rhs,
        point,
        displacement: sol.d,
        residual: sol.residual,
    })
}

/// `eps' = M^{(3p+1)/(2p)} eps^{(p+1)/p} / (2^{(2p^2+3p+3)/(2p)} p (p+1)!)`
pub fn gradnorm_eps_prime(m_coef: f64, eps_grad: f64, p: u32) -> f64 {
    let pf = p as f64;
    m_coef.powf((3.0 * pf + 1.0) / (2.0 * pf)) * eps_grad.powf((pf + 1.0) / pf)
        / (2f64.powf((2.0 * pf * pf + 3.0 * pf + 3.0) / (2.0 * pf)) * pf * factorial(p + 1))
}

#[derive(Debug, Clone)]
pub struct GradnormOutcome {
    pub point: PointZ,
    pub mu_reg: f64,
    pub m_coef: f64,
    pub eps_prime: f64,
    pub eps_merit: f64,
    pub regularized_params: SolverParams,
    pub restarts: RestartOutcome,
    pub crn: CrnOutcome,
    pub tensor: TensorStepOutcome,
    /// `|grad g(point)|` for the original `g`.
    pub grad_norm: f64,
}

/// Drives `|grad g|` below `eps_grad` through the problem regularized
/// towards `z1` with `mu_reg = eps_grad / (4R)`.
pub fn gradnorm_solve(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    eps_grad: f64,
    r: f64,
    params: &SolverParams,
    trace: &mut TraceRecorder,
) -> Result<GradnormOutcome> {
    params.validate()?;
    if params.p != 2 {
        return Err(SolverError::UnsupportedOrder(params.p));
    }
    if !(eps_grad > 0.0 && r > 0.0) {
        return Err(SolverError::InvalidParams("eps_grad and R must be positive".into()));
    }
    let mu_reg = eps_grad / (4.0 * r);
    let reg = RegularizedOracle::new(oracle, z1.clone(), mu_reg)?;
    let mut rparams = reg.adjusted_params(params);
    rparams.r0 = r;
    let m_coef = std::f64::consts::SQRT_2 * params.p as f64 * params.lp;
    let eps_prime = gradnorm_eps_prime(m_coef, eps_grad, params.p);
    let eps_merit = merit_target_for_gap(&rparams, eps_prime);

    let schedule = RestartSchedule::with_count(&rparams, hybrid_restart_count(&rparams))?;
    let restarts = run_schedule(&reg, z1, &rparams, schedule, trace)?;
    let crn = crn_run(&reg, &restarts.point, eps_merit, &rparams, 0, trace)?;

    trace.check_budget()?;
    let tensor = tensor_step(&reg, &crn.point, params.p, m_coef, params.inner_tol, trace.calls_mut())?;
    let grad = operator_f(oracle, &tensor.point, trace.calls_mut())?;
    trace.record(Phase::TensorStep, 0, 0, m_coef * std::f64::consts::SQRT_2 / 2.0, &grad, &tensor.point)?;
    Ok(GradnormOutcome {
        point: tensor.point.clone(),
        mu_reg,
        m_coef,
        eps_prime,
        eps_merit,
        regularized_params: rparams,
        restarts,
        crn,
        tensor,
        grad_norm: norm_z(&grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::toy_quadratic;

    #[test]
    fn restart_count_example() {
        let params = SolverParams { mu: 1.0, r0: 1.0, eps_gap: 2f64.powi(-10), lp: 1.0, ..Default::default() };
        assert_eq!(RestartSchedule::for_gap(&params).unwrap().n, 5);
    }

    #[test]
    fn budget_example() {
        let params = SolverParams { mu: 1.0, l2: 1.0, lp: 1.0, p: 2, r0: 1.0, ..Default::default() };
        let s = RestartSchedule::with_count(&params, 3).unwrap();
        assert_eq!(s.budgets[0], 16);
        assert_eq!(s.radii, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn hybrid_count_examples() {
        let params = SolverParams { mu: 1.0, l1: 3.0, l2: 2.0, r0: 1.0, ..Default::default() };
        assert_eq!(hybrid_restart_count(&params), 4);
        let quad = SolverParams { l2: 0.0, ..params };
        assert_eq!(hybrid_restart_count(&quad), 1);
    }

    #[test]
    fn snapped_ceil_cases() {
        assert_eq!(snapped_ceil(64f64.powf(2.0 / 3.0)), 16);
        assert_eq!(snapped_ceil(2.5), 3);
        assert_eq!(snapped_ceil(0.2), 1);
    }

    #[test]
    fn gradnorm_constants() {
        assert!((0.04f64 / 4.0 - 0.01).abs() < 1e-18);
        let m: f64 = 1.3;
        let e: f64 = 1e-3;
        let expect = m.powf(7.0 / 4.0) * e.powf(1.5) / (2f64.powf(17.0 / 4.0) * 12.0);
        assert!((gradnorm_eps_prime(m, e, 2) - expect).abs() <= 1e-15 * expect);
    }

    #[test]
    fn regularized_operator_shift() {
        let q = toy_quadratic();
        let anchor = PointZ::new(vec![0.5], vec![-1.0]).unwrap();
        let reg = RegularizedOracle::new(&q, anchor.clone(), 0.3).unwrap();
        let z = PointZ::new(vec![2.0], vec![1.0]).unwrap();
        let mut c = OracleCounts::default();
        let f_reg = operator_f(&reg, &z, &mut c).unwrap();
        let expect = operator_f(&q, &z, &mut c).unwrap().axpy(0.3, &z.sub(&anchor).unwrap()).unwrap();
        assert_eq!(f_reg, expect);
    }

    #[test]
    fn tensor_step_at_solution_stays() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        let z = PointZ::zeros(1, 1);
        let out = tensor_step(&q, &z, 2, 1.0, 1e-12, &mut c).unwrap();
        assert_eq!(out.point, z);
    }

    #[test]
    fn restarted_fixed_point() {
        let q = toy_quadratic();
        let z = PointZ::zeros(1, 1);
        let params = SolverParams { l1: 2f64.sqrt(), lp: 1.0, ..Default::default() };
        let mut rec = TraceRecorder::default();
        let out = restarted_homp(&q, &z, &params, &mut rec).unwrap();
        assert_eq!(out.point, z);
    }
}
