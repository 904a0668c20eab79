//! High-order Mirror-Prox in the unconstrained Euclidean setting: implicit
//! Taylor-model step, step-size bracket search, extragradient update and the
//! weighted-average output.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, SolverError};
use crate::linalg::{solve, spectral_norm};
use crate::oracle::{operator_f, SaddleOracle, TaylorExtension, TaylorModelF};
use crate::params::{FirstOrderStep, SolverParams};
use crate::point::{norm_z, PointZ};
use crate::trace::{OracleCounts, Phase, TraceRecorder};

/// Relative slack on both ends of the step-size bracket.
pub const BRACKET_SLACK: f64 = 1e-9;
/// Probe cap of the step-size search.
pub const MAX_GAMMA_PROBES: usize = 60;

pub fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

/// Solves `gamma * Phi(z_hat) + (z_hat - z_t) = 0` for orders `p >= 3`,
/// where `Phi` is the degree `p - 1` Taylor model of `F` at `z_t`.
pub trait ImplicitStepSolver: Send + Sync {
    /// Terms of degree two and higher used to build the model.
    fn extension(&self) -> Arc<dyn TaylorExtension>;

    fn solve(&self, model: &TaylorModelF, gamma: f64) -> Result<PointZ>;
}

/// `[p!/(32 L_p |d|^{p-1}), p!/(16 L_p |d|^{p-1})]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBracket {
    pub lower: f64,
    pub upper: f64,
}

impl GammaBracket {
    pub fn new(p: u32, lp: f64, d_norm: f64) -> GammaBracket {
        let scale = lp * d_norm.powi(p as i32 - 1);
        let pf = factorial(p);
        GammaBracket {
            lower: pf / (32.0 * scale),
            upper: pf / (16.0 * scale),
        }
    }

    pub fn contains(&self, gamma: f64) -> bool {
        gamma >= self.lower * (1.0 - BRACKET_SLACK) && gamma <= self.upper * (1.0 + BRACKET_SLACK)
    }
}

/// The Taylor model at `z_t` together with what the implicit step needs.
pub struct ImplicitStepContext<'a> {
    model: TaylorModelF,
    p: u32,
    inner_tol: f64,
    jac_norm: f64,
    solver: Option<&'a dyn ImplicitStepSolver>,
}

impl<'a> ImplicitStepContext<'a> {
    /// Costs one `F` call, plus one Jacobian call for `p >= 2`.
    pub fn new(
        oracle: &dyn SaddleOracle,
        z_t: &PointZ,
        p: u32,
        inner_tol: f64,
        solver: Option<&'a dyn ImplicitStepSolver>,
        counts: &mut OracleCounts,
    ) -> Result<Self> {
        if p == 0 {
            return Err(SolverError::UnsupportedOrder(0));
        }
        if p >= 3 && solver.is_none() {
            return Err(SolverError::UnsupportedOrder(p));
        }
        let extension = if p >= 3 { solver.map(|s| s.extension()) } else { None };
        let model = TaylorModelF::build(oracle, z_t, p - 1, extension, counts)?;
        let jac_norm = model.jacobian().map(spectral_norm).unwrap_or(0.0);
        Ok(ImplicitStepContext {
            model,
            p,
            inner_tol,
            jac_norm,
            solver,
        })
    }

    pub fn z_t(&self) -> &PointZ {
        self.model.center()
    }

    pub fn f_t(&self) -> &PointZ {
        self.model.f_center()
    }

    pub fn model(&self) -> &TaylorModelF {
        &self.model
    }

    /// The implicit point `z_hat(gamma)`.
    pub fn step(&self, gamma: f64) -> Result<PointZ> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SolverError::InvalidParams(format!("step size must be positive, got {gamma}")));
        }
        let z_t = self.model.center();
        let f_t = self.model.f_center();
        let z_hat = match self.p {
            1 => z_t.axpy(-gamma, f_t)?,
            2 => {
                let j = self.model.jacobian().expect("degree-1 model has a Jacobian");
                let dim = z_t.dim();
                let lhs = DMatrix::identity(dim, dim) + j * gamma;
                let rhs = f_t.to_dvector() * (-gamma);
                let d = solve(&lhs, &rhs, "implicit step system")?;
                z_t.add(&PointZ::from_dvector(&d, z_t.n())?)?
            }
            _ => self
                .solver
                .ok_or(SolverError::UnsupportedOrder(self.p))?
                .solve(&self.model, gamma)?,
        };
        let residual = self.residual(&z_hat, gamma)?;
        // The direct solve is backward stable, so its error scales with the
        // conditioning of `I + gamma J`.
        let allowed = self.inner_tol * (1.0 + norm_z(f_t)) * (1.0 + gamma * self.jac_norm);
        if residual > allowed || !z_hat.is_finite() {
            return Err(SolverError::InnerSolveFailed(format!(
                "implicit step residual {residual:.3e} exceeds {allowed:.3e}"
            )));
        }
        Ok(z_hat)
    }

    /// `|gamma Phi(z_hat) + z_hat - z_t|`
    pub fn residual(&self, z_hat: &PointZ, gamma: f64) -> Result<f64> {
        let phi = self.model.eval(z_hat)?;
        Ok(norm_z(&phi.scale(gamma)?.add(&z_hat.sub(self.model.center())?)?))
    }
}

/// One implicit step from scratch.
pub fn implicit_step(
    oracle: &dyn SaddleOracle,
    z_t: &PointZ,
    gamma: f64,
    p: u32,
    inner_tol: f64,
    counts: &mut OracleCounts,
) -> Result<PointZ> {
    ImplicitStepContext::new(oracle, z_t, p, inner_tol, None, counts)?.step(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    /// `p = 1`: the bracket does not depend on the displacement.
    ClosedForm,
    /// The bracket condition holds.
    Bracketed,
    /// `|d| <= 1e-13 (1 + |z_t|)` at `gamma_max`.
    Degenerate,
    /// At `gamma_max` the displacement is above the floor yet still too small
    /// to reach the bracket; the step is taken with `gamma_max`.
    Capped,
}

#[derive(Debug, Clone)]
pub struct GammaChoice {
    pub gamma: f64,
    pub z_hat: PointZ,
    pub d_norm: f64,
    pub kind: GammaKind,
    pub probes: usize,
    /// A larger probe produced a shorter displacement.
    pub monotonicity_violated: bool,
}

pub fn stationarity_floor(z_t: &PointZ) -> f64 {
    1e-13 * (1.0 + norm_z(z_t))
}

/// Finds `gamma` with `p!/32 <= gamma L_p |z_hat - z_t|^{p-1} <= p!/16`.
///
/// `gamma_start` warm-starts the search; `None` picks a scale from `|F(z_t)|`.
pub fn find_gamma(ctx: &ImplicitStepContext<'_>, params: &SolverParams, gamma_start: Option<f64>) -> Result<GammaChoice> {
    let p = ctx.p;
    let lp = params.lp;
    if !(lp > 0.0 && lp.is_finite()) {
        return Err(SolverError::InvalidParams(format!("lp must be positive, got {lp}")));
    }
    let z_t = ctx.z_t();
    let pf = factorial(p);
    if p == 1 {
        let gamma = match params.first_order_step {
            FirstOrderStep::Upper => pf / (16.0 * lp),
            FirstOrderStep::Midpoint => 3.0 * pf / (64.0 * lp),
        };
        let z_hat = ctx.step(gamma)?;
        let d_norm = norm_z(&z_hat.sub(z_t)?);
        return Ok(GammaChoice {
            gamma,
            z_hat,
            d_norm,
            kind: GammaKind::ClosedForm,
            probes: 1,
            monotonicity_violated: false,
        });
    }

    let (lo, hi) = (pf / 32.0, pf / 16.0);
    let (t_lo, t_hi) = (lo * (1.0 - BRACKET_SLACK), hi * (1.0 + BRACKET_SLACK));
    let mid = 0.75 * hi;
    let gamma_max = params.gamma_max;
    let floor = stationarity_floor(z_t);
    let f_norm = norm_z(ctx.f_t());

    if f_norm == 0.0 {
        return Ok(GammaChoice {
            gamma: gamma_max,
            z_hat: z_t.clone(),
            d_norm: 0.0,
            kind: GammaKind::Degenerate,
            probes: 0,
            monotonicity_violated: false,
        });
    }

    let mut probes: Vec<(f64, f64)> = Vec::new();
    let mut probe = |gamma: f64| -> Result<(PointZ, f64, f64)> {
        if probes.len() >= MAX_GAMMA_PROBES {
            return Err(SolverError::InnerSolveFailed(format!(
                "step-size search exceeded {MAX_GAMMA_PROBES} probes"
            )));
        }
        let z_hat = ctx.step(gamma)?;
        let d_norm = norm_z(&z_hat.sub(z_t)?);
        probes.push((gamma, d_norm));
        Ok((z_hat, d_norm, gamma * lp * d_norm.powi(p as i32 - 1)))
    };

    let monotone = |probes: &[(f64, f64)]| {
        let mut sorted = probes.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        sorted
            .windows(2)
            .all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-10) - 1e-300)
    };

    // For small gamma, |d| ~ gamma |F|, so s ~ gamma^p L_p |F|^{p-1}.
    let guess = (mid / (lp * f_norm.powi(p as i32 - 1))).powf(1.0 / p as f64);
    let mut gamma = gamma_start.unwrap_or(guess).clamp(f64::MIN_POSITIVE, gamma_max);

    let (mut z_hat, mut d_norm, mut s) = probe(gamma)?;
    let finish = |gamma: f64, z_hat: PointZ, d_norm: f64, kind: GammaKind, probes: &[(f64, f64)]| GammaChoice {
        gamma,
        z_hat,
        d_norm,
        kind,
        probes: probes.len(),
        monotonicity_violated: !monotone(probes),
    };

    // Expand to a bracket [a, b] with s(a) < lo and s(b) > hi. Since
    // k s(g) <= s(k g) <= k^p s(g) for k >= 1, the jump sizes below never
    // skip past the target more than one doubling would.
    let (mut a, mut b);
    if s >= t_lo && s <= t_hi {
        return Ok(finish(gamma, z_hat, d_norm, GammaKind::Bracketed, &probes));
    } else if s < t_lo {
        a = gamma;
        loop {
            if gamma >= gamma_max {
                let kind = if d_norm <= floor {
                    GammaKind::Degenerate
                } else {
                    GammaKind::Capped
                };
                return Ok(finish(gamma, z_hat, d_norm, kind, &probes));
            }
            let k = if s > 0.0 { (mid / s).powf(1.0 / p as f64).max(2.0) } else { 2.0 };
            gamma = (gamma * k).min(gamma_max);
            (z_hat, d_norm, s) = probe(gamma)?;
            if s >= t_lo && s <= t_hi {
                return Ok(finish(gamma, z_hat, d_norm, GammaKind::Bracketed, &probes));
            }
            if s > t_hi {
                b = gamma;
                break;
            }
            a = gamma;
        }
    } else {
        b = gamma;
        loop {
            let k = (s / mid).max(2.0);
            gamma /= k;
            (z_hat, d_norm, s) = probe(gamma)?;
            if s >= t_lo && s <= t_hi {
                return Ok(finish(gamma, z_hat, d_norm, GammaKind::Bracketed, &probes));
            }
            if s < t_lo {
                a = gamma;
                break;
            }
            b = gamma;
        }
    }

    loop {
        gamma = (a * b).sqrt();
        (z_hat, d_norm, s) = probe(gamma)?;
        if s >= t_lo && s <= t_hi {
            return Ok(finish(gamma, z_hat, d_norm, GammaKind::Bracketed, &probes));
        }
        if s < t_lo {
            a = gamma;
        } else {
            b = gamma;
        }
    }
}

/// Running state of one inner run.
#[derive(Debug, Clone)]
pub struct HompState {
    pub z_t: PointZ,
    pub gamma_last: Option<f64>,
    weighted_sum: PointZ,
    pub gamma_sum: f64,
}

impl HompState {
    pub fn new(z1: &PointZ) -> HompState {
        HompState {
            z_t: z1.clone(),
            gamma_last: None,
            weighted_sum: PointZ::zeros(z1.n(), z1.m()),
            gamma_sum: 0.0,
        }
    }

    fn accumulate(&mut self, gamma: f64, z_hat: &PointZ) -> Result<()> {
        self.weighted_sum = self.weighted_sum.axpy(gamma, z_hat)?;
        self.gamma_sum += gamma;
        Ok(())
    }

    /// `(1/Gamma_T) sum gamma_t z_hat_t`
    pub fn average(&self) -> Result<PointZ> {
        if self.gamma_sum <= 0.0 {
            return Err(SolverError::EmptyInput("no iterations accumulated"));
        }
        self.weighted_sum.scale(1.0 / self.gamma_sum)
    }
}

/// Diagnostics of one inner run.
#[derive(Debug, Clone)]
pub struct HompOutcome {
    pub average: PointZ,
    pub last_anchor: PointZ,
    pub gamma_sum: f64,
    pub gammas: Vec<f64>,
    pub kinds: Vec<GammaKind>,
    /// `(1/Gamma_t) sum gamma_s <F(z_hat_s), z_hat_s - z_ref>` after each `t`.
    pub residual_history: Vec<f64>,
    /// Same with `F(z_hat_s) - F(z_ref)` in place of `F(z_hat_s)`.
    pub contraction_history: Vec<f64>,
    pub monotonicity_violations: usize,
}

impl HompOutcome {
    pub fn capped_iterations(&self) -> usize {
        self.kinds.iter().filter(|k| **k == GammaKind::Capped).count()
    }
}

/// Runs `iterations` steps from `z1` and returns the weighted average.
///
/// `restart_index` labels the trace records. When the recorder carries a
/// reference point, the residual histories are accumulated against it.
pub fn homp_run(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    params: &SolverParams,
    iterations: usize,
    restart_index: usize,
    trace: &mut TraceRecorder,
) -> Result<HompOutcome> {
    homp_run_with_solver(oracle, z1, params, iterations, restart_index, None, trace)
}

pub fn homp_run_with_solver(
    oracle: &dyn SaddleOracle,
    z1: &PointZ,
    params: &SolverParams,
    iterations: usize,
    restart_index: usize,
    solver: Option<&dyn ImplicitStepSolver>,
    trace: &mut TraceRecorder,
) -> Result<HompOutcome> {
    if iterations == 0 {
        return Err(SolverError::InvalidParams("iteration count must be at least 1".into()));
    }
    let reference = trace.reference().cloned();
    // Diagnostics only: not charged to the run's oracle budget.
    let f_ref = match &reference {
        Some(r) => Some(operator_f(oracle, r, &mut OracleCounts::default())?),
        None => None,
    };

    let mut state = HompState::new(z1);
    let mut gammas = Vec::with_capacity(iterations);
    let mut kinds = Vec::with_capacity(iterations);
    let mut residual_history = Vec::new();
    let mut contraction_history = Vec::new();
    let (mut residual_acc, mut contraction_acc) = (0.0, 0.0);
    let mut violations = 0;

    for t in 0..iterations {
        trace.check_budget()?;
        let ctx = ImplicitStepContext::new(oracle, &state.z_t, params.p, params.inner_tol, solver, trace.calls_mut())?;
        let choice = find_gamma(&ctx, params, state.gamma_last)?;
        if choice.kind == GammaKind::Bracketed {
            let bracket = GammaBracket::new(params.p, params.lp, choice.d_norm);
            if !bracket.contains(choice.gamma) {
                return Err(SolverError::InnerSolveFailed(format!(
                    "accepted step size {} outside [{}, {}]",
                    choice.gamma, bracket.lower, bracket.upper
                )));
            }
        }
        if choice.monotonicity_violated {
            violations += 1;
            log::warn!("displacement not monotone in step size at iteration {t}");
        }
        let f_hat = operator_f(oracle, &choice.z_hat, trace.calls_mut())?;
        state.accumulate(choice.gamma, &choice.z_hat)?;
        if let (Some(r), Some(fr)) = (&reference, &f_ref) {
            let diff = choice.z_hat.sub(r)?;
            residual_acc += choice.gamma * f_hat.dot(&diff)?;
            contraction_acc += choice.gamma * f_hat.sub(fr)?.dot(&diff)?;
            residual_history.push(residual_acc / state.gamma_sum);
            contraction_history.push(contraction_acc / state.gamma_sum);
        }
        state.z_t = state.z_t.axpy(-choice.gamma, &f_hat)?;
        state.gamma_last = Some(choice.gamma);
        trace.record(Phase::Homp, restart_index, t, choice.gamma, &f_hat, &choice.z_hat)?;
        gammas.push(choice.gamma);
        kinds.push(choice.kind);
    }

    Ok(HompOutcome {
        average: state.average()?,
        last_anchor: state.z_t,
        gamma_sum: state.gamma_sum,
        gammas,
        kinds,
        residual_history,
        contraction_history,
        monotonicity_violations: violations,
    })
}

/// Right-hand side of the averaged-residual bound,
/// `(16 L_p / p!) (D(z*, z1) / T)^{(p+1)/2}`.
pub fn residual_bound(p: u32, lp: f64, bregman_start: f64, iterations: usize) -> f64 {
    16.0 * lp / factorial(p) * (bregman_start / iterations as f64).powf((p as f64 + 1.0) / 2.0)
}
