//! Concrete strongly-convex-strongly-concave test problems, their declared
//! constants, reference solutions and JSON serialization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::linalg::{self, from_rows, min_sym_eigenvalue, random_spd, random_with_spectral_norm, spectral_norm, to_rows};
use crate::oracle::{newton_solve_operator, sample_lipschitz_jacobian, GradientFault, SaddleOracle, SampleBox};
use crate::params::SolverParams;
use crate::point::{distance, norm_z, PointZ};

/// Operational `L_p` for affine operators run through the `p = 2` path.
pub const DEFAULT_OPERATIONAL_LP: f64 = 1e-3;

fn split(z: &PointZ) -> (DVector<f64>, DVector<f64>) {
    (DVector::from_column_slice(z.x()), DVector::from_column_slice(z.y()))
}

fn join(x: DVector<f64>, y: DVector<f64>) -> Result<PointZ> {
    PointZ::new(x.as_slice().to_vec(), y.as_slice().to_vec())
}

/// `g(x, y) = x'Ax/2 + x'By - y'Cy/2 + a'x - c'y`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSaddle {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    lin_a: DVector<f64>,
    lin_c: DVector<f64>,
}

impl QuadraticSaddle {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        lin_a: DVector<f64>,
        lin_c: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = c.nrows();
        if n == 0 || m == 0 {
            return Err(SolverError::EmptyInput("quadratic blocks must be non-empty"));
        }
        let shapes_ok = a.ncols() == n
            && c.ncols() == m
            && b.nrows() == n
            && b.ncols() == m
            && lin_a.len() == n
            && lin_c.len() == m;
        if !shapes_ok {
            return Err(SolverError::InvalidParams("quadratic blocks have inconsistent shapes".into()));
        }
        let asym = (&a - a.transpose()).amax();
        let csym = (&c - c.transpose()).amax();
        if asym > 1e-12 * (1.0 + a.amax()) || csym > 1e-12 * (1.0 + c.amax()) {
            return Err(SolverError::InvalidParams("A and C must be symmetric".into()));
        }
        Ok(QuadraticSaddle { a, b, c, lin_a, lin_c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn lin_a(&self) -> &DVector<f64> {
        &self.lin_a
    }
    pub fn lin_c(&self) -> &DVector<f64> {
        &self.lin_c
    }

    /// `[[A, B], [-B', C]]`
    pub fn stacked_jacobian(&self) -> DMatrix<f64> {
        let (n, m) = (self.a.nrows(), self.c.nrows());
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&self.a);
        j.view_mut((0, n), (n, m)).copy_from(&self.b);
        j.view_mut((n, 0), (m, n)).copy_from(&(-self.b.transpose()));
        j.view_mut((n, n), (m, m)).copy_from(&self.c);
        j
    }

    /// `min(lambda_min(A), lambda_min(C))`, the exact strong-monotonicity modulus.
    pub fn strong_convexity_modulus(&self) -> f64 {
        min_sym_eigenvalue(&self.a).min(min_sym_eigenvalue(&self.c))
    }

    pub fn lipschitz_f(&self) -> f64 {
        spectral_norm(&self.stacked_jacobian())
    }

    /// Block residuals `r_x = Ax + By + a` and `r_y = B'x - Cy - c`.
    fn residuals(&self, z: &PointZ) -> (DVector<f64>, DVector<f64>) {
        let (x, y) = split(z);
        let rx = &self.a * &x + &self.b * &y + &self.lin_a;
        let ry = self.b.transpose() * &x - &self.c * &y - &self.lin_c;
        (rx, ry)
    }

    /// Exact duality gap. With closed-form best responses the gap reduces to
    /// `r_x' A^{-1} r_x / 2 + r_y' C^{-1} r_y / 2`, which avoids the
    /// cancellation of subtracting two objective values.
    pub fn duality_gap(&self, z: &PointZ) -> Result<f64> {
        let (rx, ry) = self.residuals(z);
        let ax = self
            .a
            .clone()
            .cholesky()
            .ok_or(SolverError::Singular("A is not positive definite"))?
            .solve(&rx);
        let cy = self
            .c
            .clone()
            .cholesky()
            .ok_or(SolverError::Singular("C is not positive definite"))?
            .solve(&ry);
        Ok(0.5 * rx.dot(&ax) + 0.5 * ry.dot(&cy))
    }

    /// Best responses `argmax_y g(x, .)` and `argmin_x g(., y)`.
    pub fn best_responses(&self, z: &PointZ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (x, y) = split(z);
        let y_best = linalg::solve(&self.c, &(self.b.transpose() * &x - &self.lin_c), "C")?;
        let x_best = linalg::solve(&self.a, &(-(&self.b * &y) - &self.lin_a), "A")?;
        Ok((y_best, x_best))
    }
}

impl SaddleOracle for QuadraticSaddle {
    fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.c.nrows())
    }

    fn value(&self, z: &PointZ) -> Result<f64> {
        let (x, y) = split(z);
        let v = 0.5 * x.dot(&(&self.a * &x)) + x.dot(&(&self.b * &y)) - 0.5 * y.dot(&(&self.c * &y))
            + self.lin_a.dot(&x)
            - self.lin_c.dot(&y);
        Ok(v)
    }

    fn grad(&self, z: &PointZ) -> Result<PointZ> {
        let (rx, ry) = self.residuals(z);
        join(rx, ry)
    }

    fn jacobian_f(&self, _z: &PointZ) -> Result<DMatrix<f64>> {
        Ok(self.stacked_jacobian())
    }

    fn apply_third(&self, z: &PointZ, _d: &PointZ) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(z.dim(), z.dim())))
    }
}

/// The solution of `F(z) = 0`, i.e. `[[A, B], [-B', C]] z = (-a, -c)`.
pub fn quadratic_exact_solution(q: &QuadraticSaddle) -> Result<PointZ> {
    let n = q.a.nrows();
    let mut rhs = DVector::zeros(n + q.c.nrows());
    rhs.rows_mut(0, n).copy_from(&(-&q.lin_a));
    rhs.rows_mut(n, q.c.nrows()).copy_from(&(-&q.lin_c));
    let sol = linalg::solve(&q.stacked_jacobian(), &rhs, "quadratic saddle system")?;
    PointZ::from_dvector(&sol, n)
}

/// `g = (mu/2)|x|^2 + tau lse(x) + x'By - (mu/2)|y|^2 - tau lse(y)`
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothCoupledSaddle {
    tau: f64,
    b: DMatrix<f64>,
    mu: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> DVector<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = DVector::from_iterator(v.len(), v.iter().map(|t| (t - max).exp()));
    let s = e.sum();
    e / s
}

fn softmax_hessian(s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(s) - s * s.transpose()
}

/// Directional derivative of the softmax Hessian along `h`.
fn softmax_hessian_derivative(s: &DVector<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    let u = s.component_mul(h) - s * s.dot(h);
    DMatrix::from_diagonal(&u) - &u * s.transpose() - s * u.transpose()
}

impl SmoothCoupledSaddle {
    pub fn new(tau: f64, b: DMatrix<f64>, mu: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
            return Err(SolverError::InvalidParams("tau must be >= 0 and mu > 0".into()));
        }
        if b.nrows() == 0 || b.ncols() == 0 {
            return Err(SolverError::EmptyInput("coupling matrix must be non-empty"));
        }
        Ok(SmoothCoupledSaddle { tau, b, mu })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `mu + tau + |B|_2`; the log-sum-exp Hessian has norm at most one.
    pub fn declared_l1(&self) -> f64 {
        self.mu + self.tau + spectral_norm(&self.b)
    }
}

impl SaddleOracle for SmoothCoupledSaddle {
    fn dims(&self) -> (usize, usize) {
        (self.b.nrows(), self.b.ncols())
    }

    fn value(&self, z: &PointZ) -> Result<f64> {
        let (x, y) = split(z);
        Ok(0.5 * self.mu * x.norm_squared() + self.tau * log_sum_exp(z.x()) + x.dot(&(&self.b * &y))
            - 0.5 * self.mu * y.norm_squared()
            - self.tau * log_sum_exp(z.y()))
    }

    fn grad(&self, z: &PointZ) -> Result<PointZ> {
        let (x, y) = split(z);
        let gx = &x * self.mu + softmax(z.x()) * self.tau + &self.b * &y;
        let gy = self.b.transpose() * &x - &y * self.mu - softmax(z.y()) * self.tau;
        join(gx, gy)
    }

    fn jacobian_f(&self, z: &PointZ) -> Result<DMatrix<f64>> {
        let (n, m) = self.dims();
        let hx = DMatrix::identity(n, n) * self.mu + softmax_hessian(&softmax(z.x())) * self.tau;
        let hy = DMatrix::identity(m, m) * self.mu + softmax_hessian(&softmax(z.y())) * self.tau;
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&hx);
        j.view_mut((0, n), (n, m)).copy_from(&self.b);
        j.view_mut((n, 0), (m, n)).copy_from(&(-self.b.transpose()));
        j.view_mut((n, n), (m, m)).copy_from(&hy);
        Ok(j)
    }

    fn apply_third(&self, z: &PointZ, d: &PointZ) -> Option<Result<DMatrix<f64>>> {
        let (n, m) = self.dims();
        let (dx, dy) = split(d);
        let tx = softmax_hessian_derivative(&softmax(z.x()), &dx) * self.tau;
        let ty = softmax_hessian_derivative(&softmax(z.y()), &dy) * self.tau;
        let mut t = DMatrix::zeros(n + m, n + m);
        t.view_mut((0, 0), (n, n)).copy_from(&tx);
        t.view_mut((n, n), (m, m)).copy_from(&ty);
        Some(Ok(t))
    }
}

/// Computes `z*` by damped Newton on `F(z) = 0`, polished to rounding level.
pub fn smooth_reference_solution(s: &SmoothCoupledSaddle) -> Result<PointZ> {
    let (n, m) = s.dims();
    newton_solve_operator(s, &PointZ::zeros(n, m), 1e-12, 200)
}

/// Certified Lipschitz constant of the Jacobian of `F`: the largest observed
/// difference quotient (random pairs plus exact directional derivatives along
/// random and two-coordinate directions), inflated by 1.5.
pub fn certify_l2(s: &SmoothCoupledSaddle, seed: u64) -> Result<f64> {
    let (n, m) = s.dims();
    if s.tau == 0.0 {
        return Ok(0.0);
    }
    let region = SampleBox {
        center: PointZ::zeros(n, m),
        half_width: 3.0,
    };
    let mut worst = sample_lipschitz_jacobian(s, &region, 200, seed)?.worst;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dim = n + m;
    for k in 0..400 {
        let z = region.sample(&mut rng);
        let mut dir = vec![0.0; dim];
        if k % 2 == 0 {
            dir.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        } else {
            let i = rng.random_range(0..dim);
            let j = rng.random_range(0..dim);
            let w: f64 = rng.random_range(-1.0..1.0);
            dir[i] += 1.0;
            dir[j] += w;
        }
        let d = PointZ::from_stacked(&dir, n)?;
        let dn = norm_z(&d);
        if dn == 0.0 {
            continue;
        }
        if let Some(t) = s.apply_third(&z, &d) {
            worst = worst.max(spectral_norm(&t?) / dn);
        }
    }
    Ok(1.5 * worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    SmoothCoupled,
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "quadratic" => Ok(Family::Quadratic),
            "smooth_coupled" | "smooth" => Ok(Family::SmoothCoupled),
            other => Err(format!("unknown family '{other}' (expected quadratic or smooth_coupled)")),
        }
    }
}

fn default_tau() -> f64 {
    1.0
}
fn default_spectrum_ratio() -> f64 {
    4.0
}

/// Generator inputs. `tau` only affects the smooth family, `spectrum_ratio`
/// (eigenvalues of `A` and `C` in `[mu, ratio * mu]`) only the quadratic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub family: Family,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub mu: f64,
    pub coupling_scale: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_spectrum_ratio")]
    pub spectrum_ratio: f64,
}

impl InstanceSpec {
    pub fn new(family: Family, seed: u64, n: usize, m: usize, mu: f64, coupling_scale: f64) -> Self {
        InstanceSpec {
            family,
            seed,
            n,
            m,
            mu,
            coupling_scale,
            tau: default_tau(),
            spectrum_ratio: default_spectrum_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Quadratic(QuadraticSaddle),
    SmoothCoupled(SmoothCoupledSaddle),
}

impl Problem {
    fn as_oracle(&self) -> Arc<dyn SaddleOracle> {
        match self {
            Problem::Quadratic(q) => Arc::new(q.clone()),
            Problem::SmoothCoupled(s) => Arc::new(s.clone()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Problem::Quadratic(_) => Family::Quadratic,
            Problem::SmoothCoupled(_) => Family::SmoothCoupled,
        }
    }
}

/// Injected derivative fault, stored with the instance document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub grad_index: usize,
    pub offset: f64,
}

/// A problem together with its declared constants and, when known, its solution.
#[derive(Clone)]
pub struct ProblemInstance {
    pub problem: Problem,
    pub params: SolverParams,
    pub reference_solution: Option<PointZ>,
    pub label: String,
    pub spec: InstanceSpec,
    pub fault: Option<FaultSpec>,
    oracle: Arc<dyn SaddleOracle>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("label", &self.label)
            .field("spec", &self.spec)
            .field("params", &self.params)
            .field("fault", &self.fault)
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(
        problem: Problem,
        params: SolverParams,
        reference_solution: Option<PointZ>,
        label: String,
        spec: InstanceSpec,
        fault: Option<FaultSpec>,
    ) -> Self {
        let base = problem.as_oracle();
        let oracle: Arc<dyn SaddleOracle> = match fault {
            Some(f) => Arc::new(GradientFault {
                inner: base,
                index: f.grad_index,
                offset: f.offset,
            }),
            None => base,
        };
        ProblemInstance {
            problem,
            params,
            reference_solution,
            label,
            spec,
            fault,
            oracle,
        }
    }

    pub fn oracle(&self) -> &dyn SaddleOracle {
        self.oracle.as_ref()
    }

    pub fn shared_oracle(&self) -> Arc<dyn SaddleOracle> {
        Arc::clone(&self.oracle)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.oracle.dims()
    }

    /// The all-ones starting point used when none is given.
    pub fn default_start(&self) -> PointZ {
        let (n, m) = self.dims();
        PointZ::new(vec![1.0; n], vec![1.0; m]).expect("ones are finite")
    }

    /// `z* + radius u` for a seeded uniformly random unit direction `u`.
    pub fn offset_start(&self, radius: f64, seed: u64) -> Result<PointZ> {
        let z_star = self.reference_solution.as_ref().ok_or(SolverError::MissingBound)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = self.dims();
        let v: Vec<f64> = (0..n + m).map(|_| rng.sample(StandardNormal)).collect();
        let dir = PointZ::from_stacked(&v, n)?;
        let len = norm_z(&dir);
        if len == 0.0 {
            return Err(SolverError::Singular("random direction"));
        }
        z_star.axpy(radius / len, &dir)
    }

    /// Same instance with the solver constants for order `p`: `lp = l1` for
    /// `p = 1`, otherwise the Jacobian constant (or the operational floor when
    /// that is zero).
    pub fn with_order(&self, p: u32) -> ProblemInstance {
        let mut out = self.clone();
        out.params.p = p;
        out.params.lp = if p == 1 {
            self.params.l1
        } else if self.params.l2 > 0.0 {
            self.params.l2
        } else {
            DEFAULT_OPERATIONAL_LP
        };
        out
    }
}

fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Builds a seeded instance with declared constants and a reference solution.
pub fn generate_instance(spec: &InstanceSpec) -> Result<ProblemInstance> {
    if spec.n == 0 || spec.m == 0 {
        return Err(SolverError::InvalidParams("n and m must be at least 1".into()));
    }
    if !(spec.mu > 0.0 && spec.mu.is_finite()) {
        return Err(SolverError::InvalidParams(format!("mu must be positive, got {}", spec.mu)));
    }
    if !(spec.coupling_scale >= 0.0 && spec.coupling_scale.is_finite()) {
        return Err(SolverError::InvalidParams("coupling_scale must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (problem, mut params, reference) = match spec.family {
        Family::Quadratic => {
            if !(spec.spectrum_ratio >= 1.0) {
                return Err(SolverError::InvalidParams("spectrum_ratio must be >= 1".into()));
            }
            let hi = spec.mu * spec.spectrum_ratio;
            let a = random_spd(&mut rng, spec.n, spec.mu, hi);
            let c = random_spd(&mut rng, spec.m, spec.mu, hi);
            let b = random_with_spectral_norm(&mut rng, spec.n, spec.m, spec.coupling_scale);
            let lin_a = gaussian_vector(&mut rng, spec.n);
            let lin_c = gaussian_vector(&mut rng, spec.m);
            let q = QuadraticSaddle::new(a, b, c, lin_a, lin_c)?;
            let params = SolverParams {
                mu: spec.mu,
                l1: q.lipschitz_f(),
                l2: 0.0,
                lp: DEFAULT_OPERATIONAL_LP,
                gamma_bar: 0.0,
                ..SolverParams::default()
            };
            let z_star = quadratic_exact_solution(&q)?;
            (Problem::Quadratic(q), params, z_star)
        }
        Family::SmoothCoupled => {
            let b = random_with_spectral_norm(&mut rng, spec.n, spec.m, spec.coupling_scale);
            let s = SmoothCoupledSaddle::new(spec.tau, b, spec.mu)?;
            let l2 = certify_l2(&s, spec.seed)?;
            let mut params = SolverParams {
                mu: spec.mu,
                l1: s.declared_l1(),
                l2,
                lp: if l2 > 0.0 { l2 } else { DEFAULT_OPERATIONAL_LP },
                ..SolverParams::default()
            };
            params.gamma_bar = params.theory_gamma_bar();
            let z_star = smooth_reference_solution(&s)?;
            (Problem::SmoothCoupled(s), params, z_star)
        }
    };
    let label = format!(
        "{}-s{}-n{}-m{}",
        match spec.family {
            Family::Quadratic => "quadratic",
            Family::SmoothCoupled => "smooth",
        },
        spec.seed,
        spec.n,
        spec.m
    );
    let start = PointZ::new(vec![1.0; spec.n], vec![1.0; spec.m])?;
    params.r0 = (1.1 * distance(&start, &reference)?).max(1e-12);
    let inst = ProblemInstance::new(problem, params, Some(reference), label, spec.clone(), None);
    let failed: Vec<String> = declared_constant_checks(&inst)
        .into_iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    if !failed.is_empty() {
        return Err(SolverError::InvalidParams(format!(
            "generated instance violates its declared constants: {}",
            failed.join(", ")
        )));
    }
    Ok(inst)
}

/// One named structural check with its measured and allowed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Closed-form checks of the declared constants where the family allows them.
pub fn declared_constant_checks(inst: &ProblemInstance) -> Vec<ConstantCheck> {
    let p = &inst.params;
    let mut out = Vec::new();
    match &inst.problem {
        Problem::Quadratic(q) => {
            let lam = q.strong_convexity_modulus();
            out.push(ConstantCheck {
                name: "eigenvalue_mu".into(),
                measured: lam,
                bound: p.mu,
                passed: lam >= p.mu * (1.0 - 1e-10) - 1e-12,
            });
            let l1 = q.lipschitz_f();
            out.push(ConstantCheck {
                name: "spectral_l1".into(),
                measured: l1,
                bound: p.l1,
                passed: l1 <= p.l1 * (1.0 + 1e-10) + 1e-12,
            });
        }
        Problem::SmoothCoupled(s) => {
            out.push(ConstantCheck {
                name: "modulus_mu".into(),
                measured: s.mu(),
                bound: p.mu,
                passed: s.mu() >= p.mu * (1.0 - 1e-12),
            });
            let l1 = s.declared_l1();
            out.push(ConstantCheck {
                name: "declared_l1".into(),
                measured: l1,
                bound: p.l1,
                passed: l1 <= p.l1 * (1.0 + 1e-10),
            });
            out.push(ConstantCheck {
                name: "l2_ceiling".into(),
                measured: p.l2,
                bound: 2.0 * s.tau(),
                passed: p.l2 <= 2.0 * s.tau() + 1e-12,
            });
        }
    }
    out
}

/// Duality gap from closed-form best responses; quadratic family only.
pub fn duality_gap_exact(inst: &ProblemInstance, z: &PointZ) -> Result<f64> {
    match &inst.problem {
        Problem::Quadratic(q) => q.duality_gap(z),
        Problem::SmoothCoupled(_) => Err(SolverError::NoClosedForm),
    }
}

/// Upper bound `R >= |z1 - z*|`: a user bound when given, otherwise the
/// reference distance inflated by 1.1 (floored at 1e-12).
pub fn estimate_r0(inst: &ProblemInstance, z1: &PointZ, user_bound: Option<f64>) -> Result<f64> {
    if let Some(r) = user_bound {
        if r > 0.0 && r.is_finite() {
            return Ok(r);
        }
        return Err(SolverError::InvalidParams(format!("user bound for R must be positive, got {r}")));
    }
    let z_star = inst.reference_solution.as_ref().ok_or(SolverError::MissingBound)?;
    Ok((1.1 * distance(z1, z_star)?).max(1e-12))
}

/// The scalar example `g = x^2/2 + xy - y^2/2`.
pub fn toy_quadratic() -> QuadraticSaddle {
    let one = DMatrix::from_element(1, 1, 1.0);
    QuadraticSaddle::new(one.clone(), one.clone(), one, DVector::zeros(1), DVector::zeros(1))
        .expect("toy quadratic is well formed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    pub mu: f64,
    pub l1: f64,
    pub l2: f64,
    pub lp: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    Quadratic {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        lin_a: Vec<f64>,
        lin_c: Vec<f64>,
    },
    SmoothCoupled {
        tau: f64,
        b: Vec<Vec<f64>>,
    },
}

/// JSON form of an instance. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub family: Family,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub mu: f64,
    pub coupling_scale: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_spectrum_ratio")]
    pub spectrum_ratio: f64,
    pub label: String,
    pub declared: DeclaredConstants,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<PointZ>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_injection: Option<FaultSpec>,
}

impl ProblemInstance {
    pub fn to_document(&self) -> InstanceDocument {
        let payload = match &self.problem {
            Problem::Quadratic(q) => Payload::Quadratic {
                a: to_rows(&q.a),
                b: to_rows(&q.b),
                c: to_rows(&q.c),
                lin_a: q.lin_a.as_slice().to_vec(),
                lin_c: q.lin_c.as_slice().to_vec(),
            },
            Problem::SmoothCoupled(s) => Payload::SmoothCoupled {
                tau: s.tau,
                b: to_rows(&s.b),
            },
        };
        let (n, m) = self.dims();
        InstanceDocument {
            family: self.problem.family(),
            seed: self.spec.seed,
            n,
            m,
            mu: self.params.mu,
            coupling_scale: self.spec.coupling_scale,
            tau: self.spec.tau,
            spectrum_ratio: self.spec.spectrum_ratio,
            label: self.label.clone(),
            declared: DeclaredConstants {
                mu: self.params.mu,
                l1: self.params.l1,
                l2: self.params.l2,
                lp: self.params.lp,
                r0: self.params.r0,
            },
            payload,
            reference_solution: self.reference_solution.clone(),
            fault_injection: self.fault,
        }
    }

    /// Rebuilds an instance from its document. Declared constants are taken
    /// as written; use [`declared_constant_checks`] to audit them.
    pub fn from_document(doc: &InstanceDocument) -> Result<ProblemInstance> {
        let problem = match &doc.payload {
            Payload::Quadratic { a, b, c, lin_a, lin_c } => {
                if lin_a.len() != doc.n || lin_c.len() != doc.m {
                    return Err(SolverError::InvalidParams("linear terms do not match n, m".into()));
                }
                Problem::Quadratic(QuadraticSaddle::new(
                    from_rows(a, doc.n, doc.n, "a")?,
                    from_rows(b, doc.n, doc.m, "b")?,
                    from_rows(c, doc.m, doc.m, "c")?,
                    DVector::from_column_slice(lin_a),
                    DVector::from_column_slice(lin_c),
                )?)
            }
            Payload::SmoothCoupled { tau, b } => {
                Problem::SmoothCoupled(SmoothCoupledSaddle::new(*tau, from_rows(b, doc.n, doc.m, "b")?, doc.mu)?)
            }
        };
        if problem.family() != doc.family {
            return Err(SolverError::InvalidParams("payload kind does not match family".into()));
        }
        let mut params = SolverParams {
            mu: doc.declared.mu,
            l1: doc.declared.l1,
            l2: doc.declared.l2,
            lp: doc.declared.lp,
            r0: doc.declared.r0,
            ..SolverParams::default()
        };
        params.gamma_bar = params.theory_gamma_bar();
        params.validate()?;
        let reference = match (&doc.reference_solution, &problem) {
            (Some(z), _) => Some(z.clone()),
            (None, Problem::Quadratic(q)) => Some(quadratic_exact_solution(q)?),
            (None, Problem::SmoothCoupled(s)) => Some(smooth_reference_solution(s)?),
        };
        if let Some(z) = &reference {
            if z.n() != doc.n || z.m() != doc.m {
                return Err(SolverError::InvalidParams("reference solution has wrong shape".into()));
            }
        }
        let spec = InstanceSpec {
            family: doc.family,
            seed: doc.seed,
            n: doc.n,
            m: doc.m,
            mu: doc.mu,
            coupling_scale: doc.coupling_scale,
            tau: doc.tau,
            spectrum_ratio: doc.spectrum_ratio,
        };
        Ok(ProblemInstance::new(
            problem,
            params,
            reference,
            doc.label.clone(),
            spec,
            doc.fault_injection,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("instance document serializes")
    }

    pub fn from_json(text: &str) -> Result<ProblemInstance> {
        let doc: InstanceDocument =
            serde_json::from_str(text).map_err(|e| SolverError::InvalidParams(format!("instance document: {e}")))?;
        ProblemInstance::from_document(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{fd_check, operator_f, sample_strong_monotonicity};
    use crate::trace::OracleCounts;

    fn pz(x: f64, y: f64) -> PointZ {
        PointZ::new(vec![x], vec![y]).unwrap()
    }

    #[test]
    fn exact_solution_examples() {
        assert_eq!(quadratic_exact_solution(&toy_quadratic()).unwrap(), pz(0.0, 0.0));
        let one = DMatrix::from_element(1, 1, 1.0);
        let q = QuadraticSaddle::new(
            one.clone(),
            one.clone(),
            one,
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let z = quadratic_exact_solution(&q).unwrap();
        assert!((z.x()[0] + 0.5).abs() < 1e-15 && (z.y()[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_solution_residual_random_20() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 3, 20, 20, 1.0, 1.0)).unwrap();
        let z = inst.reference_solution.clone().unwrap();
        let mut c = OracleCounts::default();
        assert!(norm_z(&operator_f(inst.oracle(), &z, &mut c).unwrap()) <= 1e-10);
    }

    #[test]
    fn duality_gap_toy_examples() {
        let q = toy_quadratic();
        assert_eq!(q.duality_gap(&pz(0.0, 0.0)).unwrap(), 0.0);
        assert!((q.duality_gap(&pz(1.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duality_gap_matches_best_response_difference() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 11, 4, 3, 0.5, 2.0)).unwrap();
        let Problem::Quadratic(q) = &inst.problem else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = PointZ::from_stacked(&v, 4).unwrap();
            let (y_best, x_best) = q.best_responses(&z).unwrap();
            let upper = q
                .value(&PointZ::new(z.x().to_vec(), y_best.as_slice().to_vec()).unwrap())
                .unwrap();
            let lower = q
                .value(&PointZ::new(x_best.as_slice().to_vec(), z.y().to_vec()).unwrap())
                .unwrap();
            let direct = upper - lower;
            let gap = q.duality_gap(&z).unwrap();
            assert!(gap >= 0.0);
            assert!((gap - direct).abs() <= 1e-9 * (1.0 + direct.abs()), "{gap} vs {direct}");
        }
    }

    #[test]
    fn smooth_reference_examples() {
        let s = SmoothCoupledSaddle::new(0.0, DMatrix::zeros(3, 3), 1.0).unwrap();
        let z = smooth_reference_solution(&s).unwrap();
        assert!(norm_z(&z) < 1e-14);

        let s = SmoothCoupledSaddle::new(1.0, DMatrix::zeros(4, 4), 1.0).unwrap();
        let z = smooth_reference_solution(&s).unwrap();
        for (a, b) in z.x().iter().zip(z.y()) {
            assert!((a - b).abs() < 1e-14);
        }

        let inst = generate_instance(&InstanceSpec::new(Family::SmoothCoupled, 9, 5, 5, 1.0, 1.0)).unwrap();
        let z = inst.reference_solution.clone().unwrap();
        let mut c = OracleCounts::default();
        assert!(norm_z(&operator_f(inst.oracle(), &z, &mut c).unwrap()) <= 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        for family in [Family::Quadratic, Family::SmoothCoupled] {
            let spec = InstanceSpec::new(family, 42, 4, 6, 0.7, 1.3);
            let a = generate_instance(&spec).unwrap();
            let b = generate_instance(&spec).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn quadratic_eigenvalue_floor() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 8, 6, 5, 1.0, 1.0)).unwrap();
        let Problem::Quadratic(q) = &inst.problem else { unreachable!() };
        assert!(min_sym_eigenvalue(q.a()) >= 1.0 - 1e-12);
        assert!(min_sym_eigenvalue(q.c()) >= 1.0 - 1e-12);
    }

    #[test]
    fn zero_coupling_decouples() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 4, 3, 2, 1.0, 0.0)).unwrap();
        let Problem::Quadratic(q) = &inst.problem else { unreachable!() };
        assert_eq!(q.b().amax(), 0.0);
        let z = inst.reference_solution.clone().unwrap();
        let x = linalg::solve(q.a(), &(-q.lin_a()), "A").unwrap();
        let y = linalg::solve(q.c(), &(-q.lin_c()), "C").unwrap();
        for (u, v) in z.x().iter().zip(x.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in z.y().iter().zip(y.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_start_has_requested_distance() {
        let inst = generate_instance(&InstanceSpec::new(Family::SmoothCoupled, 5, 3, 3, 1.0, 1.0)).unwrap();
        let z = inst.offset_start(0.25, 1).unwrap();
        let d = distance(&z, inst.reference_solution.as_ref().unwrap()).unwrap();
        assert!((d - 0.25).abs() < 1e-14);
        assert_eq!(z, inst.offset_start(0.25, 1).unwrap());
    }

    #[test]
    fn r0_estimates() {
        let mut inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 1, 1, 1, 1.0, 1.0)).unwrap();
        let z_star = inst.reference_solution.clone().unwrap();
        assert_eq!(estimate_r0(&inst, &z_star, None).unwrap(), 1e-12);
        assert_eq!(estimate_r0(&inst, &z_star, Some(5.0)).unwrap(), 5.0);
        inst.reference_solution = Some(pz(0.0, 0.0));
        let r = estimate_r0(&inst, &pz(1.0, 1.0), None).unwrap();
        assert!((r - 1.1 * 2f64.sqrt()).abs() < 1e-15);
        inst.reference_solution = None;
        assert_eq!(estimate_r0(&inst, &pz(1.0, 1.0), None), Err(SolverError::MissingBound));
    }

    #[test]
    fn smooth_family_checks() {
        let inst = generate_instance(&InstanceSpec::new(Family::SmoothCoupled, 2, 5, 5, 1.0, 1.0)).unwrap();
        assert!(inst.params.l2 > 0.0 && inst.params.l2 <= 2.0);
        let z = inst.default_start();
        let r = fd_check(inst.oracle(), &z, 1e-6).unwrap();
        assert!(r.grad_rel_err <= 1e-5 && r.jacobian_rel_err <= 1e-4, "{r:?}");
        let region = SampleBox { center: z, half_width: 2.0 };
        let rep = sample_strong_monotonicity(inst.oracle(), inst.params.mu, &region, 200, 1).unwrap();
        assert!(rep.worst >= -1e-10);
    }

    #[test]
    fn third_derivative_matches_jacobian_differences() {
        let inst = generate_instance(&InstanceSpec::new(Family::SmoothCoupled, 6, 3, 4, 1.0, 1.0)).unwrap();
        let z = PointZ::from_stacked(&[0.3, -1.0, 0.5, 0.2, 0.9, -0.4, 1.1], 3).unwrap();
        let d = PointZ::from_stacked(&[0.1, 0.7, -0.2, 0.4, -0.3, 0.6, 0.05], 3).unwrap();
        let h = 1e-6;
        let jp = inst.oracle().jacobian_f(&z.axpy(h, &d).unwrap()).unwrap();
        let jm = inst.oracle().jacobian_f(&z.axpy(-h, &d).unwrap()).unwrap();
        let fd = (jp - jm) / (2.0 * h);
        let exact = inst.oracle().apply_third(&z, &d).unwrap().unwrap();
        assert!((fd - exact).amax() < 1e-8);
    }

    #[test]
    fn document_round_trip_is_exact() {
        for family in [Family::Quadratic, Family::SmoothCoupled] {
            let inst = generate_instance(&InstanceSpec::new(family, 13, 3, 4, 1.0, 0.8)).unwrap();
            let back = ProblemInstance::from_json(&inst.to_json()).unwrap();
            assert_eq!(back.problem, inst.problem);
            assert_eq!(back.reference_solution, inst.reference_solution);
            assert_eq!(back.to_json(), inst.to_json());
        }
    }

    #[test]
    fn document_rejects_unknown_and_misshapen_fields() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 1, 2, 2, 1.0, 1.0)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(ProblemInstance::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        v["payload"]["a"] = serde_json::json!([[1.0]]);
        assert!(ProblemInstance::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn declared_mu_above_eigenvalue_is_flagged() {
        let mut inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 1, 3, 3, 1.0, 1.0)).unwrap();
        inst.params.mu = 1.5;
        let checks = declared_constant_checks(&inst);
        assert!(checks.iter().any(|c| c.name == "eigenvalue_mu" && !c.passed));
    }
}
