//! Problem evaluation: the saddle function `g`, its monotone operator
//! `F(z) = (grad_x g, -grad_y g)`, Taylor models of `F`, the merit function,
//! and randomized checks of the structural assumptions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::linalg::{solve, spectral_norm};
use crate::point::{norm_z, PointZ};
use crate::trace::OracleCounts;

/// Evaluation interface of a convex-concave `g(x, y)`.
///
/// Implementations are immutable and shareable across threads; call
/// accounting lives with the caller (see [`OracleCounts`]).
pub trait SaddleOracle: Send + Sync {
    /// Block dimensions `(n, m)`.
    fn dims(&self) -> (usize, usize);

    fn value(&self, z: &PointZ) -> Result<f64>;

    /// `(grad_x g, grad_y g)`.
    fn grad(&self, z: &PointZ) -> Result<PointZ>;

    /// Dense Jacobian of `F`, size `(n + m) x (n + m)`.
    fn jacobian_f(&self, z: &PointZ) -> Result<DMatrix<f64>>;

    /// Second derivative of `F` applied once along `d`, i.e. the matrix
    /// `D^2 F(z)[d]`. Only needed by user-supplied inner solvers for `p >= 3`.
    fn apply_third(&self, _z: &PointZ, _d: &PointZ) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

impl<T: SaddleOracle + ?Sized> SaddleOracle for Arc<T> {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn value(&self, z: &PointZ) -> Result<f64> {
        (**self).value(z)
    }
    fn grad(&self, z: &PointZ) -> Result<PointZ> {
        (**self).grad(z)
    }
    fn jacobian_f(&self, z: &PointZ) -> Result<DMatrix<f64>> {
        (**self).jacobian_f(z)
    }
    fn apply_third(&self, z: &PointZ, d: &PointZ) -> Option<Result<DMatrix<f64>>> {
        (**self).apply_third(z, d)
    }
}

fn check_dims(oracle: &dyn SaddleOracle, z: &PointZ) -> Result<()> {
    let (n, m) = oracle.dims();
    if z.n() == n && z.m() == m {
        Ok(())
    } else {
        Err(SolverError::DimensionMismatch {
            expected_n: n,
            expected_m: m,
            got_n: z.n(),
            got_m: z.m(),
        })
    }
}

/// Flips the sign of the `y` block: gradient of `g` <-> operator `F`.
pub fn grad_to_operator(grad: PointZ) -> PointZ {
    let y: Vec<f64> = grad.y().iter().map(|v| -v).collect();
    PointZ::new(grad.x().to_vec(), y).expect("negation keeps entries finite")
}

pub fn operator_f(oracle: &dyn SaddleOracle, z: &PointZ, counts: &mut OracleCounts) -> Result<PointZ> {
    check_dims(oracle, z)?;
    counts.f += 1;
    Ok(grad_to_operator(oracle.grad(z)?))
}

pub fn jacobian(oracle: &dyn SaddleOracle, z: &PointZ, counts: &mut OracleCounts) -> Result<DMatrix<f64>> {
    check_dims(oracle, z)?;
    counts.jf += 1;
    let j = oracle.jacobian_f(z)?;
    let dim = z.dim();
    if j.nrows() != dim || j.ncols() != dim {
        return Err(SolverError::Oracle(format!(
            "jacobian has shape {}x{}, expected {dim}x{dim}",
            j.nrows(),
            j.ncols()
        )));
    }
    Ok(j)
}

pub fn value(oracle: &dyn SaddleOracle, z: &PointZ, counts: &mut OracleCounts) -> Result<f64> {
    check_dims(oracle, z)?;
    counts.g_value += 1;
    oracle.value(z)
}

/// `m(z) = |F(z)|^2 / 2`
pub fn merit(oracle: &dyn SaddleOracle, z: &PointZ, counts: &mut OracleCounts) -> Result<f64> {
    Ok(merit_of(&operator_f(oracle, z, counts)?))
}

pub fn merit_of(f: &PointZ) -> f64 {
    0.5 * f.iter().map(|v| v * v).sum::<f64>()
}

/// Terms of a Taylor model of `F` beyond the linear one.
pub trait TaylorExtension: Send + Sync {
    /// Sum of the degree `2..=degree` terms of the model at `center`
    /// evaluated on `displacement`.
    fn higher_order_terms(&self, center: &PointZ, displacement: &PointZ, degree: u32) -> Result<PointZ>;
}

/// Taylor expansion of `F` around `center`, truncated at `degree` in the
/// displacement. For smoothness order `p` the degree is `p - 1`.
#[derive(Clone)]
pub struct TaylorModelF {
    center: PointZ,
    degree: u32,
    f_center: PointZ,
    jac_center: Option<DMatrix<f64>>,
    extension: Option<Arc<dyn TaylorExtension>>,
}

impl std::fmt::Debug for TaylorModelF {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaylorModelF")
            .field("center", &self.center)
            .field("degree", &self.degree)
            .field("has_extension", &self.extension.is_some())
            .finish()
    }
}

impl TaylorModelF {
    pub fn build(
        oracle: &dyn SaddleOracle,
        center: &PointZ,
        degree: u32,
        extension: Option<Arc<dyn TaylorExtension>>,
        counts: &mut OracleCounts,
    ) -> Result<Self> {
        if degree >= 2 && extension.is_none() {
            return Err(SolverError::UnsupportedOrder(degree + 1));
        }
        let f_center = operator_f(oracle, center, counts)?;
        let jac_center = if degree >= 1 {
            Some(jacobian(oracle, center, counts)?)
        } else {
            None
        };
        Ok(TaylorModelF {
            center: center.clone(),
            degree,
            f_center,
            jac_center,
            extension,
        })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn center(&self) -> &PointZ {
        &self.center
    }

    pub fn f_center(&self) -> &PointZ {
        &self.f_center
    }

    pub fn jacobian(&self) -> Option<&DMatrix<f64>> {
        self.jac_center.as_ref()
    }

    pub fn eval(&self, z_eval: &PointZ) -> Result<PointZ> {
        let disp = z_eval.sub(&self.center)?;
        let mut out = self.f_center.clone();
        if let Some(j) = &self.jac_center {
            let lin = j * disp.to_dvector();
            out = out.add(&PointZ::from_dvector(&lin, disp.n())?)?;
        }
        if self.degree >= 2 {
            let ext = self
                .extension
                .as_ref()
                .ok_or(SolverError::UnsupportedOrder(self.degree + 1))?;
            out = out.add(&ext.higher_order_terms(&self.center, &disp, self.degree)?)?;
        }
        Ok(out)
    }
}

/// Convenience wrapper mirroring the model evaluation without an owned model.
pub fn taylor_f_eval(model: &TaylorModelF, z_eval: &PointZ) -> Result<PointZ> {
    model.eval(z_eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    /// Max mixed relative error of `grad` against central differences of `value`.
    pub grad_rel_err: f64,
    /// Max mixed relative error of `jacobian_f` against central differences of `F`.
    pub jacobian_rel_err: f64,
}

pub const FD_DEFAULT_STEP: f64 = 1e-6;

fn mixed_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn bump(z: &PointZ, i: usize, delta: f64) -> PointZ {
    let mut v: Vec<f64> = z.iter().copied().collect();
    v[i] += delta;
    PointZ::from_stacked(&v, z.n()).expect("bumped point stays finite")
}

/// Central-difference verification of `grad` (from `value`) and of
/// `jacobian_f` (from `grad`). Errors are `|a - b| / max(1, |a|, |b|)`.
pub fn fd_check(oracle: &dyn SaddleOracle, z: &PointZ, h: f64) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(SolverError::InvalidParams(format!("finite-difference step must be positive, got {h}")));
    }
    check_dims(oracle, z)?;
    let dim = z.dim();
    let grad: Vec<f64> = oracle.grad(z)?.iter().copied().collect();
    let jac = oracle.jacobian_f(z)?;
    let mut grad_err = 0.0_f64;
    let mut jac_err = 0.0_f64;
    for i in 0..dim {
        let plus = bump(z, i, h);
        let minus = bump(z, i, -h);
        let fd = (oracle.value(&plus)? - oracle.value(&minus)?) / (2.0 * h);
        grad_err = grad_err.max(mixed_rel(grad[i], fd));

        let f_plus = grad_to_operator(oracle.grad(&plus)?);
        let f_minus = grad_to_operator(oracle.grad(&minus)?);
        for (row, (a, b)) in f_plus.iter().zip(f_minus.iter()).enumerate() {
            let col_fd = (a - b) / (2.0 * h);
            jac_err = jac_err.max(mixed_rel(jac[(row, i)], col_fd));
        }
    }
    Ok(FdReport {
        grad_rel_err: grad_err,
        jacobian_rel_err: jac_err,
    })
}

/// Axis-aligned sampling box around a center point.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub center: PointZ,
    pub half_width: f64,
}

impl SampleBox {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PointZ {
        let v: Vec<f64> = self
            .center
            .iter()
            .map(|c| c + rng.random_range(-self.half_width..=self.half_width))
            .collect();
        PointZ::from_stacked(&v, self.center.n()).expect("sample stays finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    /// For monotonicity: min over pairs of `<F1 - F2, z1 - z2> - mu |z1 - z2|^2`.
    /// For Lipschitz checks: max observed ratio.
    pub worst: f64,
    pub pairs: usize,
}

/// Samples pairs in `region` and returns the worst strong-monotonicity margin.
pub fn sample_strong_monotonicity(
    oracle: &dyn SaddleOracle,
    mu: f64,
    region: &SampleBox,
    pairs: usize,
    seed: u64,
) -> Result<SampleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = OracleCounts::default();
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let z1 = region.sample(&mut rng);
        let z2 = region.sample(&mut rng);
        let dz = z1.sub(&z2)?;
        let df = operator_f(oracle, &z1, &mut counts)?.sub(&operator_f(oracle, &z2, &mut counts)?)?;
        let margin = df.dot(&dz)? - mu * dz.dot(&dz)?;
        worst = worst.min(margin);
    }
    Ok(SampleReport { worst, pairs })
}

/// Largest observed `|F(z1) - F(z2)| / |z1 - z2|` over sampled pairs.
pub fn sample_lipschitz_f(
    oracle: &dyn SaddleOracle,
    region: &SampleBox,
    pairs: usize,
    seed: u64,
) -> Result<SampleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = OracleCounts::default();
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let z1 = region.sample(&mut rng);
        let z2 = region.sample(&mut rng);
        let dz = norm_z(&z1.sub(&z2)?);
        if dz == 0.0 {
            continue;
        }
        let df = operator_f(oracle, &z1, &mut counts)?.sub(&operator_f(oracle, &z2, &mut counts)?)?;
        worst = worst.max(norm_z(&df) / dz);
    }
    Ok(SampleReport { worst, pairs })
}

/// Largest observed `|JF(z1) - JF(z2)|_2 / |z1 - z2|` over sampled pairs.
pub fn sample_lipschitz_jacobian(
    oracle: &dyn SaddleOracle,
    region: &SampleBox,
    pairs: usize,
    seed: u64,
) -> Result<SampleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let z1 = region.sample(&mut rng);
        let z2 = region.sample(&mut rng);
        let dz = norm_z(&z1.sub(&z2)?);
        if dz == 0.0 {
            continue;
        }
        let dj = oracle.jacobian_f(&z1)? - oracle.jacobian_f(&z2)?;
        worst = worst.max(spectral_norm(&dj) / dz);
    }
    Ok(SampleReport { worst, pairs })
}

/// Wraps an oracle and adds a fixed offset to one stacked gradient entry.
/// Used to confirm that verification rejects inconsistent derivatives.
pub struct GradientFault<O> {
    pub inner: O,
    pub index: usize,
    pub offset: f64,
}

impl<O: SaddleOracle> SaddleOracle for GradientFault<O> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn value(&self, z: &PointZ) -> Result<f64> {
        self.inner.value(z)
    }

    fn grad(&self, z: &PointZ) -> Result<PointZ> {
        let g = self.inner.grad(z)?;
        let mut v: Vec<f64> = g.iter().copied().collect();
        let slot = v
            .get_mut(self.index)
            .ok_or_else(|| SolverError::Oracle(format!("fault index {} out of range", self.index)))?;
        *slot += self.offset;
        PointZ::from_stacked(&v, g.n())
    }

    fn jacobian_f(&self, z: &PointZ) -> Result<DMatrix<f64>> {
        self.inner.jacobian_f(z)
    }
}

/// Solves `F(z) = 0` by Newton's method with a backtracking line search on the
/// merit function. Stops once `|F| <= tol` and the residual stops improving.
pub fn newton_solve_operator(
    oracle: &dyn SaddleOracle,
    start: &PointZ,
    tol: f64,
    max_iter: usize,
) -> Result<PointZ> {
    let mut counts = OracleCounts::default();
    let mut z = start.clone();
    let mut f = operator_f(oracle, &z, &mut counts)?;
    let mut res = norm_z(&f);
    let mut polish = 0;
    for _ in 0..max_iter {
        if res <= tol {
            // a few extra steps drive the residual to rounding level
            polish += 1;
            if polish > 3 || res == 0.0 {
                return Ok(z);
            }
        }
        let j = jacobian(oracle, &z, &mut counts)?;
        let rhs: DVector<f64> = -f.to_dvector();
        let step = PointZ::from_dvector(&solve(&j, &rhs, "newton reference system")?, z.n())?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = z.axpy(t, &step)?;
            let f_trial = operator_f(oracle, &trial, &mut counts)?;
            let r_trial = norm_z(&f_trial);
            if r_trial <= (1.0 - 1e-4 * t) * res || (res <= tol && r_trial <= res) {
                z = trial;
                f = f_trial;
                res = r_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if res <= tol {
                return Ok(z);
            }
            break;
        }
    }
    if res <= tol {
        Ok(z)
    } else {
        Err(SolverError::InnerSolveFailed(format!(
            "reference Newton solve stalled at residual {res:e} (target {tol:e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::toy_quadratic;

    fn pz(x: f64, y: f64) -> PointZ {
        PointZ::new(vec![x], vec![y]).unwrap()
    }

    #[test]
    fn operator_examples_on_toy_quadratic() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        assert_eq!(operator_f(&q, &pz(0.0, 0.0), &mut c).unwrap(), pz(0.0, 0.0));
        assert_eq!(operator_f(&q, &pz(1.0, 1.0), &mut c).unwrap(), pz(2.0, 0.0));
        // F = (x + y, -(x - y)) evaluated at (1, 0)
        assert_eq!(operator_f(&q, &pz(1.0, 0.0), &mut c).unwrap(), pz(1.0, -1.0));
        assert_eq!(c.f, 3);
    }

    #[test]
    fn merit_examples() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        assert_eq!(merit(&q, &pz(0.0, 0.0), &mut c).unwrap(), 0.0);
        assert_eq!(merit(&q, &pz(1.0, 1.0), &mut c).unwrap(), 2.0);
        assert_eq!(merit(&q, &pz(1.0, 0.0), &mut c).unwrap(), 1.0);
    }

    #[test]
    fn taylor_model_examples() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        let center = pz(1.0, 1.0);
        let m0 = TaylorModelF::build(&q, &center, 0, None, &mut c).unwrap();
        assert_eq!(m0.eval(&pz(-3.0, 7.0)).unwrap(), pz(2.0, 0.0));
        let m1 = TaylorModelF::build(&q, &center, 1, None, &mut c).unwrap();
        assert_eq!(m1.eval(&center).unwrap(), pz(2.0, 0.0));
        assert_eq!(taylor_f_eval(&m1, &pz(0.0, 0.0)).unwrap(), pz(0.0, 0.0));
        assert_eq!(c.jf, 1);
    }

    #[test]
    fn taylor_degree_two_requires_extension() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        let err = TaylorModelF::build(&q, &pz(1.0, 1.0), 2, None, &mut c).unwrap_err();
        assert_eq!(err, SolverError::UnsupportedOrder(3));

        struct Zero;
        impl TaylorExtension for Zero {
            fn higher_order_terms(&self, _c: &PointZ, d: &PointZ, _deg: u32) -> Result<PointZ> {
                Ok(PointZ::zeros(d.n(), d.m()))
            }
        }
        let m2 = TaylorModelF::build(&q, &pz(1.0, 1.0), 2, Some(Arc::new(Zero)), &mut c).unwrap();
        assert_eq!(m2.eval(&pz(0.0, 0.0)).unwrap(), pz(0.0, 0.0));
    }

    #[test]
    fn fd_check_on_toy_quadratic() {
        let q = toy_quadratic();
        let r = fd_check(&q, &pz(1.0, 1.0), 1e-6).unwrap();
        assert!(r.grad_rel_err <= 1e-8, "{r:?}");
        assert!(r.jacobian_rel_err <= 1e-8, "{r:?}");
        assert!(fd_check(&q, &pz(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn fd_check_detects_injected_fault() {
        let bad = GradientFault {
            inner: toy_quadratic(),
            index: 1,
            offset: 0.1,
        };
        let r = fd_check(&bad, &pz(1.0, 1.0), 1e-6).unwrap();
        assert!(r.grad_rel_err >= 0.01, "{r:?}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = toy_quadratic();
        let mut c = OracleCounts::default();
        let z = PointZ::new(vec![1.0, 2.0], vec![0.0]).unwrap();
        assert!(matches!(operator_f(&q, &z, &mut c), Err(SolverError::DimensionMismatch { .. })));
    }

    #[test]
    fn newton_reference_on_toy_quadratic() {
        let q = toy_quadratic();
        let z = newton_solve_operator(&q, &pz(3.0, -2.0), 1e-12, 50).unwrap();
        assert!(norm_z(&z) < 1e-14);
    }
}
