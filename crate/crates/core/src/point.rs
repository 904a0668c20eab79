//! Paired primal/dual points `z = (x, y)` and the Euclidean geometry on them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// A point `z = (x, y)` in `R^n x R^m`.
///
/// Both blocks are non-empty and every entry is finite. Arithmetic between
/// points of different shapes is rejected rather than broadcast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct PointZ {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<RawPoint> for PointZ {
    type Error = SolverError;

    fn try_from(raw: RawPoint) -> Result<Self> {
        PointZ::new(raw.x, raw.y)
    }
}

impl From<PointZ> for RawPoint {
    fn from(z: PointZ) -> Self {
        RawPoint { x: z.x, y: z.y }
    }
}

impl PointZ {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(SolverError::EmptyInput("point blocks must be non-empty"));
        }
        let z = PointZ { x, y };
        z.ensure_finite("point")?;
        Ok(z)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        assert!(n > 0 && m > 0, "point blocks must be non-empty");
        PointZ {
            x: vec![0.0; n],
            y: vec![0.0; m],
        }
    }

    /// Splits a stacked vector `(x; y)` after the first `n` entries.
    pub fn from_stacked(v: &[f64], n: usize) -> Result<Self> {
        if n == 0 || n >= v.len() {
            return Err(SolverError::EmptyInput("stacked vector split leaves an empty block"));
        }
        PointZ::new(v[..n].to_vec(), v[n..].to_vec())
    }

    pub fn from_dvector(v: &DVector<f64>, n: usize) -> Result<Self> {
        Self::from_stacked(v.as_slice(), n)
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.iter().copied())
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.y.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Iterates over the stacked entries `(x; y)`.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.x.iter().chain(self.y.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SolverError::NonFinite(what))
        }
    }

    pub fn same_shape(&self, other: &PointZ) -> Result<()> {
        if self.n() == other.n() && self.m() == other.m() {
            Ok(())
        } else {
            Err(SolverError::DimensionMismatch {
                expected_n: self.n(),
                expected_m: self.m(),
                got_n: other.n(),
                got_m: other.m(),
            })
        }
    }

    fn zip_with(&self, other: &PointZ, f: impl Fn(f64, f64) -> f64) -> Result<PointZ> {
        self.same_shape(other)?;
        let x = self.x.iter().zip(&other.x).map(|(a, b)| f(*a, *b)).collect();
        let y = self.y.iter().zip(&other.y).map(|(a, b)| f(*a, *b)).collect();
        let z = PointZ { x, y };
        z.ensure_finite("arithmetic result")?;
        Ok(z)
    }

    pub fn add(&self, other: &PointZ) -> Result<PointZ> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PointZ) -> Result<PointZ> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &PointZ) -> Result<PointZ> {
        self.zip_with(other, |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Result<PointZ> {
        let z = PointZ {
            x: self.x.iter().map(|v| alpha * v).collect(),
            y: self.y.iter().map(|v| alpha * v).collect(),
        };
        z.ensure_finite("arithmetic result")?;
        Ok(z)
    }

    pub fn dot(&self, other: &PointZ) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm_x(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_y(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Euclidean norm of the stacked pair, `sqrt(|x|^2 + |y|^2)`.
pub fn norm_z(z: &PointZ) -> f64 {
    z.norm_x().hypot(z.norm_y())
}

/// Half squared Euclidean distance, the Bregman divergence used throughout.
pub fn bregman(z1: &PointZ, z2: &PointZ) -> Result<f64> {
    z1.same_shape(z2)?;
    Ok(0.5
        * z1.iter()
            .zip(z2.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

pub fn distance(z1: &PointZ, z2: &PointZ) -> Result<f64> {
    Ok((2.0 * bregman(z1, z2)?).sqrt())
}

/// `sum_t w_t z_t / sum_t w_t` with strictly positive weights.
pub fn weighted_average(points: &[PointZ], weights: &[f64]) -> Result<PointZ> {
    if points.is_empty() {
        return Err(SolverError::EmptyInput("weighted_average needs at least one point"));
    }
    if points.len() != weights.len() {
        return Err(SolverError::InvalidParams(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(SolverError::NonPositiveWeight { index, value });
        }
    }
    let total: f64 = weights.iter().sum();
    let first = &points[0];
    let mut x = vec![0.0; first.n()];
    let mut y = vec![0.0; first.m()];
    for (p, &w) in points.iter().zip(weights) {
        first.same_shape(p)?;
        let share = w / total;
        x.iter_mut().zip(p.x()).for_each(|(acc, v)| *acc += share * v);
        y.iter_mut().zip(p.y()).for_each(|(acc, v)| *acc += share * v);
    }
    PointZ::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pz(x: &[f64], y: &[f64]) -> PointZ {
        PointZ::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm_z(&pz(&[0.0, 0.0], &[0.0, 0.0])), 0.0);
        assert!((norm_z(&pz(&[3.0], &[4.0])) - 5.0).abs() < 1e-15);
        assert!((norm_z(&pz(&[1.0, 1.0], &[1.0, 1.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bregman_examples() {
        let a = pz(&[1.5, -2.0], &[0.25]);
        assert_eq!(bregman(&a, &a).unwrap(), 0.0);
        assert_eq!(bregman(&pz(&[1.0], &[0.0]), &pz(&[0.0], &[0.0])).unwrap(), 0.5);
        assert_eq!(bregman(&pz(&[2.0], &[2.0]), &pz(&[0.0], &[0.0])).unwrap(), 4.0);
    }

    #[test]
    fn bregman_rejects_mismatched_shapes() {
        let err = bregman(&pz(&[1.0], &[0.0]), &pz(&[0.0, 1.0], &[0.0])).unwrap_err();
        assert!(matches!(err, SolverError::DimensionMismatch { .. }));
    }

    #[test]
    fn weighted_average_examples() {
        let single = pz(&[0.3], &[-7.0]);
        assert_eq!(weighted_average(&[single.clone()], &[4.2]).unwrap(), single);

        let avg = weighted_average(&[pz(&[0.0], &[0.0]), pz(&[2.0], &[2.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(avg, pz(&[1.0], &[1.0]));

        let avg = weighted_average(&[pz(&[0.0], &[0.0]), pz(&[3.0], &[0.0])], &[1.0, 2.0]).unwrap();
        assert!((avg.x()[0] - 2.0).abs() < 1e-15);
        assert_eq!(avg.y()[0], 0.0);
    }

    #[test]
    fn weighted_average_errors() {
        assert!(matches!(weighted_average(&[], &[]), Err(SolverError::EmptyInput(_))));
        let p = pz(&[1.0], &[1.0]);
        assert!(matches!(
            weighted_average(&[p.clone(), p.clone()], &[1.0, 0.0]),
            Err(SolverError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            weighted_average(&[p.clone()], &[-1.0]),
            Err(SolverError::NonPositiveWeight { index: 0, .. })
        ));
    }

    #[test]
    fn construction_rejects_bad_entries() {
        assert!(matches!(PointZ::new(vec![f64::NAN], vec![0.0]), Err(SolverError::NonFinite(_))));
        assert!(matches!(PointZ::new(vec![], vec![0.0]), Err(SolverError::EmptyInput(_))));
        let big = pz(&[f64::MAX], &[0.0]);
        assert!(matches!(big.add(&big), Err(SolverError::NonFinite(_))));
        assert!(pz(&[1.0], &[2.0]).add(&pz(&[1.0], &[2.0, 3.0])).is_err());
    }

    #[test]
    fn stacked_round_trip_and_serde() {
        let z = pz(&[1.0, 2.0], &[3.0]);
        assert_eq!(PointZ::from_dvector(&z.to_dvector(), 2).unwrap(), z);
        let json = serde_json::to_string(&z).unwrap();
        assert_eq!(serde_json::from_str::<PointZ>(&json).unwrap(), z);
        assert!(serde_json::from_str::<PointZ>(r#"{"x":[],"y":[1.0]}"#).is_err());
    }

    fn point_pair(n: usize, m: usize) -> impl Strategy<Value = (PointZ, PointZ)> {
        (
            proptest::collection::vec(-1e3..1e3f64, n + m),
            proptest::collection::vec(-1e3..1e3f64, n + m),
        )
            .prop_map(move |(a, b)| {
                (
                    PointZ::from_stacked(&a, n).unwrap(),
                    PointZ::from_stacked(&b, n).unwrap(),
                )
            })
    }

    proptest! {
        #[test]
        fn norm_squared_is_twice_bregman_to_origin((a, _b) in point_pair(3, 2)) {
            let origin = PointZ::zeros(3, 2);
            let lhs = norm_z(&a).powi(2);
            let rhs = 2.0 * bregman(&a, &origin).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
        }

        #[test]
        fn triangle_inequality((a, b) in point_pair(2, 4)) {
            let sum = a.add(&b).unwrap();
            prop_assert!(norm_z(&sum) <= norm_z(&a) + norm_z(&b) + 1e-9);
        }

        #[test]
        fn weighted_average_scale_invariant(
            (a, b) in point_pair(2, 2),
            w1 in 1e-3..10.0f64,
            w2 in 1e-3..10.0f64,
            s in 1e-3..1e3f64,
        ) {
            let pts = [a, b];
            let base = weighted_average(&pts, &[w1, w2]).unwrap();
            let scaled = weighted_average(&pts, &[s * w1, s * w2]).unwrap();
            for (u, v) in base.iter().zip(scaled.iter()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}
