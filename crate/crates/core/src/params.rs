use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Step size of the first-order (`p = 1`) Mirror-Prox step, whose bracket
/// `[1/(32 L1), 1/(16 L1)]` does not depend on the displacement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrderStep {
    /// `1/(16 L1)`: the averaged residual is then at most `16 L1 D / T`.
    #[default]
    Upper,
    /// `3/(64 L1)`.
    Midpoint,
}

/// Every constant the solvers consume.
///
/// `lp` is the Lipschitz constant matching the order `p` in use: for `p = 1`
/// it is the first-order constant of `F`, for `p = 2` the Lipschitz constant
/// of its Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub mu: f64,
    pub l1: f64,
    pub l2: f64,
    pub lp: f64,
    pub p: u32,
    pub r0: f64,
    pub eps_gap: f64,
    pub eps_grad: f64,
    pub rho: f64,
    pub alpha: f64,
    pub gamma_bar: f64,
    pub gamma_max: f64,
    pub inner_tol: f64,
    #[serde(default)]
    pub first_order_step: FirstOrderStep,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            mu: 1.0,
            l1: 1.0,
            l2: 0.0,
            lp: 1e-3,
            p: 2,
            r0: 1.0,
            eps_gap: 1e-8,
            eps_grad: 1e-4,
            rho: 0.5,
            alpha: 0.5,
            gamma_bar: 0.0,
            gamma_max: 1e6,
            inner_tol: 1e-12,
            first_order_step: FirstOrderStep::Upper,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SolverError::InvalidParams(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SolverError::InvalidParams(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(SolverError::InvalidParams(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        positive("mu", self.mu)?;
        nonnegative("l1", self.l1)?;
        nonnegative("l2", self.l2)?;
        nonnegative("lp", self.lp)?;
        if self.p < 1 {
            return Err(SolverError::InvalidParams("p must be at least 1".into()));
        }
        positive("r0", self.r0)?;
        positive("eps_gap", self.eps_gap)?;
        positive("eps_grad", self.eps_grad)?;
        open_unit("rho", self.rho)?;
        open_unit("alpha", self.alpha)?;
        nonnegative("gamma_bar", self.gamma_bar)?;
        positive("gamma_max", self.gamma_max)?;
        positive("inner_tol", self.inner_tol)?;
        Ok(())
    }

    /// `xi = max{1, L1 / mu}`
    pub fn xi(&self) -> f64 {
        (self.l1 / self.mu).max(1.0)
    }

    /// The CRN regularization start value `L2 mu^2 / (2 L1^2)`.
    pub fn theory_gamma_bar(&self) -> f64 {
        if self.l2 == 0.0 || self.l1 == 0.0 {
            0.0
        } else {
            self.l2 * self.mu * self.mu / (2.0 * self.l1 * self.l1)
        }
    }

    /// Radius of the region where CRN contracts quadratically, `mu / (L2 xi)`.
    /// Infinite when `L2 = 0`.
    pub fn quadratic_region_radius(&self) -> f64 {
        if self.l2 == 0.0 {
            f64::INFINITY
        } else {
            self.mu / (self.l2 * self.xi())
        }
    }
}

/// Partial overrides for [`SolverParams`], keyed by the same field names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub mu: Option<f64>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub lp: Option<f64>,
    pub p: Option<u32>,
    pub r0: Option<f64>,
    pub eps_gap: Option<f64>,
    pub eps_grad: Option<f64>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma_bar: Option<f64>,
    pub gamma_max: Option<f64>,
    pub inner_tol: Option<f64>,
    pub first_order_step: Option<FirstOrderStep>,
}

impl ParamOverrides {
    pub fn apply(&self, base: &SolverParams) -> SolverParams {
        let mut out = base.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { out.$f = v; } )* };
        }
        take!(mu, l1, l2, lp, p, r0, eps_gap, eps_grad, rho, alpha, gamma_bar, gamma_max, inner_tol, first_order_step);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SolverParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            SolverParams { mu: 0.0, ..Default::default() },
            SolverParams { rho: 1.0, ..Default::default() },
            SolverParams { alpha: 0.0, ..Default::default() },
            SolverParams { p: 0, ..Default::default() },
            SolverParams { l2: -1.0, ..Default::default() },
            SolverParams { gamma_max: f64::INFINITY, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn derived_constants() {
        let p = SolverParams { mu: 1.0, l1: 3.0, l2: 2.0, ..Default::default() };
        assert_eq!(p.xi(), 3.0);
        assert!((p.theory_gamma_bar() - 2.0 / 18.0).abs() < 1e-15);
        assert!((p.quadratic_region_radius() - 1.0 / 6.0).abs() < 1e-15);
        let q = SolverParams { mu: 2.0, l1: 1.0, l2: 0.0, ..Default::default() };
        assert_eq!(q.xi(), 1.0);
        assert_eq!(q.theory_gamma_bar(), 0.0);
        assert!(q.quadratic_region_radius().is_infinite());
    }

    #[test]
    fn overrides_reject_unknown_fields() {
        let o: ParamOverrides = serde_json::from_str(r#"{"mu": 0.1, "p": 1}"#).unwrap();
        let p = o.apply(&SolverParams::default());
        assert_eq!((p.mu, p.p), (0.1, 1));
        assert!(serde_json::from_str::<ParamOverrides>(r#"{"muu": 0.1}"#).is_err());
    }
}
