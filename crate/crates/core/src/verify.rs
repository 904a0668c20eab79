//! Instance audit: derivative consistency, sampled strong monotonicity and
//! Lipschitz constants, and closed-form checks of the declared constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{fd_check, sample_lipschitz_f, sample_lipschitz_jacobian, sample_strong_monotonicity, SampleBox, FD_DEFAULT_STEP};
use crate::problems::{declared_constant_checks, ConstantCheck, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub fd_points: usize,
    pub fd_step: f64,
    pub grad_tol: f64,
    pub jacobian_tol: f64,
    pub monotonicity_pairs: usize,
    pub monotonicity_floor: f64,
    pub lipschitz_pairs: usize,
    pub half_width: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fd_points: 20,
            fd_step: FD_DEFAULT_STEP,
            grad_tol: 1e-5,
            jacobian_tol: 1e-4,
            monotonicity_pairs: 1000,
            monotonicity_floor: -1e-10,
            lipschitz_pairs: 200,
            half_width: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<ConstantCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ConstantCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn verify_instance(inst: &ProblemInstance, opts: &VerifyOptions) -> Result<VerifyReport> {
    let oracle = inst.oracle();
    let params = &inst.params;
    let center = inst.reference_solution.clone().unwrap_or_else(|| inst.default_start());
    let region = SampleBox {
        center: center.clone(),
        half_width: opts.half_width,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut grad_err, mut jac_err) = (0.0_f64, 0.0_f64);
    let mut points = vec![inst.default_start()];
    points.extend((1..opts.fd_points).map(|_| region.sample(&mut rng)));
    for z in &points {
        let r = fd_check(oracle, z, opts.fd_step)?;
        grad_err = grad_err.max(r.grad_rel_err);
        jac_err = jac_err.max(r.jacobian_rel_err);
    }
    let mut checks = vec![
        ConstantCheck {
            name: "fd_gradient".into(),
            measured: grad_err,
            bound: opts.grad_tol,
            passed: grad_err <= opts.grad_tol,
        },
        ConstantCheck {
            name: "fd_jacobian".into(),
            measured: jac_err,
            bound: opts.jacobian_tol,
            passed: jac_err <= opts.jacobian_tol,
        },
    ];

    let mono = sample_strong_monotonicity(oracle, params.mu, &region, opts.monotonicity_pairs, opts.seed + 1)?;
    checks.push(ConstantCheck {
        name: "strong_monotonicity".into(),
        measured: mono.worst,
        bound: opts.monotonicity_floor,
        passed: mono.worst >= opts.monotonicity_floor,
    });

    let lf = sample_lipschitz_f(oracle, &region, opts.lipschitz_pairs, opts.seed + 2)?;
    checks.push(ConstantCheck {
        name: "lipschitz_f".into(),
        measured: lf.worst,
        bound: params.l1,
        passed: lf.worst <= params.l1 * (1.0 + 1e-9) + 1e-12,
    });

    let lj = sample_lipschitz_jacobian(oracle, &region, opts.lipschitz_pairs, opts.seed + 3)?;
    checks.push(ConstantCheck {
        name: "lipschitz_jacobian".into(),
        measured: lj.worst,
        bound: params.l2,
        passed: lj.worst <= params.l2 * (1.0 + 1e-9) + 1e-9,
    });

    checks.extend(declared_constant_checks(inst));
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_instance, Family, FaultSpec, InstanceSpec};

    #[test]
    fn generated_instances_verify() {
        for family in [Family::Quadratic, Family::SmoothCoupled] {
            let inst = generate_instance(&InstanceSpec::new(family, 21, 4, 3, 1.0, 1.0)).unwrap();
            let rep = verify_instance(&inst, &VerifyOptions::default()).unwrap();
            assert!(rep.passed(), "{:?}", rep.failed().collect::<Vec<_>>());
        }
    }

    #[test]
    fn injected_fault_fails_gradient_check() {
        let inst = generate_instance(&InstanceSpec::new(Family::Quadratic, 21, 4, 3, 1.0, 1.0)).unwrap();
        let faulty = ProblemInstance::new(
            inst.problem.clone(),
            inst.params.clone(),
            inst.reference_solution.clone(),
            inst.label.clone(),
            inst.spec.clone(),
            Some(FaultSpec { grad_index: 2, offset: 0.05 }),
        );
        let rep = verify_instance(&faulty, &VerifyOptions::default()).unwrap();
        let names: Vec<_> = rep.failed().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"fd_gradient"), "{names:?}");
    }
}
