use proptest::prelude::*;
use saddle_core::crn::{solve_cubic_subproblem, CubicSubproblem};
use saddle_core::drivers::{
    gradnorm_solve, hybrid_solve, restarted_homp, tensor_step, RegularizedOracle,
};
use saddle_core::homp::{find_gamma, homp_run, residual_bound, GammaBracket, GammaKind, ImplicitStepContext};
use saddle_core::oracle::{jacobian, merit, newton_solve_operator, operator_f};
use saddle_core::point::{bregman, distance, norm_z, PointZ};
use saddle_core::problems::{estimate_r0, generate_instance, Family, InstanceSpec, ProblemInstance};
use saddle_core::trace::{OracleCounts, Phase, TraceRecorder};

fn smooth(seed: u64, n: usize) -> ProblemInstance {
    generate_instance(&InstanceSpec::new(Family::SmoothCoupled, seed, n, n, 1.0, 1.0)).unwrap()
}

fn quadratic(seed: u64, n: usize) -> ProblemInstance {
    generate_instance(&InstanceSpec::new(Family::Quadratic, seed, n, n, 1.0, 1.0)).unwrap()
}

fn offset(z: &PointZ, r: f64, seed: u64) -> PointZ {
    let v: Vec<f64> = (0..z.dim()).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.7)).sin()).collect();
    let d = PointZ::from_stacked(&v, z.n()).unwrap();
    z.axpy(r / norm_z(&d), &d).unwrap()
}

#[test]
fn gamma_search_meets_bracket_on_smooth_family() {
    let inst = smooth(4, 5);
    for k in 0..10 {
        let z = offset(&inst.default_start(), 2.0, k);
        let ctx = ImplicitStepContext::new(inst.oracle(), &z, 2, 1e-12, None, &mut OracleCounts::default()).unwrap();
        let g = find_gamma(&ctx, &inst.params, None).unwrap();
        assert_eq!(g.kind, GammaKind::Bracketed);
        assert!(!g.monotonicity_violated);
        let s = g.gamma * inst.params.lp * g.d_norm;
        assert!(s >= 2.0 / 32.0 * (1.0 - 1e-9) && s <= 2.0 / 16.0 * (1.0 + 1e-9), "{s}");
        let b = GammaBracket::new(2, inst.params.lp, g.d_norm);
        assert!((b.upper - 2.0 * b.lower).abs() <= 1e-15 * b.upper);
    }
}

#[test]
fn averaged_residual_and_distance_bounds() {
    for seed in 1..=5 {
        for inst in [smooth(seed, 5), quadratic(seed, 5)] {
            let zs = inst.reference_solution.clone().unwrap();
            let z1 = inst.default_start();
            let mut rec = TraceRecorder::with_reference(zs.clone());
            let out = homp_run(inst.oracle(), &z1, &inst.params, 50, 0, &mut rec).unwrap();
            let bound = residual_bound(2, inst.params.lp, bregman(&zs, &z1).unwrap(), 50);
            assert!(out.residual_history[49] <= bound + 1e-9);
            let dist = distance(&out.average, &zs).unwrap();
            let rhs = *out.contraction_history.last().unwrap();
            assert!(inst.params.mu * dist * dist <= rhs + 1e-12, "{} {}", dist, rhs);
            assert_eq!(out.monotonicity_violations, 0);
            assert_eq!(rec.records().len(), 50);
        }
    }
}

#[test]
fn restarts_stay_within_radii() {
    for inst in [smooth(2, 6), quadratic(2, 6)] {
        let zs = inst.reference_solution.clone().unwrap();
        let z1 = inst.default_start();
        let params = saddle_core::SolverParams {
            eps_gap: 1e-8,
            r0: estimate_r0(&inst, &z1, None).unwrap(),
            ..inst.params.clone()
        };
        let out = restarted_homp(inst.oracle(), &z1, &params, &mut TraceRecorder::default()).unwrap();
        for (i, run) in out.runs.iter().enumerate() {
            assert!(distance(&run.end, &zs).unwrap() <= run.radius / 2.0 + 1e-12, "restart {i}");
        }
        let restart_ids: Vec<usize> = out.runs.iter().map(|r| r.budget).collect();
        assert_eq!(restart_ids, out.schedule.budgets);
    }
}

#[test]
fn restarted_from_solution_stays() {
    let inst = smooth(3, 4);
    let zs = inst.reference_solution.clone().unwrap();
    let params = saddle_core::SolverParams { r0: 1.0, eps_gap: 1e-6, ..inst.params.clone() };
    let out = restarted_homp(inst.oracle(), &zs, &params, &mut TraceRecorder::default()).unwrap();
    assert!(distance(&out.point, &zs).unwrap() <= 1e-14);
}

#[test]
fn hybrid_on_quadratic_is_one_restart_then_newton() {
    let inst = quadratic(7, 8);
    let z1 = inst.default_start();
    let params = saddle_core::SolverParams {
        eps_gap: 1e-8,
        r0: estimate_r0(&inst, &z1, None).unwrap(),
        ..inst.params.clone()
    };
    let mut rec = TraceRecorder::default();
    let out = hybrid_solve(inst.oracle(), &z1, &params, &mut rec).unwrap();
    assert_eq!(out.restarts.schedule.n, 1);
    assert!(out.crn.steps.len() <= 1);
    let trace = rec.finish(out.point.clone(), saddle_core::RunStatus::Converged);
    assert!(trace.iterations_in(Phase::Homp) >= 1);
    for w in trace.records.windows(2) {
        assert!(w[1].oracle_calls_cumulative.dominates(&w[0].oracle_calls_cumulative));
    }
}

#[test]
fn tensor_step_inequality_at_moderate_distances() {
    for inst in [smooth(1, 6), quadratic(1, 6)] {
        let zs = inst.reference_solution.clone().unwrap();
        let m = std::f64::consts::SQRT_2 * 2.0 * inst.params.lp;
        for r in [1.0, 0.1, 0.01] {
            let z = offset(&zs, r, 5);
            let t = tensor_step(inst.oracle(), &z, 2, m, 1e-12, &mut OracleCounts::default()).unwrap();
            assert!(t.lemma_lhs <= t.lemma_rhs, "r={r}: {} > {}", t.lemma_lhs, t.lemma_rhs);
            assert!(t.residual <= 1e-10);
        }
    }
}

#[test]
fn regularized_solution_is_closer_to_anchor() {
    for seed in 1..=3 {
        let inst = smooth(seed, 5);
        let z1 = inst.default_start();
        let zs = inst.reference_solution.clone().unwrap();
        for mu_reg in [1e-3, 0.1, 1.0] {
            let reg = RegularizedOracle::new(inst.oracle(), z1.clone(), mu_reg).unwrap();
            let zs_mu = newton_solve_operator(&reg, &z1, 1e-12, 200).unwrap();
            assert!(distance(&zs_mu, &z1).unwrap() <= distance(&zs, &z1).unwrap() + 1e-12);
        }
    }
}

#[test]
fn gradnorm_from_solution() {
    let inst = smooth(8, 4);
    let zs = inst.reference_solution.clone().unwrap();
    let out = gradnorm_solve(inst.oracle(), &zs, 1e-3, 1.0, &inst.params, &mut TraceRecorder::default()).unwrap();
    assert!(out.grad_norm <= 1e-3);
    assert!((out.mu_reg - 1e-3 / 4.0).abs() < 1e-18);
}

#[test]
fn gradnorm_requires_second_order() {
    let inst = smooth(8, 4).with_order(1);
    let err = gradnorm_solve(inst.oracle(), &inst.default_start(), 1e-3, 1.0, &inst.params, &mut TraceRecorder::default())
        .unwrap_err();
    assert_eq!(err, saddle_core::SolverError::UnsupportedOrder(1));
}

fn arb_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0..3.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn implicit_step_is_optimal(v in arb_point(8), gamma in 1e-3..1e3f64) {
        let inst = smooth(5, 4);
        let z = PointZ::from_stacked(&v, 4).unwrap();
        let ctx = ImplicitStepContext::new(inst.oracle(), &z, 2, 1e-12, None, &mut OracleCounts::default()).unwrap();
        let z_hat = ctx.step(gamma).unwrap();
        let res = ctx.residual(&z_hat, gamma).unwrap();
        prop_assert!(res <= 1e-10 * (1.0 + gamma));
    }

    #[test]
    fn cubic_subproblem_is_stationary(v in arb_point(8), gamma in 0.0..50.0f64) {
        let inst = smooth(6, 4);
        let z = PointZ::from_stacked(&v, 4).unwrap();
        let mut c = OracleCounts::default();
        let sub = CubicSubproblem {
            f_k: operator_f(inst.oracle(), &z, &mut c).unwrap(),
            jac_k: jacobian(inst.oracle(), &z, &mut c).unwrap(),
            z_k: z,
            gamma_k: gamma,
        };
        let sol = solve_cubic_subproblem(&sub, 1e-12).unwrap();
        prop_assert!(sub.residual(&sol.d).unwrap() <= 1e-10);
    }

    #[test]
    fn regularized_operator_matches_shift(v in arb_point(6), a in arb_point(6), mu in 0.0..2.0f64) {
        let inst = quadratic(3, 3);
        let z = PointZ::from_stacked(&v, 3).unwrap();
        let anchor = PointZ::from_stacked(&a, 3).unwrap();
        let reg = RegularizedOracle::new(inst.oracle(), anchor.clone(), mu).unwrap();
        let mut c = OracleCounts::default();
        let lhs = operator_f(&reg, &z, &mut c).unwrap();
        let rhs = operator_f(inst.oracle(), &z, &mut c).unwrap().axpy(mu, &z.sub(&anchor).unwrap()).unwrap();
        prop_assert!(norm_z(&lhs.sub(&rhs).unwrap()) <= 1e-12 * (1.0 + norm_z(&rhs)));
    }

    #[test]
    fn merit_vanishes_only_at_solution(v in arb_point(6)) {
        let inst = quadratic(4, 3);
        let zs = inst.reference_solution.clone().unwrap();
        let z = PointZ::from_stacked(&v, 3).unwrap();
        let m = merit(inst.oracle(), &z, &mut OracleCounts::default()).unwrap();
        let d = distance(&z, &zs).unwrap();
        // strong monotonicity: |F(z)| >= mu |z - z*|
        prop_assert!(m >= 0.5 * inst.params.mu.powi(2) * d * d * (1.0 - 1e-9) - 1e-14);
    }
}
