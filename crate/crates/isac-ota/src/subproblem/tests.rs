use super::*;
use crate::channel::radar_response;
use crate::downlink::{objective_value, snr_numerator};
use crate::linalg::{CVec, C64};
use crate::rng::{complex_normal, real_normal, SeedTree};
use rand::Rng;

struct Instance {
    h: CMat,
    g: CMat,
    u: RVec,
    sigma2: f64,
    gamma: f64,
    p_bs: f64,
    point: TildeVariables,
}

fn instance(n: usize, n_t: usize, seed: u64, real: bool) -> Instance {
    let mut rng = SeedTree::new(seed).stream("subproblem", 0);
    let c = |rng: &mut crate::rng::StreamRng| {
        if real {
            C64::new(real_normal(rng, 1.0), 0.0)
        } else {
            complex_normal(rng, 1.0)
        }
    };
    let h = CMat::from_fn(n, n_t, |_, _| c(&mut rng));
    let g = if real {
        CMat::from_fn(n_t, n_t, |_, _| c(&mut rng)) * C64::new(0.5, 0.0)
    } else {
        radar_response(rng.random_range(0.2..2.9), C64::new(0.8, 0.3), n_t, n_t)
    };
    let u = RVec::from_fn(3 * n, |_, _| real_normal(&mut rng, 1.0));
    let w = CMat::from_fn(n_t, n, |_, _| c(&mut rng));
    let v = CVec::from_fn(n_t, |_, _| c(&mut rng));
    let p_bs = 1.0;
    let row_max = (0..n_t).map(|m| w.row(m).norm_squared() + v[m].norm_sqr()).fold(0.0, f64::max);
    let a_tilde = 1.2 * row_max / p_bs;
    let sigma2 = 0.1;
    let point = TildeVariables { w_t_tilde: w, v_tilde: v, a_tilde };
    let slots = crate::downlink::split_control(&u).unwrap();
    let fmin =
        slots.iter().map(|s| snr_numerator(&point.w_t_tilde, &point.v_tilde, &g, s)).fold(f64::INFINITY, f64::min);
    let gamma = 0.5 * fmin / (n as f64 * sigma2 * a_tilde);
    Instance { h, g, u, sigma2, gamma, p_bs, point }
}

fn build(inst: &Instance) -> RealifiedProgram {
    realify(&inst.h, &inst.g, &inst.u, inst.sigma2, inst.gamma, inst.p_bs, &inst.point, &RealifyOptions::default())
        .unwrap()
}

fn random_tilde(n: usize, n_t: usize, rng: &mut crate::rng::StreamRng, real: bool) -> TildeVariables {
    let c = |rng: &mut crate::rng::StreamRng| {
        if real {
            C64::new(real_normal(rng, 1.0), 0.0)
        } else {
            complex_normal(rng, 1.0)
        }
    };
    TildeVariables {
        w_t_tilde: CMat::from_fn(n_t, n, |_, _| c(rng)),
        v_tilde: CVec::from_fn(n_t, |_, _| c(rng)),
        a_tilde: rng.random_range(0.1..3.0),
    }
}

#[test]
fn realified_objective_matches_complex_form() {
    for real in [true, false] {
        let inst = instance(2, 3, 11, real);
        let prog = build(&inst);
        let layout = prog.layout.unwrap();
        let mut rng = SeedTree::new(5).stream("pts", 0);
        for _ in 0..50 {
            let t = random_tilde(2, 3, &mut rng, real);
            let x = layout.to_vector(&t).unwrap();
            let want = objective_value(&t, &inst.h, &inst.u, inst.sigma2).unwrap();
            let got = prog.objective(&x);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn realified_constraints_match_complex_forms() {
    let inst = instance(2, 3, 12, false);
    let prog = build(&inst);
    let layout = prog.layout.unwrap();
    assert_eq!(prog.affine.len(), 3);
    assert_eq!(prog.cones.len(), 3);
    assert_eq!(prog.bounds.len(), 1);
    let slots = crate::downlink::split_control(&inst.u).unwrap();
    let mut rng = SeedTree::new(6).stream("pts", 0);
    let kappa = 2.0 * inst.sigma2;
    for _ in 0..20 {
        let t = random_tilde(2, 3, &mut rng, false);
        let x = layout.to_vector(&t).unwrap();
        let g = prog.constraint_values(&x);
        for (k, s) in slots.iter().enumerate() {
            let lin = crate::downlink::linearize_snr_constraint(&inst.point, &inst.g, s).unwrap();
            let want = kappa * inst.gamma * t.a_tilde - lin.evaluate(&t.w_t_tilde, &t.v_tilde);
            assert!((g[k] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        let powers = t.antenna_powers();
        for m in 0..3 {
            let want = powers[m] - inst.p_bs * t.a_tilde;
            assert!((g[3 + m] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

#[test]
fn expansion_point_is_feasible_for_its_rows() {
    let inst = instance(2, 3, 13, false);
    let prog = build(&inst);
    let x = prog.layout.unwrap().to_vector(&inst.point).unwrap();
    assert!(prog.constraint_values(&x).iter().all(|g| *g < 0.0));
}

#[test]
fn hessian_is_psd() {
    let prog = build(&instance(3, 4, 14, false));
    let eig = prog.hessian_dense().symmetric_eigen();
    assert!(eig.eigenvalues.min() >= -1e-10);
}

#[test]
fn unconstrained_quadratic_matches_normal_equations() {
    let mut rng = SeedTree::new(15).stream("q", 0);
    let n = 6;
    let a = RMat::from_fn(n, n, |_, _| real_normal(&mut rng, 1.0));
    let m = a.transpose() * &a + RMat::identity(n, n) * 0.1;
    let q = RVec::from_fn(n, |_, _| real_normal(&mut rng, 1.0));
    let mut prog = RealifiedProgram::new(n);
    prog.blocks.push(HessianBlock { vars: (0..n).collect(), matrix: Arc::new(m.clone()) });
    prog.linear = q.clone();
    let r = solve(&prog, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    let want = (&m * 2.0).lu().solve(&(-&q)).unwrap();
    assert!((&r.x - &want).norm() <= 1e-8 * want.norm());
}

fn two_var() -> RealifiedProgram {
    let mut p = RealifiedProgram::new(2);
    p.blocks.push(HessianBlock { vars: vec![0, 1], matrix: Arc::new(RMat::identity(2, 2)) });
    p.affine.push(AffineRow { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 2.0 });
    p
}

#[test]
fn two_variable_kkt_example() {
    let r = solve(&two_var(), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.x[0] - 1.0).abs() <= 1e-6 && (r.x[1] - 1.0).abs() <= 1e-6, "{:?}", r.x);
    assert!((r.objective - 2.0).abs() <= 1e-6);
    assert!((r.multipliers[0] - 2.0).abs() <= 1e-5);
    assert!(r.max_violation <= 1e-7 && r.stationarity <= 1e-7);
}

#[test]
fn infeasible_program_is_reported() {
    let mut p = RealifiedProgram::new(1);
    p.linear[0] = 1.0;
    p.affine.push(AffineRow { coeffs: vec![(0, 1.0)], rhs: 1.0 });
    p.affine.push(AffineRow { coeffs: vec![(0, -1.0)], rhs: 0.0 });
    let r = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn downlink_program_solves_to_tolerance() {
    let inst = instance(2, 3, 16, false);
    let prog = build(&inst);
    let r = solve(&prog, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(r.max_violation <= 1e-7);
    assert!(r.stationarity <= 1e-7);
    let x0 = prog.layout.unwrap().to_vector(&inst.point).unwrap();
    assert!(r.objective <= prog.objective(&x0) + 1e-9);
    let warm = solve_from(&prog, &x0, &SolverOptions::default()).unwrap();
    assert!((warm.objective - r.objective).abs() <= 1e-6 * r.objective.abs().max(1.0));
}

#[test]
fn structured_and_dense_newton_paths_agree() {
    let inst = instance(3, 4, 17, false);
    let prog = build(&inst);
    let dense = solve(&prog, &SolverOptions { dense_limit: usize::MAX, ..Default::default() }).unwrap();
    let structured = solve(&prog, &SolverOptions { dense_limit: 0, ..Default::default() }).unwrap();
    assert_eq!(dense.status, SolveStatus::Optimal);
    assert_eq!(structured.status, SolveStatus::Optimal, "{structured:?}");
    assert!((dense.objective - structured.objective).abs() <= 1e-7 * dense.objective.abs().max(1.0));
}

#[test]
fn objective_is_invariant_under_variable_permutation() {
    let inst = instance(2, 3, 18, false);
    let prog = build(&inst);
    let base = solve(&prog, &SolverOptions::default()).unwrap();
    let mut rng = SeedTree::new(19).stream("perm", 0);
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..prog.n_vars).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let r = solve(&prog.permuted(&perm).unwrap(), &SolverOptions::default()).unwrap();
        assert!((r.objective - base.objective).abs() <= 1e-6 * base.objective.abs().max(1e-12));
    }
}

#[test]
fn weak_duality_holds_at_returned_multipliers() {
    for seed in 20..25 {
        let prog = build(&instance(2, 3, seed, false));
        let r = solve(&prog, &SolverOptions::default()).unwrap();
        let d = dual_bound(&prog, &r.multipliers).unwrap();
        // inf L ≤ L(x, λ); x may sit within tol_feas outside the feasible set.
        let lag =
            r.objective + prog.constraint_values(&r.x).iter().zip(&r.multipliers).map(|(g, l)| g * l).sum::<f64>();
        assert!(d <= lag + 1e-10 * lag.abs().max(1.0), "dual {d} > L(x, λ) {lag}");
        assert!(r.objective - d <= 1e-5 * r.objective.abs().max(1.0), "gap {}", r.objective - d);
    }
    let zero = vec![0.0; two_var().n_constraints()];
    assert!(dual_bound(&two_var(), &zero).unwrap() <= 2.0);
}

#[test]
fn solve_is_deterministic() {
    let prog = build(&instance(2, 3, 26, false));
    let a = solve(&prog, &SolverOptions::default()).unwrap();
    let b = solve(&prog, &SolverOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scaling_objective_keeps_blocks_shared() {
    let mut prog = build(&instance(3, 2, 27, false));
    prog.scale_objective(2.0);
    assert!(Arc::ptr_eq(&prog.blocks[0].matrix, &prog.blocks[1].matrix));
    assert!(!Arc::ptr_eq(&prog.blocks[0].matrix, &prog.blocks[3].matrix));
}

#[test]
fn dump_round_trip_is_exact() {
    let prog = build(&instance(2, 3, 28, false));
    let text = dump_program(&prog);
    let back = parse_program_dump(&text).unwrap();
    assert_eq!(back, prog);
    assert!(Arc::ptr_eq(&back.blocks[0].matrix, &back.blocks[1].matrix));
    assert_eq!(dump_program(&back), text);
    let t = two_var();
    assert_eq!(parse_program_dump(&dump_program(&t)).unwrap(), t);
}

#[test]
fn dump_parse_errors_carry_line_numbers() {
    let text = dump_program(&two_var());
    let bad = text.replace("row 2 2", "row x 2");
    match parse_program_dump(&bad) {
        Err(Error::Parse { line, .. }) => {
            assert_eq!(line, text.lines().position(|l| l.starts_with("row")).unwrap() + 1)
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_program_dump(""), Err(Error::Parse { .. })));
    assert!(matches!(parse_program_dump(&text.replace("block 0 2 0 1", "block 0 2 0 7")), Err(Error::Parse { .. })));
    assert!(matches!(parse_program_dump(&format!("{text}extra\n")), Err(Error::Parse { .. })));
}

#[test]
fn validate_rejects_overlapping_blocks() {
    let mut p = two_var();
    p.blocks.push(HessianBlock { vars: vec![1], matrix: Arc::new(RMat::identity(1, 1)) });
    assert!(p.validate().is_err());
}
