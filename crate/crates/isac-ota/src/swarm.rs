//! Double-integrator UAV dynamics, the stacked swarm model and the LQR machinery.

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{kron, RMat, RVec};
use crate::rng::real_normal;

/// Per-UAV state is `[px, py, pz, vx, vy, vz]`, input is acceleration.
pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct UavMatrices {
    pub a_bar: RMat,
    pub b_bar: RMat,
    pub dt: f64,
}

pub fn single_uav_matrices(dt: f64) -> Result<UavMatrices> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut a_bar = RMat::identity(6, 6);
    let mut b_bar = RMat::zeros(6, 3);
    for i in 0..3 {
        a_bar[(i, i + 3)] = dt;
        b_bar[(i, i)] = 0.5 * dt * dt;
        b_bar[(i + 3, i)] = dt;
    }
    Ok(UavMatrices { a_bar, b_bar, dt })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmSystem {
    pub n_uavs: usize,
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub obs_noise_var: f64,
    pub uav: UavMatrices,
}

pub fn stack_system(n_uavs: usize, uav: UavMatrices, obs_noise_var: f64) -> Result<SwarmSystem> {
    if n_uavs == 0 {
        return Err(Error::InvalidArgument("swarm needs at least one UAV".into()));
    }
    if !(obs_noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("observation noise variance {obs_noise_var} < 0")));
    }
    let eye = RMat::identity(n_uavs, n_uavs);
    Ok(SwarmSystem {
        n_uavs,
        a: kron(&eye, &uav.a_bar),
        b: kron(&eye, &uav.b_bar),
        c: RMat::identity(STATE_DIM * n_uavs, STATE_DIM * n_uavs),
        obs_noise_var,
        uav,
    })
}

impl SwarmSystem {
    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.n_uavs
    }

    pub fn input_dim(&self) -> usize {
        INPUT_DIM * self.n_uavs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: RVec,
    pub k: usize,
}

impl SwarmState {
    pub fn new(x: RVec) -> Self {
        Self { x, k: 0 }
    }

    pub fn position(&self, n: usize) -> [f64; 3] {
        let o = STATE_DIM * n;
        [self.x[o], self.x[o + 1], self.x[o + 2]]
    }
}

/// `x' = A x + B u`, evaluated UAV by UAV.
pub fn step_dynamics(sys: &SwarmSystem, state: &SwarmState, u: &RVec) -> Result<SwarmState> {
    check_dims("state length", state.x.len(), sys.state_dim())?;
    check_dims("control length", u.len(), sys.input_dim())?;
    let mut x = RVec::zeros(sys.state_dim());
    for n in 0..sys.n_uavs {
        let xs = state.x.rows(STATE_DIM * n, STATE_DIM);
        let us = u.rows(INPUT_DIM * n, INPUT_DIM);
        let next = &sys.uav.a_bar * xs + &sys.uav.b_bar * us;
        x.rows_mut(STATE_DIM * n, STATE_DIM).copy_from(&next);
    }
    Ok(SwarmState { x, k: state.k + 1 })
}

pub fn observe<R: Rng + ?Sized>(sys: &SwarmSystem, state: &SwarmState, rng: &mut R) -> RVec {
    if sys.obs_noise_var == 0.0 {
        return state.x.clone();
    }
    state.x.map(|v| v + real_normal(rng, sys.obs_noise_var))
}

/// Diagonal weight pattern applied identically to every UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightPattern {
    pub q_position: f64,
    pub q_velocity: f64,
    pub r_control: f64,
}

impl Default for WeightPattern {
    fn default() -> Self {
        Self { q_position: 1.0, q_velocity: 0.1, r_control: 1.0 }
    }
}

impl WeightPattern {
    pub fn q_block(&self) -> RMat {
        let d = [self.q_position, self.q_position, self.q_position, self.q_velocity, self.q_velocity, self.q_velocity];
        RMat::from_diagonal(&RVec::from_row_slice(&d))
    }

    pub fn r_block(&self) -> RMat {
        RMat::identity(3, 3) * self.r_control
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlWeights {
    pub q: RMat,
    pub r: RMat,
    pub p: RMat,
}

impl ControlWeights {
    pub fn solve(sys: &SwarmSystem, q: RMat, r: RMat, tol: f64, max_iter: usize) -> Result<Self> {
        let p = riccati_solve(sys, &q, &r, tol, max_iter)?;
        Ok(Self { q, r, p })
    }

    pub fn from_pattern(sys: &SwarmSystem, pattern: &WeightPattern, tol: f64, max_iter: usize) -> Result<Self> {
        let eye = RMat::identity(sys.n_uavs, sys.n_uavs);
        Self::solve(sys, kron(&eye, &pattern.q_block()), kron(&eye, &pattern.r_block()), tol, max_iter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: RMat,
    pub iterations: usize,
    pub residual: f64,
}

/// Value iteration `P ← Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA` from `P = Q` until the
/// relative Frobenius change drops to `tol`.
pub fn riccati_iterate(a: &RMat, b: &RMat, q: &RMat, r: &RMat, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    let n = a.nrows();
    check_dims("Q rows", q.nrows(), n)?;
    check_dims("B rows", b.nrows(), n)?;
    check_dims("R rows", r.nrows(), b.ncols())?;
    if Cholesky::new(r.clone()).is_none() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_map(a, &at, b, &bt, q, r, &p)?;
        let denom = next.norm().max(f64::MIN_POSITIVE);
        residual = (&next - &p).norm() / denom;
        p = next;
        if residual <= tol {
            return Ok(RiccatiSolution { p, iterations: it, residual });
        }
    }
    Err(Error::ConvergenceFailure { iterations: max_iter, residual })
}

fn riccati_map(a: &RMat, at: &RMat, b: &RMat, bt: &RMat, q: &RMat, r: &RMat, p: &RMat) -> Result<RMat> {
    let pa = p * a;
    let pb = p * b;
    let s = r + bt * &pb;
    let chol = Cholesky::new(s).ok_or_else(|| Error::Numerical("R + BᵀPB lost definiteness".into()))?;
    let k = chol.solve(&(bt * &pa));
    let mut next = q + at * &pa - (at * &pb) * k;
    crate::linalg::symmetrize(&mut next);
    Ok(next)
}

/// `‖Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA − P‖_F`.
pub fn riccati_residual(a: &RMat, b: &RMat, q: &RMat, r: &RMat, p: &RMat) -> Result<f64> {
    let next = riccati_map(a, &a.transpose(), b, &b.transpose(), q, r, p)?;
    Ok((next - p).norm())
}

/// Returns the common diagonal block when `m` is `I_N ⊗ block`.
fn identical_block(m: &RMat, n: usize, bs: usize) -> Option<RMat> {
    if m.nrows() != n * bs || m.ncols() != n * bs {
        return None;
    }
    let block = m.view((0, 0), (bs, bs)).into_owned();
    for i in 0..n {
        for j in 0..n {
            let v = m.view((i * bs, j * bs), (bs, bs));
            let same =
                if i == j { v.iter().zip(block.iter()).all(|(x, y)| x == y) } else { v.iter().all(|x| *x == 0.0) };
            if !same {
                return None;
            }
        }
    }
    Some(block)
}

/// Riccati solution for the stacked system. When the weights are themselves
/// `I_N`-Kronecker the problem decouples and the single-UAV equation is solved.
pub fn riccati_solve(sys: &SwarmSystem, q: &RMat, r: &RMat, tol: f64, max_iter: usize) -> Result<RMat> {
    check_dims("Q size", q.nrows(), sys.state_dim())?;
    check_dims("R size", r.nrows(), sys.input_dim())?;
    let n = sys.n_uavs;
    if let (Some(qb), Some(rb)) = (identical_block(q, n, STATE_DIM), identical_block(r, n, INPUT_DIM)) {
        let sol = riccati_iterate(&sys.uav.a_bar, &sys.uav.b_bar, &qb, &rb, tol, max_iter)?;
        return Ok(kron(&RMat::identity(n, n), &sol.p));
    }
    Ok(riccati_iterate(&sys.a, &sys.b, q, r, tol, max_iter)?.p)
}

/// Feedback gain `K = (R+BᵀPB)⁻¹BᵀPA`, so that `u = −K x`.
pub fn lqr_gain(sys: &SwarmSystem, weights: &ControlWeights) -> Result<RMat> {
    let bt = sys.b.transpose();
    let s = &weights.r + &bt * &weights.p * &sys.b;
    let chol = Cholesky::new(s).ok_or_else(|| Error::Numerical("R + BᵀPB is singular".into()))?;
    Ok(chol.solve(&(bt * &weights.p * &sys.a)))
}

pub fn lqr_control(sys: &SwarmSystem, weights: &ControlWeights, x: &RVec) -> Result<RVec> {
    check_dims("state length", x.len(), sys.state_dim())?;
    Ok(-(lqr_gain(sys, weights)? * x))
}

/// One-step cost `uᵀRu + (Ax+Bu)ᵀP(Ax+Bu)` minimized by the LQR input.
pub fn one_step_cost(sys: &SwarmSystem, weights: &ControlWeights, x: &RVec, u: &RVec) -> f64 {
    let next = &sys.a * x + &sys.b * u;
    u.dot(&(&weights.r * u)) + next.dot(&(&weights.p * &next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::Rng;

    fn default_sys(n: usize) -> SwarmSystem {
        stack_system(n, single_uav_matrices(0.02).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn uav_blocks_at_default_dt() {
        let m = single_uav_matrices(0.02).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((m.b_bar[(i, j)] - 2e-4 * e).abs() < 1e-18);
                assert!((m.b_bar[(i + 3, j)] - 0.02 * e).abs() < 1e-18);
            }
        }
        assert!((m.a_bar.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uav_blocks_limits() {
        let m = single_uav_matrices(1e-12).unwrap();
        assert!((m.a_bar - RMat::identity(6, 6)).norm() < 1e-9);
        assert!(m.b_bar.norm() < 1e-9);
        let m = single_uav_matrices(1.0).unwrap();
        let mut want = RMat::zeros(6, 3);
        for i in 0..3 {
            want[(i, i)] = 0.5;
            want[(i + 3, i)] = 1.0;
        }
        assert_eq!(m.b_bar, want);
        assert!(single_uav_matrices(0.0).is_err());
        assert!(single_uav_matrices(-1.0).is_err());
    }

    #[test]
    fn stacking_shapes() {
        let u = single_uav_matrices(1.0).unwrap();
        let s1 = stack_system(1, u.clone(), 0.0).unwrap();
        assert_eq!(s1.a, u.a_bar);
        assert_eq!(s1.b, u.b_bar);
        let s2 = stack_system(2, u.clone(), 0.0).unwrap();
        assert_eq!(s2.a.view((6, 6), (6, 6)).into_owned(), u.a_bar);
        assert!(s2.a.view((0, 6), (6, 6)).iter().all(|v| *v == 0.0));
        let s50 = default_sys(50);
        assert_eq!(s50.a.shape(), (300, 300));
        assert_eq!(s50.b.shape(), (300, 150));
        assert!(stack_system(0, u, 0.0).is_err());
    }

    #[test]
    fn stepping_kinematics() {
        let sys = stack_system(1, single_uav_matrices(1.0).unwrap(), 0.0).unwrap();
        let s = SwarmState::new(RVec::from_row_slice(&[0., 0., 0., 1., 0., 0.]));
        let next = step_dynamics(&sys, &s, &RVec::zeros(3)).unwrap();
        assert_eq!(next.x.as_slice(), &[1., 0., 0., 1., 0., 0.]);
        assert_eq!(next.k, 1);
        let zero = step_dynamics(&sys, &SwarmState::new(RVec::zeros(6)), &RVec::zeros(3)).unwrap();
        assert!(zero.x.iter().all(|v| *v == 0.0));
        assert!(step_dynamics(&sys, &s, &RVec::zeros(2)).is_err());
    }

    #[test]
    fn stepping_matches_blockwise_and_dense() {
        let sys = stack_system(3, single_uav_matrices(0.3).unwrap(), 0.0).unwrap();
        let mut rng = SeedTree::new(11).stream("t", 0);
        let x = RVec::from_fn(18, |_, _| rng.random_range(-5.0..5.0));
        let u = RVec::from_fn(9, |_, _| rng.random_range(-5.0..5.0));
        let got = step_dynamics(&sys, &SwarmState::new(x.clone()), &u).unwrap().x;
        for n in 0..3 {
            let want = &sys.uav.a_bar * x.rows(6 * n, 6) + &sys.uav.b_bar * u.rows(3 * n, 3);
            assert!((got.rows(6 * n, 6) - want).norm() < 1e-12);
        }
        assert!((got - (&sys.a * &x + &sys.b * &u)).norm() < 1e-12);
    }

    #[test]
    fn observation_noise() {
        let sys = default_sys(1);
        let s = SwarmState::new(RVec::from_element(6, 3.0));
        let mut rng = SeedTree::new(1).stream("obs", 0);
        assert_eq!(observe(&sys, &s, &mut rng), s.x);
        let noisy = stack_system(1, single_uav_matrices(0.02).unwrap(), 1.0).unwrap();
        let mut acc = Vec::new();
        for _ in 0..(100_000 / 6 + 1) {
            let y = observe(&noisy, &s, &mut rng);
            acc.extend(y.iter().map(|v| v - 3.0));
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let var = acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (acc.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let y1 = observe(&noisy, &s, &mut SeedTree::new(5).stream("obs", 0));
        let y2 = observe(&noisy, &s, &mut SeedTree::new(5).stream("obs", 0));
        assert_eq!(y1, y2);
    }

    #[test]
    fn scalar_riccati_golden_ratio() {
        let one = RMat::identity(1, 1);
        let sol = riccati_iterate(&one, &one, &one, &one, 1e-12, 1000).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() < 1e-9);
        let sys = SwarmSystem {
            n_uavs: 1,
            a: one.clone(),
            b: one.clone(),
            c: one.clone(),
            obs_noise_var: 0.0,
            uav: UavMatrices { a_bar: one.clone(), b_bar: one.clone(), dt: 1.0 },
        };
        let w = ControlWeights { q: one.clone(), r: one.clone(), p: sol.p.clone() };
        let k = lqr_gain(&sys, &w).unwrap();
        assert!((k[(0, 0)] - (phi - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn deadbeat_limit() {
        let mut rng = SeedTree::new(2).stream("t", 0);
        let a = RMat::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = RMat::identity(4, 4);
        let q = RMat::identity(4, 4) * 2.0;
        let r = RMat::identity(4, 4) * 1e-9;
        let sol = riccati_iterate(&a, &b, &q, &r, 1e-12, 1000).unwrap();
        assert!((sol.p - q).norm() < 1e-6);
    }

    #[test]
    fn default_weights_fixed_point() {
        let sys = default_sys(1);
        let w = ControlWeights::from_pattern(&sys, &WeightPattern::default(), 1e-9, 100_000).unwrap();
        let res = riccati_residual(&sys.a, &sys.b, &w.q, &w.r, &w.p).unwrap();
        assert!(res <= 10.0 * 1e-9 * w.p.norm(), "{res}");
        assert!((&w.p - w.p.transpose()).norm() <= 1e-10 * w.p.norm());
    }

    #[test]
    fn kronecker_weights_keep_block_structure() {
        let sys = default_sys(3);
        let fast = ControlWeights::from_pattern(&sys, &WeightPattern::default(), 1e-11, 100_000).unwrap();
        let dense = riccati_iterate(&sys.a, &sys.b, &fast.q, &fast.r, 1e-11, 100_000).unwrap().p;
        assert!((&dense - &fast.p).norm() <= 1e-7 * fast.p.norm());
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(dense.view((6 * i, 6 * j), (6, 6)).norm() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn lqr_closed_loop_converges() {
        let sys = default_sys(5);
        let w = ControlWeights::from_pattern(&sys, &WeightPattern::default(), 1e-9, 100_000).unwrap();
        let k = lqr_gain(&sys, &w).unwrap();
        let mut rng = SeedTree::new(3).stream("t", 0);
        let x0 = RVec::from_fn(30, |_, _| rng.random_range(-50.0..50.0));
        let mut s = SwarmState::new(x0.clone());
        for _ in 0..2000 {
            let u = -(&k * &s.x);
            s = step_dynamics(&sys, &s, &u).unwrap();
        }
        assert!(s.x.norm() < 1e-3 * x0.norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lqr_input_minimizes_one_step_cost(seed in 0u64..1000) {
            let sys = default_sys(2);
            let w = ControlWeights::from_pattern(&sys, &WeightPattern::default(), 1e-9, 100_000).unwrap();
            let mut rng = SeedTree::new(seed).stream("t", 0);
            let x = RVec::from_fn(12, |_, _| rng.random_range(-10.0..10.0));
            let u = lqr_control(&sys, &w, &x).unwrap();
            let base = one_step_cost(&sys, &w, &x, &u);
            for _ in 0..100 {
                let d = RVec::from_fn(6, |_, _| rng.random_range(-1.0..1.0)).normalize();
                let c = one_step_cost(&sys, &w, &x, &(&u + d * 1e-4));
                prop_assert!(c >= base - 1e-9 * base.abs().max(1.0));
            }
        }

        #[test]
        fn stacked_step_equals_independent_steps(seed in 0u64..1000, n in 1usize..5) {
            let sys = stack_system(n, single_uav_matrices(0.02).unwrap(), 0.0).unwrap();
            let mut rng = SeedTree::new(seed).stream("t", 1);
            let x = RVec::from_fn(6 * n, |_, _| rng.random_range(-100.0..100.0));
            let u = RVec::from_fn(3 * n, |_, _| rng.random_range(-10.0..10.0));
            let got = step_dynamics(&sys, &SwarmState::new(x.clone()), &u).unwrap().x;
            let single = stack_system(1, sys.uav.clone(), 0.0).unwrap();
            for i in 0..n {
                let s = SwarmState::new(x.rows(6 * i, 6).into_owned());
                let one = step_dynamics(&single, &s, &u.rows(3 * i, 3).into_owned()).unwrap().x;
                prop_assert!((got.rows(6 * i, 6) - one).amax() <= 1e-12);
            }
        }
    }
}
