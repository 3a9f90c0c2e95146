//! Primal-dual interior-point method (Mehrotra predictor-corrector), with a
//! primal log-barrier method and Phase-I stage as fallback.
//!
//! Newton systems have the shape `K + Σ uᵢuᵢᵀ` with `K` block diagonal (one
//! block per objective block plus a diagonal elsewhere) and one sparse
//! rank-one term per constraint. Small systems are assembled and factored
//! densely; larger ones use a product-form Cholesky factorization with one
//! block factor per distinct block, which is what makes the downlink program
//! (N identical precoder-column blocks) cheap.

use std::sync::Arc;

use nalgebra::{Cholesky, LU};

use super::RealifiedProgram;
use crate::error::{check_dims, Error, Result};
use crate::linalg::{RMat, RVec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on the relative constraint violation, see
    /// [`RealifiedProgram::relative_violation`].
    pub tol_feas: f64,
    pub tol_opt: f64,
    /// Newton steps over both phases.
    pub max_iter: usize,
    /// Barrier parameter growth factor.
    pub mu: f64,
    /// Largest system solved by dense Cholesky.
    pub dense_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_feas: 1e-7, tol_opt: 1e-7, max_iter: 500, mu: 20.0, dense_limit: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: RVec,
    pub objective: f64,
    pub max_violation: f64,
    pub relative_violation: f64,
    /// `‖∇f + Σλᵢ∇gᵢ‖∞ / max(1, ‖∇f‖∞)`.
    pub stationarity: f64,
    /// Duality gap estimate `−Σλᵢgᵢ` at the returned point.
    pub gap: f64,
    /// Multipliers in constraint order (affine, cones, bounds).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct SparseVec {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseVec {
    fn dot(&self, x: &RVec) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    fn axpy(&self, alpha: f64, y: &mut RVec) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            y[i] += alpha * v;
        }
    }
}

/// `H = Σ_b s·(M_b + M_bᵀ) + diag(d) + Σ uᵢuᵢᵀ`.
struct NewtonSystem<'a> {
    n: usize,
    blocks: &'a [(Vec<usize>, Arc<RMat>)],
    block_scale: f64,
    diag: RVec,
    low_rank: Vec<SparseVec>,
}

impl NewtonSystem<'_> {
    fn apply(&self, x: &RVec) -> RVec {
        let mut y = self.diag.component_mul(x);
        if self.block_scale != 0.0 {
            for (vars, m) in self.blocks {
                let xb = RVec::from_iterator(vars.len(), vars.iter().map(|&j| x[j]));
                let yb = (&**m * &xb + m.transpose() * &xb) * self.block_scale;
                for (k, &j) in vars.iter().enumerate() {
                    y[j] += yb[k];
                }
            }
        }
        for u in &self.low_rank {
            u.axpy(u.dot(x), &mut y);
        }
        y
    }

    fn dense(&self) -> RMat {
        let mut h = RMat::from_diagonal(&self.diag);
        if self.block_scale != 0.0 {
            for (vars, m) in self.blocks {
                for (a, &i) in vars.iter().enumerate() {
                    for (b, &j) in vars.iter().enumerate() {
                        h[(i, j)] += self.block_scale * (m[(a, b)] + m[(b, a)]);
                    }
                }
            }
        }
        for u in &self.low_rank {
            for (&i, vi) in u.idx.iter().zip(&u.val) {
                for (&j, vj) in u.idx.iter().zip(&u.val) {
                    h[(i, j)] += vi * vj;
                }
            }
        }
        h
    }

    fn factor(&self, dense_limit: usize) -> Result<Factor> {
        if self.n <= dense_limit {
            let h = self.dense();
            if let Some(ch) = Cholesky::new(h.clone()) {
                return Ok(Factor::Dense(ch));
            }
            let lu = h.lu();
            if lu.is_invertible() {
                return Ok(Factor::DenseLu(lu));
            }
            return Err(Error::Numerical("singular Newton system".into()));
        }
        self.structured().map(Factor::Structured)
    }

    fn structured(&self) -> Result<Structured> {
        let n = self.n;
        let scale = self.diag.iter().cloned().fold(1.0, f64::max);
        let ridge = 1e-12 * scale;
        let mut in_block = vec![false; n];
        let mut groups: Vec<(*const RMat, Vec<u64>, Arc<RMat>)> = Vec::new();
        let mut blocks = Vec::new();
        if self.block_scale != 0.0 {
            for (vars, m) in self.blocks {
                for &j in vars {
                    in_block[j] = true;
                }
                let key_ptr = Arc::as_ptr(m);
                let key_diag: Vec<u64> = vars.iter().map(|&j| self.diag[j].to_bits()).collect();
                if let Some(g) = groups.iter().find(|g| g.0 == key_ptr && g.1 == key_diag) {
                    blocks.push((vars.clone(), g.2.clone()));
                    continue;
                }
                let mut k = (&**m + m.transpose()) * self.block_scale;
                for (a, &j) in vars.iter().enumerate() {
                    k[(a, a)] += self.diag[j];
                }
                let l = match Cholesky::new(k.clone()) {
                    Some(ch) => ch.unpack(),
                    None => {
                        // Singular block (a direction without curvature):
                        // a tiny ridge, corrected by iterative refinement.
                        let kmax = (0..vars.len()).map(|a| k[(a, a)]).fold(scale, f64::max);
                        for a in 0..vars.len() {
                            k[(a, a)] += 1e-12 * kmax;
                        }
                        Cholesky::new(k).ok_or_else(|| Error::Numerical("indefinite objective block".into()))?.unpack()
                    }
                };
                let l = Arc::new(l);
                groups.push((key_ptr, key_diag, l.clone()));
                blocks.push((vars.clone(), l));
            }
        }
        let free = (0..n)
            .filter(|&j| !in_block[j])
            .map(|j| {
                let d = self.diag[j];
                (j, if d > 0.0 { d.sqrt() } else { ridge.sqrt() })
            })
            .collect();
        Structured::new(n, blocks, free, &self.low_rank)
    }
}

enum Factor {
    Dense(Cholesky<f64, nalgebra::Dyn>),
    DenseLu(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Structured(Structured),
}

impl Factor {
    fn solve(&self, b: &RVec) -> RVec {
        match self {
            Factor::Dense(ch) => ch.solve(b),
            Factor::DenseLu(lu) => lu.solve(b).unwrap_or_else(|| RVec::from_element(b.len(), f64::NAN)),
            Factor::Structured(s) => s.solve(b),
        }
    }
}

/// Product-form Cholesky `H = L₀ L₁⋯L_k D L_kᵀ⋯L₁ᵀ L₀ᵀ`: `L₀` is the block
/// Cholesky factor of the block-diagonal part and each `L_g = I +
/// strict_lower(p_g β_gᵀ)` absorbs one rank-one term through the stable update
/// of Gill, Golub, Murray and Saunders. Unlike the Woodbury identity this stays
/// accurate when the rank-one terms dwarf the block part, which is the normal
/// state of affairs near the end of an interior-point run.
///
/// All updates are swept together row by row, so the inner loops run across
/// updates instead of along one long recurrence.
struct Structured {
    n: usize,
    k: usize,
    /// Variables and lower Cholesky factor.
    blocks: Vec<(Vec<usize>, Arc<RMat>)>,
    /// Off-block variables with the square root of their diagonal.
    free: Vec<(usize, f64)>,
    /// Column `i` holds `p_g[i]` (resp. `β_g[i]`) for every update `g`.
    p: RMat,
    beta: RMat,
    d: RVec,
}

impl Structured {
    fn new(
        n: usize,
        blocks: Vec<(Vec<usize>, Arc<RMat>)>,
        free: Vec<(usize, f64)>,
        low_rank: &[SparseVec],
    ) -> Result<Self> {
        let k = low_rank.len();
        let mut f =
            Self { n, k, blocks, free, p: RMat::zeros(k, n), beta: RMat::zeros(k, n), d: RVec::from_element(n, 1.0) };
        // Row i of L₀⁻¹U, stored as column i.
        let mut zt = RMat::zeros(k, n);
        for (g, u) in low_rank.iter().enumerate() {
            for (&i, v) in u.idx.iter().zip(&u.val) {
                zt[(g, i)] += v;
            }
        }
        for (vars, l) in &f.blocks {
            let mut m = RMat::from_fn(vars.len(), k, |a, g| zt[(g, vars[a])]);
            l.solve_lower_triangular_mut(&mut m);
            for (a, &j) in vars.iter().enumerate() {
                for g in 0..k {
                    zt[(g, j)] = m[(a, g)];
                }
            }
        }
        for &(j, s) in &f.free {
            zt.column_mut(j).unscale_mut(s);
        }
        let mut t_prev = vec![1.0; k];
        // acc[g·k + h]: running sum of update g's recurrence applied to z_h.
        let mut acc = vec![0.0; k * k];
        let mut w = vec![0.0; k];
        for i in 0..n {
            w.copy_from_slice(zt.column(i).as_slice());
            let mut di = 1.0;
            for g in 0..k {
                let pg = w[g];
                if pg == 0.0 {
                    continue;
                }
                let t = t_prev[g] + pg * pg / di;
                let bg = pg / (di * t);
                di *= t / t_prev[g];
                t_prev[g] = t;
                f.p[(g, i)] = pg;
                f.beta[(g, i)] = bg;
                let row = &mut acc[g * k..(g + 1) * k];
                for h in g + 1..k {
                    w[h] -= pg * row[h];
                    row[h] += bg * w[h];
                }
            }
            f.d[i] = di;
        }
        if f.d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Numerical("product-form factorization broke down".into()));
        }
        Ok(f)
    }

    fn l0_solve(&self, b: &mut RVec) {
        for (vars, l) in &self.blocks {
            let mut bb = RVec::from_iterator(vars.len(), vars.iter().map(|&j| b[j]));
            l.solve_lower_triangular_mut(&mut bb);
            for (k, &j) in vars.iter().enumerate() {
                b[j] = bb[k];
            }
        }
        for &(j, s) in &self.free {
            b[j] /= s;
        }
    }

    fn l0t_solve(&self, b: &mut RVec) {
        for (vars, l) in &self.blocks {
            let mut bb = RVec::from_iterator(vars.len(), vars.iter().map(|&j| b[j]));
            l.tr_solve_lower_triangular_mut(&mut bb);
            for (k, &j) in vars.iter().enumerate() {
                b[j] = bb[k];
            }
        }
        for &(j, s) in &self.free {
            b[j] /= s;
        }
    }

    fn solve(&self, b: &RVec) -> RVec {
        let mut y = b.clone();
        self.l0_solve(&mut y);
        let mut acc = vec![0.0; self.k];
        for i in 0..self.n {
            let (p, beta) = (self.p.column(i), self.beta.column(i));
            let mut yi = y[i];
            for g in 0..self.k {
                yi -= p[g] * acc[g];
                acc[g] += beta[g] * yi;
            }
            y[i] = yi / self.d[i];
        }
        acc.fill(0.0);
        for i in (0..self.n).rev() {
            let (p, beta) = (self.p.column(i), self.beta.column(i));
            let mut yi = y[i];
            for g in (0..self.k).rev() {
                yi -= beta[g] * acc[g];
                acc[g] += p[g] * yi;
            }
            y[i] = yi;
        }
        self.l0t_solve(&mut y);
        y
    }
}

/// Constraint `h(z) < 0` of the current stage: a program constraint scaled by
/// `weight`, minus the Phase-I slack when present.
#[derive(Debug, Clone, Copy)]
enum Con {
    Affine(usize),
    Cone(usize),
    Bound(usize),
}

struct Stage<'a> {
    prog: &'a RealifiedProgram,
    cons: Vec<Con>,
    weights: Vec<f64>,
    /// Index of the Phase-I slack variable.
    slack: Option<usize>,
    blocks: Vec<(Vec<usize>, Arc<RMat>)>,
}

impl<'a> Stage<'a> {
    fn new(prog: &'a RealifiedProgram, phase1: Option<&RVec>) -> Self {
        let mut cons = Vec::with_capacity(prog.n_constraints());
        cons.extend((0..prog.affine.len()).map(Con::Affine));
        cons.extend((0..prog.cones.len()).map(Con::Cone));
        cons.extend((0..prog.bounds.len()).map(Con::Bound));
        let blocks = prog.blocks.iter().map(|b| (b.vars.clone(), b.matrix.clone())).collect();
        let mut s = Self { prog, cons, weights: Vec::new(), slack: None, blocks };
        match phase1 {
            Some(x0) => {
                s.weights = s.cons.iter().map(|&c| 1.0 / s.grad_norm(c, x0).max(1e-8)).collect();
                s.slack = Some(prog.n_vars);
            }
            None => s.weights = vec![1.0; s.cons.len()],
        }
        s
    }

    fn dim(&self) -> usize {
        self.prog.n_vars + usize::from(self.slack.is_some())
    }

    fn g(&self, c: Con, z: &RVec) -> f64 {
        let p = self.prog;
        match c {
            Con::Affine(i) => {
                let r = &p.affine[i];
                r.rhs - r.coeffs.iter().map(|(j, a)| a * z[*j]).sum::<f64>()
            }
            Con::Cone(i) => {
                let k = &p.cones[i];
                k.vars.iter().map(|&j| z[j] * z[j]).sum::<f64>() - k.scale * z[k.bound_var]
            }
            Con::Bound(i) => p.bounds[i].value - z[p.bounds[i].var],
        }
    }

    fn grad_g(&self, c: Con, z: &RVec) -> SparseVec {
        let p = self.prog;
        match c {
            Con::Affine(i) => {
                let r = &p.affine[i];
                SparseVec { idx: r.coeffs.iter().map(|c| c.0).collect(), val: r.coeffs.iter().map(|c| -c.1).collect() }
            }
            Con::Cone(i) => {
                let k = &p.cones[i];
                let mut idx: Vec<usize> = k.vars.clone();
                let mut val: Vec<f64> = k.vars.iter().map(|&j| 2.0 * z[j]).collect();
                idx.push(k.bound_var);
                val.push(-k.scale);
                SparseVec { idx, val }
            }
            Con::Bound(i) => SparseVec { idx: vec![p.bounds[i].var], val: vec![-1.0] },
        }
    }

    fn grad_norm(&self, c: Con, z: &RVec) -> f64 {
        self.grad_g(c, z).val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn h(&self, k: usize, z: &RVec) -> f64 {
        let v = self.weights[k] * self.g(self.cons[k], z);
        match self.slack {
            Some(s) => v - z[s],
            None => v,
        }
    }

    fn objective(&self, z: &RVec) -> f64 {
        match self.slack {
            Some(s) => z[s],
            None => self.prog.objective(&z.rows(0, self.prog.n_vars).into_owned()),
        }
    }

    /// `t·f(z) − Σ log(−hᵢ(z))`, or +∞ outside the domain.
    fn barrier(&self, t: f64, z: &RVec) -> f64 {
        let mut phi = t * self.objective(z);
        for k in 0..self.cons.len() {
            let h = self.h(k, z);
            if !(h < 0.0) {
                return f64::INFINITY;
            }
            phi -= (-h).ln();
        }
        phi
    }

    fn strictly_feasible(&self, z: &RVec) -> bool {
        (0..self.cons.len()).all(|k| self.h(k, z) < 0.0)
    }

    /// Gradient and Newton system of the barrier function at `z`.
    fn newton_system(&self, t: f64, z: &RVec) -> (RVec, NewtonSystem<'_>) {
        let n = self.dim();
        let mut grad = RVec::zeros(n);
        match self.slack {
            Some(s) => grad[s] = t,
            None => {
                let x = z.rows(0, self.prog.n_vars).into_owned();
                grad.rows_mut(0, self.prog.n_vars).copy_from(&(self.prog.gradient(&x) * t));
            }
        }
        let mut diag = RVec::zeros(n);
        let mut low_rank = Vec::new();
        for (k, &c) in self.cons.iter().enumerate() {
            let h = self.h(k, z);
            let w = self.weights[k];
            let mut gh = self.grad_g(c, z);
            for v in gh.val.iter_mut() {
                *v *= w;
            }
            if let Some(s) = self.slack {
                gh.idx.push(s);
                gh.val.push(-1.0);
            }
            gh.axpy(1.0 / -h, &mut grad);
            if let Con::Cone(i) = c {
                for &j in &self.prog.cones[i].vars {
                    diag[j] += 2.0 * w / -h;
                }
            }
            let inv = 1.0 / h.abs();
            if gh.idx.len() == 1 {
                diag[gh.idx[0]] += (gh.val[0] * inv).powi(2);
            } else {
                for v in gh.val.iter_mut() {
                    *v *= inv;
                }
                low_rank.push(gh);
            }
        }
        let sys = NewtonSystem {
            n,
            blocks: &self.blocks,
            block_scale: if self.slack.is_some() { 0.0 } else { t },
            diag,
            low_rank,
        };
        (grad, sys)
    }
}

/// Factors the system; a tiny ridge is added when it is singular.
fn factor_system(sys: &mut NewtonSystem<'_>, opts: &SolverOptions) -> Result<Factor> {
    match sys.factor(opts.dense_limit) {
        Ok(f) => Ok(f),
        Err(_) => {
            let scale = sys.diag.iter().cloned().fold(1.0, f64::max);
            for d in sys.diag.iter_mut() {
                *d += 1e-12 * scale;
            }
            sys.factor(opts.dense_limit)
        }
    }
}

/// Solves `H x = rhs` with up to three steps of iterative refinement.
fn solve_refined(sys: &NewtonSystem<'_>, factor: &Factor, rhs: &RVec) -> Result<RVec> {
    let mut dx = factor.solve(rhs);
    for _ in 0..3 {
        let r = rhs - sys.apply(&dx);
        if r.norm() <= 1e-14 * rhs.norm() {
            break;
        }
        dx += factor.solve(&r);
    }
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Newton direction".into()));
    }
    Ok(dx)
}

fn newton_direction(sys: &mut NewtonSystem<'_>, grad: &RVec, opts: &SolverOptions) -> Result<RVec> {
    let factor = factor_system(sys, opts)?;
    solve_refined(sys, &factor, &-grad)
}

enum StepResult {
    Moved,
    Stalled,
}

/// One damped Newton step. Returns the Newton decrement squared.
fn newton_step(stage: &Stage<'_>, t: f64, z: &mut RVec, opts: &SolverOptions) -> Result<(f64, StepResult)> {
    let (grad, mut sys) = stage.newton_system(t, z);
    let dz = newton_direction(&mut sys, &grad, opts)?;
    let slope = grad.dot(&dz);
    let lambda2 = -slope;
    if !(slope < 0.0) {
        return Ok((lambda2.max(0.0), StepResult::Stalled));
    }
    // Inside the quadratic-convergence region of a self-concordant barrier
    // the full step is feasible and decreasing; evaluating the barrier there
    // is dominated by rounding in the near-active constraints, so skip it.
    if lambda2 < 0.0625 {
        let trial = &*z + &dz;
        if stage.strictly_feasible(&trial) {
            *z = trial;
            return Ok((lambda2, StepResult::Moved));
        }
    }
    let phi0 = stage.barrier(t, z);
    let mut alpha = 1.0;
    for _ in 0..80 {
        let trial = &*z + &dz * alpha;
        if stage.strictly_feasible(&trial) {
            let phi = stage.barrier(t, &trial);
            if phi <= phi0 + 0.01 * alpha * slope {
                *z = trial;
                return Ok((lambda2, StepResult::Moved));
            }
        }
        alpha *= 0.5;
    }
    Ok((lambda2, StepResult::Stalled))
}

/// Phase I: minimize `s` s.t. `wᵢgᵢ(x) ≤ s`. Returns a strictly feasible point,
/// or `Err(s*)` with the optimal slack when none exists.
fn phase_one(
    prog: &RealifiedProgram,
    x0: &RVec,
    opts: &SolverOptions,
    iters: &mut usize,
) -> Result<std::result::Result<RVec, (f64, RVec)>> {
    let stage = Stage::new(prog, Some(x0));
    let n = prog.n_vars;
    let mut z = RVec::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    let worst = (0..stage.cons.len()).map(|k| stage.h(k, &z)).fold(f64::NEG_INFINITY, f64::max);
    z[n] = worst + 1.0;
    let m = stage.cons.len() as f64;
    let mut t = 1.0;
    loop {
        for _ in 0..200 {
            if *iters >= opts.max_iter {
                return Ok(Err((z[n], z.rows(0, n).into_owned())));
            }
            *iters += 1;
            let (l2, res) = newton_step(&stage, t, &mut z, opts)?;
            if z[n] < 0.0 {
                let x = z.rows(0, n).into_owned();
                if prog.constraint_values(&x).iter().all(|g| *g < 0.0) {
                    return Ok(Ok(x));
                }
            }
            if l2 / 2.0 <= 1e-10 || matches!(res, StepResult::Stalled) {
                break;
            }
        }
        if m / t <= opts.tol_feas * 1e-2 {
            return Ok(Err((z[n], z.rows(0, n).into_owned())));
        }
        t *= 10.0;
    }
}

/// Iteration cap of the primal-dual stage before falling back to the barrier
/// method.
const PD_MAX_ITER: usize = 120;

/// Largest `α` keeping `v + α·dv ≥ 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

/// Primal-dual interior-point method with Mehrotra's predictor-corrector on
/// `g(x) + s = 0`, `s, λ ≥ 0`, from any start point. `None` when it does not
/// converge within its budget.
fn primal_dual(
    program: &RealifiedProgram,
    x0: &RVec,
    opts: &SolverOptions,
    iters: &mut usize,
) -> Result<Option<SolveReport>> {
    let stage = Stage::new(program, None);
    let m = stage.cons.len();
    let n = program.n_vars;
    let mut x = x0.clone();
    let mut s: Vec<f64> = stage.cons.iter().map(|&c| (-stage.g(c, &x)).max(1.0)).collect();
    let mut lam = vec![1.0; m];
    let stop = (*iters + PD_MAX_ITER).min(opts.max_iter);
    loop {
        let g: Vec<f64> = stage.cons.iter().map(|&c| stage.g(c, &x)).collect();
        let grads: Vec<SparseVec> = stage.cons.iter().map(|&c| stage.grad_g(c, &x)).collect();
        let grad_f = program.gradient(&x);
        let mut r_d = grad_f.clone();
        for (a, l) in grads.iter().zip(&lam) {
            a.axpy(*l, &mut r_d);
        }
        let r_p: Vec<f64> = g.iter().zip(&s).map(|(g, s)| g + s).collect();
        let comp: f64 = s.iter().zip(&lam).map(|(s, l)| s * l).sum();
        let mu = comp / m as f64;
        let scale = program.objective(&x).abs().max(1.0);
        let size: Vec<f64> = program.constraint_magnitudes(&x).into_iter().map(|v| 1.0 + v).collect();
        let violation = g.iter().zip(&size).map(|(g, z)| g / z).fold(0.0, f64::max);
        let residual = r_p.iter().zip(&size).map(|(r, z)| r.abs() / z).fold(0.0, f64::max);
        if violation <= opts.tol_feas
            && residual <= opts.tol_feas
            && r_d.amax() <= opts.tol_opt * grad_f.amax().max(1.0)
            && comp <= opts.tol_opt * scale
        {
            let gap = g.iter().zip(&lam).map(|(g, l)| -g * l).sum::<f64>().max(0.0);
            return Ok(Some(report_with(program, x, SolveStatus::Optimal, gap, lam, *iters)));
        }
        if *iters >= stop || !mu.is_finite() {
            return Ok(None);
        }
        *iters += 1;

        let mut diag = RVec::zeros(n);
        let mut low_rank = Vec::new();
        for (i, &c) in stage.cons.iter().enumerate() {
            if let Con::Cone(k) = c {
                for &j in &program.cones[k].vars {
                    diag[j] += 2.0 * lam[i];
                }
            }
            let w = lam[i] / s[i];
            let a = &grads[i];
            if a.idx.len() == 1 {
                diag[a.idx[0]] += w * a.val[0] * a.val[0];
            } else {
                let r = w.sqrt();
                low_rank.push(SparseVec { idx: a.idx.clone(), val: a.val.iter().map(|v| v * r).collect() });
            }
        }
        let mut sys = NewtonSystem { n, blocks: &stage.blocks, block_scale: 1.0, diag, low_rank };
        let factor = factor_system(&mut sys, opts)?;
        let direction = |r_c: &[f64]| -> Result<(RVec, Vec<f64>, Vec<f64>)> {
            let mut rhs = -&r_d;
            for i in 0..m {
                grads[i].axpy((r_c[i] - lam[i] * r_p[i]) / s[i], &mut rhs);
            }
            let dx = solve_refined(&sys, &factor, &rhs)?;
            let ds: Vec<f64> = (0..m).map(|i| -r_p[i] - grads[i].dot(&dx)).collect();
            let dl: Vec<f64> = (0..m).map(|i| (-r_c[i] - lam[i] * ds[i]) / s[i]).collect();
            Ok((dx, ds, dl))
        };
        let r_c: Vec<f64> = s.iter().zip(&lam).map(|(s, l)| s * l).collect();
        let (_, ds_a, dl_a) = direction(&r_c)?;
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a)).min(1.0);
        let mu_aff = (0..m).map(|i| (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dl_a[i])).sum::<f64>() / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let r_c: Vec<f64> = (0..m).map(|i| s[i] * lam[i] + ds_a[i] * dl_a[i] - sigma * mu).collect();
        let (dx, ds, dl) = direction(&r_c)?;
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        x.axpy(alpha, &dx, 1.0);
        for i in 0..m {
            s[i] = (s[i] + alpha * ds[i]).max(f64::MIN_POSITIVE);
            lam[i] = (lam[i] + alpha * dl[i]).max(f64::MIN_POSITIVE);
        }
    }
}

/// Solves from the origin.
pub fn solve(program: &RealifiedProgram, options: &SolverOptions) -> Result<SolveReport> {
    solve_from(program, &RVec::zeros(program.n_vars), options)
}

/// Solves starting at `x0`; Phase I runs first unless `x0` is strictly feasible.
pub fn solve_from(program: &RealifiedProgram, x0: &RVec, options: &SolverOptions) -> Result<SolveReport> {
    program.validate()?;
    check_dims("start point", x0.len(), program.n_vars)?;
    if !(options.tol_feas > 0.0 && options.tol_opt > 0.0 && options.mu > 1.0) {
        return Err(Error::InvalidArgument("solver tolerances must be positive and μ > 1".into()));
    }
    let mut iters = 0;
    let m = program.n_constraints();
    if m > 0 {
        // The barrier method below is the fallback: slower, but it certifies
        // infeasibility.
        if let Ok(Some(r)) = primal_dual(program, x0, options, &mut iters) {
            return Ok(finalize(r, options));
        }
    }
    let mut x = x0.clone();
    if m > 0 && !program.constraint_values(&x).iter().all(|g| *g < 0.0) {
        match phase_one(program, &x, options, &mut iters)? {
            Ok(p) => x = p,
            Err((s, p)) => {
                let status = if s > options.tol_feas { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
                return Ok(report(program, p, status, f64::INFINITY, None, iters));
            }
        }
    }
    let stage = Stage::new(program, None);
    if m == 0 {
        // Pure quadratic: one exact Newton step, refined.
        let (grad, mut sys) = stage.newton_system(1.0, &x);
        let dx = newton_direction(&mut sys, &grad, options)?;
        x += dx;
        iters += 1;
        let r = report(program, x, SolveStatus::Optimal, 0.0, Some(1.0), iters);
        return Ok(finalize(r, options));
    }
    let f0 = program.objective(&x);
    let mut t = (m as f64 / f0.abs().max(1.0)).max(1e-8);
    loop {
        for _ in 0..200 {
            if iters >= options.max_iter {
                return Ok(report(program, x, SolveStatus::MaxIter, m as f64 / t, Some(t), iters));
            }
            iters += 1;
            let (l2, res) = newton_step(&stage, t, &mut x, options)?;
            if l2 / 2.0 <= 1e-10 || matches!(res, StepResult::Stalled) {
                break;
            }
        }
        let gap = m as f64 / t;
        if gap <= options.tol_opt * program.objective(&x).abs().max(1.0) {
            // Tighten the last centering until the KKT residual is met.
            for _ in 0..20 {
                let r = report(program, x.clone(), SolveStatus::Optimal, gap, Some(t), iters);
                if r.stationarity <= options.tol_opt || iters >= options.max_iter {
                    break;
                }
                iters += 1;
                let (l2, res) = newton_step(&stage, t, &mut x, options)?;
                if l2 / 2.0 <= 1e-24 || matches!(res, StepResult::Stalled) {
                    break;
                }
            }
            let r = report(program, x, SolveStatus::Optimal, gap, Some(t), iters);
            return Ok(finalize(r, options));
        }
        t *= options.mu;
    }
}

fn report(
    program: &RealifiedProgram,
    x: RVec,
    status: SolveStatus,
    gap: f64,
    t: Option<f64>,
    iterations: usize,
) -> SolveReport {
    let g = program.constraint_values(&x);
    let multipliers: Vec<f64> = match t {
        Some(t) => g.iter().map(|gi| if *gi < 0.0 { 1.0 / (t * -gi) } else { 0.0 }).collect(),
        None => vec![0.0; g.len()],
    };
    report_with(program, x, status, gap, multipliers, iterations)
}

fn report_with(
    program: &RealifiedProgram,
    x: RVec,
    status: SolveStatus,
    gap: f64,
    multipliers: Vec<f64>,
    iterations: usize,
) -> SolveReport {
    let max_violation = program.constraint_values(&x).into_iter().fold(0.0, f64::max);
    let relative_violation = program.relative_violation(&x);
    let grad_f = program.gradient(&x);
    let mut lag = grad_f.clone();
    let stage = Stage::new(program, None);
    for (k, &c) in stage.cons.iter().enumerate() {
        if multipliers[k] != 0.0 {
            stage.grad_g(c, &x).axpy(multipliers[k], &mut lag);
        }
    }
    let stationarity = lag.amax() / grad_f.amax().max(1.0);
    SolveReport {
        status,
        objective: program.objective(&x),
        x,
        max_violation,
        relative_violation,
        stationarity,
        gap,
        multipliers,
        iterations,
    }
}

/// Downgrades an "optimal" report whose residuals miss the tolerances.
fn finalize(mut r: SolveReport, opts: &SolverOptions) -> SolveReport {
    if r.status == SolveStatus::Optimal && (r.relative_violation > opts.tol_feas || r.stationarity > opts.tol_opt) {
        r.status = SolveStatus::MaxIter;
    }
    r
}

/// Lagrange dual function `inf_x L(x, λ)` for multipliers in constraint order.
/// Any `λ ≥ 0` gives a lower bound on the optimal value; `−∞` when the
/// Lagrangian is unbounded below.
pub fn dual_bound(program: &RealifiedProgram, lambda: &[f64]) -> Result<f64> {
    program.validate()?;
    check_dims("multipliers", lambda.len(), program.n_constraints())?;
    if lambda.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidArgument("multipliers must be non-negative".into()));
    }
    let n = program.n_vars;
    let mut h = program.hessian_dense();
    let mut q = program.linear.clone();
    let mut r = program.constant;
    let na = program.affine.len();
    let nc = program.cones.len();
    for (i, row) in program.affine.iter().enumerate() {
        let l = lambda[i];
        r += l * row.rhs;
        for &(j, c) in &row.coeffs {
            q[j] -= l * c;
        }
    }
    for (i, cone) in program.cones.iter().enumerate() {
        let l = lambda[na + i];
        for &j in &cone.vars {
            h[(j, j)] += 2.0 * l;
        }
        q[cone.bound_var] -= l * cone.scale;
    }
    for (i, b) in program.bounds.iter().enumerate() {
        let l = lambda[na + nc + i];
        r += l * b.value;
        q[b.var] -= l;
    }
    // A variable with no curvature and a lower bound: shift its linear
    // coefficient into the bound multiplier when that keeps it non-negative.
    for (i, b) in program.bounds.iter().enumerate() {
        let j = b.var;
        let l = lambda[na + nc + i];
        if h.row(j).iter().all(|v| *v == 0.0) && l + q[j] >= 0.0 {
            r += q[j] * b.value;
            q[j] = 0.0;
        }
    }
    // L(x) = ½xᵀHx + qᵀx + r; minimum −½qᵀH⁺q if q ∈ range(H).
    let eig = h.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&e| e < -1e-10 * scale) {
        return Ok(f64::NEG_INFINITY);
    }
    let qt = eig.eigenvectors.transpose() * &q;
    let mut val = r;
    for k in 0..n {
        let e = eig.eigenvalues[k];
        if e > 1e-12 * scale {
            val -= 0.5 * qt[k] * qt[k] / e;
        } else if qt[k].abs() > 1e-9 * q.amax().max(1.0) {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(val)
}
