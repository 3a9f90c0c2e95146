//! Per-iteration convex program of the downlink SCA in real variables, and a
//! interior-point solver for it.
//!
//! A program is
//!
//! ```text
//! minimize    Σ_b x_bᵀ M_b x_b + qᵀx + r
//! subject to  aᵢᵀx ≥ bᵢ                       (affine rows)
//!             Σ_{j∈S_k} x_j² ≤ c_k · x_{y_k}   (power cones)
//!             x_j ≥ l_j                        (bounds)
//! ```
//!
//! with PSD blocks `M_b` acting on disjoint index sets. Blocks are reference
//! counted so that identical blocks (one per precoder column) share storage
//! and, inside the solver, one factorization.

mod dump;
mod solver;

use std::collections::HashMap;
use std::sync::Arc;

use crate::downlink::{snr_noise_power, SnrDenominator, TildeVariables};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{realify_hermitian, CMat, RMat, RVec};

pub use dump::{dump_program, parse_program_dump};
pub use solver::{dual_bound, solve, solve_from, SolveReport, SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlock {
    pub vars: Vec<usize>,
    pub matrix: Arc<RMat>,
}

/// `Σ coeff·x ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `Σ_{j ∈ vars} x_j² ≤ scale · x[bound_var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCone {
    pub vars: Vec<usize>,
    pub bound_var: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    pub var: usize,
    pub value: f64,
}

/// Variable map of a downlink program: column j of W̃ occupies
/// `[Re; Im]` at `2N_t·j`, then ṽ, then ã last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownlinkLayout {
    pub n_t: usize,
    pub n_uavs: usize,
}

impl DownlinkLayout {
    pub fn n_vars(&self) -> usize {
        2 * self.n_t * (self.n_uavs + 1) + 1
    }

    pub fn w_re(&self, m: usize, j: usize) -> usize {
        2 * self.n_t * j + m
    }

    pub fn w_im(&self, m: usize, j: usize) -> usize {
        2 * self.n_t * j + self.n_t + m
    }

    pub fn v_re(&self, m: usize) -> usize {
        self.w_re(m, self.n_uavs)
    }

    pub fn v_im(&self, m: usize) -> usize {
        self.w_im(m, self.n_uavs)
    }

    pub fn a(&self) -> usize {
        self.n_vars() - 1
    }

    pub fn to_vector(&self, t: &TildeVariables) -> Result<RVec> {
        check_dims("W̃ rows", t.w_t_tilde.nrows(), self.n_t)?;
        check_dims("W̃ columns", t.w_t_tilde.ncols(), self.n_uavs)?;
        check_dims("ṽ length", t.v_tilde.len(), self.n_t)?;
        let mut x = RVec::zeros(self.n_vars());
        for m in 0..self.n_t {
            for j in 0..self.n_uavs {
                x[self.w_re(m, j)] = t.w_t_tilde[(m, j)].re;
                x[self.w_im(m, j)] = t.w_t_tilde[(m, j)].im;
            }
            x[self.v_re(m)] = t.v_tilde[m].re;
            x[self.v_im(m)] = t.v_tilde[m].im;
        }
        x[self.a()] = t.a_tilde;
        Ok(x)
    }

    pub fn from_vector(&self, x: &RVec) -> Result<TildeVariables> {
        check_dims("program vector", x.len(), self.n_vars())?;
        let w = CMat::from_fn(self.n_t, self.n_uavs, |m, j| {
            crate::linalg::C64::new(x[self.w_re(m, j)], x[self.w_im(m, j)])
        });
        let v =
            crate::linalg::CVec::from_fn(self.n_t, |m, _| crate::linalg::C64::new(x[self.v_re(m)], x[self.v_im(m)]));
        Ok(TildeVariables { w_t_tilde: w, v_tilde: v, a_tilde: x[self.a()] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealifiedProgram {
    pub n_vars: usize,
    pub blocks: Vec<HessianBlock>,
    pub linear: RVec,
    pub constant: f64,
    pub affine: Vec<AffineRow>,
    pub cones: Vec<PowerCone>,
    pub bounds: Vec<LowerBound>,
    pub layout: Option<DownlinkLayout>,
}

impl RealifiedProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            blocks: Vec::new(),
            linear: RVec::zeros(n_vars),
            constant: 0.0,
            affine: Vec::new(),
            cones: Vec::new(),
            bounds: Vec::new(),
            layout: None,
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.affine.len() + self.cones.len() + self.bounds.len()
    }

    /// Structural checks: indices in range, square finite blocks on disjoint
    /// variable sets, positive cone scales.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        check_dims("linear term", self.linear.len(), n)?;
        if !self.constant.is_finite() || self.linear.iter().any(|v| !v.is_finite()) {
            return bad("objective has non-finite entries".into());
        }
        let mut owner = vec![false; n];
        for (b, blk) in self.blocks.iter().enumerate() {
            let k = blk.vars.len();
            if blk.matrix.nrows() != k || blk.matrix.ncols() != k {
                return bad(format!(
                    "block {b}: matrix is {}×{}, block has {k} variables",
                    blk.matrix.nrows(),
                    blk.matrix.ncols()
                ));
            }
            if blk.matrix.iter().any(|v| !v.is_finite()) {
                return bad(format!("block {b}: non-finite entries"));
            }
            for &v in &blk.vars {
                if v >= n {
                    return bad(format!("block {b}: variable {v} out of range"));
                }
                if owner[v] {
                    return bad(format!("block {b}: variable {v} appears in more than one block"));
                }
                owner[v] = true;
            }
        }
        for (i, row) in self.affine.iter().enumerate() {
            if !row.rhs.is_finite() || row.coeffs.iter().any(|(j, c)| *j >= n || !c.is_finite()) {
                return bad(format!("affine row {i} is malformed"));
            }
        }
        for (i, c) in self.cones.iter().enumerate() {
            if !(c.scale > 0.0) || !c.scale.is_finite() || c.bound_var >= n {
                return bad(format!("cone {i} is malformed"));
            }
            if c.vars.iter().any(|&j| j >= n || j == c.bound_var) {
                return bad(format!("cone {i} has an invalid variable"));
            }
            let mut seen = c.vars.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != c.vars.len() {
                return bad(format!("cone {i} repeats a variable"));
            }
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if b.var >= n || !b.value.is_finite() {
                return bad(format!("bound {i} is malformed"));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &RVec) -> f64 {
        let mut f = self.constant + self.linear.dot(x);
        for blk in &self.blocks {
            let xb = RVec::from_iterator(blk.vars.len(), blk.vars.iter().map(|&j| x[j]));
            f += xb.dot(&(&*blk.matrix * &xb));
        }
        f
    }

    pub fn gradient(&self, x: &RVec) -> RVec {
        let mut g = self.linear.clone();
        for blk in &self.blocks {
            let xb = RVec::from_iterator(blk.vars.len(), blk.vars.iter().map(|&j| x[j]));
            let mb = &*blk.matrix * &xb;
            let mt = blk.matrix.transpose() * &xb;
            for (k, &j) in blk.vars.iter().enumerate() {
                g[j] += mb[k] + mt[k];
            }
        }
        g
    }

    /// Constraint values in `g(x) ≤ 0` form: affine rows, then cones, then bounds.
    pub fn constraint_values(&self, x: &RVec) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_constraints());
        for row in &self.affine {
            out.push(row.rhs - row.coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>());
        }
        for c in &self.cones {
            out.push(c.vars.iter().map(|&j| x[j] * x[j]).sum::<f64>() - c.scale * x[c.bound_var]);
        }
        for b in &self.bounds {
            out.push(b.value - x[b.var]);
        }
        out
    }

    /// Size of each constraint's terms at `x` (same order as
    /// [`constraint_values`](Self::constraint_values)), the yardstick for
    /// relative violation.
    pub fn constraint_magnitudes(&self, x: &RVec) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_constraints());
        for row in &self.affine {
            out.push(row.rhs.abs() + row.coeffs.iter().map(|(j, c)| (c * x[*j]).abs()).sum::<f64>());
        }
        for c in &self.cones {
            out.push(c.vars.iter().map(|&j| x[j] * x[j]).sum::<f64>() + (c.scale * x[c.bound_var]).abs());
        }
        for b in &self.bounds {
            out.push(b.value.abs() + x[b.var].abs());
        }
        out
    }

    /// `max gᵢ(x)⁺ / (1 + |terms of gᵢ|)`.
    pub fn relative_violation(&self, x: &RVec) -> f64 {
        self.constraint_values(x)
            .into_iter()
            .zip(self.constraint_magnitudes(x))
            .map(|(g, s)| g.max(0.0) / (1.0 + s))
            .fold(0.0, f64::max)
    }

    pub fn max_violation(&self, x: &RVec) -> f64 {
        self.constraint_values(x).into_iter().fold(0.0, f64::max)
    }

    /// Full symmetric Hessian `2·sym(M)` of the objective (small instances).
    pub fn hessian_dense(&self) -> RMat {
        let mut h = RMat::zeros(self.n_vars, self.n_vars);
        for blk in &self.blocks {
            for (a, &i) in blk.vars.iter().enumerate() {
                for (b, &j) in blk.vars.iter().enumerate() {
                    h[(i, j)] += blk.matrix[(a, b)] + blk.matrix[(b, a)];
                }
            }
        }
        h
    }

    /// Multiplies the objective by `factor`; shared blocks stay shared.
    pub fn scale_objective(&mut self, factor: f64) {
        let mut cache: HashMap<*const RMat, Arc<RMat>> = HashMap::new();
        for blk in &mut self.blocks {
            let key = Arc::as_ptr(&blk.matrix);
            let scaled = cache.entry(key).or_insert_with(|| Arc::new(&*blk.matrix * factor)).clone();
            blk.matrix = scaled;
        }
        self.linear *= factor;
        self.constant *= factor;
    }

    /// Renames variable `i` to `perm[i]`. The downlink layout is dropped.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dims("permutation length", perm.len(), self.n_vars)?;
        let mut seen = vec![false; self.n_vars];
        for &p in perm {
            if p >= self.n_vars || seen[p] {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            seen[p] = true;
        }
        let mut linear = RVec::zeros(self.n_vars);
        for i in 0..self.n_vars {
            linear[perm[i]] = self.linear[i];
        }
        Ok(Self {
            n_vars: self.n_vars,
            blocks: self
                .blocks
                .iter()
                .map(|b| HessianBlock { vars: b.vars.iter().map(|&j| perm[j]).collect(), matrix: b.matrix.clone() })
                .collect(),
            linear,
            constant: self.constant,
            affine: self
                .affine
                .iter()
                .map(|r| AffineRow { coeffs: r.coeffs.iter().map(|&(j, c)| (perm[j], c)).collect(), rhs: r.rhs })
                .collect(),
            cones: self
                .cones
                .iter()
                .map(|c| PowerCone {
                    vars: c.vars.iter().map(|&j| perm[j]).collect(),
                    bound_var: perm[c.bound_var],
                    scale: c.scale,
                })
                .collect(),
            bounds: self.bounds.iter().map(|b| LowerBound { var: perm[b.var], value: b.value }).collect(),
            layout: None,
        })
    }
}

/// Options for building the downlink program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealifyOptions {
    pub a_lower: f64,
    pub snr_denominator: SnrDenominator,
    /// Emit the three linearized SNR rows.
    pub include_snr: bool,
}

impl Default for RealifyOptions {
    fn default() -> Self {
        Self { a_lower: 1e-12, snr_denominator: SnrDenominator::UavCount, include_snr: true }
    }
}

/// Coefficients of the linearized SNR row for slot vector `u_slot` at
/// `point`: `coeff·x ≥ f(point)` where `f = ‖GW̃ũ‖² + ‖Gṽ‖²`, with the
/// `−κγ` entry on ã appended by the caller. Returns `(coeff, f(point))`.
pub(crate) fn snr_row(
    layout: &DownlinkLayout,
    g: &CMat,
    point: &TildeVariables,
    u_slot: &RVec,
) -> (Vec<(usize, f64)>, f64) {
    let ggh = g.adjoint() * g;
    let y = &point.w_t_tilde * crate::downlink::real_to_complex(u_slot);
    let my = &ggh * &y;
    let mv = &ggh * &point.v_tilde;
    let f = y.dotc(&my).re + point.v_tilde.dotc(&mv).re;
    let mut coeffs = Vec::with_capacity(layout.n_vars());
    for j in 0..layout.n_uavs {
        let uj = u_slot[j];
        if uj == 0.0 {
            continue;
        }
        for m in 0..layout.n_t {
            coeffs.push((layout.w_re(m, j), 2.0 * uj * my[m].re));
        }
        for m in 0..layout.n_t {
            coeffs.push((layout.w_im(m, j), 2.0 * uj * my[m].im));
        }
    }
    for m in 0..layout.n_t {
        coeffs.push((layout.v_re(m), 2.0 * mv[m].re));
    }
    for m in 0..layout.n_t {
        coeffs.push((layout.v_im(m), 2.0 * mv[m].im));
    }
    (coeffs, f)
}

/// Builds the convex subproblem around `expansion`:
/// objective `(‖u‖²/3)‖HW̃ − I‖² + ‖Hṽ‖² + ã·Nσ²`, three linearized SNR rows
/// `lin_t(x) ≥ ã·κ·γ` (κ the echo noise power), one power cone per antenna and `ã ≥ a_lower`.
#[allow(clippy::too_many_arguments)]
pub fn realify(
    h_dl: &CMat,
    g: &CMat,
    u_k: &RVec,
    sigma2: f64,
    gamma_snr: f64,
    p_bs: f64,
    expansion: &TildeVariables,
    options: &RealifyOptions,
) -> Result<RealifiedProgram> {
    let n = h_dl.nrows();
    let n_t = h_dl.ncols();
    check_dims("G columns", g.ncols(), n_t)?;
    check_dims("control length", u_k.len(), 3 * n)?;
    if !(p_bs > 0.0) || !(sigma2 >= 0.0) || !(options.a_lower > 0.0) {
        return Err(Error::InvalidArgument("P_BS and a_lower must be positive, σ² non-negative".into()));
    }
    let layout = DownlinkLayout { n_t, n_uavs: n };
    let mut prog = RealifiedProgram::new(layout.n_vars());
    prog.layout = Some(layout);

    let c = u_k.norm_squared() / 3.0;
    let hh = realify_hermitian(&(h_dl.adjoint() * h_dl));
    let w_block = Arc::new(&hh * c);
    for j in 0..n {
        let vars = (0..n_t).map(|m| layout.w_re(m, j)).chain((0..n_t).map(|m| layout.w_im(m, j))).collect();
        prog.blocks.push(HessianBlock { vars, matrix: w_block.clone() });
        for m in 0..n_t {
            prog.linear[layout.w_re(m, j)] = -2.0 * c * h_dl[(j, m)].re;
            prog.linear[layout.w_im(m, j)] = 2.0 * c * h_dl[(j, m)].im;
        }
    }
    let v_vars = (0..n_t).map(|m| layout.v_re(m)).chain((0..n_t).map(|m| layout.v_im(m))).collect();
    prog.blocks.push(HessianBlock { vars: v_vars, matrix: Arc::new(hh) });
    prog.constant = c * n as f64;
    prog.linear[layout.a()] = n as f64 * sigma2;
    let kappa = snr_noise_power(options.snr_denominator, n, g.nrows(), sigma2);

    if options.include_snr {
        let slots = crate::downlink::split_control(u_k)?;
        for u_slot in &slots {
            let (mut coeffs, f) = snr_row(&layout, g, expansion, u_slot);
            coeffs.push((layout.a(), -kappa * gamma_snr));
            prog.affine.push(AffineRow { coeffs, rhs: f });
        }
    }
    for m in 0..n_t {
        let vars = (0..n)
            .flat_map(|j| [layout.w_re(m, j), layout.w_im(m, j)])
            .chain([layout.v_re(m), layout.v_im(m)])
            .collect();
        prog.cones.push(PowerCone { vars, bound_var: layout.a(), scale: p_bs });
    }
    prog.bounds.push(LowerBound { var: layout.a(), value: options.a_lower });
    Ok(prog)
}

#[cfg(test)]
mod tests;
