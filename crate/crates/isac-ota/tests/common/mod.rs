//! Independent reference solver for realified programs: an augmented
//! Lagrangian outer loop over the affine and cone rows, with accelerated
//! projected gradient (projection onto the simple lower bounds) inside.
//! Deliberately shares nothing with the library solver except the program
//! data structure.

use isac_ota::linalg::RVec;
use isac_ota::subproblem::RealifiedProgram;

pub struct Reference {
    pub objective: f64,
    /// Largest `g_i(x)⁺` over affine and cone rows.
    pub violation: f64,
}

fn objective(p: &RealifiedProgram, x: &RVec) -> (f64, RVec) {
    let mut f = p.constant;
    let mut g = p.linear.clone();
    for j in 0..p.n_vars {
        f += p.linear[j] * x[j];
    }
    for blk in &p.blocks {
        let m = &*blk.matrix;
        for (a, &i) in blk.vars.iter().enumerate() {
            for (b, &j) in blk.vars.iter().enumerate() {
                let v = m[(a, b)];
                f += x[i] * v * x[j];
                g[i] += v * x[j];
                g[j] += v * x[i];
            }
        }
    }
    (f, g)
}

/// Affine and cone rows in `g(x) ≤ 0` form.
fn rows(p: &RealifiedProgram, x: &RVec) -> Vec<f64> {
    let mut out = Vec::new();
    for r in &p.affine {
        out.push(r.rhs - r.coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>());
    }
    for c in &p.cones {
        out.push(c.vars.iter().map(|&j| x[j] * x[j]).sum::<f64>() - c.scale * x[c.bound_var]);
    }
    out
}

fn add_row_gradients(p: &RealifiedProgram, x: &RVec, w: &[f64], grad: &mut RVec) {
    let na = p.affine.len();
    for (i, r) in p.affine.iter().enumerate() {
        if w[i] != 0.0 {
            for (j, c) in &r.coeffs {
                grad[*j] -= w[i] * c;
            }
        }
    }
    for (i, c) in p.cones.iter().enumerate() {
        let wi = w[na + i];
        if wi != 0.0 {
            for &j in &c.vars {
                grad[j] += wi * 2.0 * x[j];
            }
            grad[c.bound_var] -= wi * c.scale;
        }
    }
}

fn project(p: &RealifiedProgram, x: &mut RVec) {
    for b in &p.bounds {
        if x[b.var] < b.value {
            x[b.var] = b.value;
        }
    }
}

/// `f + (1/2ρ) Σ (max(0, λ + ρg)² − λ²)` and its gradient.
fn augmented(p: &RealifiedProgram, x: &RVec, lambda: &[f64], rho: f64) -> (f64, RVec) {
    let (mut f, mut grad) = objective(p, x);
    let g = rows(p, x);
    let mut w = vec![0.0; g.len()];
    for i in 0..g.len() {
        let t = (lambda[i] + rho * g[i]).max(0.0);
        f += (t * t - lambda[i] * lambda[i]) / (2.0 * rho);
        w[i] = t;
    }
    add_row_gradients(p, x, &w, &mut grad);
    (f, grad)
}

/// FISTA with backtracking and function-value restart. The flag reports
/// whether the projected-gradient residual reached `tol`.
fn inner(p: &RealifiedProgram, x0: &RVec, lambda: &[f64], rho: f64, tol: f64) -> (RVec, bool) {
    let mut x = x0.clone();
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut lip: f64 = 1.0;
    let (mut fx, _) = augmented(p, &x, lambda, rho);
    for _ in 0..50_000 {
        let (_, gy) = augmented(p, &y, lambda, rho);
        // Backtrack on a local Lipschitz estimate from gradient differences;
        // the function-value test breaks down in roundoff near the optimum.
        let (next, fnext) = loop {
            let mut next = &y - &gy / lip;
            project(p, &mut next);
            let d = &next - &y;
            let (fn_, gn) = augmented(p, &next, lambda, rho);
            if (&gn - &gy).norm() <= lip * d.norm() {
                break (next, fn_);
            }
            lip *= 2.0;
        };
        // Projected-gradient residual at y.
        if (&next - &y).norm() * lip <= tol {
            return (next, true);
        }
        if fnext > fx && t > 1.0 {
            // Restart momentum. Without momentum the plain projected step is
            // taken even when roundoff hides its decrease.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        fx = fnext;
        t = t_next;
        lip *= 0.9;
    }
    (x, false)
}

pub fn alm_reference(p: &RealifiedProgram) -> Reference {
    let m = p.affine.len() + p.cones.len();
    let mut lambda = vec![0.0; m];
    let mut rho = 10.0;
    let mut x = RVec::zeros(p.n_vars);
    for c in &p.cones {
        x[c.bound_var] = 1.0;
    }
    project(p, &mut x);
    let mut last_viol = f64::INFINITY;
    for outer in 0..80 {
        let tol = (1e-4 * 0.5f64.powi(outer)).max(1e-7);
        let (next, converged) = inner(p, &x, &lambda, rho, tol);
        x = next;
        let g = rows(p, &x);
        let viol = g.iter().fold(0.0f64, |a, v| a.max(*v));
        let mut slack = 0.0f64;
        for i in 0..m {
            lambda[i] = (lambda[i] + rho * g[i]).max(0.0);
            slack = slack.max((lambda[i] * g[i]).abs());
        }
        if viol > 1e-9 && viol > 0.25 * last_viol {
            rho = (rho * 4.0).min(1e8);
        }
        last_viol = viol;
        if converged && tol <= 1e-7 && viol <= 1e-9 && slack <= 1e-8 {
            break;
        }
    }
    let (objective, _) = objective(p, &x);
    let violation = rows(p, &x).into_iter().fold(0.0, f64::max);
    Reference { objective, violation }
}
