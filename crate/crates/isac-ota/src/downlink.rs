//! Downlink control dispatch with a co-designed radar beam.
//!
//! The BS sends the 3N control vector in three slots, `ζ[t] = W_T ũ[t] + v s[t]`,
//! and UAV n recovers `a·Re z⁽ⁿ⁾[t]`. `(W_T, v, a)` minimize an upper bound on
//! the expected dispatch error subject to per-antenna power and a minimum echo
//! SNR. In the variables `W̃ = aW_T`, `ṽ = av`, `ã = a²` the problem is convex
//! except for the SNR constraint, which is handled by successive convex
//! approximation with affine lower bounds.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::steering_unchecked;
use crate::error::{check_dims, Error, Result};
use crate::linalg::{frob_sq, CMat, CVec, RVec, C64};
use crate::rng::complex_normal;
use crate::subproblem::{realify, solve_from, DownlinkLayout, RealifyOptions, SolveStatus, SolverOptions};

/// Number of downlink slots per control period.
pub const DOWNLINK_SLOTS: usize = 3;

/// `ũ[t][n] = u[3n + t]`.
pub fn split_control(u_k: &RVec) -> Result<Vec<RVec>> {
    if !u_k.len().is_multiple_of(DOWNLINK_SLOTS) {
        return Err(Error::DimensionMismatch(format!("control length {} is not a multiple of 3", u_k.len())));
    }
    let n = u_k.len() / DOWNLINK_SLOTS;
    Ok((0..DOWNLINK_SLOTS).map(|t| RVec::from_fn(n, |i, _| u_k[DOWNLINK_SLOTS * i + t])).collect())
}

pub fn merge_control(slots: &[RVec]) -> Result<RVec> {
    check_dims("slot count", slots.len(), DOWNLINK_SLOTS)?;
    let n = slots[0].len();
    if slots.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("slots differ in length".into()));
    }
    Ok(RVec::from_fn(DOWNLINK_SLOTS * n, |k, _| slots[k % DOWNLINK_SLOTS][k / DOWNLINK_SLOTS]))
}

pub(crate) fn real_to_complex(v: &RVec) -> CVec {
    v.map(|x| C64::new(x, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkGains {
    /// N_t×N precoder.
    pub w_t: CMat,
    pub v: CVec,
    pub a: f64,
}

impl DownlinkGains {
    /// `‖row m of W_T‖² + |v_m|²` per antenna.
    pub fn antenna_powers(&self) -> Vec<f64> {
        antenna_powers(&self.w_t, &self.v)
    }

    pub fn to_tilde(&self) -> TildeVariables {
        let a = C64::new(self.a, 0.0);
        TildeVariables { w_t_tilde: &self.w_t * a, v_tilde: &self.v * a, a_tilde: self.a * self.a }
    }
}

fn antenna_powers(w: &CMat, v: &CVec) -> Vec<f64> {
    (0..w.nrows()).map(|m| w.row(m).norm_squared() + v[m].norm_sqr()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TildeVariables {
    pub w_t_tilde: CMat,
    pub v_tilde: CVec,
    pub a_tilde: f64,
}

impl TildeVariables {
    pub fn to_gains(&self) -> Result<DownlinkGains> {
        if !(self.a_tilde > 0.0) {
            return Err(Error::InvalidArgument(format!("ã must be positive, got {}", self.a_tilde)));
        }
        let a = self.a_tilde.sqrt();
        let inv = C64::new(1.0 / a, 0.0);
        Ok(DownlinkGains { w_t: &self.w_t_tilde * inv, v: &self.v_tilde * inv, a })
    }

    pub fn antenna_powers(&self) -> Vec<f64> {
        antenna_powers(&self.w_t_tilde, &self.v_tilde)
    }
}

/// Which noise power divides the echo energy in the SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SnrDenominator {
    /// `N σ²`.
    #[default]
    UavCount,
    /// `N_r σ²`, the actual echo noise energy.
    ReceiveAntennas,
}

pub fn snr_noise_power(den: SnrDenominator, n_uavs: usize, n_r: usize, sigma2: f64) -> f64 {
    match den {
        SnrDenominator::UavCount => n_uavs as f64 * sigma2,
        SnrDenominator::ReceiveAntennas => n_r as f64 * sigma2,
    }
}

/// Dispatch-error bound `‖HW̃ − I‖²‖u‖²/3 + ‖Hṽ‖² + ã N σ²`.
pub fn objective_value(tilde: &TildeVariables, h_dl: &CMat, u_k: &RVec, sigma2: f64) -> Result<f64> {
    let n = h_dl.nrows();
    check_dims("W̃ shape", tilde.w_t_tilde.nrows(), h_dl.ncols())?;
    check_dims("W̃ columns", tilde.w_t_tilde.ncols(), n)?;
    check_dims("control length", u_k.len(), 3 * n)?;
    let resid = h_dl * &tilde.w_t_tilde - CMat::identity(n, n);
    Ok(frob_sq(&resid) * u_k.norm_squared() / 3.0
        + (h_dl * &tilde.v_tilde).norm_squared()
        + tilde.a_tilde * n as f64 * sigma2)
}

/// Exact expected per-slot dispatch error `(1/3) Σ_t E‖a z[t] − ũ[t]‖²`.
pub fn expected_error_exact(tilde: &TildeVariables, h_dl: &CMat, u_k: &RVec, sigma2: f64) -> Result<f64> {
    let n = h_dl.nrows();
    let slots = split_control(u_k)?;
    check_dims("slot length", slots[0].len(), n)?;
    let resid = h_dl * &tilde.w_t_tilde - CMat::identity(n, n);
    let common = (h_dl * &tilde.v_tilde).norm_squared() + tilde.a_tilde * n as f64 * sigma2;
    let data: f64 = slots.iter().map(|u| (&resid * real_to_complex(u)).norm_squared()).sum::<f64>() / 3.0;
    Ok(data + common)
}

/// Linear SNR, or an explicit marker for the noiseless case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrValue {
    Finite(f64),
    Infinite,
}

impl SnrValue {
    pub fn db(&self) -> f64 {
        match self {
            SnrValue::Finite(v) => 10.0 * v.log10(),
            SnrValue::Infinite => f64::INFINITY,
        }
    }

    pub fn at_least(&self, gamma: f64) -> bool {
        match self {
            SnrValue::Finite(v) => *v >= gamma,
            SnrValue::Infinite => true,
        }
    }
}

fn echo_energies(w: &CMat, v: &CVec, g: &CMat, slots: &[RVec]) -> Result<Vec<f64>> {
    check_dims("G columns", g.ncols(), w.nrows())?;
    let gv = (g * v).norm_squared();
    slots
        .iter()
        .map(|u| {
            check_dims("slot length", u.len(), w.ncols())?;
            Ok((g * (w * real_to_complex(u))).norm_squared() + gv)
        })
        .collect()
}

/// `min_t (‖G W_T ũ[t]‖² + ‖G v‖²) / κ`.
pub fn sensing_snr(
    gains: &DownlinkGains,
    g: &CMat,
    slots: &[RVec],
    sigma2: f64,
    den: SnrDenominator,
) -> Result<SnrValue> {
    let e = echo_energies(&gains.w_t, &gains.v, g, slots)?;
    let kappa = snr_noise_power(den, gains.w_t.ncols(), g.nrows(), sigma2);
    let min = e.into_iter().fold(f64::INFINITY, f64::min);
    if kappa == 0.0 {
        return Ok(SnrValue::Infinite);
    }
    Ok(SnrValue::Finite(min / kappa))
}

/// The same SNR evaluated on tilde variables (`ã` cancels the scaling).
pub fn sensing_snr_tilde(
    t: &TildeVariables,
    g: &CMat,
    slots: &[RVec],
    sigma2: f64,
    den: SnrDenominator,
) -> Result<SnrValue> {
    let e = echo_energies(&t.w_t_tilde, &t.v_tilde, g, slots)?;
    let kappa = snr_noise_power(den, t.w_t_tilde.ncols(), g.nrows(), sigma2);
    let min = e.into_iter().fold(f64::INFINITY, f64::min);
    if kappa == 0.0 {
        return Ok(SnrValue::Infinite);
    }
    Ok(SnrValue::Finite(min / (t.a_tilde * kappa)))
}

/// First-order expansion of `f(W̃, ṽ) = ‖GW̃ũ‖² + ‖Gṽ‖²` at a point:
/// `f(p) + 2Re⟨∇_W, W̃ − W̃_p⟩ + 2Re⟨∇_v, ṽ − ṽ_p⟩` with
/// `∇_W = GᴴGW̃_p ũũᵀ` and `∇_v = GᴴGṽ_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSnr {
    pub grad_w: CMat,
    pub grad_v: CVec,
    pub value: f64,
    point_w: CMat,
    point_v: CVec,
}

impl LinearizedSnr {
    pub fn evaluate(&self, w: &CMat, v: &CVec) -> f64 {
        let dw = w - &self.point_w;
        let dv = v - &self.point_v;
        self.value + 2.0 * self.grad_w.dotc(&dw).re + 2.0 * self.grad_v.dotc(&dv).re
    }
}

pub fn linearize_snr_constraint(point: &TildeVariables, g: &CMat, u_slot: &RVec) -> Result<LinearizedSnr> {
    check_dims("G columns", g.ncols(), point.w_t_tilde.nrows())?;
    check_dims("slot length", u_slot.len(), point.w_t_tilde.ncols())?;
    let ggh = g.adjoint() * g;
    let u = real_to_complex(u_slot);
    let y = &point.w_t_tilde * &u;
    let grad_w = (&ggh * &y) * u.transpose();
    let grad_v = &ggh * &point.v_tilde;
    let value = (g * &y).norm_squared() + (g * &point.v_tilde).norm_squared();
    Ok(LinearizedSnr { grad_w, grad_v, value, point_w: point.w_t_tilde.clone(), point_v: point.v_tilde.clone() })
}

/// `f(W̃, ṽ)` itself, for comparison with the expansion.
pub fn snr_numerator(w: &CMat, v: &CVec, g: &CMat, u_slot: &RVec) -> f64 {
    (g * (w * real_to_complex(u_slot))).norm_squared() + (g * v).norm_squared()
}

/// What to do when the requested SNR cannot be met by the initial point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SnrFallback {
    /// Lower γ to what the initializer achieves and flag the period.
    #[default]
    Relax,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub iota: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
    pub snr_denominator: SnrDenominator,
    pub snr_fallback: SnrFallback,
    pub a_lower: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            iota: 1e-3,
            max_iter: 50,
            solver: SolverOptions::default(),
            snr_denominator: SnrDenominator::UavCount,
            snr_fallback: SnrFallback::Relax,
            a_lower: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub delta: f64,
    /// `SNR/γ − 1` at the iterate (infinite when noiseless).
    pub min_snr_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub gains: DownlinkGains,
    pub tilde: TildeVariables,
    /// Objective at the initial point and after every accepted iterate.
    pub history: Vec<f64>,
    pub trace: Vec<ScaTraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub snr: SnrValue,
    /// SNR target actually enforced.
    pub gamma_used: f64,
    pub snr_relaxed: bool,
    pub objective: f64,
}

pub fn write_sca_trace_csv<W: Write>(mut out: W, trace: &[ScaTraceRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,objective,delta,min_snr_slack")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.iteration, r.objective, r.delta, r.min_snr_slack)?;
    }
    Ok(())
}

/// Regularized right inverse `Hᴴ(HHᴴ + δI)⁻¹`, `δ = 10⁻⁶·tr(HHᴴ)/N`.
fn regularized_inverse(h: &CMat) -> Result<CMat> {
    let n = h.nrows();
    let hh = h * h.adjoint();
    let tr: f64 = (0..n).map(|i| hh[(i, i)].re).sum();
    if tr == 0.0 {
        return Ok(CMat::zeros(h.ncols(), n));
    }
    let reg = &hh + CMat::identity(n, n) * C64::new(1e-6 * tr / n as f64, 0.0);
    match reg.cholesky() {
        Some(ch) => Ok(h.adjoint() * ch.inverse()),
        None => crate::linalg::pinv(h),
    }
}

struct InitPoint {
    tilde: TildeVariables,
    gamma: f64,
    relaxed: bool,
}

/// Regularized inverse plus a conjugate-steering radar beam, scaled so that
/// the power cones hold with 10% margin and the SNR with 1% margin. If no
/// scaling of this pair reaches `gamma`, the achievable value is returned.
#[allow(clippy::too_many_arguments)]
fn initial_point(
    h: &CMat,
    g: &CMat,
    slots: &[RVec],
    kappa: f64,
    gamma: f64,
    p_bs: f64,
    alpha_hint: f64,
    a_lower: f64,
    fallback: SnrFallback,
) -> Result<InitPoint> {
    let n_t = h.ncols();
    let w0 = regularized_inverse(h)?;
    let beam = steering_unchecked(alpha_hint, n_t).conjugate();
    let row_max = (0..n_t).map(|m| w0.row(m).norm_squared()).fold(0.0, f64::max);
    let a_t: Vec<f64> = slots.iter().map(|u| (g * (&w0 * real_to_complex(u))).norm_squared()).collect();
    let b = (g * &beam).norm_squared();
    let a_min = a_t.iter().cloned().fold(f64::INFINITY, f64::min);
    let build = |gamma: f64| -> Option<TildeVariables> {
        let k = 1.01 * 1.1 * kappa * gamma / p_bs;
        let need = a_t.iter().map(|a| k * row_max - a).fold(f64::NEG_INFINITY, f64::max);
        let rho2 = if need <= 0.0 {
            0.0
        } else if b > k {
            need / (b - k)
        } else {
            return None;
        };
        let a_tilde = (1.1 * (row_max + rho2) / p_bs).max(2.0 * a_lower);
        let tilde = TildeVariables { w_t_tilde: w0.clone(), v_tilde: &beam * C64::new(rho2.sqrt(), 0.0), a_tilde };
        // Re-check with the final ã (the lower bound may have raised it).
        let ok = a_t.iter().all(|a| a + rho2 * b >= (1.01 - 1e-9) * kappa * gamma * a_tilde);
        ok.then_some(tilde)
    };
    if kappa == 0.0 || gamma <= 0.0 {
        let t = build(0.0).expect("zero target is always reachable");
        return Ok(InitPoint { tilde: t, gamma, relaxed: false });
    }
    if let Some(t) = build(gamma) {
        return Ok(InitPoint { tilde: t, gamma, relaxed: false });
    }
    let ratio_w = if row_max > 0.0 { a_min / row_max } else { 0.0 };
    let achievable = ratio_w.max(b) * p_bs / (1.1 * 1.01 * kappa);
    if fallback == SnrFallback::Error || !(achievable > 0.0) {
        return Err(Error::Infeasible(format!(
            "SNR target {gamma:e} unreachable from the initial point (achievable ≈ {achievable:e}, beam gain {b:e}, κ {kappa:e})"
        )));
    }
    let relaxed = achievable / 1.02;
    let t = build(relaxed).ok_or_else(|| Error::Infeasible("relaxed SNR target still unreachable".into()))?;
    Ok(InitPoint { tilde: t, gamma: relaxed, relaxed: true })
}

fn scale_tilde(t: &TildeVariables, s: f64) -> TildeVariables {
    TildeVariables {
        w_t_tilde: &t.w_t_tilde * C64::new(s, 0.0),
        v_tilde: &t.v_tilde * C64::new(s, 0.0),
        a_tilde: t.a_tilde * s * s,
    }
}

/// SCA for `(W̃, ṽ, ã)`: repeatedly solve the convex program linearized at
/// the current point until the relative step falls below `iota`.
///
/// Internally the channels are normalized to unit mean-square entry so that
/// the solver sees O(1) data; reported values are in physical units.
#[allow(clippy::too_many_arguments)]
pub fn sca_optimize(
    u_k: &RVec,
    h_dl: &CMat,
    g: &CMat,
    sigma2: f64,
    gamma_snr: f64,
    p_bs: f64,
    alpha_hint: f64,
    options: &ScaOptions,
) -> Result<ScaOutcome> {
    let n = h_dl.nrows();
    let n_t = h_dl.ncols();
    check_dims("G columns", g.ncols(), n_t)?;
    check_dims("control length", u_k.len(), 3 * n)?;
    if !(p_bs > 0.0) || !(sigma2 >= 0.0) || gamma_snr.is_nan() {
        return Err(Error::InvalidArgument("need P_BS > 0, σ² ≥ 0 and a numeric γ".into()));
    }
    let slots = split_control(u_k)?;
    let h_s = {
        let f = h_dl.norm() / ((n * n_t) as f64).sqrt();
        if f > 0.0 && f.is_finite() {
            f
        } else {
            1.0
        }
    };
    let inv = C64::new(1.0 / h_s, 0.0);
    let hn = h_dl * inv;
    let gn = g * inv;
    let sigma2n = sigma2 / (h_s * h_s);
    let a_lower = options.a_lower * h_s * h_s;
    let kappa = snr_noise_power(options.snr_denominator, n, g.nrows(), sigma2n);
    let snr_active = kappa > 0.0 && gamma_snr > 0.0;

    let init = initial_point(&hn, &gn, &slots, kappa, gamma_snr, p_bs, alpha_hint, a_lower, options.snr_fallback)?;
    let gamma = init.gamma;
    let layout = DownlinkLayout { n_t, n_uavs: n };
    let c = u_k.norm_squared() / 3.0;
    let obj_scale = if c > 0.0 { 1.0 / c } else { 1.0 };

    // Physical-unit objective of a normalized point (h_s cancels).
    let objective = |t: &TildeVariables| objective_value(t, &hn, u_k, sigma2n);
    let slack = |t: &TildeVariables| -> Result<f64> {
        Ok(match sensing_snr_tilde(t, &gn, &slots, sigma2n, options.snr_denominator)? {
            SnrValue::Finite(v) if gamma > 0.0 => v / gamma - 1.0,
            _ => f64::INFINITY,
        })
    };

    let mut current = init.tilde;
    let mut x = layout.to_vector(&current)?;
    let mut obj = objective(&current)?;
    let mut history = vec![obj];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let ropts = RealifyOptions { a_lower, snr_denominator: options.snr_denominator, include_snr: snr_active };
    for it in 1..=options.max_iter {
        let mut prog = realify(&hn, &gn, u_k, sigma2n, gamma, p_bs, &current, &ropts)?;
        prog.scale_objective(obj_scale);
        if n as f64 * sigma2n == 0.0 {
            // Without noise ã is free upwards; a negligible cost pins it.
            prog.linear[layout.a()] += 1e-9;
        }

        let report = solve_from(&prog, &x, &options.solver)?;

        iterations = it;
        match report.status {
            SolveStatus::Optimal | SolveStatus::MaxIter => {}
            SolveStatus::Infeasible => {
                return Err(Error::Infeasible(format!("SCA subproblem {it} reported infeasible")));
            }
        }
        let cand = layout.from_vector(&report.x)?;
        let cand_obj = objective(&cand)?;
        if !(cand_obj <= obj) {
            // The previous point is feasible for this subproblem, so a worse
            // answer only reflects solver tolerance: keep the incumbent.
            converged = true;
            break;
        }
        let dw = (&cand.w_t_tilde - &current.w_t_tilde).norm();
        let dv = (&cand.v_tilde - &current.v_tilde).norm();
        let base = (current.w_t_tilde.norm() + current.v_tilde.norm()).max(f64::MIN_POSITIVE);
        let delta = (dw + dv) / base;
        current = cand;
        x = report.x;
        obj = cand_obj;
        history.push(obj);
        trace.push(ScaTraceRow { iteration: it, objective: obj, delta, min_snr_slack: slack(&current)? });
        // Without SNR rows nothing was linearized, so the subproblem was the
        // exact problem. Its minimizer need not be unique (directions in the
        // null space of H are free) and repeated solves would only drift.
        if delta <= options.iota || !snr_active {
            converged = true;
            break;
        }
    }

    // Shrink ã onto the tightest power cone: lowers the noise term and raises
    // the SNR without touching the beams.
    let tight = current.antenna_powers().into_iter().fold(0.0, f64::max) / p_bs;
    current.a_tilde = tight.max(a_lower);
    let final_obj = objective(&current)?;
    let tilde = scale_tilde(&current, 1.0 / h_s);
    let mut gains = tilde.to_gains()?;
    clamp_antenna_power(&mut gains, p_bs);
    let snr = if snr_active || kappa > 0.0 {
        sensing_snr(&gains, g, &slots, sigma2, options.snr_denominator)?
    } else {
        SnrValue::Infinite
    };
    Ok(ScaOutcome {
        gains,
        tilde,
        history,
        trace,
        iterations,
        converged,
        snr,
        gamma_used: gamma,
        snr_relaxed: init.relaxed,
        objective: final_obj,
    })
}

/// Pulls antennas that the unscaling pushed a few ulps over `P` back onto it.
fn clamp_antenna_power(gains: &mut DownlinkGains, p_bs: f64) {
    for m in 0..gains.w_t.nrows() {
        loop {
            let p = gains.w_t.row(m).norm_squared() + gains.v[m].norm_sqr();
            if p <= p_bs {
                break;
            }
            let f = (p_bs / p).sqrt() * (1.0 - f64::EPSILON);
            gains.w_t.row_mut(m).scale_mut(f);
            gains.v[m] *= f;
        }
    }
}

/// One downlink slot: `ζ = W_T ũ + v s`, UAV observations `z = Hζ + ε` and
/// the echo `Gζ + ε_dl`.
#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkSlot {
    pub zeta: CVec,
    pub z: CVec,
    pub echo: CVec,
}

pub fn downlink_transmit<R: Rng + ?Sized>(
    gains: &DownlinkGains,
    u_slot: &RVec,
    h_dl: &CMat,
    g: &CMat,
    s: C64,
    sigma2: f64,
    rng: &mut R,
) -> Result<DownlinkSlot> {
    check_dims("slot length", u_slot.len(), gains.w_t.ncols())?;
    check_dims("H columns", h_dl.ncols(), gains.w_t.nrows())?;
    check_dims("G columns", g.ncols(), gains.w_t.nrows())?;
    let zeta = &gains.w_t * real_to_complex(u_slot) + &gains.v * s;
    let mut z = h_dl * &zeta;
    let mut echo = g * &zeta;
    if sigma2 > 0.0 {
        for v in z.iter_mut() {
            *v += complex_normal(rng, sigma2);
        }
        for v in echo.iter_mut() {
            *v += complex_normal(rng, sigma2);
        }
    }
    Ok(DownlinkSlot { zeta, z, echo })
}

/// `a·Re z` for one UAV's three received samples.
pub fn uav_recover(z: &[C64], a: f64) -> Result<[f64; 3]> {
    check_dims("received samples", z.len(), DOWNLINK_SLOTS)?;
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("scaling factor must be positive, got {a}")));
    }
    Ok([a * z[0].re, a * z[1].re, a * z[2].re])
}

/// Recovers the whole 3N control from the per-slot observation vectors.
pub fn recover_control(z_slots: &[CVec], a: f64) -> Result<RVec> {
    check_dims("slot count", z_slots.len(), DOWNLINK_SLOTS)?;
    let n = z_slots[0].len();
    let mut u = RVec::zeros(DOWNLINK_SLOTS * n);
    for k in 0..n {
        let r = uav_recover(&[z_slots[0][k], z_slots[1][k], z_slots[2][k]], a)?;
        for t in 0..DOWNLINK_SLOTS {
            u[DOWNLINK_SLOTS * k + t] = r[t];
        }
    }
    Ok(u)
}
