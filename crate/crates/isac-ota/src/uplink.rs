//! Uplink over-the-air control construction.
//!
//! All UAVs transmit their 6 state components in 6 successive slots; the BS
//! stacks the received slots into `r = (H ⊗ I₆) x + (G ⊗ I₆) s + ε` (index
//! `6·antenna + slot`) and applies a post-processing matrix `W_R = W Γ⊥` whose
//! rows avoid the radar echo subspace. `W` minimizes the Frobenius relaxation
//! of the expected one-step LQR cost, which makes the noiseless OTA control
//! collapse to the LQR feedback when the array is large enough.

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{check_dims, Error, Result};
use crate::linalg::{
    kron_identity, left_basis_ascending, pinv, rank_tolerance, right_mul_kron_identity, right_solve_hermitian,
    to_complex, CMat, CVec, RMat, RVec, C64,
};
use crate::rng::complex_normal;
use crate::swarm::{lqr_gain, ControlWeights, SwarmSystem, STATE_DIM};

/// Number of uplink slots per control period (one per state component).
pub const UPLINK_SLOTS: usize = STATE_DIM;

pub fn stacked_index(antenna: usize, slot: usize) -> usize {
    UPLINK_SLOTS * antenna + slot
}

/// `Ξ = G ⊗ I₆`.
pub fn build_xi(g: &CMat) -> CMat {
    kron_identity(g, UPLINK_SLOTS)
}

/// Rows spanning the orthogonal complement of the column space of `xi`.
pub fn orth_complement(xi: &CMat) -> Result<CMat> {
    let m = xi.nrows();
    if m == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let (u, sv) = left_basis_ascending(xi)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(smax, xi.nrows(), xi.ncols());
    let null = sv.iter().take_while(|s| **s <= tol).count();
    if null == 0 {
        return Err(Error::NoNullSpace(format!("{}×{} matrix has full row rank", xi.nrows(), xi.ncols())));
    }
    Ok(u.columns(0, null).adjoint())
}

/// Γ⊥ either as an explicit matrix or in the factored form `U⊥ᴴ ⊗ I₆` that
/// arises when the echo subspace is itself Kronecker-structured.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaPerp {
    Dense(CMat),
    Kron { u_perp_h: CMat },
}

impl GammaPerp {
    pub fn to_dense(&self) -> CMat {
        match self {
            GammaPerp::Dense(m) => m.clone(),
            GammaPerp::Kron { u_perp_h } => kron_identity(u_perp_h, UPLINK_SLOTS),
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            GammaPerp::Dense(m) => m.nrows(),
            GammaPerp::Kron { u_perp_h } => UPLINK_SLOTS * u_perp_h.nrows(),
        }
    }
}

/// Control-centric part of the uplink design.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGain {
    /// 3N × 6N_r post-processing matrix.
    pub w_r: CMat,
    pub gamma_perp: GammaPerp,
    /// 3N × rows(Γ⊥) coefficient matrix, `W_R = W Γ⊥`.
    pub w_coeff: CMat,
    /// Set when Φ needed the `1e-12·I` shift to factor.
    pub phi_regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkGains {
    pub w_r: CMat,
    pub w_s: CMat,
    pub gamma_perp: GammaPerp,
    pub w_coeff: CMat,
    pub phi_regularized: bool,
}

/// Upper-triangular `Ψ` with `Φ = ΨᵀΨ`, `Φ = [[BᵀPB+R, BᵀP],[PB, P]]`.
pub fn psi_factor(sys: &SwarmSystem, weights: &ControlWeights) -> Result<(RMat, bool)> {
    let ni = sys.input_dim();
    let ns = sys.state_dim();
    let bt = sys.b.transpose();
    let mut phi = RMat::zeros(ni + ns, ni + ns);
    phi.view_mut((0, 0), (ni, ni)).copy_from(&(&bt * &weights.p * &sys.b + &weights.r));
    let btp = &bt * &weights.p;
    phi.view_mut((0, ni), (ni, ns)).copy_from(&btp);
    phi.view_mut((ni, 0), (ns, ni)).copy_from(&btp.transpose());
    phi.view_mut((ni, ni), (ns, ns)).copy_from(&weights.p);
    crate::linalg::symmetrize(&mut phi);
    if let Some(c) = Cholesky::new(phi.clone()) {
        return Ok((c.l().transpose(), false));
    }
    let n = phi.nrows();
    let shifted = phi + RMat::identity(n, n) * 1e-12;
    let c = Cholesky::new(shifted).ok_or_else(|| Error::Numerical("Φ is not positive semidefinite".into()))?;
    Ok((c.l().transpose(), true))
}

/// `Υ = Γ⊥ (H ⊗ I₆)`.
pub fn upsilon(gamma_perp: &CMat, h_ul_scaled: &CMat) -> CMat {
    right_mul_kron_identity(gamma_perp, h_ul_scaled, UPLINK_SLOTS)
}

fn check_uplink_dims(sys: &SwarmSystem, h: &CMat, g: &CMat) -> Result<()> {
    check_dims("uplink channel columns", h.ncols(), sys.n_uavs)?;
    check_dims("radar response rows", g.nrows(), h.nrows())
}

/// General closed-form design: builds Γ⊥ from Ξ explicitly and solves the
/// stationarity condition `(Ψ₁ᴴΨ₁) W (ΥΥᴴ + σ²Γ⊥Γ⊥ᴴ) = −Ψ₁ᴴΨ₂AΥᴴ` as a
/// two-sided matrix equation.
pub fn control_centric_gain(
    sys: &SwarmSystem,
    weights: &ControlWeights,
    h_ul_scaled: &CMat,
    g: &CMat,
    sigma2: f64,
) -> Result<ControlGain> {
    check_uplink_dims(sys, h_ul_scaled, g)?;
    let gp = orth_complement(&build_xi(g))?;
    let ups = upsilon(&gp, h_ul_scaled);
    let (psi, regularized) = psi_factor(sys, weights)?;
    let ni = sys.input_dim();
    let psi1 = psi.columns(0, ni).into_owned();
    let psi2 = psi.columns(ni, sys.state_dim()).into_owned();
    let m = psi1.transpose() * &psi1;
    let lhs_rhs = psi1.transpose() * psi2 * &sys.a;
    let rhs = -(to_complex(&lhs_rhs) * ups.adjoint());
    let right = &ups * ups.adjoint() + (&gp * gp.adjoint()) * C64::new(sigma2, 0.0);
    let m_chol = Cholesky::new(m).ok_or_else(|| Error::Numerical("Ψ₁ᴴΨ₁ is singular".into()))?;
    let left_solved = to_complex(&m_chol.inverse()) * rhs;
    let w_coeff = right_solve_hermitian(&left_solved, &right)?;
    let w_r = &w_coeff * &gp;
    Ok(ControlGain { w_r, gamma_perp: GammaPerp::Dense(gp), w_coeff, phi_regularized: regularized })
}

/// Same design exploiting `Γ⊥ = U⊥ᴴ ⊗ I₆` (U⊥ spans the complement of G's
/// column space). With `H' = U⊥ᴴH` the solution is
/// `W = −K ((H'ᴴH' + σ²I)⁻¹H'ᴴ ⊗ I₆)` where K is the LQR gain, so nothing larger
/// than N_r×N_r is ever factored.
pub fn control_centric_gain_kron(
    sys: &SwarmSystem,
    weights: &ControlWeights,
    h_ul_scaled: &CMat,
    g: &CMat,
    sigma2: f64,
) -> Result<ControlGain> {
    check_uplink_dims(sys, h_ul_scaled, g)?;
    let k = to_complex(&lqr_gain(sys, weights)?);
    control_centric_gain_with_lqr(&k, h_ul_scaled, g, sigma2)
}

/// Fast path given a precomputed (complexified) LQR gain.
pub fn control_centric_gain_with_lqr(k: &CMat, h_ul_scaled: &CMat, g: &CMat, sigma2: f64) -> Result<ControlGain> {
    let (u, sv) = left_basis_ascending(g)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(smax, g.nrows(), g.ncols());
    let null = sv.iter().take_while(|s| **s <= tol).count();
    if null == 0 {
        return Err(Error::NoNullSpace("radar response has full row rank".into()));
    }
    let u_perp_h = u.columns(0, null).adjoint();
    let hp = &u_perp_h * h_ul_scaled;
    let t = if sigma2 > 0.0 {
        let n = hp.ncols();
        let gram = hp.adjoint() * &hp + CMat::identity(n, n) * C64::new(sigma2, 0.0);
        match Cholesky::new(gram) {
            Some(c) => c.solve(&hp.adjoint()),
            None => pinv(&hp)?,
        }
    } else {
        pinv(&hp)?
    };
    let w_coeff = -right_mul_kron_identity(k, &t, UPLINK_SLOTS);
    let w_r = -right_mul_kron_identity(k, &(&t * &u_perp_h), UPLINK_SLOTS);
    Ok(ControlGain { w_r, gamma_perp: GammaPerp::Kron { u_perp_h }, w_coeff, phi_regularized: false })
}

pub fn default_sensing_dim(n_r: usize, n_uavs: usize) -> usize {
    n_r.saturating_sub(n_uavs).max(2).min(n_r)
}

/// `W_S = Dᴴ` with D the `d` left-singular vectors of the uplink channel with
/// the smallest singular values.
pub fn sensing_centric_gain(h_ul: &CMat, d: usize) -> Result<CMat> {
    let n_r = h_ul.nrows();
    if d == 0 || d > n_r {
        return Err(Error::InvalidArgument(format!("sensing dimension {d} outside 1..={n_r}")));
    }
    let (u, _) = left_basis_ascending(h_ul)?;
    Ok(u.columns(0, d).adjoint())
}

/// Complete per-period uplink design with the structured solver.
pub fn uplink_gains(k_lqr: &CMat, channels: &ChannelSet, sigma2: f64, sensing_dim: usize) -> Result<UplinkGains> {
    let h = channels.h_ul_scaled();
    let c = control_centric_gain_with_lqr(k_lqr, &h, &channels.g, sigma2)?;
    let w_s = sensing_centric_gain(&channels.h_ul, sensing_dim)?;
    Ok(UplinkGains {
        w_r: c.w_r,
        w_s,
        gamma_perp: c.gamma_perp,
        w_coeff: c.w_coeff,
        phi_regularized: c.phi_regularized,
    })
}

/// What to do with transmit values exceeding the `|γ x| ≤ 1` budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PowerPolicy {
    /// Transmit as is and count violations.
    #[default]
    Count,
    /// Saturate at `±1/γ` and count violations.
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkReception {
    pub r_slots: Vec<CVec>,
    pub r_stacked: CVec,
    pub s_samples: Vec<C64>,
    pub power_violations: usize,
}

pub fn draw_waveform<R: Rng + ?Sized>(rng: &mut R, slots: usize) -> Vec<C64> {
    (0..slots).map(|_| complex_normal(rng, 1.0)).collect()
}

/// Simulates the 6 uplink slots. `x` is the transmitted (error) state, `probe`
/// the BS radar beam `b` so that the echo in slot t is `G b s[t]`.
pub fn uplink_transmit<R: Rng + ?Sized>(
    x: &RVec,
    channels: &ChannelSet,
    probe: &CVec,
    s: &[C64],
    sigma2: f64,
    policy: PowerPolicy,
    rng: &mut R,
) -> Result<UplinkReception> {
    let n = channels.n_uavs();
    let n_r = channels.n_r();
    check_dims("uplink state length", x.len(), STATE_DIM * n)?;
    check_dims("probe length", probe.len(), channels.n_t())?;
    check_dims("waveform samples", s.len(), UPLINK_SLOTS)?;
    let gamma = channels.gamma_ul;
    let echo = &channels.g * probe;
    let mut violations = 0;
    let mut r_slots = Vec::with_capacity(UPLINK_SLOTS);
    for (t, st) in s.iter().enumerate() {
        let mut tx = CVec::zeros(n);
        for k in 0..n {
            let mut v = gamma * x[STATE_DIM * k + t];
            if v.abs() > 1.0 {
                violations += 1;
                if policy == PowerPolicy::Clamp {
                    v = v.signum();
                }
            }
            tx[k] = C64::new(v, 0.0);
        }
        let mut r = &channels.h_ul * tx + &echo * *st;
        if sigma2 > 0.0 {
            for i in 0..n_r {
                r[i] += complex_normal(rng, sigma2);
            }
        }
        r_slots.push(r);
    }
    let mut r_stacked = CVec::zeros(UPLINK_SLOTS * n_r);
    for (t, r) in r_slots.iter().enumerate() {
        for i in 0..n_r {
            r_stacked[stacked_index(i, t)] = r[i];
        }
    }
    Ok(UplinkReception { r_slots, r_stacked, s_samples: s.to_vec(), power_violations: violations })
}

/// `u = Re{W_R r}`.
pub fn construct_control(w_r: &CMat, reception: &UplinkReception) -> RVec {
    (w_r * &reception.r_stacked).map(|z| z.re)
}

/// Post-processed sensing snapshots `W_S r[t]`.
pub fn sensing_snapshots(w_s: &CMat, reception: &UplinkReception) -> Vec<CVec> {
    reception.r_slots.iter().map(|r| w_s * r).collect()
}

/// Squared spectral norm of the cost matrix
/// `Ψ₁[WΥ, σWΓ⊥] + Ψ₂[A, 0]` and its Frobenius upper bound.
pub fn relaxation_bounds(
    sys: &SwarmSystem,
    weights: &ControlWeights,
    w_coeff: &CMat,
    ups: &CMat,
    gamma_perp: &CMat,
    sigma2: f64,
) -> Result<(f64, f64)> {
    let (psi, _) = psi_factor(sys, weights)?;
    let ni = sys.input_dim();
    let ns = sys.state_dim();
    let psi1 = to_complex(&psi.columns(0, ni).into_owned());
    let psi2a = to_complex(&(psi.columns(ni, ns) * &sys.a));
    let left = &psi1 * (w_coeff * ups) + psi2a;
    let right = &psi1 * (w_coeff * gamma_perp) * C64::new(sigma2.sqrt(), 0.0);
    let mut pi = CMat::zeros(left.nrows(), left.ncols() + right.ncols());
    pi.columns_mut(0, left.ncols()).copy_from(&left);
    pi.columns_mut(left.ncols(), right.ncols()).copy_from(&right);
    let frob = crate::linalg::frob_sq(&pi);
    let spec = crate::linalg::singular_values(&pi)?.first().copied().unwrap_or(0.0).powi(2);
    Ok((spec, frob))
}
