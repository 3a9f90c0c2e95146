//! Geometric multipath channels between the BS array and the UAVs, ULA steering
//! vectors and the rank-one radar echo.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::rng::complex_normal;

/// ULA response `ψ(θ, m)_i = exp(jπ i cos θ)`, `i = 0..m−1`.
pub fn steering(theta: f64, m: usize) -> Result<CVec> {
    if m == 0 {
        return Err(Error::InvalidArgument("steering vector needs at least one antenna".into()));
    }
    Ok(steering_unchecked(theta, m))
}

pub(crate) fn steering_unchecked(theta: f64, m: usize) -> CVec {
    let c = theta.cos();
    CVec::from_fn(m, |i, _| C64::from_polar(1.0, PI * i as f64 * c))
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Azimuth of `to` seen from `from`, folded into `[0, π]`.
pub fn azimuth(from: [f64; 3], to: [f64; 3]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0]).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_position: [f64; 3],
    pub uav_positions: Vec<[f64; 3]>,
    pub object_position: [f64; 3],
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if distance(self.bs_position, self.object_position) <= 0.0 {
            return Err(Error::InvalidArgument("object coincides with the BS".into()));
        }
        for (n, p) in self.uav_positions.iter().enumerate() {
            if !(distance(self.bs_position, *p) > 0.0) {
                return Err(Error::InvalidArgument(format!("UAV {n} coincides with the BS or is not finite")));
            }
        }
        Ok(())
    }

    pub fn object_azimuth(&self) -> f64 {
        azimuth(self.bs_position, self.object_position)
    }

    pub fn object_distance(&self) -> f64 {
        distance(self.bs_position, self.object_position)
    }
}

/// How the radar reflection gain β follows from the path-loss rule
/// `0.1·C₀·d^{−η_LoS}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// The rule gives the echo power gain, `|β|² = 0.1·C₀·d^{−η}`.
    #[default]
    TablePower,
    /// The rule gives β itself.
    TableAmplitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub n_paths: usize,
    pub c0: f64,
    pub eta_los: f64,
    pub eta_nlos: f64,
    pub gamma_ul: f64,
    pub beta_rule: BetaRule,
    pub beta_random_phase: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            n_paths: 10,
            c0: 1e-3,
            eta_los: 2.5,
            eta_nlos: 3.0,
            gamma_ul: 100.0,
            beta_rule: BetaRule::TablePower,
            beta_random_phase: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("at least one path is required".into()));
        }
        if !(self.c0 > 0.0) {
            return Err(Error::InvalidArgument("c0 must be positive".into()));
        }
        if !(self.eta_nlos >= self.eta_los) {
            return Err(Error::InvalidArgument("eta_nlos must be at least eta_los".into()));
        }
        Ok(())
    }

    /// Magnitude of β for an object at distance `d`.
    pub fn beta_magnitude(&self, d: f64) -> f64 {
        let rule = 0.1 * self.c0 * d.powf(-self.eta_los);
        match self.beta_rule {
            BetaRule::TablePower => rule.sqrt(),
            BetaRule::TableAmplitude => rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// N_r×N, column n is the uplink channel of UAV n (without γ_ul).
    pub h_ul: CMat,
    /// N×N_t, row n is the downlink channel to UAV n.
    pub h_dl: CMat,
    /// N_r×N_t radar response.
    pub g: CMat,
    pub alpha_o: f64,
    pub beta: C64,
    pub gamma_ul: f64,
}

impl ChannelSet {
    pub fn h_ul_scaled(&self) -> CMat {
        &self.h_ul * C64::new(self.gamma_ul, 0.0)
    }

    pub fn n_r(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_uavs(&self) -> usize {
        self.h_ul.ncols()
    }
}

/// `G = β ψ(α, N_r) ψᵀ(α, N_t)` (plain transpose).
pub fn radar_response(alpha_o: f64, beta: C64, n_r: usize, n_t: usize) -> CMat {
    let r = steering_unchecked(alpha_o, n_r);
    let t = steering_unchecked(alpha_o, n_t);
    (r * t.transpose()) * beta
}

pub(crate) fn nlos_paths<R: Rng + ?Sized>(rng: &mut R, var: f64, count: usize) -> Vec<(C64, f64)> {
    (0..count)
        .map(|_| {
            let gain = complex_normal(rng, var);
            let angle = rng.random_range(-PI / 2.0..PI / 2.0);
            (gain, angle)
        })
        .collect()
}

/// Draws one block-fading realization. Per UAV the generator is consumed in a
/// fixed order (uplink paths, then downlink paths), independent of the array
/// sizes.
pub fn draw_channels<R: Rng + ?Sized>(
    geometry: &Geometry,
    params: &ChannelParams,
    n_r: usize,
    n_t: usize,
    rng: &mut R,
) -> Result<ChannelSet> {
    geometry.validate()?;
    params.validate()?;
    if n_r == 0 || n_t == 0 {
        return Err(Error::InvalidArgument("antenna counts must be positive".into()));
    }
    let n = geometry.uav_positions.len();
    let mut h_ul = CMat::zeros(n_r, n);
    let mut h_dl = CMat::zeros(n, n_t);
    let extra = params.n_paths - 1;
    for (k, p) in geometry.uav_positions.iter().enumerate() {
        let d = distance(geometry.bs_position, *p);
        let theta = azimuth(geometry.bs_position, *p);
        let los = (params.c0 * d.powf(-params.eta_los)).sqrt();
        let var = if extra > 0 { params.c0 * d.powf(-params.eta_nlos) / extra as f64 } else { 0.0 };
        let up = nlos_paths(rng, var, extra);
        let down = nlos_paths(rng, var, extra);

        let mut col = steering_unchecked(theta, n_r) * C64::new(los, 0.0);
        for (gain, ang) in &up {
            col += steering_unchecked(*ang, n_r) * *gain;
        }
        h_ul.set_column(k, &col);

        let mut row = steering_unchecked(theta, n_t) * C64::new(los, 0.0);
        for (gain, ang) in &down {
            row += steering_unchecked(*ang, n_t) * *gain;
        }
        h_dl.set_row(k, &row.transpose());
    }
    let alpha_o = geometry.object_azimuth();
    let mag = params.beta_magnitude(geometry.object_distance());
    let beta = if params.beta_random_phase {
        C64::from_polar(mag, rng.random_range(0.0..2.0 * PI))
    } else {
        C64::new(mag, 0.0)
    };
    Ok(ChannelSet { h_ul, h_dl, g: radar_response(alpha_o, beta, n_r, n_t), alpha_o, beta, gamma_ul: params.gamma_ul })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn default_geometry(uavs: Vec<[f64; 3]>) -> Geometry {
        Geometry { bs_position: [0.0, 0.0, 5.0], uav_positions: uavs, object_position: [10.0, 10.0, 1.0] }
    }

    #[test]
    fn steering_examples() {
        let v = steering(PI / 2.0, 4).unwrap();
        assert!(v.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let v = steering(0.0, 3).unwrap();
        let want = [1.0, -1.0, 1.0];
        for i in 0..3 {
            assert!((v[i] - C64::new(want[i], 0.0)).norm() < 1e-12);
        }
        let v = steering(1.234, 17).unwrap();
        assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        assert!(steering(0.3, 0).is_err());
    }

    #[test]
    fn pure_los_norm() {
        let params = ChannelParams { n_paths: 1, ..Default::default() };
        let geo = default_geometry(vec![[30.0, 40.0, 0.0]]);
        let ch = draw_channels(&geo, &params, 8, 5, &mut SeedTree::new(1).stream("c", 0)).unwrap();
        let d = distance(geo.bs_position, geo.uav_positions[0]);
        let want = params.c0 * d.powf(-2.5) * 8.0;
        assert!((ch.h_ul.column(0).norm_squared() - want).abs() < 1e-14 * want.max(1e-300) + 1e-25);
    }

    #[test]
    fn unit_distance_gain() {
        let params = ChannelParams { n_paths: 1, ..Default::default() };
        let geo =
            Geometry { bs_position: [0.0; 3], uav_positions: vec![[1.0, 0.0, 0.0]], object_position: [1.0, 1.0, 0.0] };
        let ch = draw_channels(&geo, &params, 4, 4, &mut SeedTree::new(1).stream("c", 0)).unwrap();
        assert!(ch.h_ul.iter().all(|z| (z.norm() - 0.0316227766).abs() < 1e-8));
    }

    #[test]
    fn nlos_gain_variance() {
        let mut rng = SeedTree::new(2).stream("c", 0);
        let var = 1e-3 * 20f64.powf(-3.0) / 9.0;
        let draws = nlos_paths(&mut rng, var, 10_000);
        let m = draws.iter().map(|(g, _)| g.norm_sqr()).sum::<f64>() / draws.len() as f64;
        assert!((m / var - 1.0).abs() < 0.05);
        assert!(draws.iter().all(|(_, a)| (-PI / 2.0..PI / 2.0).contains(a)));
    }

    #[test]
    fn average_channel_power() {
        let params = ChannelParams::default();
        let geo = default_geometry(vec![[20.0, 10.0, 0.0]]);
        let d = distance(geo.bs_position, geo.uav_positions[0]);
        let want = 12.0 * params.c0 * (d.powf(-2.5) + d.powf(-3.0));
        let mut rng = SeedTree::new(3).stream("c", 0);
        let mut acc = 0.0;
        for _ in 0..10_000 {
            acc += draw_channels(&geo, &params, 12, 4, &mut rng).unwrap().h_ul.norm_squared();
        }
        assert!((acc / 10_000.0 / want - 1.0).abs() < 0.05);
    }

    #[test]
    #[allow(clippy::approx_constant)] // the published 4-digit azimuth
    fn default_radar_geometry() {
        let geo = default_geometry(vec![[50.0, 50.0, 0.0]]);
        assert!((geo.object_azimuth() - 0.7854).abs() < 1e-4);
        assert!((geo.object_distance() - 14.697).abs() < 1e-3);
        let amp = ChannelParams { beta_rule: BetaRule::TableAmplitude, ..Default::default() };
        let lit = amp.beta_magnitude(geo.object_distance());
        assert!((lit - 0.1 * 1e-3 * 14.6969f64.powf(-2.5)).abs() < 1e-11);
        let pw = ChannelParams::default().beta_magnitude(geo.object_distance());
        assert!((pw * pw - lit).abs() < 1e-18);
    }

    #[test]
    fn radar_response_rank_one() {
        for (alpha, beta) in [(0.3, C64::new(2.0, 1.0)), (2.5, C64::new(1e-4, 0.0))] {
            let g = radar_response(alpha, beta, 9, 5);
            assert!((g[(0, 0)] - beta).norm() < 1e-15);
            let s = crate::linalg::singular_values(&g).unwrap();
            assert!(s[1] <= 1e-10 * s[0]);
            let rebuilt = steering(alpha, 9).unwrap() * steering(alpha, 5).unwrap().transpose() * beta;
            assert!((g - rebuilt).norm() <= 1e-12 * beta.norm());
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let geo = default_geometry(vec![[20.0, 10.0, 0.0], [70.0, 3.0, 0.0]]);
        let p = ChannelParams { beta_random_phase: true, ..Default::default() };
        let a = draw_channels(&geo, &p, 6, 6, &mut SeedTree::new(9).stream("c", 2)).unwrap();
        let b = draw_channels(&geo, &p, 6, 6, &mut SeedTree::new(9).stream("c", 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn los_angle_is_shared_by_both_links() {
        let geo = default_geometry(vec![[20.0, -10.0, 0.0]]);
        let p = ChannelParams { n_paths: 1, ..Default::default() };
        let ch = draw_channels(&geo, &p, 5, 5, &mut SeedTree::new(1).stream("c", 0)).unwrap();
        let ul = ch.h_ul.column(0).into_owned();
        let dl = ch.h_dl.row(0).transpose();
        assert!((ul - dl).norm() < 1e-15);
        let theta = azimuth(geo.bs_position, geo.uav_positions[0]);
        assert!((theta - (10f64).atan2(20.0)).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        let geo = Geometry { bs_position: [0.0; 3], uav_positions: vec![[0.0; 3]], object_position: [1.0, 0.0, 0.0] };
        let mut rng = SeedTree::new(1).stream("c", 0);
        assert!(draw_channels(&geo, &ChannelParams::default(), 4, 4, &mut rng).is_err());
        let bad = ChannelParams { eta_nlos: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
