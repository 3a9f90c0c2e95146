//! Scenario configuration: JSON schema, validation, dotted-key overrides and
//! sweep parameters.
//!
//! Every field has a default, so a config file only needs the keys it changes.
//! The defaults are the full-scale scenario (50 UAVs, 60 BS antennas).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::{ChannelParams, Geometry};
use crate::downlink::{ScaOptions, SnrDenominator, SnrFallback};
use crate::error::{Error, Result};
use crate::subproblem::SolverOptions;
use crate::swarm::WeightPattern;
use crate::uplink::{default_sensing_dim, PowerPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Uplink over-the-air control construction plus ISAC downlink dispatch.
    #[default]
    IsacOta,
    /// Ideal LQR feedback, no wireless stages.
    LqrBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_opt: f64,
    /// Newton steps per convex subproblem.
    pub max_iter: usize,
    /// SCA stop threshold on the relative step.
    pub sca_iota: f64,
    pub sca_max_iter: usize,
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-7,
            tol_opt: 1e-7,
            max_iter: 500,
            sca_iota: 1e-3,
            sca_max_iter: 50,
            riccati_tol: 1e-9,
            riccati_max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_uavs: usize,
    /// Control interval in seconds.
    pub dt: f64,
    pub weights: WeightPattern,
    /// Initial x and y are uniform on this interval (m).
    pub initial_xy_range: [f64; 2],
    pub initial_z: f64,
    pub n_t: usize,
    pub n_r: usize,
    pub bs_position: [f64; 3],
    pub object_position: [f64; 3],
    pub channel: ChannelParams,
    /// Per-antenna BS transmit power (W).
    pub p_bs: f64,
    pub gamma_snr_db: f64,
    /// Receiver noise variance (W); -110 dBW by default.
    pub sigma2: f64,
    pub obs_noise_var: f64,
    pub power_policy: PowerPolicy,
    pub snr_denominator: SnrDenominator,
    pub snr_fallback: SnrFallback,
    /// Rows of the uplink sensing projector; `null` means `max(N_r − N, 2)`.
    pub sensing_dim: Option<usize>,
    /// MUSIC grid step (rad).
    pub grid_step: f64,
    /// Control periods per episode.
    pub horizon: usize,
    pub seed: u64,
    pub controller: Controller,
    /// Draw the channels once and reuse all designs for every period.
    pub static_channels: bool,
    pub solver: SolverSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_uavs: 50,
            dt: 0.02,
            weights: WeightPattern::default(),
            initial_xy_range: [0.0, 100.0],
            initial_z: 0.0,
            n_t: 60,
            n_r: 60,
            bs_position: [0.0, 0.0, 5.0],
            object_position: [10.0, 10.0, 1.0],
            channel: ChannelParams::default(),
            p_bs: 1.0,
            gamma_snr_db: 20.0,
            sigma2: 1e-11,
            obs_noise_var: 0.0,
            power_policy: PowerPolicy::Count,
            snr_denominator: SnrDenominator::UavCount,
            snr_fallback: SnrFallback::Relax,
            sensing_dim: None,
            grid_step: 1e-3,
            horizon: 2000,
            seed: 0,
            controller: Controller::IsacOta,
            static_channels: false,
            solver: SolverSettings::default(),
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(path, message))
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ScenarioConfig {
    /// Scaled-down profile: 10 UAVs, 16 antennas, 100 periods (2 s).
    pub fn fast() -> Self {
        Self { n_uavs: 10, n_t: 16, n_r: 16, horizon: 100, ..Self::default() }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), message: format!("column {}: {e}", e.column()) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn gamma_snr_linear(&self) -> f64 {
        10f64.powf(self.gamma_snr_db / 10.0)
    }

    pub fn sensing_dim(&self) -> usize {
        self.sensing_dim.unwrap_or_else(|| default_sensing_dim(self.n_r, self.n_uavs))
    }

    pub fn sca_options(&self) -> ScaOptions {
        ScaOptions {
            iota: self.solver.sca_iota,
            max_iter: self.solver.sca_max_iter,
            solver: SolverOptions {
                tol_feas: self.solver.tol_feas,
                tol_opt: self.solver.tol_opt,
                max_iter: self.solver.max_iter,
                ..SolverOptions::default()
            },
            snr_denominator: self.snr_denominator,
            snr_fallback: self.snr_fallback,
            ..ScaOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check((1..=1000).contains(&self.n_uavs), "n_uavs", "must be in 1..=1000")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be positive and finite")?;
        let w = &self.weights;
        check(w.q_position >= 0.0 && w.q_position.is_finite(), "weights.q_position", "must be non-negative")?;
        check(w.q_velocity >= 0.0 && w.q_velocity.is_finite(), "weights.q_velocity", "must be non-negative")?;
        check(w.r_control > 0.0 && w.r_control.is_finite(), "weights.r_control", "must be positive")?;
        let [lo, hi] = self.initial_xy_range;
        check(lo.is_finite() && hi.is_finite() && lo <= hi, "initial_xy_range", "needs finite [lo, hi] with lo <= hi")?;
        check(self.initial_z.is_finite(), "initial_z", "must be finite")?;
        check((2..=1024).contains(&self.n_t), "n_t", "must be in 2..=1024")?;
        check((2..=1024).contains(&self.n_r), "n_r", "must be in 2..=1024")?;
        check(finite3(&self.bs_position), "bs_position", "must be finite")?;
        check(finite3(&self.object_position), "object_position", "must be finite")?;
        check(self.object_position != self.bs_position, "object_position", "coincides with the BS")?;
        self.channel.validate().map_err(|e| config_err("channel", e.to_string()))?;
        check(self.channel.c0.is_finite(), "channel.c0", "must be finite")?;
        check(
            self.channel.eta_los.is_finite() && self.channel.eta_nlos.is_finite(),
            "channel.eta_los",
            "exponents must be finite",
        )?;
        check(self.channel.n_paths <= 1000, "channel.n_paths", "must be at most 1000")?;
        check(
            self.channel.gamma_ul > 0.0 && self.channel.gamma_ul.is_finite(),
            "channel.gamma_ul",
            "must be positive",
        )?;
        check(self.p_bs > 0.0 && self.p_bs.is_finite(), "p_bs", "must be positive")?;
        check(self.gamma_snr_db.is_finite() && self.gamma_snr_db <= 300.0, "gamma_snr_db", "must be finite")?;
        check(self.sigma2 >= 0.0 && self.sigma2.is_finite(), "sigma2", "must be non-negative")?;
        check(self.obs_noise_var >= 0.0 && self.obs_noise_var.is_finite(), "obs_noise_var", "must be non-negative")?;
        if let Some(d) = self.sensing_dim {
            check(d >= 1 && d < self.n_r, "sensing_dim", "must be in 1..n_r")?;
        }
        check(
            self.grid_step > 0.0 && self.grid_step <= std::f64::consts::PI && self.grid_step >= 1e-6,
            "grid_step",
            "must be in [1e-6, π]",
        )?;
        check((1..=10_000_000).contains(&self.horizon), "horizon", "must be in 1..=10000000")?;
        let s = &self.solver;
        check(s.tol_feas > 0.0 && s.tol_feas < 1.0, "solver.tol_feas", "must be in (0, 1)")?;
        check(s.tol_opt > 0.0 && s.tol_opt < 1.0, "solver.tol_opt", "must be in (0, 1)")?;
        check(s.max_iter >= 1, "solver.max_iter", "must be at least 1")?;
        check(s.sca_iota > 0.0 && s.sca_iota.is_finite(), "solver.sca_iota", "must be positive")?;
        check(s.sca_max_iter >= 1, "solver.sca_max_iter", "must be at least 1")?;
        check(s.riccati_tol > 0.0 && s.riccati_tol < 1.0, "solver.riccati_tol", "must be in (0, 1)")?;
        check(s.riccati_max_iter >= 1, "solver.riccati_max_iter", "must be at least 1")?;
        Ok(())
    }

    /// Geometry with the given UAV positions and the configured BS/object.
    pub fn geometry(&self, uav_positions: Vec<[f64; 3]>) -> Geometry {
        Geometry { bs_position: self.bs_position, uav_positions, object_position: self.object_position }
    }

    /// Applies `key.path=value` overrides. Values are read as JSON, falling
    /// back to a bare string (`controller=lqr-baseline`).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut last_key = String::new();
        for o in overrides {
            let (path, value) = parse_override(o.as_ref())?;
            set_path(&mut doc, &path, value)?;
            last_key = path.join(".");
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| config_err(&last_key, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `a.b.c=value` into its key path and JSON value.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| config_err(text, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err(text, "empty key"));
    }
    let path: Vec<String> = key.split('.').map(|s| s.to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty path segment"));
    }
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let full = path.join(".");
    let mut node = doc;
    for (i, seg) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(&full, format!("`{}` is not a section", path[..i].join("."))))?;
        let slot = obj.get_mut(seg.as_str()).ok_or_else(|| config_err(&full, "unknown key"))?;
        if i + 1 == path.len() {
            // Type-check this field alone so the message names it.
            if slot.is_object() && !value.is_object() {
                return Err(config_err(&full, "is a section, not a value"));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("path is non-empty")
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Sets `n_t = n_r`.
    NAntennas,
    GammaSnrDb,
    NUavs,
}

impl SweepParam {
    pub const ALL: [SweepParam; 3] = [SweepParam::NAntennas, SweepParam::GammaSnrDb, SweepParam::NUavs];

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::NAntennas => "n_antennas",
            SweepParam::GammaSnrDb => "gamma_snr_db",
            SweepParam::NUavs => "n_uavs",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
            config_err("param", format!("unknown sweep parameter `{name}`; valid: {}", valid.join(", ")))
        })
    }

    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut out = cfg.clone();
        let count = || -> Result<usize> {
            if value.fract() == 0.0 && (1.0..=1e6).contains(&value) {
                Ok(value as usize)
            } else {
                Err(config_err(self.name(), format!("{value} is not a positive integer")))
            }
        };
        match self {
            SweepParam::NAntennas => {
                let n = count()?;
                out.n_t = n;
                out.n_r = n;
            }
            SweepParam::GammaSnrDb => out.gamma_snr_db = value,
            SweepParam::NUavs => out.n_uavs = count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

/// Parsed sweep values, sorted ascending with duplicates removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepValues {
    pub values: Vec<f64>,
    pub duplicates: Vec<f64>,
}

/// Comma-separated list of finite numbers.
pub fn parse_sweep_values(text: &str) -> Result<SweepValues> {
    let mut values = Vec::new();
    for tok in text.split(',') {
        let tok = tok.trim();
        let v: f64 = tok.parse().map_err(|_| config_err("values", format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(config_err("values", format!("`{tok}` is not finite")));
        }
        values.push(v);
    }
    values.sort_by(f64::total_cmp);
    let mut duplicates = Vec::new();
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for v in values {
        if out.last() == Some(&v) {
            if duplicates.last() != Some(&v) {
                duplicates.push(v);
            }
        } else {
            out.push(v);
        }
    }
    Ok(SweepValues { values: out, duplicates })
}
