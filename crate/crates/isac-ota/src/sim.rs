//! Closed-loop episodes and Monte-Carlo sweeps.
//!
//! One control period runs: channel draw (or reuse) → uplink gains → uplink
//! slots → control construction → uplink MUSIC → downlink SCA → downlink slots
//! → UAV recovery → downlink MUSIC → dynamics step. The state is tracked as an
//! error against a reference (the origin at rest unless a [`ReferencePath`] is
//! given).
//!
//! Random streams are named per stage and indexed by period: `init`,
//! `observation`, `channels`, `uplink-noise`, `radar-uplink`,
//! `radar-downlink`, `downlink-noise`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{draw_channels, ChannelSet};
use crate::config::{Controller, ScenarioConfig, SweepParam};
use crate::downlink::{downlink_transmit, recover_control, sca_optimize, split_control, DOWNLINK_SLOTS};
use crate::error::{Error, Result};
use crate::linalg::{to_complex, CMat, CVec, RMat, RVec, C64};
use crate::music::{music_angle, music_estimate, MusicResult, SnapshotSet};
use crate::rng::{complex_normal, SeedTree};
use crate::swarm::{
    lqr_gain, observe, single_uav_matrices, stack_system, step_dynamics, ControlWeights, SwarmState, SwarmSystem,
    STATE_DIM,
};
use crate::uplink::{
    construct_control, draw_waveform, sensing_snapshots, uplink_gains, uplink_transmit, UplinkGains, UPLINK_SLOTS,
};

/// Reference positions and velocities, indexed `[period][uav]`, one sample
/// more than the horizon it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub dt: f64,
    pub positions: Vec<Vec<[f64; 3]>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
}

impl ReferencePath {
    /// Every UAV holds its point at rest.
    pub fn stationary(points: &[[f64; 3]], dt: f64, horizon: usize) -> Self {
        Self {
            dt,
            positions: vec![points.to_vec(); horizon + 1],
            velocities: vec![vec![[0.0; 3]; points.len()]; horizon + 1],
        }
    }

    /// Each UAV travels its waypoint list at constant `speed` (m/s) and stays
    /// at the last waypoint. The velocity of sample k is the forward
    /// difference to sample k+1, which equals the path speed away from corners.
    pub fn piecewise_linear(waypoints: &[Vec<[f64; 3]>], speed: f64, dt: f64, horizon: usize) -> Result<Self> {
        if !(speed >= 0.0 && speed.is_finite()) || !(dt > 0.0) {
            return Err(Error::InvalidArgument("speed must be non-negative and dt positive".into()));
        }
        if waypoints.iter().any(|w| w.is_empty() || w.iter().flatten().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("every UAV needs at least one finite waypoint".into()));
        }
        let sample = |w: &[[f64; 3]], s: f64| -> [f64; 3] {
            let mut left = s;
            for seg in w.windows(2) {
                let len = crate::channel::distance(seg[0], seg[1]);
                if left <= len && len > 0.0 {
                    let f = left / len;
                    return [0, 1, 2].map(|i| seg[0][i] + f * (seg[1][i] - seg[0][i]));
                }
                left -= len;
            }
            *w.last().expect("non-empty")
        };
        let positions: Vec<Vec<[f64; 3]>> =
            (0..=horizon + 1).map(|k| waypoints.iter().map(|w| sample(w, speed * dt * k as f64)).collect()).collect();
        let velocities = (0..=horizon)
            .map(|k| {
                (0..waypoints.len())
                    .map(|n| [0, 1, 2].map(|i| (positions[k + 1][n][i] - positions[k][n][i]) / dt))
                    .collect()
            })
            .collect();
        Ok(Self { dt, positions: positions[..=horizon].to_vec(), velocities })
    }

    pub fn n_uavs(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }

    /// Periods covered (samples − 1).
    pub fn horizon(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    /// Stacked 6N reference state of period `k` (clamped to the last sample).
    pub fn state(&self, k: usize) -> RVec {
        let k = k.min(self.positions.len() - 1);
        let n = self.n_uavs();
        let mut x = RVec::zeros(STATE_DIM * n);
        for u in 0..n {
            for i in 0..3 {
                x[STATE_DIM * u + i] = self.positions[k][u][i];
                x[STATE_DIM * u + 3 + i] = self.velocities[k][u][i];
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRecord {
    pub period: usize,
    pub time_s: f64,
    /// State at the start of the period.
    pub state: Vec<f64>,
    /// Control applied by the UAVs.
    pub control: Vec<f64>,
    pub mean_abs_state_err: f64,
    pub alpha_hat_ul: Option<f64>,
    pub alpha_err_ul: Option<f64>,
    pub alpha_hat_dl: Option<f64>,
    pub alpha_err_dl: Option<f64>,
    pub snr_db: Option<f64>,
    pub snr_relaxed: bool,
    pub sca_iters: usize,
    /// `‖û − u‖² / 3N` between the constructed and the recovered control.
    pub tx_mse: f64,
    pub power_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeFailure {
    pub period: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub records: Vec<PeriodRecord>,
    /// Set when a stage failed; `records` then stops before that period.
    pub failure: Option<EpisodeFailure>,
}

impl EpisodeTrace {
    /// Mean of the per-period mean absolute state error.
    pub fn mean_state_error(&self) -> f64 {
        let e = state_error(self);
        if e.is_empty() {
            return f64::NAN;
        }
        e.iter().sum::<f64>() / e.len() as f64
    }
}

pub const TRACE_CSV_HEADER: &str =
    "period,time_s,mean_abs_state_err,alpha_hat_ul,alpha_err_ul,alpha_hat_dl,alpha_err_dl,snr_db,sca_iters,tx_mse";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &EpisodeTrace) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.period,
            r.time_s,
            r.mean_abs_state_err,
            opt(r.alpha_hat_ul),
            opt(r.alpha_err_ul),
            opt(r.alpha_hat_dl),
            opt(r.alpha_err_dl),
            opt(r.snr_db),
            r.sca_iters,
            r.tx_mse
        )?;
    }
    Ok(())
}

/// Per-period mean of `|x − x_ref|` over all 6N components.
pub fn state_error(trace: &EpisodeTrace) -> Vec<f64> {
    trace.records.iter().map(|r| r.mean_abs_state_err).collect()
}

pub fn mean_abs_error(x: &RVec, x_ref: &RVec) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(x_ref.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

/// MUSIC results of one period, kept for spectrum dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSpectra {
    pub uplink: MusicResult,
    pub downlink: MusicResult,
    pub alpha_o: f64,
}

/// Stepwise episode engine.
pub struct Episode<'a> {
    cfg: &'a ScenarioConfig,
    reference: Option<&'a ReferencePath>,
    sys: SwarmSystem,
    k_lqr: RMat,
    k_lqr_c: CMat,
    tree: SeedTree,
    state: SwarmState,
    period: usize,
    last_dl: Option<f64>,
    fixed: Option<(ChannelSet, UplinkGains)>,
}

impl<'a> Episode<'a> {
    pub fn new(cfg: &'a ScenarioConfig, reference: Option<&'a ReferencePath>) -> Result<Self> {
        cfg.validate()?;
        if let Some(p) = reference {
            if p.n_uavs() != cfg.n_uavs {
                return Err(Error::InvalidArgument(format!(
                    "reference path has {} UAVs, config {}",
                    p.n_uavs(),
                    cfg.n_uavs
                )));
            }
            if p.horizon() < cfg.horizon {
                return Err(Error::InvalidArgument(format!(
                    "reference path covers {} periods, horizon is {}",
                    p.horizon(),
                    cfg.horizon
                )));
            }
        }
        let sys = stack_system(cfg.n_uavs, single_uav_matrices(cfg.dt)?, cfg.obs_noise_var)?;
        let weights =
            ControlWeights::from_pattern(&sys, &cfg.weights, cfg.solver.riccati_tol, cfg.solver.riccati_max_iter)?;
        let k_lqr = lqr_gain(&sys, &weights)?;
        let k_lqr_c = to_complex(&k_lqr);
        let tree = SeedTree::new(cfg.seed);
        Ok(Self {
            cfg,
            reference,
            sys,
            k_lqr,
            k_lqr_c,
            tree,
            state: initial_state(cfg, &tree),
            period: 0,
            last_dl: None,
            fixed: None,
        })
    }

    /// Replaces the initial state (before the first period).
    pub fn set_state(&mut self, x: RVec) -> Result<()> {
        crate::error::check_dims("state length", x.len(), self.sys.state_dim())?;
        self.state = SwarmState::new(x);
        Ok(())
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    fn reference_state(&self, k: usize) -> RVec {
        match self.reference {
            Some(p) => p.state(k),
            None => RVec::zeros(self.sys.state_dim()),
        }
    }

    fn design(&mut self, k: usize) -> Result<(ChannelSet, UplinkGains)> {
        if let Some(d) = &self.fixed {
            return Ok(d.clone());
        }
        let cfg = self.cfg;
        let positions = (0..cfg.n_uavs).map(|n| self.state.position(n)).collect();
        let geo = cfg.geometry(positions);
        let ch = draw_channels(&geo, &cfg.channel, cfg.n_r, cfg.n_t, &mut self.tree.stream("channels", k as u64))?;
        let gains = uplink_gains(&self.k_lqr_c, &ch, cfg.sigma2, cfg.sensing_dim())?;
        if cfg.static_channels {
            self.fixed = Some((ch.clone(), gains.clone()));
        }
        Ok((ch, gains))
    }

    /// Runs one period and advances the state.
    pub fn step(&mut self, capture: bool) -> Result<(PeriodRecord, Option<PeriodSpectra>)> {
        let cfg = self.cfg;
        let k = self.period;
        let kk = k as u64;
        let x_ref = self.reference_state(k);
        let obs = observe(&self.sys, &self.state, &mut self.tree.stream("observation", kk));
        let e = &obs - &x_ref;
        let mut rec = PeriodRecord {
            period: k,
            time_s: k as f64 * cfg.dt,
            state: self.state.x.as_slice().to_vec(),
            control: Vec::new(),
            mean_abs_state_err: mean_abs_error(&self.state.x, &x_ref),
            alpha_hat_ul: None,
            alpha_err_ul: None,
            alpha_hat_dl: None,
            alpha_err_dl: None,
            snr_db: None,
            snr_relaxed: false,
            sca_iters: 0,
            tx_mse: 0.0,
            power_violations: 0,
        };
        let mut spectra = None;
        let applied = match cfg.controller {
            Controller::LqrBaseline => -(&self.k_lqr * &e),
            Controller::IsacOta => {
                let (ch, gains) = self.design(k)?;
                let s_ul = draw_waveform(&mut self.tree.stream("radar-uplink", kk), UPLINK_SLOTS);
                let probe = CVec::from_element(cfg.n_t, C64::new(cfg.p_bs.sqrt(), 0.0));
                let reception = uplink_transmit(
                    &e,
                    &ch,
                    &probe,
                    &s_ul,
                    cfg.sigma2,
                    cfg.power_policy,
                    &mut self.tree.stream("uplink-noise", kk),
                )?;
                rec.power_violations = reception.power_violations;
                let u = construct_control(&gains.w_r, &reception);
                let ul_set = SnapshotSet::uplink(sensing_snapshots(&gains.w_s, &reception), gains.w_s.clone());
                // The full spectrum is only kept when captured.
                let ul = if capture { Some(music_estimate(&ul_set, 1, cfg.grid_step)?) } else { None };
                let ul_hat = match &ul {
                    Some(r) => r.alpha_hat,
                    None => music_angle(&ul_set, 1, cfg.grid_step)?,
                };
                rec.alpha_hat_ul = Some(ul_hat);
                rec.alpha_err_ul = Some((ul_hat - ch.alpha_o).abs());

                // Beam hint: the latest downlink estimate, else this period's uplink one.
                let hint = self.last_dl.unwrap_or(ul_hat);
                let sca = sca_optimize(
                    &u,
                    &ch.h_dl,
                    &ch.g,
                    cfg.sigma2,
                    cfg.gamma_snr_linear(),
                    cfg.p_bs,
                    hint,
                    &cfg.sca_options(),
                )?;
                rec.snr_db = Some(sca.snr.db());
                rec.snr_relaxed = sca.snr_relaxed;
                rec.sca_iters = sca.iterations;

                let slots = split_control(&u)?;
                let mut radar = self.tree.stream("radar-downlink", kk);
                let mut noise = self.tree.stream("downlink-noise", kk);
                let mut z = Vec::with_capacity(DOWNLINK_SLOTS);
                let mut echoes = Vec::with_capacity(DOWNLINK_SLOTS);
                for slot in &slots {
                    let s = complex_normal(&mut radar, 1.0);
                    let out = downlink_transmit(&sca.gains, slot, &ch.h_dl, &ch.g, s, cfg.sigma2, &mut noise)?;
                    z.push(out.z);
                    echoes.push(out.echo);
                }
                let u_hat = recover_control(&z, sca.gains.a)?;
                rec.tx_mse = (&u_hat - &u).norm_squared() / u.len() as f64;
                let dl_set = SnapshotSet::downlink(echoes);
                let dl_hat = match ul {
                    Some(ul) => {
                        let dl = music_estimate(&dl_set, 1, cfg.grid_step)?;
                        let hat = dl.alpha_hat;
                        spectra = Some(PeriodSpectra { uplink: ul, downlink: dl, alpha_o: ch.alpha_o });
                        hat
                    }
                    None => music_angle(&dl_set, 1, cfg.grid_step)?,
                };
                rec.alpha_hat_dl = Some(dl_hat);
                rec.alpha_err_dl = Some((dl_hat - ch.alpha_o).abs());
                self.last_dl = Some(dl_hat);
                u_hat
            }
        };
        if applied.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite control in period {k}")));
        }
        self.state = step_dynamics(&self.sys, &self.state, &applied)?;
        rec.control = applied.as_slice().to_vec();
        self.period += 1;
        Ok((rec, spectra))
    }
}

/// Positions uniform on `initial_xy_range` in x and y, `initial_z` height, at rest.
pub fn initial_state(cfg: &ScenarioConfig, tree: &SeedTree) -> SwarmState {
    use rand::Rng;
    let mut rng = tree.stream("init", 0);
    let [lo, hi] = cfg.initial_xy_range;
    let mut x = RVec::zeros(STATE_DIM * cfg.n_uavs);
    for n in 0..cfg.n_uavs {
        for i in 0..2 {
            x[STATE_DIM * n + i] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        x[STATE_DIM * n + 2] = cfg.initial_z;
    }
    SwarmState::new(x)
}

/// Runs `cfg.horizon` periods. Stage failures end the episode early and are
/// reported in the trace; configuration errors are returned.
pub fn run_episode(cfg: &ScenarioConfig, path: Option<&ReferencePath>) -> Result<EpisodeTrace> {
    run_episode_from(cfg, path, None)
}

/// As [`run_episode`], optionally overriding the initial state.
pub fn run_episode_from(cfg: &ScenarioConfig, path: Option<&ReferencePath>, x0: Option<RVec>) -> Result<EpisodeTrace> {
    let mut ep = Episode::new(cfg, path)?;
    if let Some(x) = x0 {
        ep.set_state(x)?;
    }
    let mut records = Vec::with_capacity(cfg.horizon);
    for k in 0..cfg.horizon {
        match ep.step(false) {
            Ok((r, _)) => records.push(r),
            Err(e) => {
                return Ok(EpisodeTrace {
                    records,
                    failure: Some(EpisodeFailure { period: k, message: e.to_string() }),
                })
            }
        }
    }
    Ok(EpisodeTrace { records, failure: None })
}

/// Runs the first period and returns both MUSIC spectra.
pub fn sensing_spectra(cfg: &ScenarioConfig) -> Result<PeriodSpectra> {
    if cfg.controller != Controller::IsacOta {
        return Err(Error::InvalidArgument("spectra need controller isac-ota".into()));
    }
    let mut ep = Episode::new(cfg, None)?;
    let (_, s) = ep.step(true)?;
    Ok(s.expect("isac-ota captures spectra"))
}

/// Seed of Monte-Carlo run `r`.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRecord {
    pub sweep_value: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Completed runs (failed episodes are left out).
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub sweep_value: f64,
    pub run: usize,
    pub failure: EpisodeFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub records: Vec<AggregateRecord>,
    pub failures: Vec<RunFailure>,
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean episode state error per sweep value over `n_runs` runs; run r uses
/// seed `cfg.seed + r` at every sweep value. Without a sweep a single record
/// with `sweep_value = NaN` is produced.
pub fn monte_carlo(
    cfg: &ScenarioConfig,
    n_runs: usize,
    sweep: Option<(SweepParam, &[f64])>,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
    }
    let points: Vec<(f64, ScenarioConfig)> = match sweep {
        Some((param, values)) => values.iter().map(|&v| Ok((v, param.apply(cfg, v)?))).collect::<Result<_>>()?,
        None => {
            cfg.validate()?;
            vec![(f64::NAN, cfg.clone())]
        }
    };
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..n_runs).map(move |r| (p, r))).collect();
    let results: Vec<Result<EpisodeTrace>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let mut c = points[p].1.clone();
            c.seed = run_seed(cfg.seed, r);
            run_episode(&c, None)
        })
        .collect();
    let mut per_point: Vec<Vec<f64>> = vec![Vec::new(); points.len()];
    let mut failures = Vec::new();
    for (&(p, r), res) in jobs.iter().zip(results) {
        let trace = res?;
        match trace.failure {
            Some(f) => failures.push(RunFailure { sweep_value: points[p].0, run: r, failure: f }),
            None => per_point[p].push(trace.mean_state_error()),
        }
    }
    let records = points
        .iter()
        .zip(&per_point)
        .map(|((v, _), m)| {
            let (mean, stderr) = mean_and_stderr(m);
            AggregateRecord { sweep_value: *v, mean, stderr, n_runs: m.len() }
        })
        .collect();
    Ok(MonteCarloResult { records, failures })
}
