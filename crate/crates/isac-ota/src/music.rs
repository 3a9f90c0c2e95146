//! MUSIC azimuth estimation from a handful of array snapshots.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::steering_unchecked;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensingMode {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub snapshots: Vec<CVec>,
    pub mode: SensingMode,
    /// Uplink projector `W_S`; the steering map becomes `W_S ψ(α, N_r)`.
    pub w_s: Option<CMat>,
}

impl SnapshotSet {
    pub fn downlink(snapshots: Vec<CVec>) -> Self {
        Self { snapshots, mode: SensingMode::Downlink, w_s: None }
    }

    pub fn uplink(snapshots: Vec<CVec>, w_s: CMat) -> Self {
        Self { snapshots, mode: SensingMode::Uplink, w_s: Some(w_s) }
    }

    fn dim(&self) -> Result<usize> {
        let first = self.snapshots.first().ok_or_else(|| Error::InvalidArgument("no snapshots".into()))?;
        let m = first.len();
        if self.snapshots.iter().any(|s| s.len() != m) {
            return Err(Error::DimensionMismatch("snapshots differ in length".into()));
        }
        if let Some(w) = &self.w_s {
            if w.nrows() != m {
                return Err(Error::DimensionMismatch(format!("W_S has {} rows, snapshots have {m}", w.nrows())));
            }
        } else if self.mode == SensingMode::Uplink {
            return Err(Error::InvalidArgument("uplink snapshots need W_S".into()));
        }
        Ok(m)
    }
}

/// `Σ = Σ_t ξ[t] ξ[t]ᴴ`.
pub fn covariance(snapshots: &[CVec]) -> Result<CMat> {
    let first = snapshots.first().ok_or_else(|| Error::InvalidArgument("no snapshots".into()))?;
    let m = first.len();
    let mut sigma = CMat::zeros(m, m);
    for s in snapshots {
        if s.len() != m {
            return Err(Error::DimensionMismatch("snapshots differ in length".into()));
        }
        sigma += s * s.adjoint();
    }
    Ok(sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicResult {
    pub alpha_hat: f64,
    /// `(angle_rad, pseudo-power dB)` over `[0, 2π)`.
    pub spectrum: Vec<(f64, f64)>,
}

/// Fitted signal subspace plus steering map.
#[derive(Debug, Clone)]
pub struct MusicModel {
    signal: CMat,
    w_s: Option<CMat>,
    n_array: usize,
}

impl MusicModel {
    pub fn fit(set: &SnapshotSet, n_sources: usize) -> Result<Self> {
        let m = set.dim()?;
        if n_sources == 0 || n_sources >= m {
            return Err(Error::InvalidArgument(format!("need 0 < sources < {m}, got {n_sources}")));
        }
        let sigma = covariance(&set.snapshots)?;
        let trace: f64 = (0..m).map(|i| sigma[(i, i)].re).sum();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::EstimationFailure("snapshot covariance is degenerate".into()));
        }
        let (vals, vecs) = hermitian_eigen(&sigma)?;
        let mut order: Vec<usize> = (0..m).collect();
        // Descending eigenvalue, ties by ascending index (stable sort).
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let mut signal = CMat::zeros(m, n_sources);
        for (j, &k) in order.iter().take(n_sources).enumerate() {
            signal.set_column(j, &vecs.column(k));
        }
        let n_array = set.w_s.as_ref().map_or(m, |w| w.ncols());
        Ok(Self { signal, w_s: set.w_s.clone(), n_array })
    }

    pub fn steering(&self, alpha: f64) -> CVec {
        let psi = steering_unchecked(alpha, self.n_array);
        match &self.w_s {
            Some(w) => w * psi,
            None => psi,
        }
    }

    /// `1/‖F⊥ᴴ a(α)‖²`, using `‖F⊥ᴴa‖² = ‖a‖² − ‖Fᴴa‖²`.
    pub fn pseudo_power(&self, alpha: f64) -> f64 {
        let mut scratch = Scratch::new(self);
        self.power_with(alpha, &mut scratch)
    }

    fn power_with(&self, alpha: f64, s: &mut Scratch) -> f64 {
        let c = alpha.cos();
        for (i, v) in s.psi.iter_mut().enumerate() {
            *v = C64::from_polar(1.0, PI * i as f64 * c);
        }
        let a = match &self.w_s {
            Some(w) => {
                s.projected.gemv(C64::new(1.0, 0.0), w, &s.psi, C64::new(0.0, 0.0));
                &s.projected
            }
            None => &s.psi,
        };
        let proj: f64 = self.signal.column_iter().map(|f| f.dotc(a).norm_sqr()).sum();
        let den = (a.norm_squared() - proj).max(f64::MIN_POSITIVE);
        1.0 / den
    }

    /// Grid point of maximum pseudo-power on `[0, π]`.
    pub fn peak(&self, grid_step: f64) -> Result<f64> {
        if !(grid_step > 0.0) || !grid_step.is_finite() {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {grid_step}")));
        }
        let mut scratch = Scratch::new(self);
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0.. {
            let a = i as f64 * grid_step;
            if a > PI {
                break;
            }
            let p = self.power_with(a, &mut scratch);
            if p > best.1 {
                best = (a, p);
            }
        }
        if !best.1.is_finite() {
            return Err(Error::EstimationFailure("spectrum has no finite maximum".into()));
        }
        Ok(best.0)
    }

    pub fn spectrum(&self, grid_step: f64) -> Vec<(f64, f64)> {
        let mut scratch = Scratch::new(self);
        (0..grid_len(grid_step))
            .map(|i| {
                let a = i as f64 * grid_step;
                (a, 10.0 * self.power_with(a, &mut scratch).log10())
            })
            .collect()
    }
}

struct Scratch {
    psi: CVec,
    projected: CVec,
}

impl Scratch {
    fn new(model: &MusicModel) -> Self {
        let rows = model.w_s.as_ref().map_or(0, |w| w.nrows());
        Self { psi: CVec::zeros(model.n_array), projected: CVec::zeros(rows) }
    }
}

pub fn grid_len(grid_step: f64) -> usize {
    (2.0 * PI / grid_step).ceil() as usize
}

/// Grid-search MUSIC. The spectrum of a cos-parameterized ULA is mirror
/// symmetric about π, so the maximum is taken over the `[0, π]` half.
pub fn music_estimate(set: &SnapshotSet, n_sources: usize, grid_step: f64) -> Result<MusicResult> {
    let model = MusicModel::fit(set, n_sources)?;
    let alpha_hat = model.peak(grid_step)?;
    Ok(MusicResult { alpha_hat, spectrum: model.spectrum(grid_step) })
}

/// [`music_estimate`] without the spectrum.
pub fn music_angle(set: &SnapshotSet, n_sources: usize, grid_step: f64) -> Result<f64> {
    MusicModel::fit(set, n_sources)?.peak(grid_step)
}

/// Writes `angle_rad,power_db` rows with a header.
pub fn write_spectrum_csv<W: Write>(mut out: W, spectrum: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "angle_rad,power_db")?;
    for (a, p) in spectrum {
        writeln!(out, "{a},{p}")?;
    }
    Ok(())
}
