//! Embedded-pilot OTFS frames.
//!
//! A frame lives on an `M x N` delay-Doppler (DD) grid: `M` delay rows, `N`
//! Doppler columns. With rectangular pulses the transmitter chain reduces to
//! an inverse DFT along the Doppler axis of every delay row, which yields the
//! delay-time (DT) grid, followed by column-major serialization and a single
//! cyclic prefix per block.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate used when none is configured. Puts the 100 ns Rayleigh taps
/// exactly on integer sample delays.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10e6;

/// OTFS grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Delay bins per block (samples per DT column).
    #[serde(rename = "M")]
    pub m: usize,
    /// Doppler bins (time blocks) per frame.
    #[serde(rename = "N")]
    pub n: usize,
    /// Cyclic-prefix length in samples.
    #[serde(rename = "L_CP")]
    pub l_cp: usize,
    /// Data constellation size (phase-shift keying).
    #[serde(default = "default_mod_order")]
    pub mod_order: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
}

fn default_mod_order() -> usize {
    4
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

impl FrameConfig {
    pub fn new(m: usize, n: usize, l_cp: usize) -> Result<Self> {
        let cfg = FrameConfig {
            m,
            n,
            l_cp,
            mod_order: default_mod_order(),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-scale geometry: M=256, N=64, L_CP=64.
    pub fn default_profile() -> Self {
        FrameConfig {
            m: 256,
            n: 64,
            l_cp: 64,
            mod_order: 4,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }

    /// Desk-scale geometry: M=32, N=8, L_CP=8.
    pub fn toy() -> Self {
        FrameConfig {
            m: 32,
            n: 8,
            l_cp: 8,
            mod_order: 4,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 8 || !self.m.is_power_of_two() {
            return Err(Error::Config(format!(
                "M must be a power of two >= 8, got {}",
                self.m
            )));
        }
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::Config(format!(
                "N must be a power of two >= 4, got {}",
                self.n
            )));
        }
        if self.l_cp >= self.mn() {
            return Err(Error::Config(format!(
                "L_CP={} must be smaller than MN={}",
                self.l_cp,
                self.mn()
            )));
        }
        if self.mod_order < 2 {
            return Err(Error::Config(format!(
                "constellation order must be >= 2, got {}",
                self.mod_order
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Samples per CP-prefixed block, `MN + L_CP`.
    #[inline]
    pub fn samples_per_block(&self) -> usize {
        self.mn() + self.l_cp
    }
}

/// Placement and power of the embedded DD pilot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub m_p: usize,
    pub n_p: usize,
    /// Real pilot magnitude.
    pub amplitude: f64,
    /// Delay rows zeroed on each side of `m_p`.
    pub guard_halfwidth: usize,
}

impl PilotConfig {
    /// Pilot at delay row `M/2`, Doppler column 0, amplitude `sqrt(M)` and a
    /// guard of `min(26, M/8)` rows each side.
    pub fn for_frame(cfg: &FrameConfig) -> Self {
        PilotConfig {
            m_p: cfg.m / 2,
            n_p: 0,
            amplitude: (cfg.m as f64).sqrt(),
            guard_halfwidth: (cfg.m / 8).min(26),
        }
    }

    pub fn validate(&self, cfg: &FrameConfig) -> Result<()> {
        if self.m_p >= cfg.m || self.n_p >= cfg.n {
            return Err(Error::Config(format!(
                "pilot ({}, {}) outside the {}x{} grid",
                self.m_p, self.n_p, cfg.m, cfg.n
            )));
        }
        if 2 * self.guard_halfwidth + 1 > cfg.m {
            return Err(Error::Config(format!(
                "guard half-width {} wraps onto itself for M={}",
                self.guard_halfwidth, cfg.m
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "pilot amplitude must be finite and non-negative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// True when delay row `m` is a guard (or pilot) row.
    pub fn is_guard_row(&self, m: usize, cfg: &FrameConfig) -> bool {
        let d = (m + cfg.m - self.m_p) % cfg.m;
        d <= self.guard_halfwidth || cfg.m - d <= self.guard_halfwidth
    }
}

/// Dense complex `rows x cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                data.len(),
            ));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex64] {
        &mut self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `||self - other||_F / ||other||_F`, or the absolute norm when `other` is zero.
    pub fn relative_error(&self, other: &Grid) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale = other.frobenius_norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = Complex64;

    fn index(&self, (m, n): (usize, usize)) -> &Complex64 {
        &self.data[m * self.cols + n]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (m, n): (usize, usize)) -> &mut Complex64 {
        &mut self.data[m * self.cols + n]
    }
}

/// Delay-Doppler grid `X_DD[m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid(pub Grid);

/// Delay-time grid `X_DT[m, n]`, `n` indexing time blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DtGrid(pub Grid);

/// Complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        TimeSignal {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Unit-power PSK point `k` of an `order`-point constellation.
pub fn psk_symbol(k: usize, order: usize) -> Complex64 {
    let phase = PI / order as f64 + 2.0 * PI * k as f64 / order as f64;
    Complex64::from_polar(1.0, phase)
}

fn random_symbol<R: Rng + ?Sized>(rng: &mut R, order: usize) -> Complex64 {
    psk_symbol(rng.random_range(0..order), order)
}

/// Builds a DD frame: the pilot at `(m_p, n_p)`, zeroed guard rows around it,
/// unit-power data everywhere else. Data cells are drawn row by row.
pub fn build_dd_frame<R: Rng + ?Sized>(
    cfg: &FrameConfig,
    pilot: &PilotConfig,
    rng: &mut R,
) -> Result<DdGrid> {
    cfg.validate()?;
    place_pilot_frame(cfg, pilot, rng)
}

// Placement rule without the power-of-two geometry check.
fn place_pilot_frame<R: Rng + ?Sized>(
    cfg: &FrameConfig,
    pilot: &PilotConfig,
    rng: &mut R,
) -> Result<DdGrid> {
    pilot.validate(cfg)?;
    let mut grid = Grid::zeros(cfg.m, cfg.n);
    for m in 0..cfg.m {
        if pilot.is_guard_row(m, cfg) {
            continue;
        }
        for x in grid.row_mut(m) {
            *x = random_symbol(rng, cfg.mod_order);
        }
    }
    grid[(pilot.m_p, pilot.n_p)] = Complex64::new(pilot.amplitude, 0.0);
    Ok(DdGrid(grid))
}

/// A DD grid filled with data only (no pilot, no guard).
pub fn build_data_grid<R: Rng + ?Sized>(cfg: &FrameConfig, rng: &mut R) -> Result<DdGrid> {
    cfg.validate()?;
    let mut grid = Grid::zeros(cfg.m, cfg.n);
    for x in grid.data.iter_mut() {
        *x = random_symbol(rng, cfg.mod_order);
    }
    Ok(DdGrid(grid))
}

fn transform_rows(grid: &Grid, inverse: bool) -> Grid {
    let n = grid.cols;
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = grid.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for row in out.data.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    out
}

/// Unitary inverse DFT along the Doppler axis of every delay row:
/// `X_DT[m,n] = N^{-1/2} sum_k X_DD[m,k] exp(+j 2 pi n k / N)`.
pub fn dd_to_dt(grid: &DdGrid) -> DtGrid {
    DtGrid(transform_rows(&grid.0, true))
}

/// Exact inverse of [`dd_to_dt`].
pub fn dt_to_dd(grid: &DtGrid) -> DdGrid {
    DdGrid(transform_rows(&grid.0, false))
}

/// Column-major payload `p[n*M + m] = X_DT[m,n]` with the last `L_CP`
/// payload samples prepended.
pub fn serialize_time(grid: &DtGrid, cfg: &FrameConfig) -> Result<TimeSignal> {
    let payload = payload_samples(grid, cfg)?;
    let mut samples = Vec::with_capacity(cfg.samples_per_block());
    samples.extend_from_slice(&payload[payload.len() - cfg.l_cp..]);
    samples.extend_from_slice(&payload);
    Ok(TimeSignal::new(samples, cfg.sample_rate_hz))
}

/// Column-major payload without a cyclic prefix.
pub fn payload_samples(grid: &DtGrid, cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    let g = &grid.0;
    if g.rows != cfg.m || g.cols != cfg.n {
        return Err(Error::shape(
            format!("{}x{} grid", cfg.m, cfg.n),
            format!("{}x{}", g.rows, g.cols),
        ));
    }
    let mut payload = Vec::with_capacity(cfg.mn());
    for n in 0..cfg.n {
        for m in 0..cfg.m {
            payload.push(g[(m, n)]);
        }
    }
    Ok(payload)
}

/// Reshapes a block back to the DT grid. Accepts either a CP-prefixed block
/// (`N_s` samples, CP dropped) or a raw `MN`-sample window.
pub fn deserialize_time(sig: &TimeSignal, cfg: &FrameConfig) -> Result<DtGrid> {
    let mn = cfg.mn();
    let body = if sig.len() == mn {
        &sig.samples[..]
    } else if sig.len() == cfg.samples_per_block() {
        &sig.samples[cfg.l_cp..]
    } else {
        return Err(Error::shape(
            format!(
                "{} (raw) or {} (with CP) samples",
                mn,
                cfg.samples_per_block()
            ),
            sig.len(),
        ));
    };
    Ok(DtGrid(window_to_grid(body, cfg.m, cfg.n)))
}

/// Column-major reshape of an `M*N` window into an `M x N` grid.
pub(crate) fn window_to_grid(window: &[Complex64], m: usize, n: usize) -> Grid {
    debug_assert_eq!(window.len(), m * n);
    let mut grid = Grid::zeros(m, n);
    for (k, &z) in window.iter().enumerate() {
        grid[(k % m, k / m)] = z;
    }
    grid
}
