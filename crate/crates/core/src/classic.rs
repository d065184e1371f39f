//! Correlation baselines: preamble cross-correlation and the pilot-row 2D
//! autocorrelation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frame::{window_to_grid, FrameConfig, Grid, PilotConfig};
use crate::sync::{argmax, argmax_tol, SyncEstimate};

/// Relative tolerance under which correlation values count as tied.
const TIE_TOL: f64 = 1e-9;

/// Pilot-row score must exceed this multiple of the mean row score before
/// the estimate is trusted.
const MIN_PILOT_PROMINENCE: f64 = 3.0;

/// Row-wise cyclic autocorrelation `P[m, n]` of a DT grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrSurface {
    pub values: Grid,
    /// Complex multiply-accumulates spent computing the surface.
    pub complex_macs: u64,
}

/// `P[m,n] = sum_{k=0}^{N-2} conj(r[m,(n+k) mod N]) r[m,(n+k+1) mod N]` over
/// the window reshaped column-major to `M x N` (no CP removal).
pub fn autocorr2d(window: &[Complex64], cfg: &FrameConfig) -> Result<CorrSurface> {
    let (m, n) = (cfg.m, cfg.n);
    if window.len() != m * n {
        return Err(Error::shape(format!("{} samples", m * n), window.len()));
    }
    let r = window_to_grid(window, m, n);
    let mut p = Grid::zeros(m, n);
    let mut macs = 0u64;
    for row in 0..m {
        let x = r.row(row);
        for col in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n - 1 {
                acc += x[(col + k) % n].conj() * x[(col + k + 1) % n];
            }
            macs += (n - 1) as u64;
            p[(row, col)] = acc;
        }
    }
    Ok(CorrSurface {
        values: p,
        complex_macs: macs,
    })
}

/// Complex MACs of [`autocorr2d`]: `M * N * (N - 1)`.
pub fn autocorr2d_macs(cfg: &FrameConfig) -> u64 {
    (cfg.m * cfg.n * (cfg.n - 1)) as u64
}

/// Pilot-based estimate from the autocorrelation surface.
///
/// The pilot row is the delay row with the largest `sum_n |P[m,n]|`; its
/// distance from the transmitted pilot row gives `theta_d`. The column of
/// the largest `Re P[m*, n]` is taken as the time-dimension start `theta_t`.
pub fn autocorr2d_sync(
    window: &[Complex64],
    cfg: &FrameConfig,
    pilot: &PilotConfig,
) -> Result<SyncEstimate> {
    let surface = autocorr2d(window, cfg)?;
    let p = &surface.values;
    let row_scores: Vec<f64> = (0..cfg.m)
        .map(|m| p.row(m).iter().map(|z| z.norm()).sum())
        .collect();
    let best_row = argmax_tol(&row_scores, TIE_TOL);
    let time_scores: Vec<f64> = p.row(best_row).iter().map(|z| z.re).collect();
    let theta_t = argmax_tol(&time_scores, TIE_TOL);
    let theta_d = (pilot.m_p + cfg.m - best_row) % cfg.m;
    let mut est = SyncEstimate::from_parts(theta_t, theta_d, cfg.m);

    let first = p.as_slice()[0];
    let scale = p.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let flat = p
        .as_slice()
        .iter()
        .all(|z| (z - first).norm() <= TIE_TOL * scale.max(f64::MIN_POSITIVE));
    if flat {
        est.low_confidence = true;
        return Err(Error::Ambiguous { fallback: est });
    }
    let others: f64 = row_scores.iter().sum::<f64>() - row_scores[best_row];
    let mean_other = others / (cfg.m - 1) as f64;
    est.low_confidence = row_scores[best_row] < MIN_PILOT_PROMINENCE * mean_other;
    Ok(est)
}

/// Cyclic cross-correlation magnitudes against a known preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    /// `c[tau] = |sum_i conj(p[i]) w[(tau + i) mod MN]|`.
    pub magnitudes: Vec<f64>,
    pub complex_macs: u64,
}

pub fn cross_correlation(window: &[Complex64], preamble: &[Complex64]) -> Result<CrossCorrelation> {
    let len = window.len();
    let l = preamble.len();
    if l == 0 || l > len {
        return Err(Error::shape(format!("preamble of 1..={len} samples"), l));
    }
    if preamble.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Domain("preamble is all zeros".into()));
    }
    let conj: Vec<Complex64> = preamble.iter().map(|z| z.conj()).collect();
    let mut ext = Vec::with_capacity(len + l - 1);
    ext.extend_from_slice(window);
    ext.extend_from_slice(&window[..l - 1]);
    let magnitudes = (0..len)
        .map(|tau| {
            conj.iter()
                .zip(&ext[tau..tau + l])
                .fold(Complex64::new(0.0, 0.0), |acc, (p, w)| acc + p * w)
                .norm()
        })
        .collect();
    Ok(CrossCorrelation {
        magnitudes,
        complex_macs: (len * l) as u64,
    })
}

/// Complex MACs of [`cross_correlation`]: `MN * L_seq`.
pub fn cross_correlation_macs(mn: usize, preamble_len: usize) -> u64 {
    (mn * preamble_len) as u64
}

/// Frame-start estimate from the correlation peak. The preamble occupies the
/// first payload samples, so a peak at `tau` means the frame starts `tau`
/// samples into the window.
pub fn cross_correlate_sync(
    window: &[Complex64],
    preamble: &[Complex64],
    m: usize,
) -> Result<SyncEstimate> {
    let corr = cross_correlation(window, preamble)?;
    let tau = argmax(&corr.magnitudes);
    let mn = window.len();
    Ok(SyncEstimate::from_offset((mn - tau) % mn, m))
}
