//! Metrics, SNR sweeps and the complexity report.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelProfile;
use crate::classic::{
    autocorr2d_macs, autocorr2d_sync, cross_correlate_sync, cross_correlation_macs,
};
use crate::dataset::{record_seed, synthesize_capture, CaptureRecord, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::frame::{FrameConfig, PilotConfig};
use crate::nn::{build_sync_model, count_flops, FlopReport, Head, Network};
use crate::pipeline::{OneStageModel, TwoStageModel};

/// Real FLOPs charged per complex multiply-accumulate.
pub const FLOPS_PER_COMPLEX_MAC: u64 = 8;

/// Salt that keeps sweep captures disjoint from dataset records.
const PROBE_SALT: u64 = 0x7E57_C0DE_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    CrossCorr,
    AutoCorr2d,
    ResNet2Stage,
    ResNet1Stage,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::CrossCorr,
        Method::AutoCorr2d,
        Method::ResNet2Stage,
        Method::ResNet1Stage,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::CrossCorr => "crosscorr",
            Method::AutoCorr2d => "autocorr2d",
            Method::ResNet2Stage => "resnet2stage",
            Method::ResNet1Stage => "resnet1stage",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::ResNet2Stage | Method::ResNet1Stage)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Fraction of exact matches.
pub fn accuracy(estimates: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(estimates.len(), truths.len())?;
    let hits = estimates.iter().zip(truths).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Offset error wrapped to `[-MN/2, MN/2)`.
pub fn wrapped_error(estimate: usize, truth: usize, mn: usize) -> i64 {
    let mn = mn as i64;
    (estimate as i64 - truth as i64 + mn / 2).rem_euclid(mn) - mn / 2
}

/// Root-mean-square of the wrap-minimal errors.
pub fn rmse(estimates: &[usize], truths: &[usize], mn: usize) -> Result<f64> {
    check_lengths(estimates.len(), truths.len())?;
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(&e, &t)| (wrapped_error(e, t, mn) as f64).powi(2))
        .sum();
    Ok((sum / truths.len() as f64).sqrt())
}

/// Root-mean-square of the plain differences `estimate - truth`.
pub fn rmse_raw(estimates: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(estimates.len(), truths.len())?;
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(&e, &t)| (e as f64 - t as f64).powi(2))
        .sum();
    Ok((sum / truths.len() as f64).sqrt())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{b} estimates"), a));
    }
    if b == 0 {
        return Err(Error::Domain("no samples to score".into()));
    }
    Ok(())
}

/// Produces offset estimates in `[0, MN)` for captured windows.
pub trait Synchronizer: Sync {
    fn method(&self) -> Method;

    fn estimate(&self, records: &[&CaptureRecord]) -> Result<Vec<usize>>;
}

pub struct CrossCorrSync {
    pub preamble: Vec<Complex64>,
    pub m: usize,
}

impl CrossCorrSync {
    pub fn from_config(cfg: &DatasetConfig) -> Result<Self> {
        let preamble = cfg.preamble_sequence().ok_or_else(|| {
            Error::Config("crosscorr needs captures generated with a preamble".into())
        })?;
        Ok(CrossCorrSync {
            preamble,
            m: cfg.frame.m,
        })
    }
}

impl Synchronizer for CrossCorrSync {
    fn method(&self) -> Method {
        Method::CrossCorr
    }

    fn estimate(&self, records: &[&CaptureRecord]) -> Result<Vec<usize>> {
        records
            .par_iter()
            .map(|r| {
                Ok(cross_correlate_sync(&r.window_complex(), &self.preamble, self.m)?.theta_hat)
            })
            .collect()
    }
}

pub struct AutoCorrSync {
    pub frame: FrameConfig,
    pub pilot: PilotConfig,
}

impl Synchronizer for AutoCorrSync {
    fn method(&self) -> Method {
        Method::AutoCorr2d
    }

    /// Flat surfaces fall back to the detector's default estimate.
    fn estimate(&self, records: &[&CaptureRecord]) -> Result<Vec<usize>> {
        records
            .par_iter()
            .map(
                |r| match autocorr2d_sync(&r.window_complex(), &self.frame, &self.pilot) {
                    Ok(est) => Ok(est.theta_hat),
                    Err(Error::Ambiguous { fallback }) => Ok(fallback.theta_hat),
                    Err(e) => Err(e),
                },
            )
            .collect()
    }
}

fn windows<'a>(records: &[&'a CaptureRecord]) -> Vec<&'a [f32]> {
    records.iter().map(|r| r.window.as_slice()).collect()
}

impl Synchronizer for TwoStageModel {
    fn method(&self) -> Method {
        Method::ResNet2Stage
    }

    fn estimate(&self, records: &[&CaptureRecord]) -> Result<Vec<usize>> {
        Ok(self
            .predict(&windows(records))?
            .into_iter()
            .map(|e| e.theta_hat)
            .collect())
    }
}

impl Synchronizer for OneStageModel {
    fn method(&self) -> Method {
        Method::ResNet1Stage
    }

    fn estimate(&self, records: &[&CaptureRecord]) -> Result<Vec<usize>> {
        Ok(self
            .predict(&windows(records))?
            .into_iter()
            .map(|e| e.theta_hat)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub channel_id: u8,
    pub snr_db: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub rmse_raw: f64,
    pub count: usize,
}

/// Scores one method on a group of records.
pub fn score(
    sync: &dyn Synchronizer,
    records: &[&CaptureRecord],
    mn: usize,
) -> Result<(f64, f64, f64)> {
    let est = sync.estimate(records)?;
    let truth: Vec<usize> = records.iter().map(|r| r.theta_wrapped as usize).collect();
    Ok((
        accuracy(&est, &truth)?,
        rmse(&est, &truth, mn)?,
        rmse_raw(&est, &truth)?,
    ))
}

fn group_rows(
    methods: &[&dyn Synchronizer],
    groups: Vec<((u8, f64), Vec<&CaptureRecord>)>,
    mn: usize,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for sync in methods {
        for ((channel_id, snr_db), records) in &groups {
            let (accuracy, rmse, rmse_raw) = score(*sync, records, mn)?;
            rows.push(MetricsRow {
                method: sync.method().id().to_string(),
                channel_id: *channel_id,
                snr_db: *snr_db,
                accuracy,
                rmse,
                rmse_raw,
                count: records.len(),
            });
        }
    }
    Ok(rows)
}

/// Metrics per method, channel and SNR over the given records (normally the
/// test partition). Rows are ordered by method, then channel, then SNR.
pub fn sweep_dataset(
    methods: &[&dyn Synchronizer],
    ds: &Dataset,
    indices: &[usize],
) -> Result<Vec<MetricsRow>> {
    let mut groups: Vec<((u8, f64), Vec<&CaptureRecord>)> = Vec::new();
    for &i in indices {
        let r = ds
            .records
            .get(i)
            .ok_or_else(|| Error::shape(format!("index < {}", ds.len()), i))?;
        let key = (r.channel_id, r.snr_db as f64);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    group_rows(methods, groups, ds.mn())
}

/// Fresh capture `index` of a sweep point, independent of dataset records.
pub fn probe_capture(
    cfg: &DatasetConfig,
    channel: &ChannelProfile,
    snr_db: f64,
    index: u64,
) -> Result<CaptureRecord> {
    let point = (snr_db.to_bits()).rotate_left(17) ^ PROBE_SALT;
    let seed = record_seed(cfg.global_seed ^ point, channel.id, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (cfg.frame.mn() / 2) as i64;
    let theta_raw = rng.random_range(-half..half);
    synthesize_capture(cfg, channel, snr_db, theta_raw, &mut rng)
}

/// Metrics on `trials` freshly generated captures per channel of `cfg` and
/// per SNR in `snrs_db`.
pub fn sweep_generated(
    methods: &[&dyn Synchronizer],
    cfg: &DatasetConfig,
    snrs_db: &[f64],
    trials: usize,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config(
            "sweep needs at least one trial per point".into(),
        ));
    }
    let mut channels = cfg.channels.clone();
    channels.sort_by_key(|c| c.id);
    let mut snrs = snrs_db.to_vec();
    snrs.sort_by(f64::total_cmp);
    let mut store = Vec::new();
    for ch in &channels {
        for &snr in &snrs {
            let records = (0..trials as u64)
                .into_par_iter()
                .map(|i| probe_capture(cfg, ch, snr, i))
                .collect::<Result<Vec<_>>>()?;
            store.push(((ch.id, snr), records));
        }
    }
    let groups = store
        .iter()
        .map(|(k, v)| (*k, v.iter().collect()))
        .collect();
    group_rows(methods, groups, cfg.frame.mn())
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub method: String,
    pub flops_millions: f64,
    /// `None` for the correlation baselines, which have no parameters.
    pub params_millions: Option<f64>,
    /// Median wall time of one single-window inference.
    pub runtime_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    /// Itemized forward cost of the coarse and fine networks.
    pub two_stage: FlopReport,
}

/// Options of [`complexity_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityOptions {
    pub preamble_len: usize,
    /// Timed single-window runs per method; 0 skips timing.
    pub runtime_trials: usize,
    /// Networks larger than this are not instantiated for timing.
    pub max_timed_params: u64,
}

impl Default for ComplexityOptions {
    fn default() -> Self {
        ComplexityOptions {
            preamble_len: 256,
            runtime_trials: 100,
            max_timed_params: 50_000_000,
        }
    }
}

pub fn cross_correlation_flops(mn: usize, preamble_len: usize) -> u64 {
    FLOPS_PER_COMPLEX_MAC * cross_correlation_macs(mn, preamble_len)
}

pub fn autocorr2d_flops(frame: &FrameConfig) -> u64 {
    FLOPS_PER_COMPLEX_MAC * autocorr2d_macs(frame)
}

fn median_seconds(trials: usize, mut run: impl FnMut() -> Result<()>) -> Result<Option<f64>> {
    if trials == 0 {
        return Ok(None);
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(Some(times[trials / 2]))
}

/// Analytic FLOPs and parameters of every method plus measured runtimes.
/// Networks are timed with freshly initialized weights, which cost the
/// same as trained ones.
pub fn complexity_report(
    frame: &FrameConfig,
    opts: &ComplexityOptions,
) -> Result<ComplexityReport> {
    frame.validate()?;
    let (m, n, mn) = (frame.m, frame.n, frame.mn());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let window: Vec<Complex64> = (0..mn)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let planar = crate::dataset::to_planar(&window);
    let preamble = crate::dataset::zadoff_chu(opts.preamble_len, 25);
    let pilot = PilotConfig::for_frame(frame);

    let coarse_spec = build_sync_model(m, n, Head::Coarse)?;
    let fine_spec = build_sync_model(m, n, Head::Fine)?;
    let one_spec = build_sync_model(m, n, Head::OneStage)?;
    let coarse = count_flops(&coarse_spec)?;
    let fine = count_flops(&fine_spec)?;
    let one = count_flops(&one_spec)?;
    let two_stage = FlopReport::combine(&[&coarse, &fine]);

    let trials = opts.runtime_trials;
    let mut rows = vec![
        ComplexityRow {
            method: Method::CrossCorr.id().into(),
            flops_millions: cross_correlation_flops(mn, opts.preamble_len) as f64 / 1e6,
            params_millions: None,
            runtime_seconds: median_seconds(trials, || {
                cross_correlate_sync(&window, &preamble, m).map(|_| ())
            })?,
        },
        ComplexityRow {
            method: Method::AutoCorr2d.id().into(),
            flops_millions: autocorr2d_flops(frame) as f64 / 1e6,
            params_millions: None,
            runtime_seconds: median_seconds(trials, || {
                match autocorr2d_sync(&window, frame, &pilot) {
                    Ok(_) | Err(Error::Ambiguous { .. }) => Ok(()),
                    Err(e) => Err(e),
                }
            })?,
        },
    ];

    let two_runtime = if two_stage.params <= opts.max_timed_params && trials > 0 {
        let model = TwoStageModel::new(
            Network::new(coarse_spec, 0)?,
            Network::new(fine_spec, 1)?,
            m,
        )?;
        median_seconds(trials, || model.predict(&[&planar]).map(|_| ()))?
    } else {
        None
    };
    rows.push(ComplexityRow {
        method: Method::ResNet2Stage.id().into(),
        flops_millions: two_stage.flops as f64 / 1e6,
        params_millions: Some(two_stage.params as f64 / 1e6),
        runtime_seconds: two_runtime,
    });

    let one_runtime = if one.params <= opts.max_timed_params && trials > 0 {
        let model = OneStageModel::new(Network::new(one_spec, 2)?, m)?;
        median_seconds(trials, || model.predict(&[&planar]).map(|_| ()))?
    } else {
        None
    };
    rows.push(ComplexityRow {
        method: Method::ResNet1Stage.id().into(),
        flops_millions: one.flops as f64 / 1e6,
        params_millions: Some(one.params as f64 / 1e6),
        runtime_seconds: one_runtime,
    });

    Ok(ComplexityReport { rows, two_stage })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 5]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0], &[16383], 16384).unwrap(), 1.0);
        assert_eq!(rmse(&[5, 6], &[5, 6], 64).unwrap(), 0.0);
        let r = rmse(&[13, 6], &[10, 10], 64).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse_raw(&[0], &[16383]).unwrap(), 16383.0);
    }

    #[test]
    fn wrapped_error_is_antisymmetric_except_at_half() {
        for (a, b) in [(0usize, 10usize), (3, 60), (63, 0), (31, 0)] {
            assert_eq!(wrapped_error(a, b, 64), -wrapped_error(b, a, 64));
            assert_eq!(rmse(&[a], &[b], 64).unwrap(), rmse(&[b], &[a], 64).unwrap());
        }
        assert_eq!(wrapped_error(32, 0, 64), -32);
        assert_eq!(
            rmse(&[32], &[0], 64).unwrap(),
            rmse(&[0], &[32], 64).unwrap()
        );
    }

    #[test]
    fn method_ids_parse() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("nope".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn table_flops() {
        let frame = FrameConfig::default_profile();
        assert_eq!(cross_correlation_flops(frame.mn(), 256), 33_554_432);
        assert_eq!(autocorr2d_flops(&frame), 8_257_536);
    }
}
