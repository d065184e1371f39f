//! Tapped-delay-line fading and AWGN.
//!
//! Each path gets a complex Gaussian gain scaled to its average power, a
//! single Doppler sinusoid `nu_max * cos(alpha)` and a random initial phase.
//! Gains are held for the whole capture; the Doppler rotation evolves per
//! sample.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSignal;

pub const AWGN_ID: u8 = 1;
pub const RAYLEIGH_ID: u8 = 2;
pub const EVA_ID: u8 = 3;

/// Average power-delay profile of a multipath channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub id: u8,
    pub delays_ns: Vec<f64>,
    pub gains_db: Vec<f64>,
    pub max_doppler_hz: f64,
}

impl ChannelProfile {
    /// Noise only: one unit path, no delay, no Doppler.
    pub fn awgn() -> Self {
        ChannelProfile {
            id: AWGN_ID,
            delays_ns: vec![0.0],
            gains_db: vec![0.0],
            max_doppler_hz: 0.0,
        }
    }

    /// Three-path Rayleigh profile with 1525 Hz maximum Doppler.
    pub fn rayleigh() -> Self {
        ChannelProfile {
            id: RAYLEIGH_ID,
            delays_ns: vec![0.0, 100.0, 200.0],
            gains_db: vec![0.0, -10.0, -15.0],
            max_doppler_hz: 1525.0,
        }
    }

    /// 3GPP Extended Vehicular A with 3051 Hz maximum Doppler.
    pub fn eva() -> Self {
        ChannelProfile {
            id: EVA_ID,
            delays_ns: vec![
                0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0,
            ],
            gains_db: vec![0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9],
            max_doppler_hz: 3051.0,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            AWGN_ID => Ok(Self::awgn()),
            RAYLEIGH_ID => Ok(Self::rayleigh()),
            EVA_ID => Ok(Self::eva()),
            other => Err(Error::Config(format!(
                "unknown channel id {other}; built-in ids are 1 (AWGN), 2 (Rayleigh), 3 (EVA)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.id {
            AWGN_ID => "awgn",
            RAYLEIGH_ID => "rayleigh",
            EVA_ID => "eva",
            _ => "custom",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_ns.is_empty() || self.delays_ns.len() != self.gains_db.len() {
            return Err(Error::Config(format!(
                "channel {}: {} delays vs {} gains",
                self.id,
                self.delays_ns.len(),
                self.gains_db.len()
            )));
        }
        if self.delays_ns.iter().any(|d| !(*d >= 0.0 && d.is_finite()))
            || self.delays_ns.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Config(format!(
                "channel {}: delays must be non-negative and non-decreasing",
                self.id
            )));
        }
        if self.gains_db.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config(format!(
                "channel {}: non-finite gain",
                self.id
            )));
        }
        if !(self.max_doppler_hz >= 0.0 && self.max_doppler_hz.is_finite()) {
            return Err(Error::Config(format!(
                "channel {}: max Doppler must be non-negative",
                self.id
            )));
        }
        Ok(())
    }

    /// Sum of the linear per-path powers.
    pub fn total_power(&self) -> f64 {
        self.gains_db.iter().map(|g| db_to_linear(*g)).sum()
    }

    fn is_static_unit_path(&self) -> bool {
        self.delays_ns == [0.0] && self.gains_db == [0.0] && self.max_doppler_hz == 0.0
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay: usize,
    pub gain: Complex64,
    pub doppler_hz: f64,
    pub phase0: f64,
}

/// One draw of a [`ChannelProfile`] at a given sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Tap>,
    pub sample_rate_hz: f64,
}

impl ChannelRealization {
    /// Single unit tap: output equals input.
    pub fn identity(sample_rate_hz: f64) -> Self {
        ChannelRealization {
            taps: vec![Tap {
                delay: 0,
                gain: Complex64::new(1.0, 0.0),
                doppler_hz: 0.0,
                phase0: 0.0,
            }],
            sample_rate_hz,
        }
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }
}

/// Draws a channel realization. Paths whose delays round to the same sample
/// stay separate taps.
pub fn realize_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    fs: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Domain(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    profile.validate()?;
    if profile.is_static_unit_path() {
        return Ok(ChannelRealization::identity(fs));
    }
    let taps = profile
        .delays_ns
        .iter()
        .zip(&profile.gains_db)
        .map(|(&delay_ns, &gain_db)| {
            let sigma = db_to_linear(gain_db).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let alpha = rng.random_range(0.0..2.0 * PI);
            let phase0 = rng.random_range(0.0..2.0 * PI);
            Tap {
                delay: (delay_ns * 1e-9 * fs).round() as usize,
                gain: Complex64::new(re, im) * (sigma / 2f64.sqrt()),
                doppler_hz: profile.max_doppler_hz * alpha.cos(),
                phase0,
            }
        })
        .collect();
    Ok(ChannelRealization {
        taps,
        sample_rate_hz: fs,
    })
}

/// `y[k] = sum_i g_i exp(j(2 pi nu_i k / fs + phi_i)) x[k - d_i]`, zero history.
pub fn apply_fading(sig: &TimeSignal, ch: &ChannelRealization) -> Result<TimeSignal> {
    if sig.sample_rate_hz != ch.sample_rate_hz {
        return Err(Error::Domain(format!(
            "signal at {} Hz through channel realized at {} Hz",
            sig.sample_rate_hz, ch.sample_rate_hz
        )));
    }
    let x = &sig.samples;
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for tap in &ch.taps {
        if tap.delay >= x.len() {
            continue;
        }
        let step = 2.0 * PI * tap.doppler_hz / ch.sample_rate_hz;
        for k in tap.delay..x.len() {
            let rot = Complex64::from_polar(1.0, step * k as f64 + tap.phase0);
            y[k] += tap.gain * rot * x[k - tap.delay];
        }
    }
    Ok(TimeSignal::new(y, sig.sample_rate_hz))
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the measured
/// signal power. `snr_db = +inf` returns the input unchanged.
pub fn apply_awgn<R: Rng + ?Sized>(
    sig: &TimeSignal,
    snr_db: f64,
    rng: &mut R,
) -> Result<TimeSignal> {
    if sig.is_empty() {
        return Err(Error::Domain("cannot add noise to an empty signal".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(sig.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::Domain("SNR is NaN".into()));
    }
    let p_sig = sig.mean_power();
    if p_sig == 0.0 {
        return Err(Error::Domain("SNR undefined for an all-zero signal".into()));
    }
    let sigma = (p_sig * 10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    let samples = sig
        .samples
        .iter()
        .map(|&z| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            z + Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(TimeSignal::new(samples, sig.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = 10e6;

    fn delays(profile: &ChannelProfile) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        realize_channel(profile, FS, &mut rng)
            .unwrap()
            .taps
            .iter()
            .map(|t| t.delay)
            .collect()
    }

    // Independent rounding oracle: delay_ns * fs * 1e-9 rounded to nearest.
    fn rounded(delays_ns: &[f64], fs: f64) -> Vec<usize> {
        delays_ns
            .iter()
            .map(|d| (d * fs / 1e9).round() as usize)
            .collect()
    }

    #[test]
    fn tap_delays_at_10mhz() {
        assert_eq!(delays(&ChannelProfile::rayleigh()), vec![0, 1, 2]);
        assert_eq!(
            delays(&ChannelProfile::eva()),
            vec![0, 0, 2, 3, 4, 7, 11, 17, 25]
        );
        assert_eq!(
            rounded(&ChannelProfile::eva().delays_ns, FS),
            delays(&ChannelProfile::eva())
        );
    }

    #[test]
    fn awgn_profile_is_identity_tap() {
        let ch = realize_channel(
            &ChannelProfile::awgn(),
            FS,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(ch, ChannelRealization::identity(FS));
    }

    #[test]
    fn nonpositive_sample_rate_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(realize_channel(&ChannelProfile::eva(), 0.0, &mut rng).is_err());
    }

    #[test]
    fn unknown_id_and_bad_profiles() {
        assert!(ChannelProfile::from_id(9).is_err());
        let mut p = ChannelProfile::rayleigh();
        p.gains_db.pop();
        assert!(p.validate().is_err());
        let mut p = ChannelProfile::rayleigh();
        p.delays_ns = vec![0.0, 200.0, 100.0];
        assert!(p.validate().is_err());
    }

    fn ramp(len: usize) -> TimeSignal {
        TimeSignal::new(
            (0..len)
                .map(|k| Complex64::new(k as f64 + 1.0, -(k as f64) * 0.5))
                .collect(),
            FS,
        )
    }

    #[test]
    fn identity_and_delay_taps() {
        let x = ramp(16);
        let y = apply_fading(&x, &ChannelRealization::identity(FS)).unwrap();
        assert_eq!(y, x);

        let mut ch = ChannelRealization::identity(FS);
        ch.taps[0].delay = 3;
        let y = apply_fading(&x, &ch).unwrap();
        assert_eq!(y.len(), 16);
        for k in 0..3 {
            assert_eq!(y.samples[k], Complex64::new(0.0, 0.0));
        }
        for k in 3..16 {
            assert_eq!(y.samples[k], x.samples[k - 3]);
        }
    }

    #[test]
    fn pure_doppler_rotation() {
        let nu = 1234.5;
        let mut ch = ChannelRealization::identity(FS);
        ch.taps[0].doppler_hz = nu;
        let x = TimeSignal::new(vec![Complex64::new(1.0, 0.0); 64], FS);
        let y = apply_fading(&x, &ch).unwrap();
        for (k, z) in y.samples.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, 2.0 * PI * nu * k as f64 / FS);
            assert!((z - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let x = TimeSignal::new(vec![Complex64::new(1.0, 0.0); 4], 1.0);
        assert!(apply_fading(&x, &ChannelRealization::identity(FS)).is_err());
    }

    #[test]
    fn infinite_snr_is_passthrough() {
        let x = ramp(32);
        let y = apply_awgn(&x, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_signal_is_domain_error() {
        let x = TimeSignal::new(vec![Complex64::new(0.0, 0.0); 8], FS);
        let err = apply_awgn(&x, 10.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Domain(_))));
        let empty = TimeSignal::new(vec![], FS);
        assert!(apply_awgn(&empty, 10.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    fn measured_noise_power(snr_db: f64, seed: u64) -> f64 {
        let x = TimeSignal::new(vec![Complex64::new(1.0, 0.0); 1_000_000], FS);
        let y = apply_awgn(&x, snr_db, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        y.samples
            .iter()
            .zip(&x.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / x.len() as f64
    }

    #[test]
    fn noise_power_calibrated() {
        let p0 = measured_noise_power(0.0, 11);
        assert!((p0 - 1.0).abs() < 0.01, "{p0}");
        let p10 = measured_noise_power(10.0, 12);
        assert!((p10 - 0.1).abs() < 0.001, "{p10}");
    }

    #[test]
    fn fading_power_and_doppler_bound() {
        for profile in [ChannelProfile::rayleigh(), ChannelProfile::eva()] {
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            let trials = 20_000;
            let mut acc = 0.0;
            for _ in 0..trials {
                let ch = realize_channel(&profile, FS, &mut rng).unwrap();
                for t in &ch.taps {
                    assert!(t.doppler_hz.abs() <= profile.max_doppler_hz);
                }
                acc += ch.total_power();
            }
            let mean = acc / trials as f64;
            let expect = profile.total_power();
            assert!(
                (mean - expect).abs() / expect < 0.03,
                "{}: {mean} vs {expect}",
                profile.name()
            );
        }
    }

    #[test]
    fn fading_is_linear() {
        let ch = realize_channel(
            &ChannelProfile::eva(),
            FS,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let x = ramp(200);
        let z = TimeSignal::new(
            (0..200)
                .map(|k| Complex64::new((k as f64).sin(), 1.0))
                .collect(),
            FS,
        );
        let (a, b) = (Complex64::new(0.3, -2.0), Complex64::new(-1.5, 0.25));
        let mix = TimeSignal::new(
            x.samples
                .iter()
                .zip(&z.samples)
                .map(|(p, q)| a * p + b * q)
                .collect(),
            FS,
        );
        let lhs = apply_fading(&mix, &ch).unwrap();
        let fx = apply_fading(&x, &ch).unwrap();
        let fz = apply_fading(&z, &ch).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..200 {
            let rhs = a * fx.samples[k] + b * fz.samples[k];
            num += (lhs.samples[k] - rhs).norm_sqr();
            den += rhs.norm_sqr();
        }
        assert!((num / den).sqrt() < 1e-9);
    }
}
