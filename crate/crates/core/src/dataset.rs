//! Labeled capture synthesis and the binary dataset format.
//!
//! A capture is cut from a continuous stream
//!
//! ```text
//! [ neighbor data, MN ] [ CP | payload ] x B [ neighbor data, MN ]
//! ```
//!
//! after fading and noise. The window of `MN` samples starts `theta` samples
//! after the first payload sample, so `theta = 0` is perfect alignment.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_awgn, apply_fading, realize_channel, ChannelProfile};
use crate::error::{Error, Result};
use crate::frame::{
    build_data_grid, build_dd_frame, dd_to_dt, payload_samples, FrameConfig, PilotConfig,
    TimeSignal,
};

pub const DATASET_MAGIC: &[u8; 8] = b"OTFSDS01";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8 + 8;
const RECORD_META_LEN: usize = 1 + 4 + 4 + 4 + 2 + 2;

/// Known constant-amplitude sequence used by the cross-correlation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreambleConfig {
    #[serde(default = "default_preamble_len")]
    pub length: usize,
    #[serde(default = "default_preamble_root")]
    pub root: usize,
}

fn default_preamble_len() -> usize {
    256
}

fn default_preamble_root() -> usize {
    25
}

impl Default for PreambleConfig {
    fn default() -> Self {
        PreambleConfig {
            length: default_preamble_len(),
            root: default_preamble_root(),
        }
    }
}

/// Zadoff-Chu sequence of the given length and root.
pub fn zadoff_chu(length: usize, root: usize) -> Vec<Complex64> {
    let l = length as f64;
    let u = root as f64;
    (0..length)
        .map(|k| {
            let k = k as f64;
            let arg = if length % 2 == 0 {
                k * k
            } else {
                k * (k + 1.0)
            };
            Complex64::from_polar(1.0, -std::f64::consts::PI * u * arg / l)
        })
        .collect()
}

/// A channel given either by built-in id or by an explicit profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ChannelSpec {
    Id(u8),
    Profile(ChannelProfile),
}

#[derive(Debug, Clone, Deserialize)]
struct RawDatasetConfig {
    frame: FrameConfig,
    #[serde(default)]
    pilot: Option<PilotConfig>,
    channels: Vec<ChannelSpec>,
    #[serde(default = "default_snr_grid")]
    snr_grid_db: Vec<f64>,
    samples_per_channel: usize,
    #[serde(default = "default_blocks")]
    blocks_per_frame: usize,
    #[serde(default)]
    preamble: Option<PreambleConfig>,
    #[serde(default)]
    global_seed: u64,
    #[serde(default = "default_train_fraction")]
    train_fraction: f64,
}

fn default_snr_grid() -> Vec<f64> {
    (0..24).map(|i| -20.0 + 2.0 * i as f64).collect()
}

fn default_blocks() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDatasetConfig")]
pub struct DatasetConfig {
    pub frame: FrameConfig,
    pub pilot: PilotConfig,
    pub channels: Vec<ChannelProfile>,
    pub snr_grid_db: Vec<f64>,
    pub samples_per_channel: usize,
    /// Number of CP-prefixed blocks in the target frame (`B`).
    pub blocks_per_frame: usize,
    pub preamble: Option<PreambleConfig>,
    pub global_seed: u64,
    pub train_fraction: f64,
}

impl TryFrom<RawDatasetConfig> for DatasetConfig {
    type Error = Error;

    fn try_from(raw: RawDatasetConfig) -> Result<Self> {
        let channels = raw
            .channels
            .into_iter()
            .map(|c| match c {
                ChannelSpec::Id(id) => ChannelProfile::from_id(id),
                ChannelSpec::Profile(p) => Ok(p),
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = DatasetConfig {
            pilot: raw
                .pilot
                .unwrap_or_else(|| PilotConfig::for_frame(&raw.frame)),
            frame: raw.frame,
            channels,
            snr_grid_db: raw.snr_grid_db,
            samples_per_channel: raw.samples_per_channel,
            blocks_per_frame: raw.blocks_per_frame,
            preamble: raw.preamble,
            global_seed: raw.global_seed,
            train_fraction: raw.train_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DatasetConfig {
    /// Full-scale recipe: three channels, 30,000 captures each, SNR grid
    /// -20..26 dB in 2 dB steps.
    pub fn default_profile() -> Self {
        let frame = FrameConfig::default_profile();
        DatasetConfig {
            pilot: PilotConfig::for_frame(&frame),
            frame,
            channels: vec![
                ChannelProfile::awgn(),
                ChannelProfile::rayleigh(),
                ChannelProfile::eva(),
            ],
            snr_grid_db: default_snr_grid(),
            samples_per_channel: 30_000,
            blocks_per_frame: 1,
            preamble: None,
            global_seed: 0,
            train_fraction: 0.8,
        }
    }

    /// Desk-scale AWGN recipe: M=32, N=8, 5,000 captures at 10 and 20 dB.
    pub fn toy_awgn() -> Self {
        let frame = FrameConfig::toy();
        DatasetConfig {
            pilot: PilotConfig::for_frame(&frame),
            frame,
            channels: vec![ChannelProfile::awgn()],
            snr_grid_db: vec![10.0, 20.0],
            samples_per_channel: 5_000,
            blocks_per_frame: 1,
            preamble: None,
            global_seed: 0,
            train_fraction: 0.8,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.pilot.validate(&self.frame)?;
        if self.channels.is_empty() {
            return Err(Error::Config("at least one channel is required".into()));
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR grid must be non-empty".into()));
        }
        if self.samples_per_channel == 0 {
            return Err(Error::Config("samples_per_channel must be positive".into()));
        }
        if self.blocks_per_frame == 0 {
            return Err(Error::Config("blocks_per_frame must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let Some(p) = &self.preamble {
            if p.length == 0 || p.length > self.frame.mn() {
                return Err(Error::Config(format!(
                    "preamble length {} must lie in [1, MN={}]",
                    p.length,
                    self.frame.mn()
                )));
            }
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.channels.len() * self.samples_per_channel
    }

    pub fn preamble_sequence(&self) -> Option<Vec<Complex64>> {
        self.preamble.map(|p| zadoff_chu(p.length, p.root))
    }
}

/// One labeled capture. `window` is planar: `MN` real parts followed by
/// `MN` imaginary parts, i.e. a `[2, MN]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub channel_id: u8,
    pub snr_db: f32,
    pub theta_raw: i32,
    pub theta_wrapped: u32,
    pub theta_t: u16,
    pub theta_d: u16,
    pub window: Vec<f32>,
}

impl CaptureRecord {
    pub fn window_complex(&self) -> Vec<Complex64> {
        let mn = self.window.len() / 2;
        (0..mn)
            .map(|k| Complex64::new(self.window[k] as f64, self.window[mn + k] as f64))
            .collect()
    }
}

/// Splits complex samples into the planar `[Re; Im]` single-precision layout.
pub fn to_planar(samples: &[Complex64]) -> Vec<f32> {
    let mut out = Vec::with_capacity(2 * samples.len());
    out.extend(samples.iter().map(|z| z.re as f32));
    out.extend(samples.iter().map(|z| z.im as f32));
    out
}

/// `(theta_t, theta_d)` with `theta mod MN = theta_d + M * theta_t`.
pub fn label_of(theta_raw: i64, m: usize, n: usize) -> (usize, usize) {
    let w = wrap_offset(theta_raw, m * n);
    (w / m, w % m)
}

pub fn wrap_offset(theta_raw: i64, mn: usize) -> usize {
    theta_raw.rem_euclid(mn as i64) as usize
}

/// Transmit stream before the channel plus the index of the first payload
/// sample of the target frame.
#[derive(Debug, Clone)]
pub struct TxStream {
    pub signal: TimeSignal,
    pub payload_start: usize,
}

/// Builds `[neighbor | (CP + payload) x B | neighbor]`. With a preamble
/// configured, it occupies the first `L_seq` payload samples of the target
/// frame and of both neighbors.
pub fn assemble_stream<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Result<TxStream> {
    let frame = &cfg.frame;
    let mn = frame.mn();
    let preamble = cfg.preamble_sequence();
    let stamp = |payload: &mut Vec<Complex64>| {
        if let Some(p) = &preamble {
            payload[..p.len()].copy_from_slice(p);
        }
    };

    let mut prepend = payload_samples(&dd_to_dt(&build_data_grid(frame, rng)?), frame)?;
    stamp(&mut prepend);
    let mut payload = payload_samples(&dd_to_dt(&build_dd_frame(frame, &cfg.pilot, rng)?), frame)?;
    stamp(&mut payload);
    let mut append = payload_samples(&dd_to_dt(&build_data_grid(frame, rng)?), frame)?;
    stamp(&mut append);

    let mut samples = Vec::with_capacity(2 * mn + cfg.blocks_per_frame * frame.samples_per_block());
    samples.extend_from_slice(&prepend);
    for _ in 0..cfg.blocks_per_frame {
        samples.extend_from_slice(&payload[mn - frame.l_cp..]);
        samples.extend_from_slice(&payload);
    }
    samples.extend_from_slice(&append);
    Ok(TxStream {
        signal: TimeSignal::new(samples, frame.sample_rate_hz),
        payload_start: mn + frame.l_cp,
    })
}

/// Synthesizes one capture with offset `theta_raw` in `[-MN/2, MN/2)`.
/// `snr_db = +inf` disables noise.
pub fn synthesize_capture<R: Rng + ?Sized>(
    cfg: &DatasetConfig,
    channel: &ChannelProfile,
    snr_db: f64,
    theta_raw: i64,
    rng: &mut R,
) -> Result<CaptureRecord> {
    let window = synthesize_window(cfg, channel, snr_db, theta_raw, rng)?;
    let frame = &cfg.frame;
    let wrapped = wrap_offset(theta_raw, frame.mn());
    let (theta_t, theta_d) = label_of(theta_raw, frame.m, frame.n);
    Ok(CaptureRecord {
        channel_id: channel.id,
        snr_db: snr_db as f32,
        theta_raw: theta_raw as i32,
        theta_wrapped: wrapped as u32,
        theta_t: theta_t as u16,
        theta_d: theta_d as u16,
        window: to_planar(&window),
    })
}

/// The complex `MN`-sample window behind [`synthesize_capture`].
pub fn synthesize_window<R: Rng + ?Sized>(
    cfg: &DatasetConfig,
    channel: &ChannelProfile,
    snr_db: f64,
    theta_raw: i64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let mn = cfg.frame.mn() as i64;
    if theta_raw < -mn / 2 || theta_raw >= mn / 2 {
        return Err(Error::Domain(format!(
            "offset {theta_raw} outside [{}, {})",
            -mn / 2,
            mn / 2
        )));
    }
    let tx = assemble_stream(cfg, rng)?;
    let ch = realize_channel(channel, cfg.frame.sample_rate_hz, rng)?;
    let faded = apply_fading(&tx.signal, &ch)?;
    let rx = apply_awgn(&faded, snr_db, rng)?;
    let start = (tx.payload_start as i64 + theta_raw) as usize;
    Ok(rx.samples[start..start + cfg.frame.mn()].to_vec())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream behind record `index` of `channel_id`.
pub fn record_seed(global_seed: u64, channel_id: u8, index: u64) -> u64 {
    let h = splitmix64(global_seed);
    let h = splitmix64(h ^ channel_id as u64);
    splitmix64(h ^ index)
}

/// Record `index` of channel slot `channel_idx`; a pure function of the config.
pub fn generate_record(
    cfg: &DatasetConfig,
    channel_idx: usize,
    index: usize,
) -> Result<CaptureRecord> {
    let channel = &cfg.channels[channel_idx];
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.global_seed, channel.id, index as u64));
    let half = (cfg.frame.mn() / 2) as i64;
    let theta_raw = rng.random_range(-half..half);
    let snr_db = cfg.snr_grid_db[rng.random_range(0..cfg.snr_grid_db.len())];
    synthesize_capture(cfg, channel, snr_db, theta_raw, &mut rng)
}

/// In-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub n: usize,
    pub l_cp: usize,
    pub global_seed: u64,
    pub records: Vec<CaptureRecord>,
}

/// Record indices of the train and test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-channel seeded split: `round(f * n_c)` records of every channel go
    /// to training, the rest to test. Indices come back sorted.
    pub fn split(&self, train_fraction: f64) -> Split {
        let mut by_channel: Vec<(u8, Vec<usize>)> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            match by_channel.iter_mut().find(|(id, _)| *id == r.channel_id) {
                Some((_, v)) => v.push(i),
                None => by_channel.push((r.channel_id, vec![i])),
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (id, mut idx) in by_channel {
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed(self.global_seed, id, u64::MAX));
            idx.shuffle(&mut rng);
            let n_train = (idx.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Split { train, test }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.header_only()
        }
    }

    fn header_only(&self) -> Dataset {
        Dataset {
            m: self.m,
            n: self.n,
            l_cp: self.l_cp,
            global_seed: self.global_seed,
            records: Vec::new(),
        }
    }
}

/// Generates every record of `cfg`, channel-major. Output does not depend on
/// the rayon thread count.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.channels.len())
        .flat_map(|c| (0..cfg.samples_per_channel).map(move |i| (c, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, i)| generate_record(cfg, c, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        m: cfg.frame.m,
        n: cfg.frame.n,
        l_cp: cfg.frame.l_cp,
        global_seed: cfg.global_seed,
        records,
    })
}

/// Streams records to disk without holding the full dataset in memory.
pub struct DatasetWriter<W: Write> {
    out: W,
    mn: usize,
    declared: u64,
    written: u64,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(
        path: impl AsRef<Path>,
        m: usize,
        n: usize,
        l_cp: usize,
        count: u64,
        seed: u64,
    ) -> Result<Self> {
        let file = BufWriter::new(File::create(path)?);
        DatasetWriter::new(file, m, n, l_cp, count, seed)
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, m: usize, n: usize, l_cp: usize, count: u64, seed: u64) -> Result<Self> {
        out.write_all(DATASET_MAGIC)?;
        out.write_u32::<LittleEndian>(DATASET_VERSION)?;
        out.write_u32::<LittleEndian>(m as u32)?;
        out.write_u32::<LittleEndian>(n as u32)?;
        out.write_u32::<LittleEndian>(l_cp as u32)?;
        out.write_u64::<LittleEndian>(count)?;
        out.write_u64::<LittleEndian>(seed)?;
        Ok(DatasetWriter {
            out,
            mn: m * n,
            declared: count,
            written: 0,
        })
    }

    pub fn push(&mut self, r: &CaptureRecord) -> Result<()> {
        if r.window.len() != 2 * self.mn {
            return Err(Error::shape(
                format!("[2, {}] window", self.mn),
                r.window.len(),
            ));
        }
        let out = &mut self.out;
        out.write_u8(r.channel_id)?;
        out.write_f32::<LittleEndian>(r.snr_db)?;
        out.write_i32::<LittleEndian>(r.theta_raw)?;
        out.write_u32::<LittleEndian>(r.theta_wrapped)?;
        out.write_u16::<LittleEndian>(r.theta_t)?;
        out.write_u16::<LittleEndian>(r.theta_d)?;
        for v in &r.window {
            out.write_f32::<LittleEndian>(*v)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.declared {
            return Err(Error::Truncated {
                declared: self.declared,
                found: self.written,
            });
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Records generated per parallel chunk when streaming to disk.
const STREAM_CHUNK: usize = 256;

/// Generates `cfg` straight into `out`, holding at most one chunk of records
/// in memory. The bytes equal `write_dataset_to(&generate_dataset(cfg)?)`.
pub fn generate_to<W: Write>(cfg: &DatasetConfig, out: W) -> Result<W> {
    cfg.validate()?;
    let f = &cfg.frame;
    let mut w = DatasetWriter::new(
        out,
        f.m,
        f.n,
        f.l_cp,
        cfg.record_count() as u64,
        cfg.global_seed,
    )?;
    for c in 0..cfg.channels.len() {
        let mut start = 0;
        while start < cfg.samples_per_channel {
            let end = (start + STREAM_CHUNK).min(cfg.samples_per_channel);
            let chunk = (start..end)
                .into_par_iter()
                .map(|i| generate_record(cfg, c, i))
                .collect::<Result<Vec<_>>>()?;
            for r in &chunk {
                w.push(r)?;
            }
            start = end;
        }
    }
    w.finish()
}

pub fn generate_to_file(cfg: &DatasetConfig, path: impl AsRef<Path>) -> Result<()> {
    generate_to(cfg, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, out: W) -> Result<W> {
    let mut w = DatasetWriter::new(
        out,
        ds.m,
        ds.n,
        ds.l_cp,
        ds.records.len() as u64,
        ds.global_seed,
    )?;
    for r in &ds.records {
        w.push(r)?;
    }
    w.finish()
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_to(ds, BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Header fields of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub l_cp: usize,
    pub record_count: u64,
    pub global_seed: u64,
}

fn read_header<R: Read>(input: &mut R) -> Result<DatasetHeader> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file shorter than the dataset header".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut fixed = [0u8; HEADER_LEN - 8];
    input
        .read_exact(&mut fixed)
        .map_err(|_| Error::Format("file shorter than the dataset header".into()))?;
    let mut h = &fixed[..];
    let version = h.read_u32::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let m = h.read_u32::<LittleEndian>()? as usize;
    let n = h.read_u32::<LittleEndian>()? as usize;
    let l_cp = h.read_u32::<LittleEndian>()? as usize;
    let record_count = h.read_u64::<LittleEndian>()?;
    let global_seed = h.read_u64::<LittleEndian>()?;
    if m == 0 || n == 0 {
        return Err(Error::Format(format!("degenerate grid {m}x{n}")));
    }
    Ok(DatasetHeader {
        version,
        m,
        n,
        l_cp,
        record_count,
        global_seed,
    })
}

pub fn read_dataset_header(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    read_header(&mut BufReader::new(File::open(path)?))
}

// Fills `buf` completely, or reports how many bytes were available.
fn read_full<R: Read>(input: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_dataset_from<R: Read>(mut input: R) -> Result<Dataset> {
    let header = read_header(&mut input)?;
    let mn = header.m * header.n;
    let rec_len = RECORD_META_LEN + 8 * mn;
    let mut buf = vec![0u8; rec_len];
    let mut records = Vec::with_capacity(header.record_count.min(1 << 16) as usize);
    for found in 0..header.record_count {
        if read_full(&mut input, &mut buf)? < rec_len {
            return Err(Error::Truncated {
                declared: header.record_count,
                found,
            });
        }
        let mut b = &buf[..];
        let channel_id = b.read_u8()?;
        let snr_db = b.read_f32::<LittleEndian>()?;
        let theta_raw = b.read_i32::<LittleEndian>()?;
        let theta_wrapped = b.read_u32::<LittleEndian>()?;
        let theta_t = b.read_u16::<LittleEndian>()?;
        let theta_d = b.read_u16::<LittleEndian>()?;
        if theta_wrapped as usize != theta_d as usize + header.m * theta_t as usize
            || theta_wrapped as usize >= mn
        {
            return Err(Error::Format(format!(
                "record {found}: labels ({theta_t}, {theta_d}) inconsistent with offset {theta_wrapped}"
            )));
        }
        let mut window = vec![0f32; 2 * mn];
        b.read_f32_into::<LittleEndian>(&mut window)?;
        records.push(CaptureRecord {
            channel_id,
            snr_db,
            theta_raw,
            theta_wrapped,
            theta_t,
            theta_d,
            window,
        });
    }
    let mut extra = 0u64;
    loop {
        let k = read_full(&mut input, &mut buf)?;
        if k == 0 {
            break;
        }
        extra += 1;
        if k < rec_len {
            break;
        }
    }
    if extra > 0 {
        return Err(Error::Truncated {
            declared: header.record_count,
            found: header.record_count + extra,
        });
    }
    Ok(Dataset {
        m: header.m,
        n: header.n,
        l_cp: header.l_cp,
        global_seed: header.global_seed,
        records,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelProfile;

    fn toy(samples: usize) -> DatasetConfig {
        DatasetConfig {
            samples_per_channel: samples,
            ..DatasetConfig::toy_awgn()
        }
    }

    #[test]
    fn labels() {
        assert_eq!(label_of(0, 256, 64), (0, 0));
        assert_eq!(label_of(517, 256, 64), (2, 5));
        assert_eq!(label_of(-256, 256, 64), (63, 0));
        assert_eq!(label_of(-1, 256, 64), (63, 255));
        assert_eq!(wrap_offset(-1, 256 * 64), 16383);
        assert_eq!(label_of(256 * 3 + 5, 256, 64), (3, 5));
    }

    #[test]
    fn aligned_clean_capture_is_payload() {
        let cfg = toy(1);
        let awgn = ChannelProfile::awgn();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let window = synthesize_window(&cfg, &awgn, f64::INFINITY, 0, &mut a).unwrap();
        let tx = assemble_stream(&cfg, &mut b).unwrap();
        let mn = cfg.frame.mn();
        assert_eq!(
            window,
            tx.signal.samples[tx.payload_start..tx.payload_start + mn]
        );
    }

    #[test]
    fn window_provenance_for_every_offset_sign() {
        let cfg = toy(1);
        let awgn = ChannelProfile::awgn();
        let mn = cfg.frame.mn() as i64;
        for theta in [-mn / 2, -37, -1, 1, 45, mn / 2 - 1] {
            let mut a = ChaCha8Rng::seed_from_u64(theta as u64);
            let mut b = ChaCha8Rng::seed_from_u64(theta as u64);
            let w = synthesize_window(&cfg, &awgn, f64::INFINITY, theta, &mut a).unwrap();
            let tx = assemble_stream(&cfg, &mut b).unwrap();
            let start = (mn + cfg.frame.l_cp as i64 + theta) as usize;
            assert_eq!(w, tx.signal.samples[start..start + mn as usize]);
        }
    }

    #[test]
    fn record_labels_from_negative_offset() {
        let cfg = DatasetConfig {
            frame: FrameConfig::default_profile(),
            pilot: PilotConfig::for_frame(&FrameConfig::default_profile()),
            ..toy(1)
        };
        let r = synthesize_capture(
            &cfg,
            &ChannelProfile::awgn(),
            20.0,
            -1,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!((r.theta_wrapped, r.theta_t, r.theta_d), (16383, 63, 255));
        assert_eq!(r.window.len(), 2 * 16384);
    }

    #[test]
    fn offset_out_of_range_is_domain_error() {
        let cfg = toy(1);
        let mn = cfg.frame.mn() as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [mn / 2, -mn / 2 - 1] {
            let r = synthesize_capture(&cfg, &ChannelProfile::awgn(), 10.0, bad, &mut rng);
            assert!(matches!(r, Err(Error::Domain(_))));
        }
    }

    #[test]
    fn preamble_sits_at_payload_head() {
        let cfg = DatasetConfig {
            preamble: Some(PreambleConfig {
                length: 16,
                root: 5,
            }),
            ..toy(1)
        };
        let tx = assemble_stream(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let zc = zadoff_chu(16, 5);
        let s = &tx.signal.samples;
        assert_eq!(&s[tx.payload_start..tx.payload_start + 16], &zc[..]);
        let next = tx.payload_start + cfg.frame.mn();
        assert_eq!(&s[next..next + 16], &zc[..]);
        for z in &zc {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_block_frame_repeats() {
        let cfg = DatasetConfig {
            blocks_per_frame: 2,
            ..toy(1)
        };
        let tx = assemble_stream(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ns = cfg.frame.samples_per_block();
        let mn = cfg.frame.mn();
        assert_eq!(tx.signal.len(), 2 * mn + 2 * ns);
        assert_eq!(
            tx.signal.samples[mn..mn + ns],
            tx.signal.samples[mn + ns..mn + 2 * ns]
        );
    }

    #[test]
    fn generation_counts_and_split() {
        let mut cfg = toy(50);
        cfg.channels = vec![ChannelProfile::awgn(), ChannelProfile::rayleigh()];
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.records.iter().filter(|r| r.channel_id == 2).count(), 50);
        let split = ds.split(0.8);
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.test.len(), 20);
        for id in [1u8, 2] {
            let n = split
                .train
                .iter()
                .filter(|&&i| ds.records[i].channel_id == id)
                .count();
            assert_eq!(n, 40);
        }
        assert_eq!(ds.split(0.8), split);
        for r in &ds.records {
            assert_eq!(r.theta_wrapped, r.theta_d as u32 + 32 * r.theta_t as u32);
            assert!(cfg.snr_grid_db.contains(&(r.snr_db as f64)));
        }
    }

    #[test]
    fn record_is_independent_of_generation_order() {
        let cfg = toy(20);
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(generate_record(&cfg, 0, 13).unwrap(), ds.records[13]);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let ds = generate_dataset(&toy(6)).unwrap();
        let bytes = write_dataset_to(&ds, Vec::new()).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 6 * (RECORD_META_LEN + 8 * 256));
        assert_eq!(read_dataset_from(&bytes[..]).unwrap(), ds);
        assert_eq!(generate_to(&toy(6), Vec::new()).unwrap(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset_from(&bad[..]), Err(Error::Format(_))));

        let short = &bytes[..bytes.len() - 10];
        assert!(matches!(
            read_dataset_from(short),
            Err(Error::Truncated {
                declared: 6,
                found: 5
            })
        ));

        let mut long = bytes.clone();
        long.extend_from_slice(&bytes[HEADER_LEN..HEADER_LEN + RECORD_META_LEN + 8 * 256]);
        assert!(matches!(
            read_dataset_from(&long[..]),
            Err(Error::Truncated {
                declared: 6,
                found: 7
            })
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(
            read_dataset_from(&wrong_version[..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn config_json_defaults_and_custom_channels() {
        let text = r#"{
            "frame": {"M": 32, "N": 8, "L_CP": 8},
            "channels": [1, {"id": 7, "delays_ns": [0, 500], "gains_db": [0, -3], "max_doppler_hz": 100}],
            "samples_per_channel": 10
        }"#;
        let cfg = DatasetConfig::from_json(text).unwrap();
        assert_eq!(cfg.pilot, PilotConfig::for_frame(&cfg.frame));
        assert_eq!(cfg.channels[0], ChannelProfile::awgn());
        assert_eq!(cfg.channels[1].id, 7);
        assert_eq!(cfg.snr_grid_db.len(), 24);
        assert_eq!(cfg.snr_grid_db[23], 26.0);
        assert_eq!(cfg.train_fraction, 0.8);
        let again = DatasetConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);

        assert!(DatasetConfig::from_json(
            r#"{"frame": {"M": 30, "N": 8, "L_CP": 8}, "channels": [1], "samples_per_channel": 1}"#
        )
        .is_err());
        assert!(DatasetConfig::from_json(
            r#"{"frame": {"M": 32, "N": 8, "L_CP": 8}, "channels": [5], "samples_per_channel": 1}"#
        )
        .is_err());
    }

    #[test]
    fn default_recipe_sizes() {
        let cfg = DatasetConfig::default_profile();
        assert_eq!(cfg.record_count(), 90_000);
        assert_eq!(
            (cfg.samples_per_channel as f64 * cfg.train_fraction).round(),
            24_000.0
        );
    }
}
