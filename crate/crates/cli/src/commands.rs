use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use otfs_sync::dataset::{
    generate_to_file, read_dataset, read_dataset_header, Dataset, DatasetConfig, Split,
};
use otfs_sync::eval::{
    complexity_report, sweep_dataset, sweep_generated, write_csv, AutoCorrSync, ComplexityOptions,
    CrossCorrSync, Method, MetricsRow, Synchronizer,
};
use otfs_sync::nn::{load_model, save_model, Head, ModelMeta, Network};
use otfs_sync::pipeline::{
    train_coarse, train_fine, train_one_stage, EpochLog, OneStageModel, StageResult, TrainConfig,
    TwoStageModel,
};
use otfs_sync::{Error, FrameConfig, PilotConfig, Result};
use serde::Serialize;

use crate::{Command, ConfigArgs, Profile, Recipe, Stage};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { config, out, seed } => gen(&config, &out, seed),
        Command::Train {
            stage,
            dataset,
            out_weights,
            coarse_weights,
            recipe,
            epochs,
            batch,
            lr,
            wd,
            seed,
            train_fraction,
            channel,
        } => {
            let mut cfg = match recipe {
                Recipe::Full => TrainConfig::default(),
                Recipe::Toy => TrainConfig::toy(),
            };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch {
                cfg.batch_size = v;
            }
            if let Some(v) = lr {
                cfg.optimizer.lr = v;
            }
            if let Some(v) = wd {
                cfg.optimizer.weight_decay = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let split = SplitArgs {
                train_fraction,
                channel,
            };
            train(
                stage,
                &dataset,
                &out_weights,
                coarse_weights.as_deref(),
                &cfg,
                split,
            )
        }
        Command::Eval {
            method,
            dataset,
            weights,
            config,
            train_fraction,
            all_records,
            channel,
            out,
            json,
        } => {
            let split = SplitArgs {
                train_fraction,
                channel,
            };
            eval(
                method,
                &dataset,
                &weights,
                config.as_deref(),
                split,
                all_records,
                out.as_deref(),
                json,
            )
        }
        Command::Sweep {
            methods,
            config,
            snr_min,
            snr_max,
            snr_step,
            trials,
            weights,
            out,
            json,
        } => {
            let cfg = load_config(&config)?;
            let snrs = snr_list(snr_min, snr_max, snr_step)?;
            let syncs = build_syncs(&methods, &weights, &cfg)?;
            let refs: Vec<&dyn Synchronizer> = syncs.iter().map(|s| s.as_ref()).collect();
            let rows = if snrs.is_empty() {
                Vec::new()
            } else {
                sweep_generated(&refs, &cfg, &snrs, trials)?
            };
            emit_rows(&rows, out.as_deref(), json)
        }
        Command::Complexity {
            config,
            weights,
            trials,
            json,
        } => {
            let cfg = load_config(&config)?;
            let frame = match weights {
                Some(path) => {
                    let (_, meta) = load_model(&path)?;
                    FrameConfig::new(meta.m, meta.n, 0)?
                }
                None => cfg.frame,
            };
            let defaults = ComplexityOptions::default();
            let preamble_len = cfg.preamble.map_or(defaults.preamble_len, |p| p.length);
            let opts = ComplexityOptions {
                preamble_len: preamble_len.min(frame.m * frame.n),
                runtime_trials: trials,
                ..defaults
            };
            let report = complexity_report(&frame, &opts)?;
            if json {
                print_json(&report)
            } else {
                let mut w = csv::Writer::from_writer(io::stdout());
                for row in &report.rows {
                    w.serialize(row).map_err(csv_err)?;
                }
                w.flush()?;
                eprintln!("two-stage breakdown (per window):");
                for l in &report.two_stage.layers {
                    eprintln!(
                        "  {:<24} params {:>10} macs {:>12} elementwise {:>10}",
                        l.name, l.params, l.macs, l.elementwise
                    );
                }
                Ok(())
            }
        }
        Command::Info { dataset, weights } => {
            if let Some(path) = dataset {
                print_json(&read_dataset_header(path)?)
            } else if let Some(path) = weights {
                let (net, meta) = load_model(&path)?;
                print_json(&WeightsInfo::new(&meta, &net))
            } else {
                Err(Error::Config("pass --dataset or --weights".into()))
            }
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<DatasetConfig> {
    match &args.config {
        Some(path) => DatasetConfig::load(path),
        None => Ok(match args.profile {
            Profile::Toy => DatasetConfig::toy_awgn(),
            Profile::Default => DatasetConfig::default_profile(),
        }),
    }
}

fn gen(args: &ConfigArgs, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.global_seed = s;
    }
    cfg.validate()?;
    generate_to_file(&cfg, out)?;
    eprintln!("wrote {} records to {}", cfg.record_count(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    stage: &'static str,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
    best_epoch: usize,
    best_test_accuracy: f64,
    final_test_accuracy: f64,
    weights: &'a Path,
    final_weights: &'a Path,
}

fn final_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".final");
    PathBuf::from(s)
}

struct SplitArgs {
    train_fraction: f64,
    channel: Option<u8>,
}

impl SplitArgs {
    fn apply(&self, ds: &Dataset) -> Result<Split> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train fraction must lie in [0, 1]".into()));
        }
        let keep = |idx: Vec<usize>| -> Vec<usize> {
            idx.into_iter()
                .filter(|&i| self.channel.is_none_or(|c| ds.records[i].channel_id == c))
                .collect()
        };
        let split = ds.split(self.train_fraction);
        let split = Split {
            train: keep(split.train),
            test: keep(split.test),
        };
        if let Some(c) = self.channel {
            if split.train.is_empty() && split.test.is_empty() {
                return Err(Error::Config(format!(
                    "dataset has no captures of channel {c}"
                )));
            }
        }
        Ok(split)
    }
}

fn train(
    stage: Stage,
    dataset: &Path,
    out: &Path,
    coarse_weights: Option<&Path>,
    cfg: &TrainConfig,
    split: SplitArgs,
) -> Result<()> {
    cfg.validate()?;
    let ds = read_dataset(dataset)?;
    let split = split.apply(&ds)?;
    let mut log = |e: &EpochLog| {
        if let Ok(line) = serde_json::to_string(e) {
            println!("{line}");
        }
    };
    let (head, result): (Head, StageResult) = match stage {
        Stage::Coarse => (
            Head::Coarse,
            train_coarse(&ds, &split.train, &split.test, cfg, &mut log)?,
        ),
        Stage::Onestage => (
            Head::OneStage,
            train_one_stage(&ds, &split.train, &split.test, cfg, &mut log)?,
        ),
        Stage::Fine => {
            let path = coarse_weights
                .ok_or_else(|| Error::Config("--stage fine needs --coarse-weights".into()))?;
            let (coarse, meta) = load_model(path)?;
            if meta.head != Head::Coarse || (meta.m, meta.n) != (ds.m, ds.n) {
                return Err(Error::Config(format!(
                    "{} is not a coarse model for M={} N={}",
                    path.display(),
                    ds.m,
                    ds.n
                )));
            }
            (
                Head::Fine,
                train_fine(&ds, &split.train, &split.test, &coarse, cfg, &mut log)?,
            )
        }
    };
    let meta = cfg.meta(ds.m, ds.n, head);
    let final_weights = final_path(out);
    save_model(out, &result.best, &meta)?;
    save_model(&final_weights, &result.last, &meta)?;
    let summary = TrainSummary {
        stage: head.name(),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.optimizer.lr,
        weight_decay: cfg.optimizer.weight_decay,
        seed: cfg.seed,
        best_epoch: result.best_epoch,
        best_test_accuracy: result.best_test_accuracy,
        final_test_accuracy: result.log.last().map_or(0.0, |e| e.test_accuracy),
        weights: out,
        final_weights: &final_weights,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn load_heads(weights: &[PathBuf]) -> Result<Vec<(Network<f32>, ModelMeta)>> {
    weights.iter().map(|p| load_model(p)).collect()
}

fn build_syncs(
    methods: &[Method],
    weights: &[PathBuf],
    cfg: &DatasetConfig,
) -> Result<Vec<Box<dyn Synchronizer>>> {
    let mut models = load_heads(weights)?;
    let (m, n) = (cfg.frame.m, cfg.frame.n);
    if let Some((_, meta)) = models.iter().find(|(_, meta)| (meta.m, meta.n) != (m, n)) {
        return Err(Error::Config(format!(
            "weights are for M={} N={}, captures use M={m} N={n}",
            meta.m, meta.n
        )));
    }
    let mut take = |head: Head| -> Result<Network<f32>> {
        let pos = models
            .iter()
            .position(|(_, meta)| meta.head == head)
            .ok_or_else(|| Error::Config(format!("missing {} weights", head.name())))?;
        Ok(models.remove(pos).0)
    };
    let mut out: Vec<Box<dyn Synchronizer>> = Vec::new();
    for &method in methods {
        out.push(match method {
            Method::CrossCorr => Box::new(CrossCorrSync::from_config(cfg)?),
            Method::AutoCorr2d => Box::new(AutoCorrSync {
                frame: cfg.frame,
                pilot: cfg.pilot,
            }),
            Method::ResNet2Stage => Box::new(TwoStageModel::new(
                take(Head::Coarse)?,
                take(Head::Fine)?,
                m,
            )?),
            Method::ResNet1Stage => Box::new(OneStageModel::new(take(Head::OneStage)?, m)?),
        });
    }
    Ok(out)
}

/// Capture configuration matching a dataset file: the explicit config when
/// given (checked against the header), otherwise the toy settings with the
/// dataset's frame geometry.
fn config_for(ds: &Dataset, config: Option<&Path>) -> Result<DatasetConfig> {
    match config {
        Some(path) => {
            let cfg = DatasetConfig::load(path)?;
            let f = &cfg.frame;
            if (f.m, f.n, f.l_cp) != (ds.m, ds.n, ds.l_cp) {
                return Err(Error::Config(
                    "config frame does not match the dataset".into(),
                ));
            }
            Ok(cfg)
        }
        None => {
            let mut cfg = DatasetConfig::toy_awgn();
            cfg.frame = FrameConfig::new(ds.m, ds.n, ds.l_cp)?;
            cfg.pilot = PilotConfig::for_frame(&cfg.frame);
            cfg.global_seed = ds.global_seed;
            Ok(cfg)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    method: Method,
    dataset: &Path,
    weights: &[PathBuf],
    config: Option<&Path>,
    split: SplitArgs,
    all_records: bool,
    out: Option<&Path>,
    json: bool,
) -> Result<()> {
    if method.is_learned() && weights.is_empty() {
        return Err(Error::Config(format!("{method} needs --weights")));
    }
    let ds = read_dataset(dataset)?;
    let cfg = config_for(&ds, config)?;
    let syncs = build_syncs(&[method], weights, &cfg)?;
    let indices = if all_records {
        let all = SplitArgs {
            train_fraction: 1.0,
            ..split
        };
        all.apply(&ds)?.train
    } else {
        split.apply(&ds)?.test
    };
    let refs: Vec<&dyn Synchronizer> = syncs.iter().map(|s| s.as_ref()).collect();
    let rows = sweep_dataset(&refs, &ds, &indices)?;
    emit_rows(&rows, out, json)
}

fn snr_list(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || !min.is_finite() || !max.is_finite() {
        return Err(Error::Config(
            "SNR range needs finite bounds and a positive step".into(),
        ));
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let v = min + k as f64 * step;
        if v > max + 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    Ok(out)
}

fn emit_rows(rows: &[MetricsRow], out: Option<&Path>, json: bool) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout()),
    };
    if json {
        let mut sink = sink;
        serde_json::to_writer_pretty(&mut sink, rows)?;
        writeln!(sink)?;
        sink.flush()?;
        Ok(())
    } else {
        write_csv(rows, sink)
    }
}

#[derive(Serialize)]
struct WeightsInfo {
    head: &'static str,
    m: usize,
    n: usize,
    seed: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    batch_size: usize,
    epochs: usize,
    params: u64,
}

impl WeightsInfo {
    fn new(meta: &ModelMeta, net: &Network<f32>) -> Self {
        WeightsInfo {
            head: meta.head.name(),
            m: meta.m,
            n: meta.n,
            seed: meta.seed,
            lr: meta.optimizer.lr,
            beta1: meta.optimizer.beta1,
            beta2: meta.optimizer.beta2,
            eps: meta.optimizer.eps,
            weight_decay: meta.optimizer.weight_decay,
            batch_size: meta.batch_size,
            epochs: meta.epochs,
            params: net.param_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_ranges() {
        assert_eq!(
            snr_list(-10.0, 20.0, 10.0).unwrap(),
            vec![-10.0, 0.0, 10.0, 20.0]
        );
        assert_eq!(snr_list(0.0, 0.5, 1.0).unwrap(), vec![0.0]);
        assert!(snr_list(5.0, 0.0, 1.0).unwrap().is_empty());
        assert!(snr_list(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn final_weights_path() {
        assert_eq!(
            final_path(Path::new("a/w.bin")),
            PathBuf::from("a/w.bin.final")
        );
    }
}
