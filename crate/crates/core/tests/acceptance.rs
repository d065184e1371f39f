//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset; 7 and 10 reuse the models trained by 6.

use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use otfs_sync::channel::ChannelProfile;
use otfs_sync::classic::{autocorr2d, cross_correlation};
use otfs_sync::dataset::{
    generate_dataset, generate_to_file, Dataset, DatasetConfig, PreambleConfig, Split,
};
use otfs_sync::eval::{
    accuracy, autocorr2d_flops, cross_correlation_flops, rmse, sweep_generated, CrossCorrSync,
    Synchronizer,
};
use otfs_sync::frame::{
    build_dd_frame, dd_to_dt, deserialize_time, dt_to_dd, serialize_time, FrameConfig, Grid,
    PilotConfig,
};
use otfs_sync::nn::gradcheck::{check_cross_entropy, check_module, random_input, GradReport};
use otfs_sync::nn::{
    build_sync_model, count_flops, count_params, save_model, BatchNorm1d, Conv1d, Flatten, Head,
    Linear, MaxPool1d, Relu, ResBlock,
};
use otfs_sync::pipeline::{
    train_coarse, train_fine, train_one_stage, OneStageModel, TrainConfig, TwoStageModel,
};
use otfs_sync::{DdGrid, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SHAPES: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

/// Two-stage and one-stage models trained on the toy dataset.
struct Trained {
    ds: Dataset,
    split: Split,
    two_stage: TwoStageModel,
    two_stage_accuracy: f64,
}

fn c1_params() -> Result<Outcome> {
    let coarse = count_params(&build_sync_model(256, 64, Head::Coarse)?)?;
    let fine = count_params(&build_sync_model(256, 64, Head::Fine)?)?;
    let total = coarse + fine;
    let millions = total as f64 / 1e6;
    outcome(
        (millions - 10.50).abs() <= 0.01,
        format!("coarse {coarse} + fine {fine} = {total} ({millions:.3}M)"),
    )
}

fn c2_flops() -> Result<Outcome> {
    let frame = FrameConfig::default_profile();
    let xc = cross_correlation_flops(frame.mn(), 256);
    let ac = autocorr2d_flops(&frame);
    let coarse = count_flops(&build_sync_model(256, 64, Head::Coarse)?)?;
    let fine = count_flops(&build_sync_model(256, 64, Head::Fine)?)?;
    let two = coarse.flops + fine.flops;
    for (name, r) in [("coarse", &coarse), ("fine", &fine)] {
        for l in &r.layers {
            println!(
                "    {name:<6} {:<16} macs {:>10} elementwise {:>9} params {:>9}",
                l.name, l.macs, l.elementwise, l.params
            );
        }
    }
    let pass = xc == 33_554_432 && ac == 8_257_536 && (175_000_000..=215_000_000).contains(&two);
    outcome(
        pass,
        format!(
            "crosscorr {xc}, autocorr2d {ac}, two-stage {two} (coarse {} + fine {})",
            coarse.flops, fine.flops
        ),
    )
}

fn random_grid<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Grid {
    let data = (0..rows * cols)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    Grid::from_vec(rows, cols, data).expect("grid")
}

fn c3_signal_chain() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_trip = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..100 {
        let m = 1usize << rng.random_range(3..=8);
        let n = 1usize << rng.random_range(2..=6);
        let l_cp = rng.random_range(0..m.min(64));
        let frame = FrameConfig::new(m, n, l_cp)?;
        let pilot = PilotConfig::for_frame(&frame);
        let dd = build_dd_frame(&frame, &pilot, &mut rng)?;
        let tx = serialize_time(&dd_to_dt(&dd), &frame)?;
        let back = dt_to_dd(&deserialize_time(&tx, &frame)?);
        worst_trip = worst_trip.max(back.0.relative_error(&dd.0));

        let x = DdGrid(random_grid(m, n, &mut rng));
        let energy = x.0.frobenius_norm();
        let y = dd_to_dt(&x).0.frobenius_norm();
        worst_norm = worst_norm.max((y - energy).abs() / energy);
    }
    outcome(
        worst_trip <= 1e-9 && worst_norm <= 1e-12,
        format!(
            "round-trip error {worst_trip:.2e}, norm deviation {worst_norm:.2e} over 100 grids"
        ),
    )
}

fn naive_autocorr(w: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); m * n];
    for row in 0..m {
        for col in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n - 1 {
                let a = w[((col + k) % n) * m + row];
                let b = w[((col + k + 1) % n) * m + row];
                acc += a.conj() * b;
            }
            out[row * n + col] = acc;
        }
    }
    out
}

fn naive_xcorr(w: &[Complex64], p: &[Complex64]) -> Vec<f64> {
    let len = w.len();
    (0..len)
        .map(|tau| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, pi) in p.iter().enumerate() {
                acc += pi.conj() * w[(tau + i) % len];
            }
            acc.norm()
        })
        .collect()
}

fn c4_correlators() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let m = 1usize << rng.random_range(3..=5);
        let n = 1usize << rng.random_range(2..=3);
        let frame = FrameConfig::new(m, n, 0)?;
        let w = random_grid(m * n, 1, &mut rng).as_slice().to_vec();
        let surface = autocorr2d(&w, &frame)?;
        let expected = naive_autocorr(&w, m, n);
        let got: Vec<Complex64> = (0..m)
            .flat_map(|r| surface.values.row(r).to_vec())
            .collect();
        if got != expected {
            mismatches += 1;
        }
        let l = rng.random_range(1..=m * n);
        let p = random_grid(l, 1, &mut rng).as_slice().to_vec();
        if cross_correlation(&w, &p)?.magnitudes != naive_xcorr(&w, &p) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches against direct evaluation on 100 inputs"),
    )
}

fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
}

fn c5_gradients() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut by_layer: Vec<(&str, Vec<GradReport>)> = [
        "conv1d",
        "batchnorm",
        "relu",
        "maxpool",
        "flatten",
        "linear",
        "resblock",
        "cross-entropy",
    ]
    .iter()
    .map(|&n| (n, Vec::new()))
    .collect();
    let per_group = 40;
    for _ in 0..GRAD_SHAPES {
        let b = rng.random_range(2..=4);
        let c_in = rng.random_range(1..=4);
        let c_out = rng.random_range(1..=5);
        let len = 2 * rng.random_range(2..=8);
        let k = [1, 3, 5, 7][rng.random_range(0..4)];
        let x = random_input(&[b, c_in, len], &mut rng);
        let mut conv = Conv1d::<f64>::new(c_in, c_out, k, &mut rng)?;
        by_layer[0]
            .1
            .push(check_module(&mut conv, &x, per_group, &mut rng)?);
        by_layer[1].1.push(check_module(
            &mut BatchNorm1d::<f64>::new(c_in),
            &x,
            per_group,
            &mut rng,
        )?);
        by_layer[2]
            .1
            .push(check_module(&mut Relu::new(), &x, per_group, &mut rng)?);
        by_layer[3].1.push(check_module(
            &mut MaxPool1d::new(2, 2)?,
            &x,
            per_group,
            &mut rng,
        )?);
        by_layer[4]
            .1
            .push(check_module(&mut Flatten::new(), &x, per_group, &mut rng)?);
        let features = c_in * len;
        let flat = random_input(&[b, features], &mut rng);
        let mut lin = Linear::<f64>::new(features, c_out, &mut rng)?;
        by_layer[5]
            .1
            .push(check_module(&mut lin, &flat, per_group, &mut rng)?);
        let mut res = ResBlock::<f64>::new(c_in, c_out, &mut rng)?;
        by_layer[6]
            .1
            .push(check_module(&mut res, &x, per_group, &mut rng)?);
        let logits = random_input(&[b, c_out + 1], &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..=c_out)).collect();
        by_layer[7].1.push(check_cross_entropy(&logits, &labels)?);
    }
    let summary: Vec<String> = by_layer
        .iter()
        .map(|(name, r)| format!("{name} {:.1e}", worst(r)))
        .collect();
    let pass = by_layer
        .iter()
        .all(|(_, r)| r.len() >= GRAD_SHAPES && worst(r) <= GRAD_TOL);
    outcome(
        pass,
        format!("{GRAD_SHAPES} shapes each, worst: {}", summary.join(", ")),
    )
}

fn windows<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a [f32]> {
    idx.iter()
        .map(|&i| ds.records[i].window.as_slice())
        .collect()
}

fn truths(ds: &Dataset, idx: &[usize]) -> Vec<usize> {
    idx.iter()
        .map(|&i| ds.records[i].theta_wrapped as usize)
        .collect()
}

fn c6_toy_learning(trained: &mut Option<Trained>) -> Result<Outcome> {
    let start = Instant::now();
    let ds = generate_dataset(&DatasetConfig::toy_awgn())?;
    let split = ds.split(0.8);
    let cfg = TrainConfig::toy();
    let quiet = &mut |_: &_| {};
    // Final-epoch weights throughout, so the test set never steers selection.
    let coarse = train_coarse(&ds, &split.train, &split.test, &cfg, quiet)?;
    let fine = train_fine(&ds, &split.train, &split.test, &coarse.last, &cfg, quiet)?;
    let model = TwoStageModel::new(coarse.last, fine.last, ds.m)?;
    let est: Vec<usize> = model
        .predict(&windows(&ds, &split.test))?
        .into_iter()
        .map(|e| e.theta_hat)
        .collect();
    let truth = truths(&ds, &split.test);
    let acc = accuracy(&est, &truth)?;
    let err = rmse(&est, &truth, ds.mn())?;
    let detail = format!(
        "{} train / {} test, {} epochs: accuracy {acc:.3}, RMSE {err:.3} samples, {:.0} s",
        split.train.len(),
        split.test.len(),
        cfg.epochs,
        start.elapsed().as_secs_f64()
    );
    let pass = split.train.len() == 4000 && split.test.len() == 1000 && acc >= 0.90 && err <= 2.0;
    *trained = Some(Trained {
        ds,
        split,
        two_stage: model,
        two_stage_accuracy: acc,
    });
    outcome(pass, detail)
}

fn c7_one_stage(trained: &Option<Trained>) -> Result<Outcome> {
    let Some(t) = trained else {
        return outcome(false, "needs the models of criterion 6");
    };
    let start = Instant::now();
    let r = train_one_stage(
        &t.ds,
        &t.split.train,
        &t.split.test,
        &TrainConfig::toy(),
        &mut |_| {},
    )?;
    let model = OneStageModel::new(r.last, t.ds.m)?;
    let est: Vec<usize> = model
        .predict(&windows(&t.ds, &t.split.test))?
        .into_iter()
        .map(|e| e.theta_hat)
        .collect();
    let acc = accuracy(&est, &truths(&t.ds, &t.split.test))?;
    let (p2, p1) = (t.two_stage.param_count(), model.param_count());
    let gap = (acc - t.two_stage_accuracy).abs();
    outcome(
        gap <= 0.05 && p2 < p1,
        format!(
            "one-stage {acc:.3} vs two-stage {:.3} (gap {:.1} points); params {p2} vs {p1}, {:.0} s",
            t.two_stage_accuracy,
            gap * 100.0,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c8_crosscorr() -> Result<Outcome> {
    let mut cfg = DatasetConfig::default_profile();
    cfg.channels = vec![ChannelProfile::awgn()];
    cfg.preamble = Some(PreambleConfig::default());
    let sync = CrossCorrSync::from_config(&cfg)?;
    let rows = sweep_generated(&[&sync as &dyn Synchronizer], &cfg, &[20.0], 500)?;
    let acc = rows[0].accuracy;
    outcome(
        acc >= 0.99 && rows[0].count == 500,
        format!(
            "accuracy {acc:.3} over {} captures at 20 dB, M=256 N=64",
            rows[0].count
        ),
    )
}

fn c9_determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let mut cfg = DatasetConfig::toy_awgn();
    cfg.samples_per_channel = 600;
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    generate_to_file(&cfg, &a)?;
    generate_to_file(&cfg, &b)?;
    let same_data = std::fs::read(&a)? == std::fs::read(&b)?;

    let ds = otfs_sync::dataset::read_dataset(&a)?;
    let split = ds.split(0.8);
    let train = TrainConfig {
        epochs: 2,
        ..TrainConfig::toy()
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let r = train_coarse(&ds, &split.train, &split.test, &train, &mut |_| {})?;
        let path = dir.path().join(format!("w{run}.bin"));
        save_model(&path, &r.last, &train.meta(ds.m, ds.n, Head::Coarse))?;
        files.push(std::fs::read(&path)?);
    }
    let same_weights = files[0] == files[1];
    outcome(
        same_data && same_weights,
        format!(
            "dataset files identical: {same_data}, weights files identical after two seeded runs: {same_weights}"
        ),
    )
}

fn c10_snr_trend(trained: &Option<Trained>) -> Result<Outcome> {
    let Some(t) = trained else {
        return outcome(false, "needs the models of criterion 6");
    };
    let snrs = [-10.0, 0.0, 10.0, 20.0];
    let rows = sweep_generated(
        &[&t.two_stage as &dyn Synchronizer],
        &DatasetConfig::toy_awgn(),
        &snrs,
        1000,
    )?;
    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let monotone = accs.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let listed: Vec<String> = snrs
        .iter()
        .zip(&accs)
        .map(|(s, a)| format!("{s} dB {a:.3}"))
        .collect();
    outcome(monotone, listed.join(", "))
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |c: u32| selected.is_empty() || selected.contains(&c);
    let mut trained = None;
    let mut failures = 0;
    for c in 1..=10u32 {
        if !wanted(c) {
            continue;
        }
        let start = Instant::now();
        let result = match c {
            1 => c1_params(),
            2 => c2_flops(),
            3 => c3_signal_chain(),
            4 => c4_correlators(),
            5 => c5_gradients(),
            6 => c6_toy_learning(&mut trained),
            7 => c7_one_stage(&trained),
            8 => c8_crosscorr(),
            9 => c9_determinism(),
            _ => c10_snr_trend(&trained),
        };
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {c:>2}: {} ({detail}) [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
