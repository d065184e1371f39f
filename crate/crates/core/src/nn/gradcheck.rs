//! Central-difference gradient checks for [`Module`]s in `f64`.

use rand::seq::index::sample;
use rand::Rng;

use super::layers::TensorKind;
use super::loss::softmax_cross_entropy;
use super::network::Module;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

/// Gradient norms below this are compared in absolute terms. A bias feeding
/// batch norm has an exactly zero gradient, which would otherwise turn pure
/// round-off into a relative error of one.
pub const NORM_FLOOR: f64 = 1e-3;

/// Worst relative error `|a - n| / max(|a|, |n|, NORM_FLOOR)` over the sampled groups,
/// where each group (the input or one parameter tensor) is compared as a
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub coordinates: usize,
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

fn probe_loss<M: Module<f64>>(module: &mut M, x: &Tensor<f64>, r: &[f64]) -> Result<f64> {
    let y = module.forward(x)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

fn pick<R: Rng + ?Sized>(len: usize, max: usize, rng: &mut R) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        sample(rng, len, max).into_vec()
    }
}

/// Checks input and parameter gradients of `L = sum(R * f(x))` for a random
/// projection `R`, sampling at most `per_group` coordinates per tensor.
pub fn check_module<M: Module<f64>, R: Rng + ?Sized>(
    module: &mut M,
    x: &Tensor<f64>,
    per_group: usize,
    rng: &mut R,
) -> Result<GradReport> {
    let y = module.forward(x)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Tensor::from_vec(y.shape(), r.clone())?;

    module.visit_mut("", &mut |_, kind, t| {
        if kind == TensorKind::Param {
            t.zero_grad()
        }
    });
    module.forward(x)?;
    let dx = module.backward(&dy)?;

    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();

    let idx = pick(x.len(), per_group, rng);
    let mut numeric = Vec::with_capacity(idx.len());
    let mut xp = x.clone();
    for &i in &idx {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let plus = probe_loss(module, &xp, &r)?;
        xp.data_mut()[i] = orig - FD_STEP;
        let minus = probe_loss(module, &xp, &r)?;
        xp.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    groups.push((
        "input".into(),
        idx.iter().map(|&i| dx.data()[i]).collect(),
        numeric,
    ));

    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit_mut("", &mut |name, kind, t| {
        if kind == TensorKind::Param {
            params.push((
                name.to_string(),
                t.grad().map(|g| g.to_vec()).unwrap_or_default(),
            ));
        }
    });
    for (p_idx, (name, analytic)) in params.into_iter().enumerate() {
        let coords = pick(analytic.len(), per_group, rng);
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let eval = |delta: f64, module: &mut M| -> Result<f64> {
                nudge(module, p_idx, c, delta);
                let l = probe_loss(module, x, &r);
                nudge(module, p_idx, c, -delta);
                l
            };
            let plus = eval(FD_STEP, module)?;
            let minus = eval(-FD_STEP, module)?;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        groups.push((name, coords.iter().map(|&c| analytic[c]).collect(), numeric));
    }

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    for (name, a, n) in groups {
        report.coordinates += a.len();
        let e = rel_error(&a, &n);
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = name;
        }
    }
    Ok(report)
}

fn nudge<M: Module<f64>>(module: &mut M, target: usize, coord: usize, delta: f64) {
    let mut i = 0;
    module.visit_mut("", &mut |_, kind, t| {
        if kind == TensorKind::Param {
            if i == target {
                t.data_mut()[coord] += delta;
            }
            i += 1;
        }
    });
}

/// Checks the logits gradient of the mean softmax cross-entropy.
pub fn check_cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> Result<GradReport> {
    let (_, grad) = softmax_cross_entropy(logits, labels)?;
    let mut numeric = Vec::with_capacity(logits.len());
    let mut z = logits.clone();
    for i in 0..z.len() {
        let orig = z.data()[i];
        z.data_mut()[i] = orig + FD_STEP;
        let plus = softmax_cross_entropy(&z, labels)?.0;
        z.data_mut()[i] = orig - FD_STEP;
        let minus = softmax_cross_entropy(&z, labels)?.0;
        z.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(GradReport {
        max_rel_error: rel_error(grad.data(), &numeric),
        worst: "logits".into(),
        coordinates: numeric.len(),
    })
}

/// Standard-normal test input of the given shape.
pub fn random_input<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}
