//! Declarative model description plus parameter and FLOP accounting.

use serde::{Deserialize, Serialize};

use super::layers::RES_KERNELS;
use crate::error::{Error, Result};

/// Classification target of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Predicts `theta_t` in `[0, N)`.
    Coarse,
    /// Predicts `theta_d` in `[0, M)`.
    Fine,
    /// Predicts the full offset in `[0, MN)`.
    #[serde(rename = "onestage")]
    OneStage,
}

impl Head {
    pub fn classes(self, m: usize, n: usize) -> usize {
        match self {
            Head::Coarse => n,
            Head::Fine => m,
            Head::OneStage => m * n,
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Head::Coarse => 0,
            Head::Fine => 1,
            Head::OneStage => 2,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Head::Coarse),
            1 => Ok(Head::Fine),
            2 => Ok(Head::OneStage),
            other => Err(Error::Format(format!("unknown head code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Coarse => "coarse",
            Head::Fine => "fine",
            Head::OneStage => "onestage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
    },
    BatchNorm1d {
        channels: usize,
    },
    Relu,
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    ResBlock {
        c_in: usize,
        c_out: usize,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

/// Activation shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sequence { channels: usize, len: usize },
    Features(usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Sequence { channels, len } => channels * len,
            Shape::Features(f) => f,
        }
    }
}

/// Ordered layer list applied to `[B, in_channels, in_len]` inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub in_len: usize,
    pub layers: Vec<LayerSpec>,
}

/// Cost of one layer for a single input sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Normalization, activation, pooling comparison and residual-add
    /// operations, one per element touched.
    pub elementwise: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    /// `2 * macs + elementwise`.
    pub flops: u64,
}

impl FlopReport {
    pub fn combine(reports: &[&FlopReport]) -> FlopReport {
        let mut out = FlopReport {
            layers: Vec::new(),
            params: 0,
            macs: 0,
            elementwise: 0,
            flops: 0,
        };
        for r in reports {
            out.layers.extend(r.layers.iter().cloned());
            out.params += r.params;
            out.macs += r.macs;
            out.elementwise += r.elementwise;
            out.flops += r.flops;
        }
        out
    }
}

impl ModelSpec {
    pub fn input_shape(&self) -> Shape {
        Shape::Sequence {
            channels: self.in_channels,
            len: self.in_len,
        }
    }

    /// Output shape after every layer; fails on the first inconsistency.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = step_shape(i, layer, cur)?;
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_features(&self) -> Result<usize> {
        match self.shapes()?.last() {
            Some(Shape::Features(f)) => Ok(*f),
            _ => Err(Error::Config("model must end in a feature vector".into())),
        }
    }

    pub fn cost(&self) -> Result<FlopReport> {
        let mut cur = self.input_shape();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = step_shape(i, layer, cur)?;
            layers.push(layer_cost(i, layer, cur, next));
            cur = next;
        }
        let params = layers.iter().map(|c| c.params).sum();
        let macs: u64 = layers.iter().map(|c| c.macs).sum();
        let elementwise: u64 = layers.iter().map(|c| c.elementwise).sum();
        Ok(FlopReport {
            layers,
            params,
            macs,
            elementwise,
            flops: 2 * macs + elementwise,
        })
    }
}

fn seq(i: usize, s: Shape) -> Result<(usize, usize)> {
    match s {
        Shape::Sequence { channels, len } => Ok((channels, len)),
        Shape::Features(_) => Err(Error::Config(format!("layer {i} expects a sequence input"))),
    }
}

fn check_channels(i: usize, have: usize, want: usize) -> Result<()> {
    if have != want {
        return Err(Error::Config(format!(
            "layer {i} expects {want} channels, got {have}"
        )));
    }
    Ok(())
}

fn step_shape(i: usize, layer: &LayerSpec, s: Shape) -> Result<Shape> {
    match *layer {
        LayerSpec::Conv1d {
            c_in,
            c_out,
            kernel,
        } => {
            let (c, l) = seq(i, s)?;
            check_channels(i, c, c_in)?;
            if kernel % 2 == 0 || c_out == 0 {
                return Err(Error::Config(format!("layer {i}: bad conv geometry")));
            }
            Ok(Shape::Sequence {
                channels: c_out,
                len: l,
            })
        }
        LayerSpec::BatchNorm1d { channels } => {
            let (c, _) = seq(i, s)?;
            check_channels(i, c, channels)?;
            Ok(s)
        }
        LayerSpec::Relu => Ok(s),
        LayerSpec::MaxPool1d { kernel, stride } => {
            let (c, l) = seq(i, s)?;
            if kernel == 0 || stride == 0 || l < kernel {
                return Err(Error::Config(format!("layer {i}: bad pooling geometry")));
            }
            Ok(Shape::Sequence {
                channels: c,
                len: (l - kernel) / stride + 1,
            })
        }
        LayerSpec::ResBlock { c_in, c_out } => {
            let (c, l) = seq(i, s)?;
            check_channels(i, c, c_in)?;
            if c_out == 0 {
                return Err(Error::Config(format!("layer {i}: empty residual block")));
            }
            Ok(Shape::Sequence {
                channels: c_out,
                len: l,
            })
        }
        LayerSpec::Flatten => Ok(Shape::Features(s.numel())),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let f = match s {
                Shape::Features(f) => f,
                Shape::Sequence { .. } => {
                    return Err(Error::Config(format!(
                        "layer {i}: linear needs a flat input"
                    )))
                }
            };
            if f != in_features || out_features == 0 {
                return Err(Error::Config(format!(
                    "layer {i}: linear expects {in_features} features, got {f}"
                )));
            }
            Ok(Shape::Features(out_features))
        }
    }
}

fn conv_cost(c_in: usize, c_out: usize, k: usize, len: usize) -> (u64, u64) {
    let params = (c_out * c_in * k + c_out) as u64;
    (params, (c_out * c_in * k * len) as u64)
}

fn layer_cost(i: usize, layer: &LayerSpec, input: Shape, output: Shape) -> LayerCost {
    let (params, macs, elementwise, name) = match *layer {
        LayerSpec::Conv1d {
            c_in,
            c_out,
            kernel,
        } => {
            let (p, m) = conv_cost(c_in, c_out, kernel, output_len(output));
            (p, m, 0, format!("conv1d_{c_in}x{c_out}k{kernel}"))
        }
        LayerSpec::BatchNorm1d { channels } => (
            (2 * channels) as u64,
            0,
            output.numel() as u64,
            format!("batchnorm_{channels}"),
        ),
        LayerSpec::Relu => (0, 0, output.numel() as u64, "relu".into()),
        LayerSpec::MaxPool1d { kernel, stride } => (
            0,
            0,
            input.numel() as u64,
            format!("maxpool_{kernel}_{stride}"),
        ),
        LayerSpec::ResBlock { c_in, c_out } => {
            let len = output_len(output);
            let mut params = 0;
            let mut macs = 0;
            let mut ch = c_in;
            for k in RES_KERNELS {
                let (p, m) = conv_cost(ch, c_out, k, len);
                params += p + 2 * c_out as u64;
                macs += m;
                ch = c_out;
            }
            let mut norms = 3;
            if c_in != c_out {
                let (p, m) = conv_cost(c_in, c_out, 1, len);
                params += p + 2 * c_out as u64;
                macs += m;
                norms += 1;
            }
            let per_map = (c_out * len) as u64;
            // norms, three ReLUs, one residual add
            let elementwise = per_map * (norms + 3 + 1);
            (
                params,
                macs,
                elementwise,
                format!("resblock_{c_in}x{c_out}"),
            )
        }
        LayerSpec::Flatten => (0, 0, 0, "flatten".into()),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => (
            (in_features * out_features + out_features) as u64,
            (in_features * out_features) as u64,
            0,
            format!("linear_{in_features}x{out_features}"),
        ),
    };
    LayerCost {
        name: format!("{i}:{name}"),
        params,
        macs,
        elementwise,
    }
}

fn output_len(s: Shape) -> usize {
    match s {
        Shape::Sequence { len, .. } => len,
        Shape::Features(_) => 1,
    }
}

/// Residual synchronizer: three residual blocks (2->4->16->16 channels),
/// each followed by 2x max pooling, then a linear classifier.
pub fn build_sync_model(m: usize, n: usize, head: Head) -> Result<ModelSpec> {
    let mn = m * n;
    if mn == 0 || mn % 8 != 0 {
        return Err(Error::Config(format!(
            "MN = {mn} must be a positive multiple of 8"
        )));
    }
    let pool = LayerSpec::MaxPool1d {
        kernel: 2,
        stride: 2,
    };
    Ok(ModelSpec {
        in_channels: 2,
        in_len: mn,
        layers: vec![
            LayerSpec::ResBlock { c_in: 2, c_out: 4 },
            pool,
            LayerSpec::ResBlock { c_in: 4, c_out: 16 },
            pool,
            LayerSpec::ResBlock {
                c_in: 16,
                c_out: 16,
            },
            pool,
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: 16 * mn / 8,
                out_features: head.classes(m, n),
            },
        ],
    })
}

pub fn count_params(spec: &ModelSpec) -> Result<u64> {
    Ok(spec.cost()?.params)
}

/// Per-sample forward cost of a model.
pub fn count_flops(spec: &ModelSpec) -> Result<FlopReport> {
    spec.cost()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_parameter_counts() {
        let spec = build_sync_model(256, 64, Head::Coarse).unwrap();
        let report = spec.cost().unwrap();
        let params: Vec<u64> = report.layers.iter().map(|l| l.params).collect();
        assert_eq!(params[0], 240);
        assert_eq!(params[2], 2_752);
        assert_eq!(params[4], 3_984);
        assert_eq!(params[7], 32_768 * 64 + 64);
    }

    #[test]
    fn default_two_stage_totals() {
        let coarse = build_sync_model(256, 64, Head::Coarse)
            .unwrap()
            .cost()
            .unwrap();
        let fine = build_sync_model(256, 64, Head::Fine)
            .unwrap()
            .cost()
            .unwrap();
        assert_eq!(coarse.params + fine.params, 10_500_032);
        assert_eq!(coarse.macs, 39_845_888 + 2_097_152);
        assert_eq!(fine.macs, 39_845_888 + 8_388_608);
        assert_eq!(coarse.elementwise, 2_293_760);
        assert_eq!(coarse.flops + fine.flops, 184_942_592);
    }

    #[test]
    fn shapes_follow_pooling() {
        let spec = build_sync_model(32, 8, Head::OneStage).unwrap();
        let shapes = spec.shapes().unwrap();
        assert_eq!(
            shapes[1],
            Shape::Sequence {
                channels: 4,
                len: 128
            }
        );
        assert_eq!(
            shapes[5],
            Shape::Sequence {
                channels: 16,
                len: 32
            }
        );
        assert_eq!(*shapes.last().unwrap(), Shape::Features(256));
        assert_eq!(spec.output_features().unwrap(), 256);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        assert!(build_sync_model(3, 2, Head::Fine).is_err());
        let mut spec = build_sync_model(32, 8, Head::Fine).unwrap();
        spec.layers[2] = LayerSpec::ResBlock { c_in: 5, c_out: 16 };
        assert!(matches!(spec.cost(), Err(Error::Config(_))));
        let mut spec = build_sync_model(32, 8, Head::Fine).unwrap();
        spec.layers.pop();
        assert!(spec.output_features().is_ok());
        spec.layers.pop();
        assert!(spec.output_features().is_err());
    }

    #[test]
    fn head_codes_round_trip() {
        for h in [Head::Coarse, Head::Fine, Head::OneStage] {
            assert_eq!(Head::from_code(h.code()).unwrap(), h);
        }
        assert!(Head::from_code(9).is_err());
        assert_eq!(Head::OneStage.classes(32, 8), 256);
    }
}
