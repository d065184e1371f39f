use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    BatchNorm1d, Conv1d, Flatten, Linear, MaxPool1d, Relu, ResBlock, TensorKind, Visitor,
    VisitorMut,
};
use super::spec::{LayerSpec, ModelSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Anything with a training-mode forward pass and a matching backward pass.
pub trait Module<S: Scalar> {
    fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>>;
    fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>>;
    fn visit_mut(&mut self, _prefix: &str, _f: &mut VisitorMut<'_, S>) {}
}

macro_rules! module_with_params {
    ($ty:ident) => {
        impl<S: Scalar> Module<S> for $ty<S> {
            fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
                $ty::forward(self, x)
            }
            fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
                $ty::backward(self, dy)
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, S>) {
                $ty::visit_mut(self, prefix, f)
            }
        }
    };
}

macro_rules! module_stateless {
    ($ty:ident) => {
        impl<S: Scalar> Module<S> for $ty {
            fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
                $ty::forward(self, x)
            }
            fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
                $ty::backward(self, dy)
            }
        }
    };
}

module_with_params!(Conv1d);
module_with_params!(BatchNorm1d);
module_with_params!(Linear);
module_with_params!(ResBlock);
module_stateless!(Relu);
module_stateless!(MaxPool1d);
module_stateless!(Flatten);

#[derive(Debug, Clone)]
pub enum Layer<S: Scalar> {
    Conv(Conv1d<S>),
    BatchNorm(BatchNorm1d<S>),
    Relu(Relu),
    MaxPool(MaxPool1d),
    Res(ResBlock<S>),
    Flatten(Flatten),
    Linear(Linear<S>),
}

impl<S: Scalar> Layer<S> {
    fn build(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv1d {
                c_in,
                c_out,
                kernel,
            } => Layer::Conv(Conv1d::new(c_in, c_out, kernel, rng)?),
            LayerSpec::BatchNorm1d { channels } => Layer::BatchNorm(BatchNorm1d::new(channels)),
            LayerSpec::Relu => Layer::Relu(Relu::new()),
            LayerSpec::MaxPool1d { kernel, stride } => {
                Layer::MaxPool(MaxPool1d::new(kernel, stride)?)
            }
            LayerSpec::ResBlock { c_in, c_out } => Layer::Res(ResBlock::new(c_in, c_out, rng)?),
            LayerSpec::Flatten => Layer::Flatten(Flatten::new()),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Layer::Linear(Linear::new(in_features, out_features, rng)?),
        })
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Res(l) => l.infer(x),
            Layer::Flatten(l) => l.infer(x),
            Layer::Linear(l) => l.infer(x),
        }
    }

    fn as_module(&mut self) -> &mut dyn Module<S> {
        match self {
            Layer::Conv(l) => l,
            Layer::BatchNorm(l) => l,
            Layer::Relu(l) => l,
            Layer::MaxPool(l) => l,
            Layer::Res(l) => l,
            Layer::Flatten(l) => l,
            Layer::Linear(l) => l,
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, S>) {
        match self {
            Layer::Conv(l) => l.visit(prefix, f),
            Layer::BatchNorm(l) => l.visit(prefix, f),
            Layer::Res(l) => l.visit(prefix, f),
            Layer::Linear(l) => l.visit(prefix, f),
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Flatten(_) => {}
        }
    }
}

/// A [`ModelSpec`] instantiated with weights.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    spec: ModelSpec,
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> Network<S> {
    /// Builds the network and draws its initial weights from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.output_features()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| Layer::build(l, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let (_, c, l) = x.dims3()?;
        if c != self.spec.in_channels || l != self.spec.in_len {
            return Err(Error::shape(
                format!("[B, {}, {}]", self.spec.in_channels, self.spec.in_len),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Evaluation-mode logits. Uses batch-norm running statistics and keeps
    /// no state, so it may be called from several threads at once.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, kind, t| {
            if kind == TensorKind::Param {
                t.zero_grad()
            }
        });
    }

    pub fn visit_params(&self, f: &mut Visitor<'_, S>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("layers.{i}"), f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut VisitorMut<'_, S>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.as_module().visit_mut(&format!("layers.{i}"), f);
        }
    }

    pub fn param_count(&self) -> u64 {
        let mut total = 0u64;
        self.visit_params(&mut |_, kind, t| {
            if kind == TensorKind::Param {
                total += t.len() as u64;
            }
        });
        total
    }

    /// Same architecture and values in another element type.
    pub fn cast<T: Scalar>(&self) -> Result<Network<T>> {
        let mut values = Vec::new();
        self.visit_params(&mut |_, _, t| values.push(t.cast::<T>()));
        let mut out = Network::<T>::new(self.spec.clone(), 0)?;
        let mut it = values.into_iter();
        out.visit_params_mut(&mut |_, _, t| {
            *t = it.next().expect("identical layout");
        });
        Ok(out)
    }
}

impl<S: Scalar> Module<S> for Network<S> {
    fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.as_module().forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let mut d = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            d = layer.as_module().backward(&d)?;
        }
        Ok(d)
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut VisitorMut<'_, S>) {
        self.visit_params_mut(f)
    }
}
