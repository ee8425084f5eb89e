use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::ops::Activation;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    },
    Conv1x1 {
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    },
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
        has_bias: bool,
    },
    Elu,
    Relu,
    Sigmoid,
    AvgPool2x2,
    UpsampleNn2x,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            has_bias: true,
        }
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv1x1 {
            in_channels,
            out_channels,
            has_bias: true,
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::FullyConnected {
            in_dim,
            out_dim,
            has_bias: true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Conv1x1 { .. } => "conv1x1",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Elu => "elu",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::AvgPool2x2 => "avg_pool2x2",
            LayerSpec::UpsampleNn2x => "upsample_nn2x",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Elu => Some(Activation::Elu),
            LayerSpec::Relu => Some(Activation::Relu),
            LayerSpec::Sigmoid => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    /// Weight shape, bias shape and (fan_in, fan_out) for parameterized layers.
    pub fn param_shapes(&self) -> Option<ParamShapes> {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                has_bias,
            } => Some((
                vec![out_channels, in_channels, 3, 3],
                has_bias.then(|| vec![out_channels]),
                (in_channels * 9, out_channels * 9),
            )),
            LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
                has_bias,
            } => Some((
                vec![out_channels, in_channels, 1, 1],
                has_bias.then(|| vec![out_channels]),
                (in_channels, out_channels),
            )),
            LayerSpec::FullyConnected {
                in_dim,
                out_dim,
                has_bias,
            } => Some((
                vec![out_dim, in_dim],
                has_bias.then(|| vec![out_dim]),
                (in_dim, out_dim),
            )),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |why: String| Err(Error::Shape(format!("{}: {why}", self.kind_name())));
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            }
            | LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
                ..
            } => match *input {
                [c, h, w] if c == in_channels => Ok(vec![out_channels, h, w]),
                _ => fail(format!("expected [{in_channels}, H, W], got {input:?}")),
            },
            LayerSpec::FullyConnected {
                in_dim, out_dim, ..
            } => match *input {
                [n] if n == in_dim => Ok(vec![out_dim]),
                _ => fail(format!("expected [{in_dim}], got {input:?}")),
            },
            LayerSpec::Elu | LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::AvgPool2x2 => match *input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => fail(format!("expected [C, even H, even W], got {input:?}")),
            },
            LayerSpec::UpsampleNn2x => match *input {
                [c, h, w] => Ok(vec![c, 2 * h, 2 * w]),
                _ => fail(format!("expected [C, H, W], got {input:?}")),
            },
            LayerSpec::Reshape { ref shape } => {
                if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(shape.clone())
                } else {
                    fail(format!("cannot reshape {input:?} to {shape:?}"))
                }
            }
        }
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTable<T = f32>(BTreeMap<String, Tensor<T>>);

impl<T: Element> ParamTable<T> {
    pub fn new() -> Self {
        ParamTable(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.0.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.0
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        ParamTable(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        )
    }

    pub fn num_values(&self) -> usize {
        self.0.values().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, key sets must agree.
    pub fn add_scaled(&mut self, other: &ParamTable<T>, scale: T) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Shape("parameter tables differ in size".into()));
        }
        for (k, dst) in self.0.iter_mut() {
            let src = other
                .0
                .get(k)
                .ok_or_else(|| Error::Shape(format!("missing gradient for {k}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Shape(format!("shape mismatch for {k}")));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * *s;
            }
        }
        Ok(())
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParamTable<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamTable(iter.into_iter().collect())
    }
}

/// Parameter initialisation rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    GlorotUniform,
    Zeros,
}

/// Weight shape, optional bias shape, (fan_in, fan_out).
pub type ParamShapes = (Vec<usize>, Option<Vec<usize>>, (usize, usize));

/// A sequential network: ordered layers plus their parameters.
#[derive(Debug, Clone)]
pub struct NetworkSpec<T = f32> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: ParamTable<T>,
    shapes: Vec<Vec<usize>>,
    revision: u64,
}

impl<T: Element> PartialEq for NetworkSpec<T> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.params == other.params
    }
}

/// Output of [`NetworkSpec::forward`]: every intermediate activation.
#[derive(Debug, Clone)]
pub struct ActivationTrace<T = f32> {
    revision: u64,
    batch: usize,
    batched: bool,
    acts: Vec<Vec<T>>,
    out_shape: Vec<usize>,
}

impl<T: Element> ActivationTrace<T> {
    pub fn output(&self) -> Tensor<T> {
        Tensor::from_parts(self.out_shape.clone(), self.acts.last().unwrap().clone())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output_data(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardMode {
    pub params: bool,
    pub input: bool,
}

impl BackwardMode {
    pub const ALL: BackwardMode = BackwardMode {
        params: true,
        input: true,
    };
    pub const PARAMS: BackwardMode = BackwardMode {
        params: true,
        input: false,
    };
    pub const INPUT: BackwardMode = BackwardMode {
        params: false,
        input: true,
    };
}

#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub params: ParamTable<T>,
    pub input: Option<Tensor<T>>,
}

impl<T: Element> NetworkSpec<T> {
    pub fn param_key(name: &str, layer: usize, part: &str) -> String {
        format!("{name}.{layer:02}.{part}")
    }

    /// Builds a network, initialising parameters with `init`.
    pub fn build(
        name: &str,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParamTable::new();
        for (i, layer) in layers.iter().enumerate() {
            if let Some((wshape, bshape, (fan_in, fan_out))) = layer.param_shapes() {
                let n: usize = wshape.iter().product();
                let data = match init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::GlorotUniform => {
                        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n)
                            .map(|_| T::from_f64_lossy(rng.gen_range(-s..=s)))
                            .collect()
                    }
                };
                params.insert(
                    Self::param_key(name, i, "weight"),
                    Tensor::new(wshape, data)?,
                );
                if let Some(bshape) = bshape {
                    params.insert(Self::param_key(name, i, "bias"), Tensor::zeros(&bshape));
                }
            }
        }
        Self::new(name, input_shape, layers, params)
    }

    /// Assembles a network from explicit parameters, validating every
    /// shape contract.
    pub fn new(
        name: &str,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: ParamTable<T>,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut expected = 0;
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| e.context(format!("network {name}, layer {i}")))?;
            shapes.push(next);
            if let Some((wshape, bshape, _)) = layer.param_shapes() {
                let wk = Self::param_key(name, i, "weight");
                match params.get(&wk) {
                    Some(t) if t.shape() == wshape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Shape(format!(
                            "{wk}: expected {wshape:?}, found {:?}",
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Shape(format!("missing parameter {wk}"))),
                }
                expected += 1;
                if let Some(bshape) = bshape {
                    let bk = Self::param_key(name, i, "bias");
                    match params.get(&bk) {
                        Some(t) if t.shape() == bshape.as_slice() => {}
                        _ => return Err(Error::Shape(format!("missing or misshapen {bk}"))),
                    }
                    expected += 1;
                }
            }
        }
        if expected != params.len() {
            return Err(Error::Shape(format!(
                "network {name} has {} parameter tensors, layers need {expected}",
                params.len()
            )));
        }
        Ok(NetworkSpec {
            name: name.to_string(),
            input_shape,
            layers,
            params,
            shapes,
            revision: next_revision(),
        })
    }

    /// Sequential composition `second ∘ first`, renamed to `name`.
    pub fn chain(name: &str, first: &NetworkSpec<T>, second: &NetworkSpec<T>) -> Result<Self> {
        let offset = first.layers.len();
        let mut layers = first.layers.clone();
        layers.extend(second.layers.iter().cloned());
        let mut params = ParamTable::new();
        for (net, base) in [(first, 0), (second, offset)] {
            for (i, layer) in net.layers.iter().enumerate() {
                if layer.param_shapes().is_some() {
                    for part in ["weight", "bias"] {
                        if let Some(t) = net.params.get(&Self::param_key(&net.name, i, part)) {
                            params.insert(Self::param_key(name, base + i, part), t.clone());
                        }
                    }
                }
            }
        }
        Self::new(name, first.input_shape.clone(), layers, params)
    }

    pub fn renamed(&self, name: &str) -> Result<Self> {
        let mut params = ParamTable::new();
        let prefix = format!("{}.", self.name);
        for (k, v) in self.params.iter() {
            params.insert(format!("{name}.{}", &k[prefix.len()..]), v.clone());
        }
        Self::new(name, self.input_shape.clone(), self.layers.clone(), params)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Per-layer output shapes; entry 0 is the input shape.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &ParamTable<T> {
        &self.params
    }

    /// Mutable access to parameters. Shapes must not be changed; any
    /// trace recorded before the call becomes stale.
    pub fn params_mut(&mut self) -> &mut ParamTable<T> {
        self.revision = next_revision();
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamTable<T>) -> Result<()> {
        if params.shapes() != self.params.shapes() {
            return Err(Error::Shape(format!(
                "parameter manifest does not match network {}",
                self.name
            )));
        }
        self.params = params;
        self.revision = next_revision();
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    fn batch_of(&self, shape: &[usize]) -> Result<(usize, bool)> {
        if shape == self.input_shape.as_slice() {
            Ok((1, false))
        } else if shape.len() == self.input_shape.len() + 1 && shape[1..] == self.input_shape[..] {
            Ok((shape[0], true))
        } else {
            Err(Error::Shape(format!(
                "network {} expects input {:?} (optionally batched), got {shape:?}",
                self.name, self.input_shape
            )))
        }
    }

    fn weight(&self, i: usize) -> &[T] {
        self.params
            .get(&Self::param_key(&self.name, i, "weight"))
            .expect("validated at construction")
            .data()
    }

    fn bias(&self, i: usize) -> Option<&[T]> {
        self.params
            .get(&Self::param_key(&self.name, i, "bias"))
            .map(|t| t.data())
    }

    /// Evaluates the network on one sample (shape = input shape) or a
    /// batch (leading batch axis), recording every activation.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ActivationTrace<T>> {
        let (batch, batched) = self.batch_of(x.shape())?;
        x.ensure_finite(&format!("input to network {}", self.name))?;
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.data().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out = self.layer_forward(i, layer, batch, input);
            acts.push(out);
        }
        let mut out_shape = self.output_shape().to_vec();
        if batched {
            out_shape.insert(0, batch);
        }
        Ok(ActivationTrace {
            revision: self.revision,
            batch,
            batched,
            acts,
            out_shape,
        })
    }

    /// Forward pass that keeps only the output.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, batched) = self.batch_of(x.shape())?;
        x.ensure_finite(&format!("input to network {}", self.name))?;
        let mut cur = x.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = self.layer_forward(i, layer, batch, &cur);
        }
        let mut shape = self.output_shape().to_vec();
        if batched {
            shape.insert(0, batch);
        }
        Ok(Tensor::from_parts(shape, cur))
    }

    fn layer_forward(&self, i: usize, layer: &LayerSpec, batch: usize, input: &[T]) -> Vec<T> {
        let in_shape = &self.shapes[i];
        let out_len = batch * self.shapes[i + 1].iter().product::<usize>();
        match *layer {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            }
            | LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
                ..
            } => {
                let g = ConvGeom {
                    in_channels,
                    out_channels,
                    height: in_shape[1],
                    width: in_shape[2],
                    kernel: if matches!(layer, LayerSpec::Conv3x3 { .. }) {
                        3
                    } else {
                        1
                    },
                };
                let mut out = vec![T::zero(); out_len];
                kernels::conv_forward(&g, batch, input, self.weight(i), self.bias(i), &mut out);
                out
            }
            LayerSpec::FullyConnected {
                in_dim, out_dim, ..
            } => {
                let mut out = vec![T::zero(); out_len];
                kernels::fc_forward(
                    batch,
                    in_dim,
                    out_dim,
                    input,
                    self.weight(i),
                    self.bias(i),
                    &mut out,
                );
                out
            }
            LayerSpec::Elu => {
                let mut out = vec![T::zero(); out_len];
                T::elu_into(input, &mut out);
                out
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => {
                let act = layer.activation().unwrap();
                input.iter().map(|&v| act.eval(v)).collect()
            }
            LayerSpec::AvgPool2x2 => {
                let mut out = vec![T::zero(); out_len];
                kernels::avg_pool_forward(
                    batch * in_shape[0],
                    in_shape[1],
                    in_shape[2],
                    input,
                    &mut out,
                );
                out
            }
            LayerSpec::UpsampleNn2x => {
                let mut out = vec![T::zero(); out_len];
                kernels::upsample_forward(
                    batch * in_shape[0],
                    in_shape[1],
                    in_shape[2],
                    input,
                    &mut out,
                );
                out
            }
            LayerSpec::Reshape { .. } => input.to_vec(),
        }
    }

    pub fn backward(
        &self,
        trace: &ActivationTrace<T>,
        out_grad: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        self.backward_with(trace, out_grad, BackwardMode::ALL)
    }

    /// Reverse-mode pass. Parameter gradients are summed over the batch in
    /// sample order.
    pub fn backward_with(
        &self,
        trace: &ActivationTrace<T>,
        out_grad: &Tensor<T>,
        mode: BackwardMode,
    ) -> Result<Gradients<T>> {
        if trace.revision != self.revision || trace.acts.len() != self.layers.len() + 1 {
            return Err(Error::Trace(format!(
                "trace was recorded on a different or since-modified network (expected {})",
                self.name
            )));
        }
        if out_grad.shape() != trace.out_shape.as_slice() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                out_grad.shape(),
                trace.out_shape
            )));
        }
        out_grad.ensure_finite("output gradient")?;
        let batch = trace.batch;
        let mut grads = if mode.params {
            self.params.zeros_like()
        } else {
            ParamTable::new()
        };
        let mut g = out_grad.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0 || mode.input;
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let in_shape = &self.shapes[i];
            let in_len = batch * in_shape.iter().product::<usize>();
            let mut dx = if need_dx {
                vec![T::zero(); in_len]
            } else {
                Vec::new()
            };
            match *layer {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    ..
                }
                | LayerSpec::Conv1x1 {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let geom = ConvGeom {
                        in_channels,
                        out_channels,
                        height: in_shape[1],
                        width: in_shape[2],
                        kernel: if matches!(layer, LayerSpec::Conv3x3 { .. }) {
                            3
                        } else {
                            1
                        },
                    };
                    let (dw, db) = self.grad_slots(&mut grads, i, mode.params);
                    kernels::conv_backward(
                        &geom,
                        batch,
                        x,
                        self.weight(i),
                        &g,
                        dw,
                        db,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                }
                LayerSpec::FullyConnected {
                    in_dim, out_dim, ..
                } => {
                    let (dw, db) = self.grad_slots(&mut grads, i, mode.params);
                    kernels::fc_backward(
                        batch,
                        in_dim,
                        out_dim,
                        x,
                        self.weight(i),
                        &g,
                        dw,
                        db,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                }
                LayerSpec::Elu | LayerSpec::Relu | LayerSpec::Sigmoid => {
                    if need_dx {
                        let act = layer.activation().unwrap();
                        for ((d, &gy), &yy) in dx.iter_mut().zip(&g).zip(y) {
                            *d = gy * act.grad_from_output(yy);
                        }
                    }
                }
                LayerSpec::AvgPool2x2 => {
                    if need_dx {
                        kernels::avg_pool_backward(
                            batch * in_shape[0],
                            in_shape[1],
                            in_shape[2],
                            &g,
                            &mut dx,
                        );
                    }
                }
                LayerSpec::UpsampleNn2x => {
                    if need_dx {
                        kernels::upsample_backward(
                            batch * in_shape[0],
                            in_shape[1],
                            in_shape[2],
                            &g,
                            &mut dx,
                        );
                    }
                }
                LayerSpec::Reshape { .. } => {
                    if need_dx {
                        dx = std::mem::take(&mut g);
                    }
                }
            }
            g = dx;
        }
        let input = mode.input.then(|| {
            let mut shape = self.input_shape.clone();
            if trace.batched {
                shape.insert(0, batch);
            }
            Tensor::from_parts(shape, g)
        });
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    fn grad_slots<'a>(
        &self,
        grads: &'a mut ParamTable<T>,
        i: usize,
        want: bool,
    ) -> (Option<&'a mut [T]>, Option<&'a mut [T]>) {
        if !want {
            return (None, None);
        }
        let wk = Self::param_key(&self.name, i, "weight");
        let bk = Self::param_key(&self.name, i, "bias");
        // Two distinct keys of the same map: split the borrow by iterating.
        let mut dw = None;
        let mut db = None;
        for (k, t) in grads.iter_mut() {
            if *k == wk {
                dw = Some(t.data_mut());
            } else if *k == bk {
                db = Some(t.data_mut());
            }
        }
        (dw, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn empty_network_is_identity() {
        let net =
            NetworkSpec::<f64>::build("id", vec![3], vec![], Init::Zeros, &mut rng()).unwrap();
        let x = Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap();
        let tr = net.forward(&x).unwrap();
        assert_eq!(tr.output(), x);
        let g = net.backward(&tr, &x).unwrap();
        assert_eq!(g.input.unwrap(), x);
        assert!(g.params.is_empty());
    }

    #[test]
    fn single_relu() {
        let net =
            NetworkSpec::<f64>::build("r", vec![2], vec![LayerSpec::Relu], Init::Zeros, &mut rng())
                .unwrap();
        let x = Tensor::from_f64(vec![2], &[-1.0, 2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().output().data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let net = NetworkSpec::<f64>::build(
            "s",
            vec![1],
            vec![LayerSpec::Sigmoid],
            Init::Zeros,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::scalar(0.0);
        let tr = net.forward(&x).unwrap();
        let g = net.backward(&tr, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.input.unwrap().data(), &[0.25]);
    }

    #[test]
    fn zero_weight_network_has_zero_input_grad() {
        let net = NetworkSpec::<f64>::build(
            "c",
            vec![4],
            vec![LayerSpec::dense(4, 3), LayerSpec::dense(3, 1)],
            Init::Zeros,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::from_f64(vec![4], &[0.3, -0.1, 2.0, 1.0]).unwrap();
        let tr = net.forward(&x).unwrap();
        let g = net.backward(&tr, &Tensor::scalar(1.0)).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = NetworkSpec::<f32>::build(
            "bad",
            vec![3, 4, 4],
            vec![LayerSpec::conv3x3(3, 8), LayerSpec::conv3x3(4, 8)],
            Init::Zeros,
            &mut rng(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");

        let net = NetworkSpec::<f32>::build(
            "n",
            vec![4],
            vec![LayerSpec::dense(4, 2)],
            Init::Zeros,
            &mut rng(),
        )
        .unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stale_trace_rejected() {
        let mut net = NetworkSpec::<f64>::build(
            "n",
            vec![2],
            vec![LayerSpec::dense(2, 2)],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap();
        let tr = net.forward(&x).unwrap();
        net.params_mut();
        assert!(matches!(net.backward(&tr, &x), Err(Error::Trace(_))));

        let other = NetworkSpec::<f64>::build(
            "m",
            vec![2],
            vec![LayerSpec::dense(2, 2)],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let tr = other.forward(&x).unwrap();
        assert!(matches!(net.backward(&tr, &x), Err(Error::Trace(_))));
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let net = NetworkSpec::<f64>::build(
            "b",
            vec![2, 4, 4],
            vec![
                LayerSpec::conv3x3(2, 3),
                LayerSpec::Elu,
                LayerSpec::AvgPool2x2,
                LayerSpec::Reshape { shape: vec![12] },
                LayerSpec::dense(12, 2),
            ],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let xs: Vec<Tensor<f64>> = (0..3)
            .map(|s| {
                Tensor::from_f64(
                    vec![2, 4, 4],
                    &(0..32)
                        .map(|i| ((i * (s + 3)) % 7) as f64 - 3.0)
                        .collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect();
        let batch = Tensor::stack(&xs).unwrap();
        let out = net.forward(&batch).unwrap().output();
        assert_eq!(out.shape(), &[3, 2]);
        for (x, row) in xs.iter().zip(out.unstack()) {
            let single = net.predict(x).unwrap();
            assert!(single.max_abs_diff(&row) < 1e-12);
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = NetworkSpec::<f32>::build(
            "d",
            vec![3, 8, 8],
            vec![
                LayerSpec::conv3x3(3, 4),
                LayerSpec::Elu,
                LayerSpec::conv1x1(4, 2),
            ],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::<f32>::from_f64(
            vec![3, 8, 8],
            &(0..192).map(|i| (i as f64 * 0.1).sin()).collect::<Vec<_>>(),
        )
        .unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn chain_rekeys_parameters() {
        let a = NetworkSpec::<f32>::build(
            "a",
            vec![4],
            vec![LayerSpec::dense(4, 3), LayerSpec::Elu],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let b = NetworkSpec::<f32>::build(
            "b",
            vec![3],
            vec![LayerSpec::dense(3, 2)],
            Init::GlorotUniform,
            &mut rng(),
        )
        .unwrap();
        let ab = NetworkSpec::chain("ab", &a, &b).unwrap();
        let keys: Vec<_> = ab.params().keys().cloned().collect();
        assert_eq!(
            keys,
            ["ab.00.bias", "ab.00.weight", "ab.02.bias", "ab.02.weight"]
        );
        let x = Tensor::<f32>::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let direct = b.predict(&a.predict(&x).unwrap()).unwrap();
        assert_eq!(ab.predict(&x).unwrap(), direct);
    }
}
