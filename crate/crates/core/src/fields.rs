//! UV-space field models: a directly optimized map and a conditioned MLP,
//! behind one reverse-mode contract.
//!
//! `forward` records its inputs; `backward` accumulates parameter gradients
//! and may be called repeatedly against the same record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::io::{Tensor, TensorFile};
use crate::uvfield::{upsample, upsample_backward, UVMap};

/// Texels per parallel chunk in the per-texel MLP; partial gradients are
/// reduced in chunk order.
const CHUNK: usize = 256;

/// Expression and pose condition of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ConditionVector {
    pub fn new(psi: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if psi.iter().chain(&theta).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("condition vector"));
        }
        Ok(ConditionVector { psi, theta })
    }

    pub fn empty() -> Self {
        ConditionVector {
            psi: Vec::new(),
            theta: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.psi.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.psi.iter().chain(&self.theta).copied().collect()
    }
}

/// Inputs of one field evaluation. Texels outside `mask` (when given) are
/// not evaluated and read as zero.
#[derive(Debug, Clone, Copy)]
pub struct FieldInput<'a> {
    pub u: Option<&'a UVMap>,
    pub cond: &'a [f64],
    pub mask: Option<&'a [bool]>,
}

impl<'a> FieldInput<'a> {
    pub fn new(u: Option<&'a UVMap>, cond: &'a [f64]) -> Self {
        FieldInput { u, cond, mask: None }
    }
}

/// A parameter tensor and its gradient accumulator.
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

pub trait FieldModel {
    /// Output `(width, height, channels)`.
    fn output_shape(&self) -> (usize, usize, usize);

    /// Pure evaluation; records nothing.
    fn evaluate(&self, input: &FieldInput) -> Result<UVMap>;

    /// Evaluates and records the inputs for [`FieldModel::backward`].
    fn forward(&mut self, input: &FieldInput) -> Result<UVMap>;

    /// Accumulates parameter gradients for upstream `d_out` and returns the
    /// gradient w.r.t. the input map `U` when the model reads it.
    fn backward(&mut self, d_out: &UVMap) -> Result<Option<UVMap>>;

    fn params(&mut self) -> Vec<ParamSlot<'_>>;

    fn zero_grad(&mut self);

    fn to_tensors(&self, prefix: &str, out: &mut TensorFile);

    fn load_tensors(&mut self, prefix: &str, file: &TensorFile) -> Result<()>;

    fn num_params(&self) -> usize;
}

/// A free UV map optimized directly; its output ignores the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableUVMap {
    pub map: UVMap,
    pub grad: UVMap,
    recorded: bool,
}

impl LearnableUVMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        LearnableUVMap {
            map: UVMap::zeros(width, height, channels),
            grad: UVMap::zeros(width, height, channels),
            recorded: false,
        }
    }
}

impl FieldModel for LearnableUVMap {
    fn output_shape(&self) -> (usize, usize, usize) {
        (self.map.width, self.map.height, self.map.channels)
    }

    fn evaluate(&self, input: &FieldInput) -> Result<UVMap> {
        if let Some(u) = input.u {
            u.check_shape(self.map.width, self.map.height, 3)?;
        }
        Ok(self.map.clone())
    }

    fn forward(&mut self, input: &FieldInput) -> Result<UVMap> {
        let out = self.evaluate(input)?;
        self.recorded = true;
        Ok(out)
    }

    fn backward(&mut self, d_out: &UVMap) -> Result<Option<UVMap>> {
        if !self.recorded {
            return Err(Error::NoForwardRecord);
        }
        d_out.check_shape(self.map.width, self.map.height, self.map.channels)?;
        self.grad.add_assign(d_out);
        Ok(None)
    }

    fn params(&mut self) -> Vec<ParamSlot<'_>> {
        vec![ParamSlot {
            name: "map".into(),
            value: &mut self.map.data,
            grad: &self.grad.data,
        }]
    }

    fn zero_grad(&mut self) {
        self.grad.data.fill(0.0);
    }

    fn to_tensors(&self, prefix: &str, out: &mut TensorFile) {
        let m = &self.map;
        out.push(format!("{prefix}.map"), Tensor::new(vec![m.height, m.width, m.channels], m.data.clone()));
    }

    fn load_tensors(&mut self, prefix: &str, file: &TensorFile) -> Result<()> {
        let t = file.require(&format!("{prefix}.map"))?;
        let m = &mut self.map;
        check_len("field map tensor", m.data.len(), t.data.len())?;
        if t.dims != [m.height, m.width, m.channels] {
            return Err(Error::MissingTensor(format!("{prefix}.map with shape {:?}", t.dims)));
        }
        m.data.copy_from_slice(&t.data);
        Ok(())
    }

    fn num_params(&self) -> usize {
        self.map.data.len()
    }
}

/// How the MLP output is laid out in uv space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpLayout {
    /// One evaluation per texel on `[U texel, cond]`.
    PerTexel,
    /// One evaluation on `cond` producing a `grid × grid` map, bilinearly
    /// upsampled to the output resolution.
    Grid { grid: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub layout: MlpLayout,
    /// Whether per-texel inputs include the 3-channel map `U`.
    pub uses_u: bool,
    pub cond_dim: usize,
    pub out_channels: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    d_weight: Vec<f64>,
    d_bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MlpTape {
    u: Option<UVMap>,
    cond: Vec<f64>,
    mask: Option<Vec<bool>>,
}

/// Multi-layer perceptron with tanh hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedMLP {
    pub config: MlpConfig,
    layers: Vec<Dense>,
    tape: Option<MlpTape>,
}

/// Activations of one evaluation: `acts[0]` is the input, `acts[l + 1]` the
/// output of layer `l`.
struct Activations {
    acts: Vec<Vec<f64>>,
}

/// Partial parameter gradients, one `(d_weight, d_bias)` per layer.
type LayerGrads = Vec<(Vec<f64>, Vec<f64>)>;

impl ConditionedMLP {
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.out_channels == 0 || config.width < 2 || config.height < 2 {
            return Err(Error::Config(format!("invalid field shape {config:?}")));
        }
        let input_dim = match config.layout {
            MlpLayout::PerTexel => 3 * usize::from(config.uses_u) + config.cond_dim,
            MlpLayout::Grid { grid } => {
                if grid == 0 {
                    return Err(Error::Config("grid size must be positive".into()));
                }
                config.cond_dim
            }
        };
        let output_dim = match config.layout {
            MlpLayout::PerTexel => config.out_channels,
            MlpLayout::Grid { grid } => grid * grid * config.out_channels,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![input_dim];
        sizes.extend(&config.hidden);
        sizes.push(output_dim);
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let last = l + 1 == n_layers;
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut draw = |count: usize| -> Vec<f64> {
                if last {
                    vec![0.0; count]
                } else {
                    (0..count).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
            };
            let weight = draw(fan_in * fan_out);
            let bias = draw(fan_out);
            layers.push(Dense {
                inputs: fan_in,
                outputs: fan_out,
                weight,
                bias,
                d_weight: vec![0.0; fan_in * fan_out],
                d_bias: vec![0.0; fan_out],
            });
        }
        Ok(ConditionedMLP {
            config,
            layers,
            tape: None,
        })
    }

    fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn run(&self, x: Vec<f64>) -> Activations {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[l], &mut out);
            if l != last {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        Activations { acts }
    }

    /// Backpropagates `d_out` through one recorded evaluation, accumulating
    /// into `grads`; returns the gradient w.r.t. the input vector.
    fn backprop(&self, a: &Activations, d_out: &[f64], grads: &mut LayerGrads) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l + 1 != self.layers.len() {
                for (d, h) in delta.iter_mut().zip(&a.acts[l + 1]) {
                    *d *= 1.0 - h * h;
                }
            }
            let x = &a.acts[l];
            let (gw, gb) = &mut grads[l];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    fn empty_grads(&self) -> LayerGrads {
        self.layers
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect()
    }

    fn accumulate(&mut self, grads: &LayerGrads) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            for (a, b) in layer.d_weight.iter_mut().zip(gw) {
                *a += b;
            }
            for (a, b) in layer.d_bias.iter_mut().zip(gb) {
                *a += b;
            }
        }
    }

    fn texel_input(&self, u: Option<&UVMap>, cond: &[f64], texel: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        if let Some(u) = u {
            x.extend_from_slice(&u.data[texel * 3..texel * 3 + 3]);
        }
        x.extend_from_slice(cond);
        x
    }

    fn check_input(&self, input: &FieldInput) -> Result<()> {
        let c = &self.config;
        check_len("field condition", c.cond_dim, input.cond.len())?;
        if input.cond.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field condition"));
        }
        if c.uses_u && c.layout == MlpLayout::PerTexel {
            let u = input.u.ok_or_else(|| Error::Config("field requires the normal map input".into()))?;
            u.check_shape(c.width, c.height, 3)?;
        }
        if let Some(mask) = input.mask {
            check_len("texel mask", c.width * c.height, mask.len())?;
        }
        Ok(())
    }

    fn grid_coarse(&self, cond: &[f64]) -> UVMap {
        let MlpLayout::Grid { grid } = self.config.layout else {
            unreachable!("grid evaluation on a per-texel model")
        };
        let a = self.run(cond.to_vec());
        let mut coarse = UVMap::zeros(grid, grid, self.config.out_channels);
        coarse.data.copy_from_slice(a.acts.last().unwrap());
        coarse
    }
}

impl FieldModel for ConditionedMLP {
    fn output_shape(&self) -> (usize, usize, usize) {
        (self.config.width, self.config.height, self.config.out_channels)
    }

    fn evaluate(&self, input: &FieldInput) -> Result<UVMap> {
        self.check_input(input)?;
        let c = &self.config;
        match c.layout {
            MlpLayout::Grid { .. } => Ok(upsample(&self.grid_coarse(input.cond), c.width, c.height)),
            MlpLayout::PerTexel => {
                let u = if c.uses_u { input.u } else { None };
                let ch = c.out_channels;
                let mut out = UVMap::zeros(c.width, c.height, ch);
                out.data.par_chunks_mut(ch).enumerate().for_each(|(t, texel)| {
                    if input.mask.is_some_and(|m| !m[t]) {
                        return;
                    }
                    let a = self.run(self.texel_input(u, input.cond, t));
                    texel.copy_from_slice(a.acts.last().unwrap());
                });
                Ok(out)
            }
        }
    }

    fn forward(&mut self, input: &FieldInput) -> Result<UVMap> {
        let out = self.evaluate(input)?;
        self.tape = Some(MlpTape {
            u: if self.config.uses_u { input.u.cloned() } else { None },
            cond: input.cond.to_vec(),
            mask: input.mask.map(<[bool]>::to_vec),
        });
        Ok(out)
    }

    fn backward(&mut self, d_out: &UVMap) -> Result<Option<UVMap>> {
        let tape = self.tape.take().ok_or(Error::NoForwardRecord)?;
        let c = self.config.clone();
        let result = (|| {
            d_out.check_shape(c.width, c.height, c.out_channels)?;
            match c.layout {
                MlpLayout::Grid { grid } => {
                    let coarse = UVMap::zeros(grid, grid, c.out_channels);
                    let d_coarse = upsample_backward(&coarse, d_out);
                    let a = self.run(tape.cond.clone());
                    let mut grads = self.empty_grads();
                    self.backprop(&a, &d_coarse.data, &mut grads);
                    self.accumulate(&grads);
                    Ok(None)
                }
                MlpLayout::PerTexel => {
                    let ch = c.out_channels;
                    let n = c.width * c.height;
                    let u = tape.u.as_ref();
                    let chunks: Vec<(LayerGrads, Vec<(usize, [f64; 3])>)> = (0..n.div_ceil(CHUNK))
                        .into_par_iter()
                        .map(|k| {
                            let mut grads = self.empty_grads();
                            let mut d_u = Vec::new();
                            for t in k * CHUNK..((k + 1) * CHUNK).min(n) {
                                if tape.mask.as_ref().is_some_and(|m| !m[t]) {
                                    continue;
                                }
                                let d = &d_out.data[t * ch..(t + 1) * ch];
                                if d.iter().all(|v| *v == 0.0) {
                                    continue;
                                }
                                let a = self.run(self.texel_input(u, &tape.cond, t));
                                let dx = self.backprop(&a, d, &mut grads);
                                if u.is_some() {
                                    d_u.push((t, [dx[0], dx[1], dx[2]]));
                                }
                            }
                            (grads, d_u)
                        })
                        .collect();
                    let mut d_map = u.map(|u| UVMap::zeros(u.width, u.height, 3));
                    for (grads, d_u) in &chunks {
                        self.accumulate(grads);
                        if let Some(m) = d_map.as_mut() {
                            for (t, g) in d_u {
                                m.data[t * 3..t * 3 + 3].copy_from_slice(g);
                            }
                        }
                    }
                    Ok(d_map)
                }
            }
        })();
        self.tape = Some(tape);
        result
    }

    fn params(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let Dense {
                weight,
                bias,
                d_weight,
                d_bias,
                ..
            } = layer;
            out.push(ParamSlot {
                name: format!("layer{l}.weight"),
                value: weight,
                grad: d_weight,
            });
            out.push(ParamSlot {
                name: format!("layer{l}.bias"),
                value: bias,
                grad: d_bias,
            });
        }
        out
    }

    fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.d_weight.fill(0.0);
            layer.d_bias.fill(0.0);
        }
    }

    fn to_tensors(&self, prefix: &str, out: &mut TensorFile) {
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(
                format!("{prefix}.layer{l}.weight"),
                Tensor::new(vec![layer.outputs, layer.inputs], layer.weight.clone()),
            );
            out.push(format!("{prefix}.layer{l}.bias"), Tensor::vector(layer.bias.clone()));
        }
    }

    fn load_tensors(&mut self, prefix: &str, file: &TensorFile) -> Result<()> {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let w = file.require(&format!("{prefix}.layer{l}.weight"))?;
            let b = file.require(&format!("{prefix}.layer{l}.bias"))?;
            check_len("field weight tensor", layer.weight.len(), w.data.len())?;
            check_len("field bias tensor", layer.bias.len(), b.data.len())?;
            layer.weight.copy_from_slice(&w.data);
            layer.bias.copy_from_slice(&b.data);
        }
        Ok(())
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Either field model, selected by configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Map(LearnableUVMap),
    Mlp(ConditionedMLP),
}

impl Field {
    fn inner(&self) -> &dyn FieldModel {
        match self {
            Field::Map(m) => m,
            Field::Mlp(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn FieldModel {
        match self {
            Field::Map(m) => m,
            Field::Mlp(m) => m,
        }
    }
}

impl FieldModel for Field {
    fn output_shape(&self) -> (usize, usize, usize) {
        self.inner().output_shape()
    }
    fn evaluate(&self, input: &FieldInput) -> Result<UVMap> {
        self.inner().evaluate(input)
    }
    fn forward(&mut self, input: &FieldInput) -> Result<UVMap> {
        self.inner_mut().forward(input)
    }
    fn backward(&mut self, d_out: &UVMap) -> Result<Option<UVMap>> {
        self.inner_mut().backward(d_out)
    }
    fn params(&mut self) -> Vec<ParamSlot<'_>> {
        self.inner_mut().params()
    }
    fn zero_grad(&mut self) {
        self.inner_mut().zero_grad()
    }
    fn to_tensors(&self, prefix: &str, out: &mut TensorFile) {
        self.inner().to_tensors(prefix, out)
    }
    fn load_tensors(&mut self, prefix: &str, file: &TensorFile) -> Result<()> {
        self.inner_mut().load_tensors(prefix, file)
    }
    fn num_params(&self) -> usize {
        self.inner().num_params()
    }
}

fn check_appearance(model: &dyn FieldModel) -> Result<()> {
    let (_, _, c) = model.output_shape();
    if c != crate::fusion::APPEARANCE_CHANNELS {
        return Err(Error::Config(format!("appearance field must emit 4 channels, not {c}")));
    }
    Ok(())
}

/// Base appearance logits from the normal map.
pub fn base_forward(model: &mut dyn FieldModel, u: &UVMap, mask: Option<&[bool]>) -> Result<UVMap> {
    check_appearance(model)?;
    let (w, h, _) = model.output_shape();
    u.check_shape(w, h, 3)?;
    model.forward(&FieldInput { u: Some(u), cond: &[], mask })
}

/// Residual appearance logits from the normal map and the condition.
pub fn dyn_forward(
    model: &mut dyn FieldModel,
    u: &UVMap,
    cond: &ConditionVector,
    mask: Option<&[bool]>,
) -> Result<UVMap> {
    check_appearance(model)?;
    let (w, h, _) = model.output_shape();
    u.check_shape(w, h, 3)?;
    let c = cond.to_vec();
    model.forward(&FieldInput { u: Some(u), cond: &c, mask })
}

/// Geometric deltas from the condition alone.
pub fn geo_forward(model: &mut dyn FieldModel, cond: &ConditionVector) -> Result<UVMap> {
    let (_, _, c) = model.output_shape();
    if c != crate::fusion::DEFORM_CHANNELS {
        return Err(Error::Config(format!("deformation field must emit 10 channels, not {c}")));
    }
    let c = cond.to_vec();
    model.forward(&FieldInput::new(None, &c))
}
