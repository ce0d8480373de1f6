//! The A9 (deep), A3 (shallow) and A5 (simple) patch classifiers.
//!
//! Every model maps a `[N, bands, side, side]` patch batch to `[N, c]` logits
//! for the center pixel of each patch.

mod layer;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binio::{read_u32, to_u32, write_u32};
use crate::error::{Error, Result};
use crate::hsdata::Patch;
use crate::tensor::checkpoint::{read_checkpoint, write_checkpoint, NamedTensors};
use crate::tensor::{
    init_constant, init_gaussian, init_glorot_uniform, Conv2dParams, DenseParams, LrnParams,
    RngState, Tensor,
};

use layer::Cache;
pub use layer::{Layer, LayerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(alias = "a9")]
    A9,
    #[serde(alias = "a3")]
    A3,
    #[serde(alias = "a5")]
    A5,
}

impl Arch {
    pub fn patch_side(self) -> usize {
        match self {
            Arch::A9 | Arch::A3 => 5,
            Arch::A5 => 9,
        }
    }

    /// Number of weighted processing layers.
    pub fn depth(self) -> usize {
        match self {
            Arch::A9 => 9,
            Arch::A3 => 3,
            Arch::A5 => 5,
        }
    }

    fn from_depth(d: u32) -> Result<Self> {
        match d {
            9 => Ok(Arch::A9),
            3 => Ok(Arch::A3),
            5 => Ok(Arch::A5),
            _ => Err(Error::Format(format!("unknown architecture id {d}"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.depth())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A9" => Ok(Arch::A9),
            "A3" => Ok(Arch::A3),
            "A5" => Ok(Arch::A5),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

/// Filter count of the A5 convolution when not overridden.
pub fn default_a5_filters(bands: usize) -> usize {
    if bands > 150 {
        100
    } else {
        60
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub bands: usize,
    pub classes: usize,
    pub patch_side: usize,
    /// Zero for A9 and A3.
    pub a5_filters: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, bands: usize, classes: usize) -> Self {
        Self {
            arch,
            bands,
            classes,
            patch_side: arch.patch_side(),
            a5_filters: if arch == Arch::A5 {
                default_a5_filters(bands)
            } else {
                0
            },
        }
    }

    pub fn with_a5_filters(mut self, filters: usize) -> Self {
        if self.arch == Arch::A5 {
            self.a5_filters = filters;
        }
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::param(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.bands == 0 {
            return Err(Error::param("band count must be positive"));
        }
        if self.patch_side != self.arch.patch_side() {
            return Err(Error::param(format!(
                "{} uses {}x{} patches, got side {}",
                self.arch,
                self.arch.patch_side(),
                self.arch.patch_side(),
                self.patch_side
            )));
        }
        match (self.arch, self.a5_filters) {
            (Arch::A5, 0) => Err(Error::param("A5 needs a positive filter count")),
            (Arch::A5, _) | (_, 0) => Ok(()),
            _ => Err(Error::param("a5_filters only applies to A5")),
        }
    }
}

/// Forward-pass record consumed by [`ModelState::backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    caches: Vec<Cache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: ModelSpec,
    layers: Vec<Layer>,
    training: bool,
}

fn gaussian_conv(
    rng: &mut RngState,
    out: usize,
    inp: usize,
    k: usize,
    std: f64,
    bias: f64,
) -> Result<Conv2dParams> {
    Conv2dParams::new(
        init_gaussian(rng, vec![out, inp, k, k], 0.0, std)?,
        init_constant(vec![out], bias),
        (0, 0),
        1,
    )
}

fn glorot_dense(rng: &mut RngState, out: usize, inp: usize) -> Result<DenseParams> {
    DenseParams::new(
        init_glorot_uniform(rng, vec![out, inp]),
        init_constant(vec![out], 0.0),
    )
}

fn lrn_params(radius: usize) -> LrnParams {
    LrnParams::new(radius, 1.0, 1e-4, 0.75).expect("constant LRN parameters")
}

/// Final classification layer of each architecture, freshly initialized.
fn head(spec: &ModelSpec, rng: &mut RngState) -> Result<LayerKind> {
    Ok(match spec.arch {
        Arch::A9 => LayerKind::Conv(gaussian_conv(rng, spec.classes, 128, 1, 0.005, 0.0)?),
        Arch::A3 => LayerKind::Conv(gaussian_conv(rng, spec.classes, 64, 1, 0.05, 0.0)?),
        Arch::A5 => LayerKind::Dense(glorot_dense(rng, spec.classes, 300)?),
    })
}

pub fn build_a9(spec: ModelSpec, rng: &mut RngState) -> Result<ModelState> {
    expect_arch(&spec, Arch::A9)?;
    let b = spec.bands;
    let bank = [5, 3, 1]
        .iter()
        .map(|&k| gaussian_conv(rng, 128, b, k, 0.01, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let mut residual = |std: f64, lrn: Option<LrnParams>| -> Result<LayerKind> {
        Ok(LayerKind::Residual {
            first: gaussian_conv(rng, 128, 128, 1, std, 1.0)?,
            second: gaussian_conv(rng, 128, 128, 1, std, 1.0)?,
            lrn,
        })
    };
    let res1 = residual(0.005, Some(lrn_params(5)))?;
    let res2 = residual(0.01, None)?;
    let mut layers = vec![
        Layer::new("bank", LayerKind::FilterBank(bank)),
        Layer::new("bank_relu", LayerKind::Relu),
        Layer::new("bank_lrn", LayerKind::Lrn(lrn_params(5))),
        Layer::new(
            "reduce",
            LayerKind::Conv(gaussian_conv(rng, 128, 384, 1, 0.01, 1.0)?),
        ),
        Layer::new("reduce_relu", LayerKind::Relu),
        Layer::new("res1", res1),
        Layer::new("res2", res2),
    ];
    for i in 1..=2 {
        layers.push(Layer::new(
            format!("cls{i}"),
            LayerKind::Conv(gaussian_conv(rng, 128, 128, 1, 0.01, 1.0)?),
        ));
        layers.push(Layer::new(format!("cls{i}_relu"), LayerKind::Relu));
        layers.push(Layer::new(format!("cls{i}_drop"), LayerKind::Dropout(0.5)));
    }
    layers.push(Layer::new("cls3", head(&spec, rng)?));
    layers.push(Layer::new("center", LayerKind::Flatten));
    Ok(ModelState::from_layers(spec, layers))
}

pub fn build_a3(spec: ModelSpec, rng: &mut RngState) -> Result<ModelState> {
    expect_arch(&spec, Arch::A3)?;
    let mut layers = Vec::new();
    for (i, (inp, out)) in [(spec.bands, 128), (128, 64)].into_iter().enumerate() {
        let i = i + 1;
        layers.push(Layer::new(
            format!("conv{i}"),
            LayerKind::Conv(gaussian_conv(rng, out, inp, 1, 0.05, 0.0)?),
        ));
        layers.push(Layer::new(format!("conv{i}_relu"), LayerKind::Relu));
        layers.push(Layer::new(
            format!("conv{i}_lrn"),
            LayerKind::Lrn(lrn_params(3)),
        ));
        layers.push(Layer::new(format!("conv{i}_drop"), LayerKind::Dropout(0.6)));
    }
    layers.push(Layer::new("conv3", head(&spec, rng)?));
    layers.push(Layer::new("gap", LayerKind::GlobalAvgPool));
    Ok(ModelState::from_layers(spec, layers))
}

pub fn build_a5(spec: ModelSpec, rng: &mut RngState) -> Result<ModelState> {
    expect_arch(&spec, Arch::A5)?;
    let f = spec.a5_filters;
    let conv = Conv2dParams::new(
        init_glorot_uniform(rng, vec![f, spec.bands, 3, 3]),
        init_constant(vec![f], 0.0),
        (0, 0),
        1,
    )?;
    let pooled = (spec.patch_side - 2) / 2;
    let mut layers = vec![
        Layer::new("conv", LayerKind::Conv(conv)),
        Layer::new("conv_relu", LayerKind::Relu),
        Layer::new("pool", LayerKind::MaxPool { size: 2, stride: 2 }),
        Layer::new("flatten", LayerKind::Flatten),
    ];
    let mut inp = f * pooled * pooled;
    for (i, units) in [1000, 500, 300].into_iter().enumerate() {
        layers.push(Layer::new(
            format!("fc{}", i + 1),
            LayerKind::Dense(glorot_dense(rng, units, inp)?),
        ));
        layers.push(Layer::new(format!("fc{}_relu", i + 1), LayerKind::Relu));
        inp = units;
    }
    layers.push(Layer::new("fc4", head(&spec, rng)?));
    Ok(ModelState::from_layers(spec, layers))
}

fn expect_arch(spec: &ModelSpec, arch: Arch) -> Result<()> {
    spec.validate()?;
    if spec.arch != arch {
        return Err(Error::param(format!(
            "spec is {}, builder is {arch}",
            spec.arch
        )));
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ModelState {
    pub fn build(spec: ModelSpec, rng: &mut RngState) -> Result<Self> {
        match spec.arch {
            Arch::A9 => build_a9(spec, rng),
            Arch::A3 => build_a3(spec, rng),
            Arch::A5 => build_a5(spec, rng),
        }
    }

    fn from_layers(spec: ModelSpec, layers: Vec<Layer>) -> Self {
        Self {
            spec,
            layers,
            training: false,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn weighted_layer_count(&self) -> usize {
        self.layers.iter().map(Layer::weighted_depth).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = &self.spec;
        let expected = [s.bands, s.patch_side, s.patch_side];
        if input.rank() != 4 || input.shape()[1..] != expected {
            return Err(Error::dim(format!(
                "{} expects [N, {}, {}, {}] patches, got {:?}",
                s.arch,
                expected[0],
                expected[1],
                expected[2],
                input.shape()
            )));
        }
        Ok(())
    }

    /// Logits for a patch batch; dropout follows the mode flag and draws
    /// from `rng`.
    pub fn forward_train(&self, input: &Tensor, rng: &mut RngState) -> Result<(Tensor, Trace)> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, self.training, Some(rng))?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Trace { caches }))
    }

    /// Every layer's output in inference mode, ending with the logits.
    pub fn activations(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outs.last().unwrap_or(input);
            let (y, _) = layer.forward(x, false, None)?;
            outs.push(y);
        }
        Ok(outs)
    }

    /// Inference-mode logits `[N, c]`.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x, false, None)?.0;
        }
        Ok(x)
    }

    /// Parameter gradients in [`ModelState::params`] order.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::dim("trace does not belong to this model"));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_logits.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let (gx, grads) = layer.backward(cache, &g, i > 0)?;
            per_layer.push(grads);
            g = gx;
        }
        Ok(per_layer.into_iter().rev().flatten().collect())
    }

    pub fn predict_batch(&self, input: &Tensor) -> Result<Vec<usize>> {
        let logits = self.infer(input)?;
        Ok(logits
            .data()
            .chunks(self.spec.classes)
            .map(argmax)
            .collect())
    }

    pub fn predict(&self, patch: &Patch) -> Result<usize> {
        let w = &patch.window;
        let batch = w.clone().reshape([&[1], w.shape()].concat())?;
        Ok(self.predict_batch(&batch)?[0])
    }

    pub fn head_index(&self) -> usize {
        self.layers
            .iter()
            .rposition(|l| l.weighted_depth() > 0)
            .expect("every architecture has weighted layers")
    }

    /// Copy of `self` with the final classification layer replaced by a
    /// freshly initialized one with `new_c` outputs.
    pub fn transfer_last_layer(&self, new_c: usize, rng: &mut RngState) -> Result<ModelState> {
        let spec = self.spec.with_classes(new_c);
        spec.validate()?;
        let mut out = self.clone();
        out.spec = spec;
        let i = out.head_index();
        out.layers[i].kind = head(&spec, rng)?;
        Ok(out)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensors> {
        self.layers
            .iter()
            .filter(|l| l.weighted_depth() > 0)
            .map(|l| NamedTensors {
                name: l.name.clone(),
                tensors: l.params().into_iter().cloned().collect(),
            })
            .collect()
    }

    /// Spec preamble (five little-endian `u32`: arch id 9/3/5, bands,
    /// classes, patch side, A5 filters) followed by an `HGW1` stream.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.spec;
        for v in [
            s.arch.depth(),
            s.bands,
            s.classes,
            s.patch_side,
            s.a5_filters,
        ] {
            write_u32(w, to_u32(v, "spec field")?)?;
        }
        write_checkpoint(w, &self.named_tensors())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut fields = [0usize; 5];
        for f in &mut fields {
            *f = read_u32(r)? as usize;
        }
        let spec = ModelSpec {
            arch: Arch::from_depth(fields[0] as u32)?,
            bands: fields[1],
            classes: fields[2],
            patch_side: fields[3],
            a5_filters: fields[4],
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut model = ModelState::build(spec, &mut RngState::new(0))?;
        let stored = read_checkpoint(r)?;
        let slots: Vec<&mut Layer> = model
            .layers
            .iter_mut()
            .filter(|l| l.weighted_depth() > 0)
            .collect();
        if slots.len() != stored.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} weighted layers, {} expects {}",
                stored.len(),
                spec.arch,
                slots.len()
            )));
        }
        for (layer, named) in slots.into_iter().zip(stored) {
            if layer.name != named.name {
                return Err(Error::Format(format!(
                    "expected layer '{}', found '{}'",
                    layer.name, named.name
                )));
            }
            let params = layer.params_mut();
            if params.len() != named.tensors.len() {
                return Err(Error::Format(format!(
                    "layer '{}' tensor count mismatch",
                    named.name
                )));
            }
            for (p, t) in params.into_iter().zip(named.tensors) {
                if p.shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "layer '{}': shape {:?}, expected {:?}",
                        named.name,
                        t.shape(),
                        p.shape()
                    )));
                }
                *p = t;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
