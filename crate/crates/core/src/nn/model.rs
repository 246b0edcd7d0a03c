use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::SpeedField;
use crate::masks::{build_anisotropic_mask, build_isotropic_mask, KernelMask, WaveParams};
use crate::probes::ProbeInputTensor;

use super::layers::{
    crop, crop_backward, maxpool2, maxpool2_backward, relu, relu_backward, upsample_nearest2,
    upsample_nearest2_backward, PoolIndices,
};
use super::{ConvLayer, FeatureMap, Real};

/// One convolution: odd `(height, width)` kernel and output channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: (usize, usize),
    pub filters: usize,
}

impl LayerSpec {
    pub const fn new(k_h: usize, k_w: usize, filters: usize) -> Self {
        Self {
            kernel: (k_h, k_w),
            filters,
        }
    }
}

/// Encoder–decoder layout. Every encoder conv is followed by ReLU and 2×2
/// max-pooling, every decoder conv by ReLU, 2× upsampling and a crop back to
/// the mirrored encoder shape; the output conv has a final ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub output: LayerSpec,
}

impl Architecture {
    /// The default reconstruction network.
    pub fn standard() -> Self {
        Self {
            input_channels: 3,
            encoder: vec![
                LayerSpec::new(5, 5, 40),
                LayerSpec::new(7, 7, 48),
                LayerSpec::new(7, 7, 32),
            ],
            decoder: vec![
                LayerSpec::new(5, 5, 48),
                LayerSpec::new(5, 5, 40),
                LayerSpec::new(9, 9, 56),
            ],
            output: LayerSpec::new(7, 7, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(invalid("architecture needs at least one input channel"));
        }
        if self.encoder.len() != self.decoder.len() {
            return Err(invalid(format!(
                "encoder and decoder depth differ ({} vs {})",
                self.encoder.len(),
                self.decoder.len()
            )));
        }
        if self.output.filters != 1 {
            return Err(invalid("the output layer must have exactly one filter"));
        }
        for spec in self.layers() {
            let (kh, kw) = spec.kernel;
            if kh % 2 == 0 || kw % 2 == 0 || spec.filters == 0 {
                return Err(invalid(format!(
                    "layer needs odd kernel and >= 1 filter, got {kh}x{kw}x{}",
                    spec.filters
                )));
            }
        }
        Ok(())
    }

    /// Encoder, decoder, then output layer.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(std::iter::once(&self.output))
    }

    /// `(c_in, spec)` for every layer in order.
    fn channel_plan(&self) -> Vec<(usize, LayerSpec)> {
        let mut c_in = self.input_channels;
        self.layers()
            .map(|s| {
                let plan = (c_in, *s);
                c_in = s.filters;
                plan
            })
            .collect()
    }

    /// Smallest accepted input height/width.
    pub fn min_input_size(&self) -> usize {
        1 << (self.encoder.len() + 1)
    }
}

/// How kernel supports are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    Isotropic,
    Anisotropic { waves: WaveParams, dx: f64, dt: f64 },
}

impl MaskSpec {
    pub fn build(&self, k_h: usize, k_w: usize) -> Result<KernelMask> {
        match self {
            MaskSpec::Isotropic => build_isotropic_mask(k_h, k_w),
            MaskSpec::Anisotropic { waves, dx, dt } => {
                build_anisotropic_mask(k_h, k_w, waves, *dx, *dt)
            }
        }
    }

    pub fn is_anisotropic(&self) -> bool {
        matches!(self, MaskSpec::Anisotropic { .. })
    }
}

/// Gradient of one conv layer; `weights` is full kernel size.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &ConvModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights().len()],
                    bias: vec![T::zero(); l.bias().len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x = *x + *y);
            a.bias
                .iter_mut()
                .zip(&b.bias)
                .for_each(|(x, y)| *x = *x + *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|x| *x = *x * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Mean squared difference, accumulated in `f64`.
pub fn mse<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "mse over {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("mse of zero values".into()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Training loss: mean over cells of the squared difference.
pub fn loss<T: Real>(estimate: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<f64> {
    if (estimate.channels(), estimate.spatial()) != (target.channels(), target.spatial()) {
        return Err(Error::Shape("loss between differently shaped maps".into()));
    }
    mse(estimate.data(), target.data())
}

/// Anything that turns an encoded probe tensor into a speed field.
pub trait Reconstructor {
    fn reconstruct(&self, input: &ProbeInputTensor) -> Result<SpeedField>;
}

/// Activations kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// Input of every conv layer.
    inputs: Vec<FeatureMap<T>>,
    /// ReLU output of every conv layer.
    activations: Vec<FeatureMap<T>>,
    pools: Vec<PoolIndices>,
    /// Upsampled shape before each decoder crop.
    upsampled: Vec<(usize, usize)>,
}

/// The encoder–decoder network with per-layer kernel masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModel<T> {
    arch: Architecture,
    masks: MaskSpec,
    v_scale: f64,
    layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ConvModel<T> {
    /// Glorot-initialized model; all randomness comes from `seed`.
    pub fn new(arch: Architecture, masks: MaskSpec, v_scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch, masks, v_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            layer.init_glorot(&mut rng);
        }
        Ok(model)
    }

    pub fn zeros(arch: Architecture, masks: MaskSpec, v_scale: f64) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .channel_plan()
            .into_iter()
            .map(|(c_in, spec)| {
                let mask = masks.build(spec.kernel.0, spec.kernel.1)?;
                Ok(ConvLayer::zeros(c_in, spec.filters, mask))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(arch, masks, v_scale, layers)
    }

    /// Assembles a model from existing layers, checking they fit `arch` and
    /// carry the masks `masks` would build.
    pub fn from_layers(
        arch: Architecture,
        masks: MaskSpec,
        v_scale: f64,
        layers: Vec<ConvLayer<T>>,
    ) -> Result<Self> {
        arch.validate()?;
        if !(v_scale > 0.0 && v_scale.is_finite()) {
            return Err(invalid(format!("V_scale must be > 0, got {v_scale}")));
        }
        let plan = arch.channel_plan();
        if plan.len() != layers.len() {
            return Err(Error::Shape(format!(
                "architecture has {} layers, got {}",
                plan.len(),
                layers.len()
            )));
        }
        for (k, ((c_in, spec), layer)) in plan.iter().zip(&layers).enumerate() {
            let expected = masks.build(spec.kernel.0, spec.kernel.1)?;
            if layer.c_in() != *c_in || layer.c_out() != spec.filters || *layer.mask() != expected {
                return Err(Error::Shape(format!(
                    "layer {k} does not match the architecture or mask"
                )));
            }
        }
        Ok(Self {
            arch,
            masks,
            v_scale,
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn mask_spec(&self) -> &MaskSpec {
        &self.masks
    }

    pub fn v_scale(&self) -> f64 {
        self.v_scale
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    /// Trainable parameters: Σ (support · c_in · c_out + c_out).
    pub fn count_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::effective_params).sum()
    }

    /// Whether every masked-out weight is exactly zero.
    pub fn mask_respected(&self) -> bool {
        self.layers.iter().all(ConvLayer::mask_respected)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights().iter().chain(l.bias()).all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ConvModel<U> {
        let conv = |l: &ConvLayer<T>| {
            let w = l.weights().iter().map(|v| U::lit(v.as_f64())).collect();
            let b = l.bias().iter().map(|v| U::lit(v.as_f64())).collect();
            ConvLayer::from_parts(l.c_in(), l.c_out(), l.mask().clone(), w, b)
                .expect("casting keeps zeros at zero")
        };
        ConvModel {
            arch: self.arch.clone(),
            masks: self.masks,
            v_scale: self.v_scale,
            layers: self.layers.iter().map(conv).collect(),
        }
    }

    fn check_input(&self, input: &FeatureMap<T>) -> Result<()> {
        let min = self.arch.min_input_size();
        let (h, w) = input.spatial();
        if h < min || w < min {
            return Err(Error::Shape(format!(
                "input {h}x{w} is smaller than the minimum {min}x{min}"
            )));
        }
        if input.channels() != self.arch.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.arch.input_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_tape(input)?.0)
    }

    /// Forward pass that also records what [`ConvModel::backward`] needs.
    pub fn forward_tape(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Tape<T>)> {
        self.check_input(input)?;
        let n_enc = self.arch.encoder.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            activations: Vec::with_capacity(self.layers.len()),
            pools: Vec::with_capacity(n_enc),
            upsampled: Vec::with_capacity(n_enc),
        };
        let mut skip_shapes = Vec::with_capacity(n_enc);
        let mut x = input.clone();
        for layer in &self.layers[..n_enc] {
            skip_shapes.push(x.spatial());
            let a = relu(&layer.forward(&x)?);
            let (pooled, idx) = maxpool2(&a);
            tape.inputs.push(x);
            tape.activations.push(a);
            tape.pools.push(idx);
            x = pooled;
        }
        for layer in &self.layers[n_enc..2 * n_enc] {
            let a = relu(&layer.forward(&x)?);
            let up = upsample_nearest2(&a);
            let (h, w) = skip_shapes.pop().expect("one skip shape per decoder layer");
            tape.upsampled.push(up.spatial());
            tape.inputs.push(x);
            tape.activations.push(a);
            x = crop(&up, h, w)?;
        }
        let out = relu(&self.layers[2 * n_enc].forward(&x)?);
        tape.inputs.push(x);
        tape.activations.push(out.clone());
        Ok((out, tape))
    }

    /// Backpropagates `grad_out = ∂L/∂output` through a recorded pass.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &FeatureMap<T>) -> Result<Gradients<T>> {
        let n_enc = self.arch.encoder.len();
        let n = self.layers.len();
        let mut grads: Vec<Option<LayerGrad<T>>> = vec![None; n];

        let mut g = grad_out.clone();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if k < n - 1 && k >= n_enc {
                // decoder: undo crop and upsampling
                let (uh, uw) = tape.upsampled[k - n_enc];
                g = upsample_nearest2_backward(&crop_backward(&g, uh, uw));
            } else if k < n_enc {
                g = maxpool2_backward(&tape.pools[k], &g);
            }
            let g_pre = relu_backward(&tape.activations[k], &g);
            let (weights, bias, g_in) = layer.backward(&tape.inputs[k], &g_pre, k > 0)?;
            grads[k] = Some(LayerGrad { weights, bias });
            if let Some(g_in) = g_in {
                g = g_in;
            }
        }
        Ok(Gradients {
            layers: grads
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
        })
    }

    /// Loss and gradients for a single `(input, target)` pair.
    pub fn sample_gradients(
        &self,
        input: &FeatureMap<T>,
        target: &FeatureMap<T>,
    ) -> Result<(f64, Gradients<T>)> {
        let (out, tape) = self.forward_tape(input)?;
        let l = loss(&out, target)?;
        let scale = T::lit(2.0 / out.data().len() as f64);
        let mut g = out.clone();
        for (gv, tv) in g.data_mut().iter_mut().zip(target.data()) {
            *gv = (*gv - *tv) * scale;
        }
        Ok((l, self.backward(&tape, &g)?))
    }

    /// Mean loss and gradients over a batch. Samples run in parallel; the
    /// reduction always sums in batch order, so the result does not depend on
    /// the thread count.
    pub fn batch_gradients(
        &self,
        batch: &[(FeatureMap<T>, FeatureMap<T>)],
    ) -> Result<(f64, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let per_sample = batch
            .par_iter()
            .map(|(x, y)| self.sample_gradients(x, y))
            .collect::<Result<Vec<_>>>()?;
        let mut total = Gradients::zeros_like(self);
        let mut loss_sum = 0.0;
        for (l, g) in &per_sample {
            loss_sum += l;
            total.add_assign(g);
        }
        let b = batch.len() as f64;
        total.scale(T::lit(1.0 / b));
        Ok((loss_sum / b, total))
    }

    /// Input channels scaled to `[0, 1]`, laid out as a feature map.
    pub fn input_features(&self, input: &ProbeInputTensor) -> FeatureMap<T> {
        let g = input.grid();
        let (nx, nt) = (g.nx(), g.nt());
        let raw = input.channels();
        let mut fm = FeatureMap::zeros(3, nx, nt);
        let data = fm.data_mut();
        for cell in 0..nx * nt {
            for c in 0..3 {
                data[c * nx * nt + cell] = T::lit(f64::from(raw[cell * 3 + c]) / 255.0);
            }
        }
        fm
    }

    /// Target speeds divided by `V_scale`.
    pub fn target_features(&self, field: &SpeedField) -> FeatureMap<T> {
        let g = field.grid();
        let data = field
            .values()
            .iter()
            .map(|v| T::lit(v / self.v_scale))
            .collect();
        FeatureMap::from_vec(1, g.nx(), g.nt(), data).expect("field size matches grid")
    }

    /// Reconstructed field in km/h on the input grid.
    pub fn predict(&self, input: &ProbeInputTensor) -> Result<SpeedField> {
        let out = self.forward(&self.input_features(input))?;
        let values = out
            .data()
            .iter()
            .map(|v| v.as_f64() * self.v_scale)
            .collect();
        SpeedField::clamped(*input.grid(), values)
    }
}

impl<T: Real> Reconstructor for ConvModel<T> {
    fn reconstruct(&self, input: &ProbeInputTensor) -> Result<SpeedField> {
        self.predict(input)
    }
}
