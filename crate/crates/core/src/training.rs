//! Sliding-window datasets and the projected-Adam training loop.
//!
//! A [`Frame`] is one simulated (or recorded) trajectory set on a grid. For
//! each frame, penetration rate and probe seed, probes are drawn once for the
//! whole frame and then cut into `window_nx × window_nt` windows that advance
//! `stride_s` seconds at a time. Space is covered by disjoint tiles; with the
//! default 80-cell window and an 800 m section that is a single tile.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::rmse;
use crate::grid::{SpaceTimeGrid, SpeedField, Trajectory, TrajectorySample};
use crate::groundtruth::{interpolate_speed_field, InterpolationParams};
use crate::microsim::{
    record_section, simulate_with, DemandScenario, DriverParams, RoadLayout, SimConfig,
};
use crate::nn::{
    adam_project_step, AdamConfig, AdamState, ConvModel, FeatureMap, Real, Reconstructor,
};
use crate::probes::{encode_input, sample_probes, ProbeInputTensor, DEFAULT_V_SCALE};

pub use crate::microsim::Regime;

/// One input/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: ProbeInputTensor,
    pub target: SpeedField,
    pub regime: Regime,
    pub penetration: f64,
}

/// A complete trajectory set with the grid it is rasterized on.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub trajectories: Vec<Trajectory>,
    pub grid: SpaceTimeGrid,
    pub regime: Regime,
}

/// Extra road kept on both sides of the recorded section so the ground truth
/// near the section ends still sees the neighbouring vehicles.
const FRAME_MARGIN_M: f64 = 100.0;

/// Simulates one frame of a regime preset: `warmup` seconds are discarded
/// and the next `nt` seconds of the recorded section form the grid (10 m ×
/// 1 s cells, `x = 0` at the section start).
pub fn simulate_frame(
    regime: Regime,
    layout: &RoadLayout,
    drivers: &DriverParams,
    warmup: f64,
    nt: usize,
    seed: u64,
) -> Result<Frame> {
    layout.validate()?;
    if !(warmup >= 0.0) {
        return Err(invalid(format!("warm-up must be >= 0, got {warmup}")));
    }
    let dx = 10.0;
    let nx = ((layout.record_end - layout.record_start) / dx).round() as usize;
    let grid = SpaceTimeGrid::new(0.0, warmup, dx, 1.0, nx, nt)?;
    let scenario = DemandScenario::preset(regime, layout, warmup + nt as f64 + 1.0, seed);
    let outcome = simulate_with(&scenario, layout.road_length, drivers, SimConfig::default())?;
    let lo = (layout.record_start - FRAME_MARGIN_M).max(0.0);
    let hi = (layout.record_end + FRAME_MARGIN_M).min(layout.road_length);
    let shift = layout.record_start - lo;
    let trajectories = record_section(&outcome.trajectories, lo, hi)
        .into_iter()
        .map(|tr| {
            let samples = tr
                .samples()
                .iter()
                .map(|s| TrajectorySample::new(s.t, s.x - shift, s.v))
                .collect();
            Trajectory::new(tr.vehicle_id(), samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Frame {
        trajectories,
        grid,
        regime,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub window_nx: usize,
    pub window_nt: usize,
    /// Time between consecutive windows, seconds.
    pub stride_s: f64,
    pub penetration_rates: Vec<f64>,
    /// One probe draw per seed, frame and rate.
    pub probe_seeds: Vec<u64>,
    pub v_scale: f64,
    pub interpolation: InterpolationParams,
    /// Global shuffle of the finished dataset.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window_nx: 80,
            window_nt: 60,
            stride_s: 2.0,
            penetration_rates: vec![0.05],
            probe_seeds: vec![0],
            v_scale: DEFAULT_V_SCALE,
            interpolation: InterpolationParams::default(),
            shuffle: true,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_nx == 0 || self.window_nt == 0 {
            return Err(invalid("window must be at least 1x1"));
        }
        if !(self.stride_s > 0.0 && self.stride_s.is_finite()) {
            return Err(invalid(format!(
                "stride must be > 0, got {}",
                self.stride_s
            )));
        }
        if self.penetration_rates.is_empty() || self.probe_seeds.is_empty() {
            return Err(invalid(
                "need at least one penetration rate and one probe seed",
            ));
        }
        if let Some(r) = self
            .penetration_rates
            .iter()
            .find(|r| !(**r > 0.0 && **r <= 1.0))
        {
            return Err(invalid(format!(
                "penetration rate must be in (0, 1], got {r}"
            )));
        }
        self.interpolation.validate()
    }
}

/// Number of windows of width `window` advancing by `stride` cells.
pub fn window_count(n: usize, window: usize, stride: usize) -> usize {
    if n < window || stride == 0 {
        0
    } else {
        (n - window) / stride + 1
    }
}

fn window_of(
    input: &ProbeInputTensor,
    target: &SpeedField,
    i0: usize,
    nx: usize,
    j0: usize,
    nt: usize,
) -> Result<(ProbeInputTensor, SpeedField)> {
    let g = input.grid();
    let full_nt = g.nt();
    let grid = SpaceTimeGrid::new(
        g.x0() + i0 as f64 * g.dx(),
        g.t0() + j0 as f64 * g.dt(),
        g.dx(),
        g.dt(),
        nx,
        nt,
    )?;
    let mut channels = Vec::with_capacity(nx * nt * 3);
    let mut values = Vec::with_capacity(nx * nt);
    for i in i0..i0 + nx {
        let row = i * full_nt + j0;
        channels.extend_from_slice(&input.channels()[row * 3..(row + nt) * 3]);
        values.extend_from_slice(&target.values()[row..row + nt]);
    }
    Ok((
        ProbeInputTensor::from_channels(grid, channels)?,
        SpeedField::new(grid, values)?,
    ))
}

/// Per-(frame, rate, seed) probe seed, so adding frames or rates does not
/// change the draws of the others.
fn probe_seed(seed: u64, frame: usize, rate: usize) -> u64 {
    seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (rate as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Builds all windows of all frames; see the module docs.
pub fn build_dataset(frames: &[Frame], config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut samples = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        let g = &frame.grid;
        if g.nx() < config.window_nx || g.nt() < config.window_nt {
            warn!(
                "frame {f} ({}x{}) is smaller than the {}x{} window, skipped",
                g.nx(),
                g.nt(),
                config.window_nx,
                config.window_nt
            );
            continue;
        }
        let stride = (config.stride_s / g.dt()).round().max(1.0) as usize;
        let target = interpolate_speed_field(&frame.trajectories, g, &config.interpolation)?;
        let tiles = g.nx() / config.window_nx;
        let windows = window_count(g.nt(), config.window_nt, stride);
        for (r, &rate) in config.penetration_rates.iter().enumerate() {
            for &seed in &config.probe_seeds {
                if frame.trajectories.is_empty() {
                    warn!("frame {f} has no vehicles, skipped");
                    continue;
                }
                let probes = sample_probes(&frame.trajectories, rate, probe_seed(seed, f, r))?;
                let input = encode_input(&probes, g, config.v_scale)?;
                for tile in 0..tiles {
                    for w in 0..windows {
                        let (inp, tgt) = window_of(
                            &input,
                            &target,
                            tile * config.window_nx,
                            config.window_nx,
                            w * stride,
                            config.window_nt,
                        )?;
                        samples.push(Sample {
                            input: inp,
                            target: tgt,
                            regime: frame.regime,
                            penetration: rate,
                        });
                    }
                }
            }
        }
    }
    if config.shuffle {
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    }
    Ok(samples)
}

/// Combines per-rate datasets in proportion to `weights`. Each dataset
/// contributes `⌊N·wᵢ/Σw⌋` samples, with `N` as large as the most limiting
/// dataset allows; samples are picked without replacement and keep their
/// original order.
pub fn mix_datasets(datasets: &[Vec<Sample>], weights: &[f64], seed: u64) -> Result<Vec<Sample>> {
    if datasets.is_empty() || datasets.len() != weights.len() {
        return Err(Error::Empty(
            "need one weight per dataset and at least one dataset".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().all(|w| *w == 0.0) {
        return Err(invalid("weights must be non-negative and not all zero"));
    }
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let n = datasets
        .iter()
        .zip(&shares)
        .filter(|(_, p)| **p > 0.0)
        .map(|(d, p)| d.len() as f64 / p)
        .fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (d, p) in datasets.iter().zip(&shares) {
        let take = ((n * p + 1e-9).floor() as usize).min(d.len());
        let mut idx = rand::seq::index::sample(&mut rng, d.len(), take).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| d[i].clone()));
    }
    if out.is_empty() {
        return Err(Error::Empty("mixture is empty".into()));
    }
    Ok(out)
}

const DATASET_MAGIC: &[u8; 8] = b"SPDFLDS\0";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Dataset cache: 8-byte magic, little-endian `u32` version, bincode samples.
pub fn save_dataset(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_FORMAT_VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, samples).map_err(|e| Error::DatasetFormat(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::DatasetFormat("file too short".into()))?;
    if &header[..8] != DATASET_MAGIC {
        return Err(Error::DatasetFormat("not a dataset file".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::DatasetFormat(format!(
            "format version {version}, this build reads {DATASET_FORMAT_VERSION}"
        )));
    }
    bincode::deserialize_from(r)
        .map_err(|e| Error::DatasetFormat(format!("corrupt or truncated: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Must match the model's speed scale.
    pub v_scale: f64,
    pub shuffle: bool,
    /// Gradients are always reduced in batch order; the flag is recorded
    /// so runs can assert it.
    pub deterministic: bool,
    /// Share of samples held out for validation (rounded, at least one when
    /// positive and the dataset has two or more samples).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            v_scale: DEFAULT_V_SCALE,
            shuffle: true,
            deterministic: true,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid(format!(
                "validation fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_rmse_kmph: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation loss (the last
    /// epoch when nothing is held out).
    pub model: ConvModel<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Splits `n` indices into (train, validation) with a seeded permutation.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * n as f64).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn features<T: Real>(model: &ConvModel<T>, s: &Sample) -> (FeatureMap<T>, FeatureMap<T>) {
    (
        model.input_features(&s.input),
        model.target_features(&s.target),
    )
}

/// Mean scaled loss and pooled RMSE (km/h) of `model` over `samples`.
pub fn evaluate_samples<T: Real>(model: &ConvModel<T>, samples: &[&Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let (x, y) = features(model, s);
            let out = model.forward(&x)?;
            let l = crate::nn::loss(&out, &y)?;
            let e = rmse(&model.reconstruct(&s.input)?, &s.target)?;
            Ok((l, e * e))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let mse = per.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((loss, mse.sqrt()))
}

/// Trains `model` on `dataset`, keeping the checkpoint with the lowest
/// validation loss, or the lowest epoch training loss when nothing is held
/// out (the running mean of the pre-step batch losses).
pub fn train<T: Real>(
    model: ConvModel<T>,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset is empty".into()));
    }
    if (model.v_scale() - config.v_scale).abs() > 1e-12 {
        return Err(invalid(format!(
            "model V_scale {} differs from training V_scale {}",
            model.v_scale(),
            config.v_scale
        )));
    }
    let (mut train_idx, val_idx) = split_indices(dataset.len(), config.val_fraction, config.seed);
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model, adam)?;
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ConvModel<T>)> = None;

    for epoch in 1..=config.epochs {
        if config.shuffle {
            train_idx.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| features(&model, &dataset[i]))
                .collect();
            let (l, grads) = model.batch_gradients(&batch)?;
            if !l.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: l,
                });
            }
            adam_project_step(&mut model, &grads, &mut state)?;
            loss_sum += l * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let (val_loss, val_rmse) = if val.is_empty() {
            (None, None)
        } else {
            let (l, e) = evaluate_samples(&model, &val)?;
            (Some(l), Some(e))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_rmse_kmph: val_rmse,
        };
        info!(
            "epoch {epoch}/{}: train loss {train_loss:.6}, val loss {}, val RMSE {} km/h",
            config.epochs,
            fmt_opt(val_loss),
            fmt_opt(val_rmse)
        );
        history.push(record);
        // without a validation split the training loss picks the checkpoint
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// `epoch,train_loss,val_loss,val_rmse_kmph`; missing validation values are
/// left empty.
pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_rmse_kmph"])?;
    for r in history {
        w.serialize((r.epoch, r.train_loss, r.val_loss, r.val_rmse_kmph))?;
    }
    w.flush()?;
    Ok(())
}
