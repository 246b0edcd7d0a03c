use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use speedfield::ensemble::{Ensemble, EnsembleManifest, ManifestEntry};
use speedfield::eval::{
    export_field, flow_density_tiles, regime_table, sample_rmses, write_scatter_csv, FieldFormat,
    DEFAULT_TILE,
};
use speedfield::grid::{read_trajectories_csv, write_trajectories_csv, Region, SpaceTimeGrid};
use speedfield::masks::{build_anisotropic_mask, build_isotropic_mask, WaveParams};
use speedfield::microsim::{
    record_section, simulate_with, DemandScenario, DriverParams, Regime, RoadLayout, SimConfig,
};
use speedfield::nn::{load_model, save_model, Architecture, ConvModel, MaskSpec, Reconstructor};
use speedfield::probes::encode_input;
use speedfield::training::{
    build_dataset, load_dataset, save_dataset, simulate_frame, train, write_history_csv,
    DatasetConfig, Sample, TrainConfig,
};

use crate::manifest::Recorder;
use crate::{Cli, Command, Common};

pub fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    match cli.command {
        Command::Simulate(a) => simulate(&c, a),
        Command::BuildDataset(a) => build(&c, a),
        Command::Train(a) => train_cmd(&c, a),
        Command::Reconstruct(a) => reconstruct(&c, a),
        Command::Evaluate(a) => evaluate(&c, a),
        Command::MaskInfo(a) => mask_info(&c, a),
        Command::Compare(a) => compare(&c, a),
    }
}

fn out_path(c: &Common, p: &Path) -> PathBuf {
    c.out_dir.join(p)
}

fn read_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
    rec: &mut Recorder,
) -> Result<T> {
    match path {
        Some(p) => {
            rec.input(p);
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

/// Independent per-frame seed derived from the run seed.
fn derived_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON job file (layout, drivers, sim, regime or scenario, duration_s).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Demand preset (congested, slow, free); ignored when the config has a scenario.
    #[arg(long)]
    regime: Option<Regime>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Trajectory CSV.
    #[arg(long, default_value = "trajectories.csv")]
    out: PathBuf,
    /// Flow–density scatter CSV of the recorded section.
    #[arg(long, default_value = "scatter.csv")]
    scatter: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateJob {
    pub layout: RoadLayout,
    pub drivers: DriverParams,
    pub sim: SimConfig,
    pub regime: Regime,
    /// Explicit demand; its seed is replaced by the run seed.
    pub scenario: Option<DemandScenario>,
    pub duration_s: f64,
    /// Keep only the recorded section (x rebased to its start).
    pub record_only: bool,
}

impl Default for SimulateJob {
    fn default() -> Self {
        Self {
            layout: RoadLayout::default(),
            drivers: DriverParams::default(),
            sim: SimConfig::default(),
            regime: Regime::Congested,
            scenario: None,
            duration_s: 1800.0,
            record_only: true,
        }
    }
}

fn simulate(c: &Common, a: SimulateArgs) -> Result<()> {
    let mut rec = Recorder::new("simulate", c.seed, c.deterministic);
    let mut job: SimulateJob = read_config(a.config.as_deref(), &mut rec)?;
    if let Some(r) = a.regime {
        job.regime = r;
    }
    if let Some(d) = a.duration {
        job.duration_s = d;
    }
    let scenario = match &job.scenario {
        Some(s) => DemandScenario {
            seed: c.seed,
            duration: job.duration_s,
            ..s.clone()
        },
        None => DemandScenario::preset(job.regime, &job.layout, job.duration_s, c.seed),
    };
    job.scenario = Some(scenario.clone());
    rec.config(&job)?;
    job.layout.validate()?;

    let outcome = simulate_with(&scenario, job.layout.road_length, &job.drivers, job.sim)?;
    let (trajs, extent) = if job.record_only {
        let len = job.layout.record_end - job.layout.record_start;
        (
            record_section(
                &outcome.trajectories,
                job.layout.record_start,
                job.layout.record_end,
            ),
            Region::new(0.0, job.duration_s, 0.0, len),
        )
    } else {
        (
            outcome.trajectories,
            Region::new(0.0, job.duration_s, 0.0, job.layout.road_length),
        )
    };
    let traj_path = out_path(c, &a.out);
    write_trajectories_csv(&trajs, &traj_path)?;
    rec.output(&traj_path);
    let points = flow_density_tiles(&trajs, &extent, DEFAULT_TILE.0, DEFAULT_TILE.1)?;
    let scatter_path = out_path(c, &a.scatter);
    write_scatter_csv(&points, &scatter_path)?;
    rec.output(&scatter_path);
    info!(
        "{} vehicles, {} arrivals dropped at full entry queues; trajectories in {}",
        trajs.len(),
        outcome.queue_overflows,
        traj_path.display()
    );
    rec.write(&c.out_dir)?;
    Ok(())
}

// ----------------------------------------------------------- build-dataset

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// JSON job file (layout, drivers, warmup_s, frames, dataset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset cache.
    #[arg(long, default_value = "dataset.bin")]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSpec {
    pub regime: Regime,
    #[serde(default = "one")]
    pub count: usize,
    pub duration_s: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildJob {
    pub layout: RoadLayout,
    pub drivers: DriverParams,
    /// Simulated seconds discarded before each frame.
    pub warmup_s: f64,
    pub frames: Vec<FrameSpec>,
    /// `seed` is replaced by the run seed.
    pub dataset: DatasetConfig,
}

impl Default for BuildJob {
    fn default() -> Self {
        Self {
            layout: RoadLayout::default(),
            drivers: DriverParams::default(),
            warmup_s: 300.0,
            frames: Regime::ALL
                .into_iter()
                .map(|regime| FrameSpec {
                    regime,
                    count: 1,
                    duration_s: 720,
                })
                .collect(),
            dataset: DatasetConfig::default(),
        }
    }
}

fn build(c: &Common, a: BuildDatasetArgs) -> Result<()> {
    let mut rec = Recorder::new("build-dataset", c.seed, c.deterministic);
    let mut job: BuildJob = read_config(a.config.as_deref(), &mut rec)?;
    job.dataset.seed = c.seed;
    rec.config(&job)?;
    let mut frames = Vec::new();
    for spec in &job.frames {
        for _ in 0..spec.count {
            let seed = derived_seed(c.seed, frames.len() as u64);
            frames.push(simulate_frame(
                spec.regime,
                &job.layout,
                &job.drivers,
                job.warmup_s,
                spec.duration_s,
                seed,
            )?);
        }
    }
    let samples = build_dataset(&frames, &job.dataset)?;
    if samples.is_empty() {
        bail!(
            "no samples: every frame is smaller than the {}x{} window",
            job.dataset.window_nx,
            job.dataset.window_nt
        );
    }
    let path = out_path(c, &a.out);
    save_dataset(&samples, &path)?;
    rec.output(&path);
    let mut counts: BTreeMap<Regime, usize> = BTreeMap::new();
    for s in &samples {
        *counts.entry(s.regime).or_default() += 1;
    }
    let summary: Vec<String> = counts.iter().map(|(r, n)| format!("{r} {n}")).collect();
    info!(
        "{} samples ({}) from {} frames in {}",
        samples.len(),
        summary.join(", "),
        frames.len(),
        path.display()
    );
    rec.write(&c.out_dir)?;
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON job file (architecture, masks, train).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset cache from `build-dataset`.
    #[arg(long)]
    data: PathBuf,
    /// Model file.
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
    /// History CSV.
    #[arg(long, default_value = "history.csv")]
    history: PathBuf,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Use full (isotropic) kernels instead of the configured masks.
    #[arg(long)]
    isotropic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub architecture: Architecture,
    pub masks: MaskSpec,
    /// `seed` and `deterministic` are replaced by the run flags.
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            architecture: Architecture::standard(),
            masks: MaskSpec::Anisotropic {
                waves: WaveParams::default(),
                dx: 10.0,
                dt: 1.0,
            },
            train: TrainConfig::default(),
        }
    }
}

fn train_cmd(c: &Common, a: TrainArgs) -> Result<()> {
    let mut rec = Recorder::new("train", c.seed, c.deterministic);
    let mut job: TrainJob = read_config(a.config.as_deref(), &mut rec)?;
    if let Some(e) = a.epochs {
        job.train.epochs = e;
    }
    if a.isotropic {
        job.masks = MaskSpec::Isotropic;
    }
    job.train.seed = c.seed;
    job.train.deterministic = c.deterministic || job.train.deterministic;
    rec.config(&job)?;
    rec.input(&a.data);
    let data = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let model = ConvModel::<f32>::new(
        job.architecture.clone(),
        job.masks,
        job.train.v_scale,
        c.seed,
    )?;
    info!(
        "training {} parameters ({} kernels) on {} samples for {} epochs",
        model.count_params(),
        if job.masks.is_anisotropic() {
            "anisotropic"
        } else {
            "isotropic"
        },
        data.len(),
        job.train.epochs
    );
    let out = train(model, &data, &job.train)?;
    let model_path = out_path(c, &a.out);
    save_model(&out.model, &model_path)?;
    rec.output(&model_path);
    let history_path = out_path(c, &a.history);
    write_history_csv(&out.history, &history_path)?;
    rec.output(&history_path);
    info!(
        "best epoch {}; model in {}",
        out.best_epoch,
        model_path.display()
    );
    rec.write(&c.out_dir)?;
    Ok(())
}

// ------------------------------------------------------------- reconstruct

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["model", "ensemble"])]
pub struct ModelSource {
    /// Model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ensemble manifest (JSON list of member model files and rates).
    #[arg(long)]
    ensemble: Option<PathBuf>,
}

enum Loaded {
    Model(ConvModel<f32>),
    Ensemble(Ensemble),
}

impl Loaded {
    fn as_reconstructor(&self) -> &(dyn Reconstructor + Sync) {
        match self {
            Loaded::Model(m) => m,
            Loaded::Ensemble(e) => e,
        }
    }

    fn v_scale(&self) -> f64 {
        match self {
            Loaded::Model(m) => m.v_scale(),
            Loaded::Ensemble(e) => e.members()[0].model.v_scale(),
        }
    }
}

fn load_source(src: &ModelSource, rec: &mut Recorder) -> Result<Loaded> {
    if let Some(p) = &src.model {
        rec.input(p);
        let m = load_model(p).with_context(|| format!("loading {}", p.display()))?;
        return Ok(Loaded::Model(m));
    }
    let p = src
        .ensemble
        .as_ref()
        .ok_or_else(|| anyhow!("either --model or --ensemble is required"))?;
    rec.input(p);
    let e =
        Ensemble::from_manifest(p).with_context(|| format!("loading ensemble {}", p.display()))?;
    let scales: Vec<f64> = e.members().iter().map(|m| m.model.v_scale()).collect();
    if scales.iter().any(|s| *s != scales[0]) {
        bail!("ensemble members use different speed scales {scales:?}");
    }
    Ok(Loaded::Ensemble(e))
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Probe trajectory CSV (vehicle_id,t_s,x_m,v_kmph).
    #[arg(long)]
    probes: PathBuf,
    /// Grid size as NXxNT (space cells × time cells).
    #[arg(long, value_parser = parse_grid)]
    grid: (usize, usize),
    /// Upstream edge of the grid, metres.
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    /// Start of the grid, seconds; defaults to the earliest probe sample.
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    dx: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Field CSV (x_m,t_s,v_kmph).
    #[arg(long, default_value = "field.csv")]
    out: PathBuf,
    /// Field image (binary PPM).
    #[arg(long, default_value = "field.ppm")]
    image: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NXxNT, got '{s}'"))?;
    let nx = a.trim().parse().map_err(|_| format!("bad NX in '{s}'"))?;
    let nt = b.trim().parse().map_err(|_| format!("bad NT in '{s}'"))?;
    if nx == 0 || nt == 0 {
        return Err(format!("grid must be at least 1x1, got '{s}'"));
    }
    Ok((nx, nt))
}

#[derive(Debug, Serialize)]
struct ReconstructRecord {
    grid: SpaceTimeGrid,
    probes: usize,
    occupied_cells: usize,
}

fn reconstruct(c: &Common, a: ReconstructArgs) -> Result<()> {
    let mut rec = Recorder::new("reconstruct", c.seed, c.deterministic);
    let source = load_source(&a.source, &mut rec)?;
    rec.input(&a.probes);
    let probes = read_trajectories_csv(&a.probes)?;
    let t0 = match a.t0 {
        Some(t) => t,
        None => probes
            .iter()
            .filter_map(|t| t.t_first())
            .fold(f64::INFINITY, f64::min)
            .floor(),
    };
    if !t0.is_finite() {
        bail!(
            "{} has no probe samples; pass --t0 to reconstruct an empty grid",
            a.probes.display()
        );
    }
    let grid = SpaceTimeGrid::new(a.x0, t0, a.dx, a.dt, a.grid.0, a.grid.1)?;
    let input = encode_input(&probes, &grid, source.v_scale())?;
    rec.config(&ReconstructRecord {
        grid,
        probes: probes.len(),
        occupied_cells: input.occupied_cells(),
    })?;
    let field = source.as_reconstructor().reconstruct(&input)?;
    let csv = out_path(c, &a.out);
    export_field(&field, &csv, FieldFormat::Csv)?;
    rec.output(&csv);
    let img = out_path(c, &a.image);
    export_field(&field, &img, FieldFormat::Ppm)?;
    rec.output(&img);
    info!(
        "{}x{} field from {} probes ({} occupied cells), mean {:.1} km/h -> {}",
        grid.nx(),
        grid.nt(),
        probes.len(),
        input.occupied_cells(),
        field.mean(),
        csv.display()
    );
    rec.write(&c.out_dir)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Dataset cache with held-out samples.
    #[arg(long)]
    data: PathBuf,
    /// Per-regime RMSE table CSV.
    #[arg(long, default_value = "evaluation.csv")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TableRow<'a> {
    model: &'a str,
    params: usize,
    testset: &'a str,
    regime: &'static str,
    samples: usize,
    mean_rmse_kmph: f64,
    std_rmse_kmph: f64,
}

fn params_of(l: &Loaded) -> usize {
    match l {
        Loaded::Model(m) => m.count_params(),
        Loaded::Ensemble(e) => e.members().iter().map(|m| m.model.count_params()).sum(),
    }
}

fn table_rows<'a>(
    model: &'a str,
    params: usize,
    testset: &'a str,
    data: &[Sample],
    errs: &[f64],
) -> Vec<TableRow<'a>> {
    regime_table(data, errs)
        .into_iter()
        .map(|r| TableRow {
            model,
            params,
            testset,
            regime: r.label(),
            samples: r.samples,
            mean_rmse_kmph: r.mean_rmse,
            std_rmse_kmph: r.std_rmse,
        })
        .collect()
}

fn write_table(rows: &[TableRow], path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    for r in rows {
        println!(
            "{:<16} {:<16} {:<10} n={:<5} RMSE {:6.2} ± {:5.2} km/h",
            r.model, r.testset, r.regime, r.samples, r.mean_rmse_kmph, r.std_rmse_kmph
        );
    }
    Ok(())
}

fn file_label(p: &Path) -> String {
    p.file_stem().map_or_else(
        || p.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn evaluate(c: &Common, a: EvaluateArgs) -> Result<()> {
    let mut rec = Recorder::new("evaluate", c.seed, c.deterministic);
    let source = load_source(&a.source, &mut rec)?;
    rec.input(&a.data);
    let data = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    if data.is_empty() {
        bail!("{} holds no samples", a.data.display());
    }
    let errs = sample_rmses(&data, source.as_reconstructor())?;
    let name = file_label(
        a.source
            .model
            .as_ref()
            .or(a.source.ensemble.as_ref())
            .expect("one source"),
    );
    let testset = file_label(&a.data);
    let rows = table_rows(&name, params_of(&source), &testset, &data, &errs);
    rec.config(&serde_json::json!({ "model": name, "testset": testset }))?;
    let path = out_path(c, &a.out);
    write_table(&rows, &path)?;
    rec.output(&path);
    rec.write(&c.out_dir)?;
    Ok(())
}

// --------------------------------------------------------------- mask-info

#[derive(Debug, Args)]
pub struct MaskInfoArgs {
    #[arg(long, default_value_t = 7)]
    kh: usize,
    #[arg(long, default_value_t = 7)]
    kw: usize,
    /// Fastest free-flow wave speed, km/h.
    #[arg(long, default_value_t = 100.0)]
    cvmax: f64,
    /// Slowest free-flow wave speed, km/h.
    #[arg(long, default_value_t = 60.0)]
    cvmin: f64,
    /// Congested wave speed magnitude, km/h.
    #[arg(long, default_value_t = 18.0)]
    cw: f64,
    /// Cell length, metres.
    #[arg(long, default_value_t = 10.0)]
    dx: f64,
    /// Cell duration, seconds.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Full kernel instead of the wave-restricted one.
    #[arg(long)]
    isotropic: bool,
}

fn mask_info(c: &Common, a: MaskInfoArgs) -> Result<()> {
    let mut rec = Recorder::new("mask-info", c.seed, c.deterministic);
    let waves = WaveParams::new(a.cvmax, a.cvmin, a.cw)?;
    let mask = if a.isotropic {
        build_isotropic_mask(a.kh, a.kw)?
    } else {
        build_anisotropic_mask(a.kh, a.kw, &waves, a.dx, a.dt)?
    };
    rec.config(&serde_json::json!({
        "kh": a.kh, "kw": a.kw, "waves": waves, "dx": a.dx, "dt": a.dt, "isotropic": a.isotropic,
        "cardinality": mask.cardinality(),
    }))?;
    print!("{mask}");
    println!("cardinality: {}", mask.cardinality());
    rec.write(&c.out_dir)?;
    Ok(())
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated model files.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    /// Comma-separated dataset caches.
    #[arg(long, value_delimiter = ',', required = true)]
    testset: Vec<PathBuf>,
    /// Also write an equal-weight ensemble manifest of the models and
    /// include the ensemble in the table.
    #[arg(long)]
    ensemble_out: Option<PathBuf>,
    /// Penetration rate of each model (for the ensemble manifest).
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// Regime × model RMSE table CSV.
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

fn compare(c: &Common, a: CompareArgs) -> Result<()> {
    let mut rec = Recorder::new("compare", c.seed, c.deterministic);
    let mut models: Vec<(String, Loaded)> = Vec::new();
    for p in &a.models {
        rec.input(p);
        let m = load_model(p).with_context(|| format!("loading {}", p.display()))?;
        let mut label = file_label(p);
        if models.iter().any(|(l, _)| *l == label) {
            label = format!("{label}#{}", models.len() + 1);
        }
        models.push((label, Loaded::Model(m)));
    }
    if let Some(ens_path) = &a.ensemble_out {
        if a.rates.len() != a.models.len() {
            bail!(
                "--rates needs one rate per model ({} models, {} rates)",
                a.models.len(),
                a.rates.len()
            );
        }
        let members = a
            .models
            .iter()
            .zip(&a.rates)
            .map(|(p, r)| {
                Ok(ManifestEntry {
                    path: fs::canonicalize(p)
                        .with_context(|| format!("resolving {}", p.display()))?,
                    rate: *r,
                    weight: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = out_path(c, ens_path);
        EnsembleManifest { members }.write(&path)?;
        rec.output(&path);
        models.push((
            "ensemble".into(),
            Loaded::Ensemble(Ensemble::from_manifest(&path)?),
        ));
    }
    let mut sets = Vec::new();
    for p in &a.testset {
        rec.input(p);
        let d = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
        if d.is_empty() {
            bail!("{} holds no samples", p.display());
        }
        sets.push((file_label(p), d));
    }
    rec.config(&serde_json::json!({
        "models": models.iter().map(|m| &m.0).collect::<Vec<_>>(),
        "testsets": sets.iter().map(|s| &s.0).collect::<Vec<_>>(),
        "rates": a.rates,
    }))?;
    let mut errors = Vec::new();
    for (name, m) in &models {
        for (set, data) in &sets {
            errors.push((
                name.as_str(),
                params_of(m),
                set.as_str(),
                data,
                sample_rmses(data, m.as_reconstructor())?,
            ));
        }
    }
    let rows: Vec<TableRow> = errors
        .iter()
        .flat_map(|(name, params, set, data, errs)| table_rows(name, *params, set, data, errs))
        .collect();
    let path = out_path(c, &a.out);
    write_table(&rows, &path)?;
    rec.output(&path);
    rec.write(&c.out_dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_argument() {
        assert_eq!(parse_grid("80x60"), Ok((80, 60)));
        assert_eq!(parse_grid("8X 6"), Ok((8, 6)));
        assert!(parse_grid("80").is_err());
        assert!(parse_grid("0x5").is_err());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|k| derived_seed(3, k)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derived_seed(3, 0), derived_seed(4, 0));
    }
}
