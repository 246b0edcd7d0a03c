mod common;

use common::{aniso, tiny_arch};
use speedfield::ensemble::Ensemble;
use speedfield::eval::{export_field, read_field_csv, rmse, rmse_by_regime, FieldFormat};
use speedfield::microsim::{DriverParams, Regime, RoadLayout};
use speedfield::nn::{load_model, save_model, ConvModel, Reconstructor};
use speedfield::training::{
    build_dataset, load_dataset, save_dataset, simulate_frame, train, DatasetConfig, Sample,
    TrainConfig,
};

fn frames(seed: u64) -> Vec<speedfield::training::Frame> {
    [Regime::Congested, Regime::Free]
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            simulate_frame(
                r,
                &RoadLayout::default(),
                &DriverParams::default(),
                120.0,
                90,
                seed + k as u64,
            )
            .unwrap()
        })
        .collect()
}

fn dataset(seed: u64) -> Vec<Sample> {
    let cfg = DatasetConfig {
        stride_s: 10.0,
        seed,
        ..DatasetConfig::default()
    };
    build_dataset(&frames(seed), &cfg).unwrap()
}

fn run(seed: u64) -> (Vec<Sample>, ConvModel<f32>, Vec<u8>) {
    let ds = dataset(seed);
    let model = ConvModel::<f32>::new(tiny_arch(), aniso(10.0, 1.0), 128.0, seed).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 2,
        seed,
        ..TrainConfig::default()
    };
    let out = train(model, &ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    save_model(&out.model, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    (ds, out.model, bytes)
}

#[test]
fn end_to_end_is_reproducible_across_thread_counts() {
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let a = pool(1).install(|| run(5));
    let b = pool(4).install(|| run(5));
    assert_eq!(a.0, b.0);
    assert_eq!(a.2, b.2);
    let c = run(6);
    assert_ne!(a.2, c.2);
}

#[test]
fn dataset_and_model_files_round_trip() {
    let (ds, model, _) = run(1);
    assert_eq!(ds.len(), 2 * 4);
    assert!(ds.iter().any(|s| s.regime == Regime::Free));
    let dir = tempfile::tempdir().unwrap();
    let dp = dir.path().join("d.bin");
    save_dataset(&ds, &dp).unwrap();
    assert_eq!(load_dataset(&dp).unwrap(), ds);

    let mp = dir.path().join("m.bin");
    save_model(&model, &mp).unwrap();
    let back: ConvModel<f32> = load_model(&mp).unwrap();
    let (p1, p2) = (
        model.predict(&ds[0].input).unwrap(),
        back.predict(&ds[0].input).unwrap(),
    );
    assert_eq!(p1, p2);

    std::fs::write(&dp, b"not a dataset").unwrap();
    assert!(load_dataset(&dp).is_err());
}

#[test]
fn evaluation_outputs() {
    let (ds, model, _) = run(2);
    let rows = rmse_by_regime(&ds, &model).unwrap();
    assert_eq!(rows.last().unwrap().label(), "total");
    assert_eq!(rows.last().unwrap().samples, ds.len());
    for r in &rows {
        assert!(r.mean_rmse.is_finite() && r.mean_rmse >= 0.0);
    }

    let dir = tempfile::tempdir().unwrap();
    let field = model.predict(&ds[0].input).unwrap();
    let csv = dir.path().join("f.csv");
    export_field(&field, &csv, FieldFormat::Csv).unwrap();
    export_field(&field, dir.path().join("f.ppm"), FieldFormat::Ppm).unwrap();
    let back = read_field_csv(&csv).unwrap();
    assert!(rmse(&back, &field).unwrap() < 1e-6);

    let single = Ensemble::new(vec![(model.clone(), 0.05)]).unwrap();
    assert_eq!(single.reconstruct(&ds[0].input).unwrap(), field);
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let ds = dataset(3);
    let model = ConvModel::<f32>::new(tiny_arch(), aniso(10.0, 1.0), 128.0, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let out = train(model.clone(), &ds, &cfg).unwrap();
    assert_eq!(out.model, model);
    assert_eq!(out.history.len(), 1);
}

#[test]
fn best_checkpoint_selection() {
    let ds = dataset(4);
    let argmin = |v: &[f64]| {
        // ties go to the later epoch
        let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
        v.iter().rposition(|x| *x == m).unwrap() + 1
    };
    for val_fraction in [0.0, 0.25] {
        let model = ConvModel::<f32>::new(tiny_arch(), aniso(10.0, 1.0), 128.0, 4).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 6,
            learning_rate: 0.03,
            val_fraction,
            ..TrainConfig::default()
        };
        let out = train(model, &ds, &cfg).unwrap();
        let scores: Vec<f64> = out
            .history
            .iter()
            .map(|h| h.val_loss.unwrap_or(h.train_loss))
            .collect();
        assert_eq!(
            out.best_epoch,
            argmin(&scores),
            "val_fraction {val_fraction}"
        );
    }
}
