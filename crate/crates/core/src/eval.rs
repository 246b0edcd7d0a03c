//! Error metrics, wave-speed measurement and field/scatter export.
//!
//! Field images are binary PPM (`P6`), `nt` pixels wide and `nx` pixels high
//! with the most downstream row at the top. Speeds map through a fixed
//! piecewise-linear colormap: 0 km/h dark red (128, 0, 0), 30 km/h red
//! (255, 0, 0), 60 km/h yellow (255, 255, 0), 90 km/h green (0, 200, 0) and
//! 130 km/h and above dark green (0, 100, 0).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{edie_flow_density, kmph_to_mps, Region, SpaceTimeGrid, SpeedField, Trajectory};
use crate::microsim::Regime;
use crate::nn::Reconstructor;
use crate::training::Sample;

fn same_grid(a: &SpaceTimeGrid, b: &SpaceTimeGrid) -> bool {
    a.nx() == b.nx()
        && a.nt() == b.nt()
        && (a.dx() - b.dx()).abs() < 1e-9
        && (a.dt() - b.dt()).abs() < 1e-9
        && (a.x0() - b.x0()).abs() < 1e-6
        && (a.t0() - b.t0()).abs() < 1e-6
}

/// Root mean squared difference over all cells, km/h.
pub fn rmse(estimate: &SpeedField, truth: &SpeedField) -> Result<f64> {
    if !same_grid(estimate.grid(), truth.grid()) {
        return Err(Error::Shape(
            "RMSE between fields on different grids".into(),
        ));
    }
    let n = estimate.values().len() as f64;
    let sum: f64 = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / n).sqrt())
}

/// Per-sample RMSE statistics for one regime (`None` = all samples).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: Option<Regime>,
    pub samples: usize,
    pub mean_rmse: f64,
    /// Sample standard deviation; 0 for a single sample.
    pub std_rmse: f64,
}

impl RegimeRow {
    pub fn label(&self) -> &'static str {
        self.regime.map_or("total", Regime::name)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-sample RMSE of `model` on every sample.
pub fn sample_rmses(samples: &[Sample], model: &(dyn Reconstructor + Sync)) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| rmse(&model.reconstruct(&s.input)?, &s.target))
        .collect()
}

/// Rows for every regime present (congested, slow, free order) plus a total
/// row.
pub fn rmse_by_regime(
    samples: &[Sample],
    model: &(dyn Reconstructor + Sync),
) -> Result<Vec<RegimeRow>> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let errors = sample_rmses(samples, model)?;
    Ok(regime_table(samples, &errors))
}

/// Groups precomputed per-sample errors by regime.
pub fn regime_table(samples: &[Sample], errors: &[f64]) -> Vec<RegimeRow> {
    let mut rows = Vec::new();
    for regime in Regime::ALL {
        let e: Vec<f64> = samples
            .iter()
            .zip(errors)
            .filter(|(s, _)| s.regime == regime)
            .map(|(_, e)| *e)
            .collect();
        if !e.is_empty() {
            let (mean_rmse, std_rmse) = mean_std(&e);
            rows.push(RegimeRow {
                regime: Some(regime),
                samples: e.len(),
                mean_rmse,
                std_rmse,
            });
        }
    }
    let (mean_rmse, std_rmse) = mean_std(errors);
    rows.push(RegimeRow {
        regime: None,
        samples: errors.len(),
        mean_rmse,
        std_rmse,
    });
    rows
}

/// Candidate wave speeds and lags searched by [`wave_speed_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveSearch {
    pub min_kmph: f64,
    pub max_kmph: f64,
    pub step_kmph: f64,
    /// Column lags `1..=max_lag` are pooled.
    pub max_lag: usize,
}

impl Default for WaveSearch {
    fn default() -> Self {
        Self {
            min_kmph: -40.0,
            max_kmph: 120.0,
            step_kmph: 0.5,
            max_lag: 10,
        }
    }
}

/// Signed propagation speed (km/h, downstream positive) of the dominant
/// pattern in `field`, or `None` for a field without variation.
///
/// For each candidate speed `c`, column `j + L` is compared with column `j`
/// shifted downstream by `c·L·dt` (linear interpolation in space) over all
/// lags `L ≤ max_lag`; the candidate with the highest pooled Pearson
/// correlation wins.
pub fn wave_speed_estimate(field: &SpeedField) -> Option<f64> {
    wave_speed_estimate_with(field, &WaveSearch::default())
}

pub fn wave_speed_estimate_with(field: &SpeedField, search: &WaveSearch) -> Option<f64> {
    let g = field.grid();
    if g.nt() < 2 || g.nx() < 2 || !(search.step_kmph > 0.0) || search.max_kmph < search.min_kmph {
        return None;
    }
    let vals = field.values();
    let first = vals[0];
    if vals.iter().all(|v| *v == first) {
        return None;
    }
    let n_cand = ((search.max_kmph - search.min_kmph) / search.step_kmph).round() as usize + 1;
    let max_lag = search.max_lag.clamp(1, g.nt() - 1);
    let scores: Vec<(f64, f64)> = (0..n_cand)
        .into_par_iter()
        .map(|k| {
            let c = search.min_kmph + k as f64 * search.step_kmph;
            (c, shifted_correlation(field, c, max_lag))
        })
        .collect();
    scores
        .into_iter()
        .filter(|(_, r)| r.is_finite())
        .fold(None, |best: Option<(f64, f64)>, (c, r)| match best {
            Some((_, rb)) if rb >= r => best,
            _ => Some((c, r)),
        })
        .map(|(c, _)| c)
}

fn shifted_correlation(field: &SpeedField, c_kmph: f64, max_lag: usize) -> f64 {
    let g = field.grid();
    let (nx, nt) = (g.nx(), g.nt());
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for lag in 1..=max_lag {
        // cells travelled in `lag` columns
        let shift = kmph_to_mps(c_kmph) * lag as f64 * g.dt() / g.dx();
        for j in 0..nt - lag {
            for i in 0..nx {
                let src = i as f64 - shift;
                if src < 0.0 || src > (nx - 1) as f64 {
                    continue;
                }
                let i0 = src.floor() as usize;
                let frac = src - i0 as f64;
                let before = if frac > 0.0 {
                    field.get(i0, j) * (1.0 - frac) + field.get(i0 + 1, j) * frac
                } else {
                    field.get(i0, j)
                };
                let after = field.get(i, j + lag);
                n += 1.0;
                sa += before;
                sb += after;
                saa += before * before;
                sbb += after * after;
                sab += before * after;
            }
        }
    }
    if n < 2.0 {
        return f64::NAN;
    }
    let cov = sab - sa * sb / n;
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 0.0 || vb <= 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Csv,
    Ppm,
}

/// Writes `field` as CSV or PPM (see the module docs).
pub fn export_field(field: &SpeedField, path: impl AsRef<Path>, format: FieldFormat) -> Result<()> {
    match format {
        FieldFormat::Csv => write_field_csv(field, path),
        FieldFormat::Ppm => write_field_ppm(field, path),
    }
}

/// `x_m,t_s,v_kmph` at cell centres, space-major.
pub fn write_field_csv(field: &SpeedField, path: impl AsRef<Path>) -> Result<()> {
    let g = field.grid();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_m", "t_s", "v_kmph"])?;
    for i in 0..g.nx() {
        for j in 0..g.nt() {
            w.serialize((g.x_center(i), g.t_center(j), field.get(i, j)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a field CSV written by [`write_field_csv`]; the grid is recovered
/// from the distinct cell centres, which must form a complete regular grid.
pub fn read_field_csv(path: impl AsRef<Path>) -> Result<SpeedField> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", path.display())));
    }
    let axis = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = rows
            .iter()
            .map(|r| if k == 0 { r.0 } else { r.1 })
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        v
    };
    let (xs, ts) = (axis(0), axis(1));
    let spacing = |v: &[f64], default: f64| if v.len() > 1 { v[1] - v[0] } else { default };
    let (dx, dt) = (spacing(&xs, 1.0), spacing(&ts, 1.0));
    let grid = SpaceTimeGrid::new(
        xs[0] - dx / 2.0,
        ts[0] - dt / 2.0,
        dx,
        dt,
        xs.len(),
        ts.len(),
    )?;
    if rows.len() != grid.len() {
        return Err(invalid(format!(
            "{}: {} rows do not fill a {}x{} grid",
            path.display(),
            rows.len(),
            grid.nx(),
            grid.nt()
        )));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for (x, t, v) in rows {
        let i = ((x - xs[0]) / dx).round() as usize;
        let j = ((t - ts[0]) / dt).round() as usize;
        if i >= grid.nx() || j >= grid.nt() {
            return Err(invalid(format!(
                "{}: irregular cell centre ({x}, {t})",
                path.display()
            )));
        }
        values[i * grid.nt() + j] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid(format!(
            "{}: duplicate or missing cells",
            path.display()
        )));
    }
    SpeedField::new(grid, values)
}

/// Colour of a speed under the fixed colormap.
pub fn speed_color(v_kmph: f64) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [128.0, 0.0, 0.0]),
        (30.0, [255.0, 0.0, 0.0]),
        (60.0, [255.0, 255.0, 0.0]),
        (90.0, [0.0, 200.0, 0.0]),
        (130.0, [0.0, 100.0, 0.0]),
    ];
    let v = if v_kmph.is_nan() {
        0.0
    } else {
        v_kmph.clamp(0.0, 130.0)
    };
    let k = STOPS
        .iter()
        .rposition(|(s, _)| *s <= v)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (v0, c0) = STOPS[k];
    let (v1, c1) = STOPS[k + 1];
    let u = (v - v0) / (v1 - v0);
    std::array::from_fn(|c| (c0[c] + u * (c1[c] - c0[c])).round() as u8)
}

pub fn write_field_ppm(field: &SpeedField, path: impl AsRef<Path>) -> Result<()> {
    let g = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", g.nt(), g.nx())?;
    for i in (0..g.nx()).rev() {
        for j in 0..g.nt() {
            w.write_all(&speed_color(field.get(i, j)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Edie flow and density of one space-time tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x_start_m: f64,
    pub t_start_s: f64,
    pub density_vpkm: f64,
    pub flow_vph: f64,
}

/// Default flow–density tile, 50 m × 30 s.
pub const DEFAULT_TILE: (f64, f64) = (50.0, 30.0);

/// Tiles `extent` into `tile_dx × tile_dt` regions (partial tiles at the far
/// edges are dropped) and measures each.
pub fn flow_density_tiles(
    trajs: &[Trajectory],
    extent: &Region,
    tile_dx: f64,
    tile_dt: f64,
) -> Result<Vec<ScatterPoint>> {
    if !(tile_dx > 0.0 && tile_dt > 0.0) {
        return Err(invalid(format!(
            "tile size must be > 0, got {tile_dx} x {tile_dt}"
        )));
    }
    let nx = ((extent.x_end - extent.x_start) / tile_dx + 1e-9).floor() as usize;
    let nt = ((extent.t_end - extent.t_start) / tile_dt + 1e-9).floor() as usize;
    if nx == 0 || nt == 0 {
        return Err(Error::Empty("extent smaller than one tile".into()));
    }
    let mut out = Vec::with_capacity(nx * nt);
    for a in 0..nx {
        for b in 0..nt {
            let x0 = extent.x_start + a as f64 * tile_dx;
            let t0 = extent.t_start + b as f64 * tile_dt;
            let fd = edie_flow_density(trajs, &Region::new(t0, t0 + tile_dt, x0, x0 + tile_dx))?;
            out.push(ScatterPoint {
                x_start_m: x0,
                t_start_s: t0,
                density_vpkm: fd.density_vpkm,
                flow_vph: fd.flow_vph,
            });
        }
    }
    Ok(out)
}

/// Writes `x_start_m,t_start_s,density_vpkm,flow_vph` per tile.
pub fn write_scatter_csv(points: &[ScatterPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if points.is_empty() {
        w.write_record(["x_start_m", "t_start_s", "density_vpkm", "flow_vph"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Tiles with [`DEFAULT_TILE`] and writes the scatter CSV.
pub fn export_scatter(trajs: &[Trajectory], extent: &Region, path: impl AsRef<Path>) -> Result<()> {
    let points = flow_density_tiles(trajs, extent, DEFAULT_TILE.0, DEFAULT_TILE.1)?;
    write_scatter_csv(&points, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(nx: usize, nt: usize, f: impl Fn(usize, usize) -> f64) -> SpeedField {
        let grid = SpaceTimeGrid::standard(nx, nt).unwrap();
        let mut v = Vec::with_capacity(nx * nt);
        for i in 0..nx {
            for j in 0..nt {
                v.push(f(i, j));
            }
        }
        SpeedField::new(grid, v).unwrap()
    }

    /// Smooth bump travelling at `c` km/h.
    fn band(c_kmph: f64) -> SpeedField {
        let v = kmph_to_mps(c_kmph);
        field(80, 60, |i, j| {
            let x = i as f64 * 10.0 + 5.0 - v * (j as f64 + 0.5);
            let d = (x - 300.0) / 60.0;
            80.0 - 50.0 * (-d * d).exp()
        })
    }

    #[test]
    fn rmse_examples() {
        let a = field(4, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = field(4, 3, |i, j| (i * 3 + j) as f64 + 5.0);
        assert!((rmse(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        let c = field(3, 4, |_, _| 0.0);
        assert!(rmse(&a, &c).is_err());
    }

    #[test]
    fn wave_speed_on_translated_bands() {
        for c in [-18.0, 80.0, 0.0, 55.0] {
            let est = wave_speed_estimate(&band(c)).unwrap();
            assert!((est - c).abs() <= 0.5, "{c}: {est}");
        }
        assert_eq!(wave_speed_estimate(&field(5, 5, |_, _| 42.0)), None);
    }

    #[test]
    fn regime_rows() {
        let rows = regime_table(&[], &[]);
        assert_eq!(rows.len(), 1);
        assert!((mean_std(&[1.0, 3.0]).1 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(speed_color(0.0), [128, 0, 0]);
        assert_eq!(speed_color(60.0), [255, 255, 0]);
        assert_eq!(speed_color(500.0), [0, 100, 0]);
        assert_eq!(speed_color(45.0), [255, 128, 0]);
    }

    #[test]
    fn csv_round_trip_and_image_size() {
        let dir = tempfile::tempdir().unwrap();
        let f = band(-18.0);
        let p = dir.path().join("f.csv");
        write_field_csv(&f, &p).unwrap();
        let back = read_field_csv(&p).unwrap();
        assert_eq!(back.grid().nx(), 80);
        assert!(back
            .values()
            .iter()
            .zip(f.values())
            .all(|(a, b)| (a - b).abs() <= 1e-6 * b.abs().max(1.0)));
        let rows = std::fs::read_to_string(&p).unwrap().lines().count() - 1;
        assert_eq!(rows, 80 * 60);
        let img = dir.path().join("f.ppm");
        write_field_ppm(&f, &img).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n60 80\n255\n"));
        assert_eq!(bytes.len(), "P6\n60 80\n255\n".len() + 60 * 80 * 3);
    }
}
