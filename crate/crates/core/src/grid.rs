//! Space-time data model: the cell grid, vehicle trajectories, dense speed
//! fields, trajectory CSV I/O and Edie's generalized flow/density.
//!
//! Space is always the first axis (`i`, downstream positive) and time the
//! second (`j`, future positive). Cells are half-open on both axes, so a point
//! `(t, x)` belongs to exactly one cell `[x0 + i·dx, x0 + (i+1)·dx) ×
//! [t0 + j·dt, t0 + (j+1)·dt)`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Kilometres per hour in one metre per second.
pub const KMPH_PER_MPS: f64 = 3.6;

/// Hard upper bound for speed-field values.
pub const DEFAULT_SPEED_CAP_KMPH: f64 = 130.0;

#[inline]
pub fn kmph_to_mps(v: f64) -> f64 {
    v / KMPH_PER_MPS
}

#[inline]
pub fn mps_to_kmph(v: f64) -> f64 {
    v * KMPH_PER_MPS
}

/// Discretization of a road section into `nx × nt` cells of `dx` metres by
/// `dt` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    x0: f64,
    t0: f64,
    dx: f64,
    dt: f64,
    nx: usize,
    nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(x0: f64, t0: f64, dx: f64, dt: f64, nx: usize, nt: usize) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(invalid(format!("grid dx must be > 0, got {dx}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("grid dt must be > 0, got {dt}")));
        }
        if nx == 0 || nt == 0 {
            return Err(invalid(format!(
                "grid must have at least one cell, got {nx}x{nt}"
            )));
        }
        if !x0.is_finite() || !t0.is_finite() {
            return Err(invalid("grid origin must be finite"));
        }
        Ok(Self {
            x0,
            t0,
            dx,
            dt,
            nx,
            nt,
        })
    }

    /// The 10 m × 1 s grid anchored at the origin.
    pub fn standard(nx: usize, nt: usize) -> Result<Self> {
        Self::new(0.0, 0.0, 10.0, 1.0, nx, nt)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn len(&self) -> usize {
        self.nx * self.nt
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn x_end(&self) -> f64 {
        self.x0 + self.dx * self.nx as f64
    }
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.nt as f64
    }

    /// Centre position of space cell `i`.
    pub fn x_center(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.dx
    }

    /// Centre time of time cell `j`.
    pub fn t_center(&self, j: usize) -> f64 {
        self.t0 + (j as f64 + 0.5) * self.dt
    }

    /// Cell `(i, j)` containing the point, or `None` when it lies outside the
    /// domain.
    pub fn cell_of(&self, t: f64, x: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x0) / self.dx).floor();
        let fj = ((t - self.t0) / self.dt).floor();
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.nx && j < self.nt).then_some((i, j))
    }

    /// Sub-grid covering time cells `j0 .. j0 + nt`.
    pub fn time_window(&self, j0: usize, nt: usize) -> Result<Self> {
        if nt == 0 || j0 + nt > self.nt {
            return Err(invalid(format!(
                "time window {j0}+{nt} outside grid with {} columns",
                self.nt
            )));
        }
        Self::new(
            self.x0,
            self.t0 + j0 as f64 * self.dt,
            self.dx,
            self.dt,
            self.nx,
            nt,
        )
    }
}

/// One position/speed sample of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// seconds
    pub t: f64,
    /// metres
    pub x: f64,
    /// km/h
    pub v: f64,
}

impl TrajectorySample {
    pub fn new(t: f64, x: f64, v: f64) -> Self {
        Self { t, x, v }
    }
}

/// A vehicle's time-ordered samples on a one-directional road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    vehicle_id: String,
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    /// Builds a trajectory, checking that time strictly increases, position
    /// never decreases and speeds are non-negative.
    pub fn new(vehicle_id: impl Into<String>, samples: Vec<TrajectorySample>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        check_samples(&vehicle_id, &samples)?;
        Ok(Self {
            vehicle_id,
            samples,
        })
    }

    /// Builds a trajectory without checks. Callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(vehicle_id: String, samples: Vec<TrajectorySample>) -> Self {
        Self {
            vehicle_id,
            samples,
        }
    }

    pub fn vehicle_id(&self) -> &str {
        &self.vehicle_id
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_first(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn t_last(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Position and speed at time `t` by linear interpolation between the
    /// bracketing samples; `None` outside the sampled time span.
    pub fn state_at(&self, t: f64) -> Option<(f64, f64)> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let k = self.samples.partition_point(|s| s.t <= t);
        if k == 0 {
            return Some((first.x, first.v));
        }
        let a = self.samples[k - 1];
        if a.t == t || k == self.samples.len() {
            return Some((a.x, a.v));
        }
        let b = self.samples[k];
        let w = (t - a.t) / (b.t - a.t);
        Some((a.x + w * (b.x - a.x), a.v + w * (b.v - a.v)))
    }
}

fn check_samples(vehicle: &str, samples: &[TrajectorySample]) -> Result<()> {
    let err = |msg: String| Error::Trajectory {
        vehicle: vehicle.to_string(),
        msg,
    };
    for (k, s) in samples.iter().enumerate() {
        if !(s.t.is_finite() && s.x.is_finite() && s.v.is_finite()) {
            return Err(err(format!("non-finite value in sample {k}")));
        }
        if s.v < 0.0 {
            return Err(err(format!("negative speed {} at t={}", s.v, s.t)));
        }
        if k > 0 {
            let p = samples[k - 1];
            if s.t <= p.t {
                return Err(err(format!("time not strictly increasing at t={}", s.t)));
            }
            if s.x < p.x {
                return Err(err(format!("position decreases at t={}", s.t)));
            }
        }
    }
    Ok(())
}

/// Dense per-cell speeds (km/h) on a grid, stored space-major:
/// `values[i * nt + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl SpeedField {
    /// Wraps `values`, rejecting anything outside `[0, DEFAULT_SPEED_CAP_KMPH]`.
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "speed field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(**v >= 0.0 && **v <= DEFAULT_SPEED_CAP_KMPH))
        {
            return Err(invalid(format!(
                "speed {v} outside [0, {DEFAULT_SPEED_CAP_KMPH}] km/h"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Like [`SpeedField::new`] but clamps into the valid range; NaN maps to 0.
    pub fn clamped(grid: SpaceTimeGrid, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            *v = if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, DEFAULT_SPEED_CAP_KMPH)
            };
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: SpaceTimeGrid, v: f64) -> Result<Self> {
        Self::new(grid, vec![v; grid.len()])
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nt() + j]
    }

    /// Speeds of time column `j`, ordered by space.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.grid.nx()).map(|i| self.get(i, j)).collect()
    }

    /// Time slice of columns `j0 .. j0 + nt`.
    pub fn time_window(&self, j0: usize, nt: usize) -> Result<Self> {
        let grid = self.grid.time_window(j0, nt)?;
        let full_nt = self.grid.nt();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx() {
            let row = i * full_nt + j0;
            values.extend_from_slice(&self.values[row..row + nt]);
        }
        Ok(Self { grid, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    vehicle_id: String,
    t_s: f64,
    x_m: f64,
    v_kmph: f64,
}

/// Reads the long-format trajectory CSV (`vehicle_id,t_s,x_m,v_kmph`).
///
/// Vehicles are returned in order of first appearance. Rows of one vehicle
/// must appear in strictly increasing time; rows of different vehicles may be
/// interleaved.
pub fn read_trajectories_csv(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let headers = reader.headers()?.clone();
    let expected = ["vehicle_id", "t_s", "x_m", "v_kmph"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<TrajectorySample>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, format!("malformed row: {e}")))?;
        if !(row.t_s.is_finite() && row.x_m.is_finite() && row.v_kmph.is_finite()) {
            return Err(parse_err(line, "non-finite value".into()));
        }
        if row.v_kmph < 0.0 {
            return Err(parse_err(line, format!("negative speed {}", row.v_kmph)));
        }
        let slot = *index.entry(row.vehicle_id.clone()).or_insert_with(|| {
            groups.push((row.vehicle_id.clone(), Vec::new()));
            groups.len() - 1
        });
        let samples = &mut groups[slot].1;
        if let Some(prev) = samples.last() {
            if row.t_s <= prev.t {
                return Err(Error::Trajectory {
                    vehicle: row.vehicle_id,
                    msg: format!(
                        "non-monotonic time at line {line}: {} after {}",
                        row.t_s, prev.t
                    ),
                });
            }
        }
        samples.push(TrajectorySample::new(row.t_s, row.x_m, row.v_kmph));
    }
    groups
        .into_iter()
        .map(|(id, samples)| Trajectory::new(id, samples))
        .collect()
}

/// Writes trajectories in the long CSV format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_trajectories_csv(trajs: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    // Explicit header so that an empty file still carries it.
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    writer.write_record(["vehicle_id", "t_s", "x_m", "v_kmph"])?;
    for traj in trajs {
        for s in traj.samples() {
            writer.serialize(CsvRow {
                vehicle_id: traj.vehicle_id.clone(),
                t_s: s.t,
                x_m: s.x,
                v_kmph: s.v,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Rectangular space-time region `[t_start, t_end) × [x_start, x_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: f64,
    pub x_end: f64,
}

impl Region {
    pub fn new(t_start: f64, t_end: f64, x_start: f64, x_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            x_start,
            x_end,
        }
    }

    pub fn area(&self) -> f64 {
        (self.t_end - self.t_start) * (self.x_end - self.x_start)
    }
}

/// Edie flow (veh/h) and density (veh/km) of a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDensity {
    pub flow_vph: f64,
    pub density_vpkm: f64,
}

impl FlowDensity {
    /// Space-mean speed `q / k` in km/h, `None` for an empty region.
    pub fn speed_kmph(&self) -> Option<f64> {
        (self.density_vpkm > 0.0).then(|| self.flow_vph / self.density_vpkm)
    }
}

/// Edie's generalized flow and density: total distance travelled and total
/// time spent inside the region, each divided by its space-time area.
/// Trajectories are treated as piecewise linear between samples.
pub fn edie_flow_density(trajs: &[Trajectory], region: &Region) -> Result<FlowDensity> {
    let dt = region.t_end - region.t_start;
    let dx = region.x_end - region.x_start;
    if !(dt > 0.0 && dx > 0.0) {
        return Err(Error::Empty(format!(
            "region has non-positive extent ({dt} s × {dx} m)"
        )));
    }
    let mut distance = 0.0;
    let mut time = 0.0;
    for traj in trajs {
        for pair in traj.samples().windows(2) {
            if let Some((d, tau)) = clip_segment(pair[0], pair[1], region) {
                distance += d;
                time += tau;
            }
        }
    }
    let area = dt * dx;
    Ok(FlowDensity {
        flow_vph: distance / area * 3600.0,
        density_vpkm: time / area * 1000.0,
    })
}

/// Distance and duration of the part of segment `a → b` inside `region`
/// (Liang–Barsky clipping on the segment parameter).
fn clip_segment(a: TrajectorySample, b: TrajectorySample, region: &Region) -> Option<(f64, f64)> {
    let seg_t = b.t - a.t;
    let seg_x = b.x - a.x;
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 1.0;

    let mut clip = |start: f64, delta: f64, min: f64, max: f64| -> bool {
        if delta == 0.0 {
            return start >= min && start < max;
        }
        let s0 = (min - start) / delta;
        let s1 = (max - start) / delta;
        let (s0, s1) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
        lo = lo.max(s0);
        hi = hi.min(s1);
        lo < hi
    };
    if !clip(a.t, seg_t, region.t_start, region.t_end) {
        return None;
    }
    if !clip(a.x, seg_x, region.x_start, region.x_end) {
        return None;
    }
    let frac = hi - lo;
    Some((frac * seg_x.abs(), frac * seg_t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid80x60() -> SpaceTimeGrid {
        SpaceTimeGrid::standard(80, 60).unwrap()
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let s = |t, x, v| TrajectorySample::new(t, x, v);
        let trajs = vec![
            Trajectory::new("a", vec![s(0.0, 0.0, 50.0), s(1.0, 14.0, 51.5)]).unwrap(),
            Trajectory::new("b", vec![s(3.0, 7.0, 0.0)]).unwrap(),
        ];
        write_trajectories_csv(&trajs, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("vehicle_id").count(), 1);
        assert_eq!(read_trajectories_csv(&p).unwrap(), trajs);

        write_trajectories_csv(&[], &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "vehicle_id,t_s,x_m,v_kmph\n"
        );
        assert!(read_trajectories_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn cell_of_first_and_last_cells() {
        let g = grid80x60();
        assert_eq!(g.cell_of(0.5, 5.0), Some((0, 0)));
        assert_eq!(g.cell_of(59.9, 799.9), Some((79, 59)));
    }

    #[test]
    fn cell_of_upper_edge_is_exclusive() {
        let g = grid80x60();
        assert_eq!(g.cell_of(60.0, 5.0), None);
        assert_eq!(g.cell_of(5.0, 800.0), None);
        assert_eq!(g.cell_of(-0.001, 5.0), None);
        assert_eq!(g.cell_of(f64::NAN, 5.0), None);
        assert_eq!(g.cell_of(0.0, 0.0), Some((0, 0)));
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(SpaceTimeGrid::new(0.0, 0.0, 0.0, 1.0, 1, 1).is_err());
        assert!(SpaceTimeGrid::new(0.0, 0.0, 1.0, -1.0, 1, 1).is_err());
        assert!(SpaceTimeGrid::new(0.0, 0.0, 1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let ok = vec![
            TrajectorySample::new(0.0, 0.0, 10.0),
            TrajectorySample::new(1.0, 3.0, 10.0),
        ];
        assert!(Trajectory::new("a", ok).is_ok());
        let back = vec![
            TrajectorySample::new(0.0, 5.0, 10.0),
            TrajectorySample::new(1.0, 3.0, 10.0),
        ];
        assert!(Trajectory::new("a", back).is_err());
        let same_t = vec![
            TrajectorySample::new(1.0, 0.0, 10.0),
            TrajectorySample::new(1.0, 3.0, 10.0),
        ];
        assert!(Trajectory::new("a", same_t).is_err());
        let neg = vec![TrajectorySample::new(1.0, 0.0, -1.0)];
        assert!(Trajectory::new("a", neg).is_err());
    }

    #[test]
    fn state_at_interpolates() {
        let tr = Trajectory::new(
            "a",
            vec![
                TrajectorySample::new(0.0, 0.0, 36.0),
                TrajectorySample::new(2.0, 20.0, 72.0),
            ],
        )
        .unwrap();
        assert_eq!(tr.state_at(1.0), Some((10.0, 54.0)));
        assert_eq!(tr.state_at(2.0), Some((20.0, 72.0)));
        assert_eq!(tr.state_at(2.1), None);
    }

    fn crossing_vehicle(id: &str) -> Trajectory {
        // 72 km/h = 20 m/s, enters x=0 at t=0, exits x=200 at t=10
        Trajectory::new(
            id,
            (0..=20)
                .map(|k| {
                    let t = -5.0 + k as f64;
                    TrajectorySample::new(t, 20.0 * t, 72.0)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn edie_single_vehicle() {
        let region = Region::new(0.0, 10.0, 0.0, 200.0);
        let fd = edie_flow_density(&[crossing_vehicle("a")], &region).unwrap();
        assert!((fd.flow_vph - 360.0).abs() < 1e-9, "{fd:?}");
        assert!((fd.density_vpkm - 5.0).abs() < 1e-9, "{fd:?}");
        assert!((fd.speed_kmph().unwrap() - 72.0).abs() < 1e-9 * 72.0);
    }

    #[test]
    fn edie_two_vehicles_double() {
        let region = Region::new(0.0, 10.0, 0.0, 200.0);
        let one = edie_flow_density(&[crossing_vehicle("a")], &region).unwrap();
        let two =
            edie_flow_density(&[crossing_vehicle("a"), crossing_vehicle("b")], &region).unwrap();
        assert_eq!(two.flow_vph, 2.0 * one.flow_vph);
        assert_eq!(two.density_vpkm, 2.0 * one.density_vpkm);
        assert!((two.flow_vph - 720.0).abs() < 1e-9);
        assert!((two.density_vpkm - 10.0).abs() < 1e-9);
    }

    #[test]
    fn edie_empty_region_and_no_vehicles() {
        let region = Region::new(0.0, 10.0, 0.0, 200.0);
        let fd = edie_flow_density(&[], &region).unwrap();
        assert_eq!((fd.flow_vph, fd.density_vpkm), (0.0, 0.0));
        assert!(edie_flow_density(&[], &Region::new(0.0, 0.0, 0.0, 200.0)).is_err());
    }

    #[test]
    fn edie_stationary_vehicle_counts_time_only() {
        let stopped = Trajectory::new(
            "s",
            vec![
                TrajectorySample::new(0.0, 50.0, 0.0),
                TrajectorySample::new(10.0, 50.0, 0.0),
            ],
        )
        .unwrap();
        let fd = edie_flow_density(&[stopped], &Region::new(0.0, 10.0, 0.0, 100.0)).unwrap();
        assert_eq!(fd.flow_vph, 0.0);
        assert!((fd.density_vpkm - 10.0).abs() < 1e-12);
    }

    #[test]
    fn field_window_and_bounds() {
        let g = SpaceTimeGrid::standard(2, 3).unwrap();
        let f = SpeedField::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = f.time_window(1, 2).unwrap();
        assert_eq!(w.values(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(w.grid().t0(), 1.0);
        assert!(SpeedField::new(g, vec![-1.0; 6]).is_err());
        assert!(SpeedField::new(g, vec![1.0; 5]).is_err());
        let c = SpeedField::clamped(g, vec![f64::NAN, 500.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.values()[..2], [0.0, DEFAULT_SPEED_CAP_KMPH]);
    }
}
