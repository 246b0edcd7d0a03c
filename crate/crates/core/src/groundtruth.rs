//! Dense "true" speed field from a complete set of vehicle trajectories.
//!
//! At each time column every vehicle present is placed by linear
//! interpolation of its samples. Each cell centre `x` then looks at the
//! nearest vehicle upstream (`x_up <= x`) and downstream (`x_dn >= x`):
//!
//! | upstream within `l_up` | downstream within `l_dn` | speed |
//! |---|---|---|
//! | yes | yes | `w·V_up + (1-w)·V_dn`, `w = d_dn / (d_up + d_dn)` |
//! | yes | no  | `w·V_up + (1-w)·V_max`, `w = 1 - d_up / l_up` |
//! | no  | yes | `w·V_dn + (1-w)·V_max`, `w = 1 - d_dn / l_dn` |
//! | no  | no  | `V_max` |
//!
//! with `d_up = x - x_up` and `d_dn = x_dn - x`. A cell holding a stopped
//! vehicle is exactly 0. Vehicle speeds are capped at `V_max` first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{SpaceTimeGrid, SpeedField, Trajectory};

/// Interaction parameters of the interpolation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationParams {
    /// km/h
    pub v_max: f64,
    /// metres
    pub l_up: f64,
    /// metres
    pub l_dn: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        Self {
            v_max: 95.0,
            l_up: 80.0,
            l_dn: 40.0,
        }
    }
}

impl InterpolationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(invalid(format!("V_max must be > 0, got {}", self.v_max)));
        }
        if !(self.l_dn > 0.0 && self.l_up > self.l_dn && self.l_up.is_finite()) {
            return Err(invalid(format!(
                "interaction lengths need l_up > l_dn > 0, got l_up={}, l_dn={}",
                self.l_up, self.l_dn
            )));
        }
        Ok(())
    }

    /// Speed at a point given its nearest neighbours as `(distance, speed)`.
    pub fn blend(&self, upstream: Option<(f64, f64)>, downstream: Option<(f64, f64)>) -> f64 {
        let up = upstream.filter(|(d, _)| *d < self.l_up);
        let dn = downstream.filter(|(d, _)| *d < self.l_dn);
        // convex combinations of capped speeds; the clamp only absorbs rounding
        let v = match (up, dn) {
            (Some((d_up, v_up)), Some((d_dn, v_dn))) => {
                let w = if d_up + d_dn > 0.0 {
                    d_dn / (d_up + d_dn)
                } else {
                    1.0
                };
                w * v_up + (1.0 - w) * v_dn
            }
            (Some((d_up, v_up)), None) => {
                let w = 1.0 - d_up / self.l_up;
                w * v_up + (1.0 - w) * self.v_max
            }
            (None, Some((d_dn, v_dn))) => {
                let w = 1.0 - d_dn / self.l_dn;
                w * v_dn + (1.0 - w) * self.v_max
            }
            (None, None) => self.v_max,
        };
        v.clamp(0.0, self.v_max)
    }
}

/// Builds the ground-truth field on `grid`.
pub fn interpolate_speed_field(
    trajs: &[Trajectory],
    grid: &SpaceTimeGrid,
    params: &InterpolationParams,
) -> Result<SpeedField> {
    params.validate()?;
    let (nx, nt) = (grid.nx(), grid.nt());

    let columns: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|j| column_speeds(trajs, grid, params, j))
        .collect();

    let mut values = vec![0.0; nx * nt];
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            values[i * nt + j] = v;
        }
    }
    SpeedField::new(*grid, values)
}

fn column_speeds(
    trajs: &[Trajectory],
    grid: &SpaceTimeGrid,
    params: &InterpolationParams,
    j: usize,
) -> Vec<f64> {
    let t = grid.t_center(j);
    let mut present: Vec<(f64, f64)> = trajs
        .iter()
        .filter_map(|tr| tr.state_at(t))
        .map(|(x, v)| (x, v.clamp(0.0, params.v_max)))
        .collect();
    present.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut col = Vec::with_capacity(grid.nx());
    // `next` = index of the first vehicle with position >= cell centre
    let mut next = 0;
    for i in 0..grid.nx() {
        let x = grid.x_center(i);
        while next < present.len() && present[next].0 < x {
            next += 1;
        }
        // a vehicle exactly at the centre is both upstream and downstream
        let upstream = if next < present.len() && present[next].0 == x {
            Some(present[next])
        } else {
            next.checked_sub(1).map(|k| present[k])
        };
        let downstream = present.get(next).copied();
        let v = params.blend(
            upstream.map(|(xu, v)| (x - xu, v)),
            downstream.map(|(xd, v)| (xd - x, v)),
        );
        col.push(v);
    }

    // stopped vehicles pin their own cell to zero
    for &(x, v) in &present {
        if v == 0.0 {
            if let Some((i, _)) = grid.cell_of(t, x) {
                col[i] = 0.0;
            }
        }
    }
    col
}
