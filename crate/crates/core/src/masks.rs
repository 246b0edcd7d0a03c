//! Binary kernel support masks.
//!
//! An anisotropic mask keeps only the kernel cells that a traffic wave through
//! the kernel centre can reach: the free-flow cone bounded by the slowest and
//! fastest desired speeds (downstream in the future, upstream in the past) and
//! the congested line travelling upstream at the shockwave speed.
//!
//! Kernel offsets are `(i, j)` with `i` in space (rows, downstream positive)
//! and `j` in time (columns, future positive). Each cell occupies the closed
//! rectangle `[i - ½, i + ½] × [j - ½, j + ½]` in units of cells; a cell is in
//! the support when a wave line touches that rectangle. The centre time column
//! contributes only the centre cell itself.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::kmph_to_mps;

/// Wave propagation speeds, all in km/h and all positive. `c_w` is the
/// magnitude of the upstream-moving congested wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub c_v_max: f64,
    pub c_v_min: f64,
    pub c_w: f64,
}

impl WaveParams {
    pub fn new(c_v_max: f64, c_v_min: f64, c_w: f64) -> Result<Self> {
        let w = Self {
            c_v_max,
            c_v_min,
            c_w,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_v_min > 0.0 && self.c_v_max >= self.c_v_min && self.c_v_max.is_finite()) {
            return Err(invalid(format!(
                "free-flow wave speeds need 0 < c_v_min <= c_v_max, got [{}, {}]",
                self.c_v_min, self.c_v_max
            )));
        }
        if !(self.c_w > 0.0 && self.c_w.is_finite()) {
            return Err(invalid(format!("c_w must be > 0, got {}", self.c_w)));
        }
        Ok(())
    }
}

impl Default for WaveParams {
    /// 100 / 60 km/h free-flow range, 18 km/h shockwave.
    fn default() -> Self {
        Self {
            c_v_max: 100.0,
            c_v_min: 60.0,
            c_w: 18.0,
        }
    }
}

/// Binary `k_h × k_w` support of a convolution kernel (rows = space offsets,
/// columns = time offsets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMask {
    k_h: usize,
    k_w: usize,
    cells: Vec<bool>,
}

impl KernelMask {
    /// Builds a mask from row-major cells. Sizes must be odd and the centre
    /// cell set.
    pub fn from_cells(k_h: usize, k_w: usize, cells: Vec<bool>) -> Result<Self> {
        check_odd(k_h, k_w)?;
        if cells.len() != k_h * k_w {
            return Err(invalid(format!(
                "mask has {} cells, expected {}",
                cells.len(),
                k_h * k_w
            )));
        }
        if !cells[(k_h / 2) * k_w + k_w / 2] {
            return Err(invalid("mask centre cell must be set"));
        }
        Ok(Self { k_h, k_w, cells })
    }

    pub fn k_h(&self) -> usize {
        self.k_h
    }

    pub fn k_w(&self) -> usize {
        self.k_w
    }

    pub fn half_h(&self) -> isize {
        (self.k_h / 2) as isize
    }

    pub fn half_w(&self) -> isize {
        (self.k_w / 2) as isize
    }

    /// Row-major cells.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Whether kernel offset `(i, j)` is in the support; offsets outside the
    /// kernel are not.
    pub fn contains(&self, i: isize, j: isize) -> bool {
        let (hh, hw) = (self.half_h(), self.half_w());
        if i.abs() > hh || j.abs() > hw {
            return false;
        }
        self.cells[((i + hh) as usize) * self.k_w + (j + hw) as usize]
    }

    pub fn cardinality(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|c| *c)
    }

    /// Offsets `(i, j)` in the support, row-major.
    pub fn support(&self) -> Vec<(isize, isize)> {
        let (hh, hw) = (self.half_h(), self.half_w());
        (-hh..=hh)
            .flat_map(|i| (-hw..=hw).map(move |j| (i, j)))
            .filter(|&(i, j)| self.contains(i, j))
            .collect()
    }

    /// Row-major flat indices of the support.
    pub fn support_indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.then_some(k))
            .collect()
    }
}

impl fmt::Display for KernelMask {
    /// One text row per space offset, most upstream first; `1` marks support.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.k_w) {
            let line: String = row.iter().map(|c| if *c { '1' } else { '0' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn check_odd(k_h: usize, k_w: usize) -> Result<()> {
    if k_h.is_multiple_of(2) || k_w.is_multiple_of(2) {
        return Err(invalid(format!(
            "kernel sizes must be odd, got {k_h}x{k_w}"
        )));
    }
    Ok(())
}

/// All-ones mask.
pub fn build_isotropic_mask(k_h: usize, k_w: usize) -> Result<KernelMask> {
    check_odd(k_h, k_w)?;
    KernelMask::from_cells(k_h, k_w, vec![true; k_h * k_w])
}

/// Wave speeds expressed as slopes in space cells per time cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSlopes {
    pub free_min: f64,
    pub free_max: f64,
    pub congested: f64,
}

impl CellSlopes {
    pub fn new(waves: &WaveParams, dx: f64, dt: f64) -> Self {
        let slope = |kmph: f64| kmph_to_mps(kmph) * dt / dx;
        Self {
            free_min: slope(waves.c_v_min),
            free_max: slope(waves.c_v_max),
            congested: slope(waves.c_w),
        }
    }
}

fn intervals_touch(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Anisotropic mask: union of the free-flow cone `x = s·t, s ∈ [s_min,
/// s_max]` and the congested line `x = -s_w·t`, both through the kernel
/// centre, rasterized with closed-rectangle intersection.
pub fn build_anisotropic_mask(
    k_h: usize,
    k_w: usize,
    waves: &WaveParams,
    dx: f64,
    dt: f64,
) -> Result<KernelMask> {
    check_odd(k_h, k_w)?;
    waves.validate()?;
    if !(dx > 0.0 && dt > 0.0) {
        return Err(invalid(format!("dx and dt must be > 0, got {dx}, {dt}")));
    }
    let slopes = CellSlopes::new(waves, dx, dt);
    let (hh, hw) = ((k_h / 2) as isize, (k_w / 2) as isize);
    let mut cells = vec![false; k_h * k_w];
    for i in -hh..=hh {
        for j in -hw..=hw {
            let inside = if j == 0 {
                i == 0
            } else {
                let rows = (i as f64 - 0.5, i as f64 + 0.5);
                let (t_lo, t_hi) = (j as f64 - 0.5, j as f64 + 0.5);
                intervals_touch(congested_span(slopes.congested, t_lo, t_hi), rows)
                    || intervals_touch(free_span(&slopes, t_lo, t_hi), rows)
            };
            cells[((i + hh) as usize) * k_w + (j + hw) as usize] = inside;
        }
    }
    KernelMask::from_cells(k_h, k_w, cells)
}

/// Space extent of the congested line over `[t_lo, t_hi]`.
fn congested_span(slope: f64, t_lo: f64, t_hi: f64) -> (f64, f64) {
    let (a, b) = (-slope * t_lo, -slope * t_hi);
    (a.min(b), a.max(b))
}

/// Space extent of the free-flow cone over `[t_lo, t_hi]`, which lies on one
/// side of `t = 0`. `s·t` is bilinear, so the extremes sit at the corners.
fn free_span(slopes: &CellSlopes, t_lo: f64, t_hi: f64) -> (f64, f64) {
    let corners = [
        slopes.free_min * t_lo,
        slopes.free_min * t_hi,
        slopes.free_max * t_lo,
        slopes.free_max * t_hi,
    ];
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
