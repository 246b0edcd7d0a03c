//! Probe-vehicle sampling and the three-channel input encoding.
//!
//! Every cell hit by at least one probe sample gets a colour triple with all
//! channels in `1..=255`; empty cells stay `(0, 0, 0)`. That keeps "a stopped
//! probe" distinguishable from "no probe". With `u = clamp(mean speed /
//! V_scale, 0, 1)` and `q = round(254·u)` the triple is `(1 + q, 255 - q,
//! 128)`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{SpaceTimeGrid, Trajectory};

/// Default speed scale (km/h) of the input encoding and of network targets.
pub const DEFAULT_V_SCALE: f64 = 128.0;

/// Encoded probe observations, stored space-major with interleaved channels:
/// `channels[(i * nt + j) * 3 + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeInputTensor {
    grid: SpaceTimeGrid,
    channels: Vec<u8>,
}

impl ProbeInputTensor {
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            channels: vec![0; grid.len() * 3],
        }
    }

    pub fn from_channels(grid: SpaceTimeGrid, channels: Vec<u8>) -> Result<Self> {
        if channels.len() != grid.len() * 3 {
            return Err(Error::Shape(format!(
                "input tensor has {} bytes, grid needs {}",
                channels.len(),
                grid.len() * 3
            )));
        }
        for cell in channels.chunks_exact(3) {
            let empty = cell == [0, 0, 0];
            if !empty && cell.contains(&0) {
                return Err(invalid(format!("partially empty cell {cell:?}")));
            }
        }
        Ok(Self { grid, channels })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn channels(&self) -> &[u8] {
        &self.channels
    }

    pub fn cell(&self, i: usize, j: usize) -> [u8; 3] {
        let k = (i * self.grid.nt() + j) * 3;
        [self.channels[k], self.channels[k + 1], self.channels[k + 2]]
    }

    pub fn occupied_cells(&self) -> usize {
        self.channels
            .chunks_exact(3)
            .filter(|c| *c != [0, 0, 0])
            .count()
    }

    /// Time slice of columns `j0 .. j0 + nt`.
    pub fn time_window(&self, j0: usize, nt: usize) -> Result<Self> {
        let grid = self.grid.time_window(j0, nt)?;
        let full_nt = self.grid.nt();
        let mut channels = Vec::with_capacity(grid.len() * 3);
        for i in 0..grid.nx() {
            let start = (i * full_nt + j0) * 3;
            channels.extend_from_slice(&self.channels[start..start + nt * 3]);
        }
        Ok(Self { grid, channels })
    }
}

/// Colour triple for a speed.
pub fn encode_speed(v_kmph: f64, v_scale: f64) -> [u8; 3] {
    let u = (v_kmph / v_scale).clamp(0.0, 1.0);
    let q = (254.0 * u).round() as u8;
    [1 + q, 255 - q, 128]
}

/// Approximate speed represented by a non-empty triple.
pub fn decode_speed(cell: [u8; 3], v_scale: f64) -> Option<f64> {
    (cell != [0, 0, 0]).then(|| f64::from(cell[0] - 1) / 254.0 * v_scale)
}

/// Picks `round(rate · N)` vehicles (at least one) uniformly without
/// replacement. Selection order follows the input order.
pub fn sample_probes(trajs: &[Trajectory], rate: f64, seed: u64) -> Result<Vec<Trajectory>> {
    if trajs.is_empty() {
        return Err(Error::Empty("no vehicles to sample probes from".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(invalid(format!(
            "penetration rate must be in (0, 1], got {rate}"
        )));
    }
    let n = trajs.len();
    let k = ((rate * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| trajs[i].clone()).collect())
}

/// Encodes probe samples on `grid`, averaging speeds of samples sharing a
/// cell.
pub fn encode_input(
    probes: &[Trajectory],
    grid: &SpaceTimeGrid,
    v_scale: f64,
) -> Result<ProbeInputTensor> {
    if !(v_scale > 0.0 && v_scale.is_finite()) {
        return Err(invalid(format!("V_scale must be > 0, got {v_scale}")));
    }
    let mut sum = vec![0.0; grid.len()];
    let mut count = vec![0u32; grid.len()];
    for tr in probes {
        for s in tr.samples() {
            if let Some((i, j)) = grid.cell_of(s.t, s.x) {
                let k = i * grid.nt() + j;
                sum[k] += s.v;
                count[k] += 1;
            }
        }
    }
    let mut out = ProbeInputTensor::zeros(*grid);
    for (k, (&s, &c)) in sum.iter().zip(&count).enumerate() {
        if c > 0 {
            out.channels[k * 3..k * 3 + 3]
                .copy_from_slice(&encode_speed(s / f64::from(c), v_scale));
        }
    }
    Ok(out)
}
