//! Test-side oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code under test for the quantity it
//! checks.
#![allow(dead_code)]

use speedfield::masks::WaveParams;
use speedfield::nn::{Architecture, ConvModel, FeatureMap, LayerSpec, MaskSpec};

pub fn default_waves() -> WaveParams {
    WaveParams {
        c_v_max: 100.0,
        c_v_min: 60.0,
        c_w: 18.0,
    }
}

pub fn aniso(dx: f64, dt: f64) -> MaskSpec {
    MaskSpec::Anisotropic {
        waves: default_waves(),
        dx,
        dt,
    }
}

/// Mask cells reached by a densely sampled wave line through the kernel
/// centre: every kernel cell whose closed square `[i ± ½] × [j ± ½]` (in
/// cells) contains a sampled point of the free-flow cone or the congested
/// line. The centre time column keeps only the centre cell. At least 10³
/// slopes and 10⁴ time values are sampled.
pub fn dense_sampling_mask(k: usize, waves: &WaveParams, dx: f64, dt: f64) -> Vec<bool> {
    let (cone, line) = dense_sampling_parts(k, waves, dx, dt);
    let mut cells: Vec<bool> = cone.iter().zip(&line).map(|(a, b)| *a || *b).collect();
    cells[k * k / 2] = true;
    cells
}

/// Cells reached by the free-flow cone and by the congested line,
/// separately (centre column excluded).
pub fn dense_sampling_parts(
    k: usize,
    waves: &WaveParams,
    dx: f64,
    dt: f64,
) -> (Vec<bool>, Vec<bool>) {
    let h = (k / 2) as i64;
    let to_cells = |kmph: f64| kmph / 3.6 * dt / dx;
    let (s_lo, s_hi, s_w) = (
        to_cells(waves.c_v_min),
        to_cells(waves.c_v_max),
        to_cells(waves.c_w),
    );
    let mark = |cells: &mut Vec<bool>, t: f64, x: f64| {
        // points on a shared edge belong to both neighbours
        for i in [(x - 0.5).ceil() as i64, (x + 0.5).floor() as i64] {
            for j in [(t - 0.5).ceil() as i64, (t + 0.5).floor() as i64] {
                if j != 0 && i.abs() <= h && j.abs() <= h {
                    cells[((i + h) * k as i64 + j + h) as usize] = true;
                }
            }
        }
    };
    let mut cone = vec![false; k * k];
    let mut line = vec![false; k * k];
    // 2000 time samples per cell; cell edges (half-integers) are hit exactly,
    // so corner contacts are seen
    let per_cell = 2000;
    let n_t = per_cell * (2 * h + 1);
    let n_s = 1000;
    let extent = h as f64 + 0.5;
    for a in 0..=n_t {
        let t = -extent + a as f64 / per_cell as f64;
        mark(&mut line, t, -s_w * t);
        for b in 0..=n_s {
            let s = s_lo + (s_hi - s_lo) * b as f64 / n_s as f64;
            mark(&mut cone, t, s * t);
        }
    }
    (cone, line)
}

/// Small model exercising every layer type (masked convs, pooling with
/// ceil mode, upsampling, cropping, output ReLU).
pub fn tiny_arch() -> Architecture {
    Architecture {
        input_channels: 3,
        encoder: vec![LayerSpec::new(5, 5, 3), LayerSpec::new(3, 3, 2)],
        decoder: vec![LayerSpec::new(3, 3, 2), LayerSpec::new(5, 5, 3)],
        output: LayerSpec::new(7, 7, 1),
    }
}

pub fn lcg_values(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect()
}

fn param(m: &mut ConvModel<f64>, l: usize, is_weight: bool, k: usize) -> &mut f64 {
    let layer = &mut m.layers_mut()[l];
    if is_weight {
        &mut layer.weights_mut()[k]
    } else {
        &mut layer.bias_mut()[k]
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub layers_covered: usize,
    pub worst_rel_err: f64,
}

/// Central finite differences of the loss against the analytic gradient on
/// `per_layer` in-mask weights and one bias of every layer.
pub fn fd_gradient_check(masks: MaskSpec, per_layer: usize, h: f64) -> GradCheck {
    let arch = tiny_arch();
    let mut model = ConvModel::<f64>::new(arch, masks, 1.0, 11).unwrap();
    // positive biases keep most units away from the ReLU kink
    for l in model.layers_mut() {
        l.bias_mut().iter_mut().for_each(|b| *b = 0.1);
    }
    let (hgt, wid) = (11, 9);
    let x = FeatureMap::from_vec(3, hgt, wid, lcg_values(3 * hgt * wid, 1, 0.0, 1.0)).unwrap();
    let y = FeatureMap::from_vec(1, hgt, wid, lcg_values(hgt * wid, 2, 0.0, 1.0)).unwrap();
    let (_, grads) = model.sample_gradients(&x, &y).unwrap();
    let loss_at = |m: &ConvModel<f64>| speedfield::nn::loss(&m.forward(&x).unwrap(), &y).unwrap();

    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let n_layers = model.layers().len();
    for l in 0..n_layers {
        let support: Vec<usize> = (0..model.layers()[l].weights().len())
            .filter(|w| model.layers()[l].weight_in_mask(*w))
            .collect();
        let stride = (support.len() / per_layer).max(1);
        let picks: Vec<(bool, usize)> = support
            .iter()
            .step_by(stride)
            .take(per_layer)
            .map(|w| (true, *w))
            .chain(std::iter::once((false, 0)))
            .collect();
        for (is_weight, k) in picks {
            let orig = *param(&mut model, l, is_weight, k);
            *param(&mut model, l, is_weight, k) = orig + h;
            let up = loss_at(&model);
            *param(&mut model, l, is_weight, k) = orig - h;
            let down = loss_at(&model);
            *param(&mut model, l, is_weight, k) = orig;
            let fd = (up - down) / (2.0 * h);
            let an = if is_weight {
                grads.layers[l].weights[k]
            } else {
                grads.layers[l].bias[k]
            };
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        checked,
        layers_covered: n_layers,
        worst_rel_err: worst,
    }
}
