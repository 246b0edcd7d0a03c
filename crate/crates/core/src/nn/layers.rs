use crate::error::{Error, Result};

use super::{FeatureMap, Real};

pub fn relu<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where the ReLU output was positive.
pub fn relu_backward<T: Real>(output: &FeatureMap<T>, grad: &FeatureMap<T>) -> FeatureMap<T> {
    let mut g = grad.clone();
    for (gv, ov) in g.data_mut().iter_mut().zip(output.data()) {
        if *ov <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

/// Flat input index chosen by each pooled cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: (usize, usize, usize),
    argmax: Vec<u32>,
}

/// 2×2 max-pooling with stride 2 in ceil mode: odd trailing rows/columns are
/// pooled with a −∞ pad, so the output is `⌈h/2⌉ × ⌈w/2⌉`.
pub fn maxpool2<T: Real>(x: &FeatureMap<T>) -> (FeatureMap<T>, PoolIndices) {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = FeatureMap::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let data = x.data();
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    let yy = 2 * y + dy;
                    if yy >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let xx = 2 * xo + dx;
                        if xx >= w {
                            continue;
                        }
                        let idx = (ch * h + yy) * w + xx;
                        // first maximum wins; NaN never replaces a value
                        if data[idx] > best || best_idx == 0 && best == T::neg_infinity() {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.set(ch, y, xo, best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (
        out,
        PoolIndices {
            input_shape: (c, h, w),
            argmax,
        },
    )
}

/// Routes each pooled gradient to the input cell that won the max.
pub fn maxpool2_backward<T: Real>(indices: &PoolIndices, grad: &FeatureMap<T>) -> FeatureMap<T> {
    let (c, h, w) = indices.input_shape;
    let mut out = FeatureMap::zeros(c, h, w);
    let data = out.data_mut();
    for (g, &idx) in grad.data().iter().zip(&indices.argmax) {
        data[idx as usize] = data[idx as usize] + *g;
    }
    out
}

/// Replicates every cell into a 2×2 block.
pub fn upsample_nearest2<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let mut out = FeatureMap::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(ch, y, xx, x.get(ch, y / 2, xx / 2));
            }
        }
    }
    out
}

/// Sums each 2×2 block of the upsampled gradient.
pub fn upsample_nearest2_backward<T: Real>(grad: &FeatureMap<T>) -> FeatureMap<T> {
    let (c, h2, w2) = (grad.channels(), grad.height(), grad.width());
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let v = out.get(ch, y / 2, x / 2) + grad.get(ch, y, x);
                out.set(ch, y / 2, x / 2, v);
            }
        }
    }
    out
}

/// Top-left `h × w` slice.
pub fn crop<T: Real>(x: &FeatureMap<T>, h: usize, w: usize) -> Result<FeatureMap<T>> {
    if h > x.height() || w > x.width() {
        return Err(Error::Shape(format!(
            "cannot crop {}x{} to {h}x{w}",
            x.height(),
            x.width()
        )));
    }
    let mut out = FeatureMap::zeros(x.channels(), h, w);
    for ch in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                out.set(ch, y, xx, x.get(ch, y, xx));
            }
        }
    }
    Ok(out)
}

/// Zero-pads a cropped gradient back to `h × w`.
pub fn crop_backward<T: Real>(grad: &FeatureMap<T>, h: usize, w: usize) -> FeatureMap<T> {
    let mut out = FeatureMap::zeros(grad.channels(), h, w);
    for ch in 0..grad.channels() {
        for y in 0..grad.height() {
            for x in 0..grad.width() {
                out.set(ch, y, x, grad.get(ch, y, x));
            }
        }
    }
    out
}
