use rand::Rng;

use crate::error::{Error, Result};
use crate::masks::KernelMask;

use super::{gemm, FeatureMap, Mat, Real};

/// Weight gradient, bias gradient and (optionally) input gradient.
pub type ConvGrads<T> = (Vec<T>, Vec<T>, Option<FeatureMap<T>>);

/// Same-padding 2-D convolution whose kernel support is restricted by a
/// mask shared across all channel pairs.
///
/// `out(c, y, x) = bias[c] + Σ_{χ, (i, j) ∈ mask} in(χ, y + i, x + j) ·
/// W[c, χ, i, j]` with zero padding outside the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    c_in: usize,
    c_out: usize,
    mask: KernelMask,
    /// `c_out × c_in × k_h × k_w`
    weights: Vec<T>,
    bias: Vec<T>,
    support: Vec<(isize, isize)>,
    support_idx: Vec<usize>,
}

impl<T: Real> ConvLayer<T> {
    /// Zero-initialized layer.
    pub fn zeros(c_in: usize, c_out: usize, mask: KernelMask) -> Self {
        let n = c_out * c_in * mask.k_h() * mask.k_w();
        let mut layer = Self {
            c_in,
            c_out,
            mask,
            weights: vec![T::zero(); n],
            bias: vec![T::zero(); c_out],
            support: Vec::new(),
            support_idx: Vec::new(),
        };
        layer.refresh_support();
        layer
    }

    /// Builds a layer from explicit parameters. Weights outside the mask must
    /// be zero.
    pub fn from_parts(
        c_in: usize,
        c_out: usize,
        mask: KernelMask,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let k = mask.k_h() * mask.k_w();
        if weights.len() != c_out * c_in * k || bias.len() != c_out {
            return Err(Error::Shape(format!(
                "conv {c_in}->{c_out} with {}x{} kernel needs {} weights and {c_out} biases, got {} and {}",
                mask.k_h(),
                mask.k_w(),
                c_out * c_in * k,
                weights.len(),
                bias.len()
            )));
        }
        let mut layer = Self::zeros(c_in, c_out, mask);
        layer.weights = weights;
        layer.bias = bias;
        if !layer.mask_respected() {
            return Err(Error::Shape(
                "weights outside the kernel mask are non-zero".into(),
            ));
        }
        Ok(layer)
    }

    /// Glorot-uniform weights using the masked support as fan size; biases
    /// and masked-out weights zero.
    pub fn init_glorot(&mut self, rng: &mut impl Rng) {
        let support = self.support.len() as f64;
        let fan_in = support * self.c_in as f64;
        let fan_out = support * self.c_out as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let k = self.kernel_len();
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                let base = (o * self.c_in + c) * k;
                for &s in &self.support_idx {
                    self.weights[base + s] = T::lit(rng.gen_range(-limit..=limit));
                }
            }
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub(crate) fn refresh_support(&mut self) {
        self.support = self.mask.support();
        self.support_idx = self.mask.support_indices();
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn mask(&self) -> &KernelMask {
        &self.mask
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn kernel_len(&self) -> usize {
        self.mask.k_h() * self.mask.k_w()
    }

    /// Trainable parameters counting only masked-in weights.
    pub fn effective_params(&self) -> usize {
        self.support.len() * self.c_in * self.c_out + self.c_out
    }

    /// Whether flat weight index `w` lies inside the mask.
    pub fn weight_in_mask(&self, w: usize) -> bool {
        self.mask.cells()[w % self.kernel_len()]
    }

    pub fn mask_respected(&self) -> bool {
        self.weights
            .iter()
            .enumerate()
            .all(|(w, v)| self.weight_in_mask(w) || *v == T::zero())
    }

    /// Sets every masked-out weight to zero.
    pub fn project(&mut self) {
        let cells = self.mask.cells();
        let k = cells.len();
        for (w, v) in self.weights.iter_mut().enumerate() {
            if !cells[w % k] {
                *v = T::zero();
            }
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.support.len()
    }

    /// `c_out × (c_in · |support|)` matrix of the masked-in weights.
    fn packed_weights(&self) -> Vec<T> {
        let k = self.kernel_len();
        let mut packed = Vec::with_capacity(self.c_out * self.rows());
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                let base = (o * self.c_in + c) * k;
                packed.extend(self.support_idx.iter().map(|&s| self.weights[base + s]));
            }
        }
        packed
    }

    /// Patch matrix with one row per (input channel, support offset) and one
    /// column per output cell.
    fn im2col(&self, input: &FeatureMap<T>) -> Vec<T> {
        let (h, w) = input.spatial();
        let n = h * w;
        let mut cols = vec![T::zero(); self.rows() * n];
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = input.plane(c);
            for &(di, dj) in &self.support {
                let dst = &mut cols[row * n..(row + 1) * n];
                let (x_lo, x_hi) = shifted_range(w, dj);
                for y in 0..h {
                    let yy = y as isize + di;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let src_row = yy as usize * w;
                    let src_lo = (x_lo as isize + dj) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src_row + src_lo..src_row + src_lo + len]);
                }
                row += 1;
            }
        }
        cols
    }

    /// Adds the patch-matrix gradient back onto the input positions.
    fn col2im(&self, cols: &[T], h: usize, w: usize) -> FeatureMap<T> {
        let n = h * w;
        let mut out = FeatureMap::zeros(self.c_in, h, w);
        let data = out.data_mut();
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &mut data[c * n..(c + 1) * n];
            for &(di, dj) in &self.support {
                let src = &cols[row * n..(row + 1) * n];
                let (x_lo, x_hi) = shifted_range(w, dj);
                for y in 0..h {
                    let yy = y as isize + di;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let d0 = yy as usize * w + (x_lo as isize + dj) as usize;
                    let len = x_hi - x_lo;
                    for (d, s) in plane[d0..d0 + len]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *d = *d + *s;
                    }
                }
                row += 1;
            }
        }
        out
    }

    fn check_input(&self, input: &FeatureMap<T>) -> Result<()> {
        if input.channels() != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check_input(input)?;
        if self.c_out <= DIRECT_MAX_OUT {
            Ok(self.forward_direct(input))
        } else {
            Ok(self.forward_gemm(input))
        }
    }

    fn forward_gemm(&self, input: &FeatureMap<T>) -> FeatureMap<T> {
        let (h, w) = input.spatial();
        let n = h * w;
        let cols = self.im2col(input);
        let packed = self.packed_weights();
        let mut out = vec![T::zero(); self.c_out * n];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        gemm(
            T::one(),
            Mat::new(&packed, self.c_out, self.rows()),
            Mat::new(&cols, self.rows(), n),
            T::one(),
            &mut out,
        );
        FeatureMap::from_vec(self.c_out, h, w, out).expect("sized above")
    }

    /// Gradients given `grad_out = ∂L/∂out`: full-size weight gradient (zero
    /// outside the mask), bias gradient, and the input gradient when asked.
    pub fn backward(
        &self,
        input: &FeatureMap<T>,
        grad_out: &FeatureMap<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        self.check_input(input)?;
        let (h, w) = input.spatial();
        if grad_out.spatial() != (h, w) || grad_out.channels() != self.c_out {
            return Err(Error::Shape("conv output gradient shape".into()));
        }
        if self.c_out <= DIRECT_MAX_OUT {
            Ok(self.backward_direct(input, grad_out, need_input_grad))
        } else {
            Ok(self.backward_gemm(input, grad_out, need_input_grad))
        }
    }

    fn backward_gemm(
        &self,
        input: &FeatureMap<T>,
        grad_out: &FeatureMap<T>,
        need_input_grad: bool,
    ) -> (Vec<T>, Vec<T>, Option<FeatureMap<T>>) {
        let (h, w) = input.spatial();
        let n = h * w;
        let rows = self.rows();
        let cols = self.im2col(input);
        let g = Mat::new(grad_out.data(), self.c_out, n);

        let mut packed_grad = vec![T::zero(); self.c_out * rows];
        gemm(
            T::one(),
            g,
            Mat::new(&cols, rows, n).t(),
            T::zero(),
            &mut packed_grad,
        );

        let k = self.kernel_len();
        let s_len = self.support.len();
        let mut weight_grad = vec![T::zero(); self.weights.len()];
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                let base = (o * self.c_in + c) * k;
                let prow = o * rows + c * s_len;
                for (p, &s) in self.support_idx.iter().enumerate() {
                    weight_grad[base + s] = packed_grad[prow + p];
                }
            }
        }

        let bias_grad = (0..self.c_out)
            .map(|o| grad_out.plane(o).iter().copied().sum())
            .collect();

        let input_grad = if need_input_grad {
            let packed = self.packed_weights();
            let mut col_grad = vec![T::zero(); rows * n];
            gemm(
                T::one(),
                Mat::new(&packed, self.c_out, rows).t(),
                g,
                T::zero(),
                &mut col_grad,
            );
            Some(self.col2im(&col_grad, h, w))
        } else {
            None
        };
        (weight_grad, bias_grad, input_grad)
    }
}

/// Below this many output channels the patch matrix costs more than it
/// saves: GEMM degenerates to matrix–vector products.
const DIRECT_MAX_OUT: usize = 4;

impl<T: Real> ConvLayer<T> {
    /// Calls `f(o, c, weight index, output row, input row, x range, dj)` for
    /// every overlapping row pair of every masked-in tap.
    fn for_each_tap(
        &self,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize, (usize, usize), isize),
    ) {
        let k = self.kernel_len();
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                let base = (o * self.c_in + c) * k;
                for (&(di, dj), &s) in self.support.iter().zip(&self.support_idx) {
                    let range = shifted_range(w, dj);
                    if range.0 == range.1 {
                        continue;
                    }
                    for y in 0..h {
                        let yy = y as isize + di;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        f(o, c, base + s, y, yy as usize, range, dj);
                    }
                }
            }
        }
    }

    fn forward_direct(&self, input: &FeatureMap<T>) -> FeatureMap<T> {
        let (h, w) = input.spatial();
        let n = h * w;
        let mut out = vec![T::zero(); self.c_out * n];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        let src = input.data();
        self.for_each_tap(h, w, |o, c, wi, y, yy, (lo, hi), dj| {
            let wv = self.weights[wi];
            let dst = &mut out[o * n + y * w + lo..o * n + y * w + hi];
            let s0 = c * n + yy * w + (lo as isize + dj) as usize;
            for (d, x) in dst.iter_mut().zip(&src[s0..s0 + hi - lo]) {
                *d = *d + wv * *x;
            }
        });
        FeatureMap::from_vec(self.c_out, h, w, out).expect("sized above")
    }

    fn backward_direct(
        &self,
        input: &FeatureMap<T>,
        grad_out: &FeatureMap<T>,
        need_input_grad: bool,
    ) -> (Vec<T>, Vec<T>, Option<FeatureMap<T>>) {
        let (h, w) = input.spatial();
        let n = h * w;
        let src = input.data();
        let g = grad_out.data();
        let mut weight_grad = vec![T::zero(); self.weights.len()];
        let mut input_grad = need_input_grad.then(|| vec![T::zero(); self.c_in * n]);
        self.for_each_tap(h, w, |o, c, wi, y, yy, (lo, hi), dj| {
            let g_row = &g[o * n + y * w + lo..o * n + y * w + hi];
            let s0 = c * n + yy * w + (lo as isize + dj) as usize;
            let x_row = &src[s0..s0 + hi - lo];
            let dot: T = g_row.iter().zip(x_row).map(|(a, b)| *a * *b).sum();
            weight_grad[wi] = weight_grad[wi] + dot;
            if let Some(gi) = input_grad.as_mut() {
                let wv = self.weights[wi];
                for (d, gv) in gi[s0..s0 + hi - lo].iter_mut().zip(g_row) {
                    *d = *d + wv * *gv;
                }
            }
        });
        let bias_grad = (0..self.c_out)
            .map(|o| grad_out.plane(o).iter().copied().sum())
            .collect();
        let input_grad =
            input_grad.map(|v| FeatureMap::from_vec(self.c_in, h, w, v).expect("sized above"));
        (weight_grad, bias_grad, input_grad)
    }
}

/// Output columns `x` for which `x + dj` is a valid input column.
fn shifted_range(w: usize, dj: isize) -> (usize, usize) {
    let lo = (-dj).max(0) as usize;
    let hi = (w as isize - dj).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{build_anisotropic_mask, build_isotropic_mask, WaveParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn reference(layer: &ConvLayer<f64>, input: &FeatureMap<f64>) -> Vec<f64> {
        let (h, w) = input.spatial();
        let m = layer.mask();
        let (hh, hw) = (m.half_h(), m.half_w());
        let mut out = vec![0.0; layer.c_out() * h * w];
        for o in 0..layer.c_out() {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias()[o];
                    for c in 0..layer.c_in() {
                        for i in -hh..=hh {
                            for j in -hw..=hw {
                                if !m.contains(i, j) {
                                    continue;
                                }
                                let (yy, xx) = (y as isize + i, x as isize + j);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let widx = ((o * layer.c_in() + c) * m.k_h() + (i + hh) as usize)
                                    * m.k_w()
                                    + (j + hw) as usize;
                                acc +=
                                    input.get(c, yy as usize, xx as usize) * layer.weights()[widx];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_by_one_identity() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1, build_isotropic_mask(1, 1).unwrap());
        layer.weights_mut()[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 1, 4, 5);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn box_sum_center() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1, build_isotropic_mask(3, 3).unwrap());
        layer.weights_mut().iter_mut().for_each(|w| *w = 1.0);
        let x = FeatureMap::from_vec(1, 3, 3, vec![1.0; 9]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.get(0, 1, 1), 9.0);
        assert_eq!(y.get(0, 0, 0), 4.0);
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for mask in [
            build_isotropic_mask(3, 5).unwrap(),
            build_anisotropic_mask(5, 5, &WaveParams::default(), 10.0, 1.0).unwrap(),
        ] {
            let mut layer = ConvLayer::<f64>::zeros(2, 3, mask);
            layer.init_glorot(&mut rng);
            layer
                .bias_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-1.0..1.0));
            let x = random_map(&mut rng, 2, 5, 7);
            let got = layer.forward(&x).unwrap();
            let want = reference(&layer, &x);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn direct_and_gemm_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = build_anisotropic_mask(7, 7, &WaveParams::default(), 10.0, 1.0).unwrap();
        for c_out in [1, 6] {
            let mut layer = ConvLayer::<f64>::zeros(3, c_out, mask.clone());
            layer.init_glorot(&mut rng);
            let x = random_map(&mut rng, 3, 9, 6);
            let g = random_map(&mut rng, c_out, 9, 6);
            let (a, b) = (layer.forward_direct(&x), layer.forward_gemm(&x));
            let want = reference(&layer, &x);
            for ((p, q), r) in a.data().iter().zip(b.data()).zip(&want) {
                assert!((p - r).abs() <= 1e-12 && (q - r).abs() <= 1e-12);
            }
            let (wd, bd, gd) = layer.backward_direct(&x, &g, true);
            let (wg, bg, gg) = layer.backward_gemm(&x, &g, true);
            let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(p, q)| (p - q).abs() <= 1e-12);
            assert!(close(&wd, &wg) && close(&bd, &bg));
            assert!(close(gd.unwrap().data(), gg.unwrap().data()));
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let layer = ConvLayer::<f64>::zeros(2, 1, build_isotropic_mask(3, 3).unwrap());
        let x = FeatureMap::<f64>::zeros(3, 4, 4);
        assert!(layer.forward(&x).is_err());
    }

    #[test]
    fn from_parts_rejects_masked_weight() {
        let mask = build_anisotropic_mask(3, 3, &WaveParams::default(), 10.0, 1.0).unwrap();
        let off = mask.cells().iter().position(|c| !c).unwrap();
        let mut w = vec![0.0; 9];
        w[off] = 1.0;
        assert!(ConvLayer::<f64>::from_parts(1, 1, mask, w, vec![0.0]).is_err());
    }

    #[test]
    fn input_gradient_is_adjoint() {
        // <conv(x) - bias, g> == <x, conv_backward(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask = build_anisotropic_mask(5, 5, &WaveParams::default(), 10.0, 1.0).unwrap();
        let mut layer = ConvLayer::<f64>::zeros(2, 3, mask);
        layer.init_glorot(&mut rng);
        let x = random_map(&mut rng, 2, 6, 4);
        let g = random_map(&mut rng, 3, 6, 4);
        let y = layer.forward(&x).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let (_, _, gx) = layer.backward(&x, &g, true).unwrap();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(gx.unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
