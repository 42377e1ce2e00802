//! Network building blocks with explicit forward/backward passes.
//!
//! All compute is f64, channel-major `(C, H, W)`. Convolutions are "same"
//! padded so spatial size is preserved; each forward returns the cache its
//! backward needs, so several forwards can be in flight before gradients are
//! pushed (the self-supervised loop backpropagates through two views).

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Mutable view of one parameter tensor and its gradient accumulator.
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Stride-1 convolution with zero padding `k/2` (spatial size preserved).
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// Weights in GEMM layout `(c_out, c_in * k * k)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

pub struct ConvCache {
    /// Input retained for the weight-gradient pass.
    input: Array3<f64>,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        let fan_in = c_in * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((c_out, fan_in), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        Self {
            name: name.into(),
            c_in,
            c_out,
            k,
            w,
            b: Array1::zeros(c_out),
            gw: Array2::zeros((c_out, fan_in)),
            gb: Array1::zeros(c_out),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Direct convolution with a fused row stencil: each output row is
    /// accumulated across all input channels and taps before being stored.
    /// At the narrow channel counts of this backbone it beats im2col + GEMM,
    /// which spends its time packing skinny matrices.
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        assert!(self.k == 3 || self.k == 1, "kernel sizes 1 and 3 are supported");
        let mut y = Array3::zeros((self.c_out, h, w));
        let x_flat = x.as_slice().expect("contiguous");
        let y_flat = y.as_slice_mut().expect("contiguous");
        let mut acc = vec![0.0f64; w];
        for co in 0..self.c_out {
            let w_row = self.w.row(co);
            let w_row = w_row.as_slice().expect("contiguous");
            for r in 0..h {
                acc.fill(self.b[co]);
                for ci in 0..c_in {
                    let x_plane = &x_flat[ci * h * w..(ci + 1) * h * w];
                    if self.k == 1 {
                        let wv = w_row[ci];
                        let x_row = &x_plane[r * w..(r + 1) * w];
                        for (a, xv) in acc.iter_mut().zip(x_row) {
                            *a += wv * xv;
                        }
                        continue;
                    }
                    for dr in 0..3usize {
                        let sr = r as isize + dr as isize - 1;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[sr as usize * w..(sr as usize + 1) * w];
                        let base = (ci * 3 + dr) * 3;
                        let (w0, w1, w2) = (w_row[base], w_row[base + 1], w_row[base + 2]);
                        if w == 1 {
                            acc[0] += w1 * x_row[0];
                            continue;
                        }
                        acc[0] += w1 * x_row[0] + w2 * x_row[1];
                        for c in 1..w - 1 {
                            acc[c] += w0 * x_row[c - 1] + w1 * x_row[c] + w2 * x_row[c + 1];
                        }
                        acc[w - 1] += w0 * x_row[w - 2] + w1 * x_row[w - 1];
                    }
                }
                y_flat[co * h * w + r * w..co * h * w + (r + 1) * w].copy_from_slice(&acc);
            }
        }
        (y, ConvCache { input: x.clone() })
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_y: &Array3<f64>, cache: &ConvCache) -> Array3<f64> {
        let (c_out, h, w) = grad_y.dim();
        debug_assert_eq!(c_out, self.c_out);
        let c_in = self.c_in;
        let x_flat = cache.input.as_slice().expect("contiguous");
        let gy_flat = grad_y.as_slice().expect("contiguous");

        // Bias and weight gradients: per-tap row dot products.
        for co in 0..c_out {
            let gy_plane = &gy_flat[co * h * w..(co + 1) * h * w];
            self.gb[co] += gy_plane.iter().sum::<f64>();
            for ci in 0..c_in {
                let x_plane = &x_flat[ci * h * w..(ci + 1) * h * w];
                if self.k == 1 {
                    let mut dot = 0.0;
                    for (g, xv) in gy_plane.iter().zip(x_plane) {
                        dot += g * xv;
                    }
                    self.gw[(co, ci)] += dot;
                    continue;
                }
                let mut accw = [0.0f64; 9];
                for r in 0..h {
                    let gy_row = &gy_plane[r * w..(r + 1) * w];
                    for dr in 0..3usize {
                        let sr = r as isize + dr as isize - 1;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[sr as usize * w..(sr as usize + 1) * w];
                        let t = dr * 3;
                        if w == 1 {
                            accw[t + 1] += gy_row[0] * x_row[0];
                            continue;
                        }
                        let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                        a1 += gy_row[0] * x_row[0];
                        a2 += gy_row[0] * x_row[1];
                        for c in 1..w - 1 {
                            let g = gy_row[c];
                            a0 += g * x_row[c - 1];
                            a1 += g * x_row[c];
                            a2 += g * x_row[c + 1];
                        }
                        a0 += gy_row[w - 1] * x_row[w - 2];
                        a1 += gy_row[w - 1] * x_row[w - 1];
                        accw[t] += a0;
                        accw[t + 1] += a1;
                        accw[t + 2] += a2;
                    }
                }
                for (t, a) in accw.iter().enumerate() {
                    self.gw[(co, ci * 9 + t)] += a;
                }
            }
        }

        // Input gradient: mirrored stencil, one fused pass per input row.
        let mut gx = Array3::zeros((c_in, h, w));
        let gx_flat = gx.as_slice_mut().expect("contiguous");
        let mut acc = vec![0.0f64; w];
        for ci in 0..c_in {
            for sr in 0..h {
                acc.fill(0.0);
                for co in 0..c_out {
                    let gy_plane = &gy_flat[co * h * w..(co + 1) * h * w];
                    let w_row = self.w.row(co);
                    let w_row = w_row.as_slice().expect("contiguous");
                    if self.k == 1 {
                        let wv = w_row[ci];
                        let gy_row = &gy_plane[sr * w..(sr + 1) * w];
                        for (a, g) in acc.iter_mut().zip(gy_row) {
                            *a += wv * g;
                        }
                        continue;
                    }
                    for dr in 0..3usize {
                        // Output row r feeding input row sr via tap dr.
                        let r = sr as isize + 1 - dr as isize;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let gy_row = &gy_plane[r as usize * w..(r as usize + 1) * w];
                        let base = (ci * 3 + dr) * 3;
                        let (w0, w1, w2) = (w_row[base], w_row[base + 1], w_row[base + 2]);
                        if w == 1 {
                            acc[0] += w1 * gy_row[0];
                            continue;
                        }
                        acc[0] += w1 * gy_row[0] + w0 * gy_row[1];
                        for c in 1..w - 1 {
                            acc[c] += w2 * gy_row[c - 1] + w1 * gy_row[c] + w0 * gy_row[c + 1];
                        }
                        acc[w - 1] += w2 * gy_row[w - 2] + w1 * gy_row[w - 1];
                    }
                }
                gx_flat[ci * h * w + sr * w..ci * h * w + (sr + 1) * w].copy_from_slice(&acc);
            }
        }
        gx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        f(ParamRef {
            name: &self.name,
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: self.gw.as_slice_mut().expect("contiguous"),
        });
        // Bias shares the layer name with a suffix.
        let bias_name = format!("{}.bias", self.name);
        f(ParamRef {
            name: &bias_name,
            value: self.b.as_slice_mut().expect("contiguous"),
            grad: self.gb.as_slice_mut().expect("contiguous"),
        });
    }
}

/// 2x2 max pooling with stride 2.
pub struct MaxPool;

pub struct PoolCache {
    /// Winning offset (0..4) per output pixel.
    argmax: Array3<u8>,
}

impl MaxPool {
    pub fn forward(x: &Array3<f64>) -> (Array3<f64>, PoolCache) {
        let (c, h, w) = x.dim();
        debug_assert!(h % 2 == 0 && w % 2 == 0);
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array3::zeros((c, oh, ow));
        let mut argmax = Array3::zeros((c, oh, ow));
        for ci in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_off = 0u8;
                    for (off, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[(ci, 2 * r + dr, 2 * col + dc)];
                        if v > best {
                            best = v;
                            best_off = off as u8;
                        }
                    }
                    y[(ci, r, col)] = best;
                    argmax[(ci, r, col)] = best_off;
                }
            }
        }
        (y, PoolCache { argmax })
    }

    pub fn backward(grad_y: &Array3<f64>, cache: &PoolCache) -> Array3<f64> {
        let (c, oh, ow) = grad_y.dim();
        let mut gx = Array3::zeros((c, oh * 2, ow * 2));
        for ci in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let off = cache.argmax[(ci, r, col)] as usize;
                    let (dr, dc) = (off / 2, off % 2);
                    gx[(ci, 2 * r + dr, 2 * col + dc)] += grad_y[(ci, r, col)];
                }
            }
        }
        gx
    }
}

/// 2x2 transposed convolution with stride 2 (doubles spatial size).
pub struct UpConv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    /// Weights in GEMM layout `(c_in, c_out * 4)`; the 4 is the 2x2 kernel.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

pub struct UpConvCache {
    /// Input as a `(c_in, h * w)` matrix.
    x_mat: Array2<f64>,
    h: usize,
    w: usize,
}

impl UpConv {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / c_in as f64).sqrt();
        let w = Array2::from_shape_fn((c_in, c_out * 4), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        Self {
            name: name.into(),
            c_in,
            c_out,
            w,
            b: Array1::zeros(c_out),
            gw: Array2::zeros((c_in, c_out * 4)),
            gb: Array1::zeros(c_out),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, UpConvCache) {
        let (c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        let x_mat = x
            .view()
            .into_shape_with_order((c_in, h * w))
            .expect("reshape")
            .to_owned();
        let y_mat = self.w.t().dot(&x_mat); // (c_out * 4, h * w)
        let mut y = Array3::zeros((self.c_out, 2 * h, 2 * w));
        for co in 0..self.c_out {
            for (off, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                for r in 0..h {
                    for c in 0..w {
                        y[(co, 2 * r + dr, 2 * c + dc)] = y_mat[(co * 4 + off, r * w + c)] + self.b[co];
                    }
                }
            }
        }
        (y, UpConvCache { x_mat, h, w })
    }

    pub fn backward(&mut self, grad_y: &Array3<f64>, cache: &UpConvCache) -> Array3<f64> {
        let (h, w) = (cache.h, cache.w);
        let mut gy_mat = Array2::zeros((self.c_out * 4, h * w));
        for co in 0..self.c_out {
            let mut b_acc = 0.0;
            for (off, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                for r in 0..h {
                    for c in 0..w {
                        let g = grad_y[(co, 2 * r + dr, 2 * c + dc)];
                        gy_mat[(co * 4 + off, r * w + c)] = g;
                        b_acc += g;
                    }
                }
            }
            self.gb[co] += b_acc;
        }
        self.gw += &cache.x_mat.dot(&gy_mat.t());
        let gx_mat = self.w.dot(&gy_mat);
        gx_mat.into_shape_with_order((self.c_in, h, w)).expect("reshape")
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        f(ParamRef {
            name: &self.name,
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: self.gw.as_slice_mut().expect("contiguous"),
        });
        let bias_name = format!("{}.bias", self.name);
        f(ParamRef {
            name: &bias_name,
            value: self.b.as_slice_mut().expect("contiguous"),
            grad: self.gb.as_slice_mut().expect("contiguous"),
        });
    }
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// ReLU backward using the post-activation values.
pub fn relu_backward(grad_y: &Array3<f64>, y: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_y.clone();
    g.zip_mut_with(y, |gv, &yv| {
        if yv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Per-pixel softmax over the channel axis.
pub fn softmax(logits: &Array3<f64>) -> Array3<f64> {
    let (k, h, w) = logits.dim();
    let mut out = Array3::zeros((k, h, w));
    for r in 0..h {
        for c in 0..w {
            let mut max = f64::NEG_INFINITY;
            for ch in 0..k {
                max = max.max(logits[(ch, r, c)]);
            }
            let mut sum = 0.0;
            for ch in 0..k {
                let e = (logits[(ch, r, c)] - max).exp();
                out[(ch, r, c)] = e;
                sum += e;
            }
            for ch in 0..k {
                out[(ch, r, c)] /= sum;
            }
        }
    }
    out
}

/// Gradient w.r.t. logits given gradient w.r.t. softmax probabilities.
pub fn softmax_backward(grad_probs: &Array3<f64>, probs: &Array3<f64>) -> Array3<f64> {
    let (k, h, w) = probs.dim();
    let mut g = Array3::zeros((k, h, w));
    for r in 0..h {
        for c in 0..w {
            let mut dot = 0.0;
            for ch in 0..k {
                dot += grad_probs[(ch, r, c)] * probs[(ch, r, c)];
            }
            for ch in 0..k {
                g[(ch, r, c)] = probs[(ch, r, c)] * (grad_probs[(ch, r, c)] - dot);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn finite_diff_conv(conv: &mut Conv2d, x: &Array3<f64>) {
        // Objective: sum of squares of the output.
        let objective = |conv: &Conv2d, x: &Array3<f64>| -> f64 {
            let (y, _) = conv.forward(x);
            y.iter().map(|v| v * v).sum::<f64>() * 0.5
        };
        let (y, cache) = conv.forward(x);
        let gx = conv.backward(&y, &cache);

        let eps = 1e-6;
        // Input gradient.
        let mut x_pert = x.clone();
        for &idx in &[(0usize, 0usize, 0usize), (0, 2, 3), (0, 3, 1)] {
            let base = x_pert[idx];
            x_pert[idx] = base + eps;
            let up = objective(conv, &x_pert);
            x_pert[idx] = base - eps;
            let down = objective(conv, &x_pert);
            x_pert[idx] = base;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gx[idx]).abs() < 1e-6 * (1.0 + num.abs()), "input grad at {idx:?}");
        }
        // Weight gradient.
        let (rows, cols) = conv.w.dim();
        for idx in [(0usize, 0usize), (rows - 1, cols / 2), (rows - 1, cols - 1)] {
            let base = conv.w[idx];
            conv.w[idx] = base + eps;
            let up = objective(conv, x);
            conv.w[idx] = base - eps;
            let down = objective(conv, x);
            conv.w[idx] = base;
            let num = (up - down) / (2.0 * eps);
            assert!((num - conv.gw[idx]).abs() < 1e-6 * (1.0 + num.abs()), "weight grad at {idx:?}");
        }
        // Bias gradient.
        let base = conv.b[1];
        conv.b[1] = base + eps;
        let up = objective(conv, x);
        conv.b[1] = base - eps;
        let down = objective(conv, x);
        conv.b[1] = base;
        let num = (up - down) / (2.0 * eps);
        assert!((num - conv.gb[1]).abs() < 1e-6 * (1.0 + num.abs()), "bias grad");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = rng_for(1, &[1]);
        let mut conv = Conv2d::new("c", 1, 2, 3, &mut rng);
        let x = Array3::from_shape_fn((1, 4, 4), |_| rng.gen_range(-1.0..1.0));
        finite_diff_conv(&mut conv, &x);
    }

    #[test]
    fn conv_1x1_gradients_match_finite_differences() {
        let mut rng = rng_for(2, &[1]);
        let mut conv = Conv2d::new("h", 3, 2, 1, &mut rng);
        let x = Array3::from_shape_fn((3, 4, 4), |_| rng.gen_range(-1.0..1.0));
        finite_diff_conv(&mut conv, &x);
    }

    #[test]
    fn conv_preserves_spatial_size() {
        let mut rng = rng_for(3, &[1]);
        let conv = Conv2d::new("c", 2, 5, 3, &mut rng);
        let x = Array3::zeros((2, 6, 10));
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (5, 6, 10));
    }

    #[test]
    fn maxpool_round_trip_routes_gradient_to_argmax() {
        let mut rng = rng_for(4, &[1]);
        let x = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0));
        let (y, cache) = MaxPool::forward(&x);
        assert_eq!(y.dim(), (2, 2, 2));
        let gy = Array3::from_elem((2, 2, 2), 1.0);
        let gx = MaxPool::backward(&gy, &cache);
        // Each 2x2 window routes exactly one unit of gradient.
        assert_eq!(gx.iter().filter(|&&v| v != 0.0).count(), 8);
        assert!((gx.sum() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn upconv_doubles_size_and_gradients_check_out(){
        let mut rng = rng_for(5, &[1]);
        let mut up = UpConv::new("u", 3, 2, &mut rng);
        let x = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let objective = |up: &UpConv, x: &Array3<f64>| -> f64 {
            let (y, _) = up.forward(x);
            y.iter().map(|v| v * v).sum::<f64>() * 0.5
        };
        let (y, cache) = up.forward(&x);
        assert_eq!(y.dim(), (2, 6, 6));
        let gx = up.backward(&y, &cache);

        let eps = 1e-6;
        let mut x_pert = x.clone();
        for &idx in &[(0usize, 0usize, 0usize), (2, 1, 2)] {
            let base = x_pert[idx];
            x_pert[idx] = base + eps;
            let upv = objective(&up, &x_pert);
            x_pert[idx] = base - eps;
            let down = objective(&up, &x_pert);
            x_pert[idx] = base;
            let num = (upv - down) / (2.0 * eps);
            assert!((num - gx[idx]).abs() < 1e-6 * (1.0 + num.abs()));
        }
        for idx in [(0usize, 0usize), (2, 7)] {
            let base = up.w[idx];
            up.w[idx] = base + eps;
            let upv = objective(&up, &x);
            up.w[idx] = base - eps;
            let down = objective(&up, &x);
            up.w[idx] = base;
            let num = (upv - down) / (2.0 * eps);
            assert!((num - up.gw[idx]).abs() < 1e-6 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn softmax_normalizes_and_backward_checks_out() {
        let mut rng = rng_for(6, &[1]);
        let logits = Array3::from_shape_fn((3, 2, 2), |_| rng.gen_range(-2.0..2.0));
        let probs = softmax(&logits);
        for r in 0..2 {
            for c in 0..2 {
                let s: f64 = (0..3).map(|k| probs[(k, r, c)]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let weights = Array3::from_shape_fn((3, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let g_logits = softmax_backward(&weights, &probs);
        let eps = 1e-6;
        let mut pert = logits.clone();
        for &idx in &[(0usize, 0usize, 0usize), (2, 1, 1)] {
            let base = pert[idx];
            pert[idx] = base + eps;
            let up: f64 = softmax(&pert).iter().zip(weights.iter()).map(|(p, w)| p * w).sum();
            pert[idx] = base - eps;
            let down: f64 = softmax(&pert).iter().zip(weights.iter()).map(|(p, w)| p * w).sum();
            pert[idx] = base;
            let num = (up - down) / (2.0 * eps);
            assert!((num - g_logits[idx]).abs() < 1e-7 * (1.0 + num.abs()));
        }
    }
}
