//! U-Net segmentation backbone: 4 down / 4 up stages with skip connections,
//! a main softmax head, and an optional over-clustering auxiliary head.
//!
//! Convolutions are "same"-padded so the output mask has the input's spatial
//! size. `base_channels` scales every stage width together; the original
//! configuration (64/128/256/512/1024) is [`ORIGINAL_BASE_CHANNELS`] and its
//! parameter count is pinned by [`ORIGINAL_UNET_PARAMS`]. Desk-scale runs
//! use a narrower base with the identical topology.

pub mod checkpoint;
pub mod layers;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, SoftPrediction};
use crate::rng::{rng_for, stream};
use layers::{relu, relu_backward, softmax, softmax_backward, Conv2d, ConvCache, MaxPool, ParamRef, PoolCache, UpConv, UpConvCache};

/// Number of encoder/decoder stages.
pub const DEPTH: usize = 4;
/// Input sides must be divisible by this (2^DEPTH).
pub const DOWNSAMPLE: usize = 16;
/// Stage width of the original configuration.
pub const ORIGINAL_BASE_CHANNELS: usize = 64;
/// Parameter count of the original configuration with a 1-channel input,
/// 2 classes, no auxiliary head: widths 64/128/256/512/1024, two 3x3
/// convolutions per stage, 2x2 up-convolutions, 1x1 head.
pub const ORIGINAL_UNET_PARAMS: usize = 31_030_658;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetArch {
    pub in_channels: usize,
    pub base_channels: usize,
    pub main_classes: usize,
    /// Over-clustering head size; `None` disables the auxiliary head.
    pub aux_classes: Option<usize>,
}

impl UNetArch {
    pub fn new(in_channels: usize, base_channels: usize, main_classes: usize) -> Self {
        Self { in_channels, base_channels, main_classes, aux_classes: None }
    }

    pub fn with_aux(mut self, aux_classes: usize) -> Self {
        self.aux_classes = Some(aux_classes);
        self
    }

    /// Encoder output widths, shallow to deep.
    fn stage_widths(&self) -> [usize; DEPTH + 1] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c, 16 * c]
    }

    /// Analytic parameter count (matches the constructed network).
    pub fn parameter_count(&self) -> usize {
        let widths = self.stage_widths();
        let double_conv = |c_in: usize, c_out: usize| {
            (c_in * c_out * 9 + c_out) + (c_out * c_out * 9 + c_out)
        };
        let mut total = 0;
        let mut prev = self.in_channels;
        for &wd in &widths {
            total += double_conv(prev, wd);
            prev = wd;
        }
        for l in (0..DEPTH).rev() {
            let m = widths[l];
            total += 2 * m * m * 4 + m; // up-convolution 2m -> m
            total += double_conv(2 * m, m);
        }
        total += widths[0] * self.main_classes + self.main_classes;
        if let Some(aux) = self.aux_classes {
            total += widths[0] * aux + aux;
        }
        total
    }
}

struct DoubleConv {
    conv1: Conv2d,
    conv2: Conv2d,
}

struct DoubleConvCache {
    c1: ConvCache,
    a1: Array3<f64>,
    c2: ConvCache,
    a2: Array3<f64>,
}

impl DoubleConv {
    fn new(name: &str, c_in: usize, c_out: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            conv1: Conv2d::new(format!("{name}.conv1"), c_in, c_out, 3, rng),
            conv2: Conv2d::new(format!("{name}.conv2"), c_out, c_out, 3, rng),
        }
    }

    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, DoubleConvCache) {
        let (y1, c1) = self.conv1.forward(x);
        let a1 = relu(&y1);
        let (y2, c2) = self.conv2.forward(&a1);
        let a2 = relu(&y2);
        (a2.clone(), DoubleConvCache { c1, a1, c2, a2 })
    }

    fn backward(&mut self, grad: &Array3<f64>, cache: &DoubleConvCache) -> Array3<f64> {
        let g2 = relu_backward(grad, &cache.a2);
        let g_a1 = self.conv2.backward(&g2, &cache.c2);
        let g1 = relu_backward(&g_a1, &cache.a1);
        self.conv1.backward(&g1, &cache.c1)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.conv1.visit_params(f);
        self.conv2.visit_params(f);
    }

    fn n_params(&self) -> usize {
        self.conv1.n_params() + self.conv2.n_params()
    }
}

/// The segmentation network.
pub struct UNet {
    pub arch: UNetArch,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    /// Decoder stages in processing order (deepest first).
    ups: Vec<UpConv>,
    dec: Vec<DoubleConv>,
    main_head: Conv2d,
    aux_head: Option<Conv2d>,
}

/// One forward pass: per-pixel probabilities plus everything backward needs.
pub struct Forward {
    pub main: Array3<f64>,
    pub aux: Option<Array3<f64>>,
    cache: NetCache,
}

struct NetCache {
    enc: Vec<DoubleConvCache>,
    pools: Vec<PoolCache>,
    bott: DoubleConvCache,
    ups: Vec<UpConvCache>,
    dec: Vec<DoubleConvCache>,
    main_cache: ConvCache,
    aux_cache: Option<ConvCache>,
    /// Channel counts of (skip, upsampled) at each decoder stage.
    split: Vec<(usize, usize)>,
}

impl UNet {
    pub fn new(arch: UNetArch, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let widths = arch.stage_widths();
        let mut enc = Vec::with_capacity(DEPTH);
        let mut prev = arch.in_channels;
        for (i, &wd) in widths.iter().take(DEPTH).enumerate() {
            enc.push(DoubleConv::new(&format!("enc{i}"), prev, wd, &mut rng));
            prev = wd;
        }
        let bottleneck = DoubleConv::new("bottleneck", widths[DEPTH - 1], widths[DEPTH], &mut rng);
        let mut ups = Vec::with_capacity(DEPTH);
        let mut dec = Vec::with_capacity(DEPTH);
        for (stage, l) in (0..DEPTH).rev().enumerate() {
            let m = widths[l];
            ups.push(UpConv::new(format!("up{stage}"), 2 * m, m, &mut rng));
            dec.push(DoubleConv::new(&format!("dec{stage}"), 2 * m, m, &mut rng));
        }
        let main_head = Conv2d::new("main_head", widths[0], arch.main_classes, 1, &mut rng);
        let aux_head = arch
            .aux_classes
            .map(|k| Conv2d::new("aux_head", widths[0], k, 1, &mut rng));
        Self { arch, enc, bottleneck, ups, dec, main_head, aux_head }
    }

    pub fn has_aux(&self) -> bool {
        self.aux_head.is_some()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.channels() != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, image has {}",
                self.arch.in_channels,
                image.channels()
            )));
        }
        let (h, w) = (image.height(), image.width());
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!(
                "input size {h}x{w} must be divisible by {DOWNSAMPLE} for {DEPTH} downsamplings"
            )));
        }
        Ok(())
    }

    /// Full forward pass with caches retained for a later backward.
    pub fn forward(&self, image: &Image) -> Result<Forward> {
        self.check_input(image)?;
        let mut enc_caches = Vec::with_capacity(DEPTH);
        let mut pools = Vec::with_capacity(DEPTH);
        let mut x = image.data.clone();
        for block in &self.enc {
            let (a, cache) = block.forward(&x);
            let (p, pc) = MaxPool::forward(&a);
            enc_caches.push(cache);
            pools.push(pc);
            x = p;
        }
        let (mut y, bott) = self.bottleneck.forward(&x);

        let mut up_caches = Vec::with_capacity(DEPTH);
        let mut dec_caches = Vec::with_capacity(DEPTH);
        let mut split = Vec::with_capacity(DEPTH);
        for stage in 0..DEPTH {
            let (u, uc) = self.ups[stage].forward(&y);
            let skip = &enc_caches[DEPTH - 1 - stage].a2;
            let cat = concat_channels(skip, &u);
            split.push((skip.dim().0, u.dim().0));
            let (d, dc) = self.dec[stage].forward(&cat);
            up_caches.push(uc);
            dec_caches.push(dc);
            y = d;
        }

        let (main_logits, main_cache) = self.main_head.forward(&y);
        let main = softmax(&main_logits);
        let (aux, aux_cache) = match &self.aux_head {
            Some(head) => {
                let (logits, cache) = head.forward(&y);
                (Some(softmax(&logits)), Some(cache))
            }
            None => (None, None),
        };

        Ok(Forward {
            main,
            aux,
            cache: NetCache {
                enc: enc_caches,
                pools,
                bott,
                ups: up_caches,
                dec: dec_caches,
                main_cache,
                aux_cache,
                split,
            },
        })
    }

    /// Accumulates parameter gradients from gradients on the output
    /// probability maps; returns the gradient w.r.t. the input image.
    pub fn backward(
        &mut self,
        fwd: &Forward,
        grad_main: &Array3<f64>,
        grad_aux: Option<&Array3<f64>>,
    ) -> Array3<f64> {
        let g_logits = softmax_backward(grad_main, &fwd.main);
        let mut g_feat = self.main_head.backward(&g_logits, &fwd.cache.main_cache);
        if let (Some(ga), Some(aux_probs), Some(head), Some(cache)) =
            (grad_aux, fwd.aux.as_ref(), self.aux_head.as_mut(), fwd.cache.aux_cache.as_ref())
        {
            let g_aux_logits = softmax_backward(ga, aux_probs);
            g_feat += &head.backward(&g_aux_logits, cache);
        }

        let mut skip_grads: Vec<Array3<f64>> = Vec::with_capacity(DEPTH);
        let mut g = g_feat;
        for stage in (0..DEPTH).rev() {
            let g_cat = self.dec[stage].backward(&g, &fwd.cache.dec[stage]);
            let (skip_c, _) = fwd.cache.split[stage];
            let (g_skip, g_up) = split_channels(&g_cat, skip_c);
            skip_grads.push(g_skip); // reverse stage order: shallowest first
            g = self.ups[stage].backward(&g_up, &fwd.cache.ups[stage]);
        }
        let mut g = self.bottleneck.backward(&g, &fwd.cache.bott);
        for level in (0..DEPTH).rev() {
            let mut g_enc = MaxPool::backward(&g, &fwd.cache.pools[level]);
            // skip_grads[DEPTH-1-stage] pairs with enc level (DEPTH-1-stage).
            g_enc += &skip_grads[level];
            g = self.enc[level].backward(&g_enc, &fwd.cache.enc[level]);
        }
        g
    }

    /// Inference: probability maps wrapped as all-valid predictions.
    pub fn predict(&self, image: &Image) -> Result<(SoftPrediction, Option<SoftPrediction>)> {
        let fwd = self.forward(image)?;
        Ok((SoftPrediction::all_valid(fwd.main), fwd.aux.map(SoftPrediction::all_valid)))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        for block in &mut self.enc {
            block.visit_params(f);
        }
        self.bottleneck.visit_params(f);
        for stage in 0..DEPTH {
            self.ups[stage].visit_params(f);
            self.dec[stage].visit_params(f);
        }
        self.main_head.visit_params(f);
        if let Some(head) = &mut self.aux_head {
            head.visit_params(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.grad.fill(0.0));
    }

    pub fn n_params(&self) -> usize {
        let mut total = 0;
        for block in &self.enc {
            total += block.n_params();
        }
        total += self.bottleneck.n_params();
        for stage in 0..DEPTH {
            total += self.ups[stage].n_params() + self.dec[stage].n_params();
        }
        total += self.main_head.n_params();
        if let Some(head) = &self.aux_head {
            total += head.n_params();
        }
        total
    }
}

fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

fn split_channels(x: &Array3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    let (view_a, view_b) = x.view().split_at(ndarray::Axis(0), first);
    (view_a.to_owned(), view_b.to_owned())
}
