//! Encoder–decoder feature extractors. Both return the coarse tensor the
//! classifier pools and the quarter-resolution decoder features that feed the
//! segmentation output.

use ndarray::{Array1, Array3};

use super::config::{BackboneKind, ModelConfig};
use crate::nn::layers::{
    concat_channels, global_avg_pool, global_avg_pool_backward, relu1, relu1_backward,
    relu3, relu3_backward, split_channels, ConvCache,
};
use crate::nn::{Conv2d, Grads, Init, Linear, ParamStore, Resize};

#[derive(Debug, Clone)]
struct ConvRelu {
    conv: Conv2d,
}

#[derive(Debug)]
struct ConvReluCache {
    conv: ConvCache,
    out: Array3<f64>,
}

impl ConvRelu {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        seed: u64,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, name, cin, cout, kernel, stride, dilation, seed),
        }
    }

    fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, ConvReluCache) {
        let (pre, conv) = self.conv.forward(store, x);
        let out = relu3(pre);
        (
            out.clone(),
            ConvReluCache { conv, out },
        )
    }

    fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvReluCache,
        dout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let dpre = relu3_backward(&cache.out, dout);
        self.conv.backward(store, &cache.conv, &dpre, grads)
    }
}

#[derive(Debug)]
pub struct BackboneOutput {
    pub coarse: Array3<f64>,
    pub features: Array3<f64>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Backbone {
    DeskSmall(DeskSmall),
    DeepLab(DeepLabV3Plus),
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum BackboneCache {
    DeskSmall(DeskSmallCache),
    DeepLab(DeepLabCache),
}

impl Backbone {
    pub fn new(store: &mut ParamStore, config: &ModelConfig) -> Self {
        match config.backbone {
            BackboneKind::DeskSmall => Backbone::DeskSmall(DeskSmall::new(store, config)),
            BackboneKind::Deeplabv3plus => Backbone::DeepLab(DeepLabV3Plus::new(store, config)),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (BackboneOutput, BackboneCache) {
        match self {
            Backbone::DeskSmall(b) => {
                let (o, c) = b.forward(store, x);
                (o, BackboneCache::DeskSmall(c))
            }
            Backbone::DeepLab(b) => {
                let (o, c) = b.forward(store, x);
                (o, BackboneCache::DeepLab(c))
            }
        }
    }

    /// Returns the gradient with respect to the input image.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &BackboneCache,
        dcoarse: Option<&Array3<f64>>,
        dfeatures: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        match (self, cache) {
            (Backbone::DeskSmall(b), BackboneCache::DeskSmall(c)) => {
                b.backward(store, c, dcoarse, dfeatures, grads)
            }
            (Backbone::DeepLab(b), BackboneCache::DeepLab(c)) => {
                b.backward(store, c, dcoarse, dfeatures, grads)
            }
            _ => unreachable!("cache produced by a different backbone"),
        }
    }
}

/// Strided encoder stages, each `conv3x3/2 → ReLU → conv3x3 → ReLU`.
#[derive(Debug, Clone)]
struct Encoder {
    stages: Vec<(ConvRelu, ConvRelu)>,
}

#[derive(Debug)]
struct EncoderCache {
    stages: Vec<(ConvReluCache, ConvReluCache)>,
}

impl EncoderCache {
    fn stage_output(&self, i: usize) -> &Array3<f64> {
        &self.stages[i].1.out
    }
}

impl Encoder {
    /// With `dilate_last`, the final stage keeps its input resolution and uses
    /// dilation 2 instead of striding.
    fn new(store: &mut ParamStore, widths: &[usize], dilate_last: bool, seed: u64) -> Self {
        let mut cin = 3;
        let last = widths.len() - 1;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let (stride, dil) = if dilate_last && i == last { (1, 2) } else { (2, 1) };
                let name = format!("encoder.stage{i}");
                let a = ConvRelu::new(store, &format!("{name}.conv_a"), cin, w, 3, stride, 1, seed);
                let b = ConvRelu::new(store, &format!("{name}.conv_b"), w, w, 3, 1, dil, seed);
                cin = w;
                (a, b)
            })
            .collect();
        Self { stages }
    }

    fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> EncoderCache {
        let mut cur = x.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        for (a, b) in &self.stages {
            let (mid, ca) = a.forward(store, &cur);
            let (out, cb) = b.forward(store, &mid);
            cur = out;
            stages.push((ca, cb));
        }
        EncoderCache { stages }
    }

    /// `dstage[i]` is the external gradient arriving at stage `i`'s output.
    fn backward(
        &self,
        store: &ParamStore,
        cache: &EncoderCache,
        mut dstage: Vec<Option<Array3<f64>>>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let mut carry: Option<Array3<f64>> = None;
        for i in (0..self.stages.len()).rev() {
            let mut d = match (carry.take(), dstage[i].take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Array3::zeros(cache.stage_output(i).raw_dim()),
            };
            let (a, b) = &self.stages[i];
            let (ca, cb) = &cache.stages[i];
            d = b.backward(store, cb, &d, grads);
            d = a.backward(store, ca, &d, grads);
            carry = Some(d);
        }
        carry.expect("at least one stage")
    }
}

fn add_opt(a: Array3<f64>, b: Option<&Array3<f64>>) -> Array3<f64> {
    match b {
        Some(b) => a + b,
        None => a,
    }
}

/// Plain encoder with a mirrored bilinear-upsampling decoder and one skip
/// connection from the quarter-resolution encoder stage.
#[derive(Debug, Clone)]
pub struct DeskSmall {
    encoder: Encoder,
    /// Decoder convs from the coarsest level upwards; the last one fuses the skip.
    decoder: Vec<ConvRelu>,
    widths: Vec<usize>,
}

#[derive(Debug)]
pub struct DeskSmallCache {
    encoder: EncoderCache,
    decoder: Vec<(Resize, ConvReluCache)>,
}

impl DeskSmall {
    fn new(store: &mut ParamStore, config: &ModelConfig) -> Self {
        let widths = config.encoder_channels.clone();
        let seed = config.seed;
        let encoder = Encoder::new(store, &widths, false, seed);
        let levels = widths.len();
        let decoder = (1..levels - 1)
            .rev()
            .map(|level| {
                let cin = if level == 1 {
                    widths[2] + widths[1]
                } else {
                    widths[level + 1]
                };
                ConvRelu::new(
                    store,
                    &format!("decoder.level{level}"),
                    cin,
                    widths[level],
                    3,
                    1,
                    1,
                    seed,
                )
            })
            .collect();
        Self {
            encoder,
            decoder,
            widths,
        }
    }

    fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (BackboneOutput, DeskSmallCache) {
        let enc = self.encoder.forward(store, x);
        let levels = self.widths.len();
        let mut cur = enc.stage_output(levels - 1).clone();
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for (block, level) in self.decoder.iter().zip((1..levels - 1).rev()) {
            let target = enc.stage_output(level);
            let (_, th, tw) = target.dim();
            let (_, h, w) = cur.dim();
            let resize = Resize::new(h, w, th, tw);
            let mut up = resize.forward(&cur);
            if level == 1 {
                up = concat_channels(&up, target);
            }
            let (out, cache) = block.forward(store, &up);
            decoder.push((resize, cache));
            cur = out;
        }
        let coarse = enc.stage_output(levels - 1).clone();
        (
            BackboneOutput {
                coarse,
                features: cur,
            },
            DeskSmallCache {
                encoder: enc,
                decoder,
            },
        )
    }

    fn backward(
        &self,
        store: &ParamStore,
        cache: &DeskSmallCache,
        dcoarse: Option<&Array3<f64>>,
        dfeatures: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let levels = self.widths.len();
        let mut dstage: Vec<Option<Array3<f64>>> = vec![None; levels];
        let mut d = dfeatures.clone();
        let steps = self.decoder.iter().zip(&cache.decoder).zip((1..levels - 1).rev());
        for ((block, (resize, bc)), level) in steps.rev() {
            let mut dup = block.backward(store, bc, &d, grads);
            if level == 1 {
                let upsampled = self.widths[2];
                let (a, skip) = split_channels(&dup, upsampled);
                dstage[1] = Some(skip);
                dup = a;
            }
            d = resize.backward(&dup);
        }
        dstage[levels - 1] = Some(add_opt(d, dcoarse));
        self.encoder.backward(store, &cache.encoder, dstage, grads)
    }
}

/// DeepLab-v3+-style extractor: dilated last encoder stage, atrous spatial
/// pyramid pooling (1×1, atrous 3×3 branches, image pooling) and a decoder
/// that fuses quarter-resolution low-level features. The classifier taps the
/// pyramid output.
#[derive(Debug, Clone)]
pub struct DeepLabV3Plus {
    encoder: Encoder,
    aspp_branches: Vec<ConvRelu>,
    aspp_pool: Linear,
    aspp_project: ConvRelu,
    low_level: ConvRelu,
    decoder_a: ConvRelu,
    decoder_b: ConvRelu,
    aspp_channels: usize,
}

#[derive(Debug)]
pub struct DeepLabCache {
    encoder: EncoderCache,
    branches: Vec<ConvReluCache>,
    pooled: Array1<f64>,
    pool_out: Array1<f64>,
    project: ConvReluCache,
    low_level: ConvReluCache,
    resize: Resize,
    decoder_a: ConvReluCache,
    decoder_b: ConvReluCache,
}

impl DeepLabV3Plus {
    fn new(store: &mut ParamStore, config: &ModelConfig) -> Self {
        let seed = config.seed;
        let widths = &config.encoder_channels;
        let a = &config.aspp;
        let encoder = Encoder::new(store, widths, true, seed);
        let top = *widths.last().expect("validated");
        let mut aspp_branches = vec![ConvRelu::new(store, "aspp.branch0", top, a.channels, 1, 1, 1, seed)];
        for (i, &rate) in a.rates.iter().enumerate() {
            aspp_branches.push(ConvRelu::new(
                store,
                &format!("aspp.branch{}", i + 1),
                top,
                a.channels,
                3,
                1,
                rate,
                seed,
            ));
        }
        let aspp_pool = Linear::new(
            store,
            "aspp.image_pool",
            top,
            a.channels,
            Init::Normal {
                std: (2.0 / top as f64).sqrt(),
            },
            seed,
        );
        let concat = a.channels * (aspp_branches.len() + 1);
        let aspp_project = ConvRelu::new(store, "aspp.project", concat, a.channels, 1, 1, 1, seed);
        let low_level = ConvRelu::new(
            store,
            "decoder.low_level",
            widths[1],
            a.low_level_channels,
            1,
            1,
            1,
            seed,
        );
        let decoder_a = ConvRelu::new(
            store,
            "decoder.fuse_a",
            a.channels + a.low_level_channels,
            a.decoder_channels,
            3,
            1,
            1,
            seed,
        );
        let decoder_b = ConvRelu::new(
            store,
            "decoder.fuse_b",
            a.decoder_channels,
            a.decoder_channels,
            3,
            1,
            1,
            seed,
        );
        Self {
            encoder,
            aspp_branches,
            aspp_pool,
            aspp_project,
            low_level,
            decoder_a,
            decoder_b,
            aspp_channels: a.channels,
        }
    }

    fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (BackboneOutput, DeepLabCache) {
        let enc = self.encoder.forward(store, x);
        let top = enc.stage_output(self.encoder.stages.len() - 1);
        let (_, h, w) = top.dim();

        let mut parts = Vec::with_capacity(self.aspp_branches.len() + 1);
        let mut branches = Vec::with_capacity(self.aspp_branches.len());
        for b in &self.aspp_branches {
            let (o, c) = b.forward(store, top);
            parts.push(o);
            branches.push(c);
        }
        let pooled = global_avg_pool(top);
        let pool_out = relu1(self.aspp_pool.forward(store, &pooled));
        parts.push(Array3::from_shape_fn((self.aspp_channels, h, w), |(c, _, _)| pool_out[c]));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("same spatial dims");
        let (aspp, project) = self.aspp_project.forward(store, &stacked);

        let (low, low_level) = self.low_level.forward(store, enc.stage_output(1));
        let (_, lh, lw) = low.dim();
        let resize = Resize::new(h, w, lh, lw);
        let fused = concat_channels(&resize.forward(&aspp), &low);
        let (mid, decoder_a) = self.decoder_a.forward(store, &fused);
        let (features, decoder_b) = self.decoder_b.forward(store, &mid);
        (
            BackboneOutput {
                coarse: aspp,
                features,
            },
            DeepLabCache {
                encoder: enc,
                branches,
                pooled,
                pool_out,
                project,
                low_level,
                resize,
                decoder_a,
                decoder_b,
            },
        )
    }

    fn backward(
        &self,
        store: &ParamStore,
        cache: &DeepLabCache,
        dcoarse: Option<&Array3<f64>>,
        dfeatures: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let stages = self.encoder.stages.len();
        let mut dstage: Vec<Option<Array3<f64>>> = vec![None; stages];

        let d = self.decoder_b.backward(store, &cache.decoder_b, dfeatures, grads);
        let d = self.decoder_a.backward(store, &cache.decoder_a, &d, grads);
        let (d_up, d_low) = split_channels(&d, self.aspp_channels);
        dstage[1] = Some(self.low_level.backward(store, &cache.low_level, &d_low, grads));
        let daspp = add_opt(cache.resize.backward(&d_up), dcoarse);

        let dstacked = self.aspp_project.backward(store, &cache.project, &daspp, grads);
        let (_, h, w) = dstacked.dim();
        let mut dtop = Array3::<f64>::zeros((0, 0, 0));
        let k = self.aspp_channels;
        for (i, (b, c)) in self.aspp_branches.iter().zip(&cache.branches).enumerate() {
            let part = dstacked
                .slice(ndarray::s![i * k..(i + 1) * k, .., ..])
                .to_owned();
            let g = b.backward(store, c, &part, grads);
            dtop = if dtop.is_empty() { g } else { dtop + g };
        }
        let n = self.aspp_branches.len();
        let dpool_map = dstacked.slice(ndarray::s![n * k.., .., ..]);
        let dpool_out = dpool_map.sum_axis(ndarray::Axis(2)).sum_axis(ndarray::Axis(1));
        let dpool_pre = relu1_backward(&cache.pool_out, &dpool_out);
        let dpooled = self
            .aspp_pool
            .backward(store, &cache.pooled, &dpool_pre, grads);
        dtop += &global_avg_pool_backward(&dpooled, h, w);

        dstage[stages - 1] = Some(dtop);
        self.encoder.backward(store, &cache.encoder, dstage, grads)
    }
}
