use std::path::Path;

use ndarray::{Array2, Array3, Axis, Ix2};
use serde::{Deserialize, Serialize};

use super::attention::{
    classification_gated_attention, classification_gated_attention_backward, AttentionCache,
    SpatialSelfAttention,
};
use super::backbone::{Backbone, BackboneCache};
use super::checkpoint;
use super::config::ModelConfig;
use super::head::{ClassificationHead, HeadCache};
use crate::error::{Error, Result};
use crate::nn::layers::ConvCache;
use crate::nn::{sigmoid, Conv2d, Grads, Init, ParamId, ParamStore, Resize};

/// Per-image network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegClassOutput {
    /// Gated segmentation logits `A'(x)`, one per input pixel.
    pub seg_logits: Array2<f64>,
    pub seg_prob: Array2<f64>,
    pub class_logit: Option<f64>,
    /// Image-level fire probability `s(x)`; absent without a classification branch.
    pub class_prob: Option<f64>,
    pub alpha: f64,
}

impl SegClassOutput {
    pub fn from_logits(seg_logits: Array2<f64>, class_logit: Option<f64>, alpha: f64) -> Self {
        Self {
            seg_prob: seg_logits.mapv(sigmoid),
            seg_logits,
            class_prob: class_logit.map(sigmoid),
            class_logit,
            alpha,
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitMode<'a> {
    Random,
    /// Encoder tensors are read from a checkpoint-format weight file.
    PretrainedEncoder(&'a Path),
}

/// Joint classification/segmentation network.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    attention: Option<SpatialSelfAttention>,
    head: Option<ClassificationHead>,
    projection: Conv2d,
    alpha: ParamId,
    spatial_enabled: bool,
    gate_enabled: bool,
}

#[derive(Debug)]
pub struct ForwardCache {
    backbone: BackboneCache,
    attention: Option<AttentionCache>,
    projection: ConvCache,
    upsample: Resize,
    gate_input: Array2<f64>,
    head: Option<HeadCache>,
    class_prob: Option<f64>,
}

impl ForwardCache {
    pub fn attention(&self) -> Option<&AttentionCache> {
        self.attention.as_ref()
    }

    /// The ungated logit map `A(x)`.
    pub fn gate_input(&self) -> &Array2<f64> {
        &self.gate_input
    }
}

pub fn build_model(config: &ModelConfig, init: InitMode<'_>) -> Result<Model> {
    let mut model = Model::new(config)?;
    if let InitMode::PretrainedEncoder(path) = init {
        let weights = checkpoint::read_tensors(path)?;
        model.load_encoder(&weights)?;
    }
    Ok(model)
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, config);
        let feat = config.feature_channels();
        let attention = config.attention_spatial.then(|| {
            SpatialSelfAttention::new(&mut store, "attention", feat, config.embed_channels(), seed)
        });
        let projection = Conv2d::with_init(
            &mut store,
            "seg.projection",
            [feat, 1, 1, 1, 1],
            Init::Normal {
                std: (1.0 / feat as f64).sqrt(),
            },
            seed,
        );
        let head = config.classification_branch.then(|| {
            ClassificationHead::new(
                &mut store,
                config.coarse_channels(),
                config.classifier_hidden,
                seed,
            )
        });
        let alpha = store.register("gate.alpha", &[1], Init::Zeros, seed);
        Ok(Self {
            config: config.clone(),
            store,
            backbone,
            attention,
            head,
            projection,
            alpha,
            spatial_enabled: config.attention_spatial,
            gate_enabled: config.attention_classgate,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn alpha(&self) -> f64 {
        self.store.get(self.alpha)[0]
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.store.get_mut(self.alpha)[0] = alpha;
    }

    pub fn alpha_id(&self) -> ParamId {
        self.alpha
    }

    pub fn head(&self) -> Option<&ClassificationHead> {
        self.head.as_ref()
    }

    /// Parameter ids belonging to the classification branch.
    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, name, _)| name.starts_with("classifier."))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Same parameters with the attention blocks switched at run time. Blocks
    /// can only be switched on if the model was built with them.
    pub fn with_attention(&self, spatial: bool, classgate: bool) -> Result<Self> {
        if spatial && self.attention.is_none() {
            return Err(Error::InvalidConfig("model has no spatial attention block".into()));
        }
        if classgate && self.head.is_none() {
            return Err(Error::InvalidConfig("model has no classification branch".into()));
        }
        let mut m = self.clone();
        m.spatial_enabled = spatial;
        m.gate_enabled = classgate;
        m.config.attention_spatial = spatial;
        m.config.attention_classgate = classgate;
        Ok(m)
    }

    fn load_encoder(&mut self, weights: &[(String, ndarray::ArrayD<f64>)]) -> Result<()> {
        let mut mismatched = Vec::new();
        let expected: Vec<(String, Vec<usize>)> = self
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(_, n, t)| (n.to_owned(), t.shape().to_vec()))
            .collect();
        for (name, shape) in &expected {
            match weights.iter().find(|(n, _)| n == name) {
                Some((_, t)) if t.shape() == shape.as_slice() => {}
                _ => mismatched.push(name.clone()),
            }
        }
        for (name, _) in weights {
            if name.starts_with("encoder.") && !expected.iter().any(|(n, _)| n == name) {
                mismatched.push(name.clone());
            }
        }
        if !mismatched.is_empty() {
            mismatched.sort();
            return Err(Error::IncompatibleWeights(mismatched));
        }
        for (name, t) in weights {
            if name.starts_with("encoder.") {
                self.store.assign(name, t.clone())?;
            }
        }
        Ok(())
    }

    fn check_image(&self, image: &Array3<f64>) -> Result<()> {
        let n = self.config.input_size;
        if image.dim() != (n, n, 3) {
            return Err(Error::Shape(format!(
                "expected a {n}x{n}x3 image, got {:?}",
                image.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Array3<f64>) -> Result<SegClassOutput> {
        self.forward_train(image).map(|(o, _)| o)
    }

    /// Forward pass that also returns everything [`Model::backward`] needs.
    pub fn forward_train(&self, image: &Array3<f64>) -> Result<(SegClassOutput, ForwardCache)> {
        self.check_image(image)?;
        let store = &self.store;
        let chw = image
            .view()
            .permuted_axes([2, 0, 1])
            .as_standard_layout()
            .into_owned();
        let (out, backbone) = self.backbone.forward(store, &chw);

        let (class_logit, head) = match &self.head {
            Some(h) => {
                let (l, c) = h.forward(store, &out.coarse);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        let class_prob = class_logit.map(sigmoid);

        let (features, attention) = match (&self.attention, self.spatial_enabled) {
            (Some(block), true) => {
                let (f, c) = block.forward(store, &out.features);
                (f, Some(c))
            }
            _ => (out.features, None),
        };
        let (low, projection) = self.projection.forward(store, &features);
        let (_, lh, lw) = low.dim();
        let n = self.config.input_size;
        let upsample = Resize::new(lh, lw, n, n);
        let gate_input = upsample
            .forward(&low)
            .index_axis_move(Axis(0), 0)
            .into_dimensionality::<Ix2>()
            .expect("single channel");

        let alpha = self.alpha();
        let seg_logits = match (self.gate_enabled, class_prob) {
            (true, Some(s)) => classification_gated_attention(&gate_input, s, alpha),
            _ => gate_input.clone(),
        };
        let output = SegClassOutput::from_logits(seg_logits, class_logit, alpha);
        Ok((
            output,
            ForwardCache {
                backbone,
                attention,
                projection,
                upsample,
                gate_input,
                head,
                class_prob,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradients on the gated
    /// segmentation logits and the classification logit. Returns the gradient
    /// with respect to the input image in `(H, W, 3)` layout.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dseg_logits: &Array2<f64>,
        dclass_logit: f64,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let store = &self.store;
        let mut dclass = dclass_logit;
        let dgate_input = match (self.gate_enabled, cache.class_prob) {
            (true, Some(s)) => {
                let g = classification_gated_attention_backward(
                    &cache.gate_input,
                    s,
                    self.alpha(),
                    dseg_logits,
                );
                grads.get_mut(self.alpha)[0] += g.dalpha;
                dclass += g.ds * s * (1.0 - s);
                g.da
            }
            _ => dseg_logits.clone(),
        };
        let dlow = self.upsample_backward(cache, dgate_input);
        let mut dfeat = self.projection.backward(store, &cache.projection, &dlow, grads);
        if let (Some(block), Some(c)) = (&self.attention, &cache.attention) {
            dfeat = block.backward(store, c, &dfeat, grads);
        }
        let dcoarse = match (&self.head, &cache.head) {
            (Some(h), Some(c)) => Some(h.backward(store, c, dclass, grads)),
            _ => None,
        };
        let dimage = self
            .backbone
            .backward(store, &cache.backbone, dcoarse.as_ref(), &dfeat, grads);
        dimage.permuted_axes([1, 2, 0]).as_standard_layout().into_owned()
    }

    fn upsample_backward(&self, cache: &ForwardCache, d: Array2<f64>) -> Array3<f64> {
        cache.upsample.backward(&d.insert_axis(Axis(0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::BackboneKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(backbone: BackboneKind) -> ModelConfig {
        ModelConfig {
            backbone,
            input_size: 16,
            encoder_channels: vec![4, 6, 8],
            classifier_hidden: 5,
            aspp: crate::model::config::AsppConfig {
                channels: 6,
                rates: vec![1, 2],
                low_level_channels: 3,
                decoder_channels: 6,
            },
            seed: 21,
            ..Default::default()
        }
    }

    fn image(seed: u64, n: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((n, n, 3), |_| rng.random::<f64>())
    }

    /// Scalar test objective: weighted sum of both outputs.
    fn objective(model: &Model, x: &Array3<f64>, w: &Array2<f64>) -> f64 {
        let out = model.forward(x).unwrap();
        (&out.seg_logits * w).sum() + 0.7 * out.class_logit.unwrap()
    }

    fn check_param_grads(config: ModelConfig) {
        let mut model = Model::new(&config).unwrap();
        model.set_alpha(0.4);
        let x = image(3, config.input_size);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = model.forward_train(&x).unwrap();
        let mut grads = model.params().zeros_like();
        model.backward(&cache, &w, 0.7, &mut grads);

        let h = 1e-6;
        let mut checked = 0;
        let ids: Vec<_> = model.params().iter().map(|(id, n, _)| (id, n.to_owned())).collect();
        for (id, name) in ids {
            let len = model.params().get(id).len();
            for k in [0, len / 2, len - 1] {
                let analytic = grads.get(id).as_slice().unwrap()[k];
                let orig = model.params().get(id).as_slice().unwrap()[k];
                let probe = |v: f64| {
                    let mut m = model.clone();
                    m.params_mut().get_mut(id).as_slice_mut().unwrap()[k] = v;
                    objective(&m, &x, &w)
                };
                let fd = (probe(orig + h) - probe(orig - h)) / (2.0 * h);
                let denom = (analytic.abs() + fd.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-4,
                    "{name}[{k}]: analytic {analytic} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn desk_small_parameter_gradients_match_finite_differences() {
        check_param_grads(tiny(BackboneKind::DeskSmall));
    }

    #[test]
    fn deeplab_parameter_gradients_match_finite_differences() {
        check_param_grads(tiny(BackboneKind::Deeplabv3plus));
    }

    #[test]
    fn fresh_model_has_zero_alpha_and_classifier_std() {
        let model = Model::new(&ModelConfig::default()).unwrap();
        assert_eq!(model.alpha(), 0.0);
        let weights: Vec<f64> = model
            .params()
            .iter()
            .filter(|(_, n, _)| n.starts_with("classifier.") && n.ends_with(".weight"))
            .flat_map(|(_, _, t)| t.iter().copied().collect::<Vec<_>>())
            .collect();
        assert!(weights.len() >= 1000);
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let var = weights.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / weights.len() as f64;
        let std = var.sqrt();
        assert!((0.04..=0.06).contains(&std), "std {std}");
    }

    #[test]
    fn construction_is_deterministic() {
        let a = Model::new(&ModelConfig::default()).unwrap();
        let b = Model::new(&ModelConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn seg_output_matches_input_resolution() {
        for kind in [BackboneKind::DeskSmall, BackboneKind::Deeplabv3plus] {
            let model = Model::new(&tiny(kind)).unwrap();
            let out = model.forward(&image(1, 16)).unwrap();
            assert_eq!(out.seg_prob.dim(), (16, 16));
            assert!(out.seg_prob.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let model = Model::new(&tiny(BackboneKind::DeskSmall)).unwrap();
        assert!(matches!(model.forward(&image(1, 8)), Err(Error::Shape(_))));
    }
}
