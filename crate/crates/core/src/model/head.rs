use ndarray::{Array1, Array3};

use crate::nn::layers::{global_avg_pool, global_avg_pool_backward, relu1, relu1_backward};
use crate::nn::{Grads, Init, Linear, ParamStore};

/// Initial standard deviation of every classifier weight.
pub const CLASSIFIER_INIT_STD: f64 = 0.05;

/// Image-level classifier on the coarsest features: global average pooling,
/// then an optional hidden ReLU layer, then an affine map to one logit.
#[derive(Debug, Clone)]
pub struct ClassificationHead {
    pub hidden: Option<Linear>,
    pub output: Linear,
}

#[derive(Debug)]
pub struct HeadCache {
    pooled: Array1<f64>,
    hidden_out: Option<Array1<f64>>,
    h: usize,
    w: usize,
}

impl ClassificationHead {
    pub fn new(store: &mut ParamStore, channels: usize, hidden: usize, seed: u64) -> Self {
        let init = Init::Normal {
            std: CLASSIFIER_INIT_STD,
        };
        let (hidden, out_in) = if hidden > 0 {
            (
                Some(Linear::new(store, "classifier.hidden", channels, hidden, init, seed)),
                hidden,
            )
        } else {
            (None, channels)
        };
        let output = Linear::new(store, "classifier.output", out_in, 1, init, seed);
        Self { hidden, output }
    }

    pub fn forward(&self, store: &ParamStore, features: &Array3<f64>) -> (f64, HeadCache) {
        let (_, h, w) = features.dim();
        let pooled = global_avg_pool(features);
        let hidden_out = self
            .hidden
            .as_ref()
            .map(|l| relu1(l.forward(store, &pooled)));
        let logit = self
            .output
            .forward(store, hidden_out.as_ref().unwrap_or(&pooled))[0];
        (
            logit,
            HeadCache {
                pooled,
                hidden_out,
                h,
                w,
            },
        )
    }

    /// Logit of the pooled-feature classifier; `sigmoid` of it is the image-level
    /// fire probability.
    pub fn classification_head(&self, store: &ParamStore, features: &Array3<f64>) -> f64 {
        self.forward(store, features).0
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &HeadCache,
        dlogit: f64,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let dout = Array1::from_elem(1, dlogit);
        let input = cache.hidden_out.as_ref().unwrap_or(&cache.pooled);
        let mut d = self.output.backward(store, input, &dout, grads);
        if let (Some(hidden), Some(out)) = (&self.hidden, &cache.hidden_out) {
            let dpre = relu1_backward(out, &d);
            d = hidden.backward(store, &cache.pooled, &dpre, grads);
        }
        global_avg_pool_backward(&d, cache.h, cache.w)
    }
}
