//! Spatial self-attention over feature positions and the classification-gated
//! channel attention on the segmentation logits.

use ndarray::{Array, Array2, Array3, Axis, Dimension, Zip};

use crate::nn::layers::ConvCache;
use crate::nn::{Conv2d, Grads, Init, ParamStore};

/// Non-local block: every position is replaced by a softmax-weighted average of
/// value vectors over all positions, and the result is added back to the input.
///
/// The weights for position `i` are `softmax_j(<b_i, c_j>)`, where `b` and `c`
/// are 1×1-convolution embeddings of width `embed_channels` and the values come
/// from a third 1×1 convolution that keeps the input width.
#[derive(Debug, Clone)]
pub struct SpatialSelfAttention {
    pub embed_b: Conv2d,
    pub embed_c: Conv2d,
    pub value: Conv2d,
    pub channels: usize,
    pub embed_channels: usize,
}

#[derive(Debug)]
pub struct AttentionCache {
    embed_caches: [ConvCache; 3],
    b: Array2<f64>,
    c: Array2<f64>,
    d: Array2<f64>,
    weights: Array2<f64>,
}

impl AttentionCache {
    /// Row-stochastic `N × N` attention matrix from the last forward pass.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

impl SpatialSelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        embed_channels: usize,
        seed: u64,
    ) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        let init = Init::Normal { std };
        Self {
            embed_b: Conv2d::with_init(
                store,
                &format!("{name}.embed_b"),
                [channels, embed_channels, 1, 1, 1],
                init,
                seed,
            ),
            embed_c: Conv2d::with_init(
                store,
                &format!("{name}.embed_c"),
                [channels, embed_channels, 1, 1, 1],
                init,
                seed,
            ),
            value: Conv2d::with_init(
                store,
                &format!("{name}.value"),
                [channels, channels, 1, 1, 1],
                init,
                seed,
            ),
            channels,
            embed_channels,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, AttentionCache) {
        let (ch, h, w) = x.dim();
        let n = h * w;
        let flat = |t: Array3<f64>, rows: usize| {
            t.into_shape_with_order((rows, n)).expect("contiguous embedding")
        };
        let (b, cache_b) = self.embed_b.forward(store, x);
        let (c, cache_c) = self.embed_c.forward(store, x);
        let (d, cache_d) = self.value.forward(store, x);
        let b = flat(b, self.embed_channels);
        let c = flat(c, self.embed_channels);
        let d = flat(d, ch);

        let mut weights = b.t().dot(&c);
        softmax_rows(&mut weights);

        let attended = d.dot(&weights.t());
        let out = attended
            .into_shape_with_order((ch, h, w))
            .expect("contiguous output")
            + x;
        (
            out,
            AttentionCache {
                embed_caches: [cache_b, cache_c, cache_d],
                b,
                c,
                d,
                weights,
            },
        )
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &AttentionCache,
        dout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let (ch, h, w) = dout.dim();
        let n = h * w;
        let dy = dout.to_shape((ch, n)).expect("contiguous gradient");
        let p = &cache.weights;

        let dd = dy.dot(p);
        let dp = dy.t().dot(&cache.d);
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let ds = Zip::from(p)
            .and(&dp)
            .and_broadcast(&row_dot.insert_axis(Axis(1)))
            .map_collect(|&pij, &gij, &r| pij * (gij - r));
        let db = cache.c.dot(&ds.t());
        let dc = cache.b.dot(&ds);

        let unflat = |t: Array2<f64>, rows: usize| {
            t.into_shape_with_order((rows, h, w)).expect("contiguous gradient")
        };
        let [cache_b, cache_c, cache_d] = &cache.embed_caches;

        let mut dx = dout.clone();
        dx += &self.value.backward(store, cache_d, &unflat(dd, ch), grads);
        dx += &self
            .embed_b
            .backward(store, cache_b, &unflat(db, self.embed_channels), grads);
        dx += &self
            .embed_c
            .backward(store, cache_c, &unflat(dc, self.embed_channels), grads);
        dx
    }
}

/// Numerically stable in-place softmax along each row.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// `A' = A + alpha * s * A`, applied elementwise.
pub fn classification_gated_attention<D: Dimension>(
    a: &Array<f64, D>,
    s: f64,
    alpha: f64,
) -> Array<f64, D> {
    let gain = 1.0 + alpha * s;
    a.mapv(|v| gain * v)
}

/// Gradients of the gate with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct GateGrads<D: Dimension> {
    pub da: Array<f64, D>,
    pub ds: f64,
    pub dalpha: f64,
}

pub fn classification_gated_attention_backward<D: Dimension>(
    a: &Array<f64, D>,
    s: f64,
    alpha: f64,
    dout: &Array<f64, D>,
) -> GateGrads<D> {
    let gain = 1.0 + alpha * s;
    let a_dot_g: f64 = Zip::from(a).and(dout).fold(0.0, |acc, &x, &g| acc + x * g);
    GateGrads {
        da: dout.mapv(|g| gain * g),
        ds: alpha * a_dot_g,
        dalpha: s * a_dot_g,
    }
}
