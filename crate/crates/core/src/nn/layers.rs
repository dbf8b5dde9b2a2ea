//! Differentiable building blocks over single-sample `(channels, height, width)`
//! tensors. Each layer exposes a `forward` that returns whatever its
//! `backward` needs, and a `backward` that accumulates parameter gradients into
//! a [`Grads`] and returns the gradient with respect to the layer input.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, Axis, Ix2};

use super::params::{Grads, Init, ParamId, ParamStore};

pub(crate) fn matrix_view(t: &ArrayD<f64>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("parameter tensor is contiguous")
}

fn add_matrix(target: &mut ArrayD<f64>, delta: &Array2<f64>) {
    let shape = target.shape().to_vec();
    let mut view = target
        .view_mut()
        .into_shape_with_order((delta.nrows(), delta.ncols()))
        .expect("parameter tensor is contiguous");
    view += delta;
    debug_assert_eq!(target.shape(), &shape[..]);
}

/// 2-D convolution with square kernels, zero padding and optional dilation.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Array2<f64>,
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        seed: u64,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Self::with_init(
            store,
            name,
            [in_channels, out_channels, kernel, stride, dilation],
            Init::Normal { std },
            seed,
        )
    }

    /// `dims` is `[in, out, kernel, stride, dilation]`; padding keeps "same"
    /// geometry for odd kernels.
    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 5],
        init: Init,
        seed: u64,
    ) -> Self {
        let [in_channels, out_channels, kernel, stride, dilation] = dims;
        let weight = store.register(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            init,
            seed,
        );
        let bias = store.register(&format!("{name}.bias"), &[out_channels], Init::Zeros, seed);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.padding - span) / self.stride + 1,
            (w + 2 * self.padding - span) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        if self.is_pointwise() {
            return x
                .to_shape((c, h * w))
                .expect("contiguous input")
                .into_owned();
        }
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let mut cols = Array2::<f64>::zeros((c * k * k, oh * ow));
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("fresh array");
        let n = oh * ow;
        for ci in 0..c {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let out_row = &mut dst[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki * self.dilation) as isize
                            - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj * self.dilation) as isize
                                - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out_row[oy * ow + ox] = in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let c = self.in_channels;
        if self.is_pointwise() {
            return dcols
                .to_shape((c, h, w))
                .expect("contiguous gradient")
                .into_owned();
        }
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let n = oh * ow;
        let mut dx = Array3::<f64>::zeros((c, h, w));
        let dcols = dcols.as_standard_layout();
        let src = dcols.as_slice().expect("standard layout");
        let dst = dx.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let col_row = &src[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki * self.dilation) as isize
                            - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj * self.dilation) as isize
                                - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += col_row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn weight_matrix<'a>(&self, store: &'a ParamStore) -> ArrayView2<'a, f64> {
        matrix_view(
            store.get(self.weight),
            self.out_channels,
            self.in_channels * self.kernel * self.kernel,
        )
    }

    pub fn forward(&self, store: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(x);
        let mut out = self.weight_matrix(store).dot(&cols);
        let bias = store.get(self.bias);
        for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row += *b;
        }
        let out = out
            .into_shape_with_order((self.out_channels, oh, ow))
            .expect("contiguous output");
        (
            out,
            ConvCache {
                cols,
                in_h: h,
                in_w: w,
            },
        )
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvCache,
        dout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let (co, oh, ow) = dout.dim();
        let d2 = dout
            .to_shape((co, oh * ow))
            .expect("contiguous gradient")
            .into_owned();
        let dw = d2.dot(&cache.cols.t());
        add_matrix(grads.get_mut(self.weight), &dw);
        let db = d2.sum_axis(Axis(1));
        *grads.get_mut(self.bias) += &db.into_dyn();
        let dcols = self.weight_matrix(store).t().dot(&d2);
        self.col2im(&dcols, cache.in_h, cache.in_w)
    }
}

/// Fully connected layer on a feature vector.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        seed: u64,
    ) -> Self {
        let weight = store.register(
            &format!("{name}.weight"),
            &[out_features, in_features],
            init,
            seed,
        );
        let bias = store.register(&format!("{name}.bias"), &[out_features], Init::Zeros, seed);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    fn weight_matrix<'a>(&self, store: &'a ParamStore) -> ArrayView2<'a, f64> {
        store
            .get(self.weight)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight")
    }

    pub fn forward(&self, store: &ParamStore, x: &Array1<f64>) -> Array1<f64> {
        let bias = store
            .get(self.bias)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("1-d bias");
        self.weight_matrix(store).dot(x) + bias
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Array1<f64>,
        dout: &Array1<f64>,
        grads: &mut Grads,
    ) -> Array1<f64> {
        let outer = dout
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        *grads.get_mut(self.weight) += &outer.into_dyn();
        *grads.get_mut(self.bias) += &dout.view().into_dyn();
        self.weight_matrix(store).t().dot(dout)
    }
}

pub fn relu3(x: Array3<f64>) -> Array3<f64> {
    x.mapv_into(|v| v.max(0.0))
}

pub fn relu1(x: Array1<f64>) -> Array1<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Gradient of ReLU given its *output*.
pub fn relu3_backward(out: &Array3<f64>, dout: &Array3<f64>) -> Array3<f64> {
    let mut d = dout.clone();
    d.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
    d
}

pub fn relu1_backward(out: &Array1<f64>, dout: &Array1<f64>) -> Array1<f64> {
    let mut d = dout.clone();
    d.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
    d
}

/// Linear interpolation weights from `input` samples to `output` samples,
/// half-pixel centred (the `align_corners = false` convention).
pub fn interpolation_matrix(input: usize, output: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((output, input));
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[[o, i0]] += 1.0 - frac;
        m[[o, i1]] += frac;
    }
    m
}

/// Separable bilinear resize of every channel to `(out_h, out_w)`.
#[derive(Debug, Clone)]
pub struct Resize {
    rows: Array2<f64>,
    cols: Array2<f64>,
}

impl Resize {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            rows: interpolation_matrix(in_h, out_h),
            cols: interpolation_matrix(in_w, out_w),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let c = x.dim().0;
        let mut out = Array3::zeros((c, self.rows.nrows(), self.cols.nrows()));
        for (plane, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
            dst.assign(&self.rows.dot(&plane).dot(&self.cols.t()));
        }
        out
    }

    pub fn backward(&self, dout: &Array3<f64>) -> Array3<f64> {
        let c = dout.dim().0;
        let mut dx = Array3::zeros((c, self.rows.ncols(), self.cols.ncols()));
        for (plane, mut dst) in dout.outer_iter().zip(dx.outer_iter_mut()) {
            dst.assign(&self.rows.t().dot(&plane).dot(&self.cols));
        }
        dx
    }
}

pub fn global_avg_pool(x: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = x.dim();
    x.to_shape((c, h * w))
        .expect("contiguous")
        .mean_axis(Axis(1))
        .expect("non-empty spatial extent")
}

pub fn global_avg_pool_backward(dpooled: &Array1<f64>, h: usize, w: usize) -> Array3<f64> {
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array3::zeros((dpooled.len(), h, w));
    for (mut plane, g) in dx.outer_iter_mut().zip(dpooled.iter()) {
        plane.fill(g * scale);
    }
    dx
}

pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

pub fn split_channels(d: &Array3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    (
        d.slice(s![..first, .., ..]).to_owned(),
        d.slice(s![first.., .., ..]).to_owned(),
    )
}
