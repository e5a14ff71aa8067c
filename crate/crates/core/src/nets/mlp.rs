use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::Scalar;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of a dense feed-forward network.
///
/// Hidden layers compute `relu(norm(W h + b))` (normalisation only when
/// `layer_norm` is set); the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub init_seed: u64,
    /// Multiplier on the initial output-layer weights and biases.
    pub output_scale: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation: Activation::Relu,
            layer_norm: false,
            init_seed: 0,
            output_scale: 1.0,
        }
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(NetError::InvalidSpec("all layer widths must be >= 1".into()));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(NetError::InvalidSpec("output scale must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        let n_hidden = self.hidden.len();
        self.layer_dims()
            .iter()
            .enumerate()
            .map(|(l, &(i, o))| o * i + o + if self.layer_norm && l < n_hidden { 2 * o } else { 0 })
            .sum()
    }

    /// Fan-in scaled uniform initialisation driven by `init_seed`.
    pub fn init<F: Scalar>(&self) -> ParamSet<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        let n_hidden = self.hidden.len();
        let layers = self
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(l, (fan_in, fan_out))| {
                let mut bound = 1.0 / (fan_in as f64).sqrt();
                if l == n_hidden {
                    bound *= self.output_scale;
                }
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| F::lit(rng.random_range(-bound..=bound)));
                let bias = Array1::from_shape_fn(fan_out, |_| F::lit(rng.random_range(-bound..=bound)));
                let norm = (self.layer_norm && l < n_hidden)
                    .then(|| (Array1::from_elem(fan_out, F::one()), Array1::zeros(fan_out)));
                LayerParams { weight, bias, norm }
            })
            .collect();
        ParamSet { layers }
    }

    fn check_params<F: Scalar>(&self, params: &ParamSet<F>) {
        let dims = self.layer_dims();
        assert_eq!(params.layers.len(), dims.len(), "parameter set does not match the network spec");
        for (layer, &(i, o)) in params.layers.iter().zip(&dims) {
            assert_eq!(layer.weight.dim(), (o, i), "parameter set does not match the network spec");
        }
    }

    /// Output for a single input vector.
    pub fn forward<F: Scalar>(&self, params: &ParamSet<F>, input: &[F]) -> Vec<F> {
        assert_eq!(input.len(), self.input_dim, "input length does not match the network spec");
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        self.forward_batch(params, x).0.into_raw_vec_and_offset().0
    }

    /// Batched forward pass over rows of `input`. The returned tape feeds [`Self::backward`].
    pub fn forward_batch<F: Scalar>(&self, params: &ParamSet<F>, input: ArrayView2<F>) -> (Array2<F>, Tape<F>) {
        self.check_params(params);
        assert_eq!(input.ncols(), self.input_dim, "input width does not match the network spec");
        let n_layers = params.layers.len();
        let mut tape = Tape { inputs: Vec::with_capacity(n_layers), hidden: Vec::with_capacity(n_layers - 1) };
        let mut h = input.to_owned();
        for (l, layer) in params.layers.iter().enumerate() {
            let mut z = Array2::zeros((h.nrows(), layer.weight.nrows()));
            ndarray::linalg::general_mat_mul(F::one(), &h, &layer.weight.t(), F::zero(), &mut z);
            z += &layer.bias;
            tape.inputs.push(h);
            if l + 1 == n_layers {
                return (z, tape);
            }
            let mut norm = None;
            if let Some((gain, shift)) = &layer.norm {
                let (zn, inv_std) = normalize_rows(&z);
                let (gain, shift) = (gain.as_slice().expect("contiguous"), shift.as_slice().expect("contiguous"));
                let width = gain.len();
                let src = zn.as_slice().expect("standard layout");
                let dst = z.as_slice_mut().expect("standard layout");
                for (out, row) in dst.chunks_exact_mut(width).zip(src.chunks_exact(width)) {
                    for (((o, &v), &g), &b) in out.iter_mut().zip(row).zip(gain).zip(shift) {
                        *o = (v * g + b).max(F::zero());
                    }
                }
                norm = Some((zn, inv_std));
            } else {
                z.mapv_inplace(|v| v.max(F::zero()));
            }
            h = z;
            tape.hidden.push(HiddenCache { norm });
        }
        unreachable!("network always has an output layer")
    }

    /// Reverse pass of `upstream . output`.
    ///
    /// Parameter gradients are accumulated (summed over rows) into `grads` when given;
    /// the gradient with respect to the input rows is returned.
    pub fn backward<F: Scalar>(
        &self,
        params: &ParamSet<F>,
        tape: &Tape<F>,
        upstream: ArrayView2<F>,
        mut grads: Option<&mut ParamSet<F>>,
    ) -> Array2<F> {
        let n_layers = params.layers.len();
        assert_eq!(upstream.ncols(), self.output_dim, "upstream width does not match the network spec");
        assert_eq!(upstream.nrows(), tape.inputs[0].nrows(), "upstream rows do not match the tape");
        let mut d = upstream.to_owned();
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            if l + 1 < n_layers {
                let cache = &tape.hidden[l];
                // The next layer's input is this layer's activation.
                Zip::from(&mut d).and(&tape.inputs[l + 1]).for_each(|g, &a| {
                    if a <= F::zero() {
                        *g = F::zero();
                    }
                });
                if let (Some((gain, _)), Some((zn, inv_std))) = (&layer.norm, &cache.norm) {
                    if let Some(g) = grads.as_deref_mut() {
                        let (dgain, dshift) = g.layers[l].norm.as_mut().expect("gradient layout matches");
                        *dgain += &(&d * zn).sum_axis(Axis(0));
                        *dshift += &d.sum_axis(Axis(0));
                    }
                    d = norm_backward(&(&d * gain), zn, inv_std);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                ndarray::linalg::general_mat_mul(F::one(), &d.t(), &tape.inputs[l], F::one(), &mut gl.weight);
                gl.bias += &d.sum_axis(Axis(0));
            }
            d = d.dot(&layer.weight);
        }
        d
    }

    /// Gradient of `upstream . output` with respect to every parameter, single input.
    pub fn grad_params<F: Scalar>(&self, params: &ParamSet<F>, input: &[F], upstream: &[F]) -> ParamSet<F> {
        assert_eq!(upstream.len(), self.output_dim, "upstream length does not match the network spec");
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (_, tape) = self.forward_batch(params, x);
        let mut grads = params.zeros_like();
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row view");
        self.backward(params, &tape, u, Some(&mut grads));
        grads
    }

    /// Gradient of `upstream . output` with respect to the input vector.
    pub fn grad_input<F: Scalar>(&self, params: &ParamSet<F>, input: &[F], upstream: &[F]) -> Vec<F> {
        assert_eq!(upstream.len(), self.output_dim, "upstream length does not match the network spec");
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (_, tape) = self.forward_batch(params, x);
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row view");
        self.backward(params, &tape, u, None).into_raw_vec_and_offset().0
    }
}

fn normalize_rows<F: Scalar>(z: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let n = F::from_usize_lossy(z.ncols());
    let eps = F::lit(NORM_EPS);
    let mut zn = z.as_standard_layout().into_owned();
    let mut inv_std = Array1::zeros(z.nrows());
    let width = z.ncols();
    let data = zn.as_slice_mut().expect("standard layout");
    for (row, inv) in data.chunks_exact_mut(width.max(1)).zip(inv_std.iter_mut()) {
        let mean = row.iter().copied().sum::<F>() / n;
        let mut var = F::zero();
        for v in row.iter_mut() {
            *v -= mean;
            var += *v * *v;
        }
        *inv = F::one() / (var / n + eps).sqrt();
        for v in row.iter_mut() {
            *v *= *inv;
        }
    }
    (zn, inv_std)
}

fn norm_backward<F: Scalar>(dzn: &Array2<F>, zn: &Array2<F>, inv_std: &Array1<F>) -> Array2<F> {
    let n = F::from_usize_lossy(zn.ncols());
    let width = zn.ncols().max(1);
    let mut dz = dzn.as_standard_layout().into_owned();
    let zn = zn.as_slice().expect("standard layout");
    let out = dz.as_slice_mut().expect("standard layout");
    for ((o, z), &inv) in out.chunks_exact_mut(width).zip(zn.chunks_exact(width)).zip(inv_std.iter()) {
        let mut mean_d = F::zero();
        let mut mean_dz = F::zero();
        for (&a, &b) in o.iter().zip(z) {
            mean_d += a;
            mean_dz += a * b;
        }
        mean_d /= n;
        mean_dz /= n;
        for (ov, &zv) in o.iter_mut().zip(z) {
            *ov = inv * (*ov - mean_d - zv * mean_dz);
        }
    }
    dz
}

struct HiddenCache<F> {
    norm: Option<(Array2<F>, Array1<F>)>,
}

/// Intermediate values recorded by a batched forward pass.
pub struct Tape<F> {
    inputs: Vec<Array2<F>>,
    hidden: Vec<HiddenCache<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    /// `fan_out x fan_in`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    /// Normalisation gain and shift.
    pub norm: Option<(Array1<F>, Array1<F>)>,
}

/// All trainable arrays of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
                norm: l.norm.as_ref().map(|(g, s)| (Array1::zeros(g.raw_dim()), Array1::zeros(s.raw_dim()))),
            })
            .collect();
        Self { layers }
    }

    /// Named views in a fixed order: `layer{i}.weight`, `layer{i}.bias`,
    /// `layer{i}.norm_gain`, `layer{i}.norm_shift`.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.weight.shape().to_vec(), slice(&l.weight)));
            out.push((format!("layer{i}.bias"), l.bias.shape().to_vec(), l.bias.as_slice().expect("contiguous")));
            if let Some((g, s)) = &l.norm {
                out.push((format!("layer{i}.norm_gain"), g.shape().to_vec(), g.as_slice().expect("contiguous")));
                out.push((format!("layer{i}.norm_shift"), s.shape().to_vec(), s.as_slice().expect("contiguous")));
            }
        }
        out
    }

    /// Mutable slices in the same order as [`Self::named`].
    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("contiguous"));
            out.push(l.bias.as_slice_mut().expect("contiguous"));
            if let Some((g, s)) = &mut l.norm {
                out.push(g.as_slice_mut().expect("contiguous"));
                out.push(s.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    pub fn slices(&self) -> Vec<&[F]> {
        self.named().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<F> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, values: &[F]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter vector has the wrong length");
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.named();
        let b = other.named();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.1 == y.1)
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(F::zero());
        }
    }

    pub fn scale(&mut self, factor: F) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    /// `self = (1 - tau) * self + tau * online`, elementwise.
    pub fn polyak_from(&mut self, online: &Self, tau: F) -> Result<(), NetError> {
        if !self.same_shape(online) {
            return Err(NetError::ShapeMismatch);
        }
        let keep = F::one() - tau;
        for (t, o) in self.slices_mut().into_iter().zip(online.slices()) {
            t.iter_mut().zip(o).for_each(|(t, &o)| *t = keep * *t + tau * o);
        }
        Ok(())
    }
}

fn slice<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("contiguous")
}

/// Returns `target' = (1 - tau) * target + tau * online`.
pub fn polyak_update<F: Scalar>(target: &ParamSet<F>, online: &ParamSet<F>, tau: F) -> Result<ParamSet<F>, NetError> {
    if !(tau > F::zero() && tau <= F::one()) {
        return Err(NetError::InvalidTau(tau.as_f64()));
    }
    let mut out = target.clone();
    out.polyak_from(online, tau)?;
    Ok(out)
}

/// Copies a single row of a matrix into a fresh vector.
pub fn row_vec<F: Scalar>(m: &Array2<F>, i: usize) -> Vec<F> {
    m.slice(s![i, ..]).to_vec()
}

/// Concatenates two row-aligned matrices column-wise.
pub fn hcat<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}
