use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward encoder: affine layers with leaky-ReLU between them and a
/// linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<Layer>,
    /// 1-based index of the hidden layer whose activations are tapped.
    tap: usize,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub z: Array2<f64>,
    /// Activations at the tap layer (empty for free coordinates).
    pub intermediate: Array2<f64>,
    pub cache: Option<ForwardCache>,
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

impl Encoder {
    /// Uniform He-style initialisation scaled by fan-in, zero biases.
    pub fn new<R: Rng>(widths: &[usize], tap: usize, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!(
                "encoder widths {widths:?} need >= 2 positive entries"
            )));
        }
        let n_layers = widths.len() - 1;
        if n_layers >= 2 && !(1..n_layers).contains(&tap) {
            return Err(Error::invalid(format!("tap layer {tap} outside 1..={}", n_layers - 1)));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || dist.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            layers,
            tap: if n_layers >= 2 { tap } else { 0 },
        })
    }

    pub fn from_layers(layers: Vec<Layer>, tap: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(Error::invalid(format!(
                    "layer {i} output width does not match layer {}",
                    i + 1
                )));
            }
        }
        if let Some((i, _)) = layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.bias.len() != l.weight.ncols())
        {
            return Err(Error::invalid(format!("layer {i} bias length mismatch")));
        }
        let n_layers = layers.len();
        if n_layers >= 2 && !(1..n_layers).contains(&tap) {
            return Err(Error::invalid(format!("tap layer {tap} outside 1..={}", n_layers - 1)));
        }
        Ok(Self { layers, tap })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn tap(&self) -> usize {
        self.tap
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardPass> {
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} features, encoder expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        let mut intermediate = Array2::zeros((x.nrows(), 0));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = a.dot(&layer.weight);
            h += &layer.bias;
            inputs.push(a);
            if l == last {
                a = h;
            } else {
                a = h.mapv(leaky);
                pre.push(h);
                if l + 1 == self.tap {
                    intermediate = a.clone();
                }
            }
        }
        Ok(ForwardPass {
            z: a,
            intermediate,
            cache: Some(ForwardCache { inputs, pre }),
        })
    }

    /// Parameter gradients given ∂L/∂Z, in [`Encoder::blocks_mut`] order.
    pub fn backward(&self, cache: &ForwardCache, dz: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        let n = self.layers.len();
        let mut grads = vec![Vec::new(); 2 * n];
        let mut delta = dz.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let gw = cache.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads[2 * l] = gw.into_raw_vec_and_offset().0;
            grads[2 * l + 1] = gb.to_vec();
            if l > 0 {
                let mut back = delta.dot(&layer.weight.t());
                let h = &cache.pre[l - 1];
                ndarray::Zip::from(&mut back).and(h).for_each(|g, &hv| {
                    if hv <= 0.0 {
                        *g *= LEAKY_SLOPE;
                    }
                });
                delta = back;
            }
        }
        grads
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((
                format!("layer{l}.weight"),
                layer.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((format!("layer{l}.bias"), layer.bias.as_slice_mut().expect("contiguous")));
        }
        out
    }
}

/// What is being optimised.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingModel {
    /// One free `d`-dimensional coordinate row per sample.
    FreeCoordinates(Array2<f64>),
    Encoder(Encoder),
}

impl EmbeddingModel {
    /// Gaussian initialisation with standard deviation 1e-2.
    pub fn free<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::invalid("free coordinates need n >= 1 and d >= 1"));
        }
        let normal = Normal::new(0.0, 1e-2).expect("valid std");
        Ok(EmbeddingModel::FreeCoordinates(Array2::from_shape_simple_fn(
            (n, dim),
            || normal.sample(rng),
        )))
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EmbeddingModel::FreeCoordinates(z) => z.ncols(),
            EmbeddingModel::Encoder(e) => e.output_dim(),
        }
    }

    /// Forward pass for the rows `idx`; `x` is the full input matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, idx: &[usize]) -> Result<ForwardPass> {
        match self {
            EmbeddingModel::FreeCoordinates(z) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= z.nrows()) {
                    return Err(Error::invalid(format!("row {bad} outside 0..{}", z.nrows())));
                }
                Ok(ForwardPass {
                    z: z.select(Axis(0), idx),
                    intermediate: Array2::zeros((idx.len(), 0)),
                    cache: None,
                })
            }
            EmbeddingModel::Encoder(e) => e.forward(x.select(Axis(0), idx).view()),
        }
    }

    /// Embeds every row of `x` (ignored for free coordinates).
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            EmbeddingModel::FreeCoordinates(z) => Ok(z.clone()),
            EmbeddingModel::Encoder(e) => {
                let mut out = Array2::zeros((x.nrows(), e.output_dim()));
                for (start, chunk) in x.axis_chunks_iter(Axis(0), 1024).enumerate() {
                    let z = e.forward(chunk)?.z;
                    out.slice_mut(ndarray::s![start * 1024..start * 1024 + chunk.nrows(), ..])
                        .assign(&z);
                }
                Ok(out)
            }
        }
    }

    /// Parameter gradients from ∂L/∂Z of a batch.
    pub fn backward(&self, pass: &ForwardPass, idx: &[usize], dz: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        match self {
            EmbeddingModel::FreeCoordinates(z) => {
                let d = z.ncols();
                let mut g = vec![0.0; z.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        g[i * d + c] += dz[[r, c]];
                    }
                }
                vec![g]
            }
            EmbeddingModel::Encoder(e) => e.backward(pass.cache.as_ref().expect("encoder pass has a cache"), dz),
        }
    }

    /// Named mutable parameter blocks, matching [`EmbeddingModel::backward`].
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        match self {
            EmbeddingModel::FreeCoordinates(z) => {
                vec![("coordinates".to_string(), z.as_slice_mut().expect("standard layout"))]
            }
            EmbeddingModel::Encoder(e) => e.blocks_mut(),
        }
    }

    pub fn is_encoder(&self) -> bool {
        matches!(self, EmbeddingModel::Encoder(_))
    }
}
