use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::param("activation", format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of a dense classifier: an affine chain whose hidden layers carry
/// an activation and whose final layer emits raw logits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_dims: Vec<(usize, usize)>,
    activations: Vec<Activation>,
}

impl ModelSpec {
    pub fn new(layer_dims: Vec<(usize, usize)>, activations: Vec<Activation>) -> Result<Self> {
        if layer_dims.is_empty() {
            return Err(Error::param("layer_dims", "a model needs at least one layer"));
        }
        if activations.len() + 1 != layer_dims.len() {
            return Err(Error::param(
                "activations",
                format!(
                    "{} layers need {} hidden activations, got {}",
                    layer_dims.len(),
                    layer_dims.len() - 1,
                    activations.len()
                ),
            ));
        }
        for (i, &(input, output)) in layer_dims.iter().enumerate() {
            if input == 0 || output == 0 {
                return Err(Error::param("layer_dims", format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layer_dims.windows(2).enumerate() {
            if pair[0].1 != pair[1].0 {
                return Err(Error::param(
                    "layer_dims",
                    format!(
                        "layer {i} emits {} values but layer {} expects {}",
                        pair[0].1,
                        i + 1,
                        pair[1].0
                    ),
                ));
            }
        }
        Ok(Self {
            layer_dims,
            activations,
        })
    }

    /// `input -> hidden[0] -> ... -> classes`, one activation for every hidden layer.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, activation: Activation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let dims = widths.windows(2).map(|w| (w[0], w[1])).collect();
        Self::new(dims, vec![activation; hidden.len()])
    }

    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1].1
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.iter().map(|&(i, o)| o * i + o).sum()
    }
}

/// Weights `[out_dim x in_dim]` and bias `[out_dim]` of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// Weights (row-major) followed by bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &LayerParams) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(i, o)| LayerParams::zeros(i, o))
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let mut model = Self::zeros(spec);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
            for w in layer.weights.as_mut_slice() {
                *w = dist.sample(rng);
            }
        }
        model
    }

    pub fn from_layers(spec: ModelSpec, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::ArchitectureMismatch(format!(
                "spec has {} layers, got {}",
                spec.num_layers(),
                layers.len()
            )));
        }
        for (l, (layer, &(i, o))) in layers.iter().zip(spec.layer_dims()).enumerate() {
            if layer.weights.shape() != (o, i) || layer.bias.len() != o {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer {l}: expected {o}x{i} weights and {o} biases"
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerParams::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(LayerParams::values_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    /// Multiplies every parameter by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn ensure_same_architecture(&self, other: &ModelParams) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.spec.layer_dims(),
                other.spec.layer_dims()
            )));
        }
        Ok(())
    }

    /// Largest absolute parameter difference; `None` when architectures differ.
    pub fn max_abs_diff(&self, other: &ModelParams) -> Option<f64> {
        if self.spec != other.spec {
            return None;
        }
        Some(
            self.values()
                .zip(other.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Per-layer gradients, congruent with the model they were taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

impl GradientSet {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerParams::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerParams::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(LayerParams::values_mut)
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn is_congruent(&self, model: &ModelParams) -> bool {
        self.layers.len() == model.num_layers() && self.layers.iter().zip(model.layers()).all(|(g, l)| g.same_shape(l))
    }
}

/// Mini-batch of feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::param("batch", "a batch needs at least one row"));
        }
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("batch features".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn spec_rejects_broken_chains() {
        assert!(ModelSpec::new(vec![(2, 3), (4, 2)], vec![Activation::Tanh]).is_err());
        assert!(ModelSpec::new(vec![], vec![]).is_err());
        assert!(ModelSpec::new(vec![(2, 3), (3, 2)], vec![]).is_err());
        let s = ModelSpec::mlp(8, &[16, 8], 4, Activation::Tanh).unwrap();
        assert_eq!(s.layer_dims(), &[(8, 16), (16, 8), (8, 4)]);
        assert_eq!(s.output_dim(), 4);
        assert_eq!(s.num_params(), 8 * 16 + 16 + 16 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::mlp(5, &[7], 3, Activation::Tanh).unwrap();
        let a = ModelParams::init(&spec, &mut rng_from(3));
        let b = ModelParams::init(&spec, &mut rng_from(3));
        assert_eq!(a, b);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.layers()[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn batch_validation() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(Batch::new(m.clone(), vec![0, 1]).is_err());
        let bad = Matrix::from_rows(&[vec![f64::NAN, 2.0]]).unwrap();
        assert!(Batch::new(bad, vec![0]).is_err());
        assert!(Batch::new(Matrix::zeros(0, 2), vec![]).is_err());
    }
}
