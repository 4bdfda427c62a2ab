//! Minimal dense numeric kernel: row-major matrices, fully connected layers
//! with analytic forward/backward, per-channel affine normalization, pooling,
//! and seeded deterministic initialization.
//!
//! Everything is double precision and pure; all randomness enters through
//! explicit seeds, so repeated calls are bit-identical.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("matrix contains non-finite values".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// `self * other`, naive ikj loop.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hconcat row mismatch {} vs {}",
                self.rows, other.rows
            )));
        }
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }

    /// Columns `[lo, hi)` as a new matrix.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Matrix {
        assert!(lo <= hi && hi <= self.cols);
        let mut out = Matrix::zeros(self.rows, hi - lo);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[lo..hi]);
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("elementwise add shape mismatch".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn mul_elem(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("elementwise mul shape mismatch".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Pointwise nonlinearity attached to a [`LinearLayer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    /// Slope 0.01 on the negative side.
    LeakyRelu,
    Sigmoid,
    Silu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Silu => z * sigmoid(z),
        }
    }

    /// Derivative w.r.t. the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected layer: `out = activation(input * weight + bias)`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    /// `c_in x c_out` weight matrix.
    pub weight: Matrix,
    /// Length `c_out`.
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols {
            return Err(Error::Shape(format!(
                "bias length {} != weight cols {}",
                bias.len(),
                weight.cols
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Fan-in uniform initialized layer, deterministic per seed.
    pub fn seeded(c_in: usize, c_out: usize, activation: Activation, seed: u64) -> Self {
        let weight = Matrix::new(
            c_in,
            c_out,
            seeded_init(&[c_in, c_out], seed, InitScheme::FanInUniform).unwrap(),
        )
        .unwrap();
        let bias = vec![0.0; c_out];
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.rows
    }

    pub fn c_out(&self) -> usize {
        self.weight.cols
    }
}

/// Forward pass of a fully connected layer.
pub fn fc_forward(layer: &LinearLayer, input: &Matrix) -> Result<Matrix> {
    let z = fc_preactivation(layer, input)?;
    let data = z.data.iter().map(|&v| layer.activation.apply(v)).collect();
    Ok(Matrix {
        rows: z.rows,
        cols: z.cols,
        data,
    })
}

fn fc_preactivation(layer: &LinearLayer, input: &Matrix) -> Result<Matrix> {
    if input.cols != layer.weight.rows {
        return Err(Error::Shape(format!(
            "fc input cols {} != weight rows {}",
            input.cols, layer.weight.rows
        )));
    }
    let mut z = input.matmul(&layer.weight)?;
    for r in 0..z.rows {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

/// Gradients for one fully connected layer.
pub struct FcGrads {
    pub grad_in: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

/// Analytic backward pass through `fc_forward`.
///
/// `grad_out` is dL/d(output); returns dL/d(input), dL/d(weight), dL/d(bias).
pub fn fc_backward(layer: &LinearLayer, input: &Matrix, grad_out: &Matrix) -> Result<FcGrads> {
    let z = fc_preactivation(layer, input)?;
    if grad_out.rows != z.rows || grad_out.cols != z.cols {
        return Err(Error::Shape(format!(
            "grad_out {}x{} != output {}x{}",
            grad_out.rows, grad_out.cols, z.rows, z.cols
        )));
    }
    // dz = grad_out ⊙ act'(z)
    let mut dz = Matrix::zeros(z.rows, z.cols);
    for i in 0..z.data.len() {
        dz.data[i] = grad_out.data[i] * layer.activation.derivative(z.data[i]);
    }
    let grad_in = dz.matmul(&layer.weight.transpose())?;
    let grad_weight = input.transpose().matmul(&dz)?;
    let mut grad_bias = vec![0.0; z.cols];
    for r in 0..dz.rows {
        for (g, v) in grad_bias.iter_mut().zip(dz.row(r)) {
            *g += v;
        }
    }
    Ok(FcGrads {
        grad_in,
        grad_weight,
        grad_bias,
    })
}

/// Per-column mean of a non-empty matrix.
pub fn global_average_pool(attrs: &Matrix) -> Result<Vec<f64>> {
    if attrs.rows == 0 {
        return Err(Error::EmptyInput("global_average_pool over zero rows".into()));
    }
    let mut sums = vec![0.0; attrs.cols];
    for r in 0..attrs.rows {
        for (s, v) in sums.iter_mut().zip(attrs.row(r)) {
            *s += v;
        }
    }
    let n = attrs.rows as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Frozen per-channel affine transform (eval-mode batch norm stand-in).
#[derive(Debug, Clone)]
pub struct AffineNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineNorm {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::Shape("scale/shift length mismatch".into()));
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invariant("affine norm scale must be positive".into()));
        }
        Ok(Self { scale, shift })
    }

    /// Identity transform over `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// `out[i,c] = attrs[i,c] * scale[c] + shift[c]`.
pub fn affine_norm(norm: &AffineNorm, attrs: &Matrix) -> Result<Matrix> {
    if attrs.cols != norm.channels() {
        return Err(Error::Shape(format!(
            "affine norm channels {} != input cols {}",
            norm.channels(),
            attrs.cols
        )));
    }
    let mut out = attrs.clone();
    for r in 0..out.rows {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * norm.scale[c] + norm.shift[c];
        }
    }
    Ok(out)
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// U(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in = first dimension.
    FanInUniform,
    Zeros,
}

impl InitScheme {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "fan_in_uniform" => Ok(InitScheme::FanInUniform),
            "zeros" => Ok(InitScheme::Zeros),
            other => Err(Error::Config(format!("unknown init scheme '{other}'"))),
        }
    }
}

/// Deterministic initialization of a tensor with the given shape.
pub fn seeded_init(shape: &[usize], seed: u64, scheme: InitScheme) -> Result<Vec<f64>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Config("init shape must have positive dims".into()));
    }
    let len: usize = shape.iter().product();
    match scheme {
        InitScheme::Zeros => Ok(vec![0.0; len]),
        InitScheme::FanInUniform => {
            let fan_in = shape[0] as f64;
            let bound = 1.0 / fan_in.sqrt();
            let mut rng = seeded_rng(seed);
            Ok((0..len).map(|_| rng.gen_range(-bound..bound)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn fc_forward_identity() {
        let mut w = Matrix::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let layer = LinearLayer::new(w, vec![0.0; 3], Activation::None).unwrap();
        let x = random_matrix(4, 3, 1);
        let y = fc_forward(&layer, &x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn fc_forward_sigmoid_of_zero() {
        let w = Matrix::new(2, 1, vec![1.0, -1.0]).unwrap();
        let layer = LinearLayer::new(w, vec![0.0], Activation::Sigmoid).unwrap();
        let x = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let y = fc_forward(&layer, &x).unwrap();
        assert_eq!(y.get(0, 0), 0.5);
    }

    // Naive triple-loop oracle, independent of Matrix::matmul's loop order.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..a.cols {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn fc_forward_matches_matmul_oracle() {
        let layer = LinearLayer::seeded(5, 7, Activation::None, 42);
        let x = random_matrix(6, 5, 2);
        let y = fc_forward(&layer, &x).unwrap();
        let mut expected = matmul_oracle(&x, &layer.weight);
        for r in 0..expected.rows {
            for (v, b) in expected.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_forward_shape_error() {
        let layer = LinearLayer::seeded(5, 7, Activation::None, 3);
        let x = random_matrix(2, 4, 4);
        assert!(matches!(fc_forward(&layer, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn fc_backward_linear_bias_grad_is_row_count() {
        let layer = LinearLayer::seeded(3, 2, Activation::None, 5);
        let x = random_matrix(4, 3, 6);
        let ones = Matrix::new(4, 2, vec![1.0; 8]).unwrap();
        let g = fc_backward(&layer, &x, &ones).unwrap();
        for b in g.grad_bias {
            assert!((b - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_backward_zero_grad_out() {
        let layer = LinearLayer::seeded(3, 2, Activation::LeakyRelu, 5);
        let x = random_matrix(4, 3, 6);
        let zeros = Matrix::zeros(4, 2);
        let g = fc_backward(&layer, &x, &zeros).unwrap();
        assert!(g.grad_in.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));
    }

    /// Scalar loss used by the finite-difference checks: sum of outputs
    /// weighted by a fixed random matrix so every output entry matters.
    fn probe_loss(layer: &LinearLayer, x: &Matrix, probe: &Matrix) -> f64 {
        let y = fc_forward(layer, x).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn fc_backward_matches_finite_differences() {
        for (act, seed) in [
            (Activation::None, 10u64),
            (Activation::Relu, 11),
            (Activation::LeakyRelu, 12),
            (Activation::Sigmoid, 13),
            (Activation::Silu, 14),
        ] {
            let mut layer = LinearLayer::seeded(4, 3, act, seed);
            let x = random_matrix(5, 4, seed + 100);
            let probe = random_matrix(5, 3, seed + 200);
            let grads = fc_backward(&layer, &x, &probe).unwrap();
            let h = 1e-6;

            for r in 0..4 {
                for c in 0..3 {
                    let orig = layer.weight.get(r, c);
                    layer.weight.set(r, c, orig + h);
                    let up = probe_loss(&layer, &x, &probe);
                    layer.weight.set(r, c, orig - h);
                    let down = probe_loss(&layer, &x, &probe);
                    layer.weight.set(r, c, orig);
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads.grad_weight.get(r, c);
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-5,
                        "weight grad mismatch {act:?} ({r},{c}): {numeric} vs {analytic}"
                    );
                }
            }
            for c in 0..3 {
                let orig = layer.bias[c];
                layer.bias[c] = orig + h;
                let up = probe_loss(&layer, &x, &probe);
                layer.bias[c] = orig - h;
                let down = probe_loss(&layer, &x, &probe);
                layer.bias[c] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.grad_bias[c];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!((numeric - analytic).abs() / denom < 1e-5);
            }
            // input gradient via perturbing x
            let mut x2 = x.clone();
            for r in 0..x.rows {
                for c in 0..x.cols {
                    let orig = x2.get(r, c);
                    x2.set(r, c, orig + h);
                    let up = probe_loss(&layer, &x2, &probe);
                    x2.set(r, c, orig - h);
                    let down = probe_loss(&layer, &x2, &probe);
                    x2.set(r, c, orig);
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads.grad_in.get(r, c);
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!((numeric - analytic).abs() / denom < 1e-5);
                }
            }
        }
    }

    #[test]
    fn fc_forward_linear_in_input_with_zero_bias() {
        let mut layer = LinearLayer::seeded(4, 3, Activation::None, 21);
        layer.bias = vec![0.0; 3];
        let x = random_matrix(2, 4, 22);
        let a = 3.25;
        let y1 = fc_forward(&layer, &x.scale(a)).unwrap();
        let y2 = fc_forward(&layer, &x).unwrap().scale(a);
        for (p, q) in y1.data().iter().zip(y2.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_constant_and_symmetric() {
        let m = Matrix::new(3, 2, vec![4.0; 6]).unwrap();
        assert_eq!(global_average_pool(&m).unwrap(), vec![4.0, 4.0]);
        let m = Matrix::new(2, 2, vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        assert_eq!(global_average_pool(&m).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn gap_matches_compensated_sum_oracle() {
        let m = random_matrix(100, 64, 30);
        let got = global_average_pool(&m).unwrap();
        // Kahan-summation oracle per column
        for c in 0..64 {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for r in 0..100 {
                let y = m.get(r, c) - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            assert!((got[c] - sum / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_row_permutation_invariant() {
        let m = random_matrix(20, 5, 31);
        let mut rows: Vec<Vec<f64>> = (0..20).map(|r| m.row(r).to_vec()).collect();
        rows.reverse();
        rows.swap(0, 7);
        let p = Matrix::from_rows(&rows).unwrap();
        let a = global_average_pool(&m).unwrap();
        let b = global_average_pool(&p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_empty_is_error() {
        let m = Matrix::zeros(0, 4);
        assert!(matches!(global_average_pool(&m), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn affine_norm_identity_and_example() {
        let id = AffineNorm::identity(2);
        let m = random_matrix(3, 2, 40);
        assert_eq!(affine_norm(&id, &m).unwrap(), m);

        let n = AffineNorm::new(vec![2.0], vec![1.0]).unwrap();
        let m = Matrix::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(affine_norm(&n, &m).unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn affine_norm_round_trip() {
        let n = AffineNorm::new(vec![2.0, 0.5, 3.0], vec![1.0, -2.0, 0.25]).unwrap();
        let inv = AffineNorm::new(
            n.scale.iter().map(|s| 1.0 / s).collect(),
            n.scale
                .iter()
                .zip(&n.shift)
                .map(|(s, b)| -b / s)
                .collect(),
        )
        .unwrap();
        let m = random_matrix(4, 3, 41);
        let rt = affine_norm(&inv, &affine_norm(&n, &m).unwrap()).unwrap();
        for (a, b) in rt.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_norm_rejects_nonpositive_scale() {
        assert!(matches!(
            AffineNorm::new(vec![0.0], vec![0.0]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn seeded_init_deterministic_and_bounded() {
        let a = seeded_init(&[100, 3], 9, InitScheme::FanInUniform).unwrap();
        let b = seeded_init(&[100, 3], 9, InitScheme::FanInUniform).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn seeded_init_unknown_scheme_is_config_error() {
        assert!(matches!(InitScheme::parse("noise"), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_init_mean_within_three_sigma() {
        // U(-b, b) with b = 1/sqrt(4) = 0.5: sd of the mean over N draws is
        // b/sqrt(3N).
        let n = 100_000;
        let vals = seeded_init(&[4, n / 4], 77, InitScheme::FanInUniform).unwrap();
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let sigma = 0.5 / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3σ {}", 3.0 * sigma);
    }
}
