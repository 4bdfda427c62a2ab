//! SNR-adaptive analog channel code for attribute rows.
//!
//! Encoder: residual expansion block, SNR-conditioned modulation block,
//! residual enhancement block. Decoder mirrors it. The encoded rows are
//! flattened to a complex signal, power-normalized to unit mean power,
//! passed through complex AWGN, denormalized, and decoded. Training
//! backpropagates end to end through the channel (noise treated as the
//! reparameterized additive sample, which is exact for AWGN) with an
//! adaptive-moment optimizer and decoupled weight decay.

use rand::Rng;

use crate::channel::{standard_normal, ChannelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{derive_seed, seeded_rng, tag};
use crate::tensor::{fc_backward, fc_forward, Activation, LinearLayer, Matrix};

/// Layer widths of the attribute channel code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JsccDims {
    /// Attribute channels entering the encoder (the compacted width).
    pub in_dim: usize,
    /// Expansion width of the transmitted representation.
    pub width: usize,
    /// Hidden width of the expanding / reducing residual blocks.
    pub hidden: usize,
    /// Number of columns the SNR scalar is broadcast into.
    pub snr_width: usize,
}

impl JsccDims {
    /// Stock configuration: 8 -> 20 -> 40 with an 8-wide SNR block.
    pub fn standard() -> Self {
        Self {
            in_dim: 8,
            width: 40,
            hidden: 20,
            snr_width: 8,
        }
    }

    /// Same proportions at a different expansion width.
    pub fn with_width(in_dim: usize, width: usize) -> Self {
        Self {
            in_dim,
            width,
            hidden: (width / 2).max(1),
            snr_width: 8,
        }
    }
}

/// SNR conditioning feature fed to the modulation blocks: dB scaled by 1/20,
/// clamped so the noiseless sentinel stays finite.
pub fn snr_feature(snr_db: f64) -> f64 {
    (snr_db / 20.0).clamp(-10.0, 10.0)
}

/// Residual block with a projection skip: `fc2(fc1(x)) + skip(x)`.
#[derive(Debug, Clone)]
struct ResProj {
    fc1: LinearLayer,
    fc2: LinearLayer,
    skip: LinearLayer,
}

struct ResProjTrace {
    x: Matrix,
    h1: Matrix,
}

impl ResProj {
    fn forward(&self, x: &Matrix) -> Result<(Matrix, ResProjTrace)> {
        let h1 = fc_forward(&self.fc1, x)?;
        let h2 = fc_forward(&self.fc2, &h1)?;
        let s = fc_forward(&self.skip, x)?;
        let out = h2.add(&s)?;
        Ok((
            out,
            ResProjTrace {
                x: x.clone(),
                h1,
            },
        ))
    }

    fn backward(
        &self,
        trace: &ResProjTrace,
        grad_out: &Matrix,
        grads: &mut Vec<LayerGrads>,
    ) -> Result<Matrix> {
        let g2 = fc_backward(&self.fc2, &trace.h1, grad_out)?;
        let g1 = fc_backward(&self.fc1, &trace.x, &g2.grad_in)?;
        let gs = fc_backward(&self.skip, &trace.x, grad_out)?;
        grads.push(LayerGrads::from(&g1));
        grads.push(LayerGrads::from(&g2));
        grads.push(LayerGrads::from(&gs));
        g1.grad_in.add(&gs.grad_in)
    }
}

/// Residual block with identity skip: `fc2(fc1(x)) + x`.
#[derive(Debug, Clone)]
struct ResIdent {
    fc1: LinearLayer,
    fc2: LinearLayer,
}

struct ResIdentTrace {
    x: Matrix,
    h1: Matrix,
}

impl ResIdent {
    fn forward(&self, x: &Matrix) -> Result<(Matrix, ResIdentTrace)> {
        let h1 = fc_forward(&self.fc1, x)?;
        let h2 = fc_forward(&self.fc2, &h1)?;
        let out = h2.add(x)?;
        Ok((
            out,
            ResIdentTrace {
                x: x.clone(),
                h1,
            },
        ))
    }

    fn backward(
        &self,
        trace: &ResIdentTrace,
        grad_out: &Matrix,
        grads: &mut Vec<LayerGrads>,
    ) -> Result<Matrix> {
        let g2 = fc_backward(&self.fc2, &trace.h1, grad_out)?;
        let g1 = fc_backward(&self.fc1, &trace.x, &g2.grad_in)?;
        grads.push(LayerGrads::from(&g1));
        grads.push(LayerGrads::from(&g2));
        g1.grad_in.add(grad_out)
    }
}

/// SNR-conditioned gating block: `b1 ⊙ (sigmoid_head(h) + linear_head(h))`
/// with `h = pre(b1 ∥ snr)`.
#[derive(Debug, Clone)]
struct ModBlock {
    pre: LinearLayer,
    gate_s: LinearLayer,
    gate_p: LinearLayer,
}

struct ModTrace {
    b1: Matrix,
    m_in: Matrix,
    m_h: Matrix,
    gate: Matrix,
}

impl ModBlock {
    fn forward(&self, b1: &Matrix, snr_val: f64, snr_width: usize) -> Result<(Matrix, ModTrace)> {
        let snr_block = Matrix::new(
            b1.rows,
            snr_width,
            vec![snr_val; b1.rows * snr_width],
        )?;
        let m_in = b1.hconcat(&snr_block)?;
        let m_h = fc_forward(&self.pre, &m_in)?;
        let gs = fc_forward(&self.gate_s, &m_h)?;
        let gp = fc_forward(&self.gate_p, &m_h)?;
        let gate = gs.add(&gp)?;
        let b2 = b1.mul_elem(&gate)?;
        Ok((
            b2,
            ModTrace {
                b1: b1.clone(),
                m_in,
                m_h,
                gate,
            },
        ))
    }

    fn backward(
        &self,
        trace: &ModTrace,
        grad_b2: &Matrix,
        width: usize,
        grads: &mut Vec<LayerGrads>,
    ) -> Result<Matrix> {
        let d_b1_direct = grad_b2.mul_elem(&trace.gate)?;
        let d_gate = grad_b2.mul_elem(&trace.b1)?;
        let g_s = fc_backward(&self.gate_s, &trace.m_h, &d_gate)?;
        let g_p = fc_backward(&self.gate_p, &trace.m_h, &d_gate)?;
        let d_mh = g_s.grad_in.add(&g_p.grad_in)?;
        let g_pre = fc_backward(&self.pre, &trace.m_in, &d_mh)?;
        // SNR columns are inputs, not parameters; their gradient is dropped
        let d_b1_concat = g_pre.grad_in.slice_cols(0, width);
        grads.push(LayerGrads::from(&g_pre));
        grads.push(LayerGrads::from(&g_s));
        grads.push(LayerGrads::from(&g_p));
        d_b1_direct.add(&d_b1_concat)
    }
}

/// Which tensor feeds the encoder's final residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Res2Wiring {
    /// Serial flow: the modulated tensor feeds the final block.
    #[default]
    SerialOnModulated,
    /// A/B variant: the final block reads the pre-modulation tensor,
    /// bypassing the gate in the residual output.
    SkipFromRes1,
}

/// Channel encoder for attribute rows.
#[derive(Debug, Clone)]
pub struct JsccEncoderModel {
    res1: ResProj,
    mod_block: ModBlock,
    res2: ResIdent,
    pub dims: JsccDims,
    pub wiring: Res2Wiring,
}

/// Channel decoder mirroring the encoder.
#[derive(Debug, Clone)]
pub struct JsccDecoderModel {
    res1: ResIdent,
    mod_block: ModBlock,
    res2: ResProj,
    pub dims: JsccDims,
}

/// Per-layer parameter gradients in the model's layer order.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl From<&crate::tensor::FcGrads> for LayerGrads {
    fn from(g: &crate::tensor::FcGrads) -> Self {
        Self {
            weight: g.grad_weight.clone(),
            bias: g.grad_bias.clone(),
        }
    }
}

fn seeded_layer(name: &str, c_in: usize, c_out: usize, act: Activation, seed: u64) -> LinearLayer {
    LinearLayer::seeded(c_in, c_out, act, derive_seed(seed, crate::rng::name_tag(name)))
}

impl JsccEncoderModel {
    pub fn seeded(dims: JsccDims, seed: u64) -> Self {
        let d = dims;
        Self {
            res1: ResProj {
                fc1: seeded_layer("enc.res1.fc1", d.in_dim, d.hidden, Activation::LeakyRelu, seed),
                fc2: seeded_layer("enc.res1.fc2", d.hidden, d.width, Activation::LeakyRelu, seed),
                skip: seeded_layer("enc.res1.skip", d.in_dim, d.width, Activation::None, seed),
            },
            mod_block: ModBlock {
                pre: seeded_layer(
                    "enc.mod.pre",
                    d.width + d.snr_width,
                    d.width,
                    Activation::LeakyRelu,
                    seed,
                ),
                gate_s: seeded_layer("enc.mod.gate_s", d.width, d.width, Activation::Sigmoid, seed),
                gate_p: seeded_layer("enc.mod.gate_p", d.width, d.width, Activation::None, seed),
            },
            res2: ResIdent {
                fc1: seeded_layer("enc.res2.fc1", d.width, d.width, Activation::LeakyRelu, seed),
                fc2: seeded_layer("enc.res2.fc2", d.width, d.width, Activation::LeakyRelu, seed),
            },
            dims,
            wiring: Res2Wiring::default(),
        }
    }

    pub fn layers(&self) -> Vec<&LinearLayer> {
        vec![
            &self.res1.fc1,
            &self.res1.fc2,
            &self.res1.skip,
            &self.mod_block.pre,
            &self.mod_block.gate_s,
            &self.mod_block.gate_p,
            &self.res2.fc1,
            &self.res2.fc2,
        ]
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        vec![
            &mut self.res1.fc1,
            &mut self.res1.fc2,
            &mut self.res1.skip,
            &mut self.mod_block.pre,
            &mut self.mod_block.gate_s,
            &mut self.mod_block.gate_p,
            &mut self.res2.fc1,
            &mut self.res2.fc2,
        ]
    }

    fn forward_traced(&self, x: &Matrix, snr_db: f64) -> Result<(Matrix, EncoderTrace)> {
        if x.cols != self.dims.in_dim {
            return Err(Error::Shape(format!(
                "encoder expects {} channels, got {}",
                self.dims.in_dim, x.cols
            )));
        }
        let (b1, t1) = self.res1.forward(x)?;
        let (b2, tm) = self
            .mod_block
            .forward(&b1, snr_feature(snr_db), self.dims.snr_width)?;
        let r_in = match self.wiring {
            Res2Wiring::SerialOnModulated => &b2,
            Res2Wiring::SkipFromRes1 => &b1,
        };
        let (out, t2) = self.res2.forward(r_in)?;
        Ok((
            out,
            EncoderTrace {
                res1: t1,
                mod_block: tm,
                res2: t2,
            },
        ))
    }

    fn backward_traced(
        &self,
        trace: &EncoderTrace,
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vec<LayerGrads>)> {
        let mut res2_grads = Vec::new();
        let g_rin = self.res2.backward(&trace.res2, grad_out, &mut res2_grads)?;

        let (g_b2, mut g_b1) = match self.wiring {
            Res2Wiring::SerialOnModulated => (g_rin, Matrix::zeros(grad_out.rows, self.dims.width)),
            Res2Wiring::SkipFromRes1 => (Matrix::zeros(grad_out.rows, self.dims.width), g_rin),
        };
        let mut mod_grads = Vec::new();
        let g_b1_mod =
            self.mod_block
                .backward(&trace.mod_block, &g_b2, self.dims.width, &mut mod_grads)?;
        g_b1 = g_b1.add(&g_b1_mod)?;

        let mut res1_grads = Vec::new();
        let g_x = self.res1.backward(&trace.res1, &g_b1, &mut res1_grads)?;

        let mut grads = res1_grads;
        grads.extend(mod_grads);
        grads.extend(res2_grads);
        Ok((g_x, grads))
    }

    pub fn save_params(&self, store: &mut ParamStore) -> Result<()> {
        let names = ENC_LAYER_NAMES;
        for (name, layer) in names.iter().zip(self.layers()) {
            store.insert_matrix(&format!("{name}.w"), &layer.weight)?;
            store.insert_vector(&format!("{name}.b"), &layer.bias)?;
        }
        Ok(())
    }

    pub fn load_params(store: &ParamStore, dims: JsccDims) -> Result<Self> {
        let mut model = Self::seeded(dims, 0);
        for (name, layer) in ENC_LAYER_NAMES.iter().zip(model.layers_mut()) {
            layer.weight = store.get_matrix(
                &format!("{name}.w"),
                layer.weight.rows,
                layer.weight.cols,
            )?;
            layer.bias = store.get_vector(&format!("{name}.b"), layer.bias.len())?;
        }
        Ok(model)
    }
}

const ENC_LAYER_NAMES: [&str; 8] = [
    "enc.res1.fc1",
    "enc.res1.fc2",
    "enc.res1.skip",
    "enc.mod.pre",
    "enc.mod.gate_s",
    "enc.mod.gate_p",
    "enc.res2.fc1",
    "enc.res2.fc2",
];

const DEC_LAYER_NAMES: [&str; 8] = [
    "dec.res1.fc1",
    "dec.res1.fc2",
    "dec.mod.pre",
    "dec.mod.gate_s",
    "dec.mod.gate_p",
    "dec.res2.fc1",
    "dec.res2.fc2",
    "dec.res2.skip",
];

pub struct EncoderTrace {
    res1: ResProjTrace,
    mod_block: ModTrace,
    res2: ResIdentTrace,
}

pub struct DecoderTrace {
    res1: ResIdentTrace,
    mod_block: ModTrace,
    res2: ResProjTrace,
}

impl JsccDecoderModel {
    pub fn seeded(dims: JsccDims, seed: u64) -> Self {
        let d = dims;
        Self {
            res1: ResIdent {
                fc1: seeded_layer("dec.res1.fc1", d.width, d.width, Activation::LeakyRelu, seed),
                fc2: seeded_layer("dec.res1.fc2", d.width, d.width, Activation::LeakyRelu, seed),
            },
            mod_block: ModBlock {
                pre: seeded_layer(
                    "dec.mod.pre",
                    d.width + d.snr_width,
                    d.width,
                    Activation::LeakyRelu,
                    seed,
                ),
                gate_s: seeded_layer("dec.mod.gate_s", d.width, d.width, Activation::Sigmoid, seed),
                gate_p: seeded_layer("dec.mod.gate_p", d.width, d.width, Activation::None, seed),
            },
            res2: ResProj {
                fc1: seeded_layer("dec.res2.fc1", d.width, d.hidden, Activation::LeakyRelu, seed),
                fc2: seeded_layer("dec.res2.fc2", d.hidden, d.in_dim, Activation::LeakyRelu, seed),
                skip: seeded_layer("dec.res2.skip", d.width, d.in_dim, Activation::None, seed),
            },
            dims,
        }
    }

    pub fn layers(&self) -> Vec<&LinearLayer> {
        vec![
            &self.res1.fc1,
            &self.res1.fc2,
            &self.mod_block.pre,
            &self.mod_block.gate_s,
            &self.mod_block.gate_p,
            &self.res2.fc1,
            &self.res2.fc2,
            &self.res2.skip,
        ]
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        vec![
            &mut self.res1.fc1,
            &mut self.res1.fc2,
            &mut self.mod_block.pre,
            &mut self.mod_block.gate_s,
            &mut self.mod_block.gate_p,
            &mut self.res2.fc1,
            &mut self.res2.fc2,
            &mut self.res2.skip,
        ]
    }

    fn forward_traced(&self, y: &Matrix, snr_db: f64) -> Result<(Matrix, DecoderTrace)> {
        if y.cols != self.dims.width {
            return Err(Error::Shape(format!(
                "decoder expects {} channels, got {}",
                self.dims.width, y.cols
            )));
        }
        let (b1, t1) = self.res1.forward(y)?;
        let (b2, tm) = self
            .mod_block
            .forward(&b1, snr_feature(snr_db), self.dims.snr_width)?;
        let (out, t2) = self.res2.forward(&b2)?;
        Ok((
            out,
            DecoderTrace {
                res1: t1,
                mod_block: tm,
                res2: t2,
            },
        ))
    }

    fn backward_traced(
        &self,
        trace: &DecoderTrace,
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vec<LayerGrads>)> {
        let mut res2_grads = Vec::new();
        let g_b2 = self.res2.backward(&trace.res2, grad_out, &mut res2_grads)?;
        let mut mod_grads = Vec::new();
        let g_b1 =
            self.mod_block
                .backward(&trace.mod_block, &g_b2, self.dims.width, &mut mod_grads)?;
        let mut res1_grads = Vec::new();
        let g_y = self.res1.backward(&trace.res1, &g_b1, &mut res1_grads)?;

        let mut grads = res1_grads;
        grads.extend(mod_grads);
        grads.extend(res2_grads);
        Ok((g_y, grads))
    }

    pub fn save_params(&self, store: &mut ParamStore) -> Result<()> {
        for (name, layer) in DEC_LAYER_NAMES.iter().zip(self.layers()) {
            store.insert_matrix(&format!("{name}.w"), &layer.weight)?;
            store.insert_vector(&format!("{name}.b"), &layer.bias)?;
        }
        Ok(())
    }

    pub fn load_params(store: &ParamStore, dims: JsccDims) -> Result<Self> {
        let mut model = Self::seeded(dims, 0);
        for (name, layer) in DEC_LAYER_NAMES.iter().zip(model.layers_mut()) {
            layer.weight = store.get_matrix(
                &format!("{name}.w"),
                layer.weight.rows,
                layer.weight.cols,
            )?;
            layer.bias = store.get_vector(&format!("{name}.b"), layer.bias.len())?;
        }
        Ok(model)
    }
}

/// Encodes attribute rows into the expanded channel representation.
pub fn jscc_encode(attrs: &Matrix, snr_db: f64, model: &JsccEncoderModel) -> Result<Matrix> {
    Ok(model.forward_traced(attrs, snr_db)?.0)
}

/// Decodes received channel rows back to attribute width.
pub fn jscc_decode(received: &Matrix, snr_db: f64, model: &JsccDecoderModel) -> Result<Matrix> {
    Ok(model.forward_traced(received, snr_db)?.0)
}

/// Complex baseband signal with its stored normalization factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// Factor divided out by `power_normalize`, multiplied back on
    /// denormalization. 1.0 for an unnormalized signal.
    pub scale: f64,
    /// Zero samples appended to make the element count even.
    pub pad: usize,
}

impl ComplexSignal {
    pub fn samples(&self) -> usize {
        self.re.len()
    }

    /// Mean power per complex sample.
    pub fn mean_power(&self) -> f64 {
        if self.re.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum();
        total / self.re.len() as f64
    }
}

/// Flattens rows in canonical order; first half of the elements become the
/// real part, second half the imaginary part. Odd counts are a shape error;
/// use [`complex_map_padded`] where the pad rule applies.
pub fn complex_map(features: &Matrix) -> Result<ComplexSignal> {
    let total = features.rows * features.cols;
    if total % 2 != 0 {
        return Err(Error::Shape(format!(
            "complex map needs an even element count, got {total}"
        )));
    }
    Ok(map_flat(features.data().to_vec(), 0))
}

/// Same as [`complex_map`], padding a single zero when the count is odd and
/// recording the pad for unmapping.
pub fn complex_map_padded(features: &Matrix) -> ComplexSignal {
    let mut flat = features.data().to_vec();
    let pad = flat.len() % 2;
    if pad == 1 {
        flat.push(0.0);
    }
    map_flat(flat, pad)
}

fn map_flat(flat: Vec<f64>, pad: usize) -> ComplexSignal {
    let half = flat.len() / 2;
    ComplexSignal {
        re: flat[..half].to_vec(),
        im: flat[half..].to_vec(),
        scale: 1.0,
        pad,
    }
}

/// Inverse of the mapping: strips the pad and restores the matrix.
pub fn complex_unmap(sig: &ComplexSignal, rows: usize, cols: usize) -> Result<Matrix> {
    let total = sig.re.len() + sig.im.len();
    if rows * cols + sig.pad != total {
        return Err(Error::Shape(format!(
            "unmap shape {rows}x{cols} (+{} pad) != {total} samples",
            sig.pad
        )));
    }
    let mut flat = Vec::with_capacity(total);
    flat.extend_from_slice(&sig.re);
    flat.extend_from_slice(&sig.im);
    flat.truncate(rows * cols);
    Matrix::new(rows, cols, flat)
}

/// Scales the signal to unit mean power, recording the factor.
pub fn power_normalize(sig: &ComplexSignal) -> Result<ComplexSignal> {
    let p = sig.mean_power();
    if p == 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero signal".into()));
    }
    let scale = p.sqrt();
    Ok(ComplexSignal {
        re: sig.re.iter().map(|v| v / scale).collect(),
        im: sig.im.iter().map(|v| v / scale).collect(),
        scale: sig.scale * scale,
        pad: sig.pad,
    })
}

/// Multiplies the stored normalization factor back.
pub fn power_denormalize(sig: &ComplexSignal) -> ComplexSignal {
    ComplexSignal {
        re: sig.re.iter().map(|v| v * sig.scale).collect(),
        im: sig.im.iter().map(|v| v * sig.scale).collect(),
        scale: 1.0,
        pad: sig.pad,
    }
}

/// Draws the additive noise a [`complex_awgn`] call would apply.
pub fn draw_complex_noise(samples: usize, cfg: &ChannelConfig) -> (Vec<f64>, Vec<f64>) {
    let var = cfg.noise_variance();
    if var == 0.0 {
        return (vec![0.0; samples], vec![0.0; samples]);
    }
    let sigma = var.sqrt();
    let mut rng = seeded_rng(cfg.seed);
    let re = (0..samples).map(|_| sigma * standard_normal(&mut rng)).collect();
    let im = (0..samples).map(|_| sigma * standard_normal(&mut rng)).collect();
    (re, im)
}

/// Adds independent Gaussian noise per component, variance
/// 1/(2*10^(SNR/10)) each.
pub fn complex_awgn(sig: &ComplexSignal, cfg: &ChannelConfig) -> ComplexSignal {
    let (nre, nim) = draw_complex_noise(sig.samples(), cfg);
    add_noise(sig, &nre, &nim)
}

fn add_noise(sig: &ComplexSignal, nre: &[f64], nim: &[f64]) -> ComplexSignal {
    ComplexSignal {
        re: sig.re.iter().zip(nre).map(|(s, n)| s + n).collect(),
        im: sig.im.iter().zip(nim).map(|(s, n)| s + n).collect(),
        scale: sig.scale,
        pad: sig.pad,
    }
}

/// Mean squared difference between two equal-shape matrices.
pub fn mse_loss(sent: &Matrix, received: &Matrix) -> Result<f64> {
    if sent.rows != received.rows || sent.cols != received.cols {
        return Err(Error::Shape(format!(
            "mse shapes {}x{} vs {}x{}",
            sent.rows, sent.cols, received.rows, received.cols
        )));
    }
    let count = (sent.rows * sent.cols) as f64;
    let sum: f64 = sent
        .data()
        .iter()
        .zip(received.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / count)
}

/// One full pass through encode -> map -> normalize -> noise -> denormalize
/// -> unmap -> decode, with everything the backward pass needs retained.
pub struct ChannelPass {
    pub decoded: Matrix,
    pub loss: f64,
    /// |mean transmitted power - 1|.
    pub power_error: f64,
    enc_trace: EncoderTrace,
    dec_trace: DecoderTrace,
    /// Flattened pre-normalization signal (re ∥ im), including pad.
    flat_sent: Vec<f64>,
    /// Flattened noise samples aligned with `flat_sent`.
    flat_noise: Vec<f64>,
    rows: usize,
    sqrt_power: f64,
}

/// Runs the attribute channel once with explicit noise seeding.
pub fn channel_pass(
    attrs: &Matrix,
    snr_db: f64,
    encoder: &JsccEncoderModel,
    decoder: &JsccDecoderModel,
    noise_seed: u64,
) -> Result<ChannelPass> {
    let (encoded, enc_trace) = encoder.forward_traced(attrs, snr_db)?;
    let sig = complex_map_padded(&encoded);
    let normalized = power_normalize(&sig)?;
    let power_error = (normalized.mean_power() - 1.0).abs();

    let (nre, nim) = draw_complex_noise(normalized.samples(), &ChannelConfig::new(snr_db, noise_seed));
    let noisy = add_noise(&normalized, &nre, &nim);
    let restored = power_denormalize(&noisy);
    let received = complex_unmap(&restored, encoded.rows, encoded.cols)?;

    let (decoded, dec_trace) = decoder.forward_traced(&received, snr_db)?;
    let loss = mse_loss(attrs, &decoded)?;

    let mut flat_sent = sig.re.clone();
    flat_sent.extend_from_slice(&sig.im);
    let mut flat_noise = nre;
    flat_noise.extend_from_slice(&nim);

    Ok(ChannelPass {
        decoded,
        loss,
        power_error,
        enc_trace,
        dec_trace,
        flat_sent,
        flat_noise,
        rows: attrs.rows,
        sqrt_power: normalized.scale,
    })
}

/// Gradients of the pass loss for every encoder and decoder parameter.
pub struct PassGrads {
    pub encoder: Vec<LayerGrads>,
    pub decoder: Vec<LayerGrads>,
}

/// Backpropagates the MSE of a [`channel_pass`] through the decoder, the
/// channel (normalize / noise / denormalize), and the encoder.
///
/// With s the flattened encoder output, the channel is
/// `z = s + eta * sqrt(P(s))`, so
/// `dL/ds_j = g_j + (sum_i g_i eta_i) * s_j / (N_c * sqrt(P))`.
pub fn channel_backward(
    pass: &ChannelPass,
    attrs: &Matrix,
    encoder: &JsccEncoderModel,
    decoder: &JsccDecoderModel,
) -> Result<PassGrads> {
    let count = (attrs.rows * attrs.cols) as f64;
    let mut grad_decoded = Matrix::zeros(pass.decoded.rows, pass.decoded.cols);
    for i in 0..grad_decoded.data().len() {
        grad_decoded.data_mut()[i] =
            2.0 * (pass.decoded.data()[i] - attrs.data()[i]) / count;
    }

    let (grad_received, dec_grads) = decoder.backward_traced(&pass.dec_trace, &grad_decoded)?;

    // received matrix -> flat z gradient; the pad sample's gradient is zero
    let width = encoder.dims.width;
    let mut g_z = grad_received.data().to_vec();
    g_z.resize(pass.flat_sent.len(), 0.0);

    let n_c = (pass.flat_sent.len() / 2) as f64;
    let g_dot_eta: f64 = g_z.iter().zip(&pass.flat_noise).map(|(g, e)| g * e).sum();
    let coeff = g_dot_eta / (n_c * pass.sqrt_power);
    let g_s: Vec<f64> = g_z
        .iter()
        .zip(&pass.flat_sent)
        .map(|(g, s)| g + coeff * s)
        .collect();

    let grad_encoded = Matrix::new(pass.rows, width, g_s[..pass.rows * width].to_vec())?;
    let (_, enc_grads) = encoder.backward_traced(&pass.enc_trace, &grad_encoded)?;

    Ok(PassGrads {
        encoder: enc_grads,
        decoder: dec_grads,
    })
}

/// Adaptive-moment optimizer with decoupled weight decay.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: Vec<MomentPair>,
}

struct MomentPair {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, layers: &[&LinearLayer]) -> Self {
        let moments = layers
            .iter()
            .map(|l| MomentPair {
                m_w: vec![0.0; l.weight.data().len()],
                v_w: vec![0.0; l.weight.data().len()],
                m_b: vec![0.0; l.bias.len()],
                v_b: vec![0.0; l.bias.len()],
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            moments,
        }
    }

    /// Applies one update; `layers` and `grads` follow the construction order.
    pub fn step(&mut self, layers: Vec<&mut LinearLayer>, grads: &[LayerGrads]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((layer, grad), mom) in layers.into_iter().zip(grads).zip(&mut self.moments) {
            let decay = self.lr * self.weight_decay;
            for ((w, g), (m, v)) in layer
                .weight
                .data_mut()
                .iter_mut()
                .zip(grad.weight.data())
                .zip(mom.m_w.iter_mut().zip(mom.v_w.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *w -= self.lr * update + decay * *w;
            }
            for ((b, g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(&grad.bias)
                .zip(mom.m_b.iter_mut().zip(mom.v_b.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *b -= self.lr * update + decay * *b;
            }
        }
    }
}

/// Training hyperparameters for the attribute channel code.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub snr_range: (f64, f64),
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            snr_range: (0.0, 20.0),
            epochs: 20,
            lr: 1e-4,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

/// Trained encoder/decoder pair plus the per-epoch mean loss.
pub struct TrainOutcome {
    pub encoder: JsccEncoderModel,
    pub decoder: JsccDecoderModel,
    pub epoch_losses: Vec<f64>,
}

/// One row of the training log: epoch index, mean training loss, and the
/// held-out MSE per evaluation SNR point.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_mse: Vec<f64>,
}

/// End-to-end gradient descent through the channel. Each frame is one
/// optimizer step; SNR is sampled uniformly in dB per frame; gradient
/// accumulation order is fixed so runs are deterministic per seed.
pub fn train_phase_two(
    dataset: &[Matrix],
    dims: JsccDims,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    Ok(train_phase_two_logged(dataset, dims, cfg, None)?.0)
}

/// Same as [`train_phase_two`], optionally evaluating a held-out set at the
/// given SNR points after every epoch for the training log.
pub fn train_phase_two_logged(
    dataset: &[Matrix],
    dims: JsccDims,
    cfg: &TrainConfig,
    eval: Option<(&[Matrix], &[f64], u64)>,
) -> Result<(TrainOutcome, Vec<TrainLogRow>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }
    for m in dataset {
        if m.cols != dims.in_dim {
            return Err(Error::Shape(format!(
                "dataset frame has {} channels, dims expect {}",
                m.cols, dims.in_dim
            )));
        }
    }

    let model_seed = derive_seed(cfg.seed, tag::MODEL_INIT);
    let mut encoder = JsccEncoderModel::seeded(dims, model_seed);
    let mut decoder = JsccDecoderModel::seeded(dims, derive_seed(model_seed, 1));

    let mut opt_enc = AdamW::new(cfg.lr, cfg.weight_decay, &encoder.layers());
    let mut opt_dec = AdamW::new(cfg.lr, cfg.weight_decay, &decoder.layers());

    let mut train_rng = seeded_rng(derive_seed(cfg.seed, tag::TRAIN));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for frame in dataset {
            let snr_db = if cfg.snr_range.0 == cfg.snr_range.1 {
                cfg.snr_range.0
            } else {
                train_rng.gen_range(cfg.snr_range.0..=cfg.snr_range.1)
            };
            let noise_seed: u64 = train_rng.gen();
            let pass = channel_pass(frame, snr_db, &encoder, &decoder, noise_seed)?;
            if !pass.loss.is_finite() {
                return Err(Error::Training { epoch });
            }
            epoch_loss += pass.loss;
            let grads = channel_backward(&pass, frame, &encoder, &decoder)?;
            opt_enc.step(encoder.layers_mut(), &grads.encoder);
            opt_dec.step(decoder.layers_mut(), &grads.decoder);
        }
        let mean_loss = epoch_loss / dataset.len() as f64;
        epoch_losses.push(mean_loss);
        if let Some((eval_set, snr_points, eval_seed)) = eval {
            let eval_mse = snr_points
                .iter()
                .map(|&snr| evaluate(eval_set, snr, &encoder, &decoder, eval_seed))
                .collect::<Result<Vec<_>>>()?;
            log.push(TrainLogRow {
                epoch,
                mean_loss,
                eval_mse,
            });
        } else {
            log.push(TrainLogRow {
                epoch,
                mean_loss,
                eval_mse: Vec::new(),
            });
        }
    }

    Ok((
        TrainOutcome {
            encoder,
            decoder,
            epoch_losses,
        },
        log,
    ))
}

/// Mean reconstruction MSE of a model pair over a dataset at a fixed SNR,
/// noise seeded per frame.
pub fn evaluate(
    dataset: &[Matrix],
    snr_db: f64,
    encoder: &JsccEncoderModel,
    decoder: &JsccDecoderModel,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset is empty".into()));
    }
    let mut total = 0.0;
    for (i, frame) in dataset.iter().enumerate() {
        let pass = channel_pass(frame, snr_db, encoder, decoder, derive_seed(seed, i as u64))?;
        total += pass.loss;
    }
    Ok(total / dataset.len() as f64)
}
