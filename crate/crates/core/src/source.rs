//! Edge-side source compaction and cloud-side decompaction.
//!
//! Channel compaction gates the 64 attribute channels with squeeze-and-
//! excitation weights and reduces them to `c_a` channels with a 1x1x1
//! convolution. Spatial compaction scores every voxel with a U-Net
//! (three strided-down units, a bottleneck, three transposed-up units with
//! skip concatenation, and a one-channel head through a sigmoid); inference
//! keeps voxels scoring above 0.5 and falls back to the 128 highest
//! confidences when none clears the threshold. Decompaction mirrors the
//! channel path back to 64 channels.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{derive_seed, name_tag};
use crate::sparse::{
    concat_channels, strided_conv, submanifold_conv, transposed_conv_onto, SparseKernel,
    SparseVoxelTensor,
};
use crate::tensor::{
    affine_norm, fc_forward, global_average_pool, sigmoid, Activation, AffineNorm, LinearLayer,
    Matrix,
};

/// Default retained-voxel floor when no probability clears the threshold.
pub const FAILSAFE_KEEP: usize = 128;

fn seeded_kernel(
    name: &str,
    size: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    seed: u64,
) -> SparseKernel {
    SparseKernel::seeded(size, c_in, c_out, stride, 1, derive_seed(seed, name_tag(name)))
}

fn relu_tensor(t: &SparseVoxelTensor) -> SparseVoxelTensor {
    let data = t.attrs().data().iter().map(|&v| v.max(0.0)).collect();
    let attrs = Matrix::new(t.attrs().rows, t.attrs().cols, data).unwrap();
    t.with_attrs(attrs).unwrap()
}

fn norm_tensor(norm: &AffineNorm, t: &SparseVoxelTensor) -> Result<SparseVoxelTensor> {
    t.with_attrs(affine_norm(norm, t.attrs())?)
}

/// One downsampling unit: two 3x3x3 submanifold convolutions with norms and
/// ReLU, then a 2x2x2 stride-2 convolution.
#[derive(Debug, Clone)]
pub struct DownUnit {
    pub conv1: SparseKernel,
    pub norm1: AffineNorm,
    pub conv2: SparseKernel,
    pub norm2: AffineNorm,
    pub down: SparseKernel,
}

impl DownUnit {
    fn forward(&self, x: &SparseVoxelTensor) -> Result<SparseVoxelTensor> {
        let a = relu_tensor(&norm_tensor(&self.norm1, &submanifold_conv(x, &self.conv1)?)?);
        let b = relu_tensor(&norm_tensor(&self.norm2, &submanifold_conv(&a, &self.conv2)?)?);
        strided_conv(&b, &self.down)
    }
}

/// Bottleneck: two 3x3x3 submanifold convolutions at the lowest resolution.
#[derive(Debug, Clone)]
pub struct BottleneckUnit {
    pub conv1: SparseKernel,
    pub norm1: AffineNorm,
    pub conv2: SparseKernel,
    pub norm2: AffineNorm,
}

impl BottleneckUnit {
    fn forward(&self, x: &SparseVoxelTensor) -> Result<SparseVoxelTensor> {
        let a = relu_tensor(&norm_tensor(&self.norm1, &submanifold_conv(x, &self.conv1)?)?);
        Ok(relu_tensor(&norm_tensor(
            &self.norm2,
            &submanifold_conv(&a, &self.conv2)?,
        )?))
    }
}

/// One upsampling unit: transposed convolution onto the skip's active set,
/// channel concatenation, then two refinement convolutions.
#[derive(Debug, Clone)]
pub struct UpUnit {
    pub tconv: SparseKernel,
    pub conv1: SparseKernel,
    pub norm1: AffineNorm,
    pub conv2: SparseKernel,
    pub norm2: AffineNorm,
}

impl UpUnit {
    fn forward(&self, x: &SparseVoxelTensor, skip: &SparseVoxelTensor) -> Result<SparseVoxelTensor> {
        let up = transposed_conv_onto(x, &self.tconv, skip.coords(), skip.grid())?;
        let joined = concat_channels(&up, skip)?;
        let a = relu_tensor(&norm_tensor(
            &self.norm1,
            &submanifold_conv(&joined, &self.conv1)?,
        )?);
        Ok(relu_tensor(&norm_tensor(
            &self.norm2,
            &submanifold_conv(&a, &self.conv2)?,
        )?))
    }
}

/// Spatial-compaction U-Net over a `c_a`-channel tensor.
#[derive(Debug, Clone)]
pub struct MaskUnet {
    pub down: [DownUnit; 3],
    pub bottleneck: BottleneckUnit,
    pub up: [UpUnit; 3],
    pub head: SparseKernel,
}

/// Down-path output channels per unit.
const DOWN_CH: [usize; 3] = [16, 32, 64];
const BOTTLENECK_CH: usize = 128;
/// Up-path output channels per unit.
const UP_CH: [usize; 3] = [64, 32, 16];

impl MaskUnet {
    fn seeded(c_a: usize, seed: u64) -> Self {
        let mk_down = |idx: usize, c_in: usize, c_out: usize| DownUnit {
            conv1: seeded_kernel(&format!("unet.down{}.conv1", idx + 1), 3, c_in, c_out, 1, seed),
            norm1: AffineNorm::identity(c_out),
            conv2: seeded_kernel(&format!("unet.down{}.conv2", idx + 1), 3, c_out, c_out, 1, seed),
            norm2: AffineNorm::identity(c_out),
            down: seeded_kernel(&format!("unet.down{}.down", idx + 1), 2, c_out, c_out, 2, seed),
        };
        let down = [
            mk_down(0, c_a, DOWN_CH[0]),
            mk_down(1, DOWN_CH[0], DOWN_CH[1]),
            mk_down(2, DOWN_CH[1], DOWN_CH[2]),
        ];
        let bottleneck = BottleneckUnit {
            conv1: seeded_kernel("unet.bottleneck.conv1", 3, DOWN_CH[2], BOTTLENECK_CH, 1, seed),
            norm1: AffineNorm::identity(BOTTLENECK_CH),
            conv2: seeded_kernel("unet.bottleneck.conv2", 3, BOTTLENECK_CH, BOTTLENECK_CH, 1, seed),
            norm2: AffineNorm::identity(BOTTLENECK_CH),
        };
        // skips carry the down-path inputs: 32, 16, then c_a channels
        let skip_ch = [DOWN_CH[1], DOWN_CH[0], c_a];
        let mk_up = |idx: usize, c_in: usize, c_out: usize| UpUnit {
            tconv: seeded_kernel(&format!("unet.up{}.tconv", idx + 1), 2, c_in, c_out, 2, seed),
            conv1: seeded_kernel(
                &format!("unet.up{}.conv1", idx + 1),
                3,
                c_out + skip_ch[idx],
                c_out,
                1,
                seed,
            ),
            norm1: AffineNorm::identity(c_out),
            conv2: seeded_kernel(&format!("unet.up{}.conv2", idx + 1), 3, c_out, c_out, 1, seed),
            norm2: AffineNorm::identity(c_out),
        };
        let up = [
            mk_up(0, BOTTLENECK_CH, UP_CH[0]),
            mk_up(1, UP_CH[0], UP_CH[1]),
            mk_up(2, UP_CH[1], UP_CH[2]),
        ];
        let head = seeded_kernel("unet.head", 1, UP_CH[2], 1, 1, seed);
        Self {
            down,
            bottleneck,
            up,
            head,
        }
    }
}

/// Edge-side compaction model: SE gating, channel reduction, and the mask
/// U-Net.
#[derive(Debug, Clone)]
pub struct CompactionModel {
    pub se_reduce: LinearLayer,
    pub se_expand: LinearLayer,
    pub reduce_conv: SparseKernel,
    pub unet: MaskUnet,
    pub c_a: usize,
}

impl CompactionModel {
    pub fn seeded(c_a: usize, seed: u64) -> Result<Self> {
        if ![2, 4, 6, 8].contains(&c_a) {
            return Err(Error::Config(format!("c_a must be one of 2/4/6/8, got {c_a}")));
        }
        Ok(Self {
            se_reduce: LinearLayer::seeded(
                64,
                8,
                Activation::Relu,
                derive_seed(seed, name_tag("se_reduce")),
            ),
            se_expand: LinearLayer::seeded(
                8,
                64,
                Activation::Sigmoid,
                derive_seed(seed, name_tag("se_expand")),
            ),
            reduce_conv: seeded_kernel("reduce_conv", 1, 64, c_a, 1, seed),
            unet: MaskUnet::seeded(c_a, seed),
            c_a,
        })
    }
}

/// Cloud-side decompaction model mirroring the channel path.
#[derive(Debug, Clone)]
pub struct DecompactionModel {
    pub se_reduce: LinearLayer,
    pub se_expand: LinearLayer,
    pub expand_conv: SparseKernel,
    pub c_a: usize,
}

impl DecompactionModel {
    pub fn seeded(c_a: usize, seed: u64) -> Result<Self> {
        if ![2, 4, 6, 8].contains(&c_a) {
            return Err(Error::Config(format!("c_a must be one of 2/4/6/8, got {c_a}")));
        }
        Ok(Self {
            se_reduce: LinearLayer::seeded(
                c_a,
                48,
                Activation::Relu,
                derive_seed(seed, name_tag("de.se_reduce")),
            ),
            se_expand: LinearLayer::seeded(
                48,
                64,
                Activation::Sigmoid,
                derive_seed(seed, name_tag("de.se_expand")),
            ),
            expand_conv: seeded_kernel("de.expand_conv", 1, c_a, 64, 1, seed),
            c_a,
        })
    }
}

/// Squeeze-and-excitation gate: per-channel sigmoid weights from the pooled
/// attribute descriptor.
fn se_weights(reduce: &LinearLayer, expand: &LinearLayer, attrs: &Matrix) -> Result<Vec<f64>> {
    let gap = global_average_pool(attrs)?;
    let gap_row = Matrix::new(1, gap.len(), gap)?;
    let squeezed = fc_forward(reduce, &gap_row)?;
    let weights = fc_forward(expand, &squeezed)?;
    Ok(weights.row(0).to_vec())
}

fn scale_columns(attrs: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if attrs.cols != weights.len() {
        return Err(Error::Shape(format!(
            "channel weights {} vs attrs {}",
            weights.len(),
            attrs.cols
        )));
    }
    let mut out = attrs.clone();
    for r in 0..out.rows {
        for (v, w) in out.row_mut(r).iter_mut().zip(weights) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Gates the 64 attribute channels and reduces them to `c_a`; the active
/// set is unchanged.
pub fn channel_compact(
    f4: &SparseVoxelTensor,
    model: &CompactionModel,
) -> Result<SparseVoxelTensor> {
    if f4.channels() != 64 {
        return Err(Error::Shape(format!(
            "channel compaction expects 64 channels, got {}",
            f4.channels()
        )));
    }
    let weights = se_weights(&model.se_reduce, &model.se_expand, f4.attrs())?;
    let gated = f4.with_attrs(scale_columns(f4.attrs(), &weights)?)?;
    submanifold_conv(&gated, &model.reduce_conv)
}

/// Per-voxel relevance probabilities in canonical coordinate order.
pub fn spatial_probs(fc: &SparseVoxelTensor, model: &CompactionModel) -> Result<Vec<f64>> {
    if fc.channels() != model.c_a {
        return Err(Error::Shape(format!(
            "spatial compaction expects {} channels, got {}",
            model.c_a,
            fc.channels()
        )));
    }
    if fc.grid().iter().any(|&g| g < 8) {
        return Err(Error::Config(format!(
            "grid {:?} too small for three stride-2 stages",
            fc.grid()
        )));
    }

    let s1 = fc.clone();
    let x2 = model.unet.down[0].forward(&s1)?;
    let x3 = model.unet.down[1].forward(&x2)?;
    let x4 = model.unet.down[2].forward(&x3)?;
    let b = model.unet.bottleneck.forward(&x4)?;
    let u1 = model.unet.up[0].forward(&b, &x3)?;
    let u2 = model.unet.up[1].forward(&u1, &x2)?;
    let u3 = model.unet.up[2].forward(&u2, &s1)?;
    let logits = submanifold_conv(&u3, &model.unet.head)?;
    Ok(logits.attrs().data().iter().map(|&z| sigmoid(z)).collect())
}

/// Compacted payload: the retained tensor plus the edge-internal confidences.
#[derive(Debug, Clone)]
pub struct CompactedFeature {
    pub tensor: SparseVoxelTensor,
    pub probs: Vec<f64>,
    /// True when the top-confidence fallback produced the retained set.
    pub failsafe_engaged: bool,
}

/// Threshold inference: keep voxels with probability above `threshold`; when
/// none qualifies, keep the `failsafe` highest-confidence voxels (ties broken
/// by canonical coordinate order).
pub fn spatial_compact_infer(
    fc: &SparseVoxelTensor,
    probs: &[f64],
    threshold: f64,
    failsafe: usize,
) -> Result<CompactedFeature> {
    if probs.len() != fc.len() {
        return Err(Error::Shape(format!(
            "{} probs for {} voxels",
            probs.len(),
            fc.len()
        )));
    }
    let mut keep: Vec<usize> = (0..fc.len()).filter(|&i| probs[i] > threshold).collect();
    let mut failsafe_engaged = false;
    if keep.is_empty() && !fc.is_empty() {
        failsafe_engaged = true;
        let mut order: Vec<usize> = (0..fc.len()).collect();
        // stable sort by descending probability keeps canonical order on ties
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
        order.truncate(failsafe.min(fc.len()));
        order.sort_unstable();
        keep = order;
    }

    let coords: Vec<_> = keep.iter().map(|&i| fc.coords()[i]).collect();
    let mut attrs = Matrix::zeros(keep.len(), fc.channels());
    for (r, &i) in keep.iter().enumerate() {
        attrs.row_mut(r).copy_from_slice(fc.attrs().row(i));
    }
    let tensor = SparseVoxelTensor::new(coords, attrs, fc.grid())?;
    let kept_probs = keep.iter().map(|&i| probs[i]).collect();
    Ok(CompactedFeature {
        tensor,
        probs: kept_probs,
        failsafe_engaged,
    })
}

/// Training-time soft classification: attribute rows scaled by their
/// probabilities, active set unchanged.
pub fn spatial_compact_train_apply(
    fc: &SparseVoxelTensor,
    probs: &[f64],
) -> Result<SparseVoxelTensor> {
    if probs.len() != fc.len() {
        return Err(Error::Shape(format!(
            "{} probs for {} voxels",
            probs.len(),
            fc.len()
        )));
    }
    let mut attrs = fc.attrs().clone();
    for (r, &p) in probs.iter().enumerate() {
        for v in attrs.row_mut(r) {
            *v *= p;
        }
    }
    fc.with_attrs(attrs)
}

/// Expands `c_a` received channels back to 64 and applies the decoder-side
/// channel gate; the active set is unchanged.
pub fn channel_decompact(
    f4hat_prime: &SparseVoxelTensor,
    model: &DecompactionModel,
) -> Result<SparseVoxelTensor> {
    if f4hat_prime.channels() != model.c_a {
        return Err(Error::Shape(format!(
            "decompaction expects {} channels, got {}",
            model.c_a,
            f4hat_prime.channels()
        )));
    }
    let weights = se_weights(&model.se_reduce, &model.se_expand, f4hat_prime.attrs())?;
    let expanded = submanifold_conv(f4hat_prime, &model.expand_conv)?;
    expanded.with_attrs(scale_columns(expanded.attrs(), &weights)?)
}

// ---------------------------------------------------------------------------
// ParamStore round trip
// ---------------------------------------------------------------------------

fn kernel_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.b"))
}

fn save_kernel(store: &mut ParamStore, prefix: &str, k: &SparseKernel) -> Result<()> {
    let (wn, bn) = kernel_names(prefix);
    let taps = k.size * k.size * k.size;
    store.insert(&wn, vec![taps * k.c_in, k.c_out], k.weights.clone())?;
    store.insert_vector(&bn, k.bias.as_deref().unwrap_or(&vec![0.0; k.c_out]))?;
    Ok(())
}

fn load_kernel(store: &ParamStore, prefix: &str, k: &mut SparseKernel) -> Result<()> {
    let (wn, bn) = kernel_names(prefix);
    let taps = k.size * k.size * k.size;
    k.weights = store.get(&wn, &[taps * k.c_in, k.c_out])?.data.clone();
    k.bias = Some(store.get_vector(&bn, k.c_out)?);
    Ok(())
}

fn save_norm(store: &mut ParamStore, prefix: &str, n: &AffineNorm) -> Result<()> {
    store.insert_vector(&format!("{prefix}.scale"), &n.scale)?;
    store.insert_vector(&format!("{prefix}.shift"), &n.shift)?;
    Ok(())
}

fn load_norm(store: &ParamStore, prefix: &str, n: &mut AffineNorm) -> Result<()> {
    let scale = store.get_vector(&format!("{prefix}.scale"), n.scale.len())?;
    let shift = store.get_vector(&format!("{prefix}.shift"), n.shift.len())?;
    *n = AffineNorm::new(scale, shift)?;
    Ok(())
}

fn save_layer(store: &mut ParamStore, prefix: &str, l: &LinearLayer) -> Result<()> {
    store.insert_matrix(&format!("{prefix}.w"), &l.weight)?;
    store.insert_vector(&format!("{prefix}.b"), &l.bias)?;
    Ok(())
}

fn load_layer(store: &ParamStore, prefix: &str, l: &mut LinearLayer) -> Result<()> {
    l.weight = store.get_matrix(&format!("{prefix}.w"), l.weight.rows, l.weight.cols)?;
    l.bias = store.get_vector(&format!("{prefix}.b"), l.bias.len())?;
    Ok(())
}

impl CompactionModel {
    pub fn save_params(&self, store: &mut ParamStore) -> Result<()> {
        save_layer(store, "se_reduce", &self.se_reduce)?;
        save_layer(store, "se_expand", &self.se_expand)?;
        save_kernel(store, "reduce_conv", &self.reduce_conv)?;
        for (i, d) in self.unet.down.iter().enumerate() {
            let p = format!("unet.down{}", i + 1);
            save_kernel(store, &format!("{p}.conv1"), &d.conv1)?;
            save_norm(store, &format!("{p}.norm1"), &d.norm1)?;
            save_kernel(store, &format!("{p}.conv2"), &d.conv2)?;
            save_norm(store, &format!("{p}.norm2"), &d.norm2)?;
            save_kernel(store, &format!("{p}.down"), &d.down)?;
        }
        save_kernel(store, "unet.bottleneck.conv1", &self.unet.bottleneck.conv1)?;
        save_norm(store, "unet.bottleneck.norm1", &self.unet.bottleneck.norm1)?;
        save_kernel(store, "unet.bottleneck.conv2", &self.unet.bottleneck.conv2)?;
        save_norm(store, "unet.bottleneck.norm2", &self.unet.bottleneck.norm2)?;
        for (i, u) in self.unet.up.iter().enumerate() {
            let p = format!("unet.up{}", i + 1);
            save_kernel(store, &format!("{p}.tconv"), &u.tconv)?;
            save_kernel(store, &format!("{p}.conv1"), &u.conv1)?;
            save_norm(store, &format!("{p}.norm1"), &u.norm1)?;
            save_kernel(store, &format!("{p}.conv2"), &u.conv2)?;
            save_norm(store, &format!("{p}.norm2"), &u.norm2)?;
        }
        save_kernel(store, "unet.head", &self.unet.head)?;
        Ok(())
    }

    /// Loads with strict shape validation against a freshly shaped model.
    pub fn load_params(store: &ParamStore, c_a: usize) -> Result<Self> {
        let mut model = Self::seeded(c_a, 0)?;
        load_layer(store, "se_reduce", &mut model.se_reduce)?;
        load_layer(store, "se_expand", &mut model.se_expand)?;
        load_kernel(store, "reduce_conv", &mut model.reduce_conv)?;
        for i in 0..3 {
            let p = format!("unet.down{}", i + 1);
            load_kernel(store, &format!("{p}.conv1"), &mut model.unet.down[i].conv1)?;
            load_norm(store, &format!("{p}.norm1"), &mut model.unet.down[i].norm1)?;
            load_kernel(store, &format!("{p}.conv2"), &mut model.unet.down[i].conv2)?;
            load_norm(store, &format!("{p}.norm2"), &mut model.unet.down[i].norm2)?;
            load_kernel(store, &format!("{p}.down"), &mut model.unet.down[i].down)?;
        }
        load_kernel(store, "unet.bottleneck.conv1", &mut model.unet.bottleneck.conv1)?;
        load_norm(store, "unet.bottleneck.norm1", &mut model.unet.bottleneck.norm1)?;
        load_kernel(store, "unet.bottleneck.conv2", &mut model.unet.bottleneck.conv2)?;
        load_norm(store, "unet.bottleneck.norm2", &mut model.unet.bottleneck.norm2)?;
        for i in 0..3 {
            let p = format!("unet.up{}", i + 1);
            load_kernel(store, &format!("{p}.tconv"), &mut model.unet.up[i].tconv)?;
            load_kernel(store, &format!("{p}.conv1"), &mut model.unet.up[i].conv1)?;
            load_norm(store, &format!("{p}.norm1"), &mut model.unet.up[i].norm1)?;
            load_kernel(store, &format!("{p}.conv2"), &mut model.unet.up[i].conv2)?;
            load_norm(store, &format!("{p}.norm2"), &mut model.unet.up[i].norm2)?;
        }
        load_kernel(store, "unet.head", &mut model.unet.head)?;
        Ok(model)
    }
}

impl DecompactionModel {
    pub fn save_params(&self, store: &mut ParamStore) -> Result<()> {
        save_layer(store, "de.se_reduce", &self.se_reduce)?;
        save_layer(store, "de.se_expand", &self.se_expand)?;
        save_kernel(store, "de.expand_conv", &self.expand_conv)?;
        Ok(())
    }

    pub fn load_params(store: &ParamStore, c_a: usize) -> Result<Self> {
        let mut model = Self::seeded(c_a, 0)?;
        load_layer(store, "de.se_reduce", &mut model.se_reduce)?;
        load_layer(store, "de.se_expand", &mut model.se_expand)?;
        load_kernel(store, "de.expand_conv", &mut model.expand_conv)?;
        Ok(model)
    }
}
