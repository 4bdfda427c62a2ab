//! End-to-end orchestration: synthetic scene generation, full
//! encode -> channel -> decode -> upsample runs with per-frame reports,
//! BER sweeps, and the expansion / channel-count / width parameter sweeps.
//!
//! All randomness is keyed by (master seed, frame id, stage tag), so runs
//! are bit-identical for a fixed configuration; per-frame wall-clock timings
//! are returned separately from the deterministic reports.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{awgn, bpsk_demodulate_llr, bpsk_modulate, hard_decision, ChannelConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    geometry_transmit, ExternalCodec, GeometryCodec, OctreeCodec, Protection,
};
use crate::jscc::{
    channel_pass, evaluate, train_phase_two, JsccDecoderModel, JsccDims, JsccEncoderModel,
    TrainConfig,
};
use crate::ldpc::{ldpc_build, ldpc_decode, ldpc_encode, LdpcCode};
use crate::mask::{merge_boxes, preliminary_voxels, BoundingBox, SceneSpec, VoxelMask};
use crate::rng::{derive_seed, seeded_rng, tag};
use crate::source::{
    channel_compact, channel_decompact, spatial_compact_infer, spatial_probs, CompactionModel,
    DecompactionModel, FAILSAFE_KEEP,
};
use crate::sparse::{Coord, SparseVoxelTensor};
use crate::tensor::Matrix;
use crate::upsampler::{
    upsample, Branch, DiffusionConfig, NormStats, OutputMode, UpsamplerModel,
};

/// Attribute channels of the full-width feature tensor (plus 3 coordinates).
pub const FULL_ATTR_CH: usize = 64;
pub const FULL_DIMS_PER_VOXEL: usize = 3 + FULL_ATTR_CH;

/// Scene geometry section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub extent: [f64; 3],
    pub grid: [u32; 3],
    pub expansion: u32,
}

/// LDPC section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpcConfig {
    pub m: usize,
    pub dv: usize,
    pub dc: usize,
    /// Optional codeword length; must equal m * dc when present.
    #[serde(default)]
    pub n: Option<usize>,
    pub max_iters: usize,
}

impl Default for LdpcConfig {
    fn default() -> Self {
        Self {
            m: 20,
            dv: 2,
            dc: 5,
            n: Some(100),
            max_iters: 50,
        }
    }
}

fn default_upsample_mode() -> String {
    "anchored".into()
}

fn default_frames() -> usize {
    10
}

fn default_n_objects() -> usize {
    3
}

fn default_true() -> bool {
    true
}

/// Versioned run configuration; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub scene: SceneConfig,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_n_objects")]
    pub n_objects: usize,
    /// Compacted attribute channel count (2, 4, 6 or 8).
    pub c_a: usize,
    /// Attribute channel expansion width.
    pub jscc_width: usize,
    #[serde(default)]
    pub ldpc: LdpcConfig,
    /// Channel SNR in dB; absent means noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub ldpc_enabled: bool,
    /// "anchored", "free_geometry", or "off".
    #[serde(default = "default_upsample_mode")]
    pub upsample: String,
    #[serde(default)]
    pub external_geom_codec: Option<String>,
    /// Optional parameter file with trained attribute-channel weights.
    #[serde(default)]
    pub jscc_weights: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: 1,
            scene: SceneConfig {
                extent: [96.0, 96.0, 32.0],
                grid: [48, 48, 16],
                expansion: 16,
            },
            frames: default_frames(),
            n_objects: default_n_objects(),
            c_a: 8,
            jscc_width: 40,
            ldpc: LdpcConfig::default(),
            snr_db: Some(10.0),
            seed: 0,
            ldpc_enabled: true,
            upsample: default_upsample_mode(),
            external_geom_codec: None,
            jscc_weights: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported config version {}",
                self.version
            )));
        }
        if ![2, 4, 6, 8].contains(&self.c_a) {
            return Err(Error::Config(format!("c_a must be 2/4/6/8, got {}", self.c_a)));
        }
        if self.scene.grid.iter().any(|&g| g < 8) {
            return Err(Error::Config("scene grid extents must be >= 8".into()));
        }
        if let Some(n) = self.ldpc.n {
            if n != self.ldpc.m * self.ldpc.dc {
                return Err(Error::Config(format!(
                    "ldpc n = {n} inconsistent with m*dc = {}",
                    self.ldpc.m * self.ldpc.dc
                )));
            }
        }
        if self.jscc_width < 2 || self.jscc_width % 2 != 0 {
            return Err(Error::Config("jscc_width must be even and >= 2".into()));
        }
        match self.upsample.as_str() {
            "anchored" | "free_geometry" | "off" => {}
            other => {
                return Err(Error::Config(format!(
                    "upsample must be anchored/free_geometry/off, got '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        SceneSpec::new(self.scene.extent, self.scene.grid, self.scene.expansion)
    }

    /// Channel SNR with the noiseless sentinel mapped to +infinity.
    pub fn snr(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }
}

/// Synthetic scene: a 64-channel feature tensor with voxels clustered in
/// object boxes over sparse background, plus the box list.
pub fn gen_scene(
    seed: u64,
    n_objects: usize,
    spec: &SceneSpec,
) -> Result<(SparseVoxelTensor, Vec<BoundingBox>)> {
    let mut rng = seeded_rng(derive_seed(seed, tag::SCENE));
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let mut placed = false;
        for _attempt in 0..100 {
            let size = [
                spec.extent[0] * rng.gen_range(0.08..0.22),
                spec.extent[1] * rng.gen_range(0.08..0.22),
                spec.extent[2] * rng.gen_range(0.15..0.4),
            ];
            let center = [
                rng.gen_range(size[0] / 2.0..spec.extent[0] - size[0] / 2.0),
                rng.gen_range(size[1] / 2.0..spec.extent[1] - size[1] / 2.0),
                rng.gen_range(size[2] / 2.0..spec.extent[2] - size[2] / 2.0),
            ];
            // reject centers falling inside an already placed box
            let clash = boxes.iter().any(|b| {
                (0..3).all(|a| (center[a] - b.center[a]).abs() < b.size[a] / 2.0)
            });
            if !clash {
                boxes.push(BoundingBox::new(center, size)?);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {n_objects} non-overlapping boxes"
            )));
        }
    }

    let mut voxels: std::collections::BTreeMap<Coord, Vec<f64>> = Default::default();
    for bx in &boxes {
        // per-box attribute offset so masks are learnable in principle
        let offset: Vec<f64> = (0..FULL_ATTR_CH).map(|_| 2.0 * rng.gen_range(-1.0..1.0)).collect();
        let region = preliminary_voxels(bx, spec)?;
        let center_voxel = [
            ((bx.center[0] / spec.extent[0] * spec.grid[0] as f64) as u32)
                .min(spec.grid[0] - 1),
            ((bx.center[1] / spec.extent[1] * spec.grid[1] as f64) as u32)
                .min(spec.grid[1] - 1),
            ((bx.center[2] / spec.extent[2] * spec.grid[2] as f64) as u32)
                .min(spec.grid[2] - 1),
        ];
        for &coord in region.relevant.iter() {
            let keep = coord == center_voxel || rng.gen_range(0.0..1.0) < 0.7;
            if !keep {
                continue;
            }
            let attrs: Vec<f64> = offset
                .iter()
                .map(|&m| m + rng.gen_range(-1.0..1.0))
                .collect();
            voxels.entry(coord).or_insert(attrs);
        }
        voxels.entry(center_voxel).or_insert_with(|| {
            offset.iter().map(|&m| m + rng.gen_range(-1.0..1.0)).collect()
        });
    }

    let bg_count = ((spec.grid[0] as usize * spec.grid[1] as usize * spec.grid[2] as usize) / 256)
        .max(32);
    for _ in 0..bg_count {
        let coord = [
            rng.gen_range(0..spec.grid[0]),
            rng.gen_range(0..spec.grid[1]),
            rng.gen_range(0..spec.grid[2]),
        ];
        let attrs: Vec<f64> = (0..FULL_ATTR_CH).map(|_| rng.gen_range(-1.0..1.0)).collect();
        voxels.entry(coord).or_insert(attrs);
    }

    let coords: Vec<Coord> = voxels.keys().copied().collect();
    let mut attrs = Matrix::zeros(coords.len(), FULL_ATTR_CH);
    for (r, c) in coords.iter().enumerate() {
        attrs.row_mut(r).copy_from_slice(&voxels[c]);
    }
    let tensor = SparseVoxelTensor::new(coords, attrs, spec.grid)?;
    Ok((tensor, boxes))
}

/// Dimensionality ratio between original and compacted representations.
pub fn compression_rate(n: usize, c_in: usize, n_prime: usize, c_out: usize) -> Result<f64> {
    if n == 0 || c_in == 0 || c_out == 0 {
        return Err(Error::Degenerate("compression rate over zero dims".into()));
    }
    if n_prime == 0 {
        return Err(Error::Degenerate("compressed representation is empty".into()));
    }
    Ok((n * c_in) as f64 / (n_prime * c_out) as f64)
}

/// Per-frame metrics; wall-clock timing is kept out so reports stay
/// byte-identical across runs.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame_id: usize,
    pub n: usize,
    pub n_prime: usize,
    pub cr: f64,
    pub geom_ok: bool,
    pub geom_exact: bool,
    pub geom_ber_pre: f64,
    pub geom_ber_post: f64,
    pub ldpc_mean_iters: f64,
    pub attr_mse: f64,
    pub power_error: f64,
    pub mask_precision: f64,
    pub mask_recall: f64,
    pub failsafe_engaged: bool,
    pub upsampled_voxels: usize,
}

/// Run-level summary serialized as the aggregate JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub frames: usize,
    pub snr_db: Option<f64>,
    pub ldpc_enabled: bool,
    pub c_a: usize,
    pub jscc_width: usize,
    pub geom_ok_rate: f64,
    pub geom_failure_rate: f64,
    pub aggregate_cr: f64,
    pub mean_attr_mse: f64,
    pub mean_mask_precision: f64,
    pub mean_mask_recall: f64,
    pub mean_ldpc_iters: f64,
    pub max_power_error: f64,
}

/// Full outcome of an end-to-end run.
pub struct E2eRun {
    pub frames: Vec<FrameReport>,
    pub aggregate: Aggregate,
    /// Per-frame wall-clock milliseconds (not part of the reports).
    pub timings_ms: Vec<f64>,
}

/// Model bundle for a run, derived from the master seed and config.
pub struct PipelineModels {
    pub compaction: CompactionModel,
    pub decompaction: DecompactionModel,
    pub encoder: JsccEncoderModel,
    pub decoder: JsccDecoderModel,
    pub upsampler: UpsamplerModel,
    pub stats_g: NormStats,
    pub stats_a: NormStats,
}

impl PipelineModels {
    pub fn build(cfg: &PipelineConfig) -> Result<Self> {
        let model_seed = derive_seed(cfg.seed, tag::MODEL_INIT);
        let dims = JsccDims::with_width(cfg.c_a, cfg.jscc_width);
        let (encoder, decoder) = match &cfg.jscc_weights {
            Some(path) => {
                let store = crate::params::ParamStore::load(std::path::Path::new(path))?;
                (
                    JsccEncoderModel::load_params(&store, dims)?,
                    JsccDecoderModel::load_params(&store, dims)?,
                )
            }
            None => (
                JsccEncoderModel::seeded(dims, derive_seed(model_seed, 1)),
                JsccDecoderModel::seeded(dims, derive_seed(model_seed, 2)),
            ),
        };
        Ok(Self {
            compaction: CompactionModel::seeded(cfg.c_a, derive_seed(model_seed, 0))?,
            decompaction: DecompactionModel::seeded(cfg.c_a, derive_seed(model_seed, 3))?,
            encoder,
            decoder,
            upsampler: UpsamplerModel::seeded(derive_seed(model_seed, 4)),
            stats_g: NormStats::identity(Branch::Geometry),
            stats_a: NormStats::identity(Branch::Attribute),
        })
    }
}

fn mask_agreement(mask: &VoxelMask, active: &[Coord], retained: &[Coord]) -> (f64, f64) {
    let relevant_active = active.iter().filter(|c| mask.contains(c)).count();
    let true_positive = retained.iter().filter(|c| mask.contains(c)).count();
    let precision = if retained.is_empty() {
        1.0
    } else {
        true_positive as f64 / retained.len() as f64
    };
    let recall = if relevant_active == 0 {
        1.0
    } else {
        true_positive as f64 / relevant_active as f64
    };
    (precision, recall)
}

/// Runs the configured number of frames through the full pipeline.
pub fn run_e2e(cfg: &PipelineConfig) -> Result<E2eRun> {
    cfg.validate()?;
    let spec = cfg.scene_spec()?;
    let models = PipelineModels::build(cfg)?;
    let code = ldpc_build(cfg.ldpc.m, cfg.ldpc.dv, cfg.ldpc.dc, derive_seed(cfg.seed, 0xBEEF))?;
    let codec: Box<dyn GeometryCodec> = match &cfg.external_geom_codec {
        Some(cmd) => Box::new(ExternalCodec {
            command: cmd.clone(),
        }),
        None => Box::new(OctreeCodec),
    };
    let snr = cfg.snr();
    let out_mode = match cfg.upsample.as_str() {
        "free_geometry" => Some(OutputMode::FreeGeometry),
        "anchored" => Some(OutputMode::Anchored),
        _ => None,
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut timings = Vec::with_capacity(cfg.frames);

    for frame_id in 0..cfg.frames {
        let started = Instant::now();
        let frame_seed = derive_seed(cfg.seed, frame_id as u64);

        let (f4, boxes) = gen_scene(frame_seed, cfg.n_objects, &spec)?;
        let gt_mask = merge_boxes(&boxes, &spec)?;

        let fc = channel_compact(&f4, &models.compaction)?;
        let probs = spatial_probs(&fc, &models.compaction)?;
        let compacted = spatial_compact_infer(&fc, &probs, 0.5, FAILSAFE_KEEP)?;
        let n = f4.len();
        let n_prime = compacted.tensor.len();
        let cr = compression_rate(n, FULL_DIMS_PER_VOXEL, n_prime, 3 + cfg.c_a)?;
        let (precision, recall) = mask_agreement(&gt_mask, f4.coords(), compacted.tensor.coords());

        let protection = if cfg.ldpc_enabled {
            Protection::Ldpc(&code)
        } else {
            Protection::Uncoded
        };
        let geo = geometry_transmit(
            codec.as_ref(),
            compacted.tensor.coords(),
            spec.grid,
            &protection,
            &ChannelConfig::new(snr, derive_seed(frame_seed, tag::GEOMETRY_NOISE)),
            cfg.ldpc.max_iters,
        )?;

        let pass = channel_pass(
            compacted.tensor.attrs(),
            snr,
            &models.encoder,
            &models.decoder,
            derive_seed(frame_seed, tag::ATTRIBUTE_NOISE),
        )?;

        let mut upsampled_voxels = 0;
        if geo.frame_ok && geo.coords_exact {
            let received = SparseVoxelTensor::new(geo.coords.clone(), pass.decoded.clone(), spec.grid)?;
            let restored = channel_decompact(&received, &models.decompaction)?;
            if let Some(mode) = out_mode {
                let diff_cfg = DiffusionConfig {
                    steps: 1,
                    noise_seed: derive_seed(frame_seed, tag::DIFFUSION),
                    output_mode: mode,
                };
                let up = upsample(
                    &restored,
                    &models.upsampler,
                    &models.stats_g,
                    &models.stats_a,
                    &diff_cfg,
                )?;
                upsampled_voxels = up.len();
            }
        }

        frames.push(FrameReport {
            frame_id,
            n,
            n_prime,
            cr,
            geom_ok: geo.frame_ok,
            geom_exact: geo.coords_exact,
            geom_ber_pre: geo.pre_decode_bit_errors as f64 / geo.pre_decode_bits.max(1) as f64,
            geom_ber_post: geo.post_decode_bit_errors as f64 / geo.post_decode_bits.max(1) as f64,
            ldpc_mean_iters: geo.mean_iterations,
            attr_mse: pass.loss,
            power_error: pass.power_error,
            mask_precision: precision,
            mask_recall: recall,
            failsafe_engaged: compacted.failsafe_engaged,
            upsampled_voxels,
        });
        timings.push(started.elapsed().as_secs_f64() * 1e3);
    }

    let dims_in: usize = frames.iter().map(|f| f.n * FULL_DIMS_PER_VOXEL).sum();
    let dims_out: usize = frames.iter().map(|f| f.n_prime * (3 + cfg.c_a)).sum();
    let count = frames.len() as f64;
    let geom_ok_rate = frames.iter().filter(|f| f.geom_ok && f.geom_exact).count() as f64 / count;
    let aggregate = Aggregate {
        frames: frames.len(),
        snr_db: cfg.snr_db,
        ldpc_enabled: cfg.ldpc_enabled,
        c_a: cfg.c_a,
        jscc_width: cfg.jscc_width,
        geom_ok_rate,
        geom_failure_rate: 1.0 - geom_ok_rate,
        aggregate_cr: dims_in as f64 / dims_out.max(1) as f64,
        mean_attr_mse: frames.iter().map(|f| f.attr_mse).sum::<f64>() / count,
        mean_mask_precision: frames.iter().map(|f| f.mask_precision).sum::<f64>() / count,
        mean_mask_recall: frames.iter().map(|f| f.mask_recall).sum::<f64>() / count,
        mean_ldpc_iters: frames.iter().map(|f| f.ldpc_mean_iters).sum::<f64>() / count,
        max_power_error: frames
            .iter()
            .map(|f| f.power_error)
            .fold(0.0, f64::max),
    };

    Ok(E2eRun {
        frames,
        aggregate,
        timings_ms: timings,
    })
}

/// Frame reports as a CSV document with a fixed column order.
pub fn frames_csv(frames: &[FrameReport]) -> String {
    let mut out = String::from(
        "frame_id,n,n_prime,cr,geom_ok,geom_exact,geom_ber_pre,geom_ber_post,\
         ldpc_mean_iters,attr_mse,power_error,mask_precision,mask_recall,\
         failsafe_engaged,upsampled_voxels\n",
    );
    for f in frames {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            f.frame_id,
            f.n,
            f.n_prime,
            f.cr,
            f.geom_ok,
            f.geom_exact,
            f.geom_ber_pre,
            f.geom_ber_post,
            f.ldpc_mean_iters,
            f.attr_mse,
            f.power_error,
            f.mask_precision,
            f.mask_recall,
            f.failsafe_engaged,
            f.upsampled_voxels
        ));
    }
    out
}

/// One row of a BER sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BerRow {
    pub snr_db: f64,
    pub uncoded_ber: f64,
    pub coded_ber: f64,
    pub frame_error_rate: f64,
    pub mean_iterations: f64,
}

/// Paired Monte Carlo BER measurement: per SNR, `trials` random codewords
/// share one channel realization between the uncoded hard decision and the
/// decoded path.
pub fn ber_sweep(
    snr_list: &[f64],
    trials: usize,
    code: &LdpcCode,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<BerRow>> {
    if trials == 0 {
        return Err(Error::Config("ber sweep needs at least one trial".into()));
    }
    let mut rows = Vec::with_capacity(snr_list.len());
    for (si, &snr_db) in snr_list.iter().enumerate() {
        let mut msg_rng = seeded_rng(derive_seed(seed, 0x5EED + si as u64));
        let mut uncoded_errors = 0usize;
        let mut coded_errors = 0usize;
        let mut frame_errors = 0usize;
        let mut iters_total = 0.0;
        for trial in 0..trials {
            let message: Vec<u8> = (0..code.k).map(|_| msg_rng.gen_range(0..2) as u8).collect();
            let codeword = ldpc_encode(code, &message)?;
            let noisy = awgn(
                &bpsk_modulate(&codeword),
                &ChannelConfig::new(
                    snr_db,
                    derive_seed(seed, (si as u64) << 32 | trial as u64),
                ),
            );
            uncoded_errors += hard_decision(&noisy)
                .iter()
                .zip(&codeword)
                .filter(|(a, b)| a != b)
                .count();
            let out = ldpc_decode(code, &bpsk_demodulate_llr(&noisy, snr_db), max_iters)?;
            let errs = out
                .message
                .iter()
                .zip(&message)
                .filter(|(a, b)| a != b)
                .count();
            coded_errors += errs;
            frame_errors += usize::from(errs > 0 || !out.converged);
            iters_total += out.iterations as f64;
        }
        rows.push(BerRow {
            snr_db,
            uncoded_ber: uncoded_errors as f64 / (trials * code.n) as f64,
            coded_ber: coded_errors as f64 / (trials * code.k) as f64,
            frame_error_rate: frame_errors as f64 / trials as f64,
            mean_iterations: iters_total / trials as f64,
        });
    }
    Ok(rows)
}

pub fn ber_csv(rows: &[BerRow]) -> String {
    let mut out = String::from("snr_db,uncoded_ber,coded_ber,frame_error_rate,mean_iterations\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.snr_db, r.uncoded_ber, r.coded_ber, r.frame_error_rate, r.mean_iterations
        ));
    }
    out
}

/// One row of the mask-expansion or channel-count sweeps.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub setting: f64,
    pub aggregate_cr: f64,
    pub mean_attr_mse: f64,
    pub mean_mask_precision: f64,
    pub mean_mask_recall: f64,
    pub geom_ok_rate: f64,
}

fn sweep_row(setting: f64, run: &E2eRun) -> SweepRow {
    SweepRow {
        setting,
        aggregate_cr: run.aggregate.aggregate_cr,
        mean_attr_mse: run.aggregate.mean_attr_mse,
        mean_mask_precision: run.aggregate.mean_mask_precision,
        mean_mask_recall: run.aggregate.mean_mask_recall,
        geom_ok_rate: run.aggregate.geom_ok_rate,
    }
}

/// Reruns the pipeline with different mask expansion sizes.
pub fn sweep_expansion(base: &PipelineConfig, e_list: &[u32]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(e_list.len());
    for &e in e_list {
        let mut cfg = base.clone();
        cfg.scene.expansion = e;
        let run = run_e2e(&cfg)?;
        rows.push(sweep_row(e as f64, &run));
    }
    Ok(rows)
}

/// Reruns the pipeline with different compacted channel counts.
pub fn sweep_channels(base: &PipelineConfig, c_list: &[usize]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(c_list.len());
    for &c_a in c_list {
        let mut cfg = base.clone();
        cfg.c_a = c_a;
        let run = run_e2e(&cfg)?;
        rows.push(sweep_row(c_a as f64, &run));
    }
    Ok(rows)
}

pub fn sweep_csv(header: &str, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{header},aggregate_cr,mean_attr_mse,mean_mask_precision,mean_mask_recall,geom_ok_rate\n"
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.setting,
            r.aggregate_cr,
            r.mean_attr_mse,
            r.mean_mask_precision,
            r.mean_mask_recall,
            r.geom_ok_rate
        ));
    }
    out
}

/// Synthetic attribute matrices with per-frame structure, the stand-in for
/// compacted features when training the attribute channel code.
pub fn gen_attribute_dataset(
    frames: usize,
    rows_per_frame: usize,
    in_dim: usize,
    seed: u64,
) -> Vec<Matrix> {
    let mut rng = seeded_rng(derive_seed(seed, tag::TRAIN));
    (0..frames)
        .map(|_| {
            let mean: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let mut data = Vec::with_capacity(rows_per_frame * in_dim);
            for _ in 0..rows_per_frame {
                for &m in &mean {
                    data.push(m + rng.gen_range(-0.7..0.7));
                }
            }
            Matrix::new(rows_per_frame, in_dim, data).unwrap()
        })
        .collect()
}

/// One row of the attribute expansion-width sweep.
#[derive(Debug, Clone, Serialize)]
pub struct WidthRow {
    pub width: usize,
    pub trained_mse_0db: f64,
    pub final_train_loss: f64,
}

/// Trains one model per expansion width on a synthetic dataset and reports
/// the held-out reconstruction MSE at 0 dB.
pub fn sweep_width(
    widths: &[usize],
    in_dim: usize,
    train_frames: usize,
    eval_frames: usize,
    rows_per_frame: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<WidthRow>> {
    let train_set = gen_attribute_dataset(train_frames, rows_per_frame, in_dim, seed);
    let eval_set = gen_attribute_dataset(eval_frames, rows_per_frame, in_dim, derive_seed(seed, 1));
    let mut rows = Vec::with_capacity(widths.len());
    for &w in widths {
        let dims = JsccDims::with_width(in_dim, w);
        let cfg = TrainConfig {
            snr_range: (0.0, 20.0),
            epochs,
            lr: 1e-4,
            weight_decay: 1e-5,
            seed: derive_seed(seed, 100 + w as u64),
        };
        let out = train_phase_two(&train_set, dims, &cfg)?;
        let mse = evaluate(&eval_set, 0.0, &out.encoder, &out.decoder, derive_seed(seed, 2))?;
        rows.push(WidthRow {
            width: w,
            trained_mse_0db: mse,
            final_train_loss: *out.epoch_losses.last().unwrap(),
        });
    }
    Ok(rows)
}

pub fn width_csv(rows: &[WidthRow]) -> String {
    let mut out = String::from("width,trained_mse_0db,final_train_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.width, r.trained_mse_0db, r.final_train_loss
        ));
    }
    out
}
