//! Command-line simulator for the feature point cloud transmission pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fpcw_core::geometry::{
    frame_encode, frame_write, ExternalCodec, GeometryCodec, OctreeCodec,
};
use fpcw_core::jscc::{train_phase_two_logged, JsccDims, TrainConfig};
use fpcw_core::ldpc::ldpc_build;
use fpcw_core::mask::{merge_boxes, BoundingBox};
use fpcw_core::params::ParamStore;
use fpcw_core::pipeline::{
    ber_csv, ber_sweep, compression_rate, frames_csv, gen_attribute_dataset, gen_scene, run_e2e,
    sweep_channels, sweep_csv, sweep_expansion, sweep_width, width_csv, PipelineConfig,
    FULL_DIMS_PER_VOXEL,
};
use fpcw_core::rng::derive_seed;
use fpcw_core::source::{
    channel_compact, channel_decompact, spatial_compact_infer, spatial_probs, CompactionModel,
    DecompactionModel, FAILSAFE_KEEP,
};
use fpcw_core::sparse::SparseVoxelTensor;
use fpcw_core::tensor::{InitScheme, Matrix};

#[derive(Parser)]
#[command(name = "fpcw", about = "Feature point cloud compaction and transmission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel SNR in dB override ("inf" for the noiseless channel).
    #[arg(long)]
    snr_db: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Disable LDPC protection of the geometry bitstream.
    #[arg(long)]
    no_ldpc: bool,
    /// External geometry codec command (see README for the protocol).
    #[arg(long)]
    external_geom_codec: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene tensor and its box list.
    GenScene {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full encode -> channel -> decode -> upsample pipeline.
    E2e {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo BER sweep of the protected geometry channel.
    BerSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated SNR points in dB.
        #[arg(long, default_value = "0,2,4,6,8,10")]
        snr_list: String,
        /// LDPC blocks per SNR point.
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Rerun the pipeline over mask expansion sizes.
    SweepExpansion {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "0,8,16,24,32")]
        e_list: String,
    },
    /// Rerun the pipeline over compacted channel counts.
    SweepChannels {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "2,4,6,8")]
        c_list: String,
    },
    /// Train one attribute channel code per expansion width.
    SweepWidth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "10,20,40,80")]
        w_list: String,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long, default_value_t = 80)]
        train_frames: usize,
        #[arg(long, default_value_t = 30)]
        eval_frames: usize,
    },
    /// Train the attribute channel code and save its weights.
    TrainJscc {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 500)]
        train_frames: usize,
        #[arg(long, default_value_t = 100)]
        eval_frames: usize,
        #[arg(long, default_value_t = 64)]
        rows_per_frame: usize,
    },
    /// Compute the ground-truth relevance mask for a box list.
    MaskOracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Box list file: one "x y z l w h" line per box.
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Source-encode a feature tensor file.
    Encode {
        #[command(flatten)]
        common: CommonArgs,
        /// Input tensor in text format (64 attribute channels).
        #[arg(long)]
        input: PathBuf,
        /// Optional compaction weights (parameter store file).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Source-decode a compacted tensor file back to 64 channels.
    Decode {
        #[command(flatten)]
        common: CommonArgs,
        /// Compacted tensor in text format.
        #[arg(long)]
        input: PathBuf,
        /// Optional decompaction weights (parameter store file).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = common.snr_db {
        cfg.snr_db = if snr.is_infinite() { None } else { Some(snr) };
    }
    if common.no_ldpc {
        cfg.ldpc_enabled = false;
    }
    if let Some(cmd) = &common.external_geom_codec {
        cfg.external_geom_codec = Some(cmd.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad {what} entry '{t}'"))
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenScene { common } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let spec = cfg.scene_spec()?;
            let (tensor, boxes) = gen_scene(cfg.seed, cfg.n_objects, &spec)?;
            write_file(&common.out, "scene.txt", &tensor.to_text())?;
            let mut box_text = String::new();
            for b in &boxes {
                box_text.push_str(&format!(
                    "{} {} {} {} {} {}\n",
                    b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2]
                ));
            }
            write_file(&common.out, "boxes.txt", &box_text)?;
            println!("scene: {} voxels, {} boxes", tensor.len(), boxes.len());
        }

        Command::E2e { common } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let run = run_e2e(&cfg)?;
            write_file(&common.out, "frames.csv", &frames_csv(&run.frames))?;
            write_file(
                &common.out,
                "aggregate.json",
                &serde_json::to_string_pretty(&run.aggregate)?,
            )?;
            let mut timing = String::from("frame_id,elapsed_ms\n");
            for (i, t) in run.timings_ms.iter().enumerate() {
                timing.push_str(&format!("{i},{t:.3}\n"));
            }
            write_file(&common.out, "timings.csv", &timing)?;
            println!(
                "{} frames, geometry ok rate {:.3}, aggregate CR {:.2}",
                run.aggregate.frames, run.aggregate.geom_ok_rate, run.aggregate.aggregate_cr
            );
        }

        Command::BerSweep {
            common,
            snr_list,
            trials,
        } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let snrs: Vec<f64> = parse_list(&snr_list, "snr")?;
            let code = ldpc_build(
                cfg.ldpc.m,
                cfg.ldpc.dv,
                cfg.ldpc.dc,
                derive_seed(cfg.seed, 0xBEEF),
            )?;
            let rows = ber_sweep(&snrs, trials, &code, cfg.ldpc.max_iters, cfg.seed)?;
            write_file(&common.out, "ber.csv", &ber_csv(&rows))?;
        }

        Command::SweepExpansion { common, e_list } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let es: Vec<u32> = parse_list(&e_list, "expansion")?;
            let rows = sweep_expansion(&cfg, &es)?;
            write_file(&common.out, "expansion.csv", &sweep_csv("expansion", &rows))?;
        }

        Command::SweepChannels { common, c_list } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let cs: Vec<usize> = parse_list(&c_list, "channel count")?;
            let rows = sweep_channels(&cfg, &cs)?;
            write_file(&common.out, "channels.csv", &sweep_csv("c_a", &rows))?;
        }

        Command::SweepWidth {
            common,
            w_list,
            epochs,
            train_frames,
            eval_frames,
        } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let ws: Vec<usize> = parse_list(&w_list, "width")?;
            let rows = sweep_width(&ws, cfg.c_a, train_frames, eval_frames, 64, epochs, cfg.seed)?;
            write_file(&common.out, "width.csv", &width_csv(&rows))?;
        }

        Command::TrainJscc {
            common,
            epochs,
            train_frames,
            eval_frames,
            rows_per_frame,
        } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let dims = JsccDims::with_width(cfg.c_a, cfg.jscc_width);
            let train_set = gen_attribute_dataset(train_frames, rows_per_frame, cfg.c_a, cfg.seed);
            let eval_set = gen_attribute_dataset(
                eval_frames,
                rows_per_frame,
                cfg.c_a,
                derive_seed(cfg.seed, 1),
            );
            let snr_points = [0.0, 5.0, 10.0, 15.0, 20.0];
            let train_cfg = TrainConfig {
                snr_range: (0.0, 20.0),
                epochs,
                lr: 1e-4,
                weight_decay: 1e-5,
                seed: cfg.seed,
            };
            let (outcome, log) = train_phase_two_logged(
                &train_set,
                dims,
                &train_cfg,
                Some((&eval_set, &snr_points, derive_seed(cfg.seed, 2))),
            )?;

            let mut store = ParamStore::new(cfg.seed, InitScheme::FanInUniform);
            outcome.encoder.save_params(&mut store)?;
            outcome.decoder.save_params(&mut store)?;
            let weights_path = common.out.join("jscc_weights.fpcw");
            store.save(&weights_path)?;
            println!("wrote {}", weights_path.display());

            let mut csv = String::from("epoch,mean_loss");
            for snr in snr_points {
                csv.push_str(&format!(",eval_mse_{snr}db"));
            }
            csv.push('\n');
            for row in &log {
                csv.push_str(&format!("{},{}", row.epoch, row.mean_loss));
                for m in &row.eval_mse {
                    csv.push_str(&format!(",{m}"));
                }
                csv.push('\n');
            }
            write_file(&common.out, "train_log.csv", &csv)?;
        }

        Command::MaskOracle { common, boxes } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let spec = cfg.scene_spec()?;
            let text = fs::read_to_string(&boxes)
                .with_context(|| format!("reading {}", boxes.display()))?;
            let mut parsed = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Vec<f64> = parse_list(line.trim().replace(' ', ",").as_str(), "box")?;
                if vals.len() != 6 {
                    bail!("box line {} needs 6 fields", lineno + 1);
                }
                parsed.push(BoundingBox::new(
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                )?);
            }
            let mask = merge_boxes(&parsed, &spec)?;
            let coords: Vec<_> = mask.relevant.iter().copied().collect();
            let n = coords.len();
            let tensor =
                SparseVoxelTensor::new(coords, Matrix::new(n, 1, vec![1.0; n])?, spec.grid)?;
            write_file(&common.out, "mask.txt", &tensor.to_text())?;
            println!("mask: {} relevant voxels", n);
        }

        Command::Encode {
            common,
            input,
            weights,
        } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let f4 = SparseVoxelTensor::from_text(&text)?;

            let model = match &weights {
                Some(path) => CompactionModel::load_params(&ParamStore::load(path)?, cfg.c_a)?,
                None => CompactionModel::seeded(
                    cfg.c_a,
                    derive_seed(derive_seed(cfg.seed, fpcw_core::rng::tag::MODEL_INIT), 0),
                )?,
            };
            let fc = channel_compact(&f4, &model)?;
            let probs = spatial_probs(&fc, &model)?;
            let compacted = spatial_compact_infer(&fc, &probs, 0.5, FAILSAFE_KEEP)?;
            write_file(&common.out, "compact.txt", &compacted.tensor.to_text())?;

            let codec: Box<dyn GeometryCodec> = match &cfg.external_geom_codec {
                Some(cmd) => Box::new(ExternalCodec { command: cmd.clone() }),
                None => Box::new(OctreeCodec),
            };
            let payload = codec.encode(compacted.tensor.coords(), compacted.tensor.grid())?;
            let geom_path = common.out.join("geometry.bin");
            fs::write(&geom_path, &payload)?;
            println!("wrote {}", geom_path.display());

            // channel replay frame with clean symbols
            let code = ldpc_build(
                cfg.ldpc.m,
                cfg.ldpc.dv,
                cfg.ldpc.dc,
                derive_seed(cfg.seed, 0xBEEF),
            )?;
            let frame = frame_encode(compacted.tensor.coords(), compacted.tensor.grid(), &code)?;
            let mut buf = Vec::new();
            frame_write(&frame, &mut buf)?;
            let frame_path = common.out.join("frame.bin");
            fs::write(&frame_path, &buf)?;
            println!("wrote {}", frame_path.display());

            let cr = compression_rate(
                f4.len(),
                FULL_DIMS_PER_VOXEL,
                compacted.tensor.len(),
                3 + cfg.c_a,
            )?;
            println!(
                "{} -> {} voxels, CR {:.2}, failsafe {}",
                f4.len(),
                compacted.tensor.len(),
                cr,
                compacted.failsafe_engaged
            );
        }

        Command::Decode {
            common,
            input,
            weights,
        } => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let compacted = SparseVoxelTensor::from_text(&text)?;
            let model = match &weights {
                Some(path) => DecompactionModel::load_params(&ParamStore::load(path)?, cfg.c_a)?,
                None => DecompactionModel::seeded(
                    cfg.c_a,
                    derive_seed(derive_seed(cfg.seed, fpcw_core::rng::tag::MODEL_INIT), 3),
                )?,
            };
            let restored = channel_decompact(&compacted, &model)?;
            write_file(&common.out, "f4hat.txt", &restored.to_text())?;
            println!("restored {} voxels x {} channels", restored.len(), restored.channels());
        }
    }
    Ok(())
}
