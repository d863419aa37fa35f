use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use tdvc::codec::ExternalBridge;
use tdvc::metrics::{bd_rate, curves_by_key, psnr, read_rows, ssim, write_rows};
use tdvc::pipeline::{
    decode_sequence, encode_sequence, ingest, rd_sweep, write_plot_data, write_sequence,
    EncodeConfig, SweepOptions, SweepSpec, DEFAULT_FPS, DEFAULT_GROUP_SIZE,
};
use tdvc::{synth, Error, Result};

/// Low-rank CP tensor codec for depth video.
///
/// The external plane encoder is taken from TDVC_EXTERNAL_ENCODER (command
/// template with {input} {output} {qp} {width} {height} {frames}), its
/// decoder from TDVC_EXTERNAL_DECODER; TDVC_EXTERNAL_FALLBACK=1 falls back
/// to the built-in coder when the external tool fails.
#[derive(Parser)]
#[command(name = "tdvc", version)]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a directory (or list) of depth frames into a container.
    Encode {
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        qp: u32,
        #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
        group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Disable pairwise-perturbation acceleration.
        #[arg(long)]
        no_pp: bool,
        #[arg(short, long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Output container; `-` writes to stdout.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode a container into 16- or 8-bit PGM frames.
    Decode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a (rank × QP) rate-distortion sweep and write the CSV table.
    RdSweep {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 15, 20])]
        ranks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 6, 10, 14, 20, 26, 38])]
        qps: Vec<u32>,
        #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
        group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_pp: bool,
        #[arg(short, long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "sequence")]
        scene: String,
        #[arg(long, default_value = "0")]
        camera: String,
        /// Frame rate used for kbps.
        #[arg(long, default_value_t = DEFAULT_FPS)]
        fps: f64,
        /// Directory receiving one container per cell.
        #[arg(long)]
        containers: Option<PathBuf>,
        /// Plot-data CSV (rank, qp, bitrate_kbps, psnr_db, ssim).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Per-frame and mean PSNR / SSIM between two frame sets.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Bjontegaard delta rate of every test curve against the anchor curve
    /// of the same scene and camera.
    Bdrate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Write the synthetic depth corpus as PGM frame directories.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("tdvc: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdvc: {} error: {e}", e.category());
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

fn run(command: Command) -> Result<()> {
    let bridge = ExternalBridge::from_env();
    match command {
        Command::Encode {
            rank,
            qp,
            group,
            seed,
            no_pp,
            input,
            output,
        } => {
            let seq = ingest(&input, DEFAULT_FPS)?;
            let config = EncodeConfig {
                group_size: group,
                seed,
                pp_enabled: !no_pp,
                bridge,
                ..EncodeConfig::new(rank, qp)
            };
            let bytes = encode_sequence(&seq, &config)?;
            if output == Path::new("-") {
                let mut out = std::io::stdout().lock();
                out.write_all(&bytes)?;
                out.flush()?;
            } else {
                fs::write(&output, &bytes)?;
            }
            info!("{} frames → {} bytes", seq.frames().len(), bytes.len());
            Ok(())
        }
        Command::Decode { input, output } => {
            let bytes = fs::read(&input)?;
            let seq = decode_sequence(&bytes, bridge.as_ref(), DEFAULT_FPS)?;
            write_sequence(&seq, &output)?;
            Ok(())
        }
        Command::RdSweep {
            ranks,
            qps,
            group,
            seed,
            no_pp,
            input,
            output,
            scene,
            camera,
            fps,
            containers,
            plot,
        } => {
            let seq = ingest(&input, fps)?;
            let spec = SweepSpec {
                ranks,
                qps,
                group_size: group,
                seed,
                pp_enabled: !no_pp,
                ..SweepSpec::default()
            };
            let options = SweepOptions {
                scene,
                camera,
                containers_dir: containers,
                bridge,
                export: None,
            };
            let result = rd_sweep(&seq, &spec, &options)?;
            write_rows(&result.rows, fs::File::create(&output)?)?;
            if let Some(path) = plot {
                write_plot_data(&result.rows, fs::File::create(path)?)?;
            }
            for (rank, curve) in &result.curves {
                if let Err(reason) = curve {
                    log::warn!("rank {rank}: no RD curve ({reason})");
                }
            }
            Ok(())
        }
        Command::Metrics { reference, test } => {
            let a = ingest(&[reference], DEFAULT_FPS)?;
            let b = ingest(&[test], DEFAULT_FPS)?;
            if a.frames().len() != b.frames().len() {
                return Err(Error::Domain(format!(
                    "reference has {} frames, test has {}",
                    a.frames().len(),
                    b.frames().len()
                )));
            }
            let mut out = std::io::stdout().lock();
            writeln!(out, "frame,psnr_db,ssim")?;
            let (mut sum_p, mut sum_s) = (0.0, 0.0);
            for (i, (x, y)) in a.frames().iter().zip(b.frames()).enumerate() {
                let (p, s) = (psnr(x, y)?, ssim(x, y)?);
                writeln!(out, "{i},{p:.6},{s:.8}")?;
                sum_p += p;
                sum_s += s;
            }
            let n = a.frames().len() as f64;
            writeln!(out, "mean,{:.6},{:.8}", sum_p / n, sum_s / n)?;
            Ok(())
        }
        Command::Bdrate { anchor, test } => {
            let anchors = curves_by_key(&read_rows(fs::File::open(&anchor)?)?);
            let tests = curves_by_key(&read_rows(fs::File::open(&test)?)?);
            let mut out = std::io::stdout().lock();
            writeln!(out, "scene,camera,rank,bd_rate_percent")?;
            let mut computed = 0usize;
            for (key, curve) in &tests {
                let anchor_curve = anchors.iter().find(|(k, _)| {
                    k.scene == key.scene && k.camera == key.camera && k.rank.is_none()
                });
                let Some((_, anchor_curve)) = anchor_curve else {
                    log::warn!("{key}: no anchor curve for this scene and camera");
                    continue;
                };
                let value = match (anchor_curve, curve) {
                    (Ok(a), Ok(t)) => bd_rate(a, t),
                    (Err(e), _) | (_, Err(e)) => Err(Error::Domain(e.to_string())),
                };
                let rank = key.rank.map(|r| r.to_string()).unwrap_or_default();
                match value {
                    Ok(v) => {
                        writeln!(out, "{},{},{rank},{v:.4}", key.scene, key.camera)?;
                        computed += 1;
                    }
                    Err(e) => log::warn!("{key}: {e}"),
                }
            }
            if computed == 0 {
                return Err(Error::Domain(
                    "no test curve could be compared with an anchor".into(),
                ));
            }
            Ok(())
        }
        Command::Synth { output } => {
            for (name, seq) in synth::corpus() {
                write_sequence(&seq, &output.join(name))?;
            }
            Ok(())
        }
    }
}
