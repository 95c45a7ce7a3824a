//! `glayers` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use glayers_core::gaussianize::{diagnostics, gaussianize, parse_patch, GaussianizeConfig, PatchPartition, Whitening};
use glayers_core::invert::{gradcheck, psnr, run_inversion, ssim, InversionConfig, IMAGE_PEAK};
use glayers_core::{Error, Result, Tensor};

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "glayers", version, about = "Gaussianization layers for latent-space inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhitenArg {
    Zca,
    Iter,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-start inversion and write a JSON report.
    Invert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussianize a tensor file and print diagnostics of the result.
    Gaussianize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Patch shape such as `1x4x4`.
        #[arg(long)]
        patch: String,
        #[arg(long, default_value_t = 1.0)]
        temp: f64,
        #[arg(long)]
        no_ica: bool,
        #[arg(long)]
        no_yj: bool,
        #[arg(long)]
        no_lambert: bool,
        #[arg(long, value_enum, default_value = "zca")]
        whiten: WhitenArg,
        #[arg(long)]
        roll: bool,
    },
    /// Finite-difference gradient check of a stage or objective.
    Gradcheck {
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR and SSIM of a test image against a reference.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = IMAGE_PEAK)]
        peak: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Lookup(_) | Error::Partition(_) => EXIT_CONFIG,
        e if e.is_convergence() => EXIT_CONVERGENCE,
        _ => EXIT_FAILED,
    }
}

fn history_path(cfg: &InversionConfig, out: &Path) -> PathBuf {
    cfg.history_csv.clone().unwrap_or_else(|| out.with_extension("csv"))
}

fn invert(config: &Path, out: &Path) -> Result<()> {
    let cfg = InversionConfig::load(config)?;
    let outcome = run_inversion(&cfg)?;
    let report = &outcome.report;
    report.save(out)?;
    report.save_history_csv(history_path(&cfg, out))?;
    for r in &report.restarts {
        match (r.ok, r.final_loss) {
            (true, Some(loss)) => log::info!("seed {}: loss {loss:.6e}, {} iterations", r.seed, r.iterations),
            _ => log::warn!("seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or("unknown")),
        }
    }
    println!(
        "best psnr {:.3} (seed {}), best ssim {:.4} (seed {}), best loss {:.6e} (seed {})",
        report.best.psnr,
        report.best.psnr_seed,
        report.best.ssim,
        report.best.ssim_seed,
        report.best.loss,
        report.best.loss_seed
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Invert { config, out } => invert(&config, &out)?,
        Command::Gaussianize {
            input,
            out,
            patch,
            temp,
            no_ica,
            no_yj,
            no_lambert,
            whiten,
            roll,
        } => {
            let cfg = GaussianizeConfig {
                temperature: temp,
                ica: !no_ica,
                yeo_johnson: !no_yj,
                lambert: !no_lambert,
                whitening: match whiten {
                    WhitenArg::Zca => Whitening::Zca,
                    WhitenArg::Iter => Whitening::Iterative,
                },
                roll,
                ..Default::default()
            };
            let v = Tensor::load(&input)?;
            let part = PatchPartition::new(v.dims(), &parse_patch(&patch)?)?;
            let z = gaussianize(&v, &part, &cfg)?;
            z.save(&out)?;
            let diag = diagnostics(&z, &part)?;
            let mut flat = diag.to_flat_json();
            flat.insert("passes".into(), diag.passes(temp).into());
            println!("{}", serde_json::Value::Object(flat));
        }
        Command::Gradcheck { id, seed } => {
            let r = gradcheck(&id, seed)?;
            print!("{}", r.render());
            if !r.passed {
                return Ok(ExitCode::from(EXIT_FAILED));
            }
        }
        Command::Metrics { reference, test, peak } => {
            let (a, b) = (Tensor::load(&reference)?, Tensor::load(&test)?);
            let out = serde_json::json!({
                "psnr": psnr(&a, &b, peak)?,
                "ssim": ssim(&a, &b)?,
            });
            println!("{out}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
