use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use seq_core::data::Split;
use seq_core::generator::ImageFormat;
use seq_core::nn::Arch;
use seq_core::pipeline::{
    cmd_eval, cmd_generate, cmd_quantize, cmd_select_k, cmd_train_decoder, cmd_train_encoder, default_bundle_path,
    GenerateMode, GenerateRequest, Overrides, PipelineError, RunConfig,
};

/// Supervised-encoding quantizer: train an encoder, cluster its embedding,
/// decode and mix styles.
#[derive(Parser)]
#[command(name = "seq", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; omitted keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// lae2, lae4 or cae4.
    #[arg(long, global = true)]
    arch: Option<Arch>,
    /// Number of clusters for the stored codebook.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Comma-separated ascending K values.
    #[arg(long, global = true, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Output directory for bundles, CSVs and images.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the IDX files.
    #[arg(long, global = true, env = "SEQ_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Bundle path (default: <out>/bundle.seq).
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Image format for generated grids: pgm or png.
    #[arg(long, global = true, default_value = "pgm")]
    format: ImageFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the encoder and write a new bundle.
    TrainEncoder,
    /// Sweep K over the grid and store the codebook for --k.
    Quantize,
    /// Pick the smallest K with P_Q > P_E - epsilon.
    SelectK,
    /// Train the decoder against the frozen encoder.
    TrainDecoder,
    /// Decode cluster means or a three-sample interpolation grid.
    Generate {
        /// cluster-means, intra or inter.
        #[arg(long, default_value = "cluster-means")]
        mode: GenerateMode,
        /// Three comma-separated sample indices for intra/inter.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<usize>,
        /// Interior rows/columns of the interpolation grid.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "train", value_parser = parse_split)]
        split: Split,
    },
    /// Nearest-centroid accuracy of the stored codebook.
    Eval {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (expected train or test)")),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        seq_core::init_threads(n).map_err(PipelineError::Config)?;
    }
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let steps = match &cli.command {
        Command::Generate { steps, .. } => *steps,
        _ => None,
    };
    cfg.apply(&Overrides {
        seed: g.seed,
        arch: g.arch,
        k: g.k,
        k_grid: g.k_grid.clone(),
        epsilon: g.epsilon,
        out_dir: g.out.clone(),
        data_dir: g.data_dir.clone(),
        steps,
    });
    cfg.validate()?;
    let bundle = g.bundle.clone().unwrap_or_else(|| default_bundle_path(&cfg));

    match cli.command {
        Command::TrainEncoder => {
            let o = cmd_train_encoder(&cfg, &bundle)?;
            println!("P_E {:.6}", o.p_e);
            println!("bundle {} sha256 {}", o.bundle_path.display(), o.bundle_hash);
        }
        Command::Quantize => {
            let o = cmd_quantize(&cfg, &bundle)?;
            println!("k,p_q_train,acc_test,inertia,seed");
            for r in &o.records {
                println!("{},{:.6},{:.6},{:.6},{}", r.k, r.p_q_train, r.acc_test.unwrap_or(f64::NAN), r.inertia, r.seed);
            }
            println!("codebook K={} P_Q train {:.6} test {:.6} (P_E {:.6})", o.k, o.p_q_train, o.acc_test, o.p_e);
            let s = o.spread;
            println!(
                "over {} seeds: P_Q train {:.6} (se {:.6}) test {:.6} (se {:.6})",
                s.seeds, s.p_q_train_mean, s.p_q_train_se, s.acc_test_mean, s.acc_test_se
            );
            println!("bundle sha256 {}", o.bundle_hash);
        }
        Command::SelectK => {
            let o = cmd_select_k(&cfg, &bundle)?;
            match o.report.selected {
                Some(k) => println!("selected K={k} (P_Q {:.6} > P_E {:.6} - {})", o.report.p_q, o.report.p_e, o.report.epsilon),
                None => println!("no K in the grid satisfies P_Q > P_E - epsilon"),
            }
            println!("bundle sha256 {}", o.bundle_hash);
        }
        Command::TrainDecoder => {
            let o = cmd_train_decoder(&cfg, &bundle)?;
            println!(
                "held-out MSE {:.6} (mean-image baseline {:.6})",
                o.report.final_mse, o.report.baseline_mse
            );
            println!("encoder {} decoder {}", o.encoder_fingerprint, o.decoder_fingerprint);
            println!("bundle sha256 {}", o.bundle_hash);
        }
        Command::Generate { mode, ids, split, .. } => {
            let o = cmd_generate(
                &cfg,
                &bundle,
                &GenerateRequest {
                    mode,
                    ids,
                    split,
                    format: g.format,
                },
            )?;
            println!("wrote {} ({} cells, {} annotated)", o.path.display(), o.cells, o.annotated);
        }
        Command::Eval { split } => {
            let o = cmd_eval(&cfg, &bundle, split)?;
            println!("{} accuracy {:.6} on {} samples (K={}, P_E {:.6})", o.split, o.accuracy, o.samples, o.k, o.p_e);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
