//! Command-line entry point: dataset synthesis, training, prediction,
//! evaluation, and the built-in verification suites.
//!
//! Exit codes: 0 success, 1 check/validation failure, 2 usage or IO error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use paratope::config::{FileConfig, Precision};
use paratope::diff::params::load_checkpoint;
use paratope::metrics::{evaluate_dataset, EvalReport};
use paratope::model::{read_predictions, write_predictions, Model, PredictionRecord};
use paratope::scalar::Scalar;
use paratope::selfcheck::{run_checks, Level};
use paratope::structure::synth::{generate_dataset, SynthParams};
use paratope::structure::{read_dataset, write_dataset, Complex};
use paratope::trainer::{fit, prepare_dataset, restore_trainer_state, write_history};

#[derive(Parser)]
#[command(name = "paratope", version, about = "Contact-first antibody CDR design")]
struct Cli {
    /// Worker threads for embarrassingly parallel stages (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of antibody-antigen complexes.
    Synth {
        /// Output dataset file (newline-delimited JSON complexes).
        #[arg(long)]
        out: PathBuf,
        /// Number of complexes.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Base seed; complex i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CDR length (5..=25).
        #[arg(long, default_value_t = 10)]
        cdr_len: usize,
        /// Antigen length.
        #[arg(long, default_value_t = 30)]
        antigen_len: usize,
        /// Fraction of CDR positions planted as contacts.
        #[arg(long, default_value_t = 0.5)]
        contact_frac: f64,
        /// Coordinate jitter amplitude in Å.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
    },
    /// Train a model and write checkpoints plus a history CSV.
    Train {
        /// Training dataset file.
        #[arg(long)]
        train: PathBuf,
        /// Validation dataset file.
        #[arg(long)]
        val: PathBuf,
        /// Optional TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints, history, and resolved config.
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the configured epoch budget.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Resume from a checkpoint produced by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Design CDR sequences for a dataset with a trained model.
    Predict {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Input dataset file.
        #[arg(long, name = "in")]
        input: PathBuf,
        /// Output predictions file (newline-delimited JSON records).
        #[arg(long)]
        out: PathBuf,
        /// Optional TOML configuration file (must match the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score predictions against reference complexes.
    Eval {
        /// Predictions file from `predict`.
        #[arg(long)]
        pred: PathBuf,
        /// Reference dataset file.
        #[arg(long, name = "ref")]
        reference: PathBuf,
        /// Output CSV report.
        #[arg(long)]
        out: PathBuf,
        /// Superpose CDRs before the RMSD metric.
        #[arg(long, default_value_t = false)]
        superpose: bool,
    },
    /// Run the built-in invariant suites.
    Check {
        #[arg(long, value_parser = ["fast", "full"], default_value = "fast")]
        level: String,
        /// Optional TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Error carrying the process exit code.
struct CmdError {
    code: i32,
    message: String,
}

impl CmdError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn io_err(context: &str, e: impl std::fmt::Display) -> CmdError {
    CmdError::usage(format!("{context}: {e}"))
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, CmdError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(&p.display().to_string(), e))?;
            FileConfig::parse(&text).map_err(|e| CmdError::usage(format!("config: {e}")))
        }
    }
}

fn read_complexes(path: &Path) -> Result<Vec<Complex>, CmdError> {
    let file = File::open(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    read_dataset(BufReader::new(file)).map_err(|e| io_err(&path.display().to_string(), e))
}

fn cmd_synth(
    out: &Path,
    count: usize,
    seed: u64,
    cdr_len: usize,
    antigen_len: usize,
    contact_frac: f64,
    noise: f64,
) -> Result<(), CmdError> {
    let params = SynthParams {
        cdr_len,
        antigen_len,
        planted_contact_fraction: contact_frac,
        noise,
    };
    let complexes: Vec<Complex> = generate_dataset(seed, count, &params)
        .map_err(|e| CmdError::usage(format!("generation: {e}")))?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let file = File::create(out).map_err(|e| io_err(&out.display().to_string(), e))?;
    write_dataset(BufWriter::new(file), &complexes)
        .map_err(|e| io_err(&out.display().to_string(), e))?;
    println!("wrote {} complexes to {}", complexes.len(), out.display());
    Ok(())
}

fn run_train<T: Scalar>(
    cfg: &FileConfig,
    train_set: &[Complex],
    val_set: &[Complex],
    out_dir: &Path,
    resume: &Option<PathBuf>,
) -> Result<(), CmdError> {
    let model_cfg = cfg.model_config();
    let weights = cfg.loss_weights();
    let train_cfg = cfg.train_config();
    let mut model: Model<T> = Model::new(model_cfg, train_cfg.seed);
    println!("model parameters: {}", model.param_count());

    let resume_state = match resume {
        Some(path) => {
            let (params, extras) = load_checkpoint::<T>(path, &model.params)
                .map_err(|e| CmdError::usage(format!("resume: {e}")))?;
            model.params = params;
            Some(restore_trainer_state(&extras))
        }
        None => None,
    };

    let train_items = prepare_dataset(&model, train_set)
        .map_err(|e| CmdError::usage(format!("prepare train set: {e}")))?;
    let val_items = prepare_dataset(&model, val_set)
        .map_err(|e| CmdError::usage(format!("prepare val set: {e}")))?;

    let result = fit(
        &mut model,
        &train_items,
        &val_items,
        &weights,
        &train_cfg,
        out_dir,
        resume_state,
    )
    .map_err(|e| CmdError::failure(format!("training: {e}")))?;

    let history_path = out_dir.join("history.csv");
    let file = File::create(&history_path).map_err(|e| io_err("history.csv", e))?;
    write_history(BufWriter::new(file), &result.history).map_err(|e| io_err("history.csv", e))?;
    println!(
        "best validation {:.6} at epoch {} ({} epochs run{})",
        result.best_val,
        result.best_epoch,
        result.history.len(),
        if result.stopped_early { ", early stop" } else { "" }
    );
    println!("best checkpoint: {}", result.best_checkpoint.display());
    Ok(())
}

fn cmd_train(
    train: &Path,
    val: &Path,
    config: &Option<PathBuf>,
    out_dir: &Path,
    max_epochs: Option<usize>,
    resume: &Option<PathBuf>,
) -> Result<(), CmdError> {
    let mut cfg = load_config(config)?;
    if let Some(me) = max_epochs {
        cfg.train.max_epochs = me;
    }
    cfg.model_config()
        .validate()
        .map_err(CmdError::usage)?;
    let train_set = read_complexes(train)?;
    let val_set = read_complexes(val)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(&out_dir.display().to_string(), e))?;
    // resolved configuration dump next to the artifacts
    std::fs::write(out_dir.join("config.resolved.toml"), cfg.to_toml())
        .map_err(|e| io_err("config.resolved.toml", e))?;
    match cfg.train.precision {
        Precision::F32 => run_train::<f32>(&cfg, &train_set, &val_set, out_dir, resume),
        Precision::F64 => run_train::<f64>(&cfg, &train_set, &val_set, out_dir, resume),
    }
}

fn run_predict<T: Scalar>(
    cfg: &FileConfig,
    model_path: &Path,
    complexes: &[Complex],
    threads: usize,
) -> Result<Vec<PredictionRecord>, CmdError> {
    let template: Model<T> = Model::new(cfg.model_config(), cfg.train.seed);
    let (params, _) = load_checkpoint::<T>(model_path, &template.params)
        .map_err(|e| CmdError::usage(format!("checkpoint: {e}")))?;
    let model = Model {
        config: template.config,
        params,
    };
    let predict_one = |c: &Complex| -> Result<PredictionRecord, CmdError> {
        let prep = model
            .prepare(c)
            .map_err(|e| CmdError::failure(format!("{}: {e}", c.id)))?;
        let out = model
            .run(&prep)
            .map_err(|e| CmdError::failure(format!("{}: {e}", c.id)))?;
        Ok(PredictionRecord::from_output(&c.id, &out))
    };
    if threads <= 1 {
        complexes.iter().map(predict_one).collect()
    } else {
        // deterministic fan-out: results collected in input order
        std::thread::scope(|scope| {
            let chunk = complexes.len().div_ceil(threads);
            let handles: Vec<_> = complexes
                .chunks(chunk.max(1))
                .map(|part| scope.spawn(move || part.iter().map(predict_one).collect::<Vec<_>>()))
                .collect();
            let mut out = Vec::with_capacity(complexes.len());
            for h in handles {
                for r in h.join().expect("prediction worker") {
                    out.push(r?);
                }
            }
            Ok(out)
        })
    }
}

fn cmd_predict(
    model_path: &Path,
    input: &Path,
    out: &Path,
    config: &Option<PathBuf>,
    threads: usize,
) -> Result<(), CmdError> {
    let cfg = load_config(config)?;
    let complexes = read_complexes(input)?;
    let records = match cfg.train.precision {
        Precision::F32 => run_predict::<f32>(&cfg, model_path, &complexes, threads)?,
        Precision::F64 => run_predict::<f64>(&cfg, model_path, &complexes, threads)?,
    };
    for r in &records {
        r.validate().map_err(CmdError::failure)?;
    }
    let file = File::create(out).map_err(|e| io_err(&out.display().to_string(), e))?;
    write_predictions(BufWriter::new(file), &records)
        .map_err(|e| io_err(&out.display().to_string(), e))?;
    println!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

fn cmd_eval(pred: &Path, reference: &Path, out: &Path, superpose: bool) -> Result<(), CmdError> {
    let file = File::open(pred).map_err(|e| io_err(&pred.display().to_string(), e))?;
    let records = read_predictions(BufReader::new(file)).map_err(CmdError::usage)?;
    let refs = read_complexes(reference)?;
    let report: EvalReport = evaluate_dataset(&records, &refs, superpose)
        .map_err(|e| CmdError::usage(format!("evaluation: {e}")))?;
    let file = File::create(out).map_err(|e| io_err(&out.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    report.write_csv(&mut w).map_err(|e| io_err(&out.display().to_string(), e))?;
    w.flush().map_err(|e| io_err(&out.display().to_string(), e))?;
    print!("{}", report.format_table());
    Ok(())
}

fn cmd_check(level: &str, config: &Option<PathBuf>) -> Result<(), CmdError> {
    let cfg = load_config(config)?;
    let level = match level {
        "full" => Level::Full,
        _ => Level::Fast,
    };
    let outcomes = run_checks(level, &cfg.model_config());
    let mut failed = 0usize;
    for o in &outcomes {
        match &o.result {
            Ok(detail) => println!("PASS {:<26} {detail}", o.name),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:<26} {reason}", o.name);
            }
        }
    }
    if failed > 0 {
        return Err(CmdError::failure(format!(
            "{failed}/{} checks failed",
            outcomes.len()
        )));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth {
            out,
            count,
            seed,
            cdr_len,
            antigen_len,
            contact_frac,
            noise,
        } => cmd_synth(out, *count, *seed, *cdr_len, *antigen_len, *contact_frac, *noise),
        Command::Train {
            train,
            val,
            config,
            out_dir,
            max_epochs,
            resume,
        } => cmd_train(train, val, config, out_dir, *max_epochs, resume),
        Command::Predict {
            model,
            input,
            out,
            config,
        } => cmd_predict(model, input, out, config, cli.threads),
        Command::Eval {
            pred,
            reference,
            out,
            superpose,
        } => cmd_eval(pred, reference, out, *superpose),
        Command::Check { level, config } => cmd_check(level, config),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
