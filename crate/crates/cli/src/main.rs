//! `costate` command-line front end.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use costate::autodiff::sha256_hex;
use costate::baselines::{vae_checkpoint, vae_embed, vae_train};
use costate::config::ExperimentConfig;
use costate::datagen::{generate_cohort, read_csv_cohort, write_csv_cohort};
use costate::encoder::{encode, ModelParams};
use costate::eval::plots::{render_plots, scatter_svg, Projection};
use costate::eval::{
    build_cohort, presence_correlation, project_embeddings, run_ablation, run_experiment, run_iteration,
    ExperimentOutcome,
};
use costate::inference::{binarize, write_predictions_csv, Prediction, ReferenceSet};
use costate::linalg::Matrix;
use costate::preprocess::{prepare_cohort, read_archive, split_cohort, write_archive, PatientRecord};
use costate::trainer::{checkpoint, restore, train};
use costate::{Error, Result};

#[derive(Parser)]
#[command(name = "costate", version, about = "Collaborative LSTM embeddings for ICU time series")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.n_epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for independent experiment iterations.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as one CSV per patient.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Generator seed (overrides `generator.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of patients (overrides `generator.n_patients`).
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Preprocess a CSV cohort into a record archive plus a train/test split.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split seed (defaults to `master_seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the encoder on the training side of an archive.
    Train {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score test patients against annotated references.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        /// Predictions CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Reference patient ids (default: training side of the split).
        #[arg(long, value_delimiter = ',')]
        refs: Vec<String>,
        /// Test patient ids (default: test side of the split).
        #[arg(long, value_delimiter = ',')]
        test: Vec<String>,
    },
    /// Repeated split / train / infer / score experiment with report and plots.
    Experiment {
        #[command(flatten)]
        io: ExperimentIo,
    },
    /// Run the experiment with and without cross-channel attention.
    Ablate {
        #[command(flatten)]
        io: ExperimentIo,
    },
    /// Train the VAE baseline and project its embeddings beside the encoder's.
    Vae {
        #[command(flatten)]
        io: ExperimentIo,
    },
}

#[derive(Args)]
struct ExperimentIo {
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use a prepared archive instead of generating the cohort.
    #[arg(long)]
    archive: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(errs) => {
                    eprintln!("error: invalid configuration");
                    for m in errs {
                        eprintln!("  {m}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    cfg.apply_env()?;
    let jobs = cli.common.jobs;
    match cli.command {
        Command::Gen { out, seed, n_patients } => cmd_gen(cfg, &out, seed, n_patients),
        Command::Prep { input, out, seed } => cmd_prep(&cfg, &input, &out, seed),
        Command::Train { archive, out } => cmd_train(&cfg, &archive, &out),
        Command::Infer {
            checkpoint,
            archive,
            out,
            refs,
            test,
        } => cmd_infer(&cfg, &checkpoint, &archive, &out, refs, test),
        Command::Experiment { io } => cmd_experiment(&cfg, &io, jobs),
        Command::Ablate { io } => cmd_ablate(&cfg, &io, jobs),
        Command::Vae { io } => cmd_vae(&cfg, &io),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_gen(mut cfg: ExperimentConfig, out: &Path, seed: Option<u64>, n_patients: Option<usize>) -> Result<()> {
    if let Some(s) = seed {
        cfg.generator.seed = s;
    }
    if let Some(n) = n_patients {
        cfg.generator.n_patients = n;
    }
    let cohort = generate_cohort(&cfg.generator)?;
    write_csv_cohort(&cohort, out)?;
    log::info!("wrote {} recordings to {}", cohort.len(), out.display());
    Ok(())
}

fn cmd_prep(cfg: &ExperimentConfig, input: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let raw = read_csv_cohort(input)?;
    let records = prepare_cohort(&raw, &cfg.preprocess)?;
    let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    let split = split_cohort(&ids, seed.unwrap_or(cfg.master_seed), cfg.eval.train_fraction)?;
    write_archive(out, &records, &split)?;
    log::info!(
        "prepared {} of {} recordings ({} train / {} test) into {}",
        records.len(),
        raw.len(),
        split.train_ids.len(),
        split.test_ids.len(),
        out.display()
    );
    Ok(())
}

fn select(records: &[PatientRecord], ids: &[String]) -> Result<Vec<PatientRecord>> {
    ids.iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.patient_id == id)
                .cloned()
                .ok_or_else(|| Error::Data(format!("unknown patient {id}")))
        })
        .collect()
}

fn cmd_train(cfg: &ExperimentConfig, archive: &Path, out: &Path) -> Result<()> {
    let (records, split) = read_archive(archive)?;
    let train_set = select(&records, &split.train_ids)?;
    let (params, trace) = train(&train_set, &cfg.encoder, &cfg.train)?;
    fs::create_dir_all(out)?;
    let ck_path = out.join("checkpoint.json");
    checkpoint(&params, &ck_path)?;
    trace.write_jsonl(&out.join("train_log.jsonl"))?;
    let hash = sha256_hex(&fs::read(&ck_path)?);
    println!("{hash}  {}", ck_path.display());
    log::info!("final training loss {:?}", trace.final_loss());
    Ok(())
}

fn cmd_infer(
    cfg: &ExperimentConfig,
    ck: &Path,
    archive: &Path,
    out: &Path,
    refs: Vec<String>,
    test: Vec<String>,
) -> Result<()> {
    let params = restore(ck)?;
    let (records, split) = read_archive(archive)?;
    let mut ref_ids = if refs.is_empty() { split.train_ids } else { refs };
    if let Some(k) = cfg.inference.max_references {
        ref_ids.truncate(k);
    }
    let test_ids = if test.is_empty() { split.test_ids } else { test };
    let overlap: HashSet<&String> = ref_ids.iter().collect();
    if let Some(id) = test_ids.iter().find(|id| overlap.contains(id)) {
        log::warn!("patient {id} is both a reference and a test patient");
    }
    let reference_set = ReferenceSet::encode(&select(&records, &ref_ids)?, &params)?;
    let predictions = select(&records, &test_ids)?
        .iter()
        .map(|rec| {
            let z = encode(&rec.patient_id, rec.x(), &params)?;
            let scores = reference_set.score(&z.z)?;
            let predicted = binarize(&scores, cfg.inference.threshold);
            let agree = predicted.iter().zip(rec.y()).filter(|(a, b)| a == b).count();
            log::info!("{}: {agree}/{} samples agree at threshold", rec.patient_id, rec.len());
            Ok(Prediction {
                patient_id: rec.patient_id.clone(),
                scores,
                labels: rec.y().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_predictions_csv(out, &predictions)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn load_cohort(cfg: &ExperimentConfig, archive: Option<&Path>) -> Result<Vec<PatientRecord>> {
    match archive {
        Some(dir) => Ok(read_archive(dir)?.0),
        None => build_cohort(cfg),
    }
}

fn out_dir(cfg: &ExperimentConfig, io: &ExperimentIo) -> PathBuf {
    io.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

/// Test-set embeddings of a model, paired with their labels.
fn test_embeddings(
    cohort: &[PatientRecord],
    test_ids: &[String],
    embed: impl Fn(&PatientRecord) -> Result<Matrix>,
) -> Result<Vec<(Matrix, Vec<i8>)>> {
    select(cohort, test_ids)?
        .iter()
        .map(|r| Ok((embed(r)?, r.y().to_vec())))
        .collect()
}

fn encoder_projection(
    cfg: &ExperimentConfig,
    cohort: &[PatientRecord],
    test_ids: &[String],
    params: &ModelParams,
) -> Result<(Matrix, Vec<i8>)> {
    let emb = test_embeddings(cohort, test_ids, |r| Ok(encode(&r.patient_id, r.x(), params)?.z))?;
    project(cfg, &emb)
}

fn project(
    cfg: &ExperimentConfig,
    emb: &[(Matrix, Vec<i8>)],
) -> Result<(Matrix, Vec<i8>)> {
    let refs: Vec<_> = emb.iter().map(|(z, y)| (z, y.as_slice())).collect();
    let (res, labels) = project_embeddings(&refs, &cfg.tsne, cfg.master_seed)?;
    log::info!("t-SNE KL {:.4} -> {:.4}", res.kl_initial, res.kl_final);
    Ok((res.y, labels))
}

/// Report, iteration table, correlations, timing, config echo and plots.
fn write_outcome(cfg: &ExperimentConfig, cohort: &[PatientRecord], outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    write_text(&dir.join("report.json"), &(outcome.report.to_json()? + "\n"))?;
    write_text(&dir.join("iterations.csv"), &outcome.table.to_csv())?;
    write_text(&dir.join("config.json"), &(cfg.to_json()? + "\n"))?;
    let correlations = presence_correlation(&outcome.table);
    write_text(&dir.join("correlations.json"), &(serde_json::to_string_pretty(&correlations)? + "\n"))?;
    let timing = json!({
        "train_seconds": outcome.train_seconds,
        "total_train_seconds": outcome.train_seconds.iter().sum::<f64>(),
    });
    write_text(&dir.join("timing.json"), &(serde_json::to_string_pretty(&timing)? + "\n"))?;

    let first = &outcome.first;
    let (points, labels) = encoder_projection(cfg, cohort, &first.split.test_ids, &first.params)?;
    let projections = [Projection {
        name: "lstm",
        points: &points,
        labels: &labels,
    }];
    for p in render_plots(&correlations, &projections, &dir.join("plots"))? {
        log::info!("wrote {}", p.display());
    }
    let agg = &outcome.report.aggregate;
    println!(
        "AUC {:.3} ± {:.3}  AP {:.3} ± {:.3}  ({} iterations, {} skipped)",
        agg.auc.mean, agg.auc.std, agg.ap.mean, agg.ap.std, agg.iterations_used, agg.iterations_skipped
    );
    Ok(())
}

fn cmd_experiment(cfg: &ExperimentConfig, io: &ExperimentIo, jobs: usize) -> Result<()> {
    let cohort = load_cohort(cfg, io.archive.as_deref())?;
    let start = Instant::now();
    let outcome = run_experiment(&cohort, cfg, jobs)?;
    log::info!("experiment finished in {:.1}s", start.elapsed().as_secs_f64());
    write_outcome(cfg, &cohort, &outcome, &out_dir(cfg, io))
}

fn cmd_ablate(cfg: &ExperimentConfig, io: &ExperimentIo, jobs: usize) -> Result<()> {
    let cohort = load_cohort(cfg, io.archive.as_deref())?;
    let dir = out_dir(cfg, io);
    let (with_ca, without_ca, table) = run_ablation(&cohort, cfg, jobs)?;
    for (name, outcome) in [("with_ca", &with_ca), ("without_ca", &without_ca)] {
        let arm_cfg: ExperimentConfig = serde_json::from_value(outcome.report.config.clone())?;
        write_outcome(&arm_cfg, &cohort, outcome, &dir.join(name))?;
    }
    write_text(&dir.join("ablation.md"), &table.to_markdown())?;
    write_text(&dir.join("ablation.csv"), &table.to_csv())?;
    write_text(&dir.join("ablation.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    print!("{}", table.to_markdown());
    println!("config differs only in: {}", table.config_diff.join(", "));
    Ok(())
}

fn cmd_vae(cfg: &ExperimentConfig, io: &ExperimentIo) -> Result<()> {
    let cohort = load_cohort(cfg, io.archive.as_deref())?;
    let dir = out_dir(cfg, io);
    let first = run_iteration(&cohort, cfg, 0)?;
    let train_set = select(&cohort, &first.split.train_ids)?;
    let (vae, losses) = vae_train(&train_set, &cfg.vae)?;
    fs::create_dir_all(&dir)?;
    vae_checkpoint(&vae, &dir.join("vae_checkpoint.json"))?;
    let log_lines: String = losses
        .iter()
        .enumerate()
        .map(|(k, l)| json!({"epoch": k, "mean_loss": l}).to_string() + "\n")
        .collect();
    write_text(&dir.join("vae_log.jsonl"), &log_lines)?;

    let test_ids = &first.split.test_ids;
    let (lstm_pts, lstm_labels) = encoder_projection(cfg, &cohort, test_ids, &first.params)?;
    let vae_emb = test_embeddings(&cohort, test_ids, |r| Ok(vae_embed(&r.patient_id, r.x(), &vae)?.z))?;
    let (vae_pts, vae_labels) = project(cfg, &vae_emb)?;
    for (name, pts, labels) in [("lstm", &lstm_pts, &lstm_labels), ("vae", &vae_pts, &vae_labels)] {
        write_text(
            &dir.join("plots").join(format!("tsne_{name}.svg")),
            &scatter_svg(pts, labels, &format!("t-SNE: {name}"))?,
        )?;
    }
    Ok(())
}
