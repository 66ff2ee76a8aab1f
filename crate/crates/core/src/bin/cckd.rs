use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use cckd::analysis::{
    cosine_similarity_matrix, export_curves, export_heatmap_with_ids, intra_inter_stats,
    SimilarityStats,
};
use cckd::harness::{
    distill_student, evaluate, train_teacher, Accuracy, Dataset, Experiment, ExperimentConfig,
    LossMode, MetricsRecord,
};
use cckd::nn::{load_checkpoint, save_checkpoint, MlpModel};
use cckd::{Error, Result};

/// Correlation congruence knowledge distillation on desk-scale data.
///
/// Any config field can be overridden with `--<field> <value>`, using dots
/// for nested fields (`--weights.beta 0.01`, `--sampler.strategy sur`).
#[derive(Parser, Debug)]
#[command(name = "cckd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a teacher with cross-entropy and write its checkpoint.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Distill a student from a teacher (trained first if none is given).
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint; overrides `teacher_checkpoint` in the config.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Report top-1 (and top-5) accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write cosine-similarity statistics and a heatmap CSV for a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one teacher per seed and distill a student per loss mode.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "ce,kd,cckd")]
        modes: Vec<String>,
    },
}

const KNOWN_FLAGS: &[&str] = &[
    "config",
    "seed",
    "out",
    "teacher",
    "checkpoint",
    "split",
    "seeds",
    "modes",
    "help",
    "version",
];

type Overrides = Vec<(String, String)>;

/// Splits `--key value` / `--key=value` pairs that are not CLI flags out of
/// the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut kept = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            kept.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if name.is_empty() || KNOWN_FLAGS.contains(&name.as_str()) {
            kept.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Error::config(format!("override --{name} needs a value")))?,
        };
        overrides.push((name.replace('-', "_"), value));
    }
    Ok((kept, overrides))
}

fn load_config(common: &Common, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run_id: &'a str,
    architecture: String,
    top1: f64,
    top5: Option<f64>,
    final_test_cc: Option<f64>,
    similarity: &'a Option<SimilarityStats>,
}

fn summary<'a>(model: &MlpModel, metrics: &'a MetricsRecord, acc: Accuracy) -> RunSummary<'a> {
    RunSummary {
        run_id: &metrics.run_id,
        architecture: model.describe(),
        top1: acc.top1,
        top5: acc.top5,
        final_test_cc: metrics.last().and_then(|e| e.test_cc),
        similarity: &metrics.final_similarity,
    }
}

fn run_teacher(exp: &Experiment, out: &Path) -> Result<MlpModel> {
    create_dir(out)?;
    let outcome = train_teacher(exp)?;
    save_checkpoint(&outcome.model, out.join("teacher.json"))?;
    outcome
        .metrics
        .write_jsonl(out.join("teacher_metrics.jsonl"))?;
    let acc = evaluate(&outcome.model, &exp.test)?;
    write_json(
        &out.join("teacher_summary.json"),
        &summary(&outcome.model, &outcome.metrics, acc),
    )?;
    info!("teacher top-1 {:.4}", acc.top1);
    Ok(outcome.model)
}

fn obtain_teacher(exp: &Experiment, explicit: Option<&Path>, out: &Path) -> Result<MlpModel> {
    match explicit.or(exp.config.teacher_checkpoint.as_deref()) {
        Some(p) => load_checkpoint(p),
        None => run_teacher(exp, out),
    }
}

fn run_distill(exp: &Experiment, teacher: &MlpModel, out: &Path) -> Result<MetricsRecord> {
    create_dir(out)?;
    let outcome = distill_student(exp, teacher)?;
    save_checkpoint(&outcome.model, out.join("student.json"))?;
    outcome.metrics.write_jsonl(out.join("metrics.jsonl"))?;
    if let Some(a) = &outcome.superclasses {
        a.write_csv(out.join("superclasses.csv"))?;
    }
    let acc = evaluate(&outcome.model, &exp.test)?;
    write_json(
        &out.join("summary.json"),
        &summary(&outcome.model, &outcome.metrics, acc),
    )?;
    std::fs::write(out.join("config.json"), exp.config.to_json()? + "\n")
        .map_err(|e| Error::io(out.join("config.json"), e))?;
    info!("{} top-1 {:.4}", outcome.metrics.run_id, acc.top1);
    Ok(outcome.metrics)
}

/// First `per_class` examples of each of the lowest `classes` labels.
fn heatmap_selection(ds: &Dataset, classes: usize, per_class: usize) -> Vec<usize> {
    let mut taken = vec![0usize; classes];
    (0..ds.len())
        .filter(|&i| {
            let y = ds.labels[i];
            if y < classes && taken[y] < per_class {
                taken[y] += 1;
                true
            } else {
                false
            }
        })
        .collect()
}

#[derive(Serialize)]
struct AnalyzeReport {
    checkpoint: PathBuf,
    top1: f64,
    top5: Option<f64>,
    similarity: SimilarityStats,
    heatmap_examples: usize,
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::TrainTeacher { common } => {
            let exp = Experiment::new(load_config(&common, overrides)?)?;
            run_teacher(&exp, &common.out)?;
        }
        Command::Distill { common, teacher } => {
            let exp = Experiment::new(load_config(&common, overrides)?)?;
            let teacher = obtain_teacher(&exp, teacher.as_deref(), &common.out)?;
            run_distill(&exp, &teacher, &common.out)?;
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let exp = Experiment::new(load_config(&common, overrides)?)?;
            let model = load_checkpoint(&checkpoint)?;
            let ds = match split {
                SplitArg::Train => &exp.train,
                SplitArg::Test => &exp.test,
            };
            let acc = evaluate(&model, ds)?;
            println!(
                "{}",
                serde_json::json!({ "top1": acc.top1, "top5": acc.top5, "n": ds.len() })
            );
        }
        Command::Analyze { common, checkpoint } => {
            let exp = Experiment::new(load_config(&common, overrides)?)?;
            let model = load_checkpoint(&checkpoint)?;
            let acc = evaluate(&model, &exp.test)?;
            let emb = model.forward(&exp.test.features)?.embeddings().clone();
            let similarity = intra_inter_stats(&emb, &exp.test.labels)?;
            let a = &exp.config.analysis;
            let picked = heatmap_selection(&exp.test, a.heatmap_classes, a.heatmap_per_class);
            let labels: Vec<usize> = picked.iter().map(|&i| exp.test.labels[i]).collect();
            create_dir(&common.out)?;
            let s = cosine_similarity_matrix(&emb.select_rows(&picked));
            export_heatmap_with_ids(&s, &labels, &picked, common.out.join("heatmap.csv"))?;
            write_json(
                &common.out.join("stats.json"),
                &AnalyzeReport {
                    checkpoint,
                    top1: acc.top1,
                    top5: acc.top5,
                    similarity,
                    heatmap_examples: picked.len(),
                },
            )?;
        }
        Command::Sweep {
            common,
            seeds,
            modes,
        } => {
            let modes: Vec<LossMode> = modes
                .iter()
                .map(|m| {
                    serde_json::from_value(serde_json::Value::String(m.clone()))
                        .map_err(|_| Error::config(format!("unknown loss mode {m:?}")))
                })
                .collect::<Result<_>>()?;
            let base = load_config(&common, overrides)?;
            let results: Vec<Result<Vec<MetricsRecord>>> = std::thread::scope(|s| {
                let handles: Vec<_> = seeds
                    .iter()
                    .map(|&seed| {
                        let (base, modes, out) = (&base, &modes, &common.out);
                        s.spawn(move || -> Result<Vec<MetricsRecord>> {
                            let mut cfg = base.clone();
                            cfg.seed = seed;
                            let dir = out.join(format!("seed{seed}"));
                            let exp = Experiment::new(cfg.clone())?;
                            let teacher = obtain_teacher(&exp, None, &dir)?;
                            let mut records = Vec::new();
                            for &mode in modes {
                                cfg.loss_mode = mode;
                                let exp = Experiment::from_parts(
                                    cfg.clone(),
                                    exp.train.clone(),
                                    exp.test.clone(),
                                )?;
                                let name = serde_json::to_value(mode)?
                                    .as_str()
                                    .unwrap_or("run")
                                    .to_string();
                                records.push(run_distill(&exp, &teacher, &dir.join(name))?);
                            }
                            Ok(records)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(Error::input("sweep worker panicked")))
                    })
                    .collect()
            });
            let mut all = Vec::new();
            for r in results {
                all.extend(r?);
            }
            export_curves(&all, common.out.join("curves.csv"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
