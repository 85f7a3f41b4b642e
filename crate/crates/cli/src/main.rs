//! Command-line harness: synthetic data, validation, splitting,
//! missing-step identification, generative training, generation, target
//! prediction, imputation, retraining, and report emission.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use longfill::cells::NamedParams;
use longfill::data::{validate, SplitMode};
use longfill::harness::config::{derive_seed, ExperimentConfig};
use longfill::harness::csvio::{self, Lineage};
use longfill::harness::matrix::{
    gen_generate_cell, gen_train_cell, run_matrix, stage_input, Source,
};
use longfill::harness::phases::{
    load_generate_artifacts, load_input_artifacts, load_predict_artifacts, rebuild_report,
    run_phase, write_input_artifacts, Phase,
};
use longfill::models::checkpoint::{load_checkpoint, load_into, save_checkpoint, CheckpointMeta};
use longfill::models::{GenParams, LvaeParams, VaeParams};
use longfill::pipeline::align::{PaddingStrategy};
use longfill::pipeline::impute::{impute, ImputeMode};
use longfill::pipeline::split::split;

#[derive(Parser)]
#[command(name = "longfill")]
#[command(about = "Longitudinal sequence generation and imputation harness")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long = "config")]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Override the config's seed list with a single seed.
    #[arg(long = "seed")]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }

    fn first_seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and all input artifacts.
    Synth(Common),
    /// Report dataset well-formedness violations.
    Validate(Common),
    /// Draw one split and write it as JSON.
    Split {
        #[command(flatten)]
        common: Common,
        /// subject or row
        #[arg(long = "mode", default_value = "subject")]
        mode: String,
        /// Comma-separated ratios (3 or 4 parts summing to 1).
        #[arg(long = "ratios")]
        ratios: Option<String>,
    },
    /// Recompute missing-step skeletons from the school schedules.
    IdentifyMissing(Common),
    /// Train one generative model.
    TrainGen {
        #[command(flatten)]
        common: Common,
        /// vae_ns, vae or lvae
        #[arg(long = "source")]
        source: String,
    },
    /// Generate missing rows from a trained generative checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "source")]
        source: String,
    },
    /// Train one downstream regressor on the original data.
    TrainPred {
        #[command(flatten)]
        common: Common,
        /// lstm or gru
        #[arg(long = "model")]
        model: String,
        /// zero, ffill or bfill
        #[arg(long = "padding")]
        padding: String,
    },
    /// Run the baseline sweep and label all generated rows.
    PredictTargets(Common),
    /// Merge labeled generated rows into the split parts and write them.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long = "source")]
        source: String,
        /// Percent of generated subjects to merge.
        #[arg(long = "fraction", default_value_t = 100.0)]
        fraction: f64,
    },
    /// Retrain on imputed data and emit the report.
    Retrain(Common),
    /// Re-aggregate the report from existing evaluation artifacts.
    Report(Common),
    /// Execute all four phases.
    RunAll(Common),
}

fn parse_source(s: &str) -> Result<Source> {
    match s {
        "vae_ns" | "vae-ns" => Ok(Source::VaeNs),
        "vae" => Ok(Source::Vae),
        "lvae" => Ok(Source::Lvae),
        other => bail!("unknown source {other:?} (vae_ns|vae|lvae)"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(common) => {
            let cfg = common.load()?;
            let input = stage_input(&cfg)?;
            write_input_artifacts(&cfg, &input, &common.out_dir)?;
            println!(
                "wrote {} subjects, {} rows, {} skeleton subjects to {}",
                input.dataset.subjects.len(),
                longfill::data::total_rows(&input.dataset),
                input.skeletons.len(),
                common.out_dir.display()
            );
        }
        Command::Validate(common) => {
            let cfg = common.load()?;
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let violations = validate(&input.dataset);
            if violations.is_empty() {
                println!("dataset is well-formed ({} subjects)", input.dataset.subjects.len());
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                println!("{} violation(s)", violations.len());
            }
        }
        Command::Split {
            common,
            mode,
            ratios,
        } => {
            let cfg = common.load()?;
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let mode = match mode.as_str() {
                "subject" => SplitMode::SubjectBased,
                "row" => SplitMode::RowBased,
                other => bail!("unknown mode {other:?} (subject|row)"),
            };
            let ratio_vec: Vec<f64> = match &ratios {
                Some(text) => text
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().context("bad ratio"))
                    .collect::<Result<_>>()?,
                None => cfg.pred_ratios.clone(),
            };
            let assignment = split(&input.dataset, mode, &ratio_vec, cfg.data_seed)?;
            let name = format!(
                "split_{}_{}.json",
                if mode == SplitMode::SubjectBased { "subject" } else { "row" },
                ratio_vec
                    .iter()
                    .map(|r| csvio::format_f64(*r))
                    .collect::<Vec<_>>()
                    .join("_")
            );
            let path = common.out_dir.join(name);
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&assignment)? + "\n",
            )?;
            for (role, members) in &assignment.parts {
                println!("{role}: {}", members.len());
            }
            println!("wrote {}", path.display());
        }
        Command::IdentifyMissing(common) => {
            let cfg = common.load()?;
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let skeletons = longfill::pipeline::missing::identify_missing(
                &input.dataset,
                &input.schools,
                &input.schedules,
            )?;
            let lineage = Lineage {
                config_hash: &cfg.hash(),
                seed: cfg.data_seed,
            };
            csvio::write_skeleton_csv(&common.out_dir.join("skeleton.csv"), &skeletons, lineage)?;
            let rows: usize = skeletons.iter().map(|s| s.times.len()).sum();
            println!("{} subjects with {} missing rows", skeletons.len(), rows);
        }
        Command::TrainGen { common, source } => {
            let cfg = common.load()?;
            let source = parse_source(&source)?;
            let seed = common.first_seed(&cfg);
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let trained = gen_train_cell(&cfg, &input, source, seed)?;
            let hash = cfg.hash();
            let dir = common.out_dir.join("gen");
            std::fs::create_dir_all(&dir)?;
            let ckpt = dir.join(format!("ckpt_{}_seed{seed}.ckpt", source.tag()));
            save_checkpoint(
                &ckpt,
                &CheckpointMeta {
                    version: longfill::models::checkpoint::CHECKPOINT_VERSION,
                    kind: source.tag().to_string(),
                    config_hash: hash.clone(),
                    seed,
                },
                &trained.params.named(),
            )?;
            csvio::write_loss_csv(
                &dir.join(format!("loss_{}_seed{seed}.csv", source.tag())),
                &trained.history,
                Lineage {
                    config_hash: &hash,
                    seed,
                },
            )?;
            println!(
                "trained {} seed {seed}: best val loss {} ({} epochs); wrote {}",
                source.tag(),
                trained.best_val,
                trained.history.len(),
                ckpt.display()
            );
        }
        Command::Generate { common, source } => {
            let cfg = common.load()?;
            let source = parse_source(&source)?;
            let seed = common.first_seed(&cfg);
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let ckpt = common
                .out_dir
                .join("gen")
                .join(format!("ckpt_{}_seed{seed}.ckpt", source.tag()));
            let (_, entries) = load_checkpoint(&ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let d = input.dataset.n_features();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut params = match source {
                Source::Lvae => GenParams::Lvae(LvaeParams::new(
                    &mut rng,
                    d,
                    cfg.generative.hidden,
                    cfg.generative.latent,
                    input.kernel_spec_of(&cfg),
                )),
                _ => GenParams::Vae(VaeParams::new(
                    &mut rng,
                    d,
                    cfg.generative.hidden,
                    cfg.generative.latent,
                )),
            };
            load_into(&mut params, &entries).map_err(|e| anyhow::anyhow!(e))?;
            let generated = gen_generate_cell(&cfg, &input, source, seed, &params)?;
            let path = common
                .out_dir
                .join("gen")
                .join(format!("generated_{}_seed{seed}.csv", source.tag()));
            csvio::write_generated_csv(
                &path,
                &generated,
                &input.dataset.feature_schema,
                false,
                Lineage {
                    config_hash: &cfg.hash(),
                    seed,
                },
            )?;
            let rows: usize = generated.iter().map(|g| g.rows.len()).sum();
            println!("generated {rows} rows for {} subjects -> {}", generated.len(), path.display());
        }
        Command::TrainPred {
            common,
            model,
            padding,
        } => {
            let cfg = common.load()?;
            let seed = common.first_seed(&cfg);
            let model: longfill::predict::CellKind =
                model.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let padding: longfill::pipeline::align::PadFill =
                padding.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let d = input.dataset.n_features();
            let assignment = &input.splits.pred_subject;
            let train_raw = longfill::pipeline::split::sequences_for_part(
                &input.dataset,
                assignment,
                longfill::data::PartRole::Train,
            );
            let val_raw = longfill::pipeline::split::sequences_for_part(
                &input.dataset,
                assignment,
                longfill::data::PartRole::Val,
            );
            let test_raw = longfill::pipeline::split::sequences_for_part(
                &input.dataset,
                assignment,
                longfill::data::PartRole::Test,
            );
            let scaler = longfill::pipeline::scale::ScalerState::fit(&train_raw, d)?;
            let strategy = PaddingStrategy {
                fill: padding,
                fixed_length: input.fixed_length,
            };
            let prep = |raw: &[longfill::pipeline::split::RawSequence]| -> Result<Vec<_>> {
                raw.iter()
                    .map(|r| {
                        longfill::pipeline::align::align(&scaler.scale_sequence(r), &strategy)
                            .map_err(Into::into)
                    })
                    .collect()
            };
            let (train_seqs, val_seqs, test_seqs) =
                (prep(&train_raw)?, prep(&val_raw)?, prep(&test_raw)?);
            let tag = format!("baseline/{}/{}", model.tag(), padding.tag());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag, 1));
            let init = longfill::predict::RegressorParams::new(
                &mut rng,
                model,
                d,
                cfg.predictor.hidden,
            );
            let trained = longfill::predict::train_regressor(
                init,
                &train_seqs,
                &val_seqs,
                &cfg.predictor,
                derive_seed(seed, &tag, 2),
            )?;
            let rmse = longfill::predict::evaluate(&trained.params, &test_seqs)?;
            let dir = common.out_dir.join("pred");
            std::fs::create_dir_all(&dir)?;
            let ckpt = dir.join(format!(
                "ckpt_{}_{}_seed{seed}.ckpt",
                model.tag(),
                padding.tag()
            ));
            save_checkpoint(
                &ckpt,
                &CheckpointMeta {
                    version: longfill::models::checkpoint::CHECKPOINT_VERSION,
                    kind: format!("regressor/{}", model.tag()),
                    config_hash: cfg.hash(),
                    seed,
                },
                &trained.params.named(),
            )?;
            println!(
                "{} + {} seed {seed}: val rmse {} test rmse {rmse}; wrote {}",
                model.tag(),
                padding.tag(),
                trained.best_val_rmse,
                ckpt.display()
            );
        }
        Command::PredictTargets(common) => {
            let cfg = common.load()?;
            run_phase(&cfg, Phase::PredictTargets, &common.out_dir)?;
            println!("labeled generated rows written under {}", common.out_dir.join("pred").display());
        }
        Command::Impute {
            common,
            source,
            fraction,
        } => {
            let cfg = common.load()?;
            let source = parse_source(&source)?;
            let seed = common.first_seed(&cfg);
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let predict = load_predict_artifacts(&cfg, &input, &common.out_dir)?;
            let labeled = predict
                .labeled_for(source, seed)
                .context("no labeled rows for that source/seed; run predict-targets")?;
            let (assignment, mode) = if matches!(source, Source::VaeNs) {
                (&input.splits.pred_row, ImputeMode::ByRow)
            } else {
                (&input.splits.pred_subject, ImputeMode::ById)
            };
            let parts = impute(
                &input.dataset,
                assignment,
                labeled,
                mode,
                fraction,
                cfg.fraction_seed,
                input.seq_feature,
            )?;
            let hash = cfg.hash();
            for (role, part) in &parts {
                let path = common.out_dir.join(format!(
                    "imputed_{}_f{}_{}.csv",
                    source.tag(),
                    csvio::format_f64(fraction),
                    role
                ));
                csvio::write_dataset_csv(
                    &path,
                    part,
                    &input.schools,
                    Lineage {
                        config_hash: &hash,
                        seed,
                    },
                )?;
                println!(
                    "{role}: {} subjects, {} rows -> {}",
                    part.subjects.len(),
                    longfill::data::total_rows(part),
                    path.display()
                );
            }
        }
        Command::Retrain(common) => {
            let cfg = common.load()?;
            run_phase(&cfg, Phase::Retrain, &common.out_dir)?;
            let report =
                longfill::harness::report::read_report(&common.out_dir.join("report"))?;
            print_report_summary(&report);
        }
        Command::Report(common) => {
            let cfg = common.load()?;
            let report = rebuild_report(&cfg, &common.out_dir)?;
            print_report_summary(&report);
        }
        Command::RunAll(common) => {
            let cfg = common.load()?;
            let outcome = run_matrix(&cfg, &common.out_dir)?;
            print_report_summary(&outcome.report);
            // Sanity: the generate phase reloads cleanly.
            let input = load_input_artifacts(&cfg, &common.out_dir)?;
            let _ = load_generate_artifacts(&cfg, &input, &common.out_dir)?;
        }
    }
    Ok(())
}

fn print_report_summary(report: &longfill::harness::report::RunReport) {
    println!(
        "best cell: {} + {} padding",
        report.best_model, report.best_padding
    );
    for cell in &report.by_source {
        println!(
            "{:<9} {:<5} mean rmse {:.5} (min {:.5}, max {:.5}, n={})",
            cell.source, cell.model, cell.stat.mean, cell.stat.min, cell.stat.max, cell.stat.n
        );
    }
    for cell in &report.fraction_sweep {
        println!(
            "{:<9} f={:<5} mean rmse {:.5}",
            cell.source, cell.fraction, cell.stat.mean
        );
    }
}
