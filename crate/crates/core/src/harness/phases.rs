//! Phase execution over on-disk artifacts.
//!
//! Each phase loads the previous phase's artifacts, computes, and writes
//! versioned outputs embedding the config hash and seed. Re-running a phase
//! with identical inputs rewrites byte-identical files.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DescriptorSpec;
use crate::models::checkpoint::{load_checkpoint, load_into, save_checkpoint, CheckpointMeta};
use crate::models::{GenParams, LvaeParams, VaeParams};
use crate::cells::NamedParams;
use crate::pipeline::align::PadFill;
use crate::predict::{CellKind, EvalResult};

use super::config::{DataSource, ExperimentConfig};
use super::csvio::{self, Lineage};
use super::matrix::{
    stage_generate, stage_input, stage_predict, stage_retrain, BaselineCell, DistanceRow,
    GenCellOut, GenStage, InputStage, LabeledCell, PredictStage, RetrainStage, Source, Splits,
};
use super::report::emit_report;
use super::synth::{synth_descriptor_schema, synth_feature_schema};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Input,
    Generate,
    PredictTargets,
    Retrain,
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "input" => Ok(Phase::Input),
            "generate" => Ok(Phase::Generate),
            "predict-targets" => Ok(Phase::PredictTargets),
            "retrain" => Ok(Phase::Retrain),
            other => Err(format!(
                "unknown phase {other:?} (input|generate|predict-targets|retrain)"
            )),
        }
    }
}

/// Execute one phase against the artifact directory.
pub fn run_phase(
    config: &ExperimentConfig,
    phase: Phase,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    match phase {
        Phase::Input => {
            let input = stage_input(config)?;
            write_input_artifacts(config, &input, out_dir)
        }
        Phase::Generate => {
            let input = load_input_artifacts(config, out_dir)?;
            let gen = stage_generate(config, &input)?;
            write_generate_artifacts(config, &input, &gen, out_dir)
        }
        Phase::PredictTargets => {
            let input = load_input_artifacts(config, out_dir)?;
            let gen = load_generate_artifacts(config, &input, out_dir)?;
            let predict = stage_predict(config, &input, &gen)?;
            write_predict_artifacts(config, &input, &predict, out_dir)
        }
        Phase::Retrain => {
            let input = load_input_artifacts(config, out_dir)?;
            let gen = load_generate_artifacts(config, &input, out_dir)?;
            let predict = load_predict_artifacts(config, &input, out_dir)?;
            let retrain = stage_retrain(config, &input, &gen, &predict)?;
            write_retrain_artifacts(config, &retrain, out_dir)?;
            emit_report(
                &out_dir.join("report"),
                &retrain.report,
                Lineage {
                    config_hash: &config.hash(),
                    seed: config.data_seed,
                },
            )
        }
    }
}

fn schema_of(config: &ExperimentConfig) -> (Vec<String>, Vec<DescriptorSpec>, String) {
    match &config.data {
        DataSource::Synth(s) => (
            synth_feature_schema(s.features),
            synth_descriptor_schema(s.descriptors),
            "school_id".to_string(),
        ),
        DataSource::Csv(c) => (c.features.clone(), c.descriptors.clone(), "school_id".to_string()),
    }
}

fn lineage(config: &ExperimentConfig) -> (String, u64) {
    (config.hash(), config.data_seed)
}

pub fn write_input_artifacts(
    config: &ExperimentConfig,
    input: &InputStage,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let (hash, seed) = lineage(config);
    let lin = Lineage {
        config_hash: &hash,
        seed,
    };
    csvio::write_dataset_csv(&out_dir.join("dataset.csv"), &input.dataset, &input.schools, lin)?;
    csvio::write_schedule_csv(&out_dir.join("schedule.csv"), &input.schedules, lin)?;
    csvio::write_skeleton_csv(&out_dir.join("skeleton.csv"), &input.skeletons, lin)?;
    if !input.truth.is_empty() {
        csvio::write_truth_csv(
            &out_dir.join("missing_truth.csv"),
            &input.truth,
            &input.dataset.feature_schema,
            lin,
        )?;
    }
    let splits = SplitsFile {
        config_hash: hash.clone(),
        seed,
        splits: input.splits.clone(),
    };
    std::fs::write(
        out_dir.join("splits.json"),
        serde_json::to_string_pretty(&splits).expect("splits serialize") + "\n",
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    config_hash: String,
    seed: u64,
    splits: Splits,
}

pub fn load_input_artifacts(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<InputStage, HarnessError> {
    let (features, descriptors, school_column) = schema_of(config);
    let (dataset, schools) = csvio::read_dataset_csv(
        &out_dir.join("dataset.csv"),
        &features,
        &descriptors,
        &school_column,
    )?;
    let schedules = csvio::read_schedule_csv(&out_dir.join("schedule.csv"))?;
    let skeletons = csvio::read_skeleton_csv(&out_dir.join("skeleton.csv"), &dataset)?;
    let splits_path = out_dir.join("splits.json");
    let splits_text = std::fs::read_to_string(&splits_path)
        .map_err(|_| HarnessError::MissingArtifact(splits_path.display().to_string()))?;
    let splits_file: SplitsFile =
        serde_json::from_str(&splits_text).map_err(|e| HarnessError::Malformed {
            path: splits_path.display().to_string(),
            message: e.to_string(),
        })?;
    let expect_hash = config.hash();
    if splits_file.config_hash != expect_hash {
        return Err(HarnessError::ConfigInvalid(format!(
            "artifact config hash {} does not match current config {}",
            splits_file.config_hash, expect_hash
        )));
    }
    let fixed_length = config
        .fixed_length
        .unwrap_or_else(|| super::matrix::default_fixed_length_of(&dataset));
    let seq_feature = config
        .sequence_number_feature
        .as_ref()
        .and_then(|name| dataset.feature_schema.iter().position(|f| f == name));
    Ok(InputStage {
        dataset,
        schools,
        schedules,
        truth: Vec::new(),
        skeletons,
        splits: splits_file.splits,
        fixed_length,
        seq_feature,
    })
}

#[derive(Serialize, Deserialize)]
struct GenSummary {
    config_hash: String,
    cells: Vec<GenCellMeta>,
    distances: Vec<DistanceRow>,
}

#[derive(Serialize, Deserialize)]
struct GenCellMeta {
    source: Source,
    seed: u64,
    best_val: f64,
}

fn gen_paths(out_dir: &Path, source: Source, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let dir = out_dir.join("gen");
    (
        dir.join(format!("ckpt_{}_seed{seed}.ckpt", source.tag())),
        dir.join(format!("loss_{}_seed{seed}.csv", source.tag())),
        dir.join(format!("generated_{}_seed{seed}.csv", source.tag())),
    )
}

pub fn write_generate_artifacts(
    config: &ExperimentConfig,
    input: &InputStage,
    gen: &GenStage,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let (hash, _) = lineage(config);
    std::fs::create_dir_all(out_dir.join("gen"))?;
    for cell in &gen.cells {
        let (ckpt, loss, generated) = gen_paths(out_dir, cell.source, cell.seed);
        let lin = Lineage {
            config_hash: &hash,
            seed: cell.seed,
        };
        let meta = CheckpointMeta {
            version: crate::models::checkpoint::CHECKPOINT_VERSION,
            kind: cell.source.tag().to_string(),
            config_hash: hash.clone(),
            seed: cell.seed,
        };
        save_checkpoint(&ckpt, &meta, &cell.params.named())?;
        csvio::write_loss_csv(&loss, &cell.history, lin)?;
        csvio::write_generated_csv(
            &generated,
            &cell.generated,
            &input.dataset.feature_schema,
            false,
            lin,
        )?;
    }
    let summary = GenSummary {
        config_hash: hash,
        cells: gen
            .cells
            .iter()
            .map(|c| GenCellMeta {
                source: c.source,
                seed: c.seed,
                best_val: c.best_val,
            })
            .collect(),
        distances: gen.distances.clone(),
    };
    std::fs::write(
        out_dir.join("gen").join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialize") + "\n",
    )?;
    Ok(())
}

pub fn load_generate_artifacts(
    config: &ExperimentConfig,
    input: &InputStage,
    out_dir: &Path,
) -> Result<GenStage, HarnessError> {
    let path = out_dir.join("gen").join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    let summary: GenSummary = serde_json::from_str(&text).map_err(|e| HarnessError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let d = input.dataset.n_features();
    let spec = input.kernel_spec_of(config);
    let mut cells = Vec::with_capacity(summary.cells.len());
    for meta in &summary.cells {
        let (ckpt, _, generated_path) = gen_paths(out_dir, meta.source, meta.seed);
        let generated = csvio::read_generated_csv(&generated_path, d, false)?;
        let (_, entries) = load_checkpoint(&ckpt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = match meta.source {
            Source::Lvae => GenParams::Lvae(LvaeParams::new(
                &mut rng,
                d,
                config.generative.hidden,
                config.generative.latent,
                spec.clone(),
            )),
            _ => GenParams::Vae(VaeParams::new(
                &mut rng,
                d,
                config.generative.hidden,
                config.generative.latent,
            )),
        };
        load_into(&mut params, &entries).map_err(|message| HarnessError::Malformed {
            path: ckpt.display().to_string(),
            message,
        })?;
        cells.push(GenCellOut {
            source: meta.source,
            seed: meta.seed,
            best_val: meta.best_val,
            params,
            generated,
            history: Vec::new(),
        });
    }
    Ok(GenStage {
        cells,
        distances: summary.distances,
    })
}

#[derive(Serialize, Deserialize)]
struct BestCellFile {
    config_hash: String,
    model: CellKind,
    padding: PadFill,
}

pub fn write_predict_artifacts(
    config: &ExperimentConfig,
    input: &InputStage,
    predict: &PredictStage,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let (hash, seed) = lineage(config);
    let lin = Lineage {
        config_hash: &hash,
        seed,
    };
    std::fs::create_dir_all(out_dir.join("pred"))?;
    let mut rows: Vec<EvalResult> = predict.baseline_rows();
    rows.extend(predict.baseline.iter().map(|c| EvalResult {
        dataset: "original_val".into(),
        model: c.model.tag().into(),
        padding: c.padding.tag().into(),
        seed: c.seed,
        rmse: c.val_rmse,
    }));
    csvio::write_eval_csv(&out_dir.join("pred").join("eval_baseline.csv"), &rows, lin)?;
    let best = BestCellFile {
        config_hash: hash.clone(),
        model: predict.best_model,
        padding: predict.best_padding,
    };
    std::fs::write(
        out_dir.join("pred").join("best_cell.json"),
        serde_json::to_string_pretty(&best).expect("best cell serialize") + "\n",
    )?;
    for cell in &predict.labeled {
        let path = out_dir.join("pred").join(format!(
            "labeled_{}_seed{}.csv",
            cell.source.tag(),
            cell.seed
        ));
        csvio::write_generated_csv(
            &path,
            &cell.rows,
            &input.dataset.feature_schema,
            true,
            Lineage {
                config_hash: &hash,
                seed: cell.seed,
            },
        )?;
    }
    Ok(())
}

pub fn load_predict_artifacts(
    config: &ExperimentConfig,
    input: &InputStage,
    out_dir: &Path,
) -> Result<PredictStage, HarnessError> {
    let rows = csvio::read_eval_csv(&out_dir.join("pred").join("eval_baseline.csv"))?;
    let best_path = out_dir.join("pred").join("best_cell.json");
    let best_text = std::fs::read_to_string(&best_path)
        .map_err(|_| HarnessError::MissingArtifact(best_path.display().to_string()))?;
    let best: BestCellFile =
        serde_json::from_str(&best_text).map_err(|e| HarnessError::Malformed {
            path: best_path.display().to_string(),
            message: e.to_string(),
        })?;

    let mut baseline = Vec::new();
    for r in rows.iter().filter(|r| r.dataset == "original") {
        let val = rows
            .iter()
            .find(|v| {
                v.dataset == "original_val"
                    && v.model == r.model
                    && v.padding == r.padding
                    && v.seed == r.seed
            })
            .map(|v| v.rmse)
            .unwrap_or(f64::NAN);
        baseline.push(BaselineCell {
            model: r.model.parse().map_err(HarnessError::ConfigInvalid)?,
            padding: r.padding.parse().map_err(HarnessError::ConfigInvalid)?,
            seed: r.seed,
            val_rmse: val,
            test_rmse: r.rmse,
        });
    }

    let d = input.dataset.n_features();
    let mut labeled = Vec::new();
    for source in Source::all() {
        for &seed in &config.seeds {
            let path = out_dir
                .join("pred")
                .join(format!("labeled_{}_seed{}.csv", source.tag(), seed));
            let rows = csvio::read_generated_csv(&path, d, true)?;
            labeled.push(LabeledCell { source, seed, rows });
        }
    }
    Ok(PredictStage {
        baseline,
        best_model: best.model,
        best_padding: best.padding,
        labeled,
    })
}

/// Re-aggregate the report from on-disk evaluation artifacts without
/// re-running any training.
pub fn rebuild_report(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<super::report::RunReport, HarnessError> {
    let input = load_input_artifacts(config, out_dir)?;
    let gen = load_generate_artifacts(config, &input, out_dir)?;
    let predict = load_predict_artifacts(config, &input, out_dir)?;
    let rows = csvio::read_eval_csv(&out_dir.join("retrain").join("eval_retrain.csv"))?;
    let report = super::matrix::assemble_report(config, &input, &gen, &predict, &rows)?;
    emit_report(
        &out_dir.join("report"),
        &report,
        Lineage {
            config_hash: &config.hash(),
            seed: config.data_seed,
        },
    )?;
    Ok(report)
}

pub fn write_retrain_artifacts(
    config: &ExperimentConfig,
    retrain: &RetrainStage,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let (hash, seed) = lineage(config);
    std::fs::create_dir_all(out_dir.join("retrain"))?;
    csvio::write_eval_csv(
        &out_dir.join("retrain").join("eval_retrain.csv"),
        &retrain.rows,
        Lineage {
            config_hash: &hash,
            seed,
        },
    )?;
    Ok(())
}
