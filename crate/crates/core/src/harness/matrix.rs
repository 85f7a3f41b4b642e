//! The four-stage experiment: input preparation, generative training and
//! generation, baseline prediction + target labeling, and imputed
//! retraining with report aggregation.
//!
//! Independent (source, model, padding, fraction, seed) cells run through
//! [`crate::exec::map_cells`]; every cell derives its own RNG seeds, so the
//! outcome is identical whether cells run in parallel or sequentially.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartRole, SplitAssignment, SplitMode};
use crate::exec::map_cells;
use crate::gp::KernelSpec;
use crate::models::{
    generate_missing, train_generative, GenParams, KernelInputLayout, LvaeParams, VaeParams,
};
use crate::pipeline::align::{align, AlignedSequence, PadFill, PaddingStrategy};
use crate::pipeline::impute::{impute, GeneratedRows, ImputeMode};
use crate::pipeline::missing::{identify_missing, MissingSkeleton};
use crate::pipeline::scale::ScalerState;
use crate::pipeline::split::{
    dataset_to_sequences, sequences_for_part, split, windowed_dataset_sequences,
    windowed_part_sequences, RawSequence,
};
use crate::predict::{
    evaluate, predict_sequence, train_regressor, CellKind, EvalResult, RegressorParams,
};
use crate::stats::wasserstein_1d;

use super::config::{derive_seed, DataSource, ExperimentConfig};
use super::csvio::{self, Lineage};
use super::report::{
    emit_report, CellStat, FeatureDistanceCell, FractionCell, GenLossCell, PaddingCell,
    RunReport, SourceCell,
};
use super::synth::{synth_generate, TruthRow};
use super::HarnessError;

/// Generative data sources compared by the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    VaeNs,
    Vae,
    Lvae,
}

impl Source {
    pub fn tag(&self) -> &'static str {
        match self {
            Source::VaeNs => "vae_ns",
            Source::Vae => "vae",
            Source::Lvae => "lvae",
        }
    }

    pub fn all() -> [Source; 3] {
        [Source::VaeNs, Source::Vae, Source::Lvae]
    }

    /// Row-based split and imputation for the non-subject variant.
    fn subject_based(&self) -> bool {
        !matches!(self, Source::VaeNs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub gen_subject: SplitAssignment,
    pub gen_row: SplitAssignment,
    pub pred_subject: SplitAssignment,
    pub pred_row: SplitAssignment,
}

/// Output of the input phase.
#[derive(Debug, Clone)]
pub struct InputStage {
    pub dataset: Dataset,
    pub schools: BTreeMap<String, String>,
    pub schedules: BTreeMap<String, Vec<f64>>,
    pub truth: Vec<TruthRow>,
    pub skeletons: Vec<MissingSkeleton>,
    pub splits: Splits,
    pub fixed_length: usize,
    pub seq_feature: Option<usize>,
}

impl InputStage {
    pub fn layout(&self, config: &ExperimentConfig) -> KernelInputLayout {
        KernelInputLayout {
            descriptor_kinds: self
                .dataset
                .descriptor_schema
                .iter()
                .map(|d| d.kind)
                .collect(),
            include_time: config.kernel.include_time,
        }
    }

    /// Kernel spec plus initial hyperparameters: named config components
    /// when given, otherwise the automatic spec at normalized amplitude.
    pub fn kernel_resolve(
        &self,
        config: &ExperimentConfig,
    ) -> Result<(KernelSpec, crate::gp::KernelParams), HarnessError> {
        let names: Vec<String> = self
            .dataset
            .descriptor_schema
            .iter()
            .map(|d| d.name.clone())
            .collect();
        match config.kernel.resolve(&names)? {
            Some((components, inits)) => Ok((
                KernelSpec {
                    components,
                    jitter: config.kernel.jitter,
                },
                crate::gp::KernelParams {
                    per_component: inits,
                },
            )),
            None => {
                let mut spec = KernelSpec::auto(&self.layout(config).kinds());
                spec.jitter = config.kernel.jitter;
                let params = crate::gp::KernelParams::normalized(&spec.components);
                Ok((spec, params))
            }
        }
    }

    pub fn kernel_spec_of(&self, config: &ExperimentConfig) -> KernelSpec {
        self.kernel_resolve(config)
            .expect("kernel config validated earlier")
            .0
    }
}

/// Corpus mean observed-sequence length rounded to the nearest ten.
pub fn default_fixed_length_of(dataset: &Dataset) -> usize {
    let n: usize = dataset.subjects.iter().map(|s| s.steps.len()).sum();
    let p = dataset.subjects.len().max(1);
    let avg = n as f64 / p as f64;
    let rounded = ((avg / 10.0).round() * 10.0) as usize;
    rounded.max(1)
}

pub fn stage_input(config: &ExperimentConfig) -> Result<InputStage, HarnessError> {
    config.validate()?;
    let (dataset, schools, schedules, truth) = match &config.data {
        DataSource::Synth(spec) => {
            let out = synth_generate(spec, config.data_seed);
            (out.dataset, out.schools, out.schedules, out.truth)
        }
        DataSource::Csv(src) => {
            let (dataset, schools) = csvio::read_dataset_csv(
                Path::new(&src.path),
                &src.features,
                &src.descriptors,
                &src.school_column,
            )?;
            // Schedule: sibling file <stem>_schedule.csv or schedule.csv next
            // to the dataset.
            let base = Path::new(&src.path);
            let sched_path = base.with_file_name("schedule.csv");
            let schedules = csvio::read_schedule_csv(&sched_path)?;
            (dataset, schools, schedules, Vec::new())
        }
    };
    let violations = crate::data::validate(&dataset);
    if !violations.is_empty() {
        return Err(HarnessError::ConfigInvalid(format!(
            "dataset has {} violations; first: {}",
            violations.len(),
            violations[0]
        )));
    }
    let skeletons = identify_missing(&dataset, &schools, &schedules)?;
    let splits = Splits {
        gen_subject: split(
            &dataset,
            SplitMode::SubjectBased,
            &config.gen_ratios,
            config.data_seed,
        )?,
        gen_row: split(
            &dataset,
            SplitMode::RowBased,
            &config.gen_ratios,
            config.data_seed,
        )?,
        pred_subject: split(
            &dataset,
            SplitMode::SubjectBased,
            &config.pred_ratios,
            config.data_seed,
        )?,
        pred_row: split(
            &dataset,
            SplitMode::RowBased,
            &config.pred_ratios,
            config.data_seed,
        )?,
    };
    let fixed_length = config
        .fixed_length
        .unwrap_or_else(|| default_fixed_length_of(&dataset));
    let seq_feature = config
        .sequence_number_feature
        .as_ref()
        .and_then(|name| dataset.feature_schema.iter().position(|f| f == name));
    Ok(InputStage {
        dataset,
        schools,
        schedules,
        truth,
        skeletons,
        splits,
        fixed_length,
        seq_feature,
    })
}

/// Scale + align one part of a split.
fn prepare_part(
    raw: &[RawSequence],
    scaler: &ScalerState,
    fill: PadFill,
    fixed_length: usize,
) -> Result<Vec<AlignedSequence>, HarnessError> {
    let strategy = PaddingStrategy { fill, fixed_length };
    raw.iter()
        .map(|r| {
            let scaled = scaler.scale_sequence(r);
            align(&scaled, &strategy).map_err(HarnessError::Pipeline)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GenCellOut {
    pub source: Source,
    pub seed: u64,
    pub best_val: f64,
    pub params: GenParams,
    pub generated: Vec<GeneratedRows>,
    pub history: Vec<crate::models::EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub source: Source,
    pub seed: u64,
    pub feature: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct GenStage {
    pub cells: Vec<GenCellOut>,
    pub distances: Vec<DistanceRow>,
}

/// The source's split regime: row-based for the non-subject variant.
fn gen_assignment<'a>(input: &'a InputStage, source: Source) -> &'a SplitAssignment {
    if source.subject_based() {
        &input.splits.gen_subject
    } else {
        &input.splits.gen_row
    }
}

/// Scaler fitted on the source's generative training part.
pub fn gen_scaler(input: &InputStage, source: Source) -> Result<ScalerState, HarnessError> {
    let train_raw = sequences_for_part(&input.dataset, gen_assignment(input, source), PartRole::Train);
    Ok(ScalerState::fit(&train_raw, input.dataset.n_features())?)
}

#[derive(Debug, Clone)]
pub struct GenTrained {
    pub params: GenParams,
    pub best_val: f64,
    pub history: Vec<crate::models::EpochStats>,
}

/// Train one generative model (one source, one seed).
pub fn gen_train_cell(
    config: &ExperimentConfig,
    input: &InputStage,
    source: Source,
    seed: u64,
) -> Result<GenTrained, HarnessError> {
    let layout = input.layout(config);
    let (spec, kernel_init) = input.kernel_resolve(config)?;
    let d = input.dataset.n_features();
    let assignment = gen_assignment(input, source);
    // Non-subject training folds the part's row stream into fixed-length
    // windows; subject-based training keeps whole per-subject sequences.
    let (train_raw, val_raw) = if source.subject_based() {
        (
            sequences_for_part(&input.dataset, assignment, PartRole::Train),
            sequences_for_part(&input.dataset, assignment, PartRole::Val),
        )
    } else {
        (
            windowed_part_sequences(&input.dataset, assignment, PartRole::Train, input.fixed_length),
            windowed_part_sequences(&input.dataset, assignment, PartRole::Val, input.fixed_length),
        )
    };
    let scaler = ScalerState::fit(&train_raw, d)?;
    let train_seqs = prepare_part(&train_raw, &scaler, PadFill::Zero, input.fixed_length)?;
    let val_seqs = prepare_part(&val_raw, &scaler, PadFill::Zero, input.fixed_length)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, source.tag(), 1));
    let init = match source {
        Source::Lvae => {
            let mut lvae = LvaeParams::new(
                &mut rng,
                d,
                config.generative.hidden,
                config.generative.latent,
                spec,
            );
            lvae.kernel = kernel_init;
            GenParams::Lvae(lvae)
        }
        _ => GenParams::Vae(VaeParams::new(
            &mut rng,
            d,
            config.generative.hidden,
            config.generative.latent,
        )),
    };
    let trained = train_generative(
        init,
        &train_seqs,
        &val_seqs,
        &config.generative,
        &layout,
        derive_seed(seed, source.tag(), 2),
    )?;
    Ok(GenTrained {
        params: trained.params,
        best_val: trained.best_val,
        history: trained.history,
    })
}

/// Generate missing rows from a trained model (one source, one seed).
pub fn gen_generate_cell(
    config: &ExperimentConfig,
    input: &InputStage,
    source: Source,
    seed: u64,
    params: &GenParams,
) -> Result<Vec<GeneratedRows>, HarnessError> {
    let layout = input.layout(config);
    let scaler = gen_scaler(input, source)?;
    let generated_seqs = generate_missing(
        params,
        &input.skeletons,
        &scaler,
        &layout,
        derive_seed(seed, source.tag(), 3),
    )?;
    Ok(generated_seqs
        .into_iter()
        .map(|g| GeneratedRows {
            subject_id: g.subject_id,
            rows: g
                .times
                .iter()
                .zip(g.features)
                .map(|(&t, f)| crate::pipeline::impute::GeneratedRow {
                    event_time: t,
                    features: f,
                    target: 0.0,
                })
                .collect(),
        })
        .collect())
}

/// Train the three generative models per seed and generate the missing
/// rows. Gram-relevant kernel dimensions come from the descriptor schema
/// plus event time when configured.
pub fn stage_generate(
    config: &ExperimentConfig,
    input: &InputStage,
) -> Result<GenStage, HarnessError> {
    let mut jobs: Vec<(Source, u64)> = Vec::new();
    for source in Source::all() {
        for &seed in &config.seeds {
            jobs.push((source, seed));
        }
    }

    let results: Vec<Result<GenCellOut, HarnessError>> = map_cells(jobs, |(source, seed)| {
        let trained = gen_train_cell(config, input, source, seed)?;
        let generated = gen_generate_cell(config, input, source, seed, &trained.params)?;
        Ok(GenCellOut {
            source,
            seed,
            best_val: trained.best_val,
            params: trained.params,
            generated,
            history: trained.history,
        })
    });
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        cells.push(r?);
    }

    // Per-feature Wasserstein distance between generated rows and the
    // held-out generation part of the same split regime.
    let mut distances = Vec::new();
    for cell in &cells {
        let assignment = gen_assignment(input, cell.source);
        let heldout = sequences_for_part(&input.dataset, assignment, PartRole::Generate);
        for (j, name) in input.dataset.feature_schema.iter().enumerate() {
            let real: Vec<f64> = heldout
                .iter()
                .flat_map(|s| s.features.iter().map(move |row| row[j]))
                .collect();
            let gen: Vec<f64> = cell
                .generated
                .iter()
                .flat_map(|g| g.rows.iter().map(move |r| r.features[j]))
                .collect();
            if real.is_empty() || gen.is_empty() {
                continue;
            }
            distances.push(DistanceRow {
                source: cell.source,
                seed: cell.seed,
                feature: name.clone(),
                distance: wasserstein_1d(&gen, &real),
            });
        }
    }
    Ok(GenStage { cells, distances })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCell {
    pub model: CellKind,
    pub padding: PadFill,
    pub seed: u64,
    pub val_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct LabeledCell {
    pub source: Source,
    pub seed: u64,
    pub rows: Vec<GeneratedRows>,
}

#[derive(Debug, Clone)]
pub struct PredictStage {
    pub baseline: Vec<BaselineCell>,
    pub best_model: CellKind,
    pub best_padding: PadFill,
    pub labeled: Vec<LabeledCell>,
}

impl PredictStage {
    pub fn baseline_rows(&self) -> Vec<EvalResult> {
        self.baseline
            .iter()
            .map(|c| EvalResult {
                dataset: "original".into(),
                model: c.model.tag().into(),
                padding: c.padding.tag().into(),
                seed: c.seed,
                rmse: c.test_rmse,
            })
            .collect()
    }

    pub fn labeled_for(&self, source: Source, seed: u64) -> Option<&[GeneratedRows]> {
        self.labeled
            .iter()
            .find(|l| l.source == source && l.seed == seed)
            .map(|l| l.rows.as_slice())
    }
}

/// Baseline sweep on the original data, best-cell selection by minimum mean
/// validation RMSE, then target prediction for all generated rows with the
/// per-seed best-cell model.
pub fn stage_predict(
    config: &ExperimentConfig,
    input: &InputStage,
    gen: &GenStage,
) -> Result<PredictStage, HarnessError> {
    let d = input.dataset.n_features();
    let assignment = &input.splits.pred_subject;
    let train_raw = sequences_for_part(&input.dataset, assignment, PartRole::Train);
    let val_raw = sequences_for_part(&input.dataset, assignment, PartRole::Val);
    let test_raw = sequences_for_part(&input.dataset, assignment, PartRole::Test);
    let scaler = ScalerState::fit(&train_raw, d)?;

    // Pre-align per padding once; cells share them read-only.
    let mut per_padding: BTreeMap<&'static str, (Vec<AlignedSequence>, Vec<AlignedSequence>, Vec<AlignedSequence>)> =
        BTreeMap::new();
    for &pad in &config.paddings {
        per_padding.insert(
            pad.tag(),
            (
                prepare_part(&train_raw, &scaler, pad, input.fixed_length)?,
                prepare_part(&val_raw, &scaler, pad, input.fixed_length)?,
                prepare_part(&test_raw, &scaler, pad, input.fixed_length)?,
            ),
        );
    }

    let mut jobs: Vec<(CellKind, PadFill, u64)> = Vec::new();
    for &model in &config.models {
        for &pad in &config.paddings {
            for &seed in &config.seeds {
                jobs.push((model, pad, seed));
            }
        }
    }
    let results: Vec<Result<(BaselineCell, RegressorParams), HarnessError>> =
        map_cells(jobs, |(model, pad, seed)| {
            let (train_seqs, val_seqs, test_seqs) = &per_padding[pad.tag()];
            let tag = format!("baseline/{}/{}", model.tag(), pad.tag());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag, 1));
            let init = RegressorParams::new(&mut rng, model, d, config.predictor.hidden);
            let trained = train_regressor(
                init,
                train_seqs,
                val_seqs,
                &config.predictor,
                derive_seed(seed, &tag, 2),
            )?;
            let test_rmse = evaluate(&trained.params, test_seqs)?;
            Ok((
                BaselineCell {
                    model,
                    padding: pad,
                    seed,
                    val_rmse: trained.best_val_rmse,
                    test_rmse,
                },
                trained.params,
            ))
        });
    let mut baseline = Vec::with_capacity(results.len());
    let mut cell_params = Vec::with_capacity(results.len());
    for r in results {
        let (cell, params) = r?;
        baseline.push(cell);
        cell_params.push(params);
    }

    // Best cell: minimum mean validation RMSE, first (model, padding) wins
    // ties in config order.
    let mut best: Option<(CellKind, PadFill, f64)> = None;
    for &model in &config.models {
        for &pad in &config.paddings {
            let vals: Vec<f64> = baseline
                .iter()
                .filter(|c| c.model == model && c.padding == pad)
                .map(|c| c.val_rmse)
                .collect();
            let mean = crate::stats::mean(&vals);
            if best.map_or(true, |(_, _, b)| mean < b) {
                best = Some((model, pad, mean));
            }
        }
    }
    let (best_model, best_padding, _) = best.expect("nonempty sweep");

    // Label every generated row with the per-seed best-cell model.
    let mut labeled = Vec::new();
    for cell in &gen.cells {
        let idx = baseline
            .iter()
            .position(|b| {
                b.model == best_model && b.padding == best_padding && b.seed == cell.seed
            })
            .expect("best cell exists for every seed");
        let regressor = &cell_params[idx];
        let mut rows = Vec::with_capacity(cell.generated.len());
        for g in &cell.generated {
            let scaled: Vec<Vec<f64>> =
                g.rows.iter().map(|r| scaler.scale_row(&r.features)).collect();
            let targets = predict_sequence(regressor, &scaled)?;
            rows.push(GeneratedRows {
                subject_id: g.subject_id.clone(),
                rows: g
                    .rows
                    .iter()
                    .zip(targets)
                    .map(|(r, t)| crate::pipeline::impute::GeneratedRow {
                        event_time: r.event_time,
                        features: r.features.clone(),
                        target: t,
                    })
                    .collect(),
            });
        }
        labeled.push(LabeledCell {
            source: cell.source,
            seed: cell.seed,
            rows,
        });
    }

    Ok(PredictStage {
        baseline,
        best_model,
        best_padding,
        labeled,
    })
}

#[derive(Debug, Clone)]
pub struct RetrainStage {
    pub rows: Vec<EvalResult>,
    pub report: RunReport,
}

/// Retraining cell: impute at a fraction, refit scaler, align with the best
/// padding, train and evaluate.
#[allow(clippy::too_many_arguments)]
fn retrain_cell(
    config: &ExperimentConfig,
    input: &InputStage,
    predict: &PredictStage,
    source: Source,
    model: CellKind,
    fraction: f64,
    seed: u64,
) -> Result<EvalResult, HarnessError> {
    let labeled = predict
        .labeled_for(source, seed)
        .expect("labeled rows for every source/seed");
    let (assignment, mode) = if source.subject_based() {
        (&input.splits.pred_subject, ImputeMode::ById)
    } else {
        (&input.splits.pred_row, ImputeMode::ByRow)
    };
    let parts = impute(
        &input.dataset,
        assignment,
        labeled,
        mode,
        fraction,
        config.fraction_seed,
        input.seq_feature,
    )?;
    let d = input.dataset.n_features();
    let seqs_of = |ds: &Dataset| {
        if source.subject_based() {
            dataset_to_sequences(ds)
        } else {
            windowed_dataset_sequences(ds, input.fixed_length)
        }
    };
    let train_raw = seqs_of(&parts[&PartRole::Train]);
    let val_raw = seqs_of(&parts[&PartRole::Val]);
    let test_raw = seqs_of(&parts[&PartRole::Test]);
    let scaler = ScalerState::fit(&train_raw, d)?;
    let train_seqs = prepare_part(&train_raw, &scaler, predict.best_padding, input.fixed_length)?;
    let val_seqs = prepare_part(&val_raw, &scaler, predict.best_padding, input.fixed_length)?;
    let test_seqs = prepare_part(&test_raw, &scaler, predict.best_padding, input.fixed_length)?;

    let tag = format!("retrain/{}/{}/f{}", source.tag(), model.tag(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag, 1));
    let init = RegressorParams::new(&mut rng, model, d, config.predictor.hidden);
    let trained = train_regressor(
        init,
        &train_seqs,
        &val_seqs,
        &config.predictor,
        derive_seed(seed, &tag, 2),
    )?;
    let rmse = evaluate(&trained.params, &test_seqs)?;
    Ok(EvalResult {
        dataset: format!("{}@f{}", source.tag(), csvio::format_f64(fraction)),
        model: model.tag().into(),
        padding: predict.best_padding.tag().into(),
        seed,
        rmse,
    })
}

/// Full retraining matrix plus report assembly.
pub fn stage_retrain(
    config: &ExperimentConfig,
    input: &InputStage,
    gen: &GenStage,
    predict: &PredictStage,
) -> Result<RetrainStage, HarnessError> {
    // Full-imputation cells for every source × model, then the fraction
    // sweep for the subject-based sources with the best model only. The
    // 100% sweep cell reuses the full-imputation result verbatim.
    let mut jobs: Vec<(Source, CellKind, f64, u64)> = Vec::new();
    for source in Source::all() {
        for &model in &config.models {
            for &seed in &config.seeds {
                jobs.push((source, model, 100.0, seed));
            }
        }
    }
    for source in [Source::Vae, Source::Lvae] {
        for &fraction in &config.fractions {
            if fraction == 100.0 {
                continue;
            }
            for &seed in &config.seeds {
                jobs.push((source, predict.best_model, fraction, seed));
            }
        }
    }

    let results: Vec<Result<EvalResult, HarnessError>> =
        map_cells(jobs, |(source, model, fraction, seed)| {
            retrain_cell(config, input, predict, source, model, fraction, seed)
        });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }

    let report = assemble_report(config, input, gen, predict, &rows)?;
    Ok(RetrainStage { rows, report })
}

pub(crate) fn assemble_report(
    config: &ExperimentConfig,
    input: &InputStage,
    gen: &GenStage,
    predict: &PredictStage,
    retrain_rows: &[EvalResult],
) -> Result<RunReport, HarnessError> {
    let n_seeds = config.seeds.len();
    let expect_full = |values: &[f64]| -> CellStat {
        let stat = CellStat::from_values(values);
        assert_eq!(stat.n, n_seeds, "cell must aggregate every seed");
        stat
    };

    // Baseline table.
    let mut baseline_cells = Vec::new();
    for &model in &config.models {
        for &pad in &config.paddings {
            let vals: Vec<f64> = predict
                .baseline
                .iter()
                .filter(|c| c.model == model && c.padding == pad)
                .map(|c| c.test_rmse)
                .collect();
            baseline_cells.push(PaddingCell {
                model: model.tag().into(),
                padding: pad.tag().into(),
                stat: expect_full(&vals),
            });
        }
    }

    // By-source table: the original row comes from the baseline sweep at
    // the best padding; generative sources from full-imputation cells.
    let mut by_source = Vec::new();
    for &model in &config.models {
        let vals: Vec<f64> = predict
            .baseline
            .iter()
            .filter(|c| c.model == model && c.padding == predict.best_padding)
            .map(|c| c.test_rmse)
            .collect();
        by_source.push(SourceCell {
            source: "original".into(),
            model: model.tag().into(),
            padding: predict.best_padding.tag().into(),
            stat: expect_full(&vals),
        });
    }
    for source in Source::all() {
        for &model in &config.models {
            let key = format!("{}@f100", source.tag());
            let vals: Vec<f64> = retrain_rows
                .iter()
                .filter(|r| r.dataset == key && r.model == model.tag())
                .map(|r| r.rmse)
                .collect();
            by_source.push(SourceCell {
                source: source.tag().into(),
                model: model.tag().into(),
                padding: predict.best_padding.tag().into(),
                stat: expect_full(&vals),
            });
        }
    }

    // Fraction sweep (best model only).
    let mut fraction_sweep = Vec::new();
    for source in [Source::Vae, Source::Lvae] {
        for &fraction in &config.fractions {
            let key = format!("{}@f{}", source.tag(), csvio::format_f64(fraction));
            let vals: Vec<f64> = retrain_rows
                .iter()
                .filter(|r| r.dataset == key && r.model == predict.best_model.tag())
                .map(|r| r.rmse)
                .collect();
            fraction_sweep.push(FractionCell {
                source: source.tag().into(),
                fraction,
                stat: expect_full(&vals),
            });
        }
    }

    // Feature distances.
    let mut feature_distance = Vec::new();
    for source in Source::all() {
        for name in &input.dataset.feature_schema {
            let vals: Vec<f64> = gen
                .distances
                .iter()
                .filter(|d| d.source == source && &d.feature == name)
                .map(|d| d.distance)
                .collect();
            if !vals.is_empty() {
                feature_distance.push(FeatureDistanceCell {
                    source: source.tag().into(),
                    feature: name.clone(),
                    stat: expect_full(&vals),
                });
            }
        }
    }

    // Final (best) validation losses of the generative models.
    let mut gen_val_loss = Vec::new();
    for source in Source::all() {
        let per_seed: Vec<(u64, f64)> = gen
            .cells
            .iter()
            .filter(|c| c.source == source)
            .map(|c| (c.seed, c.best_val))
            .collect();
        let vals: Vec<f64> = per_seed.iter().map(|(_, v)| *v).collect();
        gen_val_loss.push(GenLossCell {
            source: source.tag().into(),
            per_seed,
            stat: expect_full(&vals),
        });
    }

    Ok(RunReport {
        config_hash: config.hash(),
        best_model: predict.best_model.tag().into(),
        best_padding: predict.best_padding.tag().into(),
        baseline: baseline_cells,
        by_source,
        fraction_sweep,
        feature_distance,
        gen_val_loss,
    })
}

/// Everything `run-all` produces.
#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub report: RunReport,
    pub baseline_rows: Vec<EvalResult>,
    pub retrain_rows: Vec<EvalResult>,
}

/// Execute all four phases, writing artifacts under `out_dir`.
pub fn run_matrix(config: &ExperimentConfig, out_dir: &Path) -> Result<MatrixOutcome, HarnessError> {
    let input = stage_input(config)?;
    super::phases::write_input_artifacts(config, &input, out_dir)?;
    let gen = stage_generate(config, &input)?;
    super::phases::write_generate_artifacts(config, &input, &gen, out_dir)?;
    let predict = stage_predict(config, &input, &gen)?;
    super::phases::write_predict_artifacts(config, &input, &predict, out_dir)?;
    let retrain = stage_retrain(config, &input, &gen, &predict)?;
    super::phases::write_retrain_artifacts(config, &retrain, out_dir)?;
    emit_report(
        &out_dir.join("report"),
        &retrain.report,
        Lineage {
            config_hash: &config.hash(),
            seed: config.data_seed,
        },
    )?;
    Ok(MatrixOutcome {
        report: retrain.report,
        baseline_rows: predict.baseline_rows(),
        retrain_rows: retrain.rows,
    })
}
