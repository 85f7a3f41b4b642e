//! Downstream per-step score-rate regressors (LSTM and GRU) with masked
//! MSE training, RMSE evaluation, and target prediction for generated rows.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{Dense, GruCellParams, LstmCellParams, NamedParams};
use crate::models::ModelError;
use crate::optim::{AdamConfig, AdamState};
use crate::pipeline::align::AlignedSequence;
use crate::tape::{Tape, Var};
use crate::tensor::{NumericError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn tag(&self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn all() -> [CellKind; 2] {
        [CellKind::Lstm, CellKind::Gru]
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(format!("unknown model {other:?} (lstm|gru)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressorCell {
    Lstm(LstmCellParams),
    Gru(GruCellParams),
}

/// Recurrent cell plus a sigmoid dense head mapping hidden → (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    pub cell: RegressorCell,
    pub head: Dense,
}

impl RegressorParams {
    pub fn new(rng: &mut impl Rng, kind: CellKind, features: usize, hidden: usize) -> Self {
        let cell = match kind {
            CellKind::Lstm => RegressorCell::Lstm(LstmCellParams::new(rng, features, hidden)),
            CellKind::Gru => RegressorCell::Gru(GruCellParams::new(rng, features, hidden)),
        };
        RegressorParams {
            cell,
            head: Dense::new(rng, hidden, 1),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self.cell {
            RegressorCell::Lstm(_) => CellKind::Lstm,
            RegressorCell::Gru(_) => CellKind::Gru,
        }
    }
}

impl NamedParams for RegressorParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = match &self.cell {
            RegressorCell::Lstm(p) => p
                .named()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
            RegressorCell::Gru(p) => p
                .named()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
        };
        out.extend(
            self.head
                .named()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        out
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = match &mut self.cell {
            RegressorCell::Lstm(p) => p
                .named_mut()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
            RegressorCell::Gru(p) => p
                .named_mut()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
        };
        out.extend(
            self.head
                .named_mut()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_min_delta() -> f64 {
    1e-5
}

/// One evaluation outcome row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub model: String,
    pub padding: String,
    pub seed: u64,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub params: RegressorParams,
    /// (epoch, train rmse, val rmse)
    pub history: Vec<(usize, f64, f64)>,
    pub best_val_rmse: f64,
}

enum CellVars {
    Lstm(crate::cells::LstmVars),
    Gru(crate::cells::GruVars),
}

struct RegVars {
    cell: CellVars,
    head: crate::cells::DenseVars,
    hidden: usize,
}

impl RegVars {
    fn register(params: &RegressorParams, tape: &mut Tape) -> RegVars {
        let (cell, hidden) = match &params.cell {
            RegressorCell::Lstm(p) => (CellVars::Lstm(p.register(tape)), p.hidden),
            RegressorCell::Gru(p) => (CellVars::Gru(p.register(tape)), p.hidden),
        };
        RegVars {
            cell,
            head: params.head.register(tape),
            hidden,
        }
    }

    fn leaves(&self) -> Vec<Var> {
        let mut v = match &self.cell {
            CellVars::Lstm(l) => l.leaves(),
            CellVars::Gru(g) => g.leaves(),
        };
        v.extend(self.head.leaves());
        v
    }

    /// Per-step sigmoid predictions `[B, 1]` over constant frames.
    fn predict(&self, tape: &mut Tape, frames: &[Var]) -> Result<Vec<Var>, NumericError> {
        let b = tape.value(frames[0]).shape()[0];
        let mut h = tape.constant(Tensor::zeros(&[b, self.hidden]));
        let mut c = tape.constant(Tensor::zeros(&[b, self.hidden]));
        let mut out = Vec::with_capacity(frames.len());
        for &x_t in frames {
            h = match &self.cell {
                CellVars::Lstm(l) => {
                    let (h2, c2) = l.step(tape, x_t, h, c)?;
                    c = c2;
                    h2
                }
                CellVars::Gru(g) => g.step(tape, x_t, h)?,
            };
            let pre = self.head.apply(tape, h)?;
            out.push(tape.sigmoid(pre));
        }
        Ok(out)
    }
}

struct TargetBatch {
    frames: Vec<Tensor>,
    targets: Vec<Tensor>,
    masks: Vec<Tensor>,
    n_real: usize,
}

fn target_batch(seqs: &[&AlignedSequence]) -> TargetBatch {
    let t_len = seqs[0].features.len();
    let d = seqs[0].features[0].len();
    let b = seqs.len();
    let mut frames = Vec::with_capacity(t_len);
    let mut targets = Vec::with_capacity(t_len);
    let mut masks = Vec::with_capacity(t_len);
    let mut n_real = 0usize;
    for t in 0..t_len {
        let mut frame = Vec::with_capacity(b * d);
        let mut target = Vec::with_capacity(b);
        let mut mask = Vec::with_capacity(b);
        for s in seqs {
            frame.extend_from_slice(&s.features[t]);
            target.push(s.targets[t]);
            let m = s.mask[t] && s.target_mask[t];
            n_real += usize::from(m);
            mask.push(if m { 1.0 } else { 0.0 });
        }
        frames.push(Tensor::from_vec(vec![b, d], frame).expect("frame"));
        targets.push(Tensor::from_vec(vec![b, 1], target).expect("target"));
        masks.push(Tensor::from_vec(vec![b, 1], mask).expect("mask"));
    }
    TargetBatch {
        frames,
        targets,
        masks,
        n_real,
    }
}

/// Masked MSE graph over real target positions; returns (loss, leaves).
fn loss_graph(
    tape: &mut Tape,
    params: &RegressorParams,
    batch: &TargetBatch,
) -> Result<(Var, Vec<Var>), NumericError> {
    let vars = RegVars::register(params, tape);
    let frames: Vec<Var> = batch
        .frames
        .iter()
        .map(|f| tape.constant(f.clone()))
        .collect();
    let preds = vars.predict(tape, &frames)?;
    let mut acc: Option<Var> = None;
    for (t, &p) in preds.iter().enumerate() {
        let y = tape.constant(batch.targets[t].clone());
        let m = tape.constant(batch.masks[t].clone());
        let diff = tape.sub(p, y)?;
        let sq = tape.mul(diff, diff)?;
        let masked = tape.mul(sq, m)?;
        let s = tape.reduce_sum(masked);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let loss = tape.scale(acc.expect("steps"), 1.0 / batch.n_real.max(1) as f64);
    Ok((loss, vars.leaves()))
}

/// Mean squared error over real target positions of a set of sequences.
fn masked_mse(params: &RegressorParams, seqs: &[&AlignedSequence]) -> Result<f64, ModelError> {
    if seqs.is_empty() {
        return Ok(0.0);
    }
    let batch = target_batch(seqs);
    let mut tape = Tape::new();
    let (loss, _) = loss_graph(&mut tape, params, &batch).map_err(ModelError::Numeric)?;
    Ok(tape.value(loss).scalar_value())
}

/// Train with Adam + early stopping on validation RMSE.
pub fn train_regressor(
    init: RegressorParams,
    train: &[AlignedSequence],
    val: &[AlignedSequence],
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<TrainedRegressor, ModelError> {
    assert!(!train.is_empty() && !val.is_empty(), "empty split");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init;
    let named = params.named();
    let mut adam = AdamState::new(&named);
    drop(named);
    let adam_cfg = AdamConfig::with_lr(cfg.lr);

    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&AlignedSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = target_batch(&refs);
            let mut tape = Tape::new();
            let (loss, leaves) =
                loss_graph(&mut tape, &params, &batch).map_err(ModelError::Numeric)?;
            let loss_v = tape.value(loss).scalar_value();
            if !loss_v.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(loss).map_err(ModelError::Numeric)?;
            let gs: Vec<Tensor> = leaves.iter().map(|v| grads.wrt(&tape, *v)).collect();
            let mut view = params.named_mut();
            adam.step(&adam_cfg, &mut view, &gs)
                .map_err(ModelError::Numeric)?;
        }

        let train_refs: Vec<&AlignedSequence> = train.iter().collect();
        let val_refs: Vec<&AlignedSequence> = val.iter().collect();
        let train_rmse = masked_mse(&params, &train_refs)?.sqrt();
        let val_rmse = masked_mse(&params, &val_refs)?.sqrt();
        history.push((epoch, train_rmse, val_rmse));

        if best - val_rmse > cfg.min_delta {
            best = val_rmse;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedRegressor {
        params: best_params,
        history,
        best_val_rmse: best,
    })
}

/// RMSE over the real target positions of the given (test) sequences.
pub fn evaluate(params: &RegressorParams, seqs: &[AlignedSequence]) -> Result<f64, ModelError> {
    let refs: Vec<&AlignedSequence> = seqs.iter().collect();
    Ok(masked_mse(params, &refs)?.sqrt())
}

/// Per-step target predictions for one sequence of scaled feature rows,
/// run at the sequence's natural length. Outputs lie in (0,1).
pub fn predict_sequence(
    params: &RegressorParams,
    features: &[Vec<f64>],
) -> Result<Vec<f64>, ModelError> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let d = features[0].len();
    let mut tape = Tape::new();
    let vars = RegVars::register(params, &mut tape);
    let frames: Vec<Var> = features
        .iter()
        .map(|row| tape.constant(Tensor::from_vec(vec![1, d], row.clone()).expect("row")))
        .collect();
    let preds = vars.predict(&mut tape, &frames).map_err(ModelError::Numeric)?;
    Ok(preds
        .iter()
        .map(|p| tape.value(*p).scalar_value())
        .collect())
}

/// Plain RMSE between two equal-length slices.
pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    let mse: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    mse.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        mask: Vec<bool>,
        tmask: Vec<bool>,
    ) -> AlignedSequence {
        let t = features.len();
        AlignedSequence {
            subject_id: "s".into(),
            descriptors: vec![],
            times: (0..t).map(|i| i as f64).collect(),
            features,
            targets,
            mask,
            target_mask: tmask,
        }
    }

    #[test]
    fn rmse_closed_forms() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let r = rmse(&[1.0, 2.0], &[1.0, 4.0]);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_brute_force_definition() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let brute = (pred
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / 100.0)
            .sqrt();
        assert!((rmse(&pred, &target) - brute).abs() < 1e-12);
    }

    #[test]
    fn rmse_invariant_under_row_permutation() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred: Vec<f64> = (0..50).map(|i| (i as f64) / 50.0).collect();
        let target: Vec<f64> = (0..50).map(|i| ((i * 7) % 50) as f64 / 50.0).collect();
        let base = rmse(&pred, &target);
        let mut idx: Vec<usize> = (0..50).collect();
        idx.shuffle(&mut rng);
        let p2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let t2: Vec<f64> = idx.iter().map(|&i| target[i]).collect();
        assert!((rmse(&p2, &t2) - base).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_predict_half() {
        let params = RegressorParams {
            cell: RegressorCell::Lstm(LstmCellParams::zeros(2, 3)),
            head: Dense::zeros(3, 1),
        };
        let preds = predict_sequence(&params, &[vec![0.3, 0.4], vec![0.9, -0.2]]).unwrap();
        assert_eq!(preds, vec![0.5, 0.5]);
    }

    #[test]
    fn predictions_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in CellKind::all() {
            let params = RegressorParams::new(&mut rng, kind, 2, 4);
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|i| vec![(i as f64) * 10.0, -(i as f64) * 5.0])
                .collect();
            let preds = predict_sequence(&params, &rows).unwrap();
            assert!(preds.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn padded_targets_do_not_affect_loss_or_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = RegressorParams::new(&mut rng, CellKind::Gru, 1, 3);
        let mk = |pad_target: f64| {
            vec![seq(
                vec![vec![0.2], vec![0.8], vec![0.5]],
                vec![0.3, 0.6, pad_target],
                vec![true, true, false],
                vec![true, true, false],
            )]
        };
        let a = mk(0.0);
        let b = mk(123.0);
        let ra: Vec<&AlignedSequence> = a.iter().collect();
        let rb: Vec<&AlignedSequence> = b.iter().collect();
        assert_eq!(
            masked_mse(&params, &ra).unwrap(),
            masked_mse(&params, &rb).unwrap()
        );
        // Gradients agree too.
        let grad_of = |seqs: &[AlignedSequence]| -> Vec<Tensor> {
            let refs: Vec<&AlignedSequence> = seqs.iter().collect();
            let batch = target_batch(&refs);
            let mut tape = Tape::new();
            let (loss, leaves) = loss_graph(&mut tape, &params, &batch).unwrap();
            let g = tape.backward(loss).unwrap();
            leaves.iter().map(|v| g.wrt(&tape, *v)).collect()
        };
        assert_eq!(grad_of(&a), grad_of(&b));
    }

    #[test]
    fn constant_target_data_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mk_seq = |i: usize| {
            let features: Vec<Vec<f64>> =
                (0..6).map(|t| vec![((t + i) as f64 * 0.37).sin()]).collect();
            seq(features, vec![0.7; 6], vec![true; 6], vec![true; 6])
        };
        let train: Vec<AlignedSequence> = (0..10).map(mk_seq).collect();
        let val: Vec<AlignedSequence> = (10..13).map(mk_seq).collect();
        let cfg = PredictorConfig {
            hidden: 4,
            lr: 0.05,
            max_epochs: 100,
            patience: 20,
            batch_size: 8,
            min_delta: 1e-6,
        };
        let init = RegressorParams::new(&mut rng, CellKind::Lstm, 1, cfg.hidden);
        let out = train_regressor(init, &train, &val, &cfg, 3).unwrap();
        assert!(out.best_val_rmse < 0.05, "rmse {}", out.best_val_rmse);
    }

    #[test]
    fn same_seed_identical_history() {
        let mk_seq = |i: usize| {
            let features: Vec<Vec<f64>> =
                (0..4).map(|t| vec![((t * i) as f64 * 0.21).cos()]).collect();
            seq(
                features,
                vec![0.2, 0.4, 0.6, 0.8],
                vec![true; 4],
                vec![true; 4],
            )
        };
        let train: Vec<AlignedSequence> = (0..6).map(mk_seq).collect();
        let val: Vec<AlignedSequence> = (6..8).map(mk_seq).collect();
        let cfg = PredictorConfig {
            hidden: 3,
            lr: 0.05,
            max_epochs: 5,
            patience: 5,
            batch_size: 4,
            min_delta: 1e-6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = RegressorParams::new(&mut rng, CellKind::Gru, 1, cfg.hidden);
        let a = train_regressor(init.clone(), &train, &val, &cfg, 9).unwrap();
        let b = train_regressor(init, &train, &val, &cfg, 9).unwrap();
        assert_eq!(a.history, b.history);
    }
}
