//! Synthetic longitudinal corpus generator.
//!
//! Subjects draw time-invariant descriptors; a mean-reverting latent
//! trajectory per subject depends on those descriptors with configurable
//! coupling; features are noisy affine reads of the latent state and the
//! target is a squashed latent projection. Missingness drops scheduled
//! steps either completely at random or with probability increasing as the
//! target drops (MNAR). The dropped rows are kept as ground truth so
//! recovery checks can close the loop exactly.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DescriptorKind, DescriptorSpec, SubjectSeries, TimeStep};
use crate::tensor::sigmoid;

use super::config::{MissingMode, SynthSpec};

/// One ground-truth missing row, with the features and target the subject
/// would have produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub subject_id: String,
    pub event_time: f64,
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// subject → school.
    pub schools: BTreeMap<String, String>,
    /// school → quiz times.
    pub schedules: BTreeMap<String, Vec<f64>>,
    pub truth: Vec<TruthRow>,
}

fn descriptor_kind(q: usize) -> DescriptorKind {
    match q % 4 {
        0 | 1 => DescriptorKind::Continuous,
        2 => DescriptorKind::Categorical,
        _ => DescriptorKind::Binary,
    }
}

fn descriptor_name(q: usize) -> String {
    match descriptor_kind(q) {
        DescriptorKind::Continuous => format!("x{q}"),
        DescriptorKind::Categorical => format!("cat{q}"),
        DescriptorKind::Binary => format!("bin{q}"),
    }
}

/// Schema the generator produces for a given feature count.
pub fn synth_feature_schema(d: usize) -> Vec<String> {
    std::iter::once("seq_number".to_string())
        .chain((1..d).map(|j| format!("f{j}")))
        .collect()
}

/// Schema the generator produces for a given descriptor count.
pub fn synth_descriptor_schema(q: usize) -> Vec<DescriptorSpec> {
    (0..q)
        .map(|qi| DescriptorSpec {
            name: descriptor_name(qi),
            kind: descriptor_kind(qi),
        })
        .collect()
}

/// Descriptor effect feeding the latent coupling: continuous as-is,
/// categorical centered on its 3 levels, binary as ±1.
fn effect(kind: DescriptorKind, v: f64) -> f64 {
    match kind {
        DescriptorKind::Continuous => v,
        DescriptorKind::Categorical => v - 1.0,
        DescriptorKind::Binary => 2.0 * v - 1.0,
    }
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_lat = spec.latent_dim.max(1);
    let d = spec.features;
    let q = spec.descriptors;

    // Dataset-level maps, drawn once.
    let coupling_w: Vec<Vec<f64>> = (0..k_lat)
        .map(|_| (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let read_a: Vec<Vec<f64>> = (0..d.saturating_sub(1))
        .map(|_| (0..k_lat).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let read_c: Vec<f64> = (0..d.saturating_sub(1)).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let target_u: Vec<f64> = (0..k_lat).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let schedules: BTreeMap<String, Vec<f64>> = (0..spec.schools)
        .map(|s| {
            let times: Vec<f64> = (0..spec.schedule_len)
                .map(|k| k as f64 + s as f64 * 0.25)
                .collect();
            (format!("school{s}"), times)
        })
        .collect();

    let mut subjects = Vec::with_capacity(spec.subjects);
    let mut schools = BTreeMap::new();
    let mut truth = Vec::new();

    for p in 0..spec.subjects {
        let subject_id = format!("s{p:04}");
        let school = format!("school{}", p % spec.schools);
        let schedule = schedules[&school].clone();

        let descriptors: Vec<f64> = (0..q)
            .map(|qi| match descriptor_kind(qi) {
                DescriptorKind::Continuous => rng.sample::<f64, _>(StandardNormal),
                DescriptorKind::Categorical => f64::from(rng.gen_range(0..3u32)),
                DescriptorKind::Binary => f64::from(rng.gen_range(0..2u32)),
            })
            .collect();

        // Descriptor-coupled base point for the latent trajectory.
        let base: Vec<f64> = (0..k_lat)
            .map(|k| {
                let mut b = 0.0;
                for (qi, &v) in descriptors.iter().enumerate() {
                    b += coupling_w[k][qi] * effect(descriptor_kind(qi), v);
                }
                spec.coupling * b
            })
            .collect();

        // Mean-reverting latent walk and full (pre-missingness) rows. The
        // target reads an exponentially-weighted running state, so
        // predicting it well requires integrating the sequence history.
        let mut z: Vec<f64> = base
            .iter()
            .map(|b| b + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gamma = spec.target_memory.clamp(0.0, 0.99);
        let mut state = z.clone();
        let mut rows: Vec<(f64, Vec<f64>, f64)> = Vec::with_capacity(schedule.len());
        for (step, &t) in schedule.iter().enumerate() {
            if step > 0 {
                for k in 0..k_lat {
                    let w: f64 = rng.sample(StandardNormal);
                    z[k] = base[k] + spec.ar_coeff * (z[k] - base[k]) + 0.3 * w;
                    state[k] = gamma * state[k] + (1.0 - gamma) * z[k];
                }
            }
            let mut features = Vec::with_capacity(d);
            features.push(step as f64); // sequence number, recomputed on merge
            for j in 0..d - 1 {
                let mut v = read_c[j];
                for k in 0..k_lat {
                    v += read_a[j][k] * z[k];
                }
                let noise: f64 = rng.sample(StandardNormal);
                features.push(v + spec.feature_noise * noise);
            }
            let proj: f64 = (0..k_lat).map(|k| target_u[k] * state[k]).sum();
            let tnoise: f64 = rng.sample(StandardNormal);
            let target = (sigmoid(1.5 * proj) + spec.target_noise * tnoise).clamp(0.0, 1.0);
            rows.push((t, features, target));
        }

        // Missingness over the schedule.
        let mut dropped: Vec<bool> = rows
            .iter()
            .map(|(_, _, target)| {
                let p_drop = match spec.missing.mode {
                    MissingMode::Mcar => spec.missing.rate,
                    MissingMode::Mnar => (2.0 * spec.missing.rate * (1.0 - target)).min(0.95),
                };
                rng.gen_range(0.0..1.0) < p_drop
            })
            .collect();
        // Keep at least two observed steps per subject.
        let mut observed_count = dropped.iter().filter(|d| !**d).count();
        let mut idx = 0usize;
        while observed_count < 2.min(rows.len()) {
            if dropped[idx] {
                dropped[idx] = false;
                observed_count += 1;
            }
            idx += 1;
        }

        let mut steps = Vec::new();
        let mut seq_no = 0usize;
        for ((t, mut features, target), is_dropped) in rows.into_iter().zip(dropped) {
            if is_dropped {
                truth.push(TruthRow {
                    subject_id: subject_id.clone(),
                    event_time: t,
                    features,
                    target,
                });
            } else {
                features[0] = seq_no as f64;
                seq_no += 1;
                steps.push(TimeStep::observed(t, features, Some(target)));
            }
        }

        schools.insert(subject_id.clone(), school);
        subjects.push(SubjectSeries {
            subject_id,
            descriptors,
            steps,
        });
    }

    let feature_schema = synth_feature_schema(d);
    let descriptor_schema = synth_descriptor_schema(q);

    SynthOutput {
        dataset: Dataset {
            subjects,
            feature_schema,
            descriptor_schema,
        },
        schools,
        schedules,
        truth,
    }
}
