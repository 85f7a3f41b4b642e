//! CSV artifact readers and writers.
//!
//! Every file written here starts with a `# config_hash=… seed=…` lineage
//! comment; readers skip `#` lines. Floats are written in shortest
//! round-trip form so artifacts parse back to identical values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, DescriptorSpec, SubjectSeries, TimeStep};
use crate::harness::synth::TruthRow;
use crate::pipeline::impute::{GeneratedRow, GeneratedRows};
use crate::pipeline::missing::MissingSkeleton;
use crate::predict::EvalResult;

use super::HarnessError;

#[derive(Debug, Clone, Copy)]
pub struct Lineage<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
}

impl Lineage<'_> {
    fn comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn open_writer(path: &Path, lineage: Lineage<'_>) -> Result<csv::Writer<File>, HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = File::create(path)?;
    file.write_all(lineage.comment().as_bytes())?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, HarnessError> {
    let file = File::open(path).map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file))
}

fn malformed(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Dataset rows: subject_id, event_time, school_id, observed, target,
/// descriptors…, features… . Descriptors repeat per row and must be
/// constant per subject.
pub fn write_dataset_csv(
    path: &Path,
    dataset: &Dataset,
    schools: &BTreeMap<String, String>,
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    let mut header = vec![
        "subject_id".to_string(),
        "event_time".to_string(),
        "school_id".to_string(),
        "observed".to_string(),
        "target".to_string(),
    ];
    header.extend(dataset.descriptor_schema.iter().map(|d| d.name.clone()));
    header.extend(dataset.feature_schema.iter().cloned());
    w.write_record(&header)?;
    for subject in &dataset.subjects {
        let school = schools
            .get(&subject.subject_id)
            .map(String::as_str)
            .unwrap_or("");
        for step in &subject.steps {
            let mut rec = vec![
                subject.subject_id.clone(),
                format_f64(step.event_time),
                school.to_string(),
                if step.observed { "1".into() } else { "0".into() },
                step.target.map(format_f64).unwrap_or_default(),
            ];
            rec.extend(subject.descriptors.iter().map(|v| format_f64(*v)));
            rec.extend(step.features.iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(
    path: &Path,
    features: &[String],
    descriptors: &[DescriptorSpec],
    school_column: &str,
) -> Result<(Dataset, BTreeMap<String, String>), HarnessError> {
    let mut r = open_reader(path)?;
    let headers = r
        .headers()
        .map_err(|e| malformed(path, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize, HarnessError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(path, format!("missing column {name:?}")))
    };
    let c_subject = col("subject_id")?;
    let c_time = col("event_time")?;
    let c_school = col(school_column)?;
    let c_observed = headers.iter().position(|h| h == "observed");
    let c_target = col("target")?;
    let c_desc: Vec<usize> = descriptors
        .iter()
        .map(|d| col(&d.name))
        .collect::<Result<_, _>>()?;
    let c_feat: Vec<usize> = features
        .iter()
        .map(|f| col(f))
        .collect::<Result<_, _>>()?;

    let mut subjects: Vec<SubjectSeries> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut schools = BTreeMap::new();
    // Categorical labels that fail to parse as numbers get codes in
    // first-appearance order, per descriptor column.
    let mut cat_codes: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); descriptors.len()];

    for record in r.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let sid = get(c_subject).to_string();
        let time: f64 = get(c_time)
            .parse()
            .map_err(|_| malformed(path, format!("bad event_time {:?}", get(c_time))))?;
        let observed = match c_observed {
            Some(c) => get(c) != "0",
            None => true,
        };
        let target: Option<f64> = {
            let s = get(c_target);
            if s.is_empty() {
                None
            } else {
                Some(s.parse().map_err(|_| malformed(path, "bad target"))?)
            }
        };
        let desc_vals: Vec<f64> = c_desc
            .iter()
            .enumerate()
            .map(|(qi, &c)| {
                let s = get(c);
                s.parse::<f64>().unwrap_or_else(|_| {
                    let codes = &mut cat_codes[qi];
                    let next = codes.len() as f64;
                    *codes.entry(s.to_string()).or_insert(next)
                })
            })
            .collect();
        let feat_vals: Vec<f64> = c_feat
            .iter()
            .map(|&c| {
                get(c)
                    .parse::<f64>()
                    .map_err(|_| malformed(path, format!("bad feature value {:?}", get(c))))
            })
            .collect::<Result<_, _>>()?;

        let idx = *index.entry(sid.clone()).or_insert_with(|| {
            subjects.push(SubjectSeries {
                subject_id: sid.clone(),
                descriptors: desc_vals.clone(),
                steps: Vec::new(),
            });
            schools.insert(sid.clone(), get(c_school).to_string());
            subjects.len() - 1
        });
        subjects[idx].steps.push(TimeStep {
            event_time: time,
            features: feat_vals,
            target,
            observed,
        });
    }
    // Stable sort: ties keep file order.
    for s in &mut subjects {
        s.steps.sort_by(|a, b| a.event_time.total_cmp(&b.event_time));
    }
    Ok((
        Dataset {
            subjects,
            feature_schema: features.to_vec(),
            descriptor_schema: descriptors.to_vec(),
        },
        schools,
    ))
}

/// School schedules: school_id, quiz_time.
pub fn write_schedule_csv(
    path: &Path,
    schedules: &BTreeMap<String, Vec<f64>>,
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    w.write_record(["school_id", "quiz_time"])?;
    for (school, times) in schedules {
        for t in times {
            w.write_record([school.as_str(), &format_f64(*t)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, HarnessError> {
    let mut r = open_reader(path)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let school = record.get(0).unwrap_or("").to_string();
        let t: f64 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| malformed(path, "bad quiz_time"))?;
        out.entry(school).or_default().push(t);
    }
    Ok(out)
}

/// Skeletons: subject_id, event_time (descriptors rejoin from the dataset).
pub fn write_skeleton_csv(
    path: &Path,
    skeletons: &[MissingSkeleton],
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    w.write_record(["subject_id", "event_time"])?;
    for s in skeletons {
        for t in &s.times {
            w.write_record([s.subject_id.as_str(), &format_f64(*t)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_skeleton_csv(
    path: &Path,
    dataset: &Dataset,
) -> Result<Vec<MissingSkeleton>, HarnessError> {
    let mut r = open_reader(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let sid = record.get(0).unwrap_or("").to_string();
        let t: f64 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| malformed(path, "bad event_time"))?;
        if !times.contains_key(&sid) {
            order.push(sid.clone());
        }
        times.entry(sid).or_default().push(t);
    }
    order
        .into_iter()
        .map(|sid| {
            let descriptors = dataset
                .subject(&sid)
                .ok_or_else(|| malformed(path, format!("unknown subject {sid:?}")))?
                .descriptors
                .clone();
            Ok(MissingSkeleton {
                subject_id: sid.clone(),
                descriptors,
                times: times.remove(&sid).expect("collected"),
            })
        })
        .collect()
}

/// Ground-truth missing rows (synthetic data only).
pub fn write_truth_csv(
    path: &Path,
    truth: &[TruthRow],
    feature_names: &[String],
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    let mut header = vec!["subject_id".to_string(), "event_time".to_string(), "target".to_string()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for r in truth {
        let mut rec = vec![
            r.subject_id.clone(),
            format_f64(r.event_time),
            format_f64(r.target),
        ];
        rec.extend(r.features.iter().map(|v| format_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Generated rows, optionally labeled with predicted targets.
pub fn write_generated_csv(
    path: &Path,
    rows: &[GeneratedRows],
    feature_names: &[String],
    with_target: bool,
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    let mut header = vec!["subject_id".to_string(), "event_time".to_string()];
    if with_target {
        header.push("target".to_string());
    }
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for g in rows {
        for row in &g.rows {
            let mut rec = vec![g.subject_id.clone(), format_f64(row.event_time)];
            if with_target {
                rec.push(format_f64(row.target));
            }
            rec.extend(row.features.iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_generated_csv(
    path: &Path,
    n_features: usize,
    with_target: bool,
) -> Result<Vec<GeneratedRows>, HarnessError> {
    let mut r = open_reader(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<GeneratedRow>> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let sid = record.get(0).unwrap_or("").to_string();
        let time: f64 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| malformed(path, "bad event_time"))?;
        let (target, feat_start) = if with_target {
            let t: f64 = record
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|_| malformed(path, "bad target"))?;
            (t, 3)
        } else {
            (0.0, 2)
        };
        let features: Vec<f64> = (0..n_features)
            .map(|j| {
                record
                    .get(feat_start + j)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|_| malformed(path, "bad feature"))
            })
            .collect::<Result<_, _>>()?;
        if !map.contains_key(&sid) {
            order.push(sid.clone());
        }
        map.entry(sid).or_default().push(GeneratedRow {
            event_time: time,
            features,
            target,
        });
    }
    Ok(order
        .into_iter()
        .map(|sid| {
            let rows = map.remove(&sid).expect("collected");
            GeneratedRows {
                subject_id: sid,
                rows,
            }
        })
        .collect())
}

/// Evaluation rows: dataset, model, padding, seed, rmse.
pub fn write_eval_csv(
    path: &Path,
    rows: &[EvalResult],
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    w.write_record(["dataset", "model", "padding", "seed", "rmse"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.model.as_str(),
            r.padding.as_str(),
            &r.seed.to_string(),
            &format_f64(r.rmse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalResult>, HarnessError> {
    let mut r = open_reader(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        out.push(EvalResult {
            dataset: record.get(0).unwrap_or("").to_string(),
            model: record.get(1).unwrap_or("").to_string(),
            padding: record.get(2).unwrap_or("").to_string(),
            seed: record
                .get(3)
                .unwrap_or("")
                .parse()
                .map_err(|_| malformed(path, "bad seed"))?,
            rmse: record
                .get(4)
                .unwrap_or("")
                .parse()
                .map_err(|_| malformed(path, "bad rmse"))?,
        });
    }
    Ok(out)
}

/// Loss history: epoch, train_loss, val_loss, recon, kl.
pub fn write_loss_csv(
    path: &Path,
    history: &[crate::models::EpochStats],
    lineage: Lineage<'_>,
) -> Result<(), HarnessError> {
    let mut w = open_writer(path, lineage)?;
    w.write_record(["epoch", "train_loss", "val_loss", "recon", "kl"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format_f64(h.train_loss),
            format_f64(h.val_loss),
            format_f64(h.recon),
            format_f64(h.kl),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip float formatting: `{}` on f64 produces the shortest
/// string that parses back to the identical value.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{MissingMode, MissingSpec, SynthSpec};
    use crate::harness::synth::synth_generate;

    fn lineage() -> Lineage<'static> {
        Lineage {
            config_hash: "abc123",
            seed: 9,
        }
    }

    #[test]
    fn dataset_csv_round_trips() {
        let spec = SynthSpec {
            subjects: 8,
            schools: 2,
            schedule_len: 6,
            features: 4,
            descriptors: 4,
            coupling: 1.0,
            missing: MissingSpec {
                mode: MissingMode::Mcar,
                rate: 0.3,
            },
            feature_noise: 0.2,
            target_noise: 0.02,
            latent_dim: 2,
            ar_coeff: 0.9,
            target_memory: 0.75,
        };
        let out = synth_generate(&spec, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        write_dataset_csv(&path, &out.dataset, &out.schools, lineage()).unwrap();
        let (ds2, schools2) = read_dataset_csv(
            &path,
            &out.dataset.feature_schema,
            &out.dataset.descriptor_schema,
            "school_id",
        )
        .unwrap();
        assert_eq!(out.dataset, ds2);
        assert_eq!(out.schools, schools2);
        // Lineage comment present.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc123 seed=9\n"));
    }

    #[test]
    fn eval_csv_round_trips() {
        let rows = vec![
            EvalResult {
                dataset: "original".into(),
                model: "lstm".into(),
                padding: "zero".into(),
                seed: 1,
                rmse: 0.123456789012345,
            },
            EvalResult {
                dataset: "vae@f100".into(),
                model: "gru".into(),
                padding: "ffill".into(),
                seed: 2,
                rmse: 1.0 / 3.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        write_eval_csv(&path, &rows, lineage()).unwrap();
        let back = read_eval_csv(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn schedule_csv_round_trips() {
        let mut schedules = BTreeMap::new();
        schedules.insert("a".to_string(), vec![0.0, 1.5, 3.0]);
        schedules.insert("b".to_string(), vec![0.25]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.csv");
        write_schedule_csv(&path, &schedules, lineage()).unwrap();
        assert_eq!(read_schedule_csv(&path).unwrap(), schedules);
    }

    #[test]
    fn missing_artifact_error_names_the_file() {
        let err = read_schedule_csv(Path::new("/nonexistent/sched.csv")).unwrap_err();
        assert!(matches!(err, HarnessError::MissingArtifact(_)));
    }
}
