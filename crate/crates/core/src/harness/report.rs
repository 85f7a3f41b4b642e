//! Report aggregation and emission.
//!
//! Aggregates per-seed evaluation rows into mean/min/max cells and writes
//! the four report CSVs plus a JSON summary with best-cell provenance.
//! Column order is fixed: see the `write_*` functions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::predict::EvalResult;

use super::csvio::{format_f64, Lineage};
use super::HarnessError;

/// Mean/min/max over exactly the configured seed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl CellStat {
    pub fn from_values(values: &[f64]) -> CellStat {
        assert!(!values.is_empty(), "empty cell");
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        CellStat {
            mean: sum / values.len() as f64,
            min,
            max,
            n: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingCell {
    pub model: String,
    pub padding: String,
    pub stat: CellStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCell {
    pub source: String,
    pub model: String,
    pub padding: String,
    pub stat: CellStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionCell {
    pub source: String,
    pub fraction: f64,
    pub stat: CellStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistanceCell {
    pub source: String,
    pub feature: String,
    pub stat: CellStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLossCell {
    pub source: String,
    pub per_seed: Vec<(u64, f64)>,
    pub stat: CellStat,
}

/// Everything the experiment produced, aggregated for emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub best_model: String,
    pub best_padding: String,
    pub baseline: Vec<PaddingCell>,
    pub by_source: Vec<SourceCell>,
    pub fraction_sweep: Vec<FractionCell>,
    pub feature_distance: Vec<FeatureDistanceCell>,
    pub gen_val_loss: Vec<GenLossCell>,
}

impl RunReport {
    pub fn source_cell(&self, source: &str, model: &str) -> Option<&SourceCell> {
        self.by_source
            .iter()
            .find(|c| c.source == source && c.model == model)
    }

    pub fn fraction_cell(&self, source: &str, fraction: f64) -> Option<&FractionCell> {
        self.fraction_sweep
            .iter()
            .find(|c| c.source == source && c.fraction == fraction)
    }

    pub fn gen_loss(&self, source: &str) -> Option<&GenLossCell> {
        self.gen_val_loss.iter().find(|c| c.source == source)
    }
}

/// Group eval rows by (dataset, model, padding) into stat cells, keyed in
/// deterministic order of first appearance.
pub fn aggregate(rows: &[EvalResult]) -> Vec<(String, String, String, CellStat)> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.model.clone(), r.padding.clone());
        if !values.contains_key(&key) {
            order.push(key.clone());
        }
        values.entry(key).or_default().push(r.rmse);
    }
    order
        .into_iter()
        .map(|key| {
            let stat = CellStat::from_values(&values[&key]);
            (key.0, key.1, key.2, stat)
        })
        .collect()
}

fn stat_record(prefix: Vec<String>, stat: &CellStat) -> Vec<String> {
    let mut rec = prefix;
    rec.push(format_f64(stat.mean));
    rec.push(format_f64(stat.min));
    rec.push(format_f64(stat.max));
    rec.push(stat.n.to_string());
    rec
}

fn open_writer(path: &Path, lineage: Lineage<'_>) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(format!("# config_hash={} seed={}\n", lineage.config_hash, lineage.seed).as_bytes())?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

/// Write the report CSVs and the JSON summary into `dir`.
pub fn emit_report(dir: &Path, report: &RunReport, lineage: Lineage<'_>) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;

    let mut w = open_writer(&dir.join("rmse_by_padding.csv"), lineage)?;
    w.write_record(["model", "padding", "mean_rmse", "min_rmse", "max_rmse", "n_seeds"])?;
    for c in &report.baseline {
        w.write_record(stat_record(
            vec![c.model.clone(), c.padding.clone()],
            &c.stat,
        ))?;
    }
    w.flush()?;

    let mut w = open_writer(&dir.join("rmse_by_source.csv"), lineage)?;
    w.write_record([
        "source", "model", "padding", "mean_rmse", "min_rmse", "max_rmse", "n_seeds",
    ])?;
    for c in &report.by_source {
        w.write_record(stat_record(
            vec![c.source.clone(), c.model.clone(), c.padding.clone()],
            &c.stat,
        ))?;
    }
    w.flush()?;

    let mut w = open_writer(&dir.join("fraction_sweep.csv"), lineage)?;
    w.write_record([
        "source", "fraction", "mean_rmse", "min_rmse", "max_rmse", "n_seeds",
    ])?;
    for c in &report.fraction_sweep {
        w.write_record(stat_record(
            vec![c.source.clone(), format_f64(c.fraction)],
            &c.stat,
        ))?;
    }
    w.flush()?;

    let mut w = open_writer(&dir.join("feature_distance.csv"), lineage)?;
    w.write_record([
        "source",
        "feature",
        "mean_distance",
        "min_distance",
        "max_distance",
        "n_seeds",
    ])?;
    for c in &report.feature_distance {
        w.write_record(stat_record(
            vec![c.source.clone(), c.feature.clone()],
            &c.stat,
        ))?;
    }
    w.flush()?;

    let summary = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(())
}

/// Parse an emitted report back (the JSON summary is authoritative).
pub fn read_report(dir: &Path) -> Result<RunReport, HarnessError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse one of the stat CSVs back into (prefix columns, stat) rows.
pub fn read_stat_csv(path: &Path, prefix_cols: usize) -> Result<Vec<(Vec<String>, CellStat)>, HarnessError> {
    let file = std::fs::File::open(path)
        .map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| HarnessError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let prefix: Vec<String> = (0..prefix_cols)
            .map(|i| record.get(i).unwrap_or("").to_string())
            .collect();
        let num = |i: usize| -> Result<f64, HarnessError> {
            record
                .get(prefix_cols + i)
                .unwrap_or("")
                .parse()
                .map_err(|_| HarnessError::Malformed {
                    path: path.display().to_string(),
                    message: "bad number".into(),
                })
        };
        let stat = CellStat {
            mean: num(0)?,
            min: num(1)?,
            max: num(2)?,
            n: num(3)? as usize,
        };
        out.push((prefix, stat));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            config_hash: "cafe".into(),
            best_model: "lstm".into(),
            best_padding: "zero".into(),
            baseline: vec![PaddingCell {
                model: "lstm".into(),
                padding: "zero".into(),
                stat: CellStat::from_values(&[0.1, 0.2, 0.3]),
            }],
            by_source: vec![SourceCell {
                source: "vae".into(),
                model: "lstm".into(),
                padding: "zero".into(),
                stat: CellStat::from_values(&[0.05, 0.07]),
            }],
            fraction_sweep: vec![FractionCell {
                source: "vae".into(),
                fraction: 100.0,
                stat: CellStat::from_values(&[0.05]),
            }],
            feature_distance: vec![FeatureDistanceCell {
                source: "vae".into(),
                feature: "f1".into(),
                stat: CellStat::from_values(&[0.4, 0.6]),
            }],
            gen_val_loss: vec![GenLossCell {
                source: "vae".into(),
                per_seed: vec![(1, 0.2), (2, 0.25)],
                stat: CellStat::from_values(&[0.2, 0.25]),
            }],
        }
    }

    #[test]
    fn emit_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        emit_report(
            dir.path(),
            &report,
            Lineage {
                config_hash: "cafe",
                seed: 0,
            },
        )
        .unwrap();
        let back = read_report(dir.path()).unwrap();
        assert_eq!(report, back);

        // CSV tables parse back to the same stats.
        let rows = read_stat_csv(&dir.path().join("rmse_by_padding.csv"), 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, vec!["lstm".to_string(), "zero".to_string()]);
        assert_eq!(rows[0].1, report.baseline[0].stat);
        let rows = read_stat_csv(&dir.path().join("fraction_sweep.csv"), 2).unwrap();
        assert_eq!(rows[0].1, report.fraction_sweep[0].stat);
    }

    #[test]
    fn empty_fraction_sweep_emits_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = sample_report();
        report.fraction_sweep.clear();
        emit_report(
            dir.path(),
            &report,
            Lineage {
                config_hash: "cafe",
                seed: 0,
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("fraction_sweep.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2); // lineage comment + header
        assert!(lines[1].starts_with("source,fraction"));
    }

    #[test]
    fn aggregate_mean_matches_brute_force() {
        let rows = vec![
            EvalResult {
                dataset: "d".into(),
                model: "m".into(),
                padding: "p".into(),
                seed: 1,
                rmse: 0.25,
            },
            EvalResult {
                dataset: "d".into(),
                model: "m".into(),
                padding: "p".into(),
                seed: 2,
                rmse: 0.35,
            },
        ];
        let cells = aggregate(&rows);
        assert_eq!(cells.len(), 1);
        let brute = (0.25 + 0.35) / 2.0;
        assert!((cells[0].3.mean - brute).abs() < 1e-12);
        assert_eq!(cells[0].3.n, 2);
    }
}
