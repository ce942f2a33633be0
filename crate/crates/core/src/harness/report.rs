//! results.csv schema (versioned by its exact header) and plot-ready
//! aggregation.

use super::HarnessError;
use crate::eval::stats_of;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Fixed column set of results.csv; emit_report rejects anything else.
pub const RESULTS_HEADER: [&str; 13] = [
    "experiment_id",
    "kind",
    "setting_label",
    "n_primitives",
    "n_examples",
    "scheme",
    "arch",
    "embedding_size",
    "seed",
    "final_accuracy",
    "train_size",
    "wall_clock_secs",
    "config_hash",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub kind: String,
    pub setting_label: String,
    pub n_primitives: Option<usize>,
    pub n_examples: Option<usize>,
    pub scheme: String,
    pub arch: String,
    pub embedding_size: usize,
    pub seed: u64,
    pub final_accuracy: f64,
    pub train_size: usize,
    pub wall_clock_secs: f64,
    pub config_hash: String,
}

pub(crate) fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| HarnessError::Other(e.to_string()))?;
        w.write_record(RESULTS_HEADER)
            .map_err(|e| HarnessError::Other(e.to_string()))?;
        for r in rows {
            w.write_record([
                r.experiment_id.as_str(),
                r.kind.as_str(),
                r.setting_label.as_str(),
                &opt(r.n_primitives),
                &opt(r.n_examples),
                r.scheme.as_str(),
                r.arch.as_str(),
                &r.embedding_size.to_string(),
                &r.seed.to_string(),
                &format!("{:.6}", r.final_accuracy),
                &r.train_size.to_string(),
                &format!("{:.3}", r.wall_clock_secs),
                r.config_hash.as_str(),
            ])
            .map_err(|e| HarnessError::Other(e.to_string()))?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Reads and schema-checks a results.csv. A header with zero rows is valid;
/// a missing or reordered header is not.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| HarnessError::SchemaMismatch(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::SchemaMismatch(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(HarnessError::SchemaMismatch(format!(
            "expected header {:?}, found {:?}",
            RESULTS_HEADER,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::SchemaMismatch(e.to_string()))?;
        let field = |j: usize| record.get(j).unwrap_or("").to_string();
        let parse_opt = |j: usize| -> Result<Option<usize>, HarnessError> {
            let s = field(j);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad integer '{s}'")))
            }
        };
        let accuracy: f64 = field(9)
            .parse()
            .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad accuracy")))?;
        if !(0.0..=1.0).contains(&accuracy) && !accuracy.is_nan() {
            return Err(HarnessError::SchemaMismatch(format!(
                "row {i}: accuracy {accuracy} outside [0, 1]"
            )));
        }
        let train_size: usize = field(10)
            .parse()
            .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad train size")))?;
        if train_size == 0 {
            return Err(HarnessError::SchemaMismatch(format!(
                "row {i}: train size must be positive"
            )));
        }
        rows.push(ResultRow {
            experiment_id: field(0),
            kind: field(1),
            setting_label: field(2),
            n_primitives: parse_opt(3)?,
            n_examples: parse_opt(4)?,
            scheme: field(5),
            arch: field(6),
            embedding_size: field(7)
                .parse()
                .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad embedding size")))?,
            seed: field(8)
                .parse()
                .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad seed")))?,
            final_accuracy: accuracy,
            train_size,
            wall_clock_secs: field(11)
                .parse()
                .map_err(|_| HarnessError::SchemaMismatch(format!("row {i}: bad wall clock")))?,
            config_hash: field(12),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment_id: String,
    pub setting_label: String,
    pub n_primitives: Option<usize>,
    pub n_examples: Option<usize>,
    pub scheme: String,
    pub arch: String,
    pub embedding_size: usize,
    pub n_seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
}

/// Groups raw rows by setting and writes plot-ready mean/std tables
/// (`aggregates.csv` and `aggregates.json`) into `out_dir`.
pub fn emit_report(results_csv: &Path, out_dir: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    let rows = read_results(results_csv)?;
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.experiment_id.clone(), r.setting_label.clone()))
            .or_default()
            .push(r);
    }
    let mut aggregates = Vec::with_capacity(groups.len());
    for ((experiment_id, setting_label), members) in groups {
        let accs: Vec<f64> = members
            .iter()
            .map(|r| r.final_accuracy)
            .filter(|a| !a.is_nan())
            .collect();
        if accs.is_empty() {
            continue;
        }
        let stats = stats_of(&accs);
        let first = members[0];
        aggregates.push(AggregateRow {
            experiment_id,
            setting_label,
            n_primitives: first.n_primitives,
            n_examples: first.n_examples,
            scheme: first.scheme.clone(),
            arch: first.arch.clone(),
            embedding_size: first.embedding_size,
            n_seeds: stats.n,
            mean_accuracy: stats.mean,
            std_accuracy: stats.std,
            min_accuracy: stats.min,
            max_accuracy: stats.max,
        });
    }

    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("aggregates.csv"))
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    w.write_record([
        "experiment_id",
        "setting_label",
        "n_primitives",
        "n_examples",
        "scheme",
        "arch",
        "embedding_size",
        "n_seeds",
        "mean_accuracy",
        "std_accuracy",
        "min_accuracy",
        "max_accuracy",
    ])
    .map_err(|e| HarnessError::Other(e.to_string()))?;
    for a in &aggregates {
        w.write_record([
            a.experiment_id.as_str(),
            a.setting_label.as_str(),
            &opt(a.n_primitives),
            &opt(a.n_examples),
            a.scheme.as_str(),
            a.arch.as_str(),
            &a.embedding_size.to_string(),
            &a.n_seeds.to_string(),
            &format!("{:.6}", a.mean_accuracy),
            &format!("{:.6}", a.std_accuracy),
            &format!("{:.6}", a.min_accuracy),
            &format!("{:.6}", a.max_accuracy),
        ])
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    }
    w.flush()?;
    std::fs::write(
        out_dir.join("aggregates.json"),
        serde_json::to_vec_pretty(&aggregates).expect("aggregates serialize"),
    )?;
    Ok(aggregates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<ResultRow> {
        (0..4)
            .map(|seed| ResultRow {
                experiment_id: "exp".into(),
                kind: "injection".into(),
                setting_label: format!("n{:03}", if seed < 2 { 3 } else { 50 }),
                n_primitives: Some(if seed < 2 { 3 } else { 50 }),
                n_examples: None,
                scheme: "uniform".into(),
                arch: "transformer".into(),
                embedding_size: 128,
                seed,
                final_accuracy: 0.25 * seed as f64,
                train_size: 13_204,
                wall_clock_secs: 1.5,
                config_hash: "deadbeefdeadbeef".into(),
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_and_aggregation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results_csv(&sample_rows(), &path).unwrap();
        let rows = read_results(&path).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].final_accuracy, 0.75);

        let aggregates = emit_report(&path, dir.path()).unwrap();
        assert_eq!(aggregates.len(), 2);
        let n3 = aggregates
            .iter()
            .find(|a| a.setting_label == "n003")
            .unwrap();
        assert_eq!(n3.n_seeds, 2);
        // Independent recomputation of the mean.
        assert!((n3.mean_accuracy - (0.0 + 0.25) / 2.0).abs() < 1e-12);
        assert!(dir.path().join("aggregates.csv").exists());
        assert!(dir.path().join("aggregates.json").exists());
    }

    #[test]
    fn header_only_is_valid_but_headerless_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_results_csv(&[], &path).unwrap();
        assert!(read_results(&path).unwrap().is_empty());
        assert!(emit_report(&path, dir.path()).unwrap().is_empty());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(
            read_results(&bad),
            Err(HarnessError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn out_of_range_accuracy_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let mut rows = sample_rows();
        rows[0].final_accuracy = 1.5;
        write_results_csv(&rows, &path).unwrap();
        assert!(matches!(
            read_results(&path),
            Err(HarnessError::SchemaMismatch(_))
        ));
    }
}
