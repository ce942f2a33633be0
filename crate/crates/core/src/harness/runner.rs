//! Experiment execution: settings x seeds as resumable cells, each leaving a
//! record (and checkpoint where analysis needs it) under the output
//! directory; results.csv and report.json are rebuilt from the records.

use super::report::{write_results_csv, ResultRow};
use super::{injection_spec, ExperimentConfig, ExperimentKind, HarnessError};
use crate::dataset::{
    build_implicit_split, build_injected_split, build_multi_isolated_split,
    build_random_split, build_remapped_split, build_transfer_pair, DatasetSpec,
    DistributionScheme, Split,
};
use crate::eval::{embedding_distance_report, stats_of, tsne_project, EmbeddingReport, TsneConfig};
use crate::model::{save_checkpoint, FreezeMask, ModelConfig, Seq2SeqModel};
use crate::train::{finetune, run_single, RunRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// One experimental setting (a point on the config's axes); cells are
/// settings crossed with seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Setting {
    pub label: String,
    pub n_primitives: Option<usize>,
    pub n_examples: Option<usize>,
    pub scheme: String,
    pub model: ModelConfig,
    pub task: SettingTask,
    /// Train, then emit embedding/t-SNE reports from the checkpoint.
    pub analyze: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum SettingTask {
    /// Any split expressible as a DatasetSpec (seed overwritten per cell).
    Injected(DatasetSpec),
    Implicit { complexity: u8, spec: DatasetSpec },
    MultiIsolated { n_isolated: usize },
    Remap,
    RandomSplit { train_fraction: f64 },
    /// Pretrain, then finetune twice (frozen and unfrozen); three rows.
    Transfer,
}

fn build_split_for(task: &SettingTask, seed: u64) -> Result<Split, HarnessError> {
    Ok(match task {
        SettingTask::Injected(spec) => {
            let spec = DatasetSpec { seed, ..spec.clone() };
            build_injected_split(&spec)?
        }
        SettingTask::Implicit { complexity, spec } => {
            let spec = DatasetSpec { seed, ..spec.clone() };
            build_implicit_split(*complexity, &spec)?
        }
        SettingTask::MultiIsolated { n_isolated } => build_multi_isolated_split(*n_isolated, seed)?,
        SettingTask::Remap => build_remapped_split()?,
        SettingTask::RandomSplit { train_fraction } => {
            build_random_split(*train_fraction, seed)?
        }
        SettingTask::Transfer => unreachable!("transfer cells run their own pipeline"),
    })
}

/// Enumerates the settings of a config.
pub(crate) fn settings_of(config: &ExperimentConfig) -> Result<Vec<Setting>, HarnessError> {
    let mut out = Vec::new();
    let model = config.model.clone();
    match config.kind {
        ExperimentKind::Injection | ExperimentKind::EmbeddingAnalysis => {
            for &n in config.n_primitives_axis.as_deref().unwrap_or_default() {
                let task = if config.colors {
                    if n < 3 {
                        return Err(HarnessError::InvalidConfig {
                            field: "n_primitives_axis".into(),
                            reason: "Colors keeps its three example primitives".into(),
                        });
                    }
                    SettingTask::Injected(DatasetSpec {
                        base: crate::grammar::GrammarFamily::Colors,
                        extra_primitives: n - 3,
                        scheme: DistributionScheme::uniform_capped(),
                        size_cap: None,
                        exposure: crate::dataset::Exposure::Definition,
                        isolated_count: 1,
                        seed: 0,
                    })
                } else {
                    SettingTask::Injected(injection_spec(n, config.size_cap, 0)?)
                };
                out.push(Setting {
                    label: format!("n{n:03}"),
                    n_primitives: Some(n),
                    n_examples: None,
                    scheme: "uniform".into(),
                    model: model.clone(),
                    task,
                    analyze: config.kind == ExperimentKind::EmbeddingAnalysis,
                });
            }
        }
        ExperimentKind::Distribution => {
            for &n in config.n_primitives_axis.as_deref().unwrap_or_default() {
                for scheme_name in config.schemes.as_deref().unwrap_or_default() {
                    let (scheme, cap) = match scheme_name.as_str() {
                        // Uniform keeps the |T| cap (the baseline setting);
                        // shaped schemes build their own sizes.
                        "uniform" => (DistributionScheme::uniform_capped(), config.size_cap),
                        "linear" => (DistributionScheme::Linear, None),
                        "quadratic" => (DistributionScheme::Quadratic, None),
                        "skewed" => (DistributionScheme::skewed(), None),
                        other => {
                            return Err(HarnessError::InvalidConfig {
                                field: "schemes".into(),
                                reason: format!("unknown scheme '{other}'"),
                            })
                        }
                    };
                    let spec = DatasetSpec {
                        base: crate::grammar::GrammarFamily::Scan,
                        extra_primitives: n - 3,
                        scheme,
                        size_cap: cap,
                        exposure: crate::dataset::Exposure::Definition,
                        isolated_count: 1,
                        seed: 0,
                    };
                    out.push(Setting {
                        label: format!("{scheme_name}-n{n:03}"),
                        n_primitives: Some(n),
                        n_examples: None,
                        scheme: scheme_name.clone(),
                        model: model.clone(),
                        task: SettingTask::Injected(spec),
                        analyze: false,
                    });
                }
            }
        }
        ExperimentKind::Grid => {
            for &p in config.n_primitives_axis.as_deref().unwrap_or_default() {
                for &e in config.examples_axis.as_deref().unwrap_or_default() {
                    let spec = DatasetSpec {
                        base: crate::grammar::GrammarFamily::Scan,
                        extra_primitives: p.saturating_sub(3),
                        scheme: DistributionScheme::uniform_per_primitive(e),
                        size_cap: None,
                        exposure: crate::dataset::Exposure::Definition,
                        isolated_count: 1,
                        seed: 0,
                    };
                    out.push(Setting {
                        label: format!("cell-{p}x{e}"),
                        n_primitives: Some(p),
                        n_examples: Some(e),
                        scheme: "uniform".into(),
                        model: model.clone(),
                        task: SettingTask::Injected(spec),
                        analyze: false,
                    });
                }
            }
        }
        ExperimentKind::Transfer => {
            out.push(Setting {
                label: "transfer".into(),
                n_primitives: Some(50),
                n_examples: Some(200),
                scheme: "uniform".into(),
                model: model.clone(),
                task: SettingTask::Transfer,
                analyze: false,
            });
        }
        ExperimentKind::Capacity => {
            for &emb in config.embedding_sizes.as_deref().unwrap_or_default() {
                let scaled = scale_capacity(&model, emb)?;
                for &n in config.n_primitives_axis.as_deref().unwrap_or_default() {
                    out.push(Setting {
                        label: format!("emb{emb:03}-n{n:03}"),
                        n_primitives: Some(n),
                        n_examples: None,
                        scheme: "uniform".into(),
                        model: scaled.clone(),
                        task: SettingTask::Injected(injection_spec(n, config.size_cap, 0)?),
                        analyze: false,
                    });
                }
                if config.random_split_sanity {
                    out.push(Setting {
                        label: format!("emb{emb:03}-random"),
                        n_primitives: None,
                        n_examples: None,
                        scheme: "random".into(),
                        model: scaled,
                        task: SettingTask::RandomSplit {
                            train_fraction: 0.8,
                        },
                        analyze: false,
                    });
                }
            }
        }
        ExperimentKind::Implicit => {
            for &c in config.complexities.as_deref().unwrap_or_default() {
                for &n in config.n_primitives_axis.as_deref().unwrap_or_default() {
                    out.push(Setting {
                        label: format!("c{c}-n{n:03}"),
                        n_primitives: Some(n),
                        n_examples: None,
                        scheme: "uniform".into(),
                        model: model.clone(),
                        task: SettingTask::Implicit {
                            complexity: c,
                            spec: injection_spec(n, config.size_cap, 0)?,
                        },
                        analyze: false,
                    });
                }
            }
        }
        ExperimentKind::MultiIsolated => {
            let n_isolated = config.n_isolated.unwrap_or(1);
            out.push(Setting {
                label: format!("iso{n_isolated:02}"),
                n_primitives: Some(100),
                n_examples: None,
                scheme: "uniform".into(),
                model: model.clone(),
                task: SettingTask::MultiIsolated { n_isolated },
                analyze: false,
            });
        }
        ExperimentKind::Remap => {
            out.push(Setting {
                label: "remap".into(),
                n_primitives: Some(3),
                n_examples: None,
                scheme: "uniform".into(),
                model: model.clone(),
                task: SettingTask::Remap,
                analyze: false,
            });
        }
    }
    Ok(out)
}

fn scale_capacity(base: &ModelConfig, emb: usize) -> Result<ModelConfig, HarnessError> {
    // Intermediate sizes scale with the embedding, preserving the base
    // config's ratio.
    let ratio = base.hidden_or_ffn_size as f64 / base.embedding_size as f64;
    Ok(ModelConfig {
        embedding_size: emb,
        hidden_or_ffn_size: ((emb as f64 * ratio).round() as usize).max(1),
        ..base.clone()
    })
}

/// Per-cell analysis artifacts for the embedding-analysis kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisArtifacts {
    /// Average distances over all example primitives.
    pub all_examples: EmbeddingReport,
    /// Average distances over the original three example primitives.
    pub original_three: EmbeddingReport,
    /// t-SNE coordinates per source-vocabulary token with role labels.
    pub tsne: Vec<(String, String, f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub experiment_id: String,
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    /// Aggregate accuracy stats per setting label.
    pub aggregates: BTreeMap<String, crate::eval::AggregateStats>,
    pub failures: Vec<(String, u64, String)>,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn had_failures(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn cell_dir(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join("cells").join(format!("{label}-s{seed}"))
}

fn load_record(dir: &Path) -> Option<RunRecord> {
    let text = fs::read_to_string(dir.join("record.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn store_record(dir: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join("record.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(record).expect("record serializes"))?;
    fs::rename(tmp, dir.join("record.json"))?;
    Ok(())
}

/// Runs every (setting, seed) cell of an experiment, skipping cells whose
/// records already exist, then rebuilds `results.csv` and `report.json`.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_dir: &Path,
) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let settings = settings_of(config)?;
    fs::create_dir_all(output_dir)?;
    fs::write(output_dir.join("config.toml"), config.to_toml())?;
    let hash = config.config_hash();

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut failures = Vec::new();
    for setting in &settings {
        for offset in 0..config.n_seeds as u64 {
            let seed = config.base_seed + offset;
            match run_cell(config, setting, seed, output_dir, &hash) {
                Ok(mut cell_rows) => rows.append(&mut cell_rows),
                Err(e) => failures.push((setting.label.clone(), seed, e.to_string())),
            }
        }
    }

    let mut aggregates = BTreeMap::new();
    for setting_label in rows
        .iter()
        .map(|r| r.setting_label.clone())
        .collect::<BTreeSetCompat>()
    {
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| r.setting_label == setting_label)
            .map(|r| r.final_accuracy)
            .collect();
        if !accs.is_empty() {
            aggregates.insert(setting_label, stats_of(&accs));
        }
    }

    write_results_csv(&rows, &output_dir.join("results.csv"))?;
    let outcome = ExperimentOutcome {
        experiment_id: config.experiment_id.clone(),
        config_hash: hash,
        rows,
        aggregates,
        failures,
        output_dir: output_dir.to_path_buf(),
    };
    let tmp = output_dir.join("report.json.tmp");
    fs::write(
        &tmp,
        serde_json::to_vec_pretty(&outcome).expect("outcome serializes"),
    )?;
    fs::rename(tmp, output_dir.join("report.json"))?;
    Ok(outcome)
}

type BTreeSetCompat = std::collections::BTreeSet<String>;

fn row_from_record(
    config: &ExperimentConfig,
    setting: &Setting,
    label: &str,
    seed: u64,
    record: &RunRecord,
    hash: &str,
) -> ResultRow {
    ResultRow {
        experiment_id: config.experiment_id.clone(),
        kind: config.kind.name().to_string(),
        setting_label: label.to_string(),
        n_primitives: setting.n_primitives,
        n_examples: setting.n_examples,
        scheme: setting.scheme.clone(),
        arch: setting.model.arch.to_string(),
        embedding_size: setting.model.embedding_size,
        seed,
        final_accuracy: record.final_test_accuracy.unwrap_or(f64::NAN),
        train_size: record.train_size,
        wall_clock_secs: record.wall_clock_secs,
        config_hash: hash.to_string(),
    }
}

fn run_cell(
    config: &ExperimentConfig,
    setting: &Setting,
    seed: u64,
    output_dir: &Path,
    hash: &str,
) -> Result<Vec<ResultRow>, HarnessError> {
    if matches!(setting.task, SettingTask::Transfer) {
        return run_transfer_cell(config, setting, seed, output_dir, hash);
    }
    let dir = cell_dir(output_dir, &setting.label, seed);
    if let Some(record) = load_record(&dir) {
        let mut rows = vec![row_from_record(
            config,
            setting,
            &setting.label,
            seed,
            &record,
            hash,
        )];
        rows[0].train_size = record.train_size;
        return Ok(rows);
    }

    let split = build_split_for(&setting.task, seed)?;
    let (model, record) = run_single(&split, &setting.model, &config.train, seed)?;
    store_record(&dir, &record)?;
    save_checkpoint(&model, &dir.join("checkpoint.slck"))?;
    if setting.analyze {
        let artifacts = analyze_model(&model, &split)?;
        let tmp = dir.join("analysis.json.tmp");
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(&artifacts).expect("artifacts serialize"),
        )?;
        fs::rename(tmp, dir.join("analysis.json"))?;
        write_tsne_csv(&artifacts, &dir.join("tsne.csv"))?;
    }
    Ok(vec![row_from_record(
        config,
        setting,
        &setting.label,
        seed,
        &record,
        hash,
    )])
}

fn run_transfer_cell(
    config: &ExperimentConfig,
    setting: &Setting,
    seed: u64,
    output_dir: &Path,
    hash: &str,
) -> Result<Vec<ResultRow>, HarnessError> {
    let phases = ["pretrain", "frozen", "full"];
    let dirs: Vec<PathBuf> = phases
        .iter()
        .map(|p| cell_dir(output_dir, &format!("{}-{p}", setting.label), seed))
        .collect();
    if let (Some(a), Some(b), Some(c)) = (
        load_record(&dirs[0]),
        load_record(&dirs[1]),
        load_record(&dirs[2]),
    ) {
        return Ok(phases
            .iter()
            .zip([a, b, c])
            .map(|(p, r)| {
                row_from_record(config, setting, &format!("{}-{p}", setting.label), seed, &r, hash)
            })
            .collect());
    }

    let (pretrain_split, finetune_split) = build_transfer_pair(seed)?;
    let pre_cfg = config.pretrain.clone().unwrap_or_else(|| config.train.clone());
    let (pretrained, pre_record) = run_single(&pretrain_split, &setting.model, &pre_cfg, seed)?;
    store_record(&dirs[0], &pre_record)?;
    save_checkpoint(&pretrained, &dirs[0].join("checkpoint.slck"))?;

    let mut outcomes = vec![pre_record];
    for (i, mask) in [
        FreezeMask::freeze_encoder_decoder(),
        FreezeMask::all_trainable(),
    ]
    .into_iter()
    .enumerate()
    {
        let mut model = crate::model::load_checkpoint(&dirs[0].join("checkpoint.slck"))?;
        let cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let record = finetune(&mut model, &finetune_split, &cfg, mask)?;
        store_record(&dirs[i + 1], &record)?;
        save_checkpoint(&model, &dirs[i + 1].join("checkpoint.slck"))?;
        outcomes.push(record);
    }
    Ok(phases
        .iter()
        .zip(outcomes)
        .map(|(p, r)| {
            row_from_record(config, setting, &format!("{}-{p}", setting.label), seed, &r, hash)
        })
        .collect())
}

/// Embedding-distance and t-SNE artifacts for a trained model.
pub fn analyze_model(
    model: &Seq2SeqModel,
    split: &Split,
) -> Result<AnalysisArtifacts, HarnessError> {
    let isolated = split
        .isolated
        .first()
        .ok_or_else(|| HarnessError::Other("split has no isolated primitive".into()))?;
    let isolated_surfaces: Vec<String> =
        split.isolated.iter().map(|p| p.surface.clone()).collect();
    // Example primitives: single-token vocabulary words that are neither
    // function words nor isolated (reconstructed from the train set's
    // definitions).
    let mut example_prims: Vec<String> = split
        .train
        .iter()
        .filter(|e| e.kind == crate::grammar::ExampleKind::PrimitiveDefinition)
        .map(|e| e.input.tokens()[0].clone())
        .filter(|t| !isolated_surfaces.contains(t))
        .collect();
    example_prims.sort_unstable();
    example_prims.dedup();

    let all_examples = embedding_distance_report(model, &isolated.surface, &example_prims)
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    let original: Vec<String> = example_prims
        .iter()
        .filter(|p| ["walk", "look", "run", "dax", "lug", "wif"].contains(&p.as_str()))
        .cloned()
        .collect();
    let original_three = embedding_distance_report(
        model,
        &isolated.surface,
        if original.is_empty() {
            &example_prims
        } else {
            &original
        },
    )
    .map_err(|e| HarnessError::Other(e.to_string()))?;

    // t-SNE over every content token of the source vocabulary.
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for token in model.src_vocab().tokens().iter().skip(3) {
        let role = if isolated_surfaces.contains(token) {
            "isolated"
        } else if example_prims.contains(token) {
            "example"
        } else {
            "non-primitive"
        };
        labels.push((token.clone(), role.to_string()));
        vectors.push(
            model
                .token_embedding_of(crate::model::EmbeddingSide::Source, token)
                .map_err(|e| HarnessError::Other(e.to_string()))?,
        );
    }
    let tsne_cfg = TsneConfig {
        perplexity: 5.0f64.min(vectors.len() as f64 / 2.0),
        ..TsneConfig::default()
    };
    let projected = tsne_project(&vectors, &tsne_cfg)
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    let tsne = labels
        .into_iter()
        .zip(projected.coords)
        .map(|((token, role), (x, y))| (token, role, x, y))
        .collect();

    Ok(AnalysisArtifacts {
        all_examples,
        original_three,
        tsne,
    })
}

fn write_tsne_csv(artifacts: &AnalysisArtifacts, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Other(e.to_string()))?;
    w.write_record(["token", "role", "x", "y"])
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    for (token, role, x, y) in &artifacts.tsne {
        w.write_record([token.as_str(), role.as_str(), &x.to_string(), &y.to_string()])
            .map_err(|e| HarnessError::Other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
