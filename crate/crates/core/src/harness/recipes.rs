//! Shipped experiment recipes with fully resolved defaults. Axis values that
//! the source figures only show graphically are editable defaults here, not
//! constants of the artifact.

use super::{ExperimentConfig, ExperimentKind, HarnessError};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

fn scan_transformer_train() -> TrainConfig {
    TrainConfig::new(5e-4, 128, 150, 0.1)
}

fn scan_lstm_train() -> TrainConfig {
    TrainConfig::new(8e-3, 256, 150, 0.1)
}

fn colors_lstm_train() -> TrainConfig {
    TrainConfig::new(8e-3, 1, 150, 0.1)
}

fn base(id: &str, kind: ExperimentKind, model: ModelConfig, train: TrainConfig) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: id.to_string(),
        kind,
        n_primitives_axis: None,
        schemes: None,
        examples_axis: None,
        embedding_sizes: None,
        complexities: None,
        n_isolated: None,
        size_cap: None,
        random_split_sanity: false,
        colors: false,
        model,
        train,
        pretrain: None,
        n_seeds: 5,
        base_seed: 0,
    }
}

/// All shipped recipe names, in presentation order.
pub fn list_recipes() -> Vec<&'static str> {
    vec![
        "fig2-scan-transformer",
        "fig2-scan-lstm",
        "fig2-colors-lstm",
        "fig3a-distributions",
        "fig3b-grid",
        "grid-cell-50x40",
        "transfer-freeze",
        "fig7-capacity",
        "implicit-c1",
        "implicit-c2",
        "implicit-c3",
        "implicit-c4",
        "multi-isolated-10",
        "remap-jump-walk",
        "fig4-embeddings-transformer",
        "fig4-embeddings-lstm",
    ]
}

/// Resolves a recipe to its full configuration.
pub fn recipe(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let cfg = match name {
        "fig2-scan-transformer" => {
            let mut c = base(
                name,
                ExperimentKind::Injection,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.n_primitives_axis = Some(vec![3, 10, 25, 50, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        "fig2-scan-lstm" => {
            let mut c = base(
                name,
                ExperimentKind::Injection,
                ModelConfig::scan_lstm(0, 0),
                scan_lstm_train(),
            );
            c.n_primitives_axis = Some(vec![3, 10, 25, 50, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        "fig2-colors-lstm" => {
            let mut c = base(
                name,
                ExperimentKind::Injection,
                ModelConfig::colors_lstm(0, 0),
                colors_lstm_train(),
            );
            c.n_primitives_axis = Some(vec![3, 13, 23, 53]);
            c.colors = true;
            c
        }
        "fig3a-distributions" => {
            let mut c = base(
                name,
                ExperimentKind::Distribution,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.schemes = Some(vec![
                "uniform".into(),
                "linear".into(),
                "quadratic".into(),
                "skewed".into(),
            ]);
            c.n_primitives_axis = Some(vec![10, 30, 50]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        "fig3b-grid" => {
            let mut c = base(
                name,
                ExperimentKind::Grid,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.n_primitives_axis = Some(vec![10, 25, 50, 100]);
            c.examples_axis = Some(vec![10, 40, 100, 200]);
            c
        }
        "grid-cell-50x40" => {
            let mut c = base(
                name,
                ExperimentKind::Grid,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.n_primitives_axis = Some(vec![50]);
            c.examples_axis = Some(vec![40]);
            c
        }
        "transfer-freeze" => {
            let mut c = base(
                name,
                ExperimentKind::Transfer,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.pretrain = Some(scan_transformer_train());
            c.n_seeds = 3;
            c
        }
        "fig7-capacity" => {
            let mut c = base(
                name,
                ExperimentKind::Capacity,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.embedding_sizes = Some(vec![64, 128, 256]);
            c.n_primitives_axis = Some(vec![10, 50, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c.random_split_sanity = true;
            c
        }
        "implicit-c1" | "implicit-c2" | "implicit-c3" | "implicit-c4" => {
            let complexity: u8 = name.as_bytes()[name.len() - 1] - b'0';
            let mut c = base(
                name,
                ExperimentKind::Implicit,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.complexities = Some(vec![complexity]);
            c.n_primitives_axis = Some(vec![3, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        "multi-isolated-10" => {
            let mut c = base(
                name,
                ExperimentKind::MultiIsolated,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.n_isolated = Some(10);
            c
        }
        "remap-jump-walk" => base(
            name,
            ExperimentKind::Remap,
            ModelConfig::scan_transformer(0, 0),
            scan_transformer_train(),
        ),
        "fig4-embeddings-transformer" => {
            let mut c = base(
                name,
                ExperimentKind::EmbeddingAnalysis,
                ModelConfig::scan_transformer(0, 0),
                scan_transformer_train(),
            );
            c.n_primitives_axis = Some(vec![3, 10, 50, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        "fig4-embeddings-lstm" => {
            let mut c = base(
                name,
                ExperimentKind::EmbeddingAnalysis,
                ModelConfig::scan_lstm(0, 0),
                scan_lstm_train(),
            );
            c.n_primitives_axis = Some(vec![3, 10, 50, 100]);
            c.size_cap = Some(crate::dataset::ORIGINAL_SCAN_CAP);
            c
        }
        other => return Err(HarnessError::UnknownRecipe(other.to_string())),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Human-readable resolved description of a recipe.
pub fn describe_recipe(name: &str) -> Result<String, HarnessError> {
    let cfg = recipe(name)?;
    Ok(format!(
        "# recipe {name} (config hash {})\n{}",
        cfg.config_hash(),
        cfg.to_toml()
    ))
}
