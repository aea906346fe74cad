use std::path::{Path, PathBuf};

use gramrac_core::pipeline::RunConfig;
use gramrac_core::rerank::RerankConfig;
use serde::Deserialize;

use crate::error::{usage, CliResult};

/// Contents of `--config`; every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub run: RunConfig,
    pub runs_dir: Option<PathBuf>,
    pub rerankers: Vec<RerankConfig>,
    pub feature_data: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> CliResult<AppConfig> {
    let Some(path) = path else {
        return Ok(AppConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}
