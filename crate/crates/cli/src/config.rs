//! Optional TOML config file. Flags override it; it overrides defaults.

use std::path::Path;

use recmatch::approx::ApproxConfig;
use recmatch::bench::BenchConfig;
use recmatch::equilibrium::SolverConfig;
use recmatch::mf::TrainConfig;
use recmatch::oracle::TatonnementConfig;
use recmatch::recommend::RankKey;
use recmatch::simgen::SimConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub rank_key: Option<String>,
    /// Both directions, unless `train_xy` or `train_yx` is given.
    pub train: Option<TrainConfig>,
    pub train_xy: Option<TrainConfig>,
    pub train_yx: Option<TrainConfig>,
    pub solver: SolverConfig,
    /// Present means the sampled solver is the default.
    pub approx: Option<ApproxConfig>,
    pub sim: SimConfig,
    pub bench: BenchConfig,
    pub oracle: TatonnementConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn train_configs(&self) -> (TrainConfig, TrainConfig) {
        let base = self.train.clone().unwrap_or_default();
        (
            self.train_xy.clone().unwrap_or_else(|| base.clone()),
            self.train_yx.clone().unwrap_or(base),
        )
    }

    pub fn rank_key(&self) -> Result<Option<RankKey>, String> {
        self.rank_key
            .as_deref()
            .map(|s| s.parse().map_err(|e| format!("rank_key: {e}")))
            .transpose()
    }
}
