//! Run configuration: one JSON file naming the scenario and every module section.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use tpet_core::baselines::FixedTimePlan;
use tpet_core::caf::CafConfig;
use tpet_core::episode::EpisodeSettings;
use tpet_core::evolution::EvolutionConfig;
use tpet_core::network::{load_flows, load_network, FlowSpec, RoadNetwork};
use tpet_core::sim::SimConfig;
use tpet_core::ssa::SsaConfig;
use tpet_llm::EngineSettings;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: PathBuf,
    flows: PathBuf,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    traffic_seed: Option<u64>,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    ssa: SsaConfig,
    #[serde(default = "default_horizon")]
    horizon: u64,
    #[serde(default)]
    caf: CafConfig,
    #[serde(default)]
    evolution: EvolutionConfig,
    #[serde(default)]
    engine: EngineSettings,
    #[serde(default)]
    fixed_time_plan: Option<FixedTimePlan>,
    /// Extra policy files for `compare`.
    #[serde(default)]
    policies: Vec<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_horizon() -> u64 {
    EpisodeSettings::default().horizon
}

/// Loaded and validated run configuration. Paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network_path: PathBuf,
    pub flows_path: PathBuf,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// When set, `simulate` and `compare` draw arrivals from this seed and
    /// the listed seeds only drive controller randomness.
    pub traffic_seed: Option<u64>,
    pub episode: EpisodeSettings,
    pub caf: CafConfig,
    pub evolution: EvolutionConfig,
    pub engine: EngineSettings,
    pub fixed_time_plan: Option<FixedTimePlan>,
    pub policies: Vec<PathBuf>,
    pub network: RoadNetwork,
    pub flows: FlowSpec,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let invalid = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
        let text = read(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        // Evolution evaluates on the global seeds unless it names its own.
        let own_eval_seeds = value.pointer("/evolution/eval_seeds").is_some();
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));

        let network_path = resolve(base, &raw.network);
        let flows_path = resolve(base, &raw.flows);
        let network = load_network(&read(&network_path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", network_path.display())))?;
        let flows = load_flows(&read(&flows_path)?, &network)
            .map_err(|e| CliError::Validation(format!("{}: {e}", flows_path.display())))?;

        let mut evolution = raw.evolution;
        if !own_eval_seeds {
            evolution.eval_seeds = raw.seeds.clone();
        }
        let cfg = Self {
            output_dir: resolve(base, &raw.output_dir),
            policies: raw.policies.iter().map(|p| resolve(base, p)).collect(),
            network_path,
            flows_path,
            seeds: raw.seeds,
            traffic_seed: raw.traffic_seed,
            episode: EpisodeSettings {
                sim: raw.sim,
                ssa: raw.ssa,
                horizon: raw.horizon,
            },
            caf: raw.caf,
            evolution,
            engine: raw.engine,
            fixed_time_plan: raw.fixed_time_plan,
            network,
            flows,
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        self.episode.validate().map_err(|e| e.to_string())?;
        self.caf.validate().map_err(|e| e.to_string())?;
        self.evolution.validate().map_err(|e| e.to_string())?;
        self.engine.validate().map_err(|e| e.to_string())?;
        if let Some(plan) = &self.fixed_time_plan {
            for inter in &self.network.intersections {
                let min_green = self.episode.sim.min_green.unwrap_or(inter.min_green);
                plan.validate(inter.phase_count(), min_green)
                    .map_err(|e| format!("fixed_time_plan at {}: {e}", inter.id))?;
            }
        }
        for p in &self.policies {
            if !p.is_file() {
                return Err(format!("policy file {} not found", p.display()));
            }
        }
        Ok(())
    }

    /// Simulator seed of the episode replicated under `seed`.
    pub fn episode_seed(&self, seed: u64) -> u64 {
        self.traffic_seed.unwrap_or(seed)
    }

    /// `--seed` flags replace the global seeds and the evolution seeds.
    pub fn override_seeds(&mut self, seeds: &[u64]) {
        if !seeds.is_empty() {
            self.seeds = seeds.to_vec();
            self.evolution.eval_seeds = seeds.to_vec();
        }
    }
}
