//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use condor_core::gateway::BackendPolicy;
use condor_core::prompts::Difficulty;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    /// Fixed RFC 3339 timestamp stamped on trees and records.
    pub created_at: Option<String>,
    pub backend: BackendConfig,
    pub wkt: WktConfig,
    pub synth: SynthConfig,
    pub refine: RefineConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: Option<String>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub mock: bool,
    pub policy: BackendPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model_id: "mock-model".into(),
            temperature: 0.8,
            max_tokens: 2048,
            mock: false,
            policy: BackendPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WktConfig {
    pub roots: Option<PathBuf>,
    pub scraped: Vec<PathBuf>,
    pub depth: u32,
    pub fanout: usize,
}

impl Default for WktConfig {
    fn default() -> Self {
        Self { roots: None, scraped: Vec::new(), depth: 2, fanout: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tag_proportion: f64,
    pub tasks: usize,
    pub difficulties: Vec<Difficulty>,
    pub exemplars_en: Option<PathBuf>,
    pub exemplars_zh: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tag_proportion: 1.0,
            tasks: 7,
            difficulties: Difficulty::ALL.to_vec(),
            exemplars_en: None,
            exemplars_zh: None,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub enabled: bool,
    pub rounds: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { enabled: true, rounds: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub tree: Option<PathBuf>,
    pub void: Option<PathBuf>,
    pub refine: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&raw).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.wkt.roots,
            &mut self.synth.exemplars_en,
            &mut self.synth.exemplars_zh,
            &mut self.synth.templates_dir,
            &mut self.output.tree,
            &mut self.output.void,
            &mut self.output.refine,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.wkt.scraped.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = self.synth.tag_proportion;
        if !(p > 0.0 && p <= 1.0) {
            return Err(format!("synth.tag_proportion {p} is outside (0, 1]"));
        }
        if !(1..=7).contains(&self.synth.tasks) {
            return Err(format!("synth.tasks {} is outside 1..=7", self.synth.tasks));
        }
        if self.synth.difficulties.is_empty() {
            return Err("synth.difficulties is empty".into());
        }
        if self.refine.rounds == 0 {
            return Err("refine.rounds must be at least 1".into());
        }
        if self.wkt.fanout == 0 {
            return Err("wkt.fanout must be at least 1".into());
        }
        self.backend.policy.validate().map_err(|e| e.to_string())?;
        if let Some(ts) = &self.created_at {
            condor_core::Clock::parse_fixed(ts).map_err(|e| format!("created_at `{ts}`: {e}"))?;
        }
        Ok(())
    }
}
