use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domains::{AutoencoderTraining, DomainSpec, WorldParams};
use crate::error::{Error, Result};
use crate::runtime::{AttentionParams, IgnitionParams};
use crate::translate::{check_bottleneck, GlwSchedule, Metric, TranslatorMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub world: WorldParams,
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub modules: ModuleConfig,
    #[serde(default)]
    pub translator: TranslatorConfig,
    #[serde(default)]
    pub attention: AttentionParams,
    #[serde(default)]
    pub ignition: IgnitionParams,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleConfig {
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Rows `0..train_rows` train modules and translators; the rest are
    /// held out.
    #[serde(default = "default_train_rows")]
    pub train_rows: usize,
    #[serde(default)]
    pub training: AutoencoderTraining,
}

fn default_latent() -> usize {
    16
}
fn default_train_rows() -> usize {
    1500
}

impl Default for ModuleConfig {
    fn default() -> Self {
        ModuleConfig {
            latent_dim: default_latent(),
            train_rows: default_train_rows(),
            training: AutoencoderTraining::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorConfig {
    /// Workspace dimension; defaults to the largest module latent dimension.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: TranslatorMode,
    #[serde(default)]
    pub schedule: GlwSchedule,
    /// Matched training rows given to every module pair; 0 is the
    /// unsupervised regime.
    #[serde(default)]
    pub pairs: usize,
}

fn default_mode() -> TranslatorMode {
    TranslatorMode::Mlp
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            dim: None,
            mode: default_mode(),
            schedule: GlwSchedule::default(),
            pairs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub tick: u64,
    /// Replaces the workspace query from this tick on.
    #[serde(default)]
    pub query: Option<Vec<f64>>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub module: String,
    /// World sample whose observation the module perceives.
    pub sample: usize,
    #[serde(default)]
    pub salience: f64,
    #[serde(default)]
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_gallery")]
    pub gallery: usize,
    #[serde(default)]
    pub metric: Metric,
    /// Pair counts compared by the alignment suite.
    #[serde(default = "default_supervised_pairs")]
    pub supervised_pairs: usize,
    #[serde(default)]
    pub grounding: GroundingConfig,
    #[serde(default)]
    pub ignition_sweep: SweepConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_gallery() -> usize {
    500
}
fn default_supervised_pairs() -> usize {
    32
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: default_seeds(),
            gallery: default_gallery(),
            metric: Metric::default(),
            supervised_pairs: default_supervised_pairs(),
            grounding: GroundingConfig::default(),
            ignition_sweep: SweepConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingConfig {
    /// Module whose observations are corrupted and classified; defaults to
    /// the first domain.
    #[serde(default)]
    pub target: Option<String>,
    /// Module whose broadcast copy augments the target; defaults to the
    /// second domain.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default = "default_noise_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_classifier_epochs")]
    pub classifier_epochs: usize,
}

fn default_noise_levels() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 1.0]
}
fn default_classifier_epochs() -> usize {
    300
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            target: None,
            source: None,
            noise_levels: default_noise_levels(),
            classifier_epochs: default_classifier_epochs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_grid")]
    pub points: usize,
    /// Ignition parameters for the sweep; the scenario's when absent.
    #[serde(default)]
    pub ignition: Option<IgnitionParams>,
    /// World sample broadcast before the sweep.
    #[serde(default)]
    pub sample: Option<usize>,
}

fn default_grid() -> usize {
    101
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            points: default_grid(),
            ignition: None,
            sample: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn module_index(&self, id: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| Error::Config(format!("unknown module id `{id}`")))
    }

    pub fn latent_dims(&self) -> Vec<usize> {
        vec![self.modules.latent_dim; self.domains.len()]
    }

    pub fn workspace_dim(&self) -> usize {
        self.translator
            .dim
            .unwrap_or_else(|| self.latent_dims().into_iter().max().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.domains.len() < 2 {
            return cfg_err("at least two domains are required".into());
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(d.id.as_str()) {
                return cfg_err(format!("duplicate domain id `{}`", d.id));
            }
            if d.obs_dim == 0 {
                return cfg_err(format!("domain `{}` has obs_dim 0", d.id));
            }
        }
        let w = &self.world;
        if w.k == 0 || w.n_clusters == 0 {
            return cfg_err("world needs k >= 1 and n_clusters >= 1".into());
        }
        if self.modules.latent_dim == 0 {
            return cfg_err("latent_dim must be >= 1".into());
        }
        if self.modules.train_rows < 2 || self.modules.train_rows >= w.n_samples {
            return cfg_err(format!(
                "train_rows must lie in 2..{} (n_samples), got {}",
                w.n_samples, self.modules.train_rows
            ));
        }
        check_bottleneck(&self.latent_dims(), self.workspace_dim())
            .map_err(|e| Error::Config(e.to_string()))?;
        self.attention.validate()?;
        self.ignition.validate()?;
        if let Some(p) = &self.eval.ignition_sweep.ignition {
            p.validate()?;
        }
        if self.eval.ignition_sweep.points < 2 {
            return cfg_err("ignition sweep needs at least 2 points".into());
        }
        if self.translator.pairs > self.modules.train_rows || self.eval.supervised_pairs > self.modules.train_rows {
            return cfg_err("pair count exceeds training rows".into());
        }
        let mut last: Option<u64> = None;
        for entry in &self.timeline {
            if last.is_some_and(|l| entry.tick <= l) {
                return cfg_err(format!("timeline ticks must strictly increase (tick {})", entry.tick));
            }
            last = Some(entry.tick);
            if let Some(q) = &entry.query {
                if q.len() != self.attention.d_k {
                    return cfg_err(format!("query at tick {} has length {}, d_k is {}", entry.tick, q.len(), self.attention.d_k));
                }
            }
            for e in &entry.events {
                self.module_index(&e.module)?;
                if e.sample >= w.n_samples {
                    return cfg_err(format!("event sample {} outside world of {}", e.sample, w.n_samples));
                }
                if !(0.0..=1.0).contains(&e.salience) || !(0.0..=1.0).contains(&e.u) {
                    return cfg_err(format!("event at tick {} needs salience and u in [0,1]", entry.tick));
                }
            }
        }
        let g = &self.eval.grounding;
        for id in [&g.target, &g.source].into_iter().flatten() {
            self.module_index(id)?;
        }
        if g.noise_levels.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return cfg_err("noise levels must be finite and non-negative".into());
        }
        if self.eval.seeds.is_empty() {
            return cfg_err("eval.seeds must not be empty".into());
        }
        let held_out = w.n_samples - self.modules.train_rows;
        if self.eval.gallery == 0 || self.eval.gallery > held_out {
            return cfg_err(format!("gallery must lie in 1..={held_out} held-out rows"));
        }
        Ok(())
    }
}
