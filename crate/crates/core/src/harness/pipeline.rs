use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::domains::{
    fit_autoencoder, generate_world, render_domain, DomainData, SpecializedModule, World,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng, Tensor};
use crate::runtime::{
    readout, tick, AttentionBundle, Event, TickContext, TickSummary, Trace, WorkspaceState,
};
use crate::translate::{train_glw, GlwSchedule, GlwTranslator, PairSet, TrainingReport};

/// Pipeline stage, used to attribute failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    World,
    Modules,
    Translator,
    Timeline,
    Evaluation,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for configuration problems, 4 for evaluation, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.stage) {
            (Error::Config(_), _) | (_, Stage::Config) => 2,
            (_, Stage::Evaluation) => 4,
            _ => 3,
        }
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub fn build_world(cfg: &ScenarioConfig, seed: u64) -> Result<World> {
    generate_world(seed, &cfg.world)
}

pub fn render_all(cfg: &ScenarioConfig, world: &World) -> Result<Vec<DomainData>> {
    cfg.domains.iter().map(|d| render_domain(world, d)).collect()
}

fn train_split(d: &DomainData, rows: usize) -> DomainData {
    DomainData {
        renderer: d.renderer.clone(),
        x: d.x.slice_rows(0, rows),
    }
}

/// One autoencoder per domain, each fitted on its own training rows only.
pub fn train_modules(cfg: &ScenarioConfig, data: &[DomainData], seed: u64) -> Result<Vec<SpecializedModule>> {
    let module_seed = derive_seed(seed, "modules");
    data.iter()
        .map(|d| {
            let train = train_split(d, cfg.modules.train_rows);
            fit_autoencoder(&train, cfg.modules.latent_dim, module_seed, &cfg.modules.training)
        })
        .collect()
}

pub fn encode_rows(
    modules: &[SpecializedModule],
    data: &[DomainData],
    start: usize,
    end: usize,
) -> Result<Vec<Tensor>> {
    modules
        .iter()
        .zip(data)
        .map(|(m, d)| m.encode(&d.x.slice_rows(start, end)))
        .collect()
}

/// The same `n` seeded training rows, matched across every module pair.
pub fn make_pairs(train_latents: &[Tensor], n: usize, seed: u64) -> Result<Vec<PairSet>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let rows = train_latents.first().map_or(0, |t| t.rows());
    if n > rows {
        return Err(Error::Config(format!("{n} pairs requested from {rows} training rows")));
    }
    let mut idx = sample(&mut rng(derive_seed(seed, "pairs")), rows, n).into_vec();
    idx.sort_unstable();
    let mut out = Vec::new();
    for i in 0..train_latents.len() {
        for j in i + 1..train_latents.len() {
            out.push(PairSet::new(
                i,
                j,
                train_latents[i].select_rows(&idx),
                train_latents[j].select_rows(&idx),
            )?);
        }
    }
    Ok(out)
}

pub fn fresh_translator(cfg: &ScenarioConfig, ids: &[String], seed: u64) -> Result<GlwTranslator> {
    let spec: Vec<(String, usize)> = ids.iter().map(|id| (id.clone(), cfg.modules.latent_dim)).collect();
    GlwTranslator::new(&spec, cfg.workspace_dim(), cfg.translator.mode, derive_seed(seed, "translator"))
}

pub fn train_translator(
    cfg: &ScenarioConfig,
    ids: &[String],
    train_latents: &[Tensor],
    pairs: &[PairSet],
    seed: u64,
) -> Result<(GlwTranslator, TrainingReport)> {
    let t = fresh_translator(cfg, ids, seed)?;
    let mut schedule: GlwSchedule = cfg.translator.schedule.clone();
    if pairs.is_empty() {
        schedule.weights.sup = 0.0;
    }
    train_glw(&t, train_latents, pairs, &schedule, derive_seed(seed, "glw-train"))
}

/// Everything trained for one seed.
pub struct SeedRun {
    pub seed: u64,
    pub world: World,
    pub data: Vec<DomainData>,
    pub modules: Vec<SpecializedModule>,
    pub train_latents: Vec<Tensor>,
    pub gallery_latents: Vec<Tensor>,
}

impl SeedRun {
    pub fn ids(&self) -> Vec<String> {
        self.modules.iter().map(|m| m.id.clone()).collect()
    }
}

pub fn prepare_seed(cfg: &ScenarioConfig, seed: u64) -> std::result::Result<SeedRun, StageError> {
    let world = build_world(cfg, seed).at(Stage::World)?;
    let data = render_all(cfg, &world).at(Stage::World)?;
    let modules = train_modules(cfg, &data, seed).at(Stage::Modules)?;
    let tr = cfg.modules.train_rows;
    let train_latents = encode_rows(&modules, &data, 0, tr).at(Stage::Modules)?;
    let gallery_latents = encode_rows(&modules, &data, tr, tr + cfg.eval.gallery).at(Stage::Modules)?;
    Ok(SeedRun {
        seed,
        world,
        data,
        modules,
        train_latents,
        gallery_latents,
    })
}

/// Plays the configured timeline tick by tick, reading out every connected
/// module after each tick.
pub fn run_timeline(
    cfg: &ScenarioConfig,
    run: &SeedRun,
    t: &GlwTranslator,
    threads: usize,
) -> Result<(Trace, Vec<TickSummary>)> {
    let mut trace = Trace::new();
    let mut summaries = Vec::new();
    let Some(last) = cfg.timeline.last().map(|e| e.tick) else {
        return Ok((trace, summaries));
    };
    let mut state = WorkspaceState::new(t, cfg.attention.d_k, derive_seed(run.seed, "workspace"));
    let mut bundle = AttentionBundle::new(
        cfg.attention.clone(),
        t.n_modules(),
        t.dim,
        derive_seed(run.seed, "attention"),
    )?;
    let ctx = TickContext {
        translator: t,
        ignition: &cfg.ignition,
        threads,
    };
    let mut entries = cfg.timeline.iter().peekable();
    for step in 0..=last {
        let entry = entries.next_if(|e| e.tick == step);
        let mut events = Vec::new();
        let mut query = None;
        if let Some(entry) = entry {
            query = entry.query.as_deref();
            for e in &entry.events {
                let m = cfg.module_index(&e.module)?;
                let x = run.data[m].x.slice_rows(e.sample, e.sample + 1);
                events.push(Event {
                    module: m,
                    latent: run.modules[m].encode(&x)?.into_data(),
                    salience: e.salience,
                    u: e.u,
                });
            }
        }
        let summary = tick(&mut state, &events, query, &mut bundle, &ctx, &mut trace)?;
        state.step_count -= 1;
        for m in state.connected_ids() {
            readout(&state, m, Some(&run.modules), &mut trace)?;
        }
        state.step_count += 1;
        summaries.push(summary);
    }
    Ok((trace, summaries))
}
