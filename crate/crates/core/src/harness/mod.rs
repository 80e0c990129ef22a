//! Scenario configuration, the end-to-end pipeline, evaluation suites,
//! checkpoints and the artifact directory layout.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod pipeline;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::ScenarioConfig;
pub use pipeline::{prepare_seed, AtStage, SeedRun, Stage, StageError};

use crate::domains::csv::world_to_csv;
use crate::error::Result;
use crate::runtime::{summaries_to_csv, TickSummary};
use crate::translate::{EpochLosses, GlwTranslator};
use eval::{AlignmentSuite, GroundingSuite, IgnitionSweep, PairScore};

/// Output directory whose files are all listed, with digests, in `MANIFEST`.
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        std::fs::write(self.dir.join(name), bytes)?;
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.entries.retain(|(n, _)| n != name);
        self.entries.push((name.to_string(), digest));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// Writes `MANIFEST`: a status line, then `sha256  name` per artifact.
    pub fn finish(self, failure: Option<&StageError>) -> Result<()> {
        let mut text = match failure {
            None => "status: ok\n".to_string(),
            Some(e) => format!("status: failed at {}: {}\n", e.stage, e.error),
        };
        for (name, digest) in &self.entries {
            text.push_str(&format!("{digest}  {name}\n"));
        }
        std::fs::write(self.dir.join("MANIFEST"), text)?;
        Ok(())
    }
}

/// How far `run_pipeline` goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Until {
    World,
    Modules,
    Translator,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleMetrics {
    pub id: String,
    pub gallery_reconstruction_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatorMetrics {
    pub pairs: usize,
    pub schedule_digest: String,
    pub steps: u64,
    pub final_epoch: Option<EpochLosses>,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub modules: Vec<ModuleMetrics>,
    pub translator: TranslatorMetrics,
    pub alignment: Vec<PairScore>,
    pub ticks: Vec<TickSummary>,
}

/// Trains and runs one seed, writing each artifact as soon as it exists so a
/// failure leaves everything produced so far plus a `MANIFEST` naming the
/// failing stage.
pub fn run_pipeline(
    cfg: &ScenarioConfig,
    seed: u64,
    out: &Path,
    until: Until,
    threads: usize,
) -> std::result::Result<(), StageError> {
    let mut art = Artifacts::create(out).at(Stage::Output)?;
    let outcome = pipeline_body(cfg, seed, &mut art, until, threads);
    art.finish(outcome.as_ref().err()).at(Stage::Output)?;
    outcome
}

fn pipeline_body(
    cfg: &ScenarioConfig,
    seed: u64,
    art: &mut Artifacts,
    until: Until,
    threads: usize,
) -> std::result::Result<(), StageError> {
    if until == Until::World {
        let world = pipeline::build_world(cfg, seed).at(Stage::World)?;
        return art.write("world.csv", world_to_csv(&world).at(Stage::Output)?).at(Stage::Output);
    }
    let run = prepare_seed(cfg, seed)?;
    art.write("world.csv", world_to_csv(&run.world).at(Stage::Output)?).at(Stage::Output)?;
    art.write("modules.json", checkpoint::modules_to_json(&run.modules).at(Stage::Output)?)
        .at(Stage::Output)?;
    if until == Until::Modules {
        return Ok(());
    }
    let (t, tm) = translator_stage(cfg, &run)?;
    let digest = cfg.translator.schedule.digest();
    art.write("translator.json", checkpoint::translator_to_json(&t, &digest).at(Stage::Output)?)
        .at(Stage::Output)?;
    if until == Until::Translator {
        return Ok(());
    }
    let modules = module_metrics(cfg, &run).at(Stage::Evaluation)?;
    let alignment = eval::alignment_table(cfg, &run, &t, threads).at(Stage::Evaluation)?;
    let (trace, ticks) = pipeline::run_timeline(cfg, &run, &t, threads).at(Stage::Timeline)?;
    art.write("trace.jsonl", trace.to_jsonl().at(Stage::Output)?).at(Stage::Output)?;
    art.write("summary.csv", summaries_to_csv(&ticks)).at(Stage::Output)?;
    art.write_json(
        "metrics.json",
        &RunMetrics {
            seed,
            modules,
            translator: tm,
            alignment,
            ticks,
        },
    )
    .at(Stage::Output)
}

fn translator_stage(
    cfg: &ScenarioConfig,
    run: &SeedRun,
) -> std::result::Result<(GlwTranslator, TranslatorMetrics), StageError> {
    let pairs = pipeline::make_pairs(&run.train_latents, cfg.translator.pairs, run.seed).at(Stage::Translator)?;
    let (t, report) =
        pipeline::train_translator(cfg, &run.ids(), &run.train_latents, &pairs, run.seed).at(Stage::Translator)?;
    let tm = TranslatorMetrics {
        pairs: cfg.translator.pairs,
        schedule_digest: cfg.translator.schedule.digest(),
        steps: report.steps,
        final_epoch: report.epochs.last().cloned(),
        loss_curve: report.epochs.iter().map(|e| e.total).collect(),
    };
    Ok((t, tm))
}

fn module_metrics(cfg: &ScenarioConfig, run: &SeedRun) -> Result<Vec<ModuleMetrics>> {
    let tr = cfg.modules.train_rows;
    run.modules
        .iter()
        .zip(&run.data)
        .map(|(m, d)| {
            Ok(ModuleMetrics {
                id: m.id.clone(),
                gallery_reconstruction_mse: m.reconstruction_mse(&d.x.slice_rows(tr, tr + cfg.eval.gallery))?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Alignment,
    Grounding,
    Ignition,
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ignition: Option<Vec<IgnitionSweep>>,
}

/// Runs the chosen suites over `seeds`. Grounding and ignition reuse the
/// unsupervised translator of the alignment suite.
pub fn evaluate(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    suite: Suite,
    threads: usize,
) -> std::result::Result<EvalReport, StageError> {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut aligned = Vec::new();
    let mut grounded = Vec::new();
    let mut sweeps = Vec::new();
    for &seed in seeds {
        let run = prepare_seed(cfg, seed)?;
        let t = if want(Suite::Alignment) {
            let (row, t) = eval::align_seed(cfg, &run, threads)?;
            aligned.push(row);
            t
        } else {
            pipeline::train_translator(cfg, &run.ids(), &run.train_latents, &[], seed)
                .at(Stage::Translator)?
                .0
        };
        if want(Suite::Grounding) {
            grounded.push(eval::grounding_seed(cfg, &run, &t, threads)?);
        }
        if want(Suite::Ignition) {
            sweeps.push(eval::ignition_sweep(cfg, &run, &t, threads).at(Stage::Evaluation)?);
        }
    }
    Ok(EvalReport {
        seeds: seeds.to_vec(),
        alignment: want(Suite::Alignment).then(|| eval::summarize_alignment(cfg, aligned)),
        grounding: want(Suite::Grounding).then(|| eval::summarize_grounding(grounded)),
        ignition: want(Suite::Ignition).then_some(sweeps),
    })
}

/// `evaluate` plus `eval.json` and `MANIFEST` in `out`.
pub fn run_eval(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    suite: Suite,
    out: &Path,
    threads: usize,
) -> std::result::Result<EvalReport, StageError> {
    let mut art = Artifacts::create(out).at(Stage::Output)?;
    let result = evaluate(cfg, seeds, suite, threads)
        .and_then(|report| art.write_json("eval.json", &report).at(Stage::Output).map(|()| report));
    art.finish(result.as_ref().err()).at(Stage::Output)?;
    result
}
