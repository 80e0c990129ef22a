use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::pipeline::{
    make_pairs, train_modules, train_translator, AtStage, SeedRun, Stage, StageError,
};
use crate::domains::{render_domain, ClassifierHead, DomainSpec, Rendering, SpecializedModule};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng, Tensor};
use crate::runtime::{
    broadcast, inject, lowest_fixed_point, par_map, reverberate, IgnitionParams, Trace,
    WorkspaceState,
};
use crate::translate::{procrustes_oracle, retrieval_at_1, GlwTranslator};

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub from: String,
    pub to: String,
    pub trained: f64,
    /// Orthogonal map fitted on observations; only for two linear-orthogonal
    /// domains of equal dimension.
    pub oracle: Option<f64>,
    pub random: f64,
}

fn identity(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Retrieval@1 of a random permutation of the gallery against itself.
fn random_baseline(gallery: &Tensor, seed: u64, cfg: &ScenarioConfig) -> Result<f64> {
    let mut perm = identity(gallery.rows());
    perm.shuffle(&mut rng(seed));
    retrieval_at_1(&gallery.select_rows(&perm), gallery, &identity(gallery.rows()), cfg.eval.metric)
}

fn oracle_applies(a: &DomainSpec, b: &DomainSpec) -> bool {
    a.rendering == Rendering::LinearOrthogonal
        && b.rendering == Rendering::LinearOrthogonal
        && a.obs_dim == b.obs_dim
}

/// Procrustes fitted on training observations, scored on the gallery rows.
pub fn procrustes_retrieval(cfg: &ScenarioConfig, run_x: (&Tensor, &Tensor)) -> Result<f64> {
    let tr = cfg.modules.train_rows;
    let end = tr + cfg.eval.gallery;
    let (xi, xj) = run_x;
    let fit = procrustes_oracle(&xi.slice_rows(0, tr), &xj.slice_rows(0, tr))?;
    let pred = xi.slice_rows(tr, end).matmul(&fit.w)?;
    retrieval_at_1(&pred, &xj.slice_rows(tr, end), &identity(end - tr), cfg.eval.metric)
}

/// Every ordered module pair: translator, oracle where it applies, and the
/// permutation null.
pub fn alignment_table(
    cfg: &ScenarioConfig,
    run: &SeedRun,
    t: &GlwTranslator,
    threads: usize,
) -> Result<Vec<PairScore>> {
    let n = run.modules.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    par_map(pairs.len(), threads, |k| {
        let (i, j) = pairs[k];
        let gallery = &run.gallery_latents[j];
        let predicted = t.translate(i, j, &run.gallery_latents[i])?;
        let trained = retrieval_at_1(&predicted, gallery, &identity(gallery.rows()), cfg.eval.metric)?;
        let (si, sj) = (&cfg.domains[i], &cfg.domains[j]);
        let oracle = if oracle_applies(si, sj) {
            Some(procrustes_retrieval(cfg, (&run.data[i].x, &run.data[j].x))?)
        } else {
            None
        };
        let null_seed = derive_seed(run.seed, &format!("random-baseline/{}/{}", si.id, sj.id));
        Ok(PairScore {
            from: si.id.clone(),
            to: sj.id.clone(),
            trained,
            oracle,
            random: random_baseline(gallery, null_seed, cfg)?,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAlignment {
    pub seed: u64,
    pub unsupervised: Vec<PairScore>,
    pub supervised: Vec<PairScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMedian {
    pub from: String,
    pub to: String,
    pub involves_nonlinear: bool,
    pub unsupervised: f64,
    pub supervised: f64,
    pub oracle: Option<f64>,
    pub random: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSuite {
    pub seeds: Vec<u64>,
    pub supervised_pairs: usize,
    pub per_seed: Vec<SeedAlignment>,
    pub medians: Vec<PairMedian>,
    /// Median over seeds of the per-seed mean across pairs that involve a
    /// nonlinear domain.
    pub nonlinear_unsupervised: Option<f64>,
    pub nonlinear_supervised: Option<f64>,
}

/// Unsupervised and supervised translators for one seed, with their tables.
pub fn align_seed(
    cfg: &ScenarioConfig,
    run: &SeedRun,
    threads: usize,
) -> std::result::Result<(SeedAlignment, GlwTranslator), StageError> {
    let ids = run.ids();
    let (unsup, _) = train_translator(cfg, &ids, &run.train_latents, &[], run.seed).at(Stage::Translator)?;
    let pairs = make_pairs(&run.train_latents, cfg.eval.supervised_pairs, run.seed).at(Stage::Translator)?;
    let (sup, _) = train_translator(cfg, &ids, &run.train_latents, &pairs, run.seed).at(Stage::Translator)?;
    let row = SeedAlignment {
        seed: run.seed,
        unsupervised: alignment_table(cfg, run, &unsup, threads).at(Stage::Evaluation)?,
        supervised: alignment_table(cfg, run, &sup, threads).at(Stage::Evaluation)?,
    };
    Ok((row, unsup))
}

fn nonlinear(cfg: &ScenarioConfig, id: &str) -> bool {
    cfg.domains
        .iter()
        .any(|d| d.id == id && !d.rendering.is_linear())
}

pub fn summarize_alignment(cfg: &ScenarioConfig, per_seed: Vec<SeedAlignment>) -> AlignmentSuite {
    let mut medians = Vec::new();
    if let Some(first) = per_seed.first() {
        for (k, p) in first.unsupervised.iter().enumerate() {
            let col = |f: &dyn Fn(&SeedAlignment) -> f64| median(&per_seed.iter().map(f).collect::<Vec<_>>());
            medians.push(PairMedian {
                from: p.from.clone(),
                to: p.to.clone(),
                involves_nonlinear: nonlinear(cfg, &p.from) || nonlinear(cfg, &p.to),
                unsupervised: col(&|s| s.unsupervised[k].trained),
                supervised: col(&|s| s.supervised[k].trained),
                oracle: p.oracle.map(|_| col(&|s| s.unsupervised[k].oracle.unwrap_or(f64::NAN))),
                random: col(&|s| s.unsupervised[k].random),
            });
        }
    }
    let pooled = |pick: &dyn Fn(&SeedAlignment) -> &Vec<PairScore>| {
        let means: Vec<f64> = per_seed
            .iter()
            .filter_map(|s| {
                let nl: Vec<f64> = pick(s)
                    .iter()
                    .filter(|p| nonlinear(cfg, &p.from) || nonlinear(cfg, &p.to))
                    .map(|p| p.trained)
                    .collect();
                (!nl.is_empty()).then(|| nl.iter().sum::<f64>() / nl.len() as f64)
            })
            .collect();
        (!means.is_empty()).then(|| median(&means))
    };
    AlignmentSuite {
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        supervised_pairs: cfg.eval.supervised_pairs,
        nonlinear_unsupervised: pooled(&|s| &s.unsupervised),
        nonlinear_supervised: pooled(&|s| &s.supervised),
        per_seed,
        medians,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingRow {
    pub noise: f64,
    /// Classifier on the target latent alone.
    pub baseline: f64,
    /// Target latent plus the source module's broadcast copy.
    pub workspace: f64,
    /// Same as `workspace` with an uninformative source domain.
    pub control: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGrounding {
    pub seed: u64,
    pub target: String,
    pub source: String,
    pub rows: Vec<GroundingRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingMedian {
    pub noise: f64,
    pub baseline: f64,
    pub workspace: f64,
    pub control: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingSuite {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedGrounding>,
    pub medians: Vec<GroundingMedian>,
}

fn grounding_modules(cfg: &ScenarioConfig) -> Result<(usize, usize)> {
    let g = &cfg.eval.grounding;
    let target = match &g.target {
        Some(id) => cfg.module_index(id)?,
        None => 0,
    };
    let source = match &g.source {
        Some(id) => cfg.module_index(id)?,
        None => usize::from(target == 0),
    };
    if target == source {
        return Err(Error::Config("grounding target and source must differ".into()));
    }
    Ok((target, source))
}

fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.concat_cols(b)
}

/// `[v_target, c_source]` per row: both modules connected, each injects its
/// own latent, one broadcast, and the source's refreshed copy is read back.
fn broadcast_features(
    t: &GlwTranslator,
    (ti, si): (usize, usize),
    v_target: &Tensor,
    v_source: &Tensor,
    threads: usize,
) -> Result<Tensor> {
    let rows = par_map(v_target.rows(), threads, |r| {
        let mut state = WorkspaceState::new(t, 1, 0);
        state.connected[ti] = true;
        state.connected[si] = true;
        let mut trace = Trace::new();
        inject(&mut state, ti, v_target.row(r), &mut trace)?;
        inject(&mut state, si, v_source.row(r), &mut trace)?;
        broadcast(&mut state, t, 1, &mut trace)?;
        Ok(state.copies[si].clone())
    })?;
    concat(v_target, &Tensor::from_rows(&rows)?)
}

struct Condition<'a> {
    translator: &'a GlwTranslator,
    indices: (usize, usize),
    source: &'a SpecializedModule,
    source_x: &'a Tensor,
}

/// Out-of-distribution grounding for one seed: classifiers are fitted on
/// clean training rows, then tested on gallery rows whose target
/// observations carry extra Gaussian noise.
pub fn grounding_seed(
    cfg: &ScenarioConfig,
    run: &SeedRun,
    translator: &GlwTranslator,
    threads: usize,
) -> std::result::Result<SeedGrounding, StageError> {
    let (ti, si) = grounding_modules(cfg).at(Stage::Config)?;
    let g = &cfg.eval.grounding;
    let tr = cfg.modules.train_rows;
    let end = tr + cfg.eval.gallery;

    // The control swaps the source for a domain that carries no signal.
    let src = &cfg.domains[si];
    let mut noise_spec = DomainSpec::new(format!("{}-noise", src.id), src.obs_dim, Rendering::PureNoise);
    noise_spec.seed = Some(derive_seed(run.seed, "control-domain"));
    let mut control_cfg = cfg.clone();
    control_cfg.domains = vec![cfg.domains[ti].clone(), noise_spec.clone()];
    let noise_data = render_domain(&run.world, &noise_spec).at(Stage::World)?;
    let noise_module = train_modules(&control_cfg, std::slice::from_ref(&noise_data), derive_seed(run.seed, "control"))
        .at(Stage::Modules)?
        .remove(0);
    let noise_train = noise_module.encode(&noise_data.x.slice_rows(0, tr)).at(Stage::Modules)?;
    let ids = vec![cfg.domains[ti].id.clone(), noise_spec.id.clone()];
    let control_latents = vec![run.train_latents[ti].clone(), noise_train];
    let (control_t, _) = train_translator(&control_cfg, &ids, &control_latents, &[], derive_seed(run.seed, "control"))
        .at(Stage::Translator)?;

    let eval = || -> Result<SeedGrounding> {
        let labels = &run.world.labels;
        let train_labels = &labels[..tr];
        let test_labels = &labels[tr..end];
        let epochs = g.classifier_epochs;
        let conditions = [
            Condition { translator, indices: (ti, si), source: &run.modules[si], source_x: &run.data[si].x },
            Condition { translator: &control_t, indices: (0, 1), source: &noise_module, source_x: &noise_data.x },
        ];
        let v_train = &run.train_latents[ti];
        let baseline = ClassifierHead::train(v_train, train_labels, epochs, derive_seed(run.seed, "cls/baseline"))?;
        let mut heads = Vec::new();
        for (k, c) in conditions.iter().enumerate() {
            let src_train = c.source.encode(&c.source_x.slice_rows(0, tr))?;
            let f = broadcast_features(c.translator, c.indices, v_train, &src_train, threads)?;
            heads.push(ClassifierHead::train(&f, train_labels, epochs, derive_seed(run.seed, &format!("cls/{k}")))?);
        }
        let samples = run.world.samples.slice_rows(tr, end);
        let mut rows = Vec::new();
        for &noise in &g.noise_levels {
            let mut renderer = run.data[ti].renderer.clone();
            renderer.spec.noise_std = noise;
            let x = renderer.render(&samples, &format!("ood/{noise}"))?;
            let v = run.modules[ti].encode(&x)?;
            let mut acc = Vec::new();
            for (c, head) in conditions.iter().zip(&heads) {
                let src_test = c.source.encode(&c.source_x.slice_rows(tr, end))?;
                let f = broadcast_features(c.translator, c.indices, &v, &src_test, threads)?;
                acc.push(head.accuracy(&f, test_labels)?);
            }
            rows.push(GroundingRow {
                noise,
                baseline: baseline.accuracy(&v, test_labels)?,
                workspace: acc[0],
                control: acc[1],
            });
        }
        Ok(SeedGrounding {
            seed: run.seed,
            target: cfg.domains[ti].id.clone(),
            source: cfg.domains[si].id.clone(),
            rows,
        })
    };
    eval().at(Stage::Evaluation)
}

pub fn summarize_grounding(per_seed: Vec<SeedGrounding>) -> GroundingSuite {
    let mut medians = Vec::new();
    if let Some(first) = per_seed.first() {
        for (k, r) in first.rows.iter().enumerate() {
            let col = |f: &dyn Fn(&GroundingRow) -> f64| median(&per_seed.iter().map(|s| f(&s.rows[k])).collect::<Vec<_>>());
            medians.push(GroundingMedian {
                noise: r.noise,
                baseline: col(&|r| r.baseline),
                workspace: col(&|r| r.workspace),
                control: col(&|r| r.control),
            });
        }
    }
    GroundingSuite {
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        per_seed,
        medians,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u: f64,
    pub amplitude: f64,
    pub oracle: f64,
    pub iterations: usize,
    pub ignited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgnitionSweep {
    pub params: IgnitionParams,
    pub points: Vec<SweepPoint>,
    pub max_abs_error: f64,
    pub max_slope: f64,
    pub median_slope: f64,
}

/// Final amplitude over a uniform grid of `u` in `[0,1]`, each point
/// reverberating from amplitude 0 after one broadcast of `sample` with every
/// module connected.
pub fn ignition_sweep(
    cfg: &ScenarioConfig,
    run: &SeedRun,
    t: &GlwTranslator,
    threads: usize,
) -> Result<IgnitionSweep> {
    let sweep = &cfg.eval.ignition_sweep;
    let p = sweep.ignition.clone().unwrap_or_else(|| cfg.ignition.clone());
    p.validate()?;
    let sample = sweep.sample.unwrap_or(cfg.modules.train_rows);
    let mut base = WorkspaceState::new(t, 1, derive_seed(run.seed, "sweep"));
    let mut trace = Trace::new();
    for m in 0..t.n_modules() {
        base.connected[m] = true;
        let v = run.modules[m].encode(&run.data[m].x.slice_rows(sample, sample + 1))?;
        inject(&mut base, m, v.data(), &mut trace)?;
    }
    broadcast(&mut base, t, 1, &mut trace)?;
    let n = sweep.points;
    let points = par_map(n, threads, |k| {
        let u = k as f64 / (n - 1) as f64;
        let mut state = base.clone();
        state.amplitude = 0.0;
        let out = reverberate(&mut state, t, &p, u, 1, &mut Trace::new())?;
        Ok(SweepPoint {
            u,
            amplitude: out.amplitude,
            oracle: lowest_fixed_point(&p, u),
            iterations: out.iterations,
            ignited: out.ignited,
        })
    })?;
    let max_abs_error = points
        .iter()
        .map(|q| (q.amplitude - q.oracle).abs())
        .fold(0.0, f64::max);
    let slopes: Vec<f64> = points
        .windows(2)
        .map(|w| ((w[1].amplitude - w[0].amplitude) / (w[1].u - w[0].u)).abs())
        .collect();
    Ok(IgnitionSweep {
        max_slope: slopes.iter().cloned().fold(0.0, f64::max),
        median_slope: median(&slopes),
        params: p,
        points,
        max_abs_error,
    })
}
