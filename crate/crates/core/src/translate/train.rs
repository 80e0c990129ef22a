use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::align::AlignConfig;
use super::translator::{covariance_on_tape, GlwTranslator, LossWeights, PairSet};
use crate::error::{Error, Result};
use crate::numerics::{collect_grads, derive_seed, rng, OptimConfig, Optimizer, Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Keep the translator's current parameters.
    AsGiven,
    /// Start from moment-canonical linear maps (see [`super::init`]).
    MomentCanonical,
    /// Start from affine maps fitted on label-free correspondences with
    /// module 0 (see [`super::align`]).
    SelfLearned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlwSchedule {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_init")]
    pub init: InitStrategy,
    #[serde(default)]
    pub align: AlignConfig,
}

fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_init() -> InitStrategy {
    InitStrategy::SelfLearned
}

impl Default for GlwSchedule {
    fn default() -> Self {
        GlwSchedule {
            epochs: 200,
            batch_size: default_batch(),
            lr: default_lr(),
            weights: LossWeights::default(),
            init: default_init(),
            align: AlignConfig::default(),
        }
    }
}

impl GlwSchedule {
    /// Stable digest of the schedule, recorded in checkpoints.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("schedule serializes");
        let hash = Sha256::digest(&json);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-epoch means of the unweighted loss components and the weighted total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub total: f64,
    pub cycle: f64,
    pub demi: f64,
    pub dist: f64,
    pub sup: f64,
}

impl EpochLosses {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.cycle * self.cycle + w.demi * self.demi + w.dist * self.dist + w.sup * self.sup
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochLosses>,
    pub steps: u64,
}

/// Cycles through a shuffled index order, reshuffling on each pass.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            order: (0..n).collect(),
            pos: 0,
            rng: rng(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

struct StepLosses {
    total: Var,
    cycle: f64,
    demi: f64,
    dist: f64,
    sup: f64,
}

fn step_losses(
    tape: &mut Tape,
    t: &super::translator::BoundTranslator,
    batches: &[Tensor],
    pairs: &[(usize, usize, Tensor, Tensor)],
    w: &LossWeights,
) -> Result<StepLosses> {
    let n = batches.len();
    let mut inputs = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for (i, b) in batches.iter().enumerate() {
        let v = tape.constant(b.clone())?;
        codes.push(t.encode(tape, i, v)?);
        inputs.push(v);
    }

    let mut cycle_terms = Vec::new();
    let mut demi_terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let there = t.decode(tape, j, codes[i])?;
            let back = if i == j {
                there
            } else {
                let zj = t.encode(tape, j, there)?;
                t.decode(tape, i, zj)?
            };
            let diff = tape.sub(back, inputs[i])?;
            let l = tape.mean_row_sq_norm(diff)?;
            if i == j {
                demi_terms.push(l);
            } else {
                cycle_terms.push(l);
            }
        }
    }
    let mut sup_terms = Vec::new();
    for (i, j, l, r) in pairs {
        let lv = tape.constant(l.clone())?;
        let rv = tape.constant(r.clone())?;
        sup_terms.push(t.supervised_loss(tape, *i, *j, lv, rv)?);
    }
    let dist = distribution_term(tape, &codes)?;

    let cycle = sum_vars(tape, &cycle_terms)?;
    let demi = sum_vars(tape, &demi_terms)?;
    let sup = sum_vars(tape, &sup_terms)?;

    let mut weighted = Vec::with_capacity(4);
    for (term, weight) in [(cycle, w.cycle), (demi, w.demi), (Some(dist), w.dist), (sup, w.sup)] {
        if let Some(term) = term {
            weighted.push(tape.scale(term, weight)?);
        }
    }
    let total = sum_vars(tape, &weighted)?.expect("distribution term always present");
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    Ok(StepLosses {
        total,
        cycle: value(tape, cycle),
        demi: value(tape, demi),
        dist: tape.value(dist).item(),
        sup: value(tape, sup),
    })
}

/// The weighted training objective on one set of batches, for callers that
/// bind the translator themselves.
pub fn objective(
    tape: &mut Tape,
    t: &super::translator::BoundTranslator,
    batches: &[Tensor],
    pairs: &[PairSet],
    w: &LossWeights,
) -> Result<Var> {
    let pairs: Vec<(usize, usize, Tensor, Tensor)> = pairs
        .iter()
        .map(|p| (p.left_module, p.right_module, p.left.clone(), p.right.clone()))
        .collect();
    Ok(step_losses(tape, t, batches, &pairs, w)?.total)
}

fn distribution_term(tape: &mut Tape, codes: &[Var]) -> Result<Var> {
    let mut moments = Vec::with_capacity(codes.len());
    for &z in codes {
        moments.push(covariance_on_tape(tape, z)?);
    }
    let mut terms = Vec::new();
    for a in 0..moments.len() {
        for b in a + 1..moments.len() {
            let dm = tape.sub(moments[a].0, moments[b].0)?;
            let dm2 = tape.mul(dm, dm)?;
            terms.push(tape.sum(dm2)?);
            let dc = tape.sub(moments[a].1, moments[b].1)?;
            let dc2 = tape.mul(dc, dc)?;
            terms.push(tape.sum(dc2)?);
        }
    }
    Ok(sum_vars(tape, &terms)?.expect("at least two modules"))
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
    }
    Ok(acc)
}

/// Trains the translator on per-module latent sets (rows need not correspond
/// across modules) plus optional matched pairs, by Adam on
/// `w_cycle·Σ_{i≠j} cycle + w_demi·Σᵢ demi + w_dist·dist + w_sup·Σ sup`.
///
/// The translator's `weights` are replaced by the schedule's weights.
pub fn train_glw(
    translator: &GlwTranslator,
    data: &[Tensor],
    pairs: &[PairSet],
    schedule: &GlwSchedule,
    seed: u64,
) -> Result<(GlwTranslator, TrainingReport)> {
    let n_mod = translator.n_modules();
    if data.len() != n_mod || n_mod < 2 {
        return Err(Error::Config(format!(
            "train_glw needs one latent set per module ({} modules, {} sets)",
            n_mod,
            data.len()
        )));
    }
    for (i, d) in data.iter().enumerate() {
        let want = translator.module(i)?.latent_dim;
        if d.cols() != want {
            return Err(Error::dim("train_glw", d.shape(), &[want]));
        }
        if d.rows() < 2 {
            return Err(Error::CovarianceUndefined { rows: d.rows() });
        }
    }
    for p in pairs {
        translator.module(p.left_module)?;
        translator.module(p.right_module)?;
        if p.is_empty() {
            return Err(Error::EmptyBatch { op: "supervised_align_loss" });
        }
    }
    if schedule.batch_size < 2 {
        return Err(Error::Config("batch_size must be >= 2".into()));
    }

    let mut t = match schedule.init {
        InitStrategy::AsGiven => translator.clone(),
        InitStrategy::MomentCanonical => super::init::moment_canonical(translator, data)?,
        InitStrategy::SelfLearned => {
            super::init::self_learned(translator, data, pairs, &schedule.align, derive_seed(seed, "glw-init"))?
        }
    };
    t.weights = schedule.weights;
    let w = schedule.weights;

    let mut streams: Vec<BatchStream> = data
        .iter()
        .enumerate()
        .map(|(i, d)| BatchStream::new(d.rows(), derive_seed(seed, &format!("glw-batches/{i}"))))
        .collect();
    let mut pair_streams: Vec<BatchStream> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| BatchStream::new(p.len(), derive_seed(seed, &format!("glw-pairs/{k}"))))
        .collect();
    let max_rows = data.iter().map(|d| d.rows()).max().unwrap_or(0);
    let steps_per_epoch = max_rows.div_ceil(schedule.batch_size).max(1);
    let mut opt = Optimizer::new(OptimConfig::adam(schedule.lr))?;
    let mut report = TrainingReport::default();

    for epoch in 0..schedule.epochs {
        let last_good = t.clone();
        let mut sums = [0.0f64; 5];
        for _ in 0..steps_per_epoch {
            let batches: Vec<Tensor> = data
                .iter()
                .zip(&mut streams)
                .map(|(d, s)| d.select_rows(&s.next(schedule.batch_size)))
                .collect();
            let pair_batches: Vec<(usize, usize, Tensor, Tensor)> = pairs
                .iter()
                .zip(&mut pair_streams)
                .map(|(p, s)| {
                    let idx = s.next(schedule.batch_size);
                    (p.left_module, p.right_module, p.left.select_rows(&idx), p.right.select_rows(&idx))
                })
                .collect();

            let step = (|| -> Result<[f64; 5]> {
                let mut tape = Tape::new();
                let bound = t.bind(&mut tape, true)?;
                let l = step_losses(&mut tape, &bound, &batches, &pair_batches, &w)?;
                let total = tape.value(l.total).item();
                if !total.is_finite() {
                    return Err(Error::NonFinite { op: "train_glw" });
                }
                tape.backward(l.total)?;
                let grads = collect_grads(&tape, &bound.vars());
                opt.step(&mut t.params_mut(), &grads)?;
                Ok([total, l.cycle, l.demi, l.dist, l.sup])
            })();
            match step {
                Ok(vals) => {
                    for (s, v) in sums.iter_mut().zip(vals) {
                        *s += v;
                    }
                    report.steps += 1;
                }
                Err(e) => {
                    return Err(Error::TranslatorDiverged {
                        epoch,
                        reason: e.to_string(),
                        last_good: Box::new(last_good),
                    })
                }
            }
        }
        let k = steps_per_epoch as f64;
        report.epochs.push(EpochLosses {
            epoch,
            total: sums[0] / k,
            cycle: sums[1] / k,
            demi: sums[2] / k,
            dist: sums[3] / k,
            sup: sums[4] / k,
        });
    }
    Ok((t, report))
}
