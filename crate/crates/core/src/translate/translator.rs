use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng, Activation, BoundNet, Net, Param, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorMode {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub cycle: f64,
    #[serde(default = "one")]
    pub demi: f64,
    #[serde(default = "one")]
    pub dist: f64,
    #[serde(default = "one")]
    pub sup: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cycle: 1.0,
            demi: 1.0,
            dist: 1.0,
            sup: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            cycle: 0.0,
            demi: 0.0,
            dist: 0.0,
            sup: 0.0,
        }
    }
}

/// In-map (latent → workspace) and out-map (workspace → latent) of one module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleMaps {
    pub id: String,
    pub latent_dim: usize,
    pub enc: Net,
    pub dec: Net,
}

/// Shared workspace space of dimension `dim` with per-module translators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlwTranslator {
    pub dim: usize,
    pub mode: TranslatorMode,
    pub modules: Vec<ModuleMaps>,
    pub weights: LossWeights,
    pub seed: u64,
}

/// Matched latent pairs between two modules, row `r` of `left` and `right`
/// rendering the same hidden sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub left_module: usize,
    pub right_module: usize,
    pub left: Tensor,
    pub right: Tensor,
}

impl PairSet {
    pub fn new(left_module: usize, right_module: usize, left: Tensor, right: Tensor) -> Result<Self> {
        if left.rows() != right.rows() {
            return Err(Error::dim("pair_set", left.shape(), right.shape()));
        }
        Ok(PairSet {
            left_module,
            right_module,
            left,
            right,
        })
    }

    pub fn len(&self) -> usize {
        self.left.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rejects workspace sizes outside `max dᵢ ≤ D < Σ dᵢ`.
pub fn check_bottleneck(latent_dims: &[usize], dim: usize) -> Result<()> {
    if latent_dims.len() < 2 {
        return Err(Error::Config(format!(
            "workspace needs at least 2 modules, got {}",
            latent_dims.len()
        )));
    }
    let max = *latent_dims.iter().max().expect("nonempty");
    let sum: usize = latent_dims.iter().sum();
    if dim < max || dim >= sum {
        return Err(Error::Config(format!(
            "workspace dimension {dim} violates bottleneck {max} <= D < {sum}"
        )));
    }
    Ok(())
}

impl GlwTranslator {
    /// Randomly initialized translator. `modules` pairs each module id with its
    /// latent dimension; module ids used elsewhere are indices into this list.
    pub fn new(
        modules: &[(String, usize)],
        dim: usize,
        mode: TranslatorMode,
        seed: u64,
    ) -> Result<Self> {
        let dims: Vec<usize> = modules.iter().map(|m| m.1).collect();
        check_bottleneck(&dims, dim)?;
        let mut init = rng(derive_seed(seed, "glw-init"));
        let hidden = 2 * dim;
        let maps = modules
            .iter()
            .enumerate()
            .map(|(i, (id, d))| {
                let (enc, dec) = match mode {
                    TranslatorMode::Linear => (
                        Net::linear(&format!("m{i}.enc"), *d, dim, &mut init),
                        Net::linear(&format!("m{i}.dec"), dim, *d, &mut init),
                    ),
                    TranslatorMode::Mlp => (
                        Net::mlp(&format!("m{i}.enc"), *d, hidden, dim, Activation::Tanh, &mut init),
                        Net::mlp(&format!("m{i}.dec"), dim, hidden, *d, Activation::Tanh, &mut init),
                    ),
                };
                ModuleMaps {
                    id: id.clone(),
                    latent_dim: *d,
                    enc,
                    dec,
                }
            })
            .collect();
        Ok(GlwTranslator {
            dim,
            mode,
            modules: maps,
            weights: LossWeights::default(),
            seed,
        })
    }

    /// Linear translator with explicit maps: `enc[i]` is `dᵢ×D`, `dec[i]` is
    /// `D×dᵢ`, all biases zero.
    pub fn from_linear_maps(
        ids: &[String],
        enc: Vec<Tensor>,
        dec: Vec<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        if ids.len() != enc.len() || ids.len() != dec.len() {
            return Err(Error::dim("from_linear_maps", &[ids.len()], &[enc.len(), dec.len()]));
        }
        let dim = enc.first().map_or(0, |e| e.cols());
        let dims: Vec<usize> = enc.iter().map(|e| e.rows()).collect();
        check_bottleneck(&dims, dim)?;
        let mut modules = Vec::with_capacity(ids.len());
        for (i, ((id, e), d)) in ids.iter().zip(enc).zip(dec).enumerate() {
            if e.cols() != dim || d.rows() != dim || d.cols() != e.rows() {
                return Err(Error::dim("from_linear_maps", e.shape(), d.shape()));
            }
            let latent_dim = e.rows();
            modules.push(ModuleMaps {
                id: id.clone(),
                latent_dim,
                enc: Net::linear_from(&format!("m{i}.enc"), e, Tensor::zeros(&[dim]))?,
                dec: Net::linear_from(&format!("m{i}.dec"), d, Tensor::zeros(&[latent_dim]))?,
            });
        }
        Ok(GlwTranslator {
            dim,
            mode: TranslatorMode::Linear,
            modules,
            weights: LossWeights::default(),
            seed,
        })
    }

    /// Linear translator whose in-maps zero-pad into the workspace and whose
    /// out-maps truncate back, so every demi-cycle is exactly the identity.
    pub fn identity_construction(modules: &[(String, usize)], dim: usize) -> Result<Self> {
        let ids: Vec<String> = modules.iter().map(|m| m.0.clone()).collect();
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for (_, d) in modules {
            let mut e = Tensor::zeros(&[*d, dim]);
            let mut t = Tensor::zeros(&[dim, *d]);
            for r in 0..(*d).min(dim) {
                e.set(r, r, 1.0);
                t.set(r, r, 1.0);
            }
            enc.push(e);
            dec.push(t);
        }
        GlwTranslator::from_linear_maps(&ids, enc, dec, 0)
    }

    pub fn n_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn latent_dims(&self) -> Vec<usize> {
        self.modules.iter().map(|m| m.latent_dim).collect()
    }

    pub fn module(&self, i: usize) -> Result<&ModuleMaps> {
        self.modules.get(i).ok_or(Error::UnknownModule(i))
    }

    pub fn module_index(&self, id: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.id == id)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.modules
            .iter()
            .flat_map(|m| m.enc.params().into_iter().chain(m.dec.params()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.modules
            .iter_mut()
            .flat_map(|m| m.enc.params_mut().into_iter().chain(m.dec.params_mut()))
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundTranslator> {
        let mut enc = Vec::with_capacity(self.modules.len());
        let mut dec = Vec::with_capacity(self.modules.len());
        for m in &self.modules {
            enc.push(m.enc.bind(tape, requires_grad)?);
            dec.push(m.dec.bind(tape, requires_grad)?);
        }
        Ok(BoundTranslator {
            enc,
            dec,
            dims: self.latent_dims(),
            dim: self.dim,
        })
    }

    /// Binds caller-owned leaves, given in [`GlwTranslator::params`] order.
    pub fn bind_vars(&self, tape: &Tape, vars: &[Var]) -> Result<BoundTranslator> {
        let mut enc = Vec::with_capacity(self.modules.len());
        let mut dec = Vec::with_capacity(self.modules.len());
        let mut rest = vars;
        for m in &self.modules {
            for (net, out) in [(&m.enc, &mut enc), (&m.dec, &mut dec)] {
                let k = net.params().len().min(rest.len());
                out.push(net.bind_vars(tape, &rest[..k])?);
                rest = &rest[k..];
            }
        }
        if !rest.is_empty() {
            return Err(Error::Contract(format!("{} surplus vars", rest.len())));
        }
        Ok(BoundTranslator {
            enc,
            dec,
            dims: self.latent_dims(),
            dim: self.dim,
        })
    }

    fn check_latent(&self, i: usize, v: &Tensor) -> Result<()> {
        let d = self.module(i)?.latent_dim;
        if v.shape().len() != 2 || v.cols() != d {
            return Err(Error::dim("latent", v.shape(), &[d]));
        }
        Ok(())
    }

    /// Module latents (`n×dᵢ`) into the workspace (`n×D`).
    pub fn encode_to_glw(&self, i: usize, v: &Tensor) -> Result<Tensor> {
        self.check_latent(i, v)?;
        self.modules[i].enc.eval(v)
    }

    pub fn decode_from_glw(&self, i: usize, z: &Tensor) -> Result<Tensor> {
        self.module(i)?;
        if z.shape().len() != 2 || z.cols() != self.dim {
            return Err(Error::dim("decode_from_glw", z.shape(), &[self.dim]));
        }
        self.modules[i].dec.eval(z)
    }

    /// `decⱼ(encᵢ(v))`; with `i == j` this is the demi-cycle map.
    pub fn translate(&self, i: usize, j: usize, v: &Tensor) -> Result<Tensor> {
        self.module(j)?;
        self.decode_from_glw(j, &self.encode_to_glw(i, v)?)
    }

    fn eval_scalar(
        &self,
        f: impl FnOnce(&mut Tape, &BoundTranslator) -> Result<Var>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let out = f(&mut tape, &bound)?;
        Ok(tape.value(out).item())
    }

    pub fn cycle_loss(&self, i: usize, j: usize, batch: &Tensor) -> Result<f64> {
        self.check_latent(i, batch)?;
        self.module(j)?;
        self.eval_scalar(|tape, b| {
            let x = tape.constant(batch.clone())?;
            b.cycle_loss(tape, i, j, x)
        })
    }

    pub fn demi_cycle_loss(&self, i: usize, batch: &Tensor) -> Result<f64> {
        self.cycle_loss(i, i, batch)
    }

    pub fn supervised_align_loss(&self, pairs: &PairSet) -> Result<f64> {
        self.check_latent(pairs.left_module, &pairs.left)?;
        self.check_latent(pairs.right_module, &pairs.right)?;
        self.eval_scalar(|tape, b| {
            let l = tape.constant(pairs.left.clone())?;
            let r = tape.constant(pairs.right.clone())?;
            b.supervised_loss(tape, pairs.left_module, pairs.right_module, l, r)
        })
    }

    /// Moment-matching loss over one latent batch per module (indexed by module).
    pub fn distribution_loss(&self, batches: &[Tensor]) -> Result<f64> {
        if batches.len() != self.n_modules() {
            return Err(Error::dim("distribution_loss", &[batches.len()], &[self.n_modules()]));
        }
        for (i, b) in batches.iter().enumerate() {
            self.check_latent(i, b)?;
        }
        self.eval_scalar(|tape, bt| {
            let mut encoded = Vec::with_capacity(batches.len());
            for (i, b) in batches.iter().enumerate() {
                let x = tape.constant(b.clone())?;
                encoded.push(bt.encode(tape, i, x)?);
            }
            bt.distribution_loss(tape, &encoded)
        })
    }

    /// Workspace mean and unbiased covariance of one module's encoded batch.
    pub fn encoded_moments(&self, i: usize, batch: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        crate::numerics::linalg::mean_and_covariance(&self.encode_to_glw(i, batch)?)
    }
}

/// A translator whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundTranslator {
    enc: Vec<BoundNet>,
    dec: Vec<BoundNet>,
    dims: Vec<usize>,
    dim: usize,
}

impl BoundTranslator {
    /// All parameter leaves, in the same order as [`GlwTranslator::params`].
    pub fn vars(&self) -> Vec<Var> {
        self.enc
            .iter()
            .zip(&self.dec)
            .flat_map(|(e, d)| e.vars().iter().chain(d.vars()).copied())
            .collect()
    }

    pub fn workspace_dim(&self) -> usize {
        self.dim
    }

    fn get(&self, i: usize) -> Result<(&BoundNet, &BoundNet)> {
        match (self.enc.get(i), self.dec.get(i)) {
            (Some(e), Some(d)) => Ok((e, d)),
            _ => Err(Error::UnknownModule(i)),
        }
    }

    pub fn encode(&self, tape: &mut Tape, i: usize, v: Var) -> Result<Var> {
        self.get(i)?.0.forward(tape, v)
    }

    pub fn decode(&self, tape: &mut Tape, i: usize, z: Var) -> Result<Var> {
        self.get(i)?.1.forward(tape, z)
    }

    pub fn translate(&self, tape: &mut Tape, i: usize, j: usize, v: Var) -> Result<Var> {
        let z = self.encode(tape, i, v)?;
        self.decode(tape, j, z)
    }

    fn check_batch(&self, tape: &Tape, op: &'static str, i: usize, v: Var) -> Result<()> {
        let shape = tape.value(v).shape();
        let d = *self.dims.get(i).ok_or(Error::UnknownModule(i))?;
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::dim(op, shape, &[d]));
        }
        if shape[0] == 0 {
            return Err(Error::EmptyBatch { op });
        }
        Ok(())
    }

    /// Mean over the batch of `‖translate(j→i, translate(i→j, v)) − v‖²`.
    pub fn cycle_loss(&self, tape: &mut Tape, i: usize, j: usize, v: Var) -> Result<Var> {
        self.check_batch(tape, "cycle_loss", i, v)?;
        let there = self.translate(tape, i, j, v)?;
        let back = if i == j {
            there
        } else {
            self.translate(tape, j, i, there)?
        };
        let diff = tape.sub(back, v)?;
        tape.mean_row_sq_norm(diff)
    }

    /// Mean over all entries of `(encᵢ(vᵢ) − encⱼ(vⱼ))²`.
    pub fn supervised_loss(
        &self,
        tape: &mut Tape,
        i: usize,
        j: usize,
        vi: Var,
        vj: Var,
    ) -> Result<Var> {
        self.check_batch(tape, "supervised_align_loss", i, vi)?;
        self.check_batch(tape, "supervised_align_loss", j, vj)?;
        let zi = self.encode(tape, i, vi)?;
        let zj = self.encode(tape, j, vj)?;
        tape.mse(zi, zj)
    }

    /// `Σ_{i<j} ‖μᵢ − μⱼ‖² + ‖Cᵢ − Cⱼ‖²_F` over workspace encodings.
    pub fn distribution_loss(&self, tape: &mut Tape, encoded: &[Var]) -> Result<Var> {
        if encoded.len() < 2 {
            return Err(Error::Config(
                "distribution loss needs at least 2 module batches".into(),
            ));
        }
        let mut moments = Vec::with_capacity(encoded.len());
        for &z in encoded {
            moments.push(covariance_on_tape(tape, z)?);
        }
        let mut total: Option<Var> = None;
        for a in 0..moments.len() {
            for b in a + 1..moments.len() {
                let dm = tape.sub(moments[a].0, moments[b].0)?;
                let dm2 = tape.mul(dm, dm)?;
                let sm = tape.sum(dm2)?;
                let dc = tape.sub(moments[a].1, moments[b].1)?;
                let dc2 = tape.mul(dc, dc)?;
                let sc = tape.sum(dc2)?;
                let pair = tape.add(sm, sc)?;
                total = Some(match total {
                    Some(t) => tape.add(t, pair)?,
                    None => pair,
                });
            }
        }
        Ok(total.expect("at least one pair"))
    }
}

/// Column mean and unbiased covariance of `z` (`n×D`), both on the tape.
pub fn covariance_on_tape(tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
    let n = tape.value(z).rows();
    if n < 2 {
        return Err(Error::CovarianceUndefined { rows: n });
    }
    let mu = tape.col_mean(z)?;
    let centered = tape.sub_row(z, mu)?;
    let ct = tape.transpose(centered)?;
    let gram = tape.matmul(ct, centered)?;
    let cov = tape.scale(gram, 1.0 / (n - 1) as f64)?;
    Ok((mu, cov))
}
