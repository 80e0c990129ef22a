use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::render::{DomainData, ObservationSource};
use crate::error::{Error, Result};
use crate::numerics::linalg::pseudo_inverse;
use crate::numerics::{
    collect_grads, derive_seed, rng, Activation, Net, OptimConfig, Optimizer, Param, Tape, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleKind {
    TrainedAutoencoder,
    OracleLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Codec {
    Autoencoder { encoder: Net, decoder: Net },
    /// `encode(x) = x · enc`, `decode(v) = v · dec`.
    OracleLinear { enc: Tensor, dec: Tensor },
}

/// An encoder/decoder pair with a private latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecializedModule {
    pub id: String,
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub codec: Codec,
    /// Best full-data reconstruction MSE reached during fitting.
    pub final_loss: f64,
    /// Reconstruction MSE after each epoch (raw, not best-so-far).
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderTraining {
    pub epochs: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> usize {
    64
}
fn default_lr() -> f64 {
    3e-3
}
fn default_batch() -> usize {
    64
}

impl Default for AutoencoderTraining {
    fn default() -> Self {
        AutoencoderTraining {
            epochs: 200,
            hidden: default_hidden(),
            lr: default_lr(),
            batch_size: default_batch(),
        }
    }
}

impl SpecializedModule {
    pub fn kind(&self) -> ModuleKind {
        match self.codec {
            Codec::Autoencoder { .. } => ModuleKind::TrainedAutoencoder,
            Codec::OracleLinear { .. } => ModuleKind::OracleLinear,
        }
    }

    /// Observations (`n×obs_dim`) to latents (`n×latent_dim`).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.obs_dim || x.shape().len() != 2 {
            return Err(Error::dim("encode", x.shape(), &[self.obs_dim]));
        }
        match &self.codec {
            Codec::Autoencoder { encoder, .. } => encoder.eval(x),
            Codec::OracleLinear { enc, .. } => x.matmul(enc),
        }
    }

    pub fn decode(&self, v: &Tensor) -> Result<Tensor> {
        if v.cols() != self.latent_dim || v.shape().len() != 2 {
            return Err(Error::dim("decode", v.shape(), &[self.latent_dim]));
        }
        match &self.codec {
            Codec::Autoencoder { decoder, .. } => decoder.eval(v),
            Codec::OracleLinear { dec, .. } => v.matmul(dec),
        }
    }

    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<f64> {
        let back = self.decode(&self.encode(x)?)?;
        let mut acc = 0.0;
        for (a, b) in back.data().iter().zip(x.data()) {
            acc += (a - b) * (a - b);
        }
        Ok(acc / x.len().max(1) as f64)
    }

    pub fn params(&self) -> Vec<&Param> {
        match &self.codec {
            Codec::Autoencoder { encoder, decoder } => {
                let mut p = encoder.params();
                p.extend(decoder.params());
                p
            }
            Codec::OracleLinear { .. } => Vec::new(),
        }
    }
}

/// Exact linear encoder/decoder from the domain's rendering map: the
/// pseudo-inverse encodes, the map itself decodes. Latents equal the
/// hidden samples on noiseless data.
pub fn oracle_linear(data: &DomainData) -> Result<SpecializedModule> {
    if !data.rendering().is_linear() {
        return Err(Error::Config(format!(
            "oracle-linear module needs a linear rendering, `{}` is {:?}",
            data.id(),
            data.rendering()
        )));
    }
    let g = &data.renderer.map;
    let enc = pseudo_inverse(g)?.transpose();
    let dec = g.transpose();
    let mut module = SpecializedModule {
        id: data.id().to_string(),
        obs_dim: g.rows(),
        latent_dim: g.cols(),
        codec: Codec::OracleLinear { enc, dec },
        final_loss: 0.0,
        loss_curve: Vec::new(),
    };
    module.final_loss = module.reconstruction_mse(&data.x)?;
    Ok(module)
}

/// Trains a one-hidden-layer tanh autoencoder on reconstruction MSE with Adam,
/// keeping the best parameters seen at any epoch end.
pub fn fit_autoencoder(
    source: &dyn ObservationSource,
    latent_dim: usize,
    seed: u64,
    opts: &AutoencoderTraining,
) -> Result<SpecializedModule> {
    let x = source.observations();
    let id = source.domain_id().to_string();
    let (n, obs_dim) = (x.rows(), x.cols());
    if opts.epochs == 0 {
        return Err(Error::Config("autoencoder epochs must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::EmptyBatch { op: "fit_autoencoder" });
    }
    let mut init_rng = rng(derive_seed(seed, &format!("ae-init/{id}")));
    let mut shuffle_rng = rng(derive_seed(seed, &format!("ae-batches/{id}")));
    let mut encoder = Net::mlp("enc", obs_dim, opts.hidden, latent_dim, Activation::Tanh, &mut init_rng);
    let mut decoder = Net::mlp("dec", latent_dim, opts.hidden, obs_dim, Activation::Tanh, &mut init_rng);
    let mut opt = Optimizer::new(OptimConfig::adam(opts.lr))?;

    let full_loss = |enc: &Net, dec: &Net| -> Result<f64> {
        let back = dec.eval(&enc.eval(x)?)?;
        let mut acc = 0.0;
        for (a, b) in back.data().iter().zip(x.data()) {
            acc += (a - b) * (a - b);
        }
        Ok(acc / x.len() as f64)
    };

    let initial = full_loss(&encoder, &decoder)?;
    let mut best = (f64::INFINITY, encoder.clone(), decoder.clone());
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = opts.batch_size.clamp(1, n);

    for _epoch in 0..opts.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let mut tape = Tape::new();
            let be = encoder.bind(&mut tape, true)?;
            let bd = decoder.bind(&mut tape, true)?;
            let xv = tape.constant(xb)?;
            let v = be.forward(&mut tape, xv)?;
            let back = bd.forward(&mut tape, v)?;
            let loss = tape.mse(back, xv)?;
            tape.backward(loss)?;
            let mut vars = be.vars().to_vec();
            vars.extend_from_slice(bd.vars());
            let grads = collect_grads(&tape, &vars);
            let mut params: Vec<&mut Param> = encoder.params_mut();
            params.extend(decoder.params_mut());
            opt.step(&mut params, &grads)?;
        }
        let l = full_loss(&encoder, &decoder)?;
        if !l.is_finite() {
            curve.push(l);
            return Err(Error::TrainingFailure {
                reason: format!("autoencoder `{id}` produced a non-finite loss"),
                curve,
            });
        }
        curve.push(l);
        if l < best.0 {
            best = (l, encoder.clone(), decoder.clone());
        }
    }
    if best.0 > initial {
        return Err(Error::TrainingFailure {
            reason: format!(
                "autoencoder `{id}` diverged: best loss {} above initial {}",
                best.0, initial
            ),
            curve,
        });
    }
    Ok(SpecializedModule {
        id,
        obs_dim,
        latent_dim,
        codec: Codec::Autoencoder {
            encoder: best.1,
            decoder: best.2,
        },
        final_loss: best.0,
        loss_curve: curve,
    })
}

/// Fits one module per source, each from its own observations only.
pub fn fit_modules(
    sources: &[&dyn ObservationSource],
    latent_dims: &[usize],
    seed: u64,
    opts: &AutoencoderTraining,
) -> Result<Vec<SpecializedModule>> {
    if sources.len() != latent_dims.len() {
        return Err(Error::dim("fit_modules", &[sources.len()], &[latent_dims.len()]));
    }
    sources
        .iter()
        .zip(latent_dims)
        .map(|(s, &d)| fit_autoencoder(*s, d, seed, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;

    use super::*;
    use crate::domains::render::{render_domain, DomainSpec, Rendering};
    use crate::domains::world::{generate_world, World, WorldParams};

    fn world(k: usize, n: usize) -> World {
        generate_world(
            11,
            &WorldParams {
                k,
                n_clusters: 4,
                n_samples: n,
                ..WorldParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn oracle_linear_reconstructs_exactly() {
        let w = world(6, 50);
        let d = render_domain(&w, &DomainSpec::new("a", 12, Rendering::LinearOrthogonal)).unwrap();
        let m = oracle_linear(&d).unwrap();
        assert!(m.final_loss < 1e-16);
        let back = m.decode(&m.encode(&d.x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&d.x) < 1e-8);
        let z = m.encode(&d.x).unwrap();
        assert!(z.max_abs_diff(&w.samples) < 1e-10);
    }

    #[test]
    fn oracle_linear_rejects_nonlinear_domains() {
        let w = world(4, 10);
        let d = render_domain(&w, &DomainSpec::new("t", 8, Rendering::NonlinearTanh)).unwrap();
        assert!(matches!(oracle_linear(&d), Err(Error::Config(_))));
    }

    #[test]
    fn encode_of_zero_observation_is_finite() {
        let w = world(4, 60);
        let d = render_domain(&w, &DomainSpec::new("a", 8, Rendering::LinearGeneral)).unwrap();
        let opts = AutoencoderTraining {
            epochs: 2,
            ..Default::default()
        };
        let m = fit_autoencoder(&d, 4, 0, &opts).unwrap();
        assert!(m.encode(&Tensor::zeros(&[1, 8])).unwrap().is_finite());
    }

    #[test]
    fn batch_encode_matches_row_loop() {
        let w = world(4, 30);
        let d = render_domain(&w, &DomainSpec::new("a", 8, Rendering::NonlinearTanh)).unwrap();
        let opts = AutoencoderTraining {
            epochs: 1,
            ..Default::default()
        };
        let m = fit_autoencoder(&d, 5, 3, &opts).unwrap();
        let batch = m.encode(&d.x).unwrap();
        for i in 0..d.x.rows() {
            let one = m.encode(&d.x.select_rows(&[i])).unwrap();
            for (a, b) in one.data().iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(matches!(
            m.encode(&Tensor::zeros(&[1, 7])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn more_epochs_never_report_higher_loss() {
        let w = world(4, 120);
        let d = render_domain(&w, &DomainSpec::new("a", 8, Rendering::LinearOrthogonal)).unwrap();
        let short = fit_autoencoder(&d, 4, 1, &AutoencoderTraining { epochs: 1, ..Default::default() }).unwrap();
        let long = fit_autoencoder(&d, 4, 1, &AutoencoderTraining { epochs: 20, ..Default::default() }).unwrap();
        assert!(long.final_loss <= short.final_loss);
        assert_eq!(long.loss_curve.len(), 20);
    }

    struct Recording<'a> {
        inner: &'a DomainData,
        log: &'a RefCell<Vec<String>>,
    }

    impl ObservationSource for Recording<'_> {
        fn domain_id(&self) -> &str {
            self.inner.id()
        }
        fn observations(&self) -> &Tensor {
            self.log.borrow_mut().push(self.inner.id().to_string());
            &self.inner.x
        }
    }

    #[test]
    fn each_module_reads_only_its_own_domain() {
        let w = world(4, 40);
        let a = render_domain(&w, &DomainSpec::new("a", 8, Rendering::LinearGeneral)).unwrap();
        let b = render_domain(&w, &DomainSpec::new("b", 8, Rendering::NonlinearTanh)).unwrap();
        let log_a = RefCell::new(Vec::new());
        let log_b = RefCell::new(Vec::new());
        let ra = Recording { inner: &a, log: &log_a };
        let rb = Recording { inner: &b, log: &log_b };
        let opts = AutoencoderTraining { epochs: 1, ..Default::default() };
        let mods = fit_modules(&[&ra, &rb], &[4, 4], 0, &opts).unwrap();
        assert_eq!(mods[0].id, "a");
        assert_eq!(mods[1].id, "b");
        assert!(!log_a.borrow().is_empty() && log_a.borrow().iter().all(|id| id == "a"));
        assert!(!log_b.borrow().is_empty() && log_b.borrow().iter().all(|id| id == "b"));
    }
}
