use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::error::{Error, Result};
use crate::numerics::linalg::{gaussian_matrix, random_orthonormal};
use crate::numerics::{derive_seed, rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rendering {
    LinearOrthogonal,
    LinearGeneral,
    NonlinearTanh,
    /// Observations carry no information about the hidden sample.
    PureNoise,
}

impl Rendering {
    pub fn is_linear(self) -> bool {
        matches!(self, Rendering::LinearOrthogonal | Rendering::LinearGeneral)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: String,
    pub obs_dim: usize,
    pub rendering: Rendering,
    #[serde(default)]
    pub noise_std: f64,
    /// Explicit seed; when absent it is derived from the world seed and `id`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Scale of the map applied before `tanh` (nonlinear rendering only).
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Standard deviation of the observation signal for pure-noise domains.
    #[serde(default = "default_gain")]
    pub signal_std: f64,
}

fn default_gain() -> f64 {
    1.0
}

impl DomainSpec {
    pub fn new(id: impl Into<String>, obs_dim: usize, rendering: Rendering) -> Self {
        DomainSpec {
            id: id.into(),
            obs_dim,
            rendering,
            noise_std: 0.0,
            seed: None,
            gain: default_gain(),
            signal_std: default_gain(),
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn domain_seed(&self, world_seed: u64) -> u64 {
        self.seed
            .unwrap_or_else(|| derive_seed(world_seed, &format!("domain/{}", self.id)))
    }
}

/// The fixed generative map of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Renderer {
    pub spec: DomainSpec,
    pub seed: u64,
    /// `obs_dim×k` map `G`; observations are `g(z) = G z` (or `tanh(G z)`).
    pub map: Tensor,
}

impl Renderer {
    pub fn new(spec: &DomainSpec, world: &World) -> Result<Self> {
        let k = world.k;
        if spec.obs_dim < k {
            return Err(Error::Config(format!(
                "domain `{}`: obs_dim {} must be >= k {}",
                spec.id, spec.obs_dim, k
            )));
        }
        if !(spec.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "domain `{}`: noise_std must be >= 0",
                spec.id
            )));
        }
        let seed = spec.domain_seed(world.seed);
        let mut map_rng = rng(derive_seed(seed, "map"));
        let scale = (1.0 / k as f64).sqrt();
        let map = match spec.rendering {
            Rendering::LinearOrthogonal => random_orthonormal(spec.obs_dim, k, &mut map_rng)?,
            Rendering::LinearGeneral => gaussian_matrix(spec.obs_dim, k, scale, &mut map_rng),
            Rendering::NonlinearTanh => {
                gaussian_matrix(spec.obs_dim, k, scale * spec.gain, &mut map_rng)
            }
            Rendering::PureNoise => Tensor::zeros(&[spec.obs_dim, k]),
        };
        Ok(Renderer {
            spec: spec.clone(),
            seed,
            map,
        })
    }

    /// Noiseless `g(z)` for each row of `z`.
    pub fn render_clean(&self, z: &Tensor) -> Result<Tensor> {
        let lin = z.matmul(&self.map.transpose())?;
        Ok(match self.spec.rendering {
            Rendering::NonlinearTanh => lin.map(f64::tanh),
            _ => lin,
        })
    }

    /// `g(z) + ε`, `ε ~ N(0, noise_std²)`, noise drawn from `noise_stream`.
    pub fn render(&self, z: &Tensor, noise_stream: &str) -> Result<Tensor> {
        let mut x = self.render_clean(z)?;
        let mut noise_rng = rng(derive_seed(self.seed, noise_stream));
        let std = self.spec.noise_std;
        let signal = if self.spec.rendering == Rendering::PureNoise {
            self.spec.signal_std
        } else {
            0.0
        };
        if std > 0.0 || signal > 0.0 {
            for v in x.data_mut() {
                *v += std * noise_rng.sample::<f64, _>(StandardNormal);
                if signal > 0.0 {
                    *v += signal * noise_rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(x)
    }
}

/// Rendered observations of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainData {
    pub renderer: Renderer,
    /// `n×obs_dim`.
    pub x: Tensor,
}

impl DomainData {
    pub fn id(&self) -> &str {
        &self.renderer.spec.id
    }

    pub fn rendering(&self) -> Rendering {
        self.renderer.spec.rendering
    }
}

/// Read access to one domain's observations. Module training goes through
/// this trait only, so a trainer can never reach a sibling domain.
pub trait ObservationSource {
    fn domain_id(&self) -> &str;
    fn observations(&self) -> &Tensor;
}

impl ObservationSource for DomainData {
    fn domain_id(&self) -> &str {
        self.id()
    }

    fn observations(&self) -> &Tensor {
        &self.x
    }
}

pub fn render_domain(world: &World, spec: &DomainSpec) -> Result<DomainData> {
    let renderer = Renderer::new(spec, world)?;
    let x = renderer.render(&world.samples, "noise")?;
    Ok(DomainData { renderer, x })
}
