use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng, squared_distance, Tensor};

pub const MAX_MEAN_ATTEMPTS: usize = 10_000;
pub const SCALE_RANGE: (f64, f64) = (0.3, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub k: usize,
    pub n_clusters: usize,
    pub n_samples: usize,
    /// Minimum pairwise cluster-mean distance, in units of the mean
    /// within-cluster standard deviation.
    #[serde(default = "default_delta_sep")]
    pub delta_sep: f64,
    /// Standard deviation of the Gaussian that cluster means are drawn from.
    #[serde(default = "default_mean_spread")]
    pub mean_spread: f64,
}

fn default_delta_sep() -> f64 {
    4.0
}

fn default_mean_spread() -> f64 {
    2.0
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            k: 16,
            n_clusters: 10,
            n_samples: 2000,
            delta_sep: default_delta_sep(),
            mean_spread: default_mean_spread(),
        }
    }
}

/// Hidden semantic samples drawn from a separated anisotropic Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub k: usize,
    pub seed: u64,
    /// `n×k` hidden vectors.
    pub samples: Tensor,
    pub labels: Vec<usize>,
    /// `c×k` cluster means.
    pub means: Tensor,
    /// `c×k` per-dimension standard deviations.
    pub scales: Tensor,
    /// Absolute separation threshold the means were sampled against.
    pub separation: f64,
}

impl World {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.means.rows()
    }

    pub fn min_mean_distance(&self) -> f64 {
        let c = self.n_clusters();
        let mut best = f64::INFINITY;
        for i in 0..c {
            for j in i + 1..c {
                best = best.min(squared_distance(self.means.row(i), self.means.row(j)).sqrt());
            }
        }
        best
    }
}

pub fn generate_world(seed: u64, params: &WorldParams) -> Result<World> {
    let WorldParams {
        k,
        n_clusters: c,
        n_samples: n,
        delta_sep,
        mean_spread,
    } = *params;
    if k < 2 || c < 2 {
        return Err(Error::Config(format!(
            "world needs k >= 2 and at least 2 clusters (k={k}, clusters={c})"
        )));
    }
    if !(delta_sep >= 0.0) || !(mean_spread > 0.0) {
        return Err(Error::Config("delta_sep must be >= 0 and mean_spread > 0".into()));
    }
    let mut rng = rng(derive_seed(seed, "world"));

    let (lo, hi) = SCALE_RANGE;
    let scale_data: Vec<f64> = (0..c * k).map(|_| rng.random_range(lo..hi)).collect();
    let mean_scale = scale_data.iter().sum::<f64>() / scale_data.len() as f64;
    let separation = delta_sep * mean_scale;
    let scales = Tensor::matrix(c, k, scale_data)?;

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut attempts = 0;
    while means.len() < c {
        if attempts >= MAX_MEAN_ATTEMPTS {
            return Err(Error::SeparationInfeasible { attempts });
        }
        attempts += 1;
        let cand: Vec<f64> = (0..k)
            .map(|_| mean_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if means
            .iter()
            .all(|m| squared_distance(m, &cand).sqrt() >= separation)
        {
            means.push(cand);
        }
    }
    let means = Tensor::from_rows(&means)?;

    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let label = rng.random_range(0..c);
        labels.push(label);
        let (m, s) = (means.row(label), scales.row(label));
        for d in 0..k {
            data.push(m[d] + s[d] * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(World {
        k,
        seed,
        samples: Tensor::matrix(n, k, data)?,
        labels,
        means,
        scales,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, c: usize, n: usize) -> WorldParams {
        WorldParams {
            k,
            n_clusters: c,
            n_samples: n,
            ..WorldParams::default()
        }
    }

    #[test]
    fn empty_world_keeps_cluster_params() {
        let w = generate_world(1, &params(4, 3, 0)).unwrap();
        assert_eq!(w.samples.shape(), &[0, 4]);
        assert_eq!(w.means.shape(), &[3, 4]);
        assert!(w.labels.is_empty());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_world(9, &params(8, 4, 50)).unwrap();
        let b = generate_world(9, &params(8, 4, 50)).unwrap();
        assert_eq!(a, b);
        let c = generate_world(10, &params(8, 4, 50)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn separation_holds_exhaustively() {
        let w = generate_world(0, &params(16, 10, 100)).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                let d = squared_distance(w.means.row(i), w.means.row(j)).sqrt();
                assert!(d >= w.separation, "pair ({i},{j}) at {d}");
                assert!(d >= 4.0, "pair ({i},{j}) at {d}");
            }
        }
    }

    #[test]
    fn scales_in_range() {
        let w = generate_world(2, &params(5, 3, 10)).unwrap();
        assert!(w
            .scales
            .data()
            .iter()
            .all(|&s| (SCALE_RANGE.0..SCALE_RANGE.1).contains(&s)));
    }

    #[test]
    fn infeasible_separation_errors() {
        let p = WorldParams {
            delta_sep: 1e6,
            ..params(2, 3, 10)
        };
        assert!(matches!(
            generate_world(0, &p),
            Err(Error::SeparationInfeasible { attempts: MAX_MEAN_ATTEMPTS })
        ));
    }

    #[test]
    fn rejects_single_cluster_world() {
        assert!(matches!(
            generate_world(0, &params(4, 1, 10)),
            Err(Error::Config(_))
        ));
    }
}
