use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::gaussian_matrix;
use crate::numerics::{derive_seed, rng, Tensor};
use crate::translate::GlwTranslator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionParams {
    pub theta_conn: f64,
    pub c_max: usize,
    pub s_master: f64,
    pub d_k: usize,
}

impl Default for AttentionParams {
    fn default() -> Self {
        AttentionParams {
            theta_conn: 0.0,
            c_max: 2,
            s_master: 0.9,
            d_k: 8,
        }
    }
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_master > 0.0 && self.s_master <= 1.0) {
            return Err(Error::Config(format!("s_master must lie in (0,1], got {}", self.s_master)));
        }
        if self.d_k == 0 {
            return Err(Error::Config("d_k must be >= 1".into()));
        }
        if !self.theta_conn.is_finite() {
            return Err(Error::Config("theta_conn must be finite".into()));
        }
        Ok(())
    }
}

/// Keys, saliences and the fixed per-module key projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    pub params: AttentionParams,
    pub keys: Vec<Option<Vec<f64>>>,
    pub salience: Vec<f64>,
    /// `d_k×D` projection per module.
    pub projections: Vec<Tensor>,
}

/// Seeded `d_k×D` key projection for one module, entries `N(0, 1/D)`.
pub fn key_projection(seed: u64, module: usize, d_k: usize, dim: usize) -> Tensor {
    let mut r = rng(derive_seed(seed, &format!("key-proj/{module}")));
    gaussian_matrix(d_k, dim, 1.0 / (dim as f64).sqrt(), &mut r)
}

impl AttentionBundle {
    pub fn new(params: AttentionParams, n_modules: usize, dim: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let projections = (0..n_modules)
            .map(|i| key_projection(seed, i, params.d_k, dim))
            .collect();
        Ok(AttentionBundle {
            params,
            keys: vec![None; n_modules],
            salience: vec![0.0; n_modules],
            projections,
        })
    }

    pub fn n_modules(&self) -> usize {
        self.keys.len()
    }
}

/// `key = P · encode_to_glw(t, i, v)`.
pub fn compute_key(module: usize, v: &[f64], t: &GlwTranslator, projection: &Tensor) -> Result<Vec<f64>> {
    let row = Tensor::matrix(1, v.len(), v.to_vec())?;
    let z = t.encode_to_glw(module, &row)?;
    if projection.cols() != z.cols() {
        return Err(Error::dim("compute_key", projection.shape(), z.shape()));
    }
    Ok(projection.matmul(&z.transpose())?.into_data())
}

/// Scaled dot-product score of each registered key against the query.
pub fn scores(q: &[f64], bundle: &AttentionBundle) -> Result<Vec<Option<f64>>> {
    let scale = (bundle.params.d_k as f64).sqrt();
    bundle
        .keys
        .iter()
        .map(|k| match k {
            None => Ok(None),
            Some(k) if k.len() != q.len() => Err(Error::dim("attention_select", &[k.len()], &[q.len()])),
            Some(k) => Ok(Some(k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / scale)),
        })
        .collect()
}

/// Connected module ids in ascending order. Master-key modules connect
/// unconditionally, even beyond capacity; remaining slots go to scores at or
/// above `theta_conn`, best first, ties to the lower id.
pub fn attention_select(q: &[f64], bundle: &AttentionBundle) -> Result<Vec<usize>> {
    let p = &bundle.params;
    let sc = scores(q, bundle)?;
    let mut chosen: Vec<usize> = (0..sc.len())
        .filter(|&i| sc[i].is_some() && bundle.salience[i] >= p.s_master)
        .collect();
    let mut rest: Vec<(usize, f64)> = (0..sc.len())
        .filter(|i| !chosen.contains(i))
        .filter_map(|i| sc[i].filter(|s| *s >= p.theta_conn).map(|s| (i, s)))
        .collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let free = p.c_max.saturating_sub(chosen.len());
    chosen.extend(rest.into_iter().take(free).map(|(i, _)| i));
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_with_scores(scores: &[f64], params: AttentionParams) -> (AttentionBundle, Vec<f64>) {
        // d_k = 1, q = [√1] so each score equals its key.
        let n = scores.len();
        let b = AttentionBundle {
            params: AttentionParams { d_k: 1, ..params },
            keys: scores.iter().map(|s| Some(vec![*s])).collect(),
            salience: vec![0.0; n],
            projections: vec![Tensor::zeros(&[1, 1]); n],
        };
        (b, vec![1.0])
    }

    #[test]
    fn empty_bundle_selects_nothing() {
        let b = AttentionBundle {
            params: AttentionParams::default(),
            keys: vec![None, None],
            salience: vec![1.0, 1.0],
            projections: vec![],
        };
        assert!(attention_select(&[0.0; 8], &b).unwrap().is_empty());
    }

    #[test]
    fn ranking_and_ties() {
        let params = AttentionParams { theta_conn: 2.5, c_max: 2, ..Default::default() };
        let (b, q) = bundle_with_scores(&[3.0, 2.0, 5.0, 5.0, 1.0], params);
        assert_eq!(attention_select(&q, &b).unwrap(), vec![2, 3]);
    }

    #[test]
    fn master_key_overrides_threshold() {
        let params = AttentionParams { theta_conn: 0.0, c_max: 2, s_master: 0.9, ..Default::default() };
        let (mut b, q) = bundle_with_scores(&[1.0, 1.0, 1.0, -10.0], params);
        b.salience[3] = 1.0;
        let sel = attention_select(&q, &b).unwrap();
        assert!(sel.contains(&3));
        assert_eq!(sel.len(), 2);
    }

    #[test]
    fn master_keys_supersede_capacity() {
        let params = AttentionParams { theta_conn: 0.0, c_max: 1, s_master: 0.5, ..Default::default() };
        let (mut b, q) = bundle_with_scores(&[9.0, 1.0, 1.0], params);
        b.salience[1] = 0.6;
        b.salience[2] = 0.7;
        assert_eq!(attention_select(&q, &b).unwrap(), vec![1, 2]);
    }

    #[test]
    fn key_is_projected_embedding() {
        let mods = vec![("a".to_string(), 3), ("b".to_string(), 3)];
        let t = GlwTranslator::new(&mods, 4, crate::translate::TranslatorMode::Linear, 0).unwrap();
        let p = key_projection(1, 0, 2, 4);
        let v = [0.3, -1.0, 2.0];
        let key = compute_key(0, &v, &t, &p).unwrap();
        let z = t.encode_to_glw(0, &Tensor::matrix(1, 3, v.to_vec()).unwrap()).unwrap();
        for r in 0..2 {
            let want: f64 = (0..4).map(|c| p.get(r, c) * z.get(0, c)).sum();
            assert!((key[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_projection_gives_embedding() {
        let mods = vec![("a".to_string(), 2), ("b".to_string(), 2)];
        let t = GlwTranslator::new(&mods, 2, crate::translate::TranslatorMode::Linear, 3).unwrap();
        let v = [1.5, -0.5];
        let key = compute_key(1, &v, &t, &Tensor::identity(2)).unwrap();
        let z = t.encode_to_glw(1, &Tensor::matrix(1, 2, v.to_vec()).unwrap()).unwrap();
        assert_eq!(key, z.into_data());
    }

    #[test]
    fn rejects_bad_params() {
        let p = AttentionParams { s_master: 0.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let p = AttentionParams { d_k: 0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
