//! Label-free correspondence between two latent sets of the same world.
//!
//! Both sets are whitened and clustered. Clusters are matched by comparing
//! normalized centroid distance matrices (a small quadratic assignment,
//! solved exactly by branch and bound). Inside each matched cluster pair,
//! points are matched by their sorted local similarity profiles, which are
//! invariant to the unknown local affine relation. The resulting seed
//! dictionary is refined by alternating an affine least-squares fit with
//! mutual nearest-neighbour re-matching restricted to matched clusters.
//! Several cluster matchings are tried and the one whose refinement keeps
//! the most mutual pairs wins.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::init::canonical_frame;
use super::retrieval::{nearest, Metric};
use crate::error::{Error, Result};
use crate::numerics::linalg::pseudo_inverse;
use crate::numerics::{derive_seed, rng, squared_distance, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    /// Cluster matchings carried into refinement.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_refine")]
    pub refine_iters: usize,
}

fn default_clusters() -> usize {
    10
}
fn default_restarts() -> usize {
    30
}
fn default_candidates() -> usize {
    4
}
fn default_refine() -> usize {
    12
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            clusters: default_clusters(),
            kmeans_restarts: default_restarts(),
            candidates: default_candidates(),
            refine_iters: default_refine(),
        }
    }
}

/// Largest cluster count the exact matcher accepts.
pub const MAX_CLUSTERS: usize = 12;
const KMEANS_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct Clustering {
    pub assign: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
}

impl Clustering {
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assign.len()).filter(|&i| self.assign[i] == c).collect()
    }
}

fn nearest_centroid(x: &[f64], cents: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, m) in cents.iter().enumerate() {
        let d = squared_distance(x, m);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ starts; keeps the lowest-inertia run.
pub fn kmeans(x: &Tensor, c: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    let n = x.rows();
    if c == 0 || n < c {
        return Err(Error::Config(format!("kmeans needs 1 <= clusters <= rows, got {c} for {n}")));
    }
    let d = x.cols();
    let mut r = rng(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut cents: Vec<Vec<f64>> = vec![x.row(r.random_range(0..n)).to_vec()];
        while cents.len() < c {
            let dists: Vec<f64> = (0..n)
                .map(|i| cents.iter().map(|m| squared_distance(x.row(i), m)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = dists.iter().sum();
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, dv) in dists.iter().enumerate() {
                if u < *dv {
                    pick = i;
                    break;
                }
                u -= dv;
            }
            cents.push(x.row(pick).to_vec());
        }
        let mut assign = vec![usize::MAX; n];
        for _ in 0..KMEANS_ITERS {
            let mut changed = false;
            for (i, a) in assign.iter_mut().enumerate() {
                let k = nearest_centroid(x.row(i), &cents);
                if *a != k {
                    *a = k;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; d]; c];
            let mut counts = vec![0usize; c];
            for i in 0..n {
                counts[assign[i]] += 1;
                for (s, v) in sums[assign[i]].iter_mut().zip(x.row(i)) {
                    *s += v;
                }
            }
            for k in 0..c {
                if counts[k] > 0 {
                    cents[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| squared_distance(x.row(i), &cents[assign[i]])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(Clustering {
                assign,
                centroids: Tensor::from_rows(&cents)?,
                inertia,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Pairwise centroid distances divided by their mean.
fn normalized_distances(c: &Tensor) -> Vec<Vec<f64>> {
    let k = c.rows();
    let mut m = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            m[a][b] = squared_distance(c.row(a), c.row(b)).sqrt();
            total += m[a][b];
        }
    }
    let mean = total / (k * k.saturating_sub(1)).max(1) as f64;
    if mean > 0.0 {
        for row in &mut m {
            for v in row {
                *v /= mean;
            }
        }
    }
    m
}

/// The `keep` lowest-cost permutations `π` for `Σ_ab (A_ab − B_π(a)π(b))²`,
/// ascending by cost.
pub fn match_structures(a: &[Vec<f64>], b: &[Vec<f64>], keep: usize) -> Vec<(f64, Vec<usize>)> {
    struct Search<'a> {
        a: &'a [Vec<f64>],
        b: &'a [Vec<f64>],
        keep: usize,
        best: Vec<(f64, Vec<usize>)>,
        perm: Vec<usize>,
        used: Vec<bool>,
    }
    impl Search<'_> {
        fn bound(&self) -> f64 {
            if self.best.len() < self.keep {
                f64::INFINITY
            } else {
                self.best[self.keep - 1].0
            }
        }
        fn go(&mut self, pos: usize, cost: f64) {
            if cost >= self.bound() {
                return;
            }
            let k = self.a.len();
            if pos == k {
                let at = self.best.partition_point(|(c, _)| *c <= cost);
                self.best.insert(at, (cost, self.perm.clone()));
                self.best.truncate(self.keep);
                return;
            }
            for cand in 0..k {
                if self.used[cand] {
                    continue;
                }
                let mut add = 0.0;
                for p in 0..pos {
                    let e = self.a[pos][p] - self.b[cand][self.perm[p]];
                    add += 2.0 * e * e;
                }
                self.used[cand] = true;
                self.perm[pos] = cand;
                self.go(pos + 1, cost + add);
                self.used[cand] = false;
            }
        }
    }
    let k = a.len();
    let mut s = Search {
        a,
        b,
        keep: keep.max(1),
        best: Vec::new(),
        perm: vec![0; k],
        used: vec![false; k],
    };
    s.go(0, 0.0);
    s.best
}

/// Per-row similarity profile: the row of the whitened Gram matrix, sorted
/// descending.
fn profiles(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let frame = canonical_frame(x, x.cols())?;
    let y = frame.apply(x)?;
    let g = y.matmul(&y.transpose())?;
    Ok((0..g.rows())
        .map(|i| {
            let mut r = g.row(i).to_vec();
            r.sort_by(|p, q| q.total_cmp(p));
            r
        })
        .collect())
}

fn profile_gap(p: &[f64], q: &[f64], m: usize) -> f64 {
    (0..m)
        .map(|s| (p[s * p.len() / m] - q[s * q.len() / m]).powi(2))
        .sum()
}

/// Mutual nearest neighbours between two point sets under profile distance.
fn profile_pairs(a: &Tensor, b: &Tensor) -> Result<Vec<(usize, usize)>> {
    let pa = profiles(a)?;
    let pb = profiles(b)?;
    let m = pa[0].len().min(pb[0].len());
    let argmin = |q: &[f64], set: &[Vec<f64>]| {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (k, p) in set.iter().enumerate() {
            let d = profile_gap(q, p, m);
            if d < bd {
                bd = d;
                best = k;
            }
        }
        best
    };
    let ab: Vec<usize> = pa.iter().map(|p| argmin(p, &pb)).collect();
    let ba: Vec<usize> = pb.iter().map(|p| argmin(p, &pa)).collect();
    Ok((0..pa.len()).filter(|&i| ba[ab[i]] == i).map(|i| (i, ab[i])).collect())
}

fn with_bias(x: &Tensor) -> Result<Tensor> {
    x.concat_cols(&Tensor::matrix(x.rows(), 1, vec![1.0; x.rows()])?)
}

/// Affine least-squares map `[x, 1] · A ≈ y`.
pub fn affine_fit(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.rows() != y.rows() {
        return Err(Error::dim("affine_fit", x.shape(), y.shape()));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyBatch { op: "affine_fit" });
    }
    pseudo_inverse(&with_bias(x)?)?.matmul(y)
}

pub fn affine_apply(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    with_bias(x)?.matmul(a)
}

/// Row correspondences between a reference set and another set.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// `(reference row, other row)`.
    pub pairs: Vec<(usize, usize)>,
    /// Reference cluster `c` corresponds to other cluster `cluster_map[c]`.
    pub cluster_map: Vec<usize>,
}

fn stack_pairs(
    reference: &Tensor,
    other: &Tensor,
    pairs: &[(usize, usize)],
    anchors: Option<(&Tensor, &Tensor)>,
) -> Result<(Tensor, Tensor)> {
    let mut r = reference.select_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let mut o = other.select_rows(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    if let Some((ar, ao)) = anchors {
        r = Tensor::from_rows(&(0..r.rows()).map(|i| r.row(i).to_vec()).chain((0..ar.rows()).map(|i| ar.row(i).to_vec())).collect::<Vec<_>>())?;
        o = Tensor::from_rows(&(0..o.rows()).map(|i| o.row(i).to_vec()).chain((0..ao.rows()).map(|i| ao.row(i).to_vec())).collect::<Vec<_>>())?;
    }
    Ok((r, o))
}

fn refine(
    reference: &Tensor,
    other: &Tensor,
    groups: &[(Vec<usize>, Vec<usize>)],
    mut pairs: Vec<(usize, usize)>,
    anchors: Option<(&Tensor, &Tensor)>,
    iters: usize,
) -> Result<Vec<(usize, usize)>> {
    for _ in 0..iters {
        if pairs.len() <= other.cols() {
            break;
        }
        let (r, o) = stack_pairs(reference, other, &pairs, anchors)?;
        let a = affine_fit(&o, &r)?;
        let mapped = affine_apply(&a, other)?;
        let mut next = Vec::with_capacity(pairs.len());
        for (ri, oi) in groups {
            let gr = reference.select_rows(ri);
            let go = mapped.select_rows(oi);
            let fwd: Vec<usize> = (0..oi.len()).map(|q| nearest(go.row(q), &gr, Metric::Euclidean)).collect();
            let back: Vec<usize> = (0..ri.len()).map(|p| nearest(gr.row(p), &go, Metric::Euclidean)).collect();
            for q in 0..oi.len() {
                if back[fwd[q]] == q {
                    next.push((ri[fwd[q]], oi[q]));
                }
            }
        }
        if next == pairs {
            break;
        }
        pairs = next;
    }
    Ok(pairs)
}

/// Mean squared error of the known pairs under the affine map fitted on
/// `pairs` plus those anchors.
fn anchor_residual(
    reference: &Tensor,
    other: &Tensor,
    pairs: &[(usize, usize)],
    (ar, ao): (&Tensor, &Tensor),
) -> Result<f64> {
    let (r, o) = stack_pairs(reference, other, pairs, Some((ar, ao)))?;
    let mapped = affine_apply(&affine_fit(&o, &r)?, ao)?;
    let n = ar.rows().max(1) as f64;
    Ok((0..ar.rows()).map(|i| squared_distance(mapped.row(i), ar.row(i))).sum::<f64>() / n)
}

/// Finds row correspondences between `reference` and `other` without labels.
/// `anchors` are optional known matched rows `(reference, other)` that join
/// every least-squares fit and, when present, pick the cluster matching they
/// fit best; otherwise the matching keeping the most mutual pairs wins.
pub fn align_latents(
    reference: &Tensor,
    other: &Tensor,
    anchors: Option<(&Tensor, &Tensor)>,
    cfg: &AlignConfig,
    seed: u64,
) -> Result<Alignment> {
    let c = cfg.clusters;
    if !(2..=MAX_CLUSTERS).contains(&c) {
        return Err(Error::Config(format!("align clusters must be in 2..={MAX_CLUSTERS}, got {c}")));
    }
    let whitened = |x: &Tensor| -> Result<Tensor> { canonical_frame(x, x.cols())?.apply(x) };
    let kr = kmeans(&whitened(reference)?, c, cfg.kmeans_restarts, derive_seed(seed, "align/ref"))?;
    let ko = kmeans(&whitened(other)?, c, cfg.kmeans_restarts, derive_seed(seed, "align/other"))?;
    let candidates = match_structures(
        &normalized_distances(&kr.centroids),
        &normalized_distances(&ko.centroids),
        cfg.candidates,
    );

    let mut best: Option<(f64, Alignment)> = None;
    for (_, perm) in candidates {
        let groups: Vec<(Vec<usize>, Vec<usize>)> =
            (0..c).map(|a| (kr.members(a), ko.members(perm[a]))).collect();
        let mut seed_pairs = Vec::new();
        for (ri, oi) in &groups {
            // Profiles need a full-rank local covariance.
            if ri.len() <= reference.cols() + 1 || oi.len() <= other.cols() + 1 {
                continue;
            }
            let local = profile_pairs(&reference.select_rows(ri), &other.select_rows(oi))?;
            seed_pairs.extend(local.into_iter().map(|(p, q)| (ri[p], oi[q])));
        }
        let pairs = refine(reference, other, &groups, seed_pairs, anchors, cfg.refine_iters)?;
        let score = match anchors {
            Some(a) => -anchor_residual(reference, other, &pairs, a)?,
            None => pairs.len() as f64,
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, Alignment { pairs, cluster_map: perm }));
        }
    }
    best.map(|(_, a)| a)
        .ok_or_else(|| Error::Contract("no cluster matching found".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::gaussian_matrix;

    fn blobs(seed: u64) -> (Tensor, Vec<usize>) {
        let mut r = rng(seed);
        let centers = gaussian_matrix(4, 3, 6.0, &mut r);
        let noise = gaussian_matrix(400, 3, 0.5, &mut r);
        let mut x = noise.clone();
        let mut labels = Vec::new();
        for i in 0..400 {
            let l = i % 4;
            labels.push(l);
            for j in 0..3 {
                x.set(i, j, noise.get(i, j) + centers.get(l, j));
            }
        }
        (x, labels)
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (x, labels) = blobs(0);
        let k = kmeans(&x, 4, 5, 1).unwrap();
        for i in 0..400 {
            for j in 0..400 {
                assert_eq!(labels[i] == labels[j], k.assign[i] == k.assign[j]);
            }
        }
    }

    #[test]
    fn structure_matching_finds_relabeling() {
        let a = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 1.5, 2.5],
            vec![2.0, 1.5, 0.0, 0.7],
            vec![3.0, 2.5, 0.7, 0.0],
        ];
        let perm = [2usize, 0, 3, 1];
        let mut b = vec![vec![0.0; 4]; 4];
        for p in 0..4 {
            for q in 0..4 {
                b[perm[p]][perm[q]] = a[p][q];
            }
        }
        let found = match_structures(&a, &b, 3);
        assert_eq!(found[0].1, perm.to_vec());
        assert!(found[0].0 < 1e-12);
        assert!(found.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn recovers_rows_under_affine_map() {
        let (x, _) = blobs(3);
        let mut r = rng(4);
        let m = gaussian_matrix(3, 3, 1.0, &mut r);
        let y = x.matmul(&m).unwrap().map(|v| v + 0.5);
        let cfg = AlignConfig { clusters: 4, ..AlignConfig::default() };
        let al = align_latents(&x, &y, None, &cfg, 0).unwrap();
        let correct = al.pairs.iter().filter(|(p, q)| p == q).count();
        assert!(correct as f64 >= 0.95 * 400.0, "{correct}");
    }

    #[test]
    fn rejects_bad_cluster_count() {
        let (x, _) = blobs(0);
        let cfg = AlignConfig { clusters: 1, ..AlignConfig::default() };
        assert!(matches!(align_latents(&x, &x, None, &cfg, 0), Err(Error::Config(_))));
    }
}
