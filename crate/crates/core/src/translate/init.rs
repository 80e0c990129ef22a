//! Label-free initialization of the translator from per-module statistics.
//!
//! Each module's latents are centered and whitened, then rotated into the
//! eigenbasis of the fourth-order moment matrix `E[‖y‖² y yᵀ]` of the
//! whitened data, with each axis oriented so its third moment is positive.
//! Whitening leaves an unknown rotation between two linearly related
//! latent sets; the fourth-order eigenbasis is equivariant under that
//! rotation, so when its eigenvalues are distinct every module lands in the
//! same canonical frame. The in-map of module `i` is initialized to this
//! canonical map and the out-map to its inverse; training then refines both.

use crate::error::{Error, Result};
use crate::numerics::linalg::{mean_and_covariance, symmetric_eigen};
use crate::numerics::{derive_seed, rng, Activation, Net, Param, Tensor};

use super::align::{affine_fit, align_latents, AlignConfig};
use super::translator::{GlwTranslator, PairSet, TranslatorMode};

/// Relative eigenvalue floor below which a latent direction is treated as
/// degenerate and left out of the canonical frame.
const RANK_TOL: f64 = 1e-8;

/// Peak pre-activation standard deviation used when embedding a linear map
/// into a tanh layer, keeping the layer in its near-linear range.
const EMBED_PREACT_STD: f64 = 0.1;

/// Affine map `v ↦ (v − mean) · forward` into canonical coordinates and its
/// inverse `u ↦ u · inverse + mean`.
#[derive(Clone, Debug)]
pub struct CanonicalFrame {
    pub mean: Vec<f64>,
    /// `d×m`.
    pub forward: Tensor,
    /// `m×d`.
    pub inverse: Tensor,
    /// Fourth-moment eigenvalues, descending.
    pub spectrum: Vec<f64>,
}

impl CanonicalFrame {
    pub fn apply(&self, v: &Tensor) -> Result<Tensor> {
        let centered = center(v, &self.mean);
        centered.matmul(&self.forward)
    }

    pub fn rank(&self) -> usize {
        self.forward.cols()
    }
}

fn center(v: &Tensor, mean: &[f64]) -> Tensor {
    let mut c = v.clone();
    let d = c.cols();
    for row in c.data_mut().chunks_mut(d) {
        for (x, m) in row.iter_mut().zip(mean) {
            *x -= m;
        }
    }
    c
}

fn effective_rank(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    values.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count()
}

/// Canonical frame of one latent set, keeping at most `max_rank` directions.
pub fn canonical_frame(v: &Tensor, max_rank: usize) -> Result<CanonicalFrame> {
    let (mean, cov) = mean_and_covariance(v)?;
    let d = v.cols();
    let (values, vectors) = symmetric_eigen(&cov)?;
    let m = effective_rank(&values).min(max_rank);
    if m == 0 {
        return Err(Error::Contract("latent set has zero variance".into()));
    }
    // PCA whitening: d×m map and its m×d inverse.
    let mut whiten = Tensor::zeros(&[d, m]);
    let mut unwhiten = Tensor::zeros(&[m, d]);
    for c in 0..m {
        let s = values[c].sqrt();
        for r in 0..d {
            whiten.set(r, c, vectors.get(r, c) / s);
            unwhiten.set(c, r, vectors.get(r, c) * s);
        }
    }
    let y = center(v, &mean).matmul(&whiten)?;

    let n = y.rows();
    let mut fourth = Tensor::zeros(&[m, m]);
    for i in 0..n {
        let row = y.row(i);
        let r2: f64 = row.iter().map(|x| x * x).sum();
        for a in 0..m {
            let ra = r2 * row[a];
            for b in 0..m {
                let idx = a * m + b;
                fourth.data_mut()[idx] += ra * row[b];
            }
        }
    }
    let fourth = fourth.scale(1.0 / n as f64);
    let (spectrum, rot) = symmetric_eigen(&fourth)?;

    let mut u = y.matmul(&rot)?;
    let mut rot = rot;
    for c in 0..m {
        let skew: f64 = (0..n).map(|i| u.get(i, c).powi(3)).sum();
        if skew < 0.0 {
            for r in 0..m {
                rot.set(r, c, -rot.get(r, c));
            }
            for i in 0..n {
                u.set(i, c, -u.get(i, c));
            }
        }
    }
    let forward = whiten.matmul(&rot)?;
    let inverse = rot.transpose().matmul(&unwhiten)?;
    Ok(CanonicalFrame {
        mean,
        forward,
        inverse,
        spectrum,
    })
}

/// Affine in-map `v·enc_w + enc_b` (`d×D`) and out-map `z·dec_w + dec_b`
/// (`D×d`) for one module.
#[derive(Clone, Debug)]
pub struct AffineMaps {
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub dec_w: Tensor,
    pub dec_b: Tensor,
}

/// Maps realizing a frame, zero-padded from the frame rank up to `dim`.
fn frame_maps(frame: &CanonicalFrame, dim: usize) -> Result<AffineMaps> {
    let d = frame.forward.rows();
    let m = frame.rank().min(dim);
    let mut enc_w = Tensor::zeros(&[d, dim]);
    let mut dec_w = Tensor::zeros(&[dim, d]);
    for r in 0..d {
        for c in 0..m {
            enc_w.set(r, c, frame.forward.get(r, c));
            dec_w.set(c, r, frame.inverse.get(c, r));
        }
    }
    let mean = Tensor::matrix(1, d, frame.mean.clone())?;
    let enc_b = Tensor::vector(mean.matmul(&enc_w)?.scale(-1.0).into_data());
    let dec_b = Tensor::vector(frame.mean.clone());
    Ok(AffineMaps { enc_w, enc_b, dec_w, dec_b })
}

/// Precomposes the frame maps of a reference module with affine maps
/// between another module and the reference (`to_ref`: `(d+1)×d_ref`,
/// `from_ref`: `(d_ref+1)×d`, bias in the last row).
fn composed_maps(reference: &AffineMaps, to_ref: &Tensor, from_ref: &Tensor) -> Result<AffineMaps> {
    let split = |a: &Tensor| -> Result<(Tensor, Tensor)> {
        let k = a.rows() - 1;
        Ok((a.slice_rows(0, k), Tensor::matrix(1, a.cols(), a.row(k).to_vec())?))
    };
    let (tw, tb) = split(to_ref)?;
    let (fw, fb) = split(from_ref)?;
    let ref_enc_b = Tensor::matrix(1, reference.enc_b.len(), reference.enc_b.data().to_vec())?;
    let ref_dec_b = Tensor::matrix(1, reference.dec_b.len(), reference.dec_b.data().to_vec())?;
    let enc_w = tw.matmul(&reference.enc_w)?;
    let enc_b = tb.matmul(&reference.enc_w)?.zip_map(&ref_enc_b, |a, b| a + b)?;
    let dec_w = reference.dec_w.matmul(&fw)?;
    let dec_b = ref_dec_b.matmul(&fw)?.zip_map(&fb, |a, b| a + b)?;
    Ok(AffineMaps {
        enc_w,
        enc_b: Tensor::vector(enc_b.into_data()),
        dec_w,
        dec_b: Tensor::vector(dec_b.into_data()),
    })
}

/// One-hidden-layer tanh net approximating the affine map `x·w + b`: the
/// first `out` hidden units carry a scaled copy of the map, the rest start
/// with small random input weights and zero output weights.
fn embed_affine(
    prefix: &str,
    w: &Tensor,
    b: &Tensor,
    hidden: usize,
    input_std: &[f64],
    seed: u64,
) -> Result<Net> {
    let (inp, out) = (w.rows(), w.cols());
    if hidden < out {
        return Err(Error::dim("embed_affine", &[hidden], &[out]));
    }
    // Largest pre-activation std over output columns, from the input spread.
    let mut peak: f64 = 0.0;
    for c in 0..out {
        let var: f64 = (0..inp).map(|r| (w.get(r, c) * input_std[r]).powi(2)).sum();
        peak = peak.max(var.sqrt());
    }
    let eps = if peak > 0.0 { EMBED_PREACT_STD / peak } else { 1.0 };

    let mut r = rng(seed);
    let mut w1 = crate::numerics::linalg::gaussian_matrix(inp, hidden, 0.1 / (inp as f64).sqrt(), &mut r);
    let mut b1 = Tensor::zeros(&[hidden]);
    let mut w2 = Tensor::zeros(&[hidden, out]);
    for c in 0..out {
        for row in 0..inp {
            w1.set(row, c, eps * w.get(row, c));
        }
        b1.data_mut()[c] = eps * b.data()[c];
        w2.set(c, c, 1.0 / eps);
    }
    Ok(Net::Mlp {
        w1: Param::new(format!("{prefix}.w1"), w1),
        b1: Param::new(format!("{prefix}.b1"), b1),
        w2: Param::new(format!("{prefix}.w2"), w2),
        b2: Param::new(format!("{prefix}.b2"), Tensor::zeros(&[out])),
        act: Activation::Tanh,
    })
}

fn column_std(x: &Tensor) -> Vec<f64> {
    let mean = x.col_mean().into_data();
    let n = x.rows().max(1) as f64;
    let mut s = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            s[j] += (v - mean[j]).powi(2);
        }
    }
    s.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Replaces every module's maps with the given affine maps; MLP translators
/// get tanh nets that start close to them.
pub fn install_affine(t: &GlwTranslator, maps: &[AffineMaps], data: &[Tensor]) -> Result<GlwTranslator> {
    if maps.len() != t.n_modules() || data.len() != t.n_modules() {
        return Err(Error::dim("install_affine", &[maps.len(), data.len()], &[t.n_modules()]));
    }
    let mut out = t.clone();
    let hidden = 2 * t.dim;
    for (i, (m, v)) in maps.iter().zip(data).enumerate() {
        let slot = &mut out.modules[i];
        match t.mode {
            TranslatorMode::Linear => {
                slot.enc = Net::linear_from(&format!("m{i}.enc"), m.enc_w.clone(), m.enc_b.clone())?;
                slot.dec = Net::linear_from(&format!("m{i}.dec"), m.dec_w.clone(), m.dec_b.clone())?;
            }
            TranslatorMode::Mlp => {
                let seed = derive_seed(t.seed, &format!("glw-embed/{i}"));
                slot.enc = embed_affine(&format!("m{i}.enc"), &m.enc_w, &m.enc_b, hidden, &column_std(v), seed)?;
                let codes = v.matmul(&m.enc_w)?;
                slot.dec = embed_affine(
                    &format!("m{i}.dec"),
                    &m.dec_w,
                    &m.dec_b,
                    hidden,
                    &column_std(&codes),
                    derive_seed(seed, "dec"),
                )?;
            }
        }
    }
    Ok(out)
}

fn frames_with_common_rank(t: &GlwTranslator, data: &[Tensor]) -> Result<Vec<CanonicalFrame>> {
    if data.len() != t.n_modules() {
        return Err(Error::dim("init", &[data.len()], &[t.n_modules()]));
    }
    let frames = data
        .iter()
        .map(|v| canonical_frame(v, t.dim))
        .collect::<Result<Vec<_>>>()?;
    let rank = frames.iter().map(|f| f.rank()).min().unwrap_or(0);
    if frames.iter().all(|f| f.rank() == rank) {
        return Ok(frames);
    }
    data.iter().map(|v| canonical_frame(v, rank)).collect()
}

/// Re-initializes every module's maps from its canonical frame. All frames
/// share the smallest effective rank across modules.
pub fn moment_canonical(t: &GlwTranslator, data: &[Tensor]) -> Result<GlwTranslator> {
    let maps = frames_with_common_rank(t, data)?
        .iter()
        .map(|f| frame_maps(f, t.dim))
        .collect::<Result<Vec<_>>>()?;
    install_affine(t, &maps, data)
}

/// Initializes module 0 from its whitening frame and every other module from
/// affine maps to and from module 0, fitted on label-free correspondences
/// (see [`super::align`]). Matched pairs that involve module 0 join the fits.
pub fn self_learned(
    t: &GlwTranslator,
    data: &[Tensor],
    pairs: &[PairSet],
    cfg: &AlignConfig,
    seed: u64,
) -> Result<GlwTranslator> {
    if data.len() != t.n_modules() {
        return Err(Error::dim("self_learned", &[data.len()], &[t.n_modules()]));
    }
    let reference = frame_maps(&canonical_frame(&data[0], t.dim)?, t.dim)?;
    let mut maps = vec![reference.clone()];
    for (j, other) in data.iter().enumerate().skip(1) {
        let anchors = anchor_rows(pairs, j)?;
        let al = align_latents(
            &data[0],
            other,
            anchors.as_ref().map(|(r, o)| (r, o)),
            cfg,
            derive_seed(seed, &format!("align/{j}")),
        )?;
        let mut r = data[0].select_rows(&al.pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let mut o = other.select_rows(&al.pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        if let Some((ar, ao)) = &anchors {
            r = stack(&r, ar)?;
            o = stack(&o, ao)?;
        }
        let to_ref = affine_fit(&o, &r)?;
        let from_ref = affine_fit(&r, &o)?;
        maps.push(composed_maps(&reference, &to_ref, &from_ref)?);
    }
    install_affine(t, &maps, data)
}

fn stack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::dim("stack", a.shape(), b.shape()));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
}

/// All matched rows between module 0 and module `j`, as `(module 0, module j)`.
fn anchor_rows(pairs: &[PairSet], j: usize) -> Result<Option<(Tensor, Tensor)>> {
    let mut acc: Option<(Tensor, Tensor)> = None;
    for p in pairs {
        let (r, o) = match (p.left_module, p.right_module) {
            (0, m) if m == j => (&p.left, &p.right),
            (m, 0) if m == j => (&p.right, &p.left),
            _ => continue,
        };
        acc = Some(match acc {
            None => (r.clone(), o.clone()),
            Some((ar, ao)) => (stack(&ar, r)?, stack(&ao, o)?),
        });
    }
    Ok(acc)
}
