use serde::{Deserialize, Serialize};

use super::translator::GlwTranslator;
use crate::error::{Error, Result};
use crate::numerics::{norm, squared_distance, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => squared_distance(a, b),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let denom = norm(a) * norm(b);
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot / denom
                }
            }
        }
    }
}

/// Index of the nearest gallery row; ties go to the lower index.
pub fn nearest(query: &[f64], gallery: &Tensor, metric: Metric) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for g in 0..gallery.rows() {
        let d = metric.distance(query, gallery.row(g));
        if d < best_d {
            best_d = d;
            best = g;
        }
    }
    best
}

/// Fraction of predictions whose nearest gallery row is `truth[r]`.
pub fn retrieval_at_1(
    predicted: &Tensor,
    gallery: &Tensor,
    truth: &[usize],
    metric: Metric,
) -> Result<f64> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyBatch { op: "retrieval_accuracy" });
    }
    if predicted.rows() != truth.len() || predicted.cols() != gallery.cols() {
        return Err(Error::dim("retrieval_accuracy", predicted.shape(), gallery.shape()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyBatch { op: "retrieval_accuracy" });
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= gallery.rows()) {
        return Err(Error::Contract(format!(
            "probe truth index {bad} outside gallery of {}",
            gallery.rows()
        )));
    }
    let hits = (0..predicted.rows())
        .filter(|&r| nearest(predicted.row(r), gallery, metric) == truth[r])
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Translates probes from module `i` into module `j` and scores top-1
/// retrieval against a gallery of module-`j` latents.
pub fn retrieval_accuracy(
    t: &GlwTranslator,
    i: usize,
    j: usize,
    probes: &Tensor,
    gallery: &Tensor,
    truth: &[usize],
    metric: Metric,
) -> Result<f64> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyBatch { op: "retrieval_accuracy" });
    }
    let predicted = t.translate(i, j, probes)?;
    retrieval_at_1(&predicted, gallery, truth, metric)
}
