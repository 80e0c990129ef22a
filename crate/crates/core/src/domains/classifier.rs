use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{collect_grads, derive_seed, rng, Net, OptimConfig, Optimizer, Tape, Tensor};

const CLASSIFIER_LR: f64 = 0.05;

/// Softmax linear head over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub n_classes: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub head: Net,
    pub train_accuracy: f64,
    /// Accuracy on the held-out split, when one was used.
    pub heldout_accuracy: Option<f64>,
}

fn distinct_classes(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

impl ClassifierHead {
    /// Full-batch cross-entropy training on all given rows.
    pub fn train(features: &Tensor, labels: &[usize], epochs: usize, seed: u64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim("fit_classifier", features.shape(), &[labels.len()]));
        }
        let found = distinct_classes(labels);
        if found < 2 {
            return Err(Error::DegenerateLabels { found });
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let f = features.cols();
        let feature_mean = features.col_mean().into_data();
        let mut feature_std = vec![0.0; f];
        for i in 0..features.rows() {
            for (j, v) in features.row(i).iter().enumerate() {
                feature_std[j] += (v - feature_mean[j]).powi(2);
            }
        }
        for s in &mut feature_std {
            *s = (*s / features.rows() as f64).sqrt().max(1e-8);
        }
        let mut init_rng = rng(derive_seed(seed, "classifier-init"));
        let mut head = ClassifierHead {
            n_classes,
            feature_mean,
            feature_std,
            head: Net::linear("cls", f, n_classes, &mut init_rng),
            train_accuracy: 0.0,
            heldout_accuracy: None,
        };
        let x = head.standardize(features)?;
        let mut opt = Optimizer::new(OptimConfig::adam(CLASSIFIER_LR))?;
        for _ in 0..epochs {
            let mut tape = Tape::new();
            let bound = head.head.bind(&mut tape, true)?;
            let xv = tape.constant(x.clone())?;
            let logits = bound.forward(&mut tape, xv)?;
            let loss = tape.softmax_xent(logits, labels)?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, bound.vars());
            opt.step(&mut head.head.params_mut(), &grads)?;
        }
        head.train_accuracy = head.accuracy(features, labels)?;
        Ok(head)
    }

    fn standardize(&self, features: &Tensor) -> Result<Tensor> {
        if features.cols() != self.feature_mean.len() {
            return Err(Error::dim(
                "classifier",
                features.shape(),
                &[self.feature_mean.len()],
            ));
        }
        let mut x = features.clone();
        let f = x.cols();
        for row in x.data_mut().chunks_mut(f) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.feature_mean[j]) / self.feature_std[j];
            }
        }
        Ok(x)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let logits = self.head.eval(&self.standardize(features)?)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch { op: "accuracy" });
        }
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Trains on a seeded 80% split and reports accuracy on the remaining 20%.
pub fn fit_classifier(
    latents: &Tensor,
    labels: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<ClassifierHead> {
    let found = distinct_classes(labels);
    if found < 2 {
        return Err(Error::DegenerateLabels { found });
    }
    if latents.rows() != labels.len() {
        return Err(Error::dim("fit_classifier", latents.shape(), &[labels.len()]));
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(derive_seed(seed, "classifier-split")));
    let n_train = ((n as f64) * 0.8).round() as usize;
    let (train_idx, test_idx) = order.split_at(n_train.clamp(1, n.saturating_sub(1).max(1)));
    let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let mut head = ClassifierHead::train(&latents.select_rows(train_idx), &train_y, epochs, seed)?;
    if !test_y.is_empty() {
        head.heldout_accuracy = Some(head.accuracy(&latents.select_rows(test_idx), &test_y)?);
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_clusters(n: usize) -> (Tensor, Vec<usize>) {
        let mut r = rng(1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -3.0 } else { 3.0 };
            // noise bounded to keep a margin of at least 1 around x = 0
            let e: f64 = r.sample::<f64, _>(StandardNormal).clamp(-2.0, 2.0);
            rows.push(vec![c + e, r.sample::<f64, _>(StandardNormal)]);
            labels.push(y);
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_clusters_classify_perfectly() {
        let (x, y) = two_clusters(200);
        // margin oracle: the first coordinate separates the classes with gap >= 2
        let gap = (0..200)
            .map(|i| if y[i] == 0 { -x.get(i, 0) } else { x.get(i, 0) })
            .fold(f64::INFINITY, f64::min);
        assert!(gap >= 1.0);
        let head = fit_classifier(&x, &y, 300, 0).unwrap();
        assert_eq!(head.heldout_accuracy, Some(1.0));
    }

    #[test]
    fn duplicate_test_set_matches_training_accuracy() {
        let (x, y) = two_clusters(100);
        let head = ClassifierHead::train(&x, &y, 50, 0).unwrap();
        assert!(head.accuracy(&x, &y).unwrap() >= head.train_accuracy - 1e-9);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Tensor::zeros(&[5, 2]);
        assert!(matches!(
            fit_classifier(&x, &[1; 5], 10, 0),
            Err(Error::DegenerateLabels { found: 1 })
        ));
    }
}
