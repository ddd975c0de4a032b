use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, SkeletonSequence};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{fsum, Real, Tensor};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub mean_loss: f64,
}

/// Metrics for row-major `[N, k]` logits.
pub fn report_from_logits(logits: &[f64], k: usize, labels: &[usize]) -> Result<EvalReport> {
    if k == 0 || logits.len() != labels.len() * k {
        return Err(Error::shape("evaluate", "logits", format!("{} x {k}", labels.len()), logits.len()));
    }
    if labels.is_empty() {
        return Err(Error::invalid("evaluate", "no samples"));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut losses = Vec::with_capacity(labels.len());
    for (row, &y) in logits.chunks(k).zip(labels) {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        confusion[y][argmax(row)] += 1;
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + fsum(row.iter().map(|&z| (z - mx).exp())).ln();
        losses.push(lse - row[y]);
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        samples: labels.len(),
        top1: correct as f64 / labels.len() as f64,
        per_class,
        confusion,
        mean_loss: fsum(losses.iter().copied()) / labels.len() as f64,
    })
}

/// Eval-mode logits `[N, num_classes]` for prepared sequences. Batches run
/// in parallel on independent tapes; the result does not depend on the
/// number of threads.
pub fn predict_logits<T: Real>(model: &Model<T>, data: &[SkeletonSequence], batch_size: usize) -> Result<Tensor<f64>> {
    let k = model.config().num_classes;
    let chunks: Vec<&[SkeletonSequence]> = data.chunks(batch_size.max(1)).collect();
    let parts: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
            let x = batch_tensor::<T>(&refs)?;
            Ok(model.predict(&x)?.data().iter().map(|v| v.as_f64()).collect())
        })
        .collect::<Result<_>>()?;
    Tensor::new(vec![data.len(), k], parts.concat())
}

pub fn evaluate<T: Real>(model: &Model<T>, data: &[SkeletonSequence], batch_size: usize) -> Result<EvalReport> {
    let logits = predict_logits(model, data, batch_size)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    report_from_logits(logits.data(), model.config().num_classes, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5, -3.0]), 1);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        let logits: Vec<f64> = labels
            .iter()
            .flat_map(|&y| (0..3).map(move |c| if c == y { 5.0 } else { 0.0 }))
            .collect();
        let r = report_from_logits(&logits, 3, &labels).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(r.per_class, vec![Some(1.0); 3]);
    }

    #[test]
    fn empty_class_is_undefined() {
        let r = report_from_logits(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 3, &[0, 1]).unwrap();
        assert_eq!(r.per_class[2], None);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("null"));
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), [1, 1, 0][c]);
        }
    }

    #[test]
    fn random_logits_near_chance() {
        let (n, k) = (4000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits: Vec<f64> = (0..n * k).map(|_| rng.random()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let r = report_from_logits(&logits, k, &labels).unwrap();
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((r.top1 - p).abs() < 3.0 * sigma, "{}", r.top1);
    }

    #[test]
    fn uniform_logits_loss_is_log_k() {
        let r = report_from_logits(&[0.0; 6], 2, &[0, 1, 1]).unwrap();
        assert!((r.mean_loss - 2f64.ln()).abs() < 1e-15);
    }
}
