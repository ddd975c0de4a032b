use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Tensor};

use super::eval::{argmax, report_from_logits};

/// What gets averaged across modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionAverage {
    #[default]
    Logits,
    Probabilities,
}

/// Elementwise mean of `[N, K]` score sets.
pub fn fused_scores(sets: &[Tensor<f64>], average: FusionAverage) -> Result<Tensor<f64>> {
    let first = sets.first().ok_or_else(|| Error::invalid("fuse_modes", "no score sets"))?;
    if first.rank() != 2 {
        return Err(Error::shape("fuse_modes", "rank", 2, first.rank()));
    }
    let k = first.shape()[1];
    let mut acc = vec![0.0; first.numel()];
    for s in sets {
        if s.shape() != first.shape() {
            return Err(Error::shape("fuse_modes", "score set", format!("{:?}", first.shape()), format!("{:?}", s.shape())));
        }
        let vals = match average {
            FusionAverage::Logits => s.data().to_vec(),
            FusionAverage::Probabilities => softmax_rows(s.data(), k),
        };
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
    }
    let n = sets.len() as f64;
    Tensor::new(first.shape().to_vec(), acc.into_iter().map(|v| v / n).collect())
}

/// Class predictions from averaged scores; ties go to the lowest index.
pub fn fuse_modes(sets: &[Tensor<f64>], average: FusionAverage) -> Result<Vec<usize>> {
    let f = fused_scores(sets, average)?;
    let k = f.shape()[1];
    Ok(f.data().chunks(k).map(argmax).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub name: String,
    pub top1: f64,
}

/// One accuracy row per mode followed by the fused row.
pub fn fusion_report(modes: &[(String, Tensor<f64>)], labels: &[usize], average: FusionAverage) -> Result<Vec<FusionRow>> {
    let mut rows = Vec::with_capacity(modes.len() + 1);
    for (name, logits) in modes {
        let k = logits.shape().get(1).copied().unwrap_or(0);
        rows.push(FusionRow {
            name: name.clone(),
            top1: report_from_logits(logits.data(), k, labels)?.top1,
        });
    }
    let sets: Vec<Tensor<f64>> = modes.iter().map(|(_, l)| l.clone()).collect();
    let pred = fuse_modes(&sets, average)?;
    if pred.len() != labels.len() {
        return Err(Error::shape("fusion_report", "labels", pred.len(), labels.len()));
    }
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    rows.push(FusionRow {
        name: "fusion".into(),
        top1: correct as f64 / labels.len() as f64,
    });
    Ok(rows)
}
