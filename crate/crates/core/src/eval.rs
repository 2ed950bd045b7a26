//! Pixel-wise AUROC and average precision, pooled dataset evaluation and the
//! EMA-of-AP early stopping rule.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_window, AnomalyMap};

pub const STOP_THRESHOLD: f64 = 0.875;
pub const EMA_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub ap: f64,
    /// Positive fraction of the pool; also the AP of an uninformative scorer.
    pub prevalence: f64,
    pub n_positive: u64,
    pub n_negative: u64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len()],
            actual: vec![scores.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("labels contain a single class"));
    }
    Ok((pos, neg))
}

fn sorted_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let order = sorted_order(scores);
    let mut neg_below = 0u64;
    let mut wins = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos_g, mut neg_g) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            i += 1;
        }
        wins += (pos_g * neg_below) as f64 + 0.5 * (pos_g * neg_g) as f64;
        neg_below += neg_g;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision over descending unique thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, _) = check_inputs(scores, labels)?;
    let mut order = sorted_order(scores);
    order.reverse();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Exponential moving average of validation AP with a stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopState {
    pub ema: f64,
    pub threshold: f64,
    pub initialized: bool,
}

impl Default for StopState {
    fn default() -> Self {
        StopState {
            ema: 0.0,
            threshold: STOP_THRESHOLD,
            initialized: false,
        }
    }
}

impl StopState {
    /// Folds in one AP value (expected in [0, 1]) and reports whether to stop.
    pub fn update(&mut self, ap: f64) -> bool {
        if self.initialized {
            self.ema = EMA_DECAY * self.ema + (1.0 - EMA_DECAY) * ap;
        } else {
            self.ema = ap;
            self.initialized = true;
        }
        self.ema >= self.threshold
    }
}

pub fn update_stop(state: StopState, ap: f64) -> (StopState, bool) {
    let mut next = state;
    let stop = next.update(ap);
    (next, stop)
}

/// Pools every pixel of every sample and scores the pool.
pub fn evaluate_dataset(preds: &[AnomalyMap], gts: &[ArrayD<bool>]) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![gts.len()],
            actual: vec![preds.len()],
        });
    }
    let total: usize = gts.iter().map(|g| g.len()).sum();
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (p, g) in preds.iter().zip(gts) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                expected: g.shape().to_vec(),
                actual: p.shape().to_vec(),
            });
        }
        scores.extend(p.values().iter().map(|&v| f64::from(v)));
        labels.extend(g.iter().copied());
    }
    let n_positive = labels.iter().filter(|&&l| l).count() as u64;
    let n_negative = labels.len() as u64 - n_positive;
    Ok(MetricReport {
        auroc: auroc(&scores, &labels)?,
        ap: average_precision(&scores, &labels)?,
        prevalence: n_positive as f64 / labels.len() as f64,
        n_positive,
        n_negative,
    })
}

/// Axis-aligned ground-truth box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub origin: Vec<usize>,
    pub extent: Vec<usize>,
}

/// Fills every box into a binary mask.
pub fn rasterise_boxes(shape: &[usize], boxes: &[BoundingBox]) -> Result<ArrayD<bool>> {
    let mut mask = ArrayD::from_elem(IxDyn(shape), false);
    for b in boxes {
        check_window(shape, &b.origin, &b.extent)?;
        mask.slice_each_axis_mut(|ax| {
            let a = ax.axis.index();
            ndarray::Slice::from(b.origin[a]..b.origin[a] + b.extent[a])
        })
        .fill(true);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let l = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let labels: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        assert_eq!(average_precision(&[0.3; 50], &labels).unwrap(), 10.0 / 50.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(auroc(&[0.1, f64::NAN], &[true, false]).is_err());
    }

    #[test]
    fn stop_rule_examples() {
        let (s, stop) = update_stop(StopState::default(), 0.9);
        assert_eq!(s.ema, 0.9);
        assert!(stop);

        let s = StopState {
            ema: 0.8,
            threshold: STOP_THRESHOLD,
            initialized: true,
        };
        let (s, stop) = update_stop(s, 0.8);
        assert!((s.ema - 0.8).abs() < 1e-15);
        assert!(!stop);

        let s = StopState {
            ema: 0.87,
            threshold: STOP_THRESHOLD,
            initialized: true,
        };
        let (s, stop) = update_stop(s, 1.0);
        assert!((s.ema - 0.883).abs() < 1e-12);
        assert!(stop);
    }

    #[test]
    fn dataset_pool() {
        let gt = rasterise_boxes(
            &[4, 4],
            &[BoundingBox {
                origin: vec![1, 1],
                extent: vec![2, 2],
            }],
        )
        .unwrap();
        let pred = AnomalyMap::new(gt.mapv(|b| if b { 1.0 } else { 0.0 })).unwrap();
        let r = evaluate_dataset(&[pred], std::slice::from_ref(&gt)).unwrap();
        assert_eq!((r.auroc, r.ap), (1.0, 1.0));
        assert_eq!((r.n_positive, r.n_negative), (4, 12));

        let flat = AnomalyMap::new(ArrayD::from_elem(IxDyn(&[4, 4]), 0.5)).unwrap();
        let r = evaluate_dataset(std::slice::from_ref(&flat), &[gt]).unwrap();
        assert_eq!(r.ap, r.prevalence);
        assert_eq!(r.auroc, 0.5);

        let wrong = ArrayD::from_elem(IxDyn(&[4, 3]), false);
        assert!(evaluate_dataset(&[flat], &[wrong]).is_err());
    }

    #[test]
    fn boxes_out_of_bounds_rejected() {
        let b = BoundingBox {
            origin: vec![3, 0],
            extent: vec![2, 1],
        };
        assert!(rasterise_boxes(&[4, 4], &[b]).is_err());
    }
}
