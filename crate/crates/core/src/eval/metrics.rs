//! Discrimination (AUC) and calibration (ICI) metrics.

use crate::error::{Error, Result};

fn check_inputs(a: &[f64], labels: &[f64], what: &str) -> Result<(usize, usize)> {
    if a.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{what}: {} scores but {} labels",
            a.len(),
            labels.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what}: non-finite score")));
    }
    let mut pos = 0;
    for &l in labels {
        if l == 1.0 {
            pos += 1;
        } else if l != 0.0 {
            return Err(Error::InvalidArgument(format!("{what}: label {l} is not 0/1")));
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{what} needs both classes")));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels, "auc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps midranks integral
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        for &r in &order[i..=j] {
            if labels[r] == 1.0 {
                rank2_pos += mid2;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as u64, neg as u64);
    // U = R_pos - p(p+1)/2, so 2U = 2R_pos - p(p+1)
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

pub const LOESS_SPAN: f64 = 0.75;
pub const ICI_MIN_N: usize = 20;

/// Degree-1 loess with tricube weights evaluated exactly at every `x`.
pub fn loess_fit(x: &[f64], y: &[f64], span: f64) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let q = ((span * n as f64).floor() as usize).clamp(2.min(n), n);

    let mut out = vec![0.0; n];
    let mut lo = 0;
    for i in 0..n {
        let x0 = xs[i];
        // q nearest neighbours form a contiguous window of the sorted values
        while lo + q < n && xs[lo + q] - x0 < x0 - xs[lo] {
            lo += 1;
        }
        let hi = lo + q;
        let dq = (x0 - xs[lo]).max(xs[hi - 1] - x0);
        if dq == 0.0 {
            // every neighbour is tied with x0: average the whole tie block
            let a = xs.partition_point(|&v| v < x0);
            let b = xs.partition_point(|&v| v <= x0);
            out[order[i]] = ys[a..b].iter().sum::<f64>() / (b - a) as f64;
            continue;
        }
        let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in lo..hi {
            let dx = xs[k] - x0;
            let t = dx.abs() / dq;
            let w = if t >= 1.0 { 0.0 } else { (1.0 - t * t * t).powi(3) };
            sw += w;
            swx += w * dx;
            swy += w * ys[k];
            swxx += w * dx * dx;
            swxy += w * dx * ys[k];
        }
        // x0 itself carries weight 1, so sw > 0
        let denom = sw * swxx - swx * swx;
        let fitted = if denom <= 1e-12 * sw * sw.max(swxx) {
            swy / sw
        } else {
            // intercept of the fit centred at x0
            (swxx * swy - swx * swxy) / denom
        };
        out[order[i]] = fitted;
    }
    out
}

/// Integrated calibration index: mean absolute gap between the loess-smoothed
/// observed event rate and the predicted probability.
pub fn ici(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(probs, labels, "ici")?;
    if probs.len() < ICI_MIN_N {
        return Err(Error::InvalidArgument(format!(
            "ici needs at least {ICI_MIN_N} observations, got {}",
            probs.len()
        )));
    }
    let smooth = loess_fit(probs, labels, LOESS_SPAN);
    Ok(smooth.iter().zip(probs).map(|(s, p)| (s - p).abs()).sum::<f64>() / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3, 0.6, 0.8], &[0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ici_constant_at_prevalence_is_zero() {
        let labels: Vec<f64> = (0..40).map(|i| f64::from(i % 4 == 0)).collect();
        let probs = vec![0.25; 40];
        assert!(ici(&probs, &labels).unwrap() < 1e-12);
    }

    #[test]
    fn loess_reproduces_lines() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        for (f, t) in loess_fit(&x, &y, 0.75).iter().zip(&y) {
            assert!((f - t).abs() < 1e-9);
        }
    }

    #[test]
    fn ici_guards() {
        assert!(ici(&[0.5; 10], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).is_err());
    }
}
