use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-batch gradient descent settings for the softmax probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on frozen features; returns test accuracy
/// in percent.
///
/// Features are standardized with the training set's per-column mean and
/// standard deviation (constant columns are left centered, unscaled).
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Empty("probe split"));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let width = train_x[0].len();
    if train_x.iter().chain(test_x).any(|r| r.len() != width) {
        return Err(Error::invalid("feature rows differ in width"));
    }
    let classes = train_y.iter().chain(test_y).max().copied().unwrap_or(0) + 1;
    let mut present = vec![false; classes];
    train_y.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("linear probe needs at least two classes"));
    }

    let (mean, scale) = standardizer(train_x);
    let norm = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|r| norm(r)).collect();

    let mut w = vec![0.0; classes * width];
    let mut b = vec![0.0; classes];
    let n = xs.len() as f64;
    let mut probs = vec![0.0; classes];
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; classes * width];
        let mut gb = vec![0.0; classes];
        for (x, &y) in xs.iter().zip(train_y) {
            softmax_into(&w, &b, x, &mut probs);
            for k in 0..classes {
                let d = probs[k] - if k == y { 1.0 } else { 0.0 };
                gb[k] += d;
                gw[k * width..(k + 1) * width]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(g, &xi)| *g += d * xi);
            }
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= cfg.learning_rate * (gi / n + cfg.l2 * *wi);
        }
        for (bi, gi) in b.iter_mut().zip(&gb) {
            *bi -= cfg.learning_rate * gi / n;
        }
    }

    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let x = norm(x);
            softmax_into(&w, &b, &x, &mut probs);
            argmax(&probs) == y
        })
        .count();
    Ok(100.0 * correct as f64 / test_x.len() as f64)
}

fn standardizer(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let width = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; width];
    for r in rows {
        var.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

fn softmax_into(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let width = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = b[k]
            + w[k * width..(k + 1) * width]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{standard_normal, RngStream};

    fn blobs(n: usize, centers: &[[f64; 2]], spread: f64, rng: &mut RngStream) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let k = i % centers.len();
            xs.push(vec![
                centers[k][0] + spread * standard_normal(rng),
                centers[k][1] + spread * standard_normal(rng),
            ]);
            ys.push(k);
        }
        (xs, ys)
    }

    #[test]
    fn separable_blobs() {
        let mut rng = RngStream::new(1, 0);
        let c = [[-3.0, 0.0], [3.0, 0.0]];
        let (tx, ty) = blobs(200, &c, 0.5, &mut rng);
        let (vx, vy) = blobs(200, &c, 0.5, &mut rng);
        let acc = linear_probe(&tx, &ty, &vx, &vy, &ProbeConfig::default()).unwrap();
        assert!(acc >= 99.0, "accuracy {acc}");
    }

    #[test]
    fn shuffled_labels_chance() {
        let mut rng = RngStream::new(2, 0);
        let c = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (tx, _) = blobs(400, &c, 1.0, &mut rng);
        let (vx, _) = blobs(2000, &c, 1.0, &mut rng);
        // labels independent of features, balanced
        let ty: Vec<usize> = (0..400).map(|_| rng.index(4)).collect();
        let vy: Vec<usize> = (0..2000).map(|i| i % 4).collect();
        let acc = linear_probe(&tx, &ty, &vx, &vy, &ProbeConfig::default()).unwrap();
        assert!((acc - 25.0).abs() <= 5.0, "accuracy {acc}");
    }

    #[test]
    fn train_fit_bounds_held_out() {
        let mut rng = RngStream::new(3, 0);
        let c = [[0.0, 0.0], [1.5, 0.0], [0.0, 1.5]];
        let (tx, ty) = blobs(150, &c, 0.8, &mut rng);
        let (vx, vy) = blobs(600, &c, 0.8, &mut rng);
        let cfg = ProbeConfig::default();
        let fit = linear_probe(&tx, &ty, &tx, &ty, &cfg).unwrap();
        let held = linear_probe(&tx, &ty, &vx, &vy, &cfg).unwrap();
        assert!(fit >= held, "train {fit} < held-out {held}");
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(linear_probe(&x, &[1, 1], &x, &[1, 1], &ProbeConfig::default()).is_err());
    }
}
