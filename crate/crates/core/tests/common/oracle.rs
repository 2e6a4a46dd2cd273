//! Straight-loop re-implementations of the evaluation metrics, written
//! against plain `Vec<Vec<f64>>` rows.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use super::{naive_cosine, naive_mean_rows};

fn segments(rows: &[Vec<f64>], start: usize, end: usize, seg: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut s = start;
    while s + seg <= end {
        out.push(naive_mean_rows(rows, s, s + seg));
        s += seg;
    }
    out
}

fn adjacent_score(segs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..segs.len() - 1 {
        let c = naive_cosine(&segs[i], &segs[i + 1]);
        total += if c > 0.0 { c } else { 0.0 };
    }
    100.0 * total / (segs.len() - 1) as f64
}

pub fn consistency(rows: &[Vec<f64>], seg: usize) -> f64 {
    adjacent_score(&segments(rows, 0, rows.len(), seg))
}

pub fn retention(rows: &[Vec<f64>], spans: &[(usize, usize)], seg: usize) -> f64 {
    let mut total = 0.0;
    for &(s, e) in spans {
        total += adjacent_score(&segments(rows, s, e, seg));
    }
    total / spans.len() as f64
}

pub fn divergence(rows: &[Vec<f64>], early: f64, late: f64) -> f64 {
    let n = rows.len();
    let a = (early * n as f64).floor() as usize;
    let b = (late * n as f64).floor() as usize;
    1.0 - naive_cosine(&naive_mean_rows(rows, 0, a), &naive_mean_rows(rows, n - b, n))
}

pub fn drift(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0];
    for e in &embeddings[1..] {
        out.push(100.0 * (1.0 - naive_cosine(e, &embeddings[0])));
    }
    out
}

pub fn entropy_of_logits(logits: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in logits {
        if v > m {
            m = v;
        }
    }
    let mut z = 0.0;
    for &v in logits {
        z += (v - m).exp();
    }
    let mut h = 0.0;
    for &v in logits {
        let p = (v - m).exp() / z;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

pub fn entropy_profile(logit_rows: &[Vec<f64>], bins: usize) -> Vec<f64> {
    let n = logit_rows.len();
    let mut out = Vec::new();
    for b in 0..bins {
        let mut s = 0.0;
        let mut c = 0;
        for (t, row) in logit_rows.iter().enumerate() {
            // t/n lies in [b/bins, (b+1)/bins)
            if t * bins >= b * n && t * bins < (b + 1) * n {
                s += entropy_of_logits(row);
                c += 1;
            }
        }
        out.push(if c == 0 { 0.0 } else { s / c as f64 });
    }
    out
}

/// Deviation of layer `l` from `l - 1`, one entry per `l ≥ 1`.
pub fn head_deviation(layers: &[Vec<Vec<Vec<f64>>>]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 1..layers.len() {
        let mut total = 0.0;
        let mut count = 0;
        for h in 0..layers[l].len() {
            for i in 0..layers[l][h].len() {
                let mut tv = 0.0;
                for j in 0..layers[l][h][i].len() {
                    tv += (layers[l][h][i][j] - layers[l - 1][h][i][j]).abs();
                }
                total += tv / 2.0;
                count += 1;
            }
        }
        out.push(100.0 * total / count as f64);
    }
    out
}

pub fn stability(rows: &[Vec<f64>], groups: &[(usize, usize)]) -> Vec<f64> {
    groups
        .iter()
        .map(|&(s, e)| {
            let norms: Vec<f64> = rows[s..e].iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            (norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / norms.len() as f64).sqrt()
        })
        .collect()
}

/// `exp` of mean `-ln softmax(row)[target]` over every (row, target) pair.
pub fn perplexity(pairs: &[(Vec<f64>, usize)]) -> f64 {
    let mut total = 0.0;
    for (row, t) in pairs {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += z.ln() + m - row[*t];
    }
    (total / pairs.len() as f64).exp()
}
