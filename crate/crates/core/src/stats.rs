//! Rank correlation and small numeric helpers for the analysis suite.

use alloc::vec;
use alloc::vec::Vec;

/// Spearman rank correlation; `Undefined` when either input is constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Spearman {
    Defined(f64),
    Undefined,
}

impl Spearman {
    pub fn value(self) -> Option<f64> {
        match self {
            Spearman::Defined(v) => Some(v),
            Spearman::Undefined => None,
        }
    }
}

/// Average ranks (1-based), ties share the mean of their rank run.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    let denom = libm::sqrt(dx * dy);
    if denom == 0.0 {
        None
    } else {
        Some(num / denom)
    }
}

/// Rank correlation with average ranks for ties. Inputs must have equal
/// length of at least 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    match pearson(&ranks(x), &ranks(y)) {
        Some(r) => Spearman::Defined(r),
        None => Spearman::Undefined,
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    libm::sqrt(acc)
}

pub fn l2_norm(a: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for x in a {
        acc += (*x as f64) * (*x as f64);
    }
    libm::sqrt(acc)
}

/// Cosine similarity of two flattened tensors; 1.0 for two zero vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += (*x as f64) * (*y as f64);
        na += (*x as f64) * (*x as f64);
        nb += (*y as f64) * (*y as f64);
    }
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (libm::sqrt(na) * libm::sqrt(nb))
}
