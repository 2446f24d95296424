//! Rater agreement statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Fleiss' kappa over a subjects × raters matrix of category codes. The
/// category set is the set of codes observed anywhere.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Result<f64> {
    let subjects = ratings.len();
    let raters = ratings.first().map_or(0, Vec::len);
    if subjects < 2 || raters < 2 {
        return Err(Error::InvalidInput(
            "Fleiss' kappa needs at least 2 subjects and 2 raters".into(),
        ));
    }
    if ratings.iter().any(|r| r.len() != raters) {
        return Err(Error::InvalidInput(
            "every subject needs the same number of ratings".into(),
        ));
    }
    let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
    let n = raters as f64;
    let mut agreement_sum = 0.0;
    for row in ratings {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in row {
            *counts.entry(c).or_default() += 1;
            *totals.entry(c).or_default() += 1;
        }
        let sq: usize = counts.values().map(|&k| k * k).sum();
        agreement_sum += (sq as f64 - n) / (n * (n - 1.0));
    }
    let p_bar = agreement_sum / subjects as f64;
    let all = (subjects * raters) as f64;
    let p_e: f64 = totals.values().map(|&k| (k as f64 / all).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined(
            "Fleiss' kappa with a single category (no variance)",
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Quadratic weighted kappa between two ordinal ratings of the same items.
///
/// Uses the moment form `1 − Σ(a_i − b_i)² / ((1/n) Σ_i Σ_j (a_i − b_j)²)`,
/// which equals the confusion-matrix definition with weights
/// `(i − j)² / (K − 1)²` because the normalizer cancels.
pub fn quadratic_weighted_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "QWK needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("QWK needs at least one item".into()));
    }
    let n = a.len() as f64;
    let observed: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let (sa, sb) = (
        a.iter().sum::<usize>() as f64,
        b.iter().sum::<usize>() as f64,
    );
    let (qa, qb) = (
        a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>(),
        b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>(),
    );
    let expected = (n * qa + n * qb - 2.0 * sa * sb) / n;
    if expected == 0.0 {
        return Err(Error::Undefined(
            "QWK with both raters constant at one value",
        ));
    }
    Ok(1.0 - observed / expected)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a zero-variance vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput(
            "Spearman needs two equal-length vectors of at least 2 values".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("Spearman input contains NaN".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}
