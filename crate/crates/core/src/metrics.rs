//! Agreement scores between labelings.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::InvalidShape("accuracy of an empty labeling".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

struct Contingency {
    n: f64,
    joint: BTreeMap<(usize, usize), usize>,
    left: BTreeMap<usize, usize>,
    right: BTreeMap<usize, usize>,
}

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let mut c = Contingency {
        n: a.len() as f64,
        joint: BTreeMap::new(),
        left: BTreeMap::new(),
        right: BTreeMap::new(),
    };
    for (&x, &y) in a.iter().zip(b) {
        *c.joint.entry((x, y)).or_default() += 1;
        *c.left.entry(x).or_default() += 1;
        *c.right.entry(y).or_default() += 1;
    }
    c
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `I(a; b) / ((H(a) + H(b)) / 2)`.
///
/// Two single-cluster labelings score 1. The sum over the contingency table
/// is symmetric in its arguments, so `nmi(a, b) == nmi(b, a)` exactly.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidShape("NMI of empty labelings".into()));
    }
    let c = contingency(a, b);
    let (ha, hb) = (entropy(&c.left, c.n), entropy(&c.right, c.n));
    let denom = (ha + hb) / 2.0;
    if denom == 0.0 {
        return Ok(1.0);
    }
    let mut terms: Vec<f64> = c
        .joint
        .iter()
        .map(|(&(x, y), &nxy)| {
            let nxy = nxy as f64;
            let (nx, ny) = (c.left[&x] as f64, c.right[&y] as f64);
            nxy / c.n * (c.n * nxy / (nx * ny)).ln()
        })
        .collect();
    // summing in value order makes the result independent of which argument
    // came first
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// `(1/N) * sum over clusters of the size of its largest truth class`.
pub fn purity(clusters: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(clusters.len(), truth.len())?;
    if clusters.is_empty() {
        return Err(Error::InvalidShape("purity of empty labelings".into()));
    }
    let c = contingency(clusters, truth);
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(k, _), &n) in &c.joint {
        let e = best.entry(k).or_default();
        *e = (*e).max(n);
    }
    Ok(best.values().sum::<usize>() as f64 / c.n)
}
