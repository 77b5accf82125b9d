//! Permutation sets with a minimum pairwise Hamming distance.
//!
//! A set with minimum distance `h` keeps every pair of permutations apart in
//! at least `h` positions, so hiding any `h - 1` positions still leaves the
//! permutation identifiable. The jigsaw generator uses 701 permutations of 9
//! tiles at distance 3, which tolerates up to two occluded tiles.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{read_file, write_file};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draw budget for [`generate`].
pub const DRAW_BUDGET: usize = 1_000_000;

pub type Permutation = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub n_tiles: usize,
    pub min_hamming: usize,
    pub seed: u64,
    perms: Vec<Permutation>,
}

impl PermutationSet {
    /// Validates every entry and the pairwise distance constraint.
    pub fn new(
        n_tiles: usize,
        min_hamming: usize,
        seed: u64,
        perms: Vec<Permutation>,
    ) -> Result<Self> {
        for p in &perms {
            check_permutation(p)?;
            if p.len() != n_tiles {
                return Err(Error::DimensionMismatch {
                    expected: n_tiles,
                    found: p.len(),
                });
            }
        }
        let ps = PermutationSet {
            n_tiles,
            min_hamming,
            seed,
            perms,
        };
        if ps.len() > 1 {
            let observed = pairwise(&ps.perms).0;
            if observed < min_hamming {
                return Err(Error::InvalidPermutation(format!(
                    "pairwise Hamming distance {observed} below required {min_hamming}"
                )));
            }
        }
        Ok(ps)
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.perms[i]
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }
}

fn check_permutation(p: &[usize]) -> Result<()> {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidPermutation(format!(
                "{p:?} is not a bijection"
            )));
        }
    }
    Ok(())
}

/// Number of positions where `p` and `q` differ.
pub fn hamming(p: &[usize], q: &[usize]) -> Result<usize> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    check_permutation(p)?;
    check_permutation(q)?;
    Ok(hamming_unchecked(p, q))
}

#[inline]
fn hamming_unchecked(p: &[usize], q: &[usize]) -> usize {
    p.iter().zip(q).filter(|(a, b)| a != b).count()
}

pub fn identity(n: usize) -> Permutation {
    (0..n).collect()
}

pub fn inverse(p: &[usize]) -> Permutation {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

/// `out[j] = items[p[j]]`.
pub fn apply<T: Clone>(p: &[usize], items: &[T]) -> Vec<T> {
    p.iter().map(|&i| items[i].clone()).collect()
}

/// Greedy rejection sampling: the identity first, then uniform random
/// permutations accepted when they keep `min_hamming` to everything accepted
/// so far, for at most [`DRAW_BUDGET`] draws.
pub fn generate(
    n_tiles: usize,
    target_size: usize,
    min_hamming: usize,
    seed: u64,
) -> Result<PermutationSet> {
    if n_tiles < 2 || target_size == 0 || min_hamming == 0 {
        return Err(Error::InvalidConfig(format!(
            "need n_tiles >= 2, target_size >= 1, min_hamming >= 1 \
             (got {n_tiles}, {target_size}, {min_hamming})"
        )));
    }
    if min_hamming > n_tiles {
        return Err(Error::Unsatisfiable(format!(
            "min_hamming {min_hamming} exceeds n_tiles {n_tiles}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut perms = vec![identity(n_tiles)];
    let mut candidate = identity(n_tiles);
    let mut draws = 0;
    while perms.len() < target_size {
        if draws == DRAW_BUDGET {
            return Err(Error::Unsatisfiable(format!(
                "found {} of {target_size} permutations of {n_tiles} tiles at distance \
                 >= {min_hamming} within {DRAW_BUDGET} draws",
                perms.len()
            )));
        }
        draws += 1;
        rng.shuffle(&mut candidate);
        if perms
            .iter()
            .all(|p| hamming_unchecked(p, &candidate) >= min_hamming)
        {
            perms.push(candidate.clone());
        }
    }
    Ok(PermutationSet {
        n_tiles,
        min_hamming,
        seed,
        perms,
    })
}

/// Exact pairwise statistics of a permutation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub size: usize,
    pub n_tiles: usize,
    /// `n_tiles + 1` when there are no pairs.
    pub min_hamming_observed: usize,
    /// Mean number of differing positions over all pairs.
    pub mean_hamming_observed: Option<f64>,
    /// `mean_hamming_observed / n_tiles`.
    pub mean_normalized_hamming: Option<f64>,
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        write!(
            f,
            "size {}  tiles {}  min hamming {}  mean hamming {}  mean normalized {}",
            self.size,
            self.n_tiles,
            self.min_hamming_observed,
            opt(self.mean_hamming_observed),
            opt(self.mean_normalized_hamming)
        )
    }
}

/// (min, sum, pair count) over all unordered pairs.
fn pairwise(perms: &[Permutation]) -> (usize, u64, u64) {
    (0..perms.len())
        .into_par_iter()
        .map(|i| {
            let mut min = usize::MAX;
            let mut sum = 0u64;
            for q in &perms[i + 1..] {
                let h = hamming_unchecked(&perms[i], q);
                min = min.min(h);
                sum += h as u64;
            }
            (min, sum, (perms.len() - i - 1) as u64)
        })
        .reduce(
            || (usize::MAX, 0, 0),
            |a, b| (a.0.min(b.0), a.1 + b.1, a.2 + b.2),
        )
}

pub fn verify(ps: &PermutationSet) -> VerifyReport {
    let (min, sum, pairs) = pairwise(&ps.perms);
    let mean = (pairs > 0).then(|| sum as f64 / pairs as f64);
    VerifyReport {
        size: ps.len(),
        n_tiles: ps.n_tiles,
        min_hamming_observed: if pairs == 0 { ps.n_tiles + 1 } else { min },
        mean_hamming_observed: mean,
        mean_normalized_hamming: mean.map(|m| m / ps.n_tiles as f64),
    }
}

/// Header line `n_tiles size min_hamming seed`, then one space-separated
/// permutation per line.
pub fn to_text(ps: &PermutationSet) -> String {
    let mut s = format!(
        "{} {} {} {}\n",
        ps.n_tiles,
        ps.len(),
        ps.min_hamming,
        ps.seed
    );
    for p in &ps.perms {
        let line: Vec<String> = p.iter().map(usize::to_string).collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    s
}

pub fn from_text(text: &str) -> Result<PermutationSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty permutation file".into()))?;
    let fields: Vec<u64> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader(format!("bad header line {header:?}")))?;
    let [n_tiles, size, min_hamming, seed] = fields[..] else {
        return Err(Error::MalformedHeader(format!(
            "header needs 4 fields, got {header:?}"
        )));
    };
    let perms = lines
        .map(|l| {
            l.split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<Permutation, _>>()
                .map_err(|_| Error::InvalidPermutation(format!("bad line {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if perms.len() != size as usize {
        return Err(Error::Truncated {
            expected: size as usize,
            found: perms.len(),
        });
    }
    PermutationSet::new(n_tiles as usize, min_hamming as usize, seed, perms)
}

pub fn read_permset(path: impl AsRef<Path>) -> Result<PermutationSet> {
    let bytes = read_file(path.as_ref())?;
    from_text(&String::from_utf8_lossy(&bytes))
}

pub fn write_permset(ps: &PermutationSet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), to_text(ps).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(&identity(9), &identity(9)).unwrap(), 0);
        assert_eq!(hamming(&[0, 1, 2], &[1, 0, 2]).unwrap(), 2);
        assert_eq!(hamming(&[0, 1, 2], &[1, 2, 0]).unwrap(), 3);
        assert!(hamming(&[0, 1], &[0, 1, 2]).is_err());
        assert!(hamming(&[0, 0, 2], &[0, 1, 2]).is_err());
    }

    #[test]
    fn two_tiles_gives_both_permutations() {
        let ps = generate(2, 2, 2, 5).unwrap();
        assert_eq!(ps.perms(), &[vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn three_tiles_cannot_hold_four_at_distance_three() {
        assert!(matches!(generate(3, 4, 3, 0), Err(Error::Unsatisfiable(_))));
        let ps = generate(3, 3, 3, 0).unwrap();
        assert_eq!(verify(&ps).min_hamming_observed, 3);
    }

    #[test]
    fn identity_anchor_and_determinism() {
        let a = generate(9, 50, 3, 42).unwrap();
        let b = generate(9, 50, 3, 42).unwrap();
        let c = generate(9, 50, 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.perms(), c.perms());
        assert_eq!(a.get(0), identity(9).as_slice());
    }

    #[test]
    fn singleton_report() {
        let ps = generate(9, 1, 3, 0).unwrap();
        let r = verify(&ps);
        assert_eq!(r.size, 1);
        assert_eq!(r.min_hamming_observed, 10);
        assert_eq!(r.mean_hamming_observed, None);
    }

    #[test]
    fn text_round_trip() {
        let ps = generate(9, 20, 3, 7).unwrap();
        let text = to_text(&ps);
        assert!(text.starts_with("9 20 3 7\n"));
        assert_eq!(from_text(&text).unwrap(), ps);
        // dropping a line is detected
        let short: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&short).is_err());
    }

    #[test]
    fn constructor_rejects_close_pairs() {
        assert!(PermutationSet::new(3, 3, 0, vec![vec![0, 1, 2], vec![1, 0, 2]]).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let ps = generate(9, 30, 3, 1).unwrap();
        for p in ps.perms() {
            let shuffled = apply(p, &identity(9));
            assert_eq!(apply(&inverse(p), &shuffled), identity(9));
        }
    }
}
