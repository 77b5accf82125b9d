//! Euclidean k-means: k-means++ seeding, Lloyd iterations, nearest-center
//! assignment and retrieval of the samples closest to a center.
//!
//! Per-sample work (distances, argmins) runs on the current rayon pool and is
//! collected in sample order; all reductions are sequential and use
//! [`ExactSum`], so a fit is bit-identical for any thread count and any
//! ordering of the samples within a cluster.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{push_f64, push_u32, read_file, u32_len, write_file, ByteReader};
use crate::dataio::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sum::{exact_sum, ExactSum};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"CBK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Independent restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2000,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
            n_init: 1,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be >= 0".into()));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("n_init must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cluster centers plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    n_dims: usize,
    centers: Vec<f64>,
    pub inertia: f64,
    pub n_iters_run: usize,
    pub converged: bool,
    /// Inertia measured at each assignment step, in order.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    /// Codebook from explicit centers (inertia unknown, reported as 0).
    pub fn from_centers(centers: &FeatureMatrix) -> Self {
        Codebook {
            k: centers.n_samples(),
            n_dims: centers.n_dims(),
            centers: centers.data().to_vec(),
            inertia: 0.0,
            n_iters_run: 0,
            converged: false,
            inertia_history: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.n_dims..(c + 1) * self.n_dims]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn centers_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::new(self.k, self.n_dims, self.centers.clone())
            .expect("codebook centers are finite and non-empty")
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center of `x`; ties go to the lowest index.
fn nearest(x: &[f64], centers: &[f64], n_dims: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(n_dims).enumerate() {
        let d = squared_distance(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn nearest_all(x: &FeatureMatrix, centers: &[f64]) -> Vec<(usize, f64)> {
    let d = x.n_dims();
    (0..x.n_samples())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centers, d))
        .collect()
}

fn check_dims(x: &FeatureMatrix, cb: &Codebook) -> Result<()> {
    if x.n_dims() != cb.n_dims {
        return Err(Error::DimensionMismatch {
            expected: cb.n_dims,
            found: x.n_dims(),
        });
    }
    Ok(())
}

/// k-means++ seeding: first center uniform, then D² sampling.
///
/// When every remaining sample already coincides with a chosen center the
/// draw falls back to uniform resampling, accepting a duplicate after
/// `n_samples` attempts.
pub fn kmeanspp_init(x: &FeatureMatrix, cfg: &KMeansConfig, rng: &mut Rng) -> Result<Codebook> {
    cfg.validate()?;
    let n = x.n_samples();
    if cfg.k > n {
        return Err(Error::OutOfRange {
            what: "k",
            value: cfg.k,
            limit: n,
        });
    }
    let d = x.n_dims();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(x.row(i), x.row(chosen[0])))
        .collect();

    while chosen.len() < cfg.k {
        let total = exact_sum(d2.iter().copied());
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the running sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let mut i = rng.below(n);
            for _ in 1..n {
                if d2[i] > 0.0 {
                    break;
                }
                i = rng.below(n);
            }
            i
        };
        chosen.push(pick);
        let new_center = x.row(pick);
        d2.par_iter_mut().enumerate().for_each(|(i, v)| {
            let dist = squared_distance(x.row(i), new_center);
            if dist < *v {
                *v = dist;
            }
        });
    }

    let mut centers = Vec::with_capacity(cfg.k * d);
    for &i in &chosen {
        centers.extend_from_slice(x.row(i));
    }
    Ok(Codebook {
        k: cfg.k,
        n_dims: d,
        centers,
        inertia: exact_sum(d2),
        n_iters_run: 0,
        converged: false,
        inertia_history: Vec::new(),
    })
}

/// Full k-means fit: `n_init` restarts of k-means++ followed by Lloyd.
pub fn lloyd_fit(x: &FeatureMatrix, cfg: &KMeansConfig, rng: &mut Rng) -> Result<Codebook> {
    cfg.validate()?;
    let mut best: Option<Codebook> = None;
    for _ in 0..cfg.n_init {
        let init = kmeanspp_init(x, cfg, rng)?;
        let cb = lloyd_from(x, init, cfg)?;
        if best.as_ref().is_none_or(|b| cb.inertia < b.inertia) {
            best = Some(cb);
        }
    }
    Ok(best.unwrap())
}

/// [`lloyd_fit`] seeded from `cfg.seed`.
pub fn fit(x: &FeatureMatrix, cfg: &KMeansConfig) -> Result<Codebook> {
    lloyd_fit(x, cfg, &mut Rng::new(cfg.seed))
}

/// Lloyd iterations from explicit initial centers.
///
/// Stops when the relative inertia decrease drops below `cfg.tol` or after
/// `cfg.max_iters` center updates. The returned inertia is measured with the
/// returned centers.
pub fn lloyd_from(x: &FeatureMatrix, init: Codebook, cfg: &KMeansConfig) -> Result<Codebook> {
    check_dims(x, &init)?;
    let (k, d) = (init.k, init.n_dims);
    let mut centers = init.centers;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    let mut assigned = nearest_all(x, &centers);
    let mut inertia = exact_sum(assigned.iter().map(|a| a.1));
    history.push(inertia);

    while iters < cfg.max_iters {
        centers = update_centers(x, &assigned, k, d);
        iters += 1;

        assigned = nearest_all(x, &centers);
        let next = exact_sum(assigned.iter().map(|a| a.1));
        history.push(next);
        let prev = inertia;
        inertia = next;
        if prev == 0.0 || (prev - next) / prev < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(Codebook {
        k,
        n_dims: d,
        centers,
        inertia,
        n_iters_run: iters,
        converged,
        inertia_history: history,
    })
}

/// Mean of each cluster; an empty cluster takes the sample currently farthest
/// from its center (lowest index on ties, each sample used at most once).
fn update_centers(x: &FeatureMatrix, assigned: &[(usize, f64)], k: usize, d: usize) -> Vec<f64> {
    let mut sums: Vec<ExactSum> = vec![ExactSum::new(); k * d];
    let mut counts = vec![0usize; k];
    for (row, &(c, _)) in x.rows().zip(assigned) {
        counts[c] += 1;
        for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            s.add(v);
        }
    }
    let mut centers = vec![0.0; k * d];
    let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
    for c in 0..k {
        let out = &mut centers[c * d..(c + 1) * d];
        if counts[c] > 0 {
            for (o, s) in out.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *o = s.value() / counts[c] as f64;
            }
        } else {
            let mut far = 0;
            for (i, &v) in dist.iter().enumerate() {
                if v > dist[far] {
                    far = i;
                }
            }
            out.copy_from_slice(x.row(far));
            dist[far] = f64::NEG_INFINITY;
        }
    }
    centers
}

/// Pseudo-label of every sample: index of its nearest center.
pub fn assign(x: &FeatureMatrix, cb: &Codebook) -> Result<LabelVector> {
    let (labels, _) = assign_with_distances(x, cb)?;
    LabelVector::new(labels, cb.k)
}

pub fn assign_with_distances(x: &FeatureMatrix, cb: &Codebook) -> Result<(Vec<usize>, Vec<f64>)> {
    check_dims(x, cb)?;
    Ok(nearest_all(x, &cb.centers).into_iter().unzip())
}

/// Sum of squared distances of every sample to its nearest center.
pub fn inertia(x: &FeatureMatrix, cb: &Codebook) -> Result<f64> {
    let (_, d2) = assign_with_distances(x, cb)?;
    Ok(exact_sum(d2))
}

/// The `m` samples closest to center `c`, as `(sample, squared distance)`
/// sorted by distance then sample id.
pub fn nearest_to_center(
    x: &FeatureMatrix,
    cb: &Codebook,
    c: usize,
    m: usize,
) -> Result<Vec<(usize, f64)>> {
    check_dims(x, cb)?;
    if c >= cb.k {
        return Err(Error::OutOfRange {
            what: "cluster id",
            value: c,
            limit: cb.k,
        });
    }
    if m > x.n_samples() {
        return Err(Error::OutOfRange {
            what: "m",
            value: m,
            limit: x.n_samples(),
        });
    }
    let center = cb.center(c);
    let mut all: Vec<(usize, f64)> = (0..x.n_samples())
        .into_par_iter()
        .map(|i| (i, squared_distance(x.row(i), center)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(m);
    Ok(all)
}

pub fn encode_codebook(cb: &Codebook) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + cb.centers.len() * 8);
    out.extend_from_slice(&CODEBOOK_MAGIC);
    push_u32(&mut out, u32_len(cb.k, "k")?);
    push_u32(&mut out, u32_len(cb.n_dims, "n_dims")?);
    push_f64(&mut out, cb.inertia);
    for &v in &cb.centers {
        push_f64(&mut out, v);
    }
    Ok(out)
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&CODEBOOK_MAGIC)?;
    let k = r.u32()? as usize;
    let n_dims = r.u32()? as usize;
    let inertia = r.f64()?;
    r.require(k * n_dims * 8)?;
    let mut centers = Vec::with_capacity(k * n_dims);
    for index in 0..k * n_dims {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        centers.push(v);
    }
    r.finish()?;
    if k == 0 || n_dims == 0 {
        return Err(Error::InvalidShape(
            "codebook needs k >= 1 and n_dims >= 1".into(),
        ));
    }
    Ok(Codebook {
        k,
        n_dims,
        centers,
        inertia,
        n_iters_run: 0,
        converged: false,
        inertia_history: Vec::new(),
    })
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    decode_codebook(&read_file(path.as_ref())?)
}

pub fn write_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_codebook(cb)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig::with_k(k, 1)
    }

    #[test]
    fn single_sample_init() {
        let x = m(&[&[5.0, 5.0]]);
        let cb = kmeanspp_init(&x, &cfg(1), &mut Rng::new(0)).unwrap();
        assert_eq!(cb.center(0), &[5.0, 5.0]);
    }

    #[test]
    fn duplicate_samples_fall_back_to_duplicate_center() {
        let x = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let cb = kmeanspp_init(&x, &cfg(2), &mut Rng::new(0)).unwrap();
        assert_eq!(cb.center(0), cb.center(1));
        let fitted = fit(&x, &cfg(2)).unwrap();
        assert_eq!(fitted.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let x = m(&[&[1.0]]);
        assert!(matches!(
            kmeanspp_init(&x, &cfg(2), &mut Rng::new(0)),
            Err(Error::OutOfRange { what: "k", .. })
        ));
    }

    #[test]
    fn two_point_mean() {
        let cb = fit(&m(&[&[0.0, 0.0], &[2.0, 0.0]]), &cfg(1)).unwrap();
        assert_eq!(cb.center(0), &[1.0, 0.0]);
        assert_eq!(cb.inertia, 2.0);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let x = m(&[&[0.0, 1.0], &[3.0, -2.0], &[7.5, 7.5], &[-1.0, 4.0]]);
        let cb = fit(&x, &cfg(4)).unwrap();
        assert_eq!(cb.inertia, 0.0);
        for c in 0..4 {
            assert!(x.rows().any(|r| r == cb.center(c)));
        }
    }

    #[test]
    fn assign_tie_goes_to_lowest_index() {
        let cb = Codebook::from_centers(&m(&[&[0.0, 0.0], &[10.0, 10.0]]));
        assert_eq!(assign(&m(&[&[1.0, 1.0]]), &cb).unwrap().labels(), &[0]);
        assert_eq!(assign(&m(&[&[5.0, 5.0]]), &cb).unwrap().labels(), &[0]);
        assert!(assign(&m(&[&[1.0]]), &cb).is_err());
    }

    #[test]
    fn empty_cluster_is_repaired_with_farthest_point() {
        // both initial centers far to one side: the second gets no members
        let x = m(&[&[0.0], &[1.0], &[9.0]]);
        let init = Codebook::from_centers(&m(&[&[0.5], &[100.0]]));
        let assigned = nearest_all(&x, init.centers());
        let centers = update_centers(&x, &assigned, 2, 1);
        assert_eq!(centers, vec![10.0 / 3.0, 9.0]);
    }

    #[test]
    fn nearest_to_center_basics() {
        let x = m(&[&[3.0], &[0.0], &[1.0], &[-1.0]]);
        let cb = Codebook::from_centers(&m(&[&[0.0]]));
        assert_eq!(nearest_to_center(&x, &cb, 0, 1).unwrap(), vec![(1, 0.0)]);
        let all = nearest_to_center(&x, &cb, 0, 4).unwrap();
        assert_eq!(all, vec![(1, 0.0), (2, 1.0), (3, 1.0), (0, 9.0)]);
        assert!(nearest_to_center(&x, &cb, 1, 1).is_err());
    }

    #[test]
    fn codebook_file_round_trip() {
        let x = m(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 5.5]]);
        let cb = fit(&x, &cfg(2)).unwrap();
        let back = decode_codebook(&encode_codebook(&cb).unwrap()).unwrap();
        assert_eq!(back.centers(), cb.centers());
        assert_eq!(back.inertia, cb.inertia);
        let mut bytes = encode_codebook(&cb).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_codebook(&bytes),
            Err(Error::Truncated { .. })
        ));
    }
}
