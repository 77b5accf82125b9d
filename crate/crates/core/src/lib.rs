//! Clustering-based knowledge transfer for self-supervised learning.
//!
//! Any feature representation is reduced to pseudo-labels with k-means
//! ([`kmeans`]) and a student network ([`nnet`]) is retrained to predict
//! them ([`transfer`]). Alongside sit the data tools for the occluded
//! jigsaw pretext task ([`permset`], [`jigsaw`]), HOG bag-of-words features
//! ([`hog`]) and the binary file formats everything is exchanged in
//! ([`dataio`]).
//!
//! Every stochastic routine takes an explicit seed and produces the same
//! bits on every run and for every thread count.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod error;
pub mod hog;
pub mod jigsaw;
pub mod kmeans;
pub mod metrics;
pub mod nnet;
pub mod permset;
pub mod rng;
pub mod sum;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};

/// Runs `f` on a dedicated rayon pool with `threads` workers.
///
/// `None` uses rayon's default pool. Results of every routine in this crate
/// are independent of the thread count.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
    }
}
