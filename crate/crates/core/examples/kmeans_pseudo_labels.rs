//! Cluster teacher features and turn cluster indices into pseudo-labels.

use cc_transfer::kmeans::{assign, fit, nearest_to_center, KMeansConfig};
use cc_transfer::metrics::{nmi, purity};
use cc_transfer::synth::{blobs, BlobConfig};

fn main() -> cc_transfer::Result<()> {
    let data = blobs(&BlobConfig {
        classes: 5,
        per_class: 100,
        dim: 8,
        seed: 3,
        ..Default::default()
    })?;
    let cfg = KMeansConfig {
        n_init: 3,
        ..KMeansConfig::with_k(5, 1)
    };
    let codebook = fit(&data.features, &cfg)?;
    println!("inertia per iteration: {:?}", codebook.inertia_history);

    let pseudo = assign(&data.features, &codebook)?;
    let truth = data.labels.labels();
    println!(
        "NMI {:.3}  purity {:.3}",
        nmi(pseudo.labels(), truth)?,
        purity(pseudo.labels(), truth)?
    );

    let near = nearest_to_center(&data.features, &codebook, 0, 5)?;
    println!(
        "closest to center 0: {:?}",
        near.iter().map(|(i, _)| i).collect::<Vec<_>>()
    );
    Ok(())
}
