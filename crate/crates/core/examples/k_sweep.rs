//! Probe accuracy as the number of clusters changes.

use cc_transfer::synth::{blobs, BlobConfig};
use cc_transfer::transfer::{k_sweep_table, sweep_k_on, Dataset, Mode, PipelineConfig};

fn main() -> cc_transfer::Result<()> {
    let data = Dataset::from_blobs(
        "blobs",
        &blobs(&BlobConfig {
            seed: 1,
            ..Default::default()
        })?,
    );
    let cfg = PipelineConfig::new("blobs.json", 10, Mode::ClusterTransfer, 1);
    let reports = sweep_k_on(&cfg, &data, &data, &[5, 10, 20, 50])?;
    print!("{}", k_sweep_table(&reports));
    for r in &reports {
        println!(
            "k={:<3} nmi {:.3}  purity {:.3}",
            r.k,
            r.nmi_vs_truth.unwrap(),
            r.purity_vs_truth.unwrap()
        );
    }
    Ok(())
}
