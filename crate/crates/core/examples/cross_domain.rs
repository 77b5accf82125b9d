//! Cluster on one sample of the data, pseudo-label another.

use cc_transfer::synth::{blobs, BlobConfig};
use cc_transfer::transfer::{domain_table, sweep_domain_on, Dataset, Mode, PipelineConfig};

fn main() -> cc_transfer::Result<()> {
    // same class centers, independent samples
    let draw = |s| {
        blobs(&BlobConfig {
            seed: 1,
            sample_seed: Some(s),
            ..Default::default()
        })
    };
    let a = Dataset::from_blobs("A", &draw(10)?);
    let b = Dataset::from_blobs("B", &draw(20)?);
    let cfg = PipelineConfig::new("blobs.json", 10, Mode::ClusterTransfer, 1);
    let reports = sweep_domain_on(
        &cfg,
        &[(b.clone(), b.clone()), (a.clone(), b), (a.clone(), a)],
    )?;
    print!("{}", domain_table(&reports));
    for r in &reports {
        println!(
            "{} -> {}: delta {:+.3}",
            r.report.cluster_dataset,
            r.report.pseudo_label_dataset,
            r.probe_delta.unwrap()
        );
    }
    Ok(())
}
