//! Pseudo-labels from a random network carry no knowledge: the student ends
//! up where an untrained network starts.

use cc_transfer::synth::{blobs, BlobConfig};
use cc_transfer::transfer::{run_on, Baselines, Dataset, Mode, PipelineConfig};

fn main() -> cc_transfer::Result<()> {
    let data = Dataset::from_blobs(
        "blobs",
        &blobs(&BlobConfig {
            seed: 1,
            ..Default::default()
        })?,
    );
    let mut cfg = PipelineConfig::new("blobs.json", 10, Mode::ClusterTransfer, 2);
    cfg.baselines = Baselines {
        untrained: true,
        supervised: false,
    };
    let transfer = run_on(&cfg, &data, &data)?;
    let control = run_on(
        &PipelineConfig {
            mode: Mode::RandomControl,
            ..cfg
        },
        &data,
        &data,
    )?;

    let pct = |v: Option<f64>| 100.0 * v.unwrap();
    println!(
        "untrained network    {:5.1}",
        pct(transfer.untrained_probe_acc)
    );
    println!(
        "random pseudo-labels {:5.1}  (student train accuracy {:.1})",
        pct(control.student_probe_acc),
        pct(control.student_train_acc)
    );
    println!(
        "cluster transfer     {:5.1}",
        pct(transfer.student_probe_acc)
    );
    Ok(())
}
