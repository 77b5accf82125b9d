//! The full pipeline on synthetic blobs: cluster the teacher features,
//! pseudo-label, train a student on its own view of the data, probe it.

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
    let mut cfg = PipelineConfig::new("blobs.json", 10, Mode::ClusterTransfer, 1);
    cfg.baselines = Baselines {
        untrained: true,
        supervised: true,
    };

    let report = run_on(&cfg, &data, &data)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report.without_timings()).unwrap()
    );
    for (stage, secs) in &report.wall_times {
        println!("{stage:>18}: {secs:.2}s");
    }

    let distill = run_on(
        &PipelineConfig {
            mode: Mode::RegressionDistill,
            ..cfg
        },
        &data,
        &data,
    )?;
    println!(
        "regression distillation probe accuracy {:.3}",
        distill.student_probe_acc.unwrap()
    );
    Ok(())
}
