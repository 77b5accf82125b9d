//! Generate occluded jigsaw puzzles from a few images and write a shard.

use cc_transfer::dataio::RawImage;
use cc_transfer::jigsaw::{emit_shard, generate_samples, read_shard, PuzzleConfig};
use cc_transfer::permset::generate;
use cc_transfer::rng::Rng;

fn main() -> cc_transfer::Result<()> {
    let mut rng = Rng::new(1);
    let images: Vec<RawImage> = (0..3)
        .map(|_| {
            RawImage::new(
                256,
                256,
                3,
                (0..256 * 256 * 3).map(|_| rng.below(256) as u8).collect(),
            )
        })
        .collect::<Result<_, _>>()?;
    let ps = generate(9, 100, 3, 1)?;
    let cfg = PuzzleConfig {
        seed: 5,
        ..Default::default()
    };

    let samples = generate_samples(&images, &ps, &cfg, 8)?;
    for s in &samples {
        println!(
            "perm {:3}  source {} donor {}  occluders {} (mask {:09b})  gray {}",
            s.perm_index, s.source_id, s.donor_id, s.n_occluders, s.occ_mask, s.is_gray
        );
    }

    let path = std::env::temp_dir().join("jigsaw_example.shard");
    emit_shard(&samples, &cfg, &path)?;
    let shard = read_shard(&path)?;
    println!(
        "shard {} with {} samples of {} tiles",
        path.display(),
        shard.samples.len(),
        shard.samples[0].tiles.len()
    );
    Ok(())
}
