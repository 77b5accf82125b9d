//! HOG descriptors and a bag-of-visual-words encoding.

use cc_transfer::dataio::RawImage;
use cc_transfer::hog::{bow_encode, build_vocab, hog_descriptor, HogConfig};
use cc_transfer::kmeans::KMeansConfig;

fn stripes(period: usize, vertical: bool) -> cc_transfer::Result<RawImage> {
    let px = (0..64 * 64)
        .map(|i| {
            let t = if vertical { i % 64 } else { i / 64 };
            if (t / period).is_multiple_of(2) {
                40
            } else {
                210
            }
        })
        .collect();
    RawImage::new(64, 64, 1, px)
}

fn main() -> cc_transfer::Result<()> {
    let cfg = HogConfig::default();
    let images = [
        stripes(4, true)?,
        stripes(4, false)?,
        stripes(9, true)?,
        stripes(9, false)?,
    ];
    let mut blocks = Vec::new();
    for img in &images {
        let d = hog_descriptor(img, &cfg)?;
        println!(
            "descriptor: {} blocks, cell (2, 2) = {:.1?}",
            d.n_blocks(),
            d.cell(2, 2)
        );
        blocks.push(d.block_vectors());
    }
    let vocab = build_vocab(&blocks, &KMeansConfig::with_k(4, 0))?;
    let bow = bow_encode(&blocks, &vocab)?;
    for (i, row) in bow.rows().enumerate() {
        println!("image {i}: {:.2?}", row);
    }
    Ok(())
}
