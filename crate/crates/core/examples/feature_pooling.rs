//! Pool convolutional feature maps to fixed-size vectors and round-trip them
//! through the binary feature format.

use cc_transfer::dataio::*;
use cc_transfer::rng::Rng;

fn main() -> cc_transfer::Result<()> {
    // 4 samples of a 16-channel 13x13 map, like a small conv5 output
    let mut rng = Rng::new(0);
    let (n, c, h, w) = (4, 16, 13, 13);
    let maps = FeatureMap::new(
        n,
        c,
        h,
        w,
        (0..n * c * h * w).map(|_| rng.normal().max(0.0)).collect(),
    )?;

    let pooled = adaptive_max_pool(&maps, 5, 5)?;
    println!(
        "{n}x{c}x{h}x{w} maps -> {} x {} features",
        pooled.n_samples(),
        pooled.n_dims()
    );
    for i in 0..5 {
        let (a, b) = pool_window(i, h, 5);
        println!("  output row {i} covers input rows {a}..{b}");
    }

    let bytes = encode_features(&pooled)?;
    let back = decode_features(&bytes)?;
    // values are stored as f32
    let err = pooled
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "FVE1 payload {} bytes, max round-trip error {err:.1e}",
        bytes.len()
    );
    Ok(())
}
