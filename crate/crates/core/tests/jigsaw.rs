use cc_transfer::dataio::RawImage;
use cc_transfer::jigsaw::*;
use cc_transfer::permset::{self, PermutationSet};
use cc_transfer::rng::Rng;

fn noise_image(seed: u64, h: usize, w: usize, channels: usize) -> RawImage {
    let mut rng = Rng::new(seed);
    RawImage::new(
        h,
        w,
        channels,
        (0..h * w * channels)
            .map(|_| rng.below(256) as u8)
            .collect(),
    )
    .unwrap()
}

fn inverted(img: &RawImage) -> RawImage {
    RawImage::new(
        img.height,
        img.width,
        img.channels,
        img.pixels.iter().map(|v| 255 - v).collect(),
    )
    .unwrap()
}

fn small_cfg(seed: u64) -> PuzzleConfig {
    PuzzleConfig {
        crop_size: 36,
        tile_size: 9,
        seed,
        ..Default::default()
    }
}

fn perms() -> PermutationSet {
    permset::generate(9, 100, 3, 5).unwrap()
}

#[test]
fn occluded_slots_are_exactly_the_donor_tiles() {
    let ps = perms();
    let main = noise_image(1, 50, 50, 3);
    let donor = noise_image(2, 50, 50, 3);
    let other = inverted(&donor);
    let cfg = small_cfg(0);
    let mut seen = 0;
    for seed in 0..200 {
        let a = make_puzzle(&main, &donor, &ps, &cfg, &mut Rng::new(seed)).unwrap();
        let b = make_puzzle(&main, &other, &ps, &cfg, &mut Rng::new(seed)).unwrap();
        assert_eq!(a.occ_mask.count_ones() as usize, a.n_occluders);
        assert_eq!(
            (a.occ_mask, a.perm_index, a.is_gray),
            (b.occ_mask, b.perm_index, b.is_gray)
        );
        for j in 0..9 {
            let occluded = a.occ_mask >> j & 1 == 1;
            assert_eq!(a.tiles[j] != b.tiles[j], occluded, "seed {seed} slot {j}");
        }
        seen += (a.n_occluders == 2) as usize;
    }
    assert!(seen > 0);
}

#[test]
fn inverse_permutation_restores_the_grid() {
    let ps = perms();
    let img = noise_image(3, 40, 40, 3);
    let cfg = PuzzleConfig {
        max_occluders: 0,
        ..small_cfg(0)
    };
    for seed in 0..50 {
        let s = make_puzzle(&img, &img, &ps, &cfg, &mut Rng::new(seed)).unwrap();
        let identity_cfg = PermutationSet::new(9, 3, 0, vec![permset::identity(9)]).unwrap();
        let plain = make_puzzle(&img, &img, &identity_cfg, &cfg, &mut Rng::new(seed)).unwrap();
        let perm = ps.get(s.perm_index);
        // slot j holds original cell perm[j]
        let mut restored = vec![Vec::new(); 9];
        for (j, &cell) in perm.iter().enumerate() {
            restored[cell] = s.tiles[j].clone();
        }
        assert_eq!(restored, plain.tiles);
    }
}

#[test]
fn tiles_are_normalized() {
    let ps = perms();
    let samples = generate_samples(
        &[noise_image(4, 60, 60, 3), noise_image(5, 60, 60, 1)],
        &ps,
        &small_cfg(9),
        100,
    )
    .unwrap();
    for s in &samples {
        assert!(s.perm_index < ps.len());
        assert!(s.n_occluders <= 2);
        for t in &s.tiles {
            let n = t.len() as f64;
            let mean = t.iter().map(|&v| v as f64).sum::<f64>() / n;
            let std = (t.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-6);
            assert!((std - 1.0).abs() < 1e-6 || std == 0.0);
        }
    }
}

#[test]
fn chunks_and_threads_do_not_change_output() {
    let ps = perms();
    let imgs = [
        noise_image(6, 40, 40, 3),
        noise_image(7, 45, 41, 3),
        noise_image(8, 38, 50, 1),
    ];
    let cfg = small_cfg(17);
    let all =
        cc_transfer::with_threads(Some(1), || generate_samples(&imgs, &ps, &cfg, 60).unwrap());
    let mut chunked = generate_range(&imgs, &ps, &cfg, 0..25).unwrap();
    chunked.extend(cc_transfer::with_threads(Some(4), || {
        generate_range(&imgs, &ps, &cfg, 25..60).unwrap()
    }));
    assert_eq!(all, chunked);
    for s in &all {
        assert_ne!(s.source_id, s.donor_id);
    }
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.jpp"), dir.path().join("b.jpp"));
    emit_shard(&all, &cfg, &p1).unwrap();
    emit_shard(&chunked, &cfg, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(read_shard(&p1).unwrap().samples, all);
}

#[test]
fn augmentation_frequencies() {
    let ps = perms();
    let imgs = [noise_image(9, 40, 40, 3), noise_image(10, 40, 40, 3)];
    let cfg = small_cfg(123);
    let samples = generate_samples(&imgs, &ps, &cfg, 10_000).unwrap();
    let gray = samples.iter().filter(|s| s.is_gray).count() as f64 / 1e4;
    assert!((0.68..=0.72).contains(&gray), "{gray}");
    for k in 0..=2 {
        let f = samples.iter().filter(|s| s.n_occluders == k).count() as f64 / 1e4;
        assert!((0.313..=0.353).contains(&f), "{k}: {f}");
    }
}

#[test]
fn grayscale_examples() {
    let img = RawImage::new(1, 3, 3, vec![255, 255, 255, 255, 0, 0, 0, 0, 0]).unwrap();
    assert_eq!(
        to_grayscale(&img).unwrap().pixels,
        vec![255, 255, 255, 76, 76, 76, 0, 0, 0]
    );
}
