use cc_transfer::dataio::FeatureMatrix;
use cc_transfer::dataio::RawImage;
use cc_transfer::hog::*;
use cc_transfer::kmeans::Codebook;
use cc_transfer::rng::Rng;

fn random_plane(rng: &mut Rng, h: usize, w: usize) -> GrayPlane {
    GrayPlane::new(h, w, (0..h * w).map(|_| rng.below(256) as f64).collect()).unwrap()
}

/// Every pixel votes into every bin with weight `1 - d / width`, where `d`
/// is the circular distance from its orientation to the bin center.
fn oracle_cell(plane: &GrayPlane, cfg: &HogConfig, cy: usize, cx: usize) -> Vec<f64> {
    let range = if cfg.signed { 360.0 } else { 180.0 };
    let width = range / cfg.n_bins as f64;
    let px = |y: isize, x: isize| {
        let y = y.clamp(0, plane.height as isize - 1) as usize;
        let x = x.clamp(0, plane.width as isize - 1) as usize;
        plane.data[y * plane.width + x]
    };
    let mut hist = vec![0.0; cfg.n_bins];
    for y in cy * cfg.cell_size..(cy + 1) * cfg.cell_size {
        for x in cx * cfg.cell_size..(cx + 1) * cfg.cell_size {
            let (y, x) = (y as isize, x as isize);
            let gx = px(y, x + 1) - px(y, x - 1);
            let gy = px(y + 1, x) - px(y - 1, x);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(range);
            for (b, h) in hist.iter_mut().enumerate() {
                let center = (b as f64 + 0.5) * width;
                let d = (angle - center).abs();
                let d = d.min(range - d);
                *h += mag * (1.0 - d / width).max(0.0);
            }
        }
    }
    hist
}

#[test]
fn single_cell_matches_voting_oracle() {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let plane = random_plane(&mut rng, 8, 8);
        let cfg = HogConfig {
            signed: i % 2 == 1,
            ..Default::default()
        };
        let (cy, cx, hist) = cell_histograms(&plane, &cfg).unwrap();
        assert_eq!((cy, cx), (1, 1));
        for (a, b) in hist.iter().zip(oracle_cell(&plane, &cfg, 0, 0)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn multi_cell_images_match_oracle() {
    let mut rng = Rng::new(2);
    let plane = random_plane(&mut rng, 27, 35);
    let cfg = HogConfig {
        cell_size: 6,
        n_bins: 7,
        ..Default::default()
    };
    let (cy, cx, hist) = cell_histograms(&plane, &cfg).unwrap();
    assert_eq!((cy, cx), (4, 5));
    for y in 0..cy {
        for x in 0..cx {
            let got = &hist[(y * cx + x) * 7..][..7];
            for (a, b) in got.iter().zip(oracle_cell(&plane, &cfg, y, x)) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }
}

#[test]
fn constant_image_gives_zero_descriptor() {
    let img = RawImage::new(32, 32, 1, vec![128; 1024]).unwrap();
    let d = hog_descriptor(&img, &HogConfig::default()).unwrap();
    assert!(d.as_vector().iter().all(|&v| v == 0.0));
}

#[test]
fn translation_by_one_cell_shifts_histograms() {
    let mut rng = Rng::new(3);
    let (h, w) = (32, 40);
    let base = random_plane(&mut rng, h, w);
    // shift right by one cell, filling the new columns with fresh noise
    let mut shifted = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            shifted[y * w + x] = if x >= 8 {
                base.data[y * w + x - 8]
            } else {
                rng.below(256) as f64
            };
        }
    }
    let shifted = GrayPlane::new(h, w, shifted).unwrap();
    let cfg = HogConfig::default();
    let (cy, cx, a) = cell_histograms(&base, &cfg).unwrap();
    let (_, _, b) = cell_histograms(&shifted, &cfg).unwrap();
    let nb = cfg.n_bins;
    // interior cells: away from the image border and the seam
    for y in 1..cy - 1 {
        for x in 1..cx - 2 {
            assert_eq!(
                &a[(y * cx + x) * nb..][..nb],
                &b[(y * cx + x + 1) * nb..][..nb]
            );
        }
    }
}

#[test]
fn intensity_scaling_leaves_blocks_unchanged() {
    let mut rng = Rng::new(4);
    let plane = random_plane(&mut rng, 24, 24);
    let half = GrayPlane::new(24, 24, plane.data.iter().map(|v| v * 0.5).collect()).unwrap();
    let no_clip = HogConfig {
        clip: None,
        ..Default::default()
    };
    let a = hog_from_plane(&plane, &no_clip).unwrap();
    let b = hog_from_plane(&half, &no_clip).unwrap();
    for (x, y) in a.as_vector().iter().zip(b.as_vector()) {
        assert!((x - y).abs() < 1e-9);
    }

    // clipping acts on normalized blocks, so it keeps the invariance
    let clipped = HogConfig::default();
    let a = hog_from_plane(&plane, &clipped).unwrap();
    let b = hog_from_plane(&half, &clipped).unwrap();
    assert!(a.as_vector().iter().any(|&v| (v - 0.2).abs() < 0.05));
    for (x, y) in a.as_vector().iter().zip(b.as_vector()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn descriptor_entries_are_bounded() {
    let mut rng = Rng::new(5);
    let plane = random_plane(&mut rng, 40, 48);
    let d = hog_from_plane(&plane, &HogConfig::default()).unwrap();
    assert!(d.as_vector().iter().all(|&v| v >= 0.0));
    for b in d.block_vectors() {
        assert!(b.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-6);
    }
    let one = cc_transfer::with_threads(Some(1), || {
        hog_from_plane(&plane, &HogConfig::default()).unwrap()
    });
    assert_eq!(one, d);
}

#[test]
fn bag_of_words_histograms() {
    let mut rng = Rng::new(6);
    let planes: Vec<GrayPlane> = (0..6).map(|_| random_plane(&mut rng, 32, 32)).collect();
    let blocks: Vec<Vec<Vec<f64>>> = planes
        .iter()
        .map(|p| {
            hog_from_plane(p, &HogConfig::default())
                .unwrap()
                .block_vectors()
        })
        .collect();
    let vocab = build_vocab(&blocks, &cc_transfer::kmeans::KMeansConfig::with_k(8, 1)).unwrap();
    let bow = bow_encode(&blocks, &vocab).unwrap();
    for row in bow.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // vocabulary of a single word: every block maps to it
    let lone = Codebook::from_centers(&FeatureMatrix::from_rows(&[vec![0.0; 36]]).unwrap());
    let h = bow_encode(&blocks[..1], &lone).unwrap();
    assert_eq!(h.data(), &[1.0]);
}
