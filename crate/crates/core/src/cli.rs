//! Command-line front end: `cct <group> <command> [flags]`.
//!
//! [`dispatch`] parses the arguments, runs the command and maps the outcome
//! to an exit code: 0 on success, 1 when the operation fails (after printing
//! `error: <kind>: <detail>` to stderr) and 2 for usage errors such as an
//! unknown subcommand or a missing required flag.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::dataio::{self, read_file, write_file, FeatureMatrix, LabelVector, Manifest};
use crate::error::{Error, Result};
use crate::hog::{self, HogConfig};
use crate::jigsaw::{self, PuzzleConfig};
use crate::kmeans::{self, KMeansConfig};
use crate::nnet::{self, Head, NetSpec, Targets, TrainConfig};
use crate::permset;
use crate::rng::Rng;
use crate::synth::{self, BlobConfig};
use crate::transfer::{self, PipelineConfig, TransferReport};

#[derive(Debug, Parser)]
#[command(
    name = "cct",
    version,
    about = "Clustering-based knowledge transfer toolkit"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Group,
}

#[derive(Debug, Subcommand)]
pub enum Group {
    /// Feature files and pooling.
    #[command(subcommand)]
    Data(DataCmd),
    /// k-means codebooks and pseudo-labels.
    #[command(subcommand)]
    Cluster(ClusterCmd),
    /// Hamming-constrained permutation sets.
    #[command(subcommand)]
    Permset(PermsetCmd),
    /// Occluded jigsaw puzzle shards.
    #[command(subcommand)]
    Jigsaw(JigsawCmd),
    /// HOG bag-of-words features.
    #[command(subcommand)]
    Hog(HogCmd),
    /// Small networks: training, evaluation, gradient checks.
    #[command(subcommand)]
    Net(NetCmd),
    /// The knowledge-transfer pipeline.
    #[command(subcommand)]
    Transfer(TransferCmd),
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Adaptive max-pool an FMP1 feature-map file into an FVE1 matrix.
    Pool {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long, default_value_t = 5)]
        out_h: usize,
        #[arg(long, default_value_t = 5)]
        out_w: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert between binary feature/label files and CSV (by extension:
    /// .fve, .lbl, .csv).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Class count when writing labels from CSV; defaults to max + 1.
        #[arg(long)]
        n_classes: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClusterCmd {
    /// Fit a k-means codebook.
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        n_init: usize,
        /// Scale every sample to unit length first.
        #[arg(long)]
        l2_normalize: bool,
    },
    /// Label every sample with its nearest center.
    Assign {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        l2_normalize: bool,
    },
    /// The samples closest to one center.
    Nearest {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        cluster: usize,
        #[arg(long, default_value_t = 11)]
        m: usize,
        #[arg(long)]
        l2_normalize: bool,
        /// Write the list as JSON instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PermsetCmd {
    /// Greedily draw permutations with a minimum pairwise Hamming distance.
    Generate {
        #[arg(long, default_value_t = 9)]
        tiles: usize,
        #[arg(long, default_value_t = 701)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        min_hamming: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustively check a permutation set and report pairwise statistics.
    Verify {
        file: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum JigsawCmd {
    /// Generate a shard of puzzles from the images of a manifest.
    Gen {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        permset: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        grid: usize,
        #[arg(long, default_value_t = 225)]
        crop: usize,
        #[arg(long, default_value_t = 64)]
        tile: usize,
        #[arg(long, default_value_t = 2)]
        max_occ: usize,
        #[arg(long, default_value_t = 0.7)]
        gray_prob: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct HogArgs {
    #[arg(long, default_value_t = 8)]
    pub cell: usize,
    #[arg(long, default_value_t = 9)]
    pub bins: usize,
    /// Block side in cells.
    #[arg(long, default_value_t = 2)]
    pub block: usize,
    /// Block step in cells.
    #[arg(long, default_value_t = 1)]
    pub block_stride: usize,
    /// Orientations over 0-360 degrees.
    #[arg(long)]
    pub signed: bool,
    /// L2-hys clip; 0 disables clipping.
    #[arg(long, default_value_t = 0.2)]
    pub clip: f64,
}

impl HogArgs {
    fn config(&self) -> HogConfig {
        HogConfig {
            cell_size: self.cell,
            n_bins: self.bins,
            block_size: self.block,
            block_stride: self.block_stride,
            signed: self.signed,
            clip: (self.clip > 0.0).then_some(self.clip),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum HogCmd {
    /// Cluster HOG block vectors into a visual-word codebook.
    Vocab {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[command(flatten)]
        hog: HogArgs,
    },
    /// Encode every image as a normalized visual-word histogram.
    Encode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hog: HogArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum NetCmd {
    /// Train a network; writes an NPK1 checkpoint.
    Train {
        /// NetSpec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// TrainConfig JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Class labels for a softmax head.
        #[arg(long, conflicts_with = "targets")]
        labels: Option<PathBuf>,
        /// Regression targets (FVE1) for an L2 head.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss and accuracy as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Classification accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Compare backprop with central differences on a random network.
    Gradcheck {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum TransferCmd {
    /// One pipeline run; writes a JSON report.
    Run {
        /// PipelineConfig JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per cluster count; prints a table and writes the reports.
    SweepK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
        k_list: Vec<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Cluster on one dataset and pseudo-label another, for each pair.
    SweepDomain {
        #[arg(long)]
        config: PathBuf,
        /// `CLUSTER_MANIFEST:PSEUDO_LABEL_MANIFEST`; repeatable.
        #[arg(long = "pair", required = true)]
        pairs: Vec<String>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write a synthetic labelled blob dataset and its manifest.
    SynthBlobs {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        sep: f64,
        /// Fixes the class centers.
        #[arg(long)]
        seed: u64,
        /// Draws a fresh sample around the same centers.
        #[arg(long)]
        sample_seed: Option<u64>,
        #[arg(long, default_value_t = 16)]
        distractors: usize,
        #[arg(long, default_value_t = 5.0)]
        distractor_std: f64,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads;
    match crate::with_threads(threads, || run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e));
            1
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}

pub fn run(cmd: Group) -> Result<()> {
    match cmd {
        Group::Data(c) => data(c),
        Group::Cluster(c) => cluster(c),
        Group::Permset(c) => permset_cmd(c),
        Group::Jigsaw(c) => jigsaw_cmd(c),
        Group::Hog(c) => hog_cmd(c),
        Group::Net(c) => net(c),
        Group::Transfer(c) => transfer_cmd(c),
    }
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("json value"));
}

fn extension(p: &Path) -> &str {
    p.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn maybe_normalize(x: FeatureMatrix, on: bool) -> FeatureMatrix {
    if on {
        x.l2_normalized()
    } else {
        x
    }
}

// ---------------------------------------------------------------------------

fn data(cmd: DataCmd) -> Result<()> {
    match cmd {
        DataCmd::Pool {
            maps,
            out_h,
            out_w,
            out,
        } => {
            let fm = dataio::read_feature_map(&maps)?;
            let pooled = dataio::adaptive_max_pool(&fm, out_h, out_w)?;
            dataio::write_features(&pooled, &out)?;
            print_json(&json!({"n_samples": pooled.n_samples(), "n_dims": pooled.n_dims()}));
            Ok(())
        }
        DataCmd::Convert {
            input,
            output,
            n_classes,
        } => convert(&input, &output, n_classes),
    }
}

fn csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let bytes = read_file(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}

fn write_csv<R, I>(path: &Path, rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

fn parse_cell<T: std::str::FromStr>(cell: &str, line: usize) -> Result<T> {
    cell.parse()
        .map_err(|_| Error::UnsupportedFormat(format!("line {line}: {cell:?} is not a number")))
}

fn convert(input: &Path, output: &Path, n_classes: Option<usize>) -> Result<()> {
    match (extension(input), extension(output)) {
        ("fve", "csv") => {
            let fm = dataio::read_features(input)?;
            write_csv(output, fm.rows().map(|r| r.iter().map(f64::to_string)))
        }
        ("lbl", "csv") => {
            let lv = dataio::read_labels(input)?;
            write_csv(output, lv.labels().iter().map(|l| [l.to_string()]))
        }
        ("csv", "fve") => {
            let rows = csv_rows(input)?
                .iter()
                .enumerate()
                .map(|(i, rec)| rec.iter().map(|c| parse_cell(c, i + 1)).collect())
                .collect::<Result<Vec<Vec<f64>>>>()?;
            if rows.is_empty() {
                return Err(Error::InvalidShape("empty CSV".into()));
            }
            dataio::write_features(&FeatureMatrix::from_rows(&rows)?, output)
        }
        ("csv", "lbl") => {
            let labels = csv_rows(input)?
                .iter()
                .enumerate()
                .map(|(i, rec)| match rec.len() {
                    1 => parse_cell(&rec[0], i + 1),
                    n => Err(Error::InvalidShape(format!(
                        "line {}: expected one label, found {n} fields",
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<usize>>>()?;
            let lv = match n_classes {
                Some(n) => LabelVector::new(labels, n)?,
                None => LabelVector::from_labels(labels),
            };
            dataio::write_labels(&lv, output)
        }
        (a, b) => Err(Error::UnsupportedFormat(format!(
            "cannot convert .{a} to .{b} (supported: fve<->csv, lbl<->csv)"
        ))),
    }
}

fn cluster(cmd: ClusterCmd) -> Result<()> {
    match cmd {
        ClusterCmd::Fit {
            features,
            k,
            seed,
            out,
            max_iters,
            tol,
            n_init,
            l2_normalize,
        } => {
            let x = maybe_normalize(dataio::read_features(&features)?, l2_normalize);
            let cfg = KMeansConfig {
                k,
                max_iters,
                tol,
                seed,
                n_init,
            };
            let cb = kmeans::fit(&x, &cfg)?;
            kmeans::write_codebook(&cb, &out)?;
            print_json(&json!({
                "k": cb.k(),
                "n_dims": cb.n_dims(),
                "inertia": cb.inertia,
                "iterations": cb.n_iters_run,
                "converged": cb.converged,
            }));
            Ok(())
        }
        ClusterCmd::Assign {
            features,
            codebook,
            out,
            l2_normalize,
        } => {
            let x = maybe_normalize(dataio::read_features(&features)?, l2_normalize);
            let cb = kmeans::read_codebook(&codebook)?;
            let labels = kmeans::assign(&x, &cb)?;
            dataio::write_labels(&labels, &out)?;
            let mut sizes = vec![0usize; cb.k()];
            labels.labels().iter().for_each(|&l| sizes[l] += 1);
            print_json(
                &json!({"n_samples": labels.len(), "n_classes": labels.n_classes(), "cluster_sizes": sizes}),
            );
            Ok(())
        }
        ClusterCmd::Nearest {
            features,
            codebook,
            cluster,
            m,
            l2_normalize,
            out,
        } => {
            let x = maybe_normalize(dataio::read_features(&features)?, l2_normalize);
            let cb = kmeans::read_codebook(&codebook)?;
            let near = kmeans::nearest_to_center(&x, &cb, cluster, m)?;
            match out {
                Some(path) => {
                    let list: Vec<_> = near
                        .iter()
                        .map(|&(id, d)| json!({"sample": id, "squared_distance": d}))
                        .collect();
                    write_json(&list, &path)
                }
                None => {
                    for (id, d) in near {
                        println!("{id}\t{d}");
                    }
                    Ok(())
                }
            }
        }
    }
}

fn permset_cmd(cmd: PermsetCmd) -> Result<()> {
    match cmd {
        PermsetCmd::Generate {
            tiles,
            size,
            min_hamming,
            seed,
            out,
        } => {
            let ps = permset::generate(tiles, size, min_hamming, seed)?;
            permset::write_permset(&ps, &out)?;
            println!("{}", permset::verify(&ps));
            Ok(())
        }
        PermsetCmd::Verify { file, json } => {
            let ps = permset::read_permset(&file)?;
            // loading already rejects sets closer than their declared minimum
            let report = permset::verify(&ps);
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!("{report}");
            }
            Ok(())
        }
    }
}

fn jigsaw_cmd(cmd: JigsawCmd) -> Result<()> {
    let JigsawCmd::Gen {
        manifest,
        permset,
        count,
        seed,
        out,
        grid,
        crop,
        tile,
        max_occ,
        gray_prob,
    } = cmd;
    let cfg = PuzzleConfig {
        grid,
        crop_size: crop,
        tile_size: tile,
        max_occluders: max_occ,
        grayscale_prob: gray_prob,
        seed,
    };
    cfg.validate()?;
    let ps = permset::read_permset(&permset)?;
    let images = Manifest::load(&manifest)?.load_images()?;
    let samples = jigsaw::generate_samples(&images, &ps, &cfg, count)?;
    jigsaw::emit_shard(&samples, &cfg, &out)?;
    let gray = samples.iter().filter(|s| s.is_gray).count();
    let mut occ = vec![0usize; max_occ + 1];
    samples.iter().for_each(|s| occ[s.n_occluders] += 1);
    print_json(&json!({"samples": count, "grayscale": gray, "occluder_counts": occ}));
    Ok(())
}

fn block_vectors(manifest: &Path, cfg: &HogConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.validate()?;
    let images = Manifest::load(manifest)?.load_images()?;
    if images.is_empty() {
        return Err(Error::InvalidConfig("manifest lists no images".into()));
    }
    images
        .par_iter()
        .map(|img| hog::hog_descriptor(img, cfg).map(|d| d.block_vectors()))
        .collect()
}

fn hog_cmd(cmd: HogCmd) -> Result<()> {
    match cmd {
        HogCmd::Vocab {
            manifest,
            k,
            seed,
            out,
            max_iters,
            hog,
        } => {
            let blocks = block_vectors(&manifest, &hog.config())?;
            let kcfg = KMeansConfig {
                k,
                max_iters,
                seed,
                ..Default::default()
            };
            let vocab = hog::build_vocab(&blocks, &kcfg)?;
            kmeans::write_codebook(&vocab, &out)?;
            print_json(
                &json!({"k": vocab.k(), "n_dims": vocab.n_dims(), "inertia": vocab.inertia}),
            );
            Ok(())
        }
        HogCmd::Encode {
            manifest,
            vocab,
            out,
            hog,
        } => {
            let blocks = block_vectors(&manifest, &hog.config())?;
            let vocab = kmeans::read_codebook(&vocab)?;
            let bow = hog::bow_encode(&blocks, &vocab)?;
            dataio::write_features(&bow, &out)?;
            print_json(&json!({"n_samples": bow.n_samples(), "n_dims": bow.n_dims()}));
            Ok(())
        }
    }
}

fn net(cmd: NetCmd) -> Result<()> {
    match cmd {
        NetCmd::Train {
            spec,
            config,
            features,
            labels,
            targets,
            seed,
            out,
            history,
        } => {
            let spec: NetSpec = read_json(&spec)?;
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = seed;
            let x = dataio::read_features(&features)?;
            let (params, hist) = match (labels, targets) {
                (Some(l), None) => {
                    let y = dataio::read_labels(&l)?;
                    nnet::train(&spec, &cfg, &x, Targets::Classes(y.labels()))?
                }
                (None, Some(t)) => {
                    let y = dataio::read_features(&t)?;
                    nnet::train(&spec, &cfg, &x, Targets::Values(y.data()))?
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "exactly one of --labels or --targets is required".into(),
                    ))
                }
            };
            nnet::write_params(&params, &out)?;
            if let Some(h) = history {
                write_json(&hist, &h)?;
            }
            if let Some(last) = hist.last() {
                print_json(
                    &json!({"epochs": hist.epochs.len(), "loss": last.loss, "accuracy": last.accuracy}),
                );
            }
            Ok(())
        }
        NetCmd::Eval {
            spec,
            params,
            features,
            labels,
        } => {
            let spec: NetSpec = read_json(&spec)?;
            let params = nnet::read_params(&params)?;
            let x = dataio::read_features(&features)?;
            let y = dataio::read_labels(&labels)?;
            let acc = nnet::evaluate(&spec, &params, &x, &y)?;
            print_json(&json!({"accuracy": acc, "n_samples": y.len()}));
            Ok(())
        }
        NetCmd::Gradcheck {
            spec,
            seed,
            batch,
            h,
            tol,
        } => {
            let spec: NetSpec = read_json(&spec)?;
            let report = random_gradient_check(&spec, seed, batch, h)?;
            print_json(&serde_json::to_value(&report)?);
            if !(report.max_rel_error < tol) {
                return Err(Error::CheckFailed(format!(
                    "max relative error {:e} at layer {} parameter {} (tolerance {tol:e})",
                    report.max_rel_error, report.worst.0, report.worst.1
                )));
            }
            Ok(())
        }
    }
}

/// Gradient check of `spec` at seeded random parameters, inputs and targets.
/// Gradient check at a random point: He-initialized weights, small random
/// biases, normal inputs and random targets, all derived from `seed`.
pub fn random_gradient_check(
    spec: &NetSpec,
    seed: u64,
    batch: usize,
    h: f64,
) -> Result<nnet::GradCheckReport> {
    if batch == 0 {
        return Err(Error::InvalidConfig("batch must be >= 1".into()));
    }
    let mut params = nnet::init_params(spec, seed)?;
    let mut rng = Rng::substream(seed, 1);
    // zero biases put dead units exactly on the ReLU kink
    for lp in &mut params.layers {
        lp.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    let input: Vec<f64> = (0..batch * spec.input_dim).map(|_| rng.normal()).collect();
    match spec.head {
        Head::SoftmaxCrossEntropy { n_classes } => {
            let y: Vec<usize> = (0..batch).map(|_| rng.below(n_classes)).collect();
            nnet::gradient_check(spec, &params, &input, batch, Targets::Classes(&y), h)
        }
        Head::L2Regression { out_dim } => {
            let y: Vec<f64> = (0..batch * out_dim).map(|_| rng.normal()).collect();
            nnet::gradient_check(spec, &params, &input, batch, Targets::Values(&y), h)
        }
    }
}

fn load_pipeline(config: &Path, seed: u64) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(config)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn log_times(reports: &[&TransferReport]) {
    for r in reports {
        let times: Vec<String> = r
            .wall_times
            .iter()
            .map(|(k, v)| format!("{k} {v:.2}s"))
            .collect();
        eprintln!("k={} {}: {}", r.k, r.pseudo_label_dataset, times.join(", "));
    }
}

fn transfer_cmd(cmd: TransferCmd) -> Result<()> {
    match cmd {
        TransferCmd::Run { config, seed, out } => {
            let cfg = load_pipeline(&config, seed)?;
            let report = transfer::run_pipeline(&cfg)?;
            log_times(&[&report]);
            write_json(&report.without_timings(), &out)?;
            print_json(&serde_json::to_value(report.without_timings())?);
            Ok(())
        }
        TransferCmd::SweepK {
            config,
            k_list,
            seed,
            out,
            table,
        } => {
            let cfg = load_pipeline(&config, seed)?;
            let reports = transfer::sweep_k(&cfg, &k_list)?;
            log_times(&reports.iter().collect::<Vec<_>>());
            let text = transfer::k_sweep_table(&reports);
            print!("{text}");
            if let Some(t) = table {
                write_file(&t, text.as_bytes())?;
            }
            let stable: Vec<TransferReport> = reports
                .iter()
                .map(TransferReport::without_timings)
                .collect();
            write_json(&stable, &out)
        }
        TransferCmd::SweepDomain {
            config,
            pairs,
            seed,
            out,
            table,
        } => {
            let cfg = load_pipeline(&config, seed)?;
            let pairs = pairs
                .iter()
                .map(|p| {
                    p.split_once(':')
                        .map(|(a, b)| (PathBuf::from(a), PathBuf::from(b)))
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("pair {p:?} is not CLUSTER:PSEUDO"))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let reports = transfer::sweep_domain(&cfg, &pairs)?;
            log_times(&reports.iter().map(|r| &r.report).collect::<Vec<_>>());
            let text = transfer::domain_table(&reports);
            print!("{text}");
            if let Some(t) = table {
                write_file(&t, text.as_bytes())?;
            }
            let stable: Vec<_> = reports
                .iter()
                .map(|r| transfer::DomainReport {
                    report: r.report.without_timings(),
                    ..r.clone()
                })
                .collect();
            write_json(&stable, &out)
        }
        TransferCmd::SynthBlobs {
            classes,
            per_class,
            dim,
            sep,
            seed,
            sample_seed,
            distractors,
            distractor_std,
            out_prefix,
        } => {
            let data = synth::blobs(&BlobConfig {
                classes,
                per_class,
                dim,
                sep,
                seed,
                sample_seed,
                distractors,
                distractor_std,
            })?;
            let manifest = synth::write_blobs(&data, &out_prefix)?;
            print_json(&json!({"manifest": manifest, "n_samples": data.features.n_samples()}));
            Ok(())
        }
    }
}
