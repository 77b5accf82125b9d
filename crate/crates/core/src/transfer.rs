//! The knowledge-transfer pipeline.
//!
//! 1. Cluster the teacher features of the clustering dataset with k-means.
//! 2. Assign every sample of the pseudo-label dataset to its nearest center.
//! 3. Train a student network on the student inputs of that dataset to
//!    predict the pseudo-labels.
//! 4. Score the result: agreement of pseudo-labels with the true labels
//!    (NMI, purity) and a linear probe on the student's penultimate
//!    activations, trained and tested on a seeded split of the true labels.
//!
//! Two alternative modes share the scoring: `regression_distill` trains the
//! student to regress the teacher features directly, and `random_control`
//! takes its pseudo-labels from clustering the activations of a randomly
//! initialized copy of the student architecture and trains at a learning rate
//! of 0.001.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{read_file, FeatureMatrix, LabelVector, Manifest};
use crate::error::{Error, Result, StageExt};
use crate::kmeans::{self, KMeansConfig};
use crate::metrics;
use crate::nnet::{self, Head, Layer, NetParams, NetSpec, Targets, TrainConfig};
use crate::rng::Rng;

/// Learning rate used by the random-pseudo-label control.
pub const RANDOM_CONTROL_LR: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClusterTransfer,
    RegressionDistill,
    RandomControl,
}

/// Student body; the output layer is appended to fit the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
    pub layers: Vec<Layer>,
    pub train: TrainConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            input_shape: None,
            layers: vec![Layer::Dense { out_dim: 96 }, Layer::Relu],
            train: TrainConfig {
                lr: 0.01,
                momentum: 0.9,
                batch_size: 32,
                epochs: 40,
                lr_schedule: None,
                weight_decay: 0.01,
                seed: 0,
            },
        }
    }
}

impl StudentConfig {
    pub fn net_spec(&self, input_dim: usize, head: Head) -> NetSpec {
        let mut layers = self.layers.clone();
        layers.push(Layer::Dense {
            out_dim: head.out_dim(),
        });
        NetSpec {
            input_dim,
            input_shape: self.input_shape,
            layers,
            head,
        }
    }
}

/// Linear probe: softmax regression on standardized frozen activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Fraction of labelled samples used to fit the probe; the rest score it.
    pub train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.5,
            train: TrainConfig {
                lr: 0.05,
                momentum: 0.9,
                batch_size: 64,
                epochs: 60,
                lr_schedule: None,
                weight_decay: 0.0,
                seed: 0,
            },
        }
    }
}

/// Extra reference arms measured alongside a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Baselines {
    /// Probe on the student architecture at initialization.
    pub untrained: bool,
    /// Probe on a student trained directly on the true labels.
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Default manifest for both datasets below.
    #[serde(default)]
    pub pretrain_features: Option<PathBuf>,
    /// Manifest whose `features` are clustered.
    #[serde(default)]
    pub cluster_dataset: Option<PathBuf>,
    /// Manifest whose samples receive pseudo-labels and train the student.
    #[serde(default)]
    pub pseudo_label_dataset: Option<PathBuf>,
    pub k: usize,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub l2_normalize: bool,
    #[serde(default = "default_kmeans")]
    pub kmeans: KMeansConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub baselines: Baselines,
}

fn default_kmeans() -> KMeansConfig {
    KMeansConfig {
        n_init: 3,
        ..Default::default()
    }
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, k: usize, mode: Mode, seed: u64) -> Self {
        PipelineConfig {
            pretrain_features: Some(manifest.into()),
            cluster_dataset: None,
            pseudo_label_dataset: None,
            k,
            mode,
            seed,
            l2_normalize: false,
            kmeans: default_kmeans(),
            student: StudentConfig::default(),
            probe: ProbeConfig::default(),
            baselines: Baselines::default(),
        }
    }

    /// Loads a JSON config; relative manifest paths resolve against the
    /// config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: PipelineConfig = serde_json::from_slice(&read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.pretrain_features,
            &mut cfg.cluster_dataset,
            &mut cfg.pseudo_label_dataset,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn manifest_for(&self, explicit: &Option<PathBuf>, role: &str) -> Result<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.pretrain_features.clone())
            .ok_or_else(|| Error::InvalidConfig(format!("no manifest for the {role} dataset")))
    }

    pub fn cluster_manifest(&self) -> Result<PathBuf> {
        self.manifest_for(&self.cluster_dataset, "clustering")
    }

    pub fn pseudo_label_manifest(&self) -> Result<PathBuf> {
        self.manifest_for(&self.pseudo_label_dataset, "pseudo-label")
    }
}

/// A dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Teacher representation.
    pub features: FeatureMatrix,
    /// What the student sees.
    pub inputs: FeatureMatrix,
    pub labels: Option<LabelVector>,
}

impl Dataset {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let path = manifest.as_ref();
        let m = Manifest::load(path)?;
        let features = m.load_features()?;
        let inputs = m.load_inputs()?;
        if inputs.n_samples() != features.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: features.n_samples(),
                found: inputs.n_samples(),
            });
        }
        let labels = m.load_labels()?;
        if let Some(l) = &labels {
            if l.len() != features.n_samples() {
                return Err(Error::DimensionMismatch {
                    expected: features.n_samples(),
                    found: l.len(),
                });
            }
        }
        let name = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Ok(Dataset {
            name,
            features,
            inputs,
            labels,
        })
    }

    pub fn from_blobs(name: impl Into<String>, data: &crate::synth::BlobData) -> Self {
        Dataset {
            name: name.into(),
            features: data.features.clone(),
            inputs: data.inputs.clone(),
            labels: Some(data.labels.clone()),
        }
    }
}

/// Per-stage wall-clock seconds. Timing is the only part of a report that
/// varies between identical runs.
pub type StageTimes = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub cluster_dataset: String,
    pub pseudo_label_dataset: String,
    /// k-means objective on the clustering dataset (absent for distillation).
    pub inertia: Option<f64>,
    pub kmeans_iters: Option<usize>,
    /// Proxy metrics: pseudo-labels against true labels.
    pub nmi_vs_truth: Option<f64>,
    pub purity_vs_truth: Option<f64>,
    /// Training accuracy on the pseudo-labels (classification modes).
    pub student_train_acc: Option<f64>,
    pub student_final_loss: f64,
    /// Linear-probe accuracy on held-out true labels.
    pub student_probe_acc: Option<f64>,
    pub untrained_probe_acc: Option<f64>,
    pub supervised_probe_acc: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub wall_times: StageTimes,
}

impl TransferReport {
    /// Copy with timings cleared, for bit-exact comparisons.
    pub fn without_timings(&self) -> Self {
        TransferReport {
            wall_times: StageTimes::new(),
            ..self.clone()
        }
    }
}

/// Seeds for the independent random choices of one run.
struct Seeds {
    kmeans: u64,
    student: u64,
    split: u64,
    probe: u64,
    random_net: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let d = |i| Rng::substream(seed, i).next_u64();
        Seeds {
            kmeans: d(1),
            student: d(2),
            split: d(3),
            probe: d(4),
            random_net: d(5),
        }
    }
}

fn timed<T>(times: &mut StageTimes, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *times.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
    out
}

/// Splits `0..n` into probe-train and probe-test index sets.
fn probe_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(
            "probe train_fraction must lie in (0, 1)".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::InvalidShape(
            "probe needs at least 2 labelled samples".into(),
        ));
    }
    let test = idx.split_off(cut);
    Ok((idx, test))
}

fn standardize(
    train: &FeatureMatrix,
    other: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let d = train.n_dims();
    let n = train.n_samples() as f64;
    let mut mean = vec![0.0; d];
    for r in train.rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; d];
    for r in train.rows() {
        std.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let std: Vec<f64> = std
        .iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    let apply = |x: &FeatureMatrix| {
        let data = x
            .rows()
            .flat_map(|r| {
                r.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect::<Vec<_>>()
            })
            .collect();
        FeatureMatrix::new(x.n_samples(), d, data)
    };
    Ok((apply(train)?, apply(other)?))
}

/// Test accuracy of a linear probe on `features` against `labels`.
pub fn linear_probe(
    features: &FeatureMatrix,
    labels: &LabelVector,
    cfg: &ProbeConfig,
    split_seed: u64,
    train_seed: u64,
) -> Result<f64> {
    let (tr, te) = probe_split(features.n_samples(), cfg.train_fraction, split_seed)?;
    let (xtr, xte) = standardize(&features.select_rows(&tr)?, &features.select_rows(&te)?)?;
    let (ytr, yte) = (labels.select(&tr), labels.select(&te));
    let n_classes = labels.n_classes().max(2);
    let spec = NetSpec::mlp(
        features.n_dims(),
        &[],
        Head::SoftmaxCrossEntropy { n_classes },
    );
    let tcfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let (params, _) = nnet::train(&spec, &tcfg, &xtr, Targets::Classes(ytr.labels()))?;
    nnet::evaluate(&spec, &params, &xte, &yte)
}

fn maybe_normalize(x: &FeatureMatrix, on: bool) -> FeatureMatrix {
    if on {
        x.l2_normalized()
    } else {
        x.clone()
    }
}

/// Runs the configured mode, loading datasets from the manifests.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<TransferReport> {
    let cluster_path = cfg.cluster_manifest()?;
    let pl_path = cfg.pseudo_label_manifest()?;
    let cluster = Dataset::load(&cluster_path).stage("load clustering dataset")?;
    let pseudo = if pl_path == cluster_path {
        cluster.clone()
    } else {
        Dataset::load(&pl_path).stage("load pseudo-label dataset")?
    };
    run_on(cfg, &cluster, &pseudo)
}

/// Runs the configured mode on in-memory datasets.
pub fn run_on(cfg: &PipelineConfig, cluster: &Dataset, pseudo: &Dataset) -> Result<TransferReport> {
    if cfg.k < 2 {
        return Err(Error::InvalidConfig("k must be >= 2".into()));
    }
    if cluster.features.n_dims() != pseudo.features.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: cluster.features.n_dims(),
            found: pseudo.features.n_dims(),
        });
    }
    let seeds = Seeds::new(cfg.seed);
    let mut times = StageTimes::new();
    let truth = pseudo.labels.as_ref();
    let input_dim = pseudo.inputs.n_dims();
    let kcfg = KMeansConfig {
        k: cfg.k,
        seed: seeds.kmeans,
        ..cfg.kmeans.clone()
    };
    let mut student_train = TrainConfig {
        seed: seeds.student,
        ..cfg.student.train.clone()
    };

    // pseudo-labels, or regression targets for distillation
    let mut inertia = None;
    let mut kmeans_iters = None;
    let mut pseudo_labels = None;
    match cfg.mode {
        Mode::ClusterTransfer | Mode::RandomControl => {
            let (fit_on, label_on) = if cfg.mode == Mode::ClusterTransfer {
                (
                    maybe_normalize(&cluster.features, cfg.l2_normalize),
                    maybe_normalize(&pseudo.features, cfg.l2_normalize),
                )
            } else {
                student_train.lr = RANDOM_CONTROL_LR;
                timed(&mut times, "random features", || {
                    let spec = cfg
                        .student
                        .net_spec(input_dim, Head::SoftmaxCrossEntropy { n_classes: cfg.k });
                    let net = nnet::init_params(&spec, seeds.random_net)?;
                    Ok((
                        maybe_normalize(
                            &nnet::embed(&spec, &net, &cluster.inputs)?,
                            cfg.l2_normalize,
                        ),
                        maybe_normalize(
                            &nnet::embed(&spec, &net, &pseudo.inputs)?,
                            cfg.l2_normalize,
                        ),
                    ))
                })
                .stage("random features")?
            };
            let cb =
                timed(&mut times, "cluster", || kmeans::fit(&fit_on, &kcfg)).stage("cluster")?;
            inertia = Some(cb.inertia);
            kmeans_iters = Some(cb.n_iters_run);
            pseudo_labels = Some(
                timed(&mut times, "pseudo-label", || {
                    kmeans::assign(&label_on, &cb)
                })
                .stage("pseudo-label")?,
            );
        }
        Mode::RegressionDistill => {}
    }

    let (nmi_vs_truth, purity_vs_truth) = match (&pseudo_labels, truth) {
        (Some(p), Some(t)) => (
            Some(metrics::nmi(p.labels(), t.labels())?),
            Some(metrics::purity(p.labels(), t.labels())?),
        ),
        _ => (None, None),
    };

    let (spec, params, history) = timed(&mut times, "train student", || match &pseudo_labels {
        Some(p) => {
            let spec = cfg
                .student
                .net_spec(input_dim, Head::SoftmaxCrossEntropy { n_classes: cfg.k });
            let (params, h) = nnet::train(
                &spec,
                &student_train,
                &pseudo.inputs,
                Targets::Classes(p.labels()),
            )?;
            Ok((spec, params, h))
        }
        None => {
            let out_dim = pseudo.features.n_dims();
            let spec = cfg
                .student
                .net_spec(input_dim, Head::L2Regression { out_dim });
            let (params, h) = nnet::train(
                &spec,
                &student_train,
                &pseudo.inputs,
                Targets::Values(pseudo.features.data()),
            )?;
            Ok((spec, params, h))
        }
    })
    .stage("train student")?;
    let last = history.last();

    let probe =
        |times: &mut StageTimes, stage: &'static str, spec: &NetSpec, params: &NetParams| {
            let Some(t) = truth else { return Ok(None) };
            timed(times, stage, || {
                let emb = nnet::embed(spec, params, &pseudo.inputs)?;
                linear_probe(&emb, t, &cfg.probe, seeds.split, seeds.probe).map(Some)
            })
            .stage(stage)
        };

    let student_probe_acc = probe(&mut times, "probe student", &spec, &params)?;

    let untrained_probe_acc = if cfg.baselines.untrained {
        let init = nnet::init_params(&spec, seeds.student)?;
        probe(&mut times, "probe untrained", &spec, &init)?
    } else {
        None
    };

    let supervised_probe_acc = match (cfg.baselines.supervised, truth) {
        (true, Some(t)) => {
            let sspec = cfg.student.net_spec(
                input_dim,
                Head::SoftmaxCrossEntropy {
                    n_classes: t.n_classes().max(2),
                },
            );
            let sup_train = TrainConfig {
                seed: seeds.student,
                ..cfg.student.train.clone()
            };
            let (sp, _) = timed(&mut times, "train supervised", || {
                nnet::train(
                    &sspec,
                    &sup_train,
                    &pseudo.inputs,
                    Targets::Classes(t.labels()),
                )
            })
            .stage("train supervised")?;
            probe(&mut times, "probe supervised", &sspec, &sp)?
        }
        _ => None,
    };

    Ok(TransferReport {
        mode: cfg.mode,
        k: cfg.k,
        seed: cfg.seed,
        cluster_dataset: cluster.name.clone(),
        pseudo_label_dataset: pseudo.name.clone(),
        inertia,
        kmeans_iters,
        nmi_vs_truth,
        purity_vs_truth,
        student_train_acc: last.and_then(|e| e.accuracy),
        student_final_loss: last.map_or(f64::NAN, |e| e.loss),
        student_probe_acc,
        untrained_probe_acc,
        supervised_probe_acc,
        wall_times: times,
    })
}

/// One run per cluster count.
pub fn sweep_k(cfg: &PipelineConfig, k_list: &[usize]) -> Result<Vec<TransferReport>> {
    let cluster_path = cfg.cluster_manifest()?;
    let pl_path = cfg.pseudo_label_manifest()?;
    let cluster = Dataset::load(&cluster_path).stage("load clustering dataset")?;
    let pseudo = if pl_path == cluster_path {
        cluster.clone()
    } else {
        Dataset::load(&pl_path).stage("load pseudo-label dataset")?
    };
    sweep_k_on(cfg, &cluster, &pseudo, k_list)
}

pub fn sweep_k_on(
    cfg: &PipelineConfig,
    cluster: &Dataset,
    pseudo: &Dataset,
    k_list: &[usize],
) -> Result<Vec<TransferReport>> {
    k_list
        .iter()
        .map(|&k| run_on(&PipelineConfig { k, ..cfg.clone() }, cluster, pseudo))
        .collect()
}

/// A cross-dataset run and the same-dataset run it is compared with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainReport {
    pub report: TransferReport,
    /// Probe accuracy when clustering on the pseudo-label dataset itself.
    pub same_set_probe_acc: Option<f64>,
    /// `report.student_probe_acc - same_set_probe_acc`.
    pub probe_delta: Option<f64>,
}

/// Clusters on the first dataset of each pair and pseudo-labels the second.
pub fn sweep_domain_on(
    cfg: &PipelineConfig,
    pairs: &[(Dataset, Dataset)],
) -> Result<Vec<DomainReport>> {
    let mut same_set: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(pairs.len());
    for (cluster, pseudo) in pairs {
        let report = run_on(cfg, cluster, pseudo)?;
        let base = if cluster == pseudo {
            report.student_probe_acc
        } else {
            match same_set.get(&pseudo.name) {
                Some(v) => *v,
                None => run_on(cfg, pseudo, pseudo)?.student_probe_acc,
            }
        };
        same_set.insert(pseudo.name.clone(), base);
        let probe_delta = report.student_probe_acc.zip(base).map(|(a, b)| a - b);
        out.push(DomainReport {
            report,
            same_set_probe_acc: base,
            probe_delta,
        });
    }
    Ok(out)
}

pub fn sweep_domain(
    cfg: &PipelineConfig,
    pairs: &[(PathBuf, PathBuf)],
) -> Result<Vec<DomainReport>> {
    let mut cache: BTreeMap<PathBuf, Dataset> = BTreeMap::new();
    let mut load = |p: &PathBuf| -> Result<Dataset> {
        if let Some(d) = cache.get(p) {
            return Ok(d.clone());
        }
        let d = Dataset::load(p).stage("load dataset")?;
        cache.insert(p.clone(), d.clone());
        Ok(d)
    };
    let mut loaded = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        loaded.push((load(a)?, load(b)?));
    }
    sweep_domain_on(cfg, &loaded)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

fn table(rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let ncol = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..ncol)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.1.get(j))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    for (label, cells) in rows {
        write!(s, "{label:<label_w$}").unwrap();
        for (c, w) in cells.iter().zip(&col_w) {
            write!(s, "  {c:>w$}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Cluster count across, probe accuracy (%) below.
pub fn k_sweep_table(reports: &[TransferReport]) -> String {
    table(&[
        (
            "#clusters".into(),
            reports.iter().map(|r| r.k.to_string()).collect(),
        ),
        (
            "probe accuracy".into(),
            reports.iter().map(|r| pct(r.student_probe_acc)).collect(),
        ),
    ])
}

/// One column per (clustering set, pseudo-label set) pair.
pub fn domain_table(reports: &[DomainReport]) -> String {
    table(&[
        (
            "clustering on".into(),
            reports
                .iter()
                .map(|r| r.report.cluster_dataset.clone())
                .collect(),
        ),
        (
            "pseudo-labels on".into(),
            reports
                .iter()
                .map(|r| r.report.pseudo_label_dataset.clone())
                .collect(),
        ),
        (
            "probe accuracy".into(),
            reports
                .iter()
                .map(|r| pct(r.report.student_probe_acc))
                .collect(),
        ),
    ])
}
