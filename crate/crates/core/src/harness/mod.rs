//! Experiment orchestration behind the command-line tool.

pub mod check;
pub mod config;
pub mod data;
mod geometry_cmd;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

pub use config::{ExperimentConfig, RawConfig};
pub use data::Dataset;

use crate::autodiff::Tensor;
use crate::cvae::{self, CvaeModel, LatentMode, PhaseStats};
use crate::distributions::CoupledGaussian;
use crate::error::{Error, Result};
use crate::metrics::{frechet_gaussian, mean_cov, mse, psnr, Pca};
use config::DatasetKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Check,
    Geometry,
    Sample,
    Robustness,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Check => "check",
            Command::Geometry => "geometry",
            Command::Sample => "sample",
            Command::Robustness => "robustness",
        }
    }
}

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Outcome of a successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// False when a hard conformance assertion failed.
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub run_id: String,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub phase: &'static str,
    pub kappa: f64,
    pub sampling: &'static str,
    pub cfe_total: Option<f64>,
    pub cfe_divergence: Option<f64>,
    pub cfe_reconstruction: Option<f64>,
    pub cfe_total_a_free: Option<f64>,
    pub cfe_std_across_batches: Option<f64>,
    pub cfe_mc_stderr: Option<f64>,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub frechet_gaussian: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub max_clipped_grad_norm: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub diagnostic: Option<String>,
}

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl MetricsRecord {
    fn base(ctx: &Ctx, record: &'static str, phase: &'static str, kappa: f64, sampling: LatentMode) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            record,
            run_id: ctx.run_id.clone(),
            seed: ctx.cfg.train.seed,
            epoch: None,
            phase,
            kappa,
            sampling: sampling.label(),
            cfe_total: None,
            cfe_divergence: None,
            cfe_reconstruction: None,
            cfe_total_a_free: None,
            cfe_std_across_batches: None,
            cfe_mc_stderr: None,
            mse: None,
            psnr: None,
            frechet_gaussian: None,
            max_grad_norm: None,
            max_clipped_grad_norm: None,
            wall_time_s: None,
            diagnostic: None,
        }
    }

    fn with_stats(mut self, s: &PhaseStats) -> Self {
        self.cfe_total = fin(s.cfe_mean);
        self.cfe_divergence = fin(s.divergence);
        self.cfe_reconstruction = fin(s.reconstruction);
        self.cfe_total_a_free = fin(s.cfe_a_free);
        self.cfe_std_across_batches = fin(s.cfe_std);
        self.cfe_mc_stderr = fin(s.mc_stderr);
        self
    }

    fn with_quality(mut self, q: &Quality) -> Self {
        self.mse = fin(q.mse);
        self.psnr = fin(q.psnr);
        self.frechet_gaussian = q.frechet.and_then(fin);
        self
    }
}

/// Line-oriented JSON writer; each line is flushed as written.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn write<T: Serialize>(&mut self, v: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

struct Ctx {
    raw: RawConfig,
    cfg: ExperimentConfig,
    run_id: String,
    out: PathBuf,
    started: Instant,
}

impl Ctx {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        r.set_stream(stream);
        r
    }

    fn wall(&self) -> Option<f64> {
        self.cfg.record_wall_time.then(|| self.started.elapsed().as_secs_f64())
    }

    fn config_record(&self, command: Command) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "record": "config",
            "run_id": self.run_id,
            "seed": self.cfg.train.seed,
            "subcommand": command.name(),
            "config": self.raw.values(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.checkpoint.clone().unwrap_or_else(|| self.path("checkpoint.cvae"))
    }
}

// RNG streams; the training loop owns streams 1 and up via its own seeding.
const STREAM_DATA: u64 = 1 << 20;
const STREAM_OUTLIERS: u64 = STREAM_DATA + 1;
const STREAM_EVAL: u64 = STREAM_DATA + 2;
const STREAM_QUALITY: u64 = STREAM_DATA + 3;
const STREAM_SAMPLE: u64 = STREAM_DATA + 4;

/// Loads or generates the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(STREAM_DATA);
    match cfg.dataset {
        DatasetKind::Mixture => {
            let means = data::mixture_means(cfg.mixture_components, cfg.data_dim, &mut rng);
            Ok(data::generate_mixture(&means, cfg.mixture_spread, cfg.n_samples, &mut rng)?.0)
        }
        DatasetKind::HeavyTail => data::generate_heavytail(cfg.n_samples, cfg.data_dim, cfg.heavytail_kappa, &mut rng),
        DatasetKind::Idx => data::load_idx_images(cfg.data_path.as_deref().expect("checked at resolve")),
        DatasetKind::Csv => data::read_csv(cfg.data_path.as_deref().expect("checked at resolve")),
    }
}

/// Train/val/test splits; outliers, if configured, go into the training split only.
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_mask: Vec<bool>,
}

pub fn make_splits(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Splits> {
    let [tr, va, te] = data::split_indices(ds.n, cfg.split, cfg.train.seed);
    let mut train = ds.select(&tr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(STREAM_OUTLIERS);
    let train_mask = data::inject_outliers(&mut train, cfg.outlier_fraction, cfg.outlier_scale, &mut rng)?;
    if train.n == 0 {
        return Err(Error::Config(format!("training split of {} rows is empty", ds.n)));
    }
    Ok(Splits { train, val: ds.select(&va), test: ds.select(&te), train_mask })
}

struct Quality {
    mse: f64,
    psnr: f64,
    frechet: Option<f64>,
    recon: Tensor,
}

fn quality(model: &CvaeModel, ds: &Dataset, mode: LatentMode, pca: usize, rng: &mut ChaCha8Rng) -> Result<Quality> {
    let recon = cvae::reconstruct(model, &ds.to_tensor(), mode, rng)?;
    let m = mse(&ds.data, recon.data())?;
    let frechet = if ds.n >= 2 {
        let (a, b, d) = if pca > 0 {
            let p = Pca::fit(&ds.data, ds.n, ds.d, pca.min(ds.d))?;
            (p.project(&ds.data, ds.n), p.project(recon.data(), ds.n), pca.min(ds.d))
        } else {
            (ds.data.clone(), recon.data().to_vec(), ds.d)
        };
        let (m1, c1) = mean_cov(&a, ds.n, d)?;
        let (m2, c2) = mean_cov(&b, ds.n, d)?;
        frechet_gaussian(&m1, &c1, &m2, &c2).ok()
    } else {
        None
    };
    Ok(Quality { mse: m, psnr: psnr(m), frechet, recon })
}

fn write_recon_grid(path: &Path, ds: &Dataset, recon: &Tensor) -> Result<()> {
    let rows = ds.n.min(64);
    let mut header = vec!["row".to_string(), "kind".to_string()];
    header.extend((0..ds.d).map(|j| format!("v{j}")));
    let lines = (0..rows).flat_map(|i| {
        let orig = std::iter::once(i.to_string()).chain(std::iter::once("original".to_string()));
        let a: Vec<String> = orig.chain(ds.row(i).iter().map(|v| v.to_string())).collect();
        let rec = std::iter::once(i.to_string()).chain(std::iter::once("reconstruction".to_string()));
        let b: Vec<String> = rec.chain(recon.row(i).iter().map(|v| v.to_string())).collect();
        [a, b]
    });
    data::write_csv(path, &header, lines)
}

/// Runs one subcommand, writing its outputs under `out`.
pub fn run(command: Command, raw: &RawConfig, out: &Path) -> Result<RunSummary> {
    let cfg = raw.resolve()?;
    std::fs::create_dir_all(out)?;
    let ctx = Ctx { raw: raw.clone(), run_id: raw.run_id(), cfg, out: out.to_path_buf(), started: Instant::now() };
    match command {
        Command::Train => run_train(&ctx),
        Command::Eval => run_eval(&ctx),
        Command::Check => check::run_check(&ctx.cfg, &ctx.path("conformance.json")),
        Command::Geometry => geometry_cmd::run_geometry(&ctx.cfg, &ctx.path("geometry.json")),
        Command::Sample => run_sample(&ctx),
        Command::Robustness => run_robustness(&ctx),
    }
}

fn abort(w: &mut JsonlWriter, ctx: &Ctx, kappa: f64, err: &Error) -> Result<()> {
    let mut r = MetricsRecord::base(ctx, "abort", "train", kappa, LatentMode::Escort);
    r.diagnostic = Some(err.to_string());
    w.write(&r)
}

/// Trains one model on the splits, streaming records to `w`.
fn train_model(ctx: &Ctx, cfg: &cvae::TrainConfig, splits: &Splits, w: &mut JsonlWriter) -> Result<CvaeModel> {
    let model = CvaeModel::new(splits.train.d, cfg)?;
    let val = splits.val.to_tensor();
    let mut qrng = ctx.rng(STREAM_QUALITY);
    let mut sink = |rec: &cvae::EpochRecord| -> Result<()> {
        let mut r = MetricsRecord::base(ctx, "epoch", "train", cfg.kappa, LatentMode::Escort).with_stats(&rec.train);
        r.epoch = Some(rec.epoch);
        r.max_grad_norm = fin(rec.max_grad_norm);
        r.max_clipped_grad_norm = fin(rec.max_clipped_norm);
        r.wall_time_s = ctx.wall();
        w.write(&r)?;
        if let Some(v) = &rec.val {
            let mut r = MetricsRecord::base(ctx, "epoch", "val", cfg.kappa, LatentMode::Escort).with_stats(v);
            r.epoch = Some(rec.epoch);
            r.wall_time_s = ctx.wall();
            w.write(&r)?;
        }
        Ok(())
    };
    let model = match cvae::train(model, &splits.train.to_tensor(), (splits.val.n > 0).then_some(&val), cfg, &mut sink) {
        Ok(o) => o.model,
        Err(e) => {
            abort(w, ctx, cfg.kappa, &e)?;
            return Err(e);
        }
    };
    if splits.val.n > 0 {
        let q = quality(&model, &splits.val, LatentMode::Escort, ctx.cfg.frechet_pca, &mut qrng)?;
        let mut r = MetricsRecord::base(ctx, "quality", "val", cfg.kappa, LatentMode::Escort).with_quality(&q);
        r.epoch = Some(cfg.epochs);
        w.write(&r)?;
    }
    Ok(model)
}

fn eval_record(ctx: &Ctx, model: &CvaeModel, ds: &Dataset, mode: LatentMode, phase: &'static str) -> Result<(MetricsRecord, Quality)> {
    let mut erng = ctx.rng(STREAM_EVAL);
    let stats = cvae::evaluate(model, &ds.to_tensor(), &ctx.cfg.train, mode, &mut erng)?;
    let mut qrng = ctx.rng(STREAM_QUALITY);
    let q = quality(model, ds, mode, ctx.cfg.frechet_pca, &mut qrng)?;
    let mut r = MetricsRecord::base(ctx, "eval", phase, model.kappa(), mode).with_stats(&stats).with_quality(&q);
    r.wall_time_s = ctx.wall();
    Ok((r, q))
}

fn run_train(ctx: &Ctx) -> Result<RunSummary> {
    let ds = load_dataset(&ctx.cfg)?;
    let splits = make_splits(&ctx.cfg, &ds)?;
    let metrics = ctx.path("metrics.jsonl");
    let mut w = JsonlWriter::create(&metrics)?;
    w.write(&ctx.config_record(Command::Train))?;
    std::fs::write(ctx.path("config.cfg"), ctx.raw.to_text())?;
    let model = train_model(ctx, &ctx.cfg.train, &splits, &mut w)?;
    let mut files = vec![metrics, ctx.path("config.cfg")];
    if splits.test.n > 0 {
        let (r, q) = eval_record(ctx, &model, &splits.test, LatentMode::Escort, "test")?;
        w.write(&r)?;
        write_recon_grid(&ctx.path("recon_grid.csv"), &splits.test, &q.recon)?;
        files.push(ctx.path("recon_grid.csv"));
    }
    let ck = ctx.checkpoint_path();
    cvae::checkpoint_save(&model, &ck)?;
    files.push(ck);
    Ok(RunSummary { passed: true, files })
}

fn load_checkpoint(ctx: &Ctx) -> Result<CvaeModel> {
    let ck = ctx.checkpoint_path();
    if !ck.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", ck.display())));
    }
    cvae::checkpoint_load(&ck)
}

fn run_eval(ctx: &Ctx) -> Result<RunSummary> {
    let model = load_checkpoint(ctx)?;
    let ds = load_dataset(&ctx.cfg)?;
    if ds.d != model.input_dim() {
        return Err(Error::Config(format!("dataset has {} columns, checkpoint expects {}", ds.d, model.input_dim())));
    }
    let splits = make_splits(&ctx.cfg, &ds)?;
    let target = if splits.test.n > 0 { &splits.test } else { &ds };
    let metrics = ctx.path("metrics.jsonl");
    let mut w = JsonlWriter::create(&metrics)?;
    w.write(&ctx.config_record(Command::Eval))?;
    let (r, q) = eval_record(ctx, &model, target, ctx.cfg.sampling, "test")?;
    w.write(&r)?;
    write_recon_grid(&ctx.path("recon_grid.csv"), target, &q.recon)?;
    Ok(RunSummary { passed: true, files: vec![metrics, ctx.path("recon_grid.csv")] })
}

fn run_sample(ctx: &Ctx) -> Result<RunSummary> {
    let model = load_checkpoint(ctx)?;
    let prior = CoupledGaussian::standard(model.latent_dim(), model.kappa())?;
    let prior = match ctx.cfg.sampling {
        LatentMode::Escort => prior.escort_transform(),
        LatentMode::Posterior => prior,
    };
    let mut rng = ctx.rng(STREAM_SAMPLE);
    let n = ctx.cfg.sample_count.max(1);
    let z = prior.sample(&mut rng, n);
    let zt = Tensor::matrix(n, model.latent_dim(), z.transpose().as_slice().to_vec())?;
    let x = model.decode(&zt)?;
    let path = ctx.path("samples.csv");
    let header: Vec<String> = (0..model.input_dim()).map(|j| format!("v{j}")).collect();
    data::write_csv(&path, &header, (0..n).map(|i| x.row(i).iter().map(|v| v.to_string()).collect()))?;
    Ok(RunSummary { passed: true, files: vec![path] })
}

fn run_robustness(ctx: &Ctx) -> Result<RunSummary> {
    let ds = load_dataset(&ctx.cfg)?;
    let splits = make_splits(&ctx.cfg, &ds)?;
    if splits.test.n == 0 {
        return Err(Error::Config("robustness needs a non-empty test split".into()));
    }
    let metrics = ctx.path("metrics.jsonl");
    let mut w = JsonlWriter::create(&metrics)?;
    w.write(&ctx.config_record(Command::Robustness))?;
    let clean: Vec<usize> = (0..splits.train.n).filter(|&i| !splits.train_mask[i]).collect();
    let clean_train = splits.train.select(&clean);
    let mut rows = Vec::new();
    for &k in &ctx.cfg.robustness_kappas {
        let cfg = cvae::TrainConfig { kappa: k, ..ctx.cfg.train.clone() };
        let model = train_model(ctx, &cfg, &splits, &mut w)?;
        let (r, _) = eval_record(ctx, &model, &splits.test, LatentMode::Escort, "test")?;
        w.write(&r)?;
        let clean_mse = if clean_train.n > 0 {
            let mut qrng = ctx.rng(STREAM_QUALITY);
            fin(quality(&model, &clean_train, LatentMode::Escort, 0, &mut qrng)?.mse)
        } else {
            None
        };
        rows.push(json!({
            "kappa": k,
            "clean_test_mse": r.mse,
            "clean_test_psnr": r.psnr,
            "clean_test_cfe": r.cfe_total,
            "clean_train_subset_mse": clean_mse,
        }));
    }
    let table = json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": ctx.run_id,
        "seed": ctx.cfg.train.seed,
        "outlier_fraction": ctx.cfg.outlier_fraction,
        "outlier_scale": ctx.cfg.outlier_scale,
        "corrupted_train_rows": splits.train_mask.iter().filter(|&&m| m).count(),
        "rows": rows,
    });
    let path = ctx.path("robustness.json");
    std::fs::write(&path, serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(RunSummary { passed: true, files: vec![metrics, path] })
}
