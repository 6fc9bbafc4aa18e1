use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cfe_loss_on, clip_global_norm, draw_noise, Adam, CvaeModel, LatentMode, TrainConfig};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Loss statistics over the batches of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub cfe_mean: f64,
    /// Standard deviation of the batch-mean CFE across batches.
    pub cfe_std: f64,
    pub divergence: f64,
    pub reconstruction: f64,
    pub cfe_a_free: f64,
    pub mc_stderr: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: PhaseStats,
    pub val: Option<PhaseStats>,
    pub max_grad_norm: f64,
    pub max_clipped_norm: f64,
}

pub struct TrainOutcome {
    pub model: CvaeModel,
    pub records: Vec<EpochRecord>,
}

#[derive(Default)]
struct Acc {
    totals: Vec<f64>,
    total: f64,
    div: f64,
    rec: f64,
    a_free: f64,
    stderr: f64,
    weight: f64,
}

impl Acc {
    fn push(&mut self, rows: usize, t: &super::LossOutput) {
        let w = rows as f64;
        self.totals.push(t.terms.total);
        self.total += w * t.terms.total;
        self.div += w * t.terms.divergence;
        self.rec += w * t.terms.reconstruction;
        self.a_free += w * t.total_a_free;
        self.stderr += (w * t.terms.mc_stderr).powi(2);
        self.weight += w;
    }

    fn finish(self) -> PhaseStats {
        let n = self.totals.len();
        let batch_mean = self.totals.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (self.totals.iter().map(|v| (v - batch_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        PhaseStats {
            cfe_mean: self.total / self.weight,
            cfe_std: std,
            divergence: self.div / self.weight,
            reconstruction: self.rec / self.weight,
            cfe_a_free: self.a_free / self.weight,
            mc_stderr: self.stderr.sqrt() / self.weight,
            batches: n,
        }
    }
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let (_, d) = x.dims2();
    let data = idx.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Tensor::matrix(idx.len(), d, data).expect("sizes agree")
}

fn non_finite(tape: &Tape, fallback: &'static str) -> Error {
    tape.first_non_finite().unwrap_or(Error::NonFinite { node: tape.len().saturating_sub(1), op: fallback })
}

/// Loss statistics over `x` in fixed batch order, without updating weights.
pub fn evaluate<R: Rng + ?Sized>(
    model: &CvaeModel,
    x: &Tensor,
    cfg: &TrainConfig,
    mode: LatentMode,
    rng: &mut R,
) -> Result<PhaseStats> {
    let (n, _) = x.dims2();
    if n == 0 {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let a = model.a_xz(cfg.a_xz_override)?;
    let idx: Vec<usize> = (0..n).collect();
    let mut acc = Acc::default();
    for chunk in idx.chunks(cfg.batch_size) {
        let batch = gather(x, chunk);
        let noise = draw_noise(chunk.len(), model.latent_dim(), model.kappa(), mode, cfg.mc_samples, rng);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = cfe_loss_on(model, &mut tape, &vars, &batch, &noise, a)?;
        if !out.terms.total.is_finite() {
            return Err(non_finite(&tape, "loss"));
        }
        acc.push(chunk.len(), &out);
    }
    Ok(acc.finish())
}

/// Decoded reconstructions of `x` with latents drawn in `mode`.
pub fn reconstruct<R: Rng + ?Sized>(model: &CvaeModel, x: &Tensor, mode: LatentMode, rng: &mut R) -> Result<Tensor> {
    let (n, d) = x.dims2();
    let mut data = Vec::with_capacity(n * d);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(256) {
        let batch = gather(x, chunk);
        let (mu, sigma) = model.encode(&batch)?;
        let noise = draw_noise(chunk.len(), model.latent_dim(), model.kappa(), mode, 1, rng).remove(0);
        let z: Vec<f64> = mu
            .data()
            .iter()
            .zip(sigma.data())
            .zip(noise.reconstruction.data())
            .map(|((m, s), e)| m + s * e)
            .collect();
        let z = Tensor::matrix(chunk.len(), model.latent_dim(), z)?;
        data.extend(model.decode(&z)?.into_data());
    }
    Tensor::matrix(n, d, data)
}

/// Adam training with global-norm clipping. `sink` receives each epoch's
/// record as soon as it is complete.
pub fn train(
    mut model: CvaeModel,
    train_x: &Tensor,
    val_x: Option<&Tensor>,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (n, d) = train_x.dims2();
    if n == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    if d != model.input_dim() {
        return Err(Error::Shape(format!("data has {d} columns, model expects {}", model.input_dim())));
    }
    let a = model.a_xz(cfg.a_xz_override)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = Acc::default();
        let (mut max_norm, mut max_clipped) = (0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather(train_x, chunk);
            let noise = draw_noise(chunk.len(), model.latent_dim(), model.kappa(), LatentMode::Escort, cfg.mc_samples, &mut rng);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let out = cfe_loss_on(&model, &mut tape, &vars, &batch, &noise, a)?;
            if !out.terms.total.is_finite() {
                return Err(non_finite(&tape, "loss"));
            }
            let grads = tape.backward(out.loss)?;
            let mut g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            let (before, after) = clip_global_norm(&mut g, cfg.grad_clip_norm);
            if !before.is_finite() {
                return Err(Error::NonFinite { node: out.loss.index(), op: "gradient" });
            }
            max_norm = max_norm.max(before);
            max_clipped = max_clipped.max(after);
            opt.step(model.params_mut().iter_mut().map(|(_, t)| t), &g);
            acc.push(chunk.len(), &out);
        }
        let val = match val_x {
            Some(v) if v.dims2().0 > 0 => {
                let mut vr = ChaCha8Rng::seed_from_u64(cfg.seed);
                vr.set_stream(1 + epoch as u64);
                Some(evaluate(&model, v, cfg, LatentMode::Escort, &mut vr)?)
            }
            _ => None,
        };
        let rec = EpochRecord { epoch, train: acc.finish(), val, max_grad_norm: max_norm, max_clipped_norm: max_clipped };
        sink(&rec)?;
        records.push(rec);
    }
    Ok(TrainOutcome { model, records })
}
