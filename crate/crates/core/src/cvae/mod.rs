//! Coupled variational autoencoder at desk scale.
//!
//! Encoder and decoder are MLPs with LeakyReLU hidden layers. The encoder
//! emits a mean and log-variance per latent coordinate; the decoder emits a
//! reconstruction mean through a sigmoid. Prior and posterior are coupled
//! Gaussians with the same `κ`, and latents are drawn from the escort of the
//! posterior (coupling `κ/(1+2κ)`, scale `σ/√(1+2κ)`).

mod adam;
mod checkpoint;
mod train;

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{checkpoint_load, checkpoint_save, checkpoint_to_bytes, checkpoint_from_bytes};
pub use train::{evaluate, reconstruct, train, EpochRecord, PhaseStats, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::algebra::Coupling;
use crate::autodiff::{Tape, Tensor, Var};
use crate::distributions::{cg_log_normalizer, t_mixing_scale};
use crate::error::{Error, Result};
use crate::info_measures::{norm_term_from_log, CfeTerms, NormTermReading};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub kappa: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Decoder standard deviation; `Σ_{x|z} = sigma_xz² I`.
    pub sigma_xz: f64,
    /// Fixed `A_{x|z}`. `None` derives it from the decoder normalizer and
    /// fails when that is outside the real domain.
    pub a_xz_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 64,
            latent_dim: 10,
            hidden: vec![128, 128],
            grad_clip_norm: 10.0,
            epochs: 5,
            kappa: 0.0,
            mc_samples: 1,
            seed: 0,
            sigma_xz: 1.0,
            a_xz_override: Some(0.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.mc_samples == 0 {
            return bad("batch_size, latent_dim and mc_samples must be positive");
        }
        if !(self.grad_clip_norm > 0.0) || !(self.sigma_xz > 0.0) {
            return bad("grad_clip_norm and sigma_xz must be positive");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be finite and non-negative");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Which distribution latents are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentMode {
    /// The posterior `q` itself.
    Posterior,
    /// Its escort `Q`, used for training.
    #[default]
    Escort,
}

impl LatentMode {
    pub fn label(self) -> &'static str {
        match self {
            LatentMode::Posterior => "q",
            LatentMode::Escort => "Q",
        }
    }
}

/// Encoder/decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    input_dim: usize,
    latent_dim: usize,
    hidden: Vec<usize>,
    kappa: f64,
    sigma_xz: f64,
    params: Vec<(String, Tensor)>,
}

fn kaiming_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    uniform(rng, fan_in, fan_out, bound)
}

fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, fan_in, fan_out, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, bound: f64) -> Tensor {
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sizes agree")
}

impl CvaeModel {
    /// Fresh weights: Kaiming-uniform for LeakyReLU layers, Xavier-uniform
    /// for the linear heads and the output layer, zero biases.
    pub fn new(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Vec::new();
        let mut push = |name: String, w: Tensor| {
            let out = w.dims2().1;
            params.push((format!("{name}.w"), w));
            params.push((format!("{name}.b"), Tensor::zeros(&[out])));
        };
        let mut fan = input_dim;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            push(format!("enc.{i}"), kaiming_uniform(&mut rng, fan, h));
            fan = h;
        }
        push("enc.mu".into(), xavier_uniform(&mut rng, fan, cfg.latent_dim));
        push("enc.logvar".into(), xavier_uniform(&mut rng, fan, cfg.latent_dim));
        let mut fan = cfg.latent_dim;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            push(format!("dec.{i}"), kaiming_uniform(&mut rng, fan, h));
            fan = h;
        }
        push("dec.out".into(), xavier_uniform(&mut rng, fan, input_dim));
        Ok(Self {
            input_dim,
            latent_dim: cfg.latent_dim,
            hidden: cfg.hidden.clone(),
            kappa: cfg.kappa,
            sigma_xz: cfg.sigma_xz,
            params,
        })
    }

    /// Rebuilds a model from named tensors, inferring the layer sizes.
    pub fn from_params(kappa: f64, sigma_xz: f64, params: Vec<(String, Tensor)>) -> Result<Self> {
        let find = |name: &str| {
            params.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let mut hidden = Vec::new();
        while let Ok(w) = find(&format!("enc.{}.w", hidden.len())) {
            hidden.push(w.dims2().1);
        }
        let input_dim = find("dec.out.w")?.dims2().1;
        let latent_dim = find("enc.mu.w")?.dims2().1;
        let cfg = TrainConfig { latent_dim, hidden: hidden.clone(), kappa, sigma_xz, ..TrainConfig::default() };
        let template = Self::new(input_dim, &cfg)?;
        if template.params.len() != params.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", template.params.len(), params.len())));
        }
        let mut ordered = Vec::with_capacity(params.len());
        for (name, t) in &template.params {
            let got = find(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
            ordered.push((name.clone(), got.clone()));
        }
        Ok(Self { params: ordered, ..template })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sigma_xz(&self) -> f64 {
        self.sigma_xz
    }

    /// Latent coupling: `d` = latent dimension, `α = 2`.
    pub fn coupling(&self) -> Coupling {
        Coupling::gaussian(self.kappa, self.latent_dim).expect("kappa validated at construction")
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    /// Records every parameter as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    fn mlp(&self, tape: &mut Tape, vars: &[Var], first: usize, layers: usize, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..layers {
            let a = tape.affine(h, vars[first + 2 * i], vars[first + 2 * i + 1])?;
            h = tape.leaky_relu(a, LEAKY_SLOPE);
        }
        Ok(h)
    }

    /// `(μ, log σ²)` on the tape, each `B × latent`.
    pub fn encode_on(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let nh = self.hidden.len();
        let h = self.mlp(tape, vars, 0, nh, x)?;
        let mu = tape.affine(h, vars[2 * nh], vars[2 * nh + 1])?;
        let logvar = tape.affine(h, vars[2 * nh + 2], vars[2 * nh + 3])?;
        Ok((mu, logvar))
    }

    /// Reconstruction mean on the tape, `B × input`.
    pub fn decode_on(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        let nh = self.hidden.len();
        let first = 2 * nh + 4;
        let h = self.mlp(tape, vars, first, nh, z)?;
        let o = tape.affine(h, vars[first + 2 * nh], vars[first + 2 * nh + 1])?;
        Ok(tape.sigmoid(o))
    }

    /// Posterior mean and scale `σ = exp(½ log σ²)` for a batch.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xi = tape.constant(x.clone());
        let (mu, logvar) = self.encode_on(&mut tape, &vars, xi)?;
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        Ok((tape.value(mu).clone(), tape.value(sigma).clone()))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let zi = tape.constant(z.clone());
        let out = self.decode_on(&mut tape, &vars, zi)?;
        Ok(tape.value(out).clone())
    }

    /// The `A_{x|z}` constant of the reconstruction term.
    pub fn a_xz(&self, override_value: Option<f64>) -> Result<f64> {
        if let Some(a) = override_value {
            return Ok(a);
        }
        let c = Coupling::gaussian(self.kappa, self.input_dim)?;
        let log_z = cg_log_normalizer(self.input_dim as f64 * (self.sigma_xz * self.sigma_xz).ln(), &c)?;
        Ok(norm_term_from_log(log_z, &c, NormTermReading::OuterPower)?.value)
    }
}

/// Exogenous noise for one Monte Carlo sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    /// Escort-distributed standardized noise, scale factor `1/√(1+2κ)`
    /// already applied; used by the divergence term.
    pub divergence: Tensor,
    /// Noise for the reconstruction latents; equal to `divergence` in escort
    /// mode.
    pub reconstruction: Tensor,
}

/// `rows × dim` standardized multivariate-t noise with `ν = 1/κ`, one
/// mixing draw per row, multiplied by `factor`.
fn t_noise<R: Rng + ?Sized>(rows: usize, dim: usize, kappa: f64, factor: f64, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let start = data.len();
        data.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mix = t_mixing_scale(kappa, rng) * factor;
        for v in &mut data[start..] {
            *v *= mix;
        }
    }
    Tensor::matrix(rows, dim, data).expect("sizes agree")
}

/// Draws `samples` noise sets for a batch of `rows` examples.
pub fn draw_noise<R: Rng + ?Sized>(
    rows: usize,
    dim: usize,
    kappa: f64,
    mode: LatentMode,
    samples: usize,
    rng: &mut R,
) -> Vec<NoiseDraw> {
    let kq = kappa / (1.0 + 2.0 * kappa);
    let factor = 1.0 / (1.0 + 2.0 * kappa).sqrt();
    (0..samples)
        .map(|_| {
            let divergence = t_noise(rows, dim, kq, factor, rng);
            let reconstruction = match mode {
                LatentMode::Escort => divergence.clone(),
                LatentMode::Posterior => t_noise(rows, dim, kappa, 1.0, rng),
            };
            NoiseDraw { divergence, reconstruction }
        })
        .collect()
}

/// Latent samples `z = μ + σ ⊙ ε` from the escort of each posterior.
pub fn sample_latent<R: Rng + ?Sized>(
    mu: &Tensor,
    sigma: &Tensor,
    kappa: f64,
    rng: &mut R,
    samples: usize,
) -> Result<Vec<Tensor>> {
    if mu.shape() != sigma.shape() {
        return Err(Error::Shape(format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape())));
    }
    if !(kappa >= 0.0) {
        return Err(Error::InvalidCoupling(format!("kappa must be non-negative, got {kappa}")));
    }
    let (rows, dim) = mu.dims2();
    Ok(draw_noise(rows, dim, kappa, LatentMode::Escort, samples, rng)
        .into_iter()
        .map(|n| {
            let data = mu.data().iter().zip(sigma.data()).zip(n.divergence.data()).map(|((m, s), e)| m + s * e).collect();
            Tensor::matrix(rows, dim, data).expect("sizes agree")
        })
        .collect())
}

/// Loss node and batch-mean terms.
pub struct LossOutput {
    pub loss: Var,
    pub terms: CfeTerms,
    /// Total with `A_{x|z} = 0` in the reconstruction term.
    pub total_a_free: f64,
    /// Reconstruction means for the first noise draw.
    pub x_hat: Var,
}

/// Coupled free energy of a batch on the tape, averaged over examples and
/// noise draws.
///
/// At `κ = 0` the divergence is the closed-form Gaussian KL; otherwise the
/// expectation-form integrand `½[T_p(z) − T_q(z)]` at escort latents, with
/// `T = ln_κ(p^{−2/(1+dκ)})`.
pub fn cfe_loss_on(
    model: &CvaeModel,
    tape: &mut Tape,
    vars: &[Var],
    x: &Tensor,
    noise: &[NoiseDraw],
    a_xz: f64,
) -> Result<LossOutput> {
    if x.dims2().1 != model.input_dim {
        return Err(Error::Shape(format!("batch has {} columns, model expects {}", x.dims2().1, model.input_dim)));
    }
    if noise.is_empty() {
        return Err(Error::Contract("at least one noise draw is required".into()));
    }
    let rows = x.dims2().0;
    let k = model.kappa;
    let c = model.coupling();
    let xi = tape.constant(x.clone());
    let (mu, logvar) = model.encode_on(tape, vars, xi)?;
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);

    let mut div_terms = Vec::new();
    let mut rec_terms = Vec::new();
    let mut delta_terms = Vec::new();
    let mut first_x_hat = None;
    let inv_var_xz = 1.0 / (model.sigma_xz * model.sigma_xz);

    if k == 0.0 {
        // ½ Σ (σ² + μ² − 1 − log σ²)
        let var = tape.exp(logvar);
        let mu2 = tape.square(mu);
        let s = tape.add(var, mu2)?;
        let s = tape.sub(s, logvar)?;
        let s = tape.add_scalar(s, -1.0);
        let rows_kl = tape.sum_rows(s);
        div_terms.push(tape.scale(rows_kl, 0.5));
    }
    let c0 = cg_log_normalizer(0.0, &c)?;
    let r = 2.0 * k / c.one_plus_d_kappa();
    for draw in noise {
        if k > 0.0 {
            let eps = tape.constant(draw.divergence.clone());
            let step = tape.mul(sigma, eps)?;
            let z = tape.add(mu, step)?;
            let centered = tape.sub(z, mu)?;
            let standardized = tape.div(centered, sigma)?;
            let sq = tape.square(standardized);
            let dq = tape.sum_rows(sq);
            let zsq = tape.square(z);
            let dp = tape.sum_rows(zsq);
            // T_p = expm1(r ln Z_p + log1p(κ δ_p))/κ with ln Z_p = c0
            let kp = tape.scale(dp, k);
            let lp = tape.log1p(kp);
            let ep = tape.add_scalar(lp, r * c0);
            let tp = tape.expm1(ep);
            // ln Z_q = c0 + ½ Σ log σ²
            let sum_lv = tape.sum_rows(logvar);
            let lzq = tape.scale(sum_lv, 0.5 * r);
            let lzq = tape.add_scalar(lzq, r * c0);
            let kq = tape.scale(dq, k);
            let lq = tape.log1p(kq);
            let eq = tape.add(lzq, lq)?;
            let tq = tape.expm1(eq);
            let diff = tape.sub(tp, tq)?;
            div_terms.push(tape.scale(diff, 0.5 / k));
        }
        let eps = tape.constant(draw.reconstruction.clone());
        let step = tape.mul(sigma, eps)?;
        let z = tape.add(mu, step)?;
        let x_hat = model.decode_on(tape, vars, z)?;
        first_x_hat.get_or_insert(x_hat);
        let resid = tape.sub(xi, x_hat)?;
        let sq = tape.square(resid);
        let rs = tape.sum_rows(sq);
        let delta = tape.scale(rs, inv_var_xz);
        delta_terms.push(tape.value(delta).data().to_vec());
        let scaled = tape.scale(delta, 0.5 * (1.0 + k * a_xz));
        rec_terms.push(tape.add_scalar(scaled, 0.5 * a_xz));
    }

    let mean_of = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        let m = tape.mean(acc);
        Ok(tape.scale(m, 1.0 / terms.len() as f64))
    };
    let div = mean_of(tape, &div_terms)?;
    let rec = mean_of(tape, &rec_terms)?;
    let loss = tape.add(div, rec)?;

    let per_row_div: Vec<f64> = (0..rows)
        .map(|i| div_terms.iter().map(|&v| tape.value(v).data()[i]).sum::<f64>() / div_terms.len() as f64)
        .collect();
    let mc_stderr = if k == 0.0 || rows < 2 {
        0.0
    } else {
        let m = per_row_div.iter().sum::<f64>() / rows as f64;
        let var = per_row_div.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (rows - 1) as f64;
        (var / rows as f64).sqrt()
    };
    let divergence = tape.value(div).item();
    let reconstruction = tape.value(rec).item();
    let mean_delta = delta_terms.iter().flatten().sum::<f64>() / (rows * delta_terms.len()) as f64;
    Ok(LossOutput {
        loss,
        terms: CfeTerms { divergence, reconstruction, total: divergence + reconstruction, mc_stderr },
        total_a_free: divergence + 0.5 * mean_delta,
        x_hat: first_x_hat.expect("at least one draw"),
    })
}

/// Batch-mean coupled free energy with freshly drawn escort noise.
pub fn cfe_loss<R: Rng + ?Sized>(model: &CvaeModel, x: &Tensor, rng: &mut R, cfg: &TrainConfig) -> Result<CfeTerms> {
    let noise = draw_noise(x.dims2().0, model.latent_dim, model.kappa, LatentMode::Escort, cfg.mc_samples, rng);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    Ok(cfe_loss_on(model, &mut tape, &vars, x, &noise, model.a_xz(cfg.a_xz_override)?)?.terms)
}
