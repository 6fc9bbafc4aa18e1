//! Fisher metric and affine connection of coupled exponential families.
//!
//! A family with natural parameter `θ`, sufficient statistic `T`, base
//! measure `h` and normalizer `Z_κ(θ)` has the coupled log-loss
//!
//! ```text
//! ℓ_κ(θ; x) = (1/α)[θ·T(x) R + (R − 1)/κ],   R = (Z/h)^r,  r = ακ/(1+dκ)
//! ```
//!
//! which equals `(1/α) ln_κ(p^{−α/(1+dκ)})` and tends to `θ·T/α + ln Z − ln h`
//! at `κ = 0`. The metric is `g_ij = E[∂²ℓ_κ/∂θᵢ∂θⱼ]` and the connection
//! `Γ_ijk = E[∂²ℓ_κ/∂θᵢ∂θⱼ · ∂ℓ_κ/∂θ_k]`.
//!
//! Expectations are taken under a [`Measure`]. The default is the
//! second-order escort of the model density, the same distribution the
//! coupled VAE draws its latents from; it coincides with the density at
//! `κ = 0` and keeps every quantity here finite for all `κ ≥ 0`. Under the
//! plain density the metric of the Pareto model already diverges at `κ = 1`.
//!
//! Every quantity is computed two ways:
//!
//! * the derivative route integrates the pointwise Hessian (and its product
//!   with the gradient) against the measure;
//! * the moment route uses that `ℓ_κ` is affine in `T` when `h` is constant,
//!   so the expectations collapse onto `E[T]` and `E[T Tᵀ]`.

mod models;

pub use models::{GaussianModel, GpdModel};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::Coupling;
use crate::distributions::{CoupledGaussian, GeneralizedPareto};
use crate::error::{Error, Result};
use crate::info_measures::RunningMean;
use crate::quadrature::{Domain, Quadrature};

/// Distribution under which geometric expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Measure {
    /// Second-order escort `P^{(1 + 2κ/(1+dκ))}` of the model density.
    #[default]
    Escort,
    /// The model density itself.
    Density,
}

/// A one-dimensional law to integrate or sample against.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Pareto(GeneralizedPareto),
    Gaussian(CoupledGaussian),
}

impl Law {
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            Law::Pareto(g) => g.log_density(x).unwrap_or(f64::NEG_INFINITY),
            Law::Gaussian(g) => g.log_density(&[x]).expect("one-dimensional law"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Pareto(g) => g.quantile(rng.random::<f64>()),
            Law::Gaussian(g) => {
                let mut x = [0.0];
                g.sample_into(rng, &mut x);
                x[0]
            }
        }
    }

    /// Integration domain for `density × (polynomial of degree `degree`)`.
    pub fn domain(&self, degree: i32) -> Domain {
        match self {
            Law::Pareto(g) => Domain::above(0.0)
                .centered(0.0, g.scale())
                .with_decay(g.tail_exponent() - degree as f64),
            Law::Gaussian(g) => Domain::real()
                .centered(g.mu()[0], g.sigma().to_dense()[(0, 0)].sqrt())
                .with_decay(g.tail_exponent() - degree as f64),
        }
    }
}

/// A coupled exponential family with `η(θ) = θ` over a scalar variable.
pub trait CoupledFamily {
    fn coupling(&self) -> Coupling;

    fn n_params(&self) -> usize;

    /// Largest polynomial degree of the entries of `T(x)`.
    fn stat_degree(&self) -> i32;

    fn suff_stat(&self, x: f64) -> DVector<f64>;

    /// `ln h(x)`.
    fn log_base(&self, _x: f64) -> f64 {
        0.0
    }

    /// Whether `h` is constant, which the moment route requires.
    fn base_is_constant(&self) -> bool {
        true
    }

    /// `ln Z_κ(θ)`.
    fn log_normalizer(&self, theta: &[f64]) -> Result<f64>;

    /// `∂ ln Z/∂θ`; central differences unless overridden.
    fn log_normalizer_grad(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(theta.len());
        let mut t = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-5 * (1.0 + theta[i].abs());
            t[i] = theta[i] + h;
            let up = self.log_normalizer(&t)?;
            t[i] = theta[i] - h;
            let down = self.log_normalizer(&t)?;
            t[i] = theta[i];
            g[i] = (up - down) / (2.0 * h);
        }
        Ok(g)
    }

    /// `∂² ln Z/∂θ∂θ`; central differences of the gradient unless overridden.
    fn log_normalizer_hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let n = theta.len();
        let mut hm = DMatrix::zeros(n, n);
        let mut t = theta.to_vec();
        for j in 0..n {
            let h = 1e-5 * (1.0 + theta[j].abs());
            t[j] = theta[j] + h;
            let up = self.log_normalizer_grad(&t)?;
            t[j] = theta[j] - h;
            let down = self.log_normalizer_grad(&t)?;
            t[j] = theta[j];
            hm.set_column(j, &((up - down) / (2.0 * h)));
        }
        Ok((&hm + hm.transpose()) / 2.0)
    }

    /// Law of `X` under the chosen measure at `θ`.
    fn law(&self, theta: &[f64], measure: Measure) -> Result<Law>;
}

/// `R = h^{−r} Z^{r}` from raw values.
pub fn r_of_zeta_raw(h: f64, z: f64, c: &Coupling) -> f64 {
    let r = c.r();
    if r == 0.0 {
        1.0
    } else {
        (r * (z.ln() - h.ln())).exp()
    }
}

/// `R(ζ)` for a model at `(θ, x)`.
pub fn r_of_zeta<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64], x: f64) -> Result<f64> {
    let c = model.coupling();
    Ok((c.r() * (model.log_normalizer(theta)? - model.log_base(x))).exp())
}

/// `R` and its parameter derivatives, with the `1/κ` multiples folded so
/// that everything stays finite at `κ = 0`.
struct RTerms {
    r: f64,
    fold: f64,
    log_ratio: f64,
    big_r: f64,
    d_r: DVector<f64>,
    d_r_over_k: DVector<f64>,
    d2_r: DMatrix<f64>,
    d2_r_over_k: DMatrix<f64>,
}

fn r_terms<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64], log_h: f64) -> Result<RTerms> {
    if theta.len() != model.n_params() {
        return Err(Error::Shape(format!("model has {} parameters, got {}", model.n_params(), theta.len())));
    }
    let c = model.coupling();
    let k = c.kappa();
    let r = c.r();
    let fold = c.alpha() as f64 / c.one_plus_d_kappa();
    let log_ratio = model.log_normalizer(theta)? - log_h;
    let li = model.log_normalizer_grad(theta)?;
    let lij = model.log_normalizer_hessian(theta)?;
    let big_r = (r * log_ratio).exp();
    let d_r_over_k = &li * (fold * big_r);
    let d2_r_over_k = (lij + &li * li.transpose() * r) * (fold * big_r);
    Ok(RTerms {
        r,
        fold,
        log_ratio,
        big_r,
        d_r: &d_r_over_k * k,
        d_r_over_k,
        d2_r: &d2_r_over_k * k,
        d2_r_over_k,
    })
}

fn theta_dot(t: &DVector<f64>, theta: &[f64]) -> f64 {
    t.iter().zip(theta).map(|(a, b)| a * b).sum()
}

/// `ℓ_κ(θ; x) = (1/α)[θ·T R + (R − 1)/κ]`.
pub fn coupled_loglik<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64], x: f64) -> Result<f64> {
    let c = model.coupling();
    let rt = r_terms(model, theta, model.log_base(x))?;
    let k = c.kappa();
    let tail = if rt.r == 0.0 { rt.fold * rt.log_ratio } else { (rt.r * rt.log_ratio).exp_m1() / k };
    Ok((theta_dot(&model.suff_stat(x), theta) * rt.big_r + tail) / c.alpha() as f64)
}

fn grad_from(rt: &RTerms, t: &DVector<f64>, theta: &[f64], alpha: f64) -> DVector<f64> {
    let tt = theta_dot(t, theta);
    (t * rt.big_r + &rt.d_r_over_k + &rt.d_r * tt) / alpha
}

fn hess_from(rt: &RTerms, t: &DVector<f64>, theta: &[f64], alpha: f64) -> DMatrix<f64> {
    let tt = theta_dot(t, theta);
    let outer = t * rt.d_r.transpose();
    (&outer + outer.transpose() + &rt.d2_r_over_k + &rt.d2_r * tt) / alpha
}

/// `∂ℓ_κ/∂θᵢ = (1/α)[Tᵢ R + (1/κ + T·θ) ∂R/∂θᵢ]`.
pub fn loglik_grad<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64], x: f64) -> Result<DVector<f64>> {
    let rt = r_terms(model, theta, model.log_base(x))?;
    Ok(grad_from(&rt, &model.suff_stat(x), theta, model.coupling().alpha() as f64))
}

/// `∂²ℓ_κ/∂θᵢ∂θⱼ = (1/α)[Tᵢ ∂ⱼR + Tⱼ ∂ᵢR + (1/κ + T·θ) ∂ᵢ∂ⱼR]`.
pub fn loglik_hessian<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64], x: f64) -> Result<DMatrix<f64>> {
    let rt = r_terms(model, theta, model.log_base(x))?;
    Ok(hess_from(&rt, &model.suff_stat(x), theta, model.coupling().alpha() as f64))
}

/// How expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    /// Adaptive quadrature against the law's density.
    Quadrature,
    /// Plain Monte Carlo with `samples` draws from a seeded stream.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Dense rank-3 array indexed `[i][j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + k] = v;
    }

    /// Nested `[i][j][k]` vectors.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| (0..self.n).map(|k| self.get(i, j, k)).collect()).collect())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Metric and connection with Monte Carlo standard errors (zero for
/// quadrature, where the entries carry the quadrature error instead).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryTensors {
    pub g: DMatrix<f64>,
    pub gamma: Tensor3,
    pub mc_stderr_g: DMatrix<f64>,
    pub mc_stderr_gamma: Tensor3,
}

/// Index list of the upper-triangular `(i, j)` pairs.
fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Expectations of `f(x)` (vector-valued, length `len`) under `law`.
fn expect<F: Fn(f64) -> Vec<f64>>(
    law: &Law,
    degree: i32,
    len: usize,
    method: Expectation,
    f: F,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match method {
        Expectation::Quadrature => {
            let quad = Quadrature::default();
            let dom = law.domain(degree);
            let mut mean = Vec::with_capacity(len);
            let mut err = Vec::with_capacity(len);
            for c in 0..len {
                let e = quad.integrate(
                    |x| {
                        let w = law.log_density(x).exp();
                        if w == 0.0 { 0.0 } else { w * f(x)[c] }
                    },
                    dom,
                )?;
                mean.push(e.value);
                err.push(e.abs_err);
            }
            Ok((mean, err))
        }
        Expectation::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::Domain("Monte Carlo expectation needs at least 2 samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = vec![RunningMean::default(); len];
            for _ in 0..samples {
                let x = law.sample(&mut rng);
                for (a, v) in acc.iter_mut().zip(f(x)) {
                    a.push(v);
                }
            }
            Ok(acc.iter().map(|a| (a.mean(), a.estimate().stderr)).unzip())
        }
    }
}

fn sym_matrix(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for (idx, (i, j)) in pairs(n).into_iter().enumerate() {
        g[(i, j)] = vals[idx];
        g[(j, i)] = vals[idx];
    }
    g
}

fn sym_tensor(n: usize, vals: &[f64]) -> Tensor3 {
    let mut gamma = Tensor3::zeros(n);
    for (idx, (i, j)) in pairs(n).into_iter().enumerate() {
        for k in 0..n {
            let v = vals[idx * n + k];
            gamma.set(i, j, k, v);
            gamma.set(j, i, k, v);
        }
    }
    gamma
}

/// Pointwise integrand of the derivative route: Hessian entries, or
/// Hessian times gradient entries when `connection` is set.
fn derivative_values<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
    connection: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.n_params();
    let alpha = model.coupling().alpha() as f64;
    let law = model.law(theta, measure)?;
    let ps = pairs(n);
    // r_terms also validates θ, so the per-point fallback below cannot fail
    let constant = r_terms(model, theta, model.log_base(0.0))?;
    let constant = model.base_is_constant().then_some(constant);
    let eval = |x: f64| -> Vec<f64> {
        let owned;
        let rt = match &constant {
            Some(rt) => rt,
            None => {
                owned = r_terms(model, theta, model.log_base(x)).expect("theta already validated");
                &owned
            }
        };
        let t = model.suff_stat(x);
        let h = hess_from(rt, &t, theta, alpha);
        if !connection {
            return ps.iter().map(|&(i, j)| h[(i, j)]).collect();
        }
        let gr = grad_from(rt, &t, theta, alpha);
        let mut out = Vec::with_capacity(ps.len() * n);
        for &(i, j) in &ps {
            out.extend(gr.iter().map(|gk| h[(i, j)] * gk));
        }
        out
    };
    let deg = model.stat_degree() * if connection { 2 } else { 1 };
    let len = ps.len() * if connection { n } else { 1 };
    expect(&law, deg, len, method, eval)
}

/// Raw moments `E[T]` and the upper triangle of `E[T Tᵀ]` (when `second`).
fn moments<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
    second: bool,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    if !model.base_is_constant() {
        return Err(Error::Domain("moment route needs a constant base measure".into()));
    }
    let n = model.n_params();
    let law = model.law(theta, measure)?;
    let ps = pairs(n);
    let eval = |x: f64| -> Vec<f64> {
        let t = model.suff_stat(x);
        let mut out: Vec<f64> = t.iter().copied().collect();
        if second {
            out.extend(ps.iter().map(|&(i, j)| t[i] * t[j]));
        }
        out
    };
    let deg = model.stat_degree() * if second { 2 } else { 1 };
    let len = n + if second { ps.len() } else { 0 };
    let (mom, err) = expect(&law, deg, len, method, eval)?;
    let (m2, e2) = if second {
        (sym_matrix(n, &mom[n..]), sym_matrix(n, &err[n..]))
    } else {
        (DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    };
    Ok((DVector::from_column_slice(&mom[..n]), m2, err[..n].to_vec(), e2))
}

/// Affine decomposition `∂²ℓ = a + b·T`, `∂ℓ = c + e·T` for constant `h`.
struct Affine {
    n: usize,
    alpha: f64,
    rt: RTerms,
    theta: Vec<f64>,
}

impl Affine {
    fn a(&self, i: usize, j: usize) -> f64 {
        self.rt.d2_r_over_k[(i, j)] / self.alpha
    }

    fn b(&self, i: usize, j: usize, l: usize) -> f64 {
        let mut v = self.theta[l] * self.rt.d2_r[(i, j)];
        if i == l {
            v += self.rt.d_r[j];
        }
        if j == l {
            v += self.rt.d_r[i];
        }
        v / self.alpha
    }

    fn c(&self, k: usize) -> f64 {
        self.rt.d_r_over_k[k] / self.alpha
    }

    fn e(&self, k: usize, l: usize) -> f64 {
        (if k == l { self.rt.big_r } else { 0.0 } + self.theta[l] * self.rt.d_r[k]) / self.alpha
    }
}

fn affine<M: CoupledFamily + ?Sized>(model: &M, theta: &[f64]) -> Result<Affine> {
    Ok(Affine {
        n: model.n_params(),
        alpha: model.coupling().alpha() as f64,
        rt: r_terms(model, theta, model.log_base(0.0))?,
        theta: theta.to_vec(),
    })
}

/// Metric by the derivative route, `E[∂²ℓ_κ]`, with its error estimate.
pub fn fisher_metric<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.n_params();
    let (v, e) = derivative_values(model, theta, measure, method, false)?;
    Ok((sym_matrix(n, &v), sym_matrix(n, &e)))
}

/// Connection by the derivative route, `E[∂²ℓ_κ · ∂ℓ_κ]`, with its error estimate.
pub fn affine_connection<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<(Tensor3, Tensor3)> {
    let n = model.n_params();
    let (v, e) = derivative_values(model, theta, measure, method, true)?;
    Ok((sym_tensor(n, &v), sym_tensor(n, &e)))
}

/// Metric by the moment route.
pub fn fisher_metric_moments<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m1, _, e1, _) = moments(model, theta, measure, method, false)?;
    let af = affine(model, theta)?;
    let n = af.n;
    let mut g = DMatrix::zeros(n, n);
    let mut err = DMatrix::zeros(n, n);
    for (i, j) in pairs(n) {
        let mut v = af.a(i, j);
        let mut s = 0.0;
        for l in 0..n {
            v += af.b(i, j, l) * m1[l];
            s += af.b(i, j, l).abs() * e1[l];
        }
        g[(i, j)] = v;
        g[(j, i)] = v;
        err[(i, j)] = s;
        err[(j, i)] = s;
    }
    Ok((g, err))
}

/// Connection by the moment route:
/// `a c + a (e·m) + c (b·m) + bᵀ E[T Tᵀ] e` with `m = E[T]`.
pub fn affine_connection_moments<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<(Tensor3, Tensor3)> {
    let (m1, m2, e1, e2) = moments(model, theta, measure, method, true)?;
    let af = affine(model, theta)?;
    let n = af.n;
    let mut gamma = Tensor3::zeros(n);
    let mut err = Tensor3::zeros(n);
    for (i, j) in pairs(n) {
        for k in 0..n {
            let (a, c) = (af.a(i, j), af.c(k));
            let mut v = a * c;
            let mut s = 0.0;
            for l in 0..n {
                let lin = a * af.e(k, l) + c * af.b(i, j, l);
                v += lin * m1[l];
                s += lin.abs() * e1[l];
                for l2 in 0..n {
                    let quad = af.b(i, j, l) * af.e(k, l2);
                    v += quad * m2[(l, l2)];
                    s += quad.abs() * e2[(l, l2)];
                }
            }
            gamma.set(i, j, k, v);
            gamma.set(j, i, k, v);
            err.set(i, j, k, s);
            err.set(j, i, k, s);
        }
    }
    Ok((gamma, err))
}

/// Both tensors by the derivative route.
pub fn geometry_derivative<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<GeometryTensors> {
    let (g, mc_stderr_g) = fisher_metric(model, theta, measure, method)?;
    let (gamma, mc_stderr_gamma) = affine_connection(model, theta, measure, method)?;
    Ok(GeometryTensors { g, gamma, mc_stderr_g, mc_stderr_gamma })
}

/// Both tensors by the moment route.
pub fn geometry_moments<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<GeometryTensors> {
    let (g, mc_stderr_g) = fisher_metric_moments(model, theta, measure, method)?;
    let (gamma, mc_stderr_gamma) = affine_connection_moments(model, theta, measure, method)?;
    Ok(GeometryTensors { g, gamma, mc_stderr_g, mc_stderr_gamma })
}

/// `E[∂ℓ_κ/∂θ]`: the unparenthesized `(1/α)E[B₁ + B₂]` expression, which is a
/// first derivative rather than a metric. Kept for reporting.
pub fn score_mean<M: CoupledFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    measure: Measure,
    method: Expectation,
) -> Result<DVector<f64>> {
    let law = model.law(theta, measure)?;
    let rt = r_terms(model, theta, model.log_base(0.0))?;
    let alpha = model.coupling().alpha() as f64;
    let (m, _) = expect(&law, model.stat_degree(), model.n_params(), method, |x| {
        let g = if model.base_is_constant() {
            grad_from(&rt, &model.suff_stat(x), theta, alpha)
        } else {
            loglik_grad(model, theta, x).expect("theta already validated")
        };
        g.iter().copied().collect()
    })?;
    Ok(DVector::from_vec(m))
}

/// Experimental natural-gradient direction `g⁻¹ ∇`. Not used by training.
pub fn natural_gradient(g: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(g.clone())
        .ok_or_else(|| Error::Domain("metric is not positive definite".into()))?;
    Ok(chol.solve(grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::coupled_log_exp;

    #[test]
    fn r_of_zeta_examples() {
        assert_eq!(r_of_zeta_raw(3.0, 7.0, &Coupling::new(0.0, 2, 1).unwrap()), 1.0);
        let v = r_of_zeta_raw(1.0, 2.0, &Coupling::new(1.0, 1, 1).unwrap());
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        let v = r_of_zeta_raw(4.0, 2.0, &Coupling::new(1.0, 2, 1).unwrap());
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loglik_example_and_log_loss_identity() {
        let m = GpdModel::new(1.0).unwrap();
        assert!((coupled_loglik(&m, &[1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        // ℓ = (1/α) ln_κ(p^{−α/(1+dκ)}) with p from the distribution itself
        for &(k, t, x) in &[(0.3, 1.7, 0.4), (2.0, 0.5, 3.0), (1.0, 2.0, 0.0)] {
            let m = GpdModel::new(k).unwrap();
            let Law::Pareto(p) = m.law(&[t], Measure::Density).unwrap() else { unreachable!() };
            let via_density = coupled_log_exp(-p.log_density(x).unwrap() / (1.0 + k), k);
            assert!((coupled_loglik(&m, &[t], x).unwrap() - via_density).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_model_normalizer_derivatives() {
        for &k in &[0.0, 0.2, 1.0] {
            let m = GaussianModel::new(k).unwrap();
            let theta = [0.3, 1.2];
            let analytic_g = m.log_normalizer_grad(&theta).unwrap();
            let analytic_h = m.log_normalizer_hessian(&theta).unwrap();
            struct Fd(GaussianModel);
            impl CoupledFamily for Fd {
                fn coupling(&self) -> Coupling { self.0.coupling() }
                fn n_params(&self) -> usize { 2 }
                fn stat_degree(&self) -> i32 { 2 }
                fn suff_stat(&self, x: f64) -> DVector<f64> { self.0.suff_stat(x) }
                fn log_normalizer(&self, t: &[f64]) -> Result<f64> { self.0.log_normalizer(t) }
                fn law(&self, t: &[f64], m: Measure) -> Result<Law> { self.0.law(t, m) }
            }
            let fd = Fd(m);
            let g = fd.log_normalizer_grad(&theta).unwrap();
            let h = fd.log_normalizer_hessian(&theta).unwrap();
            assert!((g - analytic_g).amax() < 1e-8, "kappa={k}");
            assert!((h - analytic_h).amax() < 1e-5, "kappa={k}");
        }
    }

    #[test]
    fn gaussian_model_normalizer_matches_quadrature() {
        for &k in &[0.0, 0.25, 1.5] {
            let m = GaussianModel::new(k).unwrap();
            let theta = [0.4, 0.9];
            let kernel = |x: f64| {
                let u = theta[0] * x + theta[1] * x * x;
                crate::algebra::coupled_exp_power(u, k, -(1.0 + k) / 2.0)
            };
            let dom = Domain::real().with_decay(if k == 0.0 { f64::INFINITY } else { (1.0 + k) / k });
            let z = crate::quadrature::integrate(kernel, dom).unwrap().value;
            assert!((m.log_normalizer(&theta).unwrap() - z.ln()).abs() < 1e-10, "kappa={k}");
        }
    }

    #[test]
    fn classical_limit() {
        let m = GpdModel::new(0.0).unwrap();
        let g = loglik_grad(&m, &[2.0], 3.0).unwrap();
        assert!((g[0] - (3.0 - 0.5)).abs() < 1e-15);
        let (metric, _) = fisher_metric(&m, &[2.0], Measure::Escort, Expectation::Quadrature).unwrap();
        assert!((metric[(0, 0)] - 0.25).abs() < 1e-10);
        let (gamma, _) = affine_connection(&m, &[1.0], Measure::Escort, Expectation::Quadrature).unwrap();
        assert!(gamma.get(0, 0, 0).abs() < 1e-10);
    }

    #[test]
    fn natural_gradient_solves_metric_system() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let v = DVector::from_vec(vec![1.0, -1.0]);
        let n = natural_gradient(&g, &v).unwrap();
        assert!((&g * n - v).amax() < 1e-14);
    }
}

#[cfg(test)]
mod route_tests {
    use super::*;

    #[test]
    fn pareto_metric_and_connection_reference_values() {
        // independent reference values from a separate numerical integration
        let cases = [(0.1, 0.916_604, -0.150_26), (0.5, 0.740_741, -0.296_30), (1.0, 0.625, -0.25)];
        for &(k, g_ref, gamma_ref) in &cases {
            let m = GpdModel::new(k).unwrap();
            let d = geometry_derivative(&m, &[1.0], Measure::Escort, Expectation::Quadrature).unwrap();
            let l = geometry_moments(&m, &[1.0], Measure::Escort, Expectation::Quadrature).unwrap();
            assert!((d.g[(0, 0)] - g_ref).abs() < 1e-4, "kappa={k}");
            assert!((d.gamma.get(0, 0, 0) - gamma_ref).abs() < 1e-4, "kappa={k}");
            assert!((d.g - l.g).amax() < 1e-8);
            assert!(d.gamma.max_abs_diff(&l.gamma) < 1e-8);
        }
    }

    #[test]
    fn gaussian_model_routes_agree() {
        for &k in &[0.0, 0.1, 0.3] {
            let m = GaussianModel::new(k).unwrap();
            let th = [0.4, 0.8];
            let d = geometry_derivative(&m, &th, Measure::Escort, Expectation::Quadrature).unwrap();
            let l = geometry_moments(&m, &th, Measure::Escort, Expectation::Quadrature).unwrap();
            assert!((&d.g - &l.g).amax() < 1e-7, "kappa={k}");
            assert!(d.gamma.max_abs_diff(&l.gamma) < 1e-6, "kappa={k}");
            assert!(d.g.symmetric_eigenvalues().min() > 0.0);
        }
    }
}

#[cfg(test)]
mod oracle_tests {
    use super::*;
    use crate::algebra::coupled_exp_power;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-3)
    }

    #[test]
    fn finite_differences_match_analytic_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.random_range(0.0..2.0);
            let m = GpdModel::new(k).unwrap();
            let t: f64 = rng.random_range(0.3..3.0);
            let x: f64 = rng.random_range(0.0..5.0);
            let h = 1e-5 * (1.0 + t);
            let l = |th: f64| coupled_loglik(&m, &[th], x).unwrap();
            let fd_g = (l(t + h) - l(t - h)) / (2.0 * h);
            let g = |th: f64| loglik_grad(&m, &[th], x).unwrap()[0];
            let fd_h = (g(t + h) - g(t - h)) / (2.0 * h);
            assert!(rel(g(t), fd_g) < 1e-6, "grad kappa={k} theta={t} x={x}");
            assert!(rel(loglik_hessian(&m, &[t], x).unwrap()[(0, 0)], fd_h) < 1e-6, "hess kappa={k}");
        }
        let gm = GaussianModel::new(0.4).unwrap();
        for _ in 0..50 {
            let th = [rng.random_range(-0.5..0.5), rng.random_range(0.6..2.0)];
            let x = rng.random_range(-2.0..2.0);
            let grad = loglik_grad(&gm, &th, x).unwrap();
            let hess = loglik_hessian(&gm, &th, x).unwrap();
            assert_eq!(hess[(0, 1)], hess[(1, 0)]);
            for i in 0..2 {
                let h = 1e-5 * (1.0 + th[i].abs());
                let mut up = th;
                let mut dn = th;
                up[i] += h;
                dn[i] -= h;
                let fd = (coupled_loglik(&gm, &up, x).unwrap() - coupled_loglik(&gm, &dn, x).unwrap()) / (2.0 * h);
                assert!(rel(grad[i], fd) < 1e-6);
                let fdh = (loglik_grad(&gm, &up, x).unwrap() - loglik_grad(&gm, &dn, x).unwrap()) / (2.0 * h);
                for j in 0..2 {
                    assert!(rel(hess[(j, i)], fdh[j]) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn density_matches_deformed_representation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(0.0..2.0);
            let t = rng.random_range(0.2..3.0);
            let x: f64 = rng.random_range(0.0..10.0);
            let m = GpdModel::new(k).unwrap();
            let p = m.law(&[t], Measure::Density).unwrap().log_density(x).exp();
            let rep = coupled_exp_power(t * x, k, -(1.0 + k)) / m.log_normalizer(&[t]).unwrap().exp();
            assert!(rel(p, rep) < 1e-10);

            let gm = GaussianModel::new(k).unwrap();
            let th = [rng.random_range(-0.5..0.5), rng.random_range(0.6..2.0)];
            if gm.log_normalizer(&th).is_err() {
                continue;
            }
            let y = rng.random_range(-4.0..4.0);
            let p = gm.law(&th, Measure::Density).unwrap().log_density(y).exp();
            let u = th[0] * y + th[1] * y * y;
            let rep = coupled_exp_power(u, k, -(1.0 + k) / 2.0) / gm.log_normalizer(&th).unwrap().exp();
            assert!(rel(p, rep) < 1e-10);
        }
    }

    #[test]
    fn densities_normalize() {
        for &k in &[1e-8, 0.1, 0.5, 1.0] {
            for &t in &[0.5, 1.0, 2.0] {
                let law = GpdModel::new(k).unwrap().law(&[t], Measure::Density).unwrap();
                let mass = crate::quadrature::integrate(|x| law.log_density(x).exp(), law.domain(0)).unwrap();
                assert!((mass.value - 1.0).abs() < 1e-6);
            }
            let law = GaussianModel::new(k).unwrap().law(&[0.3, 1.1], Measure::Density).unwrap();
            let mass = crate::quadrature::integrate(|x| law.log_density(x).exp(), law.domain(0)).unwrap();
            assert!((mass.value - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn small_coupling_is_continuous() {
        let m0 = GpdModel::new(0.0).unwrap();
        let m = GpdModel::new(1e-8).unwrap();
        for &(t, x) in &[(1.0, 0.5), (2.0, 3.0), (0.4, 7.0)] {
            assert!((coupled_loglik(&m, &[t], x).unwrap() - coupled_loglik(&m0, &[t], x).unwrap()).abs() < 1e-5);
        }
        let (g, _) = fisher_metric(&m, &[2.0], Measure::Escort, Expectation::Quadrature).unwrap();
        assert!((g[(0, 0)] - 0.25).abs() < 0.0025);
    }

    #[test]
    fn classical_metric_scales_inverse_square() {
        let m = GpdModel::new(0.0).unwrap();
        let g = |t: f64| fisher_metric(&m, &[t], Measure::Density, Expectation::Quadrature).unwrap().0[(0, 0)];
        for &c in &[0.5, 3.0] {
            assert!((g(c * 1.3) - g(1.3) / (c * c)).abs() < 1e-10);
        }
    }

    #[test]
    fn dual_routes_agree_across_couplings() {
        for &k in &[1e-8, 0.1, 0.5, 1.0] {
            let m = GpdModel::new(k).unwrap();
            for &t in &[0.5, 1.0, 2.5] {
                let d = geometry_derivative(&m, &[t], Measure::Escort, Expectation::Quadrature).unwrap();
                let l = geometry_moments(&m, &[t], Measure::Escort, Expectation::Quadrature).unwrap();
                assert!((&d.g - &l.g).amax() < 1e-6);
                assert!(d.gamma.max_abs_diff(&l.gamma) < 1e-6);
                assert!(d.g[(0, 0)] > 0.0);
            }
            let gm = GaussianModel::new(k).unwrap();
            let th = [0.2, 1.5];
            let (gd, _) = fisher_metric(&gm, &th, Measure::Escort, Expectation::Quadrature).unwrap();
            let (gl, _) = fisher_metric_moments(&gm, &th, Measure::Escort, Expectation::Quadrature).unwrap();
            assert!((&gd - &gl).amax() < 1e-6, "kappa={k}");
            if k < 0.5 {
                let (cd, _) = affine_connection(&gm, &th, Measure::Escort, Expectation::Quadrature).unwrap();
                let (cl, _) = affine_connection_moments(&gm, &th, Measure::Escort, Expectation::Quadrature).unwrap();
                assert!(cd.max_abs_diff(&cl) < 1e-6, "kappa={k}");
                for i in 0..2 {
                    for j in 0..2 {
                        for kk in 0..2 {
                            assert_eq!(cd.get(i, j, kk), cd.get(j, i, kk));
                        }
                    }
                }
            } else {
                let r = affine_connection(&gm, &th, Measure::Escort, Expectation::Quadrature);
                assert!(matches!(r, Err(Error::Divergent(_))));
            }
        }
    }

    #[test]
    fn density_measure_reports_missing_moments() {
        let m = GpdModel::new(1.0).unwrap();
        assert!(matches!(
            fisher_metric(&m, &[1.0], Measure::Density, Expectation::Quadrature),
            Err(Error::Divergent(_))
        ));
        let (g, _) = fisher_metric(&GpdModel::new(0.3).unwrap(), &[1.0], Measure::Density, Expectation::Quadrature).unwrap();
        assert!(g[(0, 0)] > 0.0);
    }
}
