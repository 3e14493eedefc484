//! Ridge-Gradients regression on radial basis features.
//!
//! `β_rg` minimises `‖z − Φβ‖² + λ₁‖β‖² + λ₂‖β − β_grad‖²`, where `β_grad`
//! is a ridge fit of the derivative features `Φ'` to observed gradients. The
//! minimiser solves `(ΦᵀΦ + (λ₁+λ₂)I)·β = λ₂·β_grad + Φᵀz`.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{linspace, mean, solve_spd, std_dev, Matrix, Rng};
use crate::trainer::rmse;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfBasis {
    centres: Vec<f64>,
    width: f64,
    /// Keep a ones column in the derivative design.
    deriv_intercept: bool,
}

impl RbfBasis {
    pub fn new(centres: Vec<f64>, width: f64, deriv_intercept: bool) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::BadWidth(width));
        }
        if centres.is_empty() {
            return Err(Error::Empty("RBF centres"));
        }
        if centres.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::BadParams("RBF centres must be strictly increasing".into()));
        }
        Ok(RbfBasis {
            centres,
            width,
            deriv_intercept,
        })
    }

    /// `count` evenly spaced centres on `[lo, hi]`, endpoints included.
    pub fn even(lo: f64, hi: f64, count: usize, width: f64) -> Result<Self> {
        RbfBasis::new(linspace(lo, hi, count), width, true)
    }

    pub fn with_deriv_intercept(mut self, on: bool) -> Self {
        self.deriv_intercept = on;
        self
    }

    pub fn centres(&self) -> &[f64] {
        &self.centres
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn deriv_intercept(&self) -> bool {
        self.deriv_intercept
    }

    /// Design width: one column per centre plus the constant.
    pub fn num_features(&self) -> usize {
        self.centres.len() + 1
    }
}

/// `N × (C+1)`: a ones column, then `exp{−(x−cᵢ)²/r²}`.
pub fn rbf_design(x: &[f64], basis: &RbfBasis) -> Result<Matrix> {
    if !(basis.width > 0.0) {
        return Err(Error::BadWidth(basis.width));
    }
    let r2 = basis.width * basis.width;
    Ok(Matrix::from_fn(x.len(), basis.num_features(), |i, j| {
        if j == 0 {
            1.0
        } else {
            let d = x[i] - basis.centres[j - 1];
            (-d * d / r2).exp()
        }
    }))
}

/// Derivative features `(−2(x−cᵢ)/r²)·exp{−(x−cᵢ)²/r²}`, with column 0 equal
/// to one (or zero when the basis drops the derivative intercept).
pub fn rbf_deriv_design(x: &[f64], basis: &RbfBasis) -> Result<Matrix> {
    if !(basis.width > 0.0) {
        return Err(Error::BadWidth(basis.width));
    }
    let r2 = basis.width * basis.width;
    let intercept = if basis.deriv_intercept { 1.0 } else { 0.0 };
    Ok(Matrix::from_fn(x.len(), basis.num_features(), |i, j| {
        if j == 0 {
            intercept
        } else {
            let d = x[i] - basis.centres[j - 1];
            -2.0 * d / r2 * (-d * d / r2).exp()
        }
    }))
}

fn check_lambda(name: &str, lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::BadParams(format!("{name} must be finite and ≥ 0, got {lambda}")));
    }
    Ok(())
}

/// `(ΦᵀΦ + λI)⁻¹Φᵀz`.
pub fn fit_ridge(phi: &Matrix, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda("λ", lambda)?;
    if z.len() != phi.rows() {
        return Err(Error::shape("fit_ridge targets", phi.rows(), z.len()));
    }
    let mut a = phi.gram();
    a.add_diagonal(lambda);
    solve_spd(&a, &phi.tmatvec(z)?)
}

/// Ridge fit of derivative features to observed gradients.
pub fn fit_beta_grad(phi_deriv: &Matrix, g: &[f64], lambda: f64) -> Result<Vec<f64>> {
    fit_ridge(phi_deriv, g, lambda)
}

/// `(ΦᵀΦ + (λ₁+λ₂)I)⁻¹(λ₂·β_grad + Φᵀz)`.
pub fn fit_ridge_gradients(
    phi: &Matrix,
    z: &[f64],
    beta_grad: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<Vec<f64>> {
    check_lambda("λ₁", lambda1)?;
    check_lambda("λ₂", lambda2)?;
    if z.len() != phi.rows() {
        return Err(Error::shape("fit_ridge_gradients targets", phi.rows(), z.len()));
    }
    if beta_grad.len() != phi.cols() {
        return Err(Error::shape("fit_ridge_gradients β_grad", phi.cols(), beta_grad.len()));
    }
    let mut a = phi.gram();
    a.add_diagonal(lambda1 + lambda2);
    let mut rhs = phi.tmatvec(z)?;
    if lambda2 != 0.0 {
        for (r, b) in rhs.iter_mut().zip(beta_grad) {
            *r += lambda2 * b;
        }
    }
    solve_spd(&a, &rhs)
}

/// `‖z − Φβ‖² + λ₁‖β‖² + λ₂‖β − β_grad‖²`.
pub fn rg_objective(
    phi: &Matrix,
    z: &[f64],
    beta: &[f64],
    beta_grad: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let fit = phi.matvec(beta)?;
    let sse: f64 = fit.iter().zip(z).map(|(f, t)| (t - f) * (t - f)).sum();
    let shrink: f64 = beta.iter().map(|b| b * b).sum();
    let pull: f64 = beta.iter().zip(beta_grad).map(|(b, g)| (b - g) * (b - g)).sum();
    Ok(sse + lambda1 * shrink + lambda2 * pull)
}

/// All three coefficient vectors for one training draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgModel {
    pub basis: RbfBasis,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_grad: f64,
    pub beta_ridge: Vec<f64>,
    pub beta_grad: Vec<f64>,
    pub beta_rg: Vec<f64>,
}

impl RgModel {
    pub fn fit(
        basis: &RbfBasis,
        x: &[f64],
        z: &[f64],
        g: &[f64],
        lambda1: f64,
        lambda2: f64,
        lambda_grad: f64,
    ) -> Result<Self> {
        if g.len() != x.len() {
            return Err(Error::shape("RgModel gradients", x.len(), g.len()));
        }
        let phi = rbf_design(x, basis)?;
        let phi_d = rbf_deriv_design(x, basis)?;
        let beta_ridge = fit_ridge(&phi, z, lambda1)?;
        let beta_grad = fit_beta_grad(&phi_d, g, lambda_grad)?;
        let beta_rg = fit_ridge_gradients(&phi, z, &beta_grad, lambda1, lambda2)?;
        Ok(RgModel {
            basis: basis.clone(),
            lambda1,
            lambda2,
            lambda_grad,
            beta_ridge,
            beta_grad,
            beta_rg,
        })
    }

    pub fn predict(&self, x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
        rbf_design(x, &self.basis)?.matvec(beta)
    }

    /// Gradient predictions `Φ'(x)·β`.
    pub fn predict_grad(&self, x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
        rbf_deriv_design(x, &self.basis)?.matvec(beta)
    }
}

/// Draws `n` noisy sine observations on `interval`: `x ~ U`, `z = sin x + ε`,
/// `g = cos x` (noise enters the targets only).
pub fn sine_draw(n: usize, interval: (f64, f64), noise_sd: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|_| rng.uniform(interval.0, interval.1)).collect();
    let z = x.iter().map(|v| v.sin() + noise_sd * rng.standard_normal()).collect();
    let g = x.iter().map(|v| v.cos()).collect();
    (x, z, g)
}

/// Single-draw comparison with fixed regularisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub train_size: usize,
    pub centres: usize,
    pub width: f64,
    pub interval: (f64, f64),
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_grad: f64,
    /// Standard deviation of the noise added to training targets.
    pub noise_sd: f64,
    pub test_size: usize,
    /// Independent training draws; headline numbers are means over draws.
    pub draws: usize,
    pub deriv_intercept: bool,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Fig4Config {
            train_size: 12,
            centres: 7,
            width: 1.0,
            interval: (0.0, TAU),
            lambda1: 0.1,
            lambda2: 0.1,
            lambda_grad: 0.1,
            noise_sd: 0.5,
            test_size: 200,
            draws: 1000,
            deriv_intercept: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Result {
    pub rmse_ridge: f64,
    pub rmse_rg: f64,
    /// Population standard deviation of the noiseless test outputs.
    pub output_std: f64,
    pub grad_rmse_ridge: f64,
    pub grad_rmse_grad: f64,
    /// `x, z_true, z_ridge, z_rg` on the test grid for the first draw.
    pub predictions: Vec<[f64; 4]>,
}

impl Fig4Result {
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("x,z_true,z_ridge,z_rg\n");
        for [x, t, r, g] in &self.predictions {
            writeln!(out, "{x},{t},{r},{g}").expect("writing to String");
        }
        out
    }
}

pub fn fig4_experiment(cfg: &Fig4Config, seed: u64) -> Result<Fig4Result> {
    if cfg.train_size == 0 || cfg.test_size == 0 || cfg.draws == 0 {
        return Err(Error::Config("train_size, test_size and draws must be ≥ 1".into()));
    }
    let basis = RbfBasis::even(cfg.interval.0, cfg.interval.1, cfg.centres, cfg.width)?
        .with_deriv_intercept(cfg.deriv_intercept);
    let x_test = linspace(cfg.interval.0, cfg.interval.1, cfg.test_size);
    let z_test: Vec<f64> = x_test.iter().map(|v| v.sin()).collect();
    let g_test: Vec<f64> = x_test.iter().map(|v| v.cos()).collect();
    let per_draw = (0..cfg.draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = Rng::derive(seed, d as u64);
            let (x, z, g) = sine_draw(cfg.train_size, cfg.interval, cfg.noise_sd, &mut rng);
            let m = RgModel::fit(&basis, &x, &z, &g, cfg.lambda1, cfg.lambda2, cfg.lambda_grad)?;
            let ridge = m.predict(&x_test, &m.beta_ridge)?;
            let rg = m.predict(&x_test, &m.beta_rg)?;
            let scores = [
                rmse(&ridge, &z_test)?,
                rmse(&rg, &z_test)?,
                rmse(&m.predict_grad(&x_test, &m.beta_ridge)?, &g_test)?,
                rmse(&m.predict_grad(&x_test, &m.beta_grad)?, &g_test)?,
            ];
            Ok((scores, ridge, rg))
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = |k: usize| mean(&per_draw.iter().map(|(s, _, _)| s[k]).collect::<Vec<_>>());
    let (_, ridge0, rg0) = &per_draw[0];
    let predictions = (0..cfg.test_size)
        .map(|i| [x_test[i], z_test[i], ridge0[i], rg0[i]])
        .collect();
    Ok(Fig4Result {
        rmse_ridge: avg(0),
        rmse_rg: avg(1),
        output_std: std_dev(&z_test),
        grad_rmse_ridge: avg(2),
        grad_rmse_grad: avg(3),
        predictions,
    })
}

/// Sample-size sweep with validation-tuned regularisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgExperimentConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub centres: usize,
    pub width: f64,
    pub interval: (f64, f64),
    pub noise_sd: f64,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    pub lambda_grad_grid: Vec<f64>,
    /// Fraction of each draw held out for tuning.
    pub validation_fraction: f64,
    pub test_size: usize,
    pub deriv_intercept: bool,
}

/// `11` log-spaced points from `1e-4` to `1e1`.
pub fn default_lambda_grid() -> Vec<f64> {
    linspace(-4.0, 1.0, 11).into_iter().map(|e| 10f64.powf(e)).collect()
}

impl Default for RgExperimentConfig {
    fn default() -> Self {
        RgExperimentConfig {
            sizes: (10..=50).step_by(2).collect(),
            trials: 50,
            centres: 7,
            width: 1.0,
            interval: (0.0, TAU),
            noise_sd: 0.5,
            lambda1_grid: default_lambda_grid(),
            lambda2_grid: default_lambda_grid(),
            lambda_grad_grid: default_lambda_grid(),
            validation_fraction: 0.3,
            test_size: 200,
            deriv_intercept: true,
        }
    }
}

impl RgExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.trials == 0 || self.test_size == 0 {
            return Err(Error::Config("sizes, trials and test_size must be nonempty".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        for (name, grid) in [
            ("lambda1_grid", &self.lambda1_grid),
            ("lambda2_grid", &self.lambda2_grid),
            ("lambda_grad_grid", &self.lambda_grad_grid),
        ] {
            if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonempty with values ≥ 0")));
            }
        }
        for &n in &self.sizes {
            let n_val = self.validation_rows(n);
            if n_val == 0 || n_val >= n {
                return Err(Error::Config(format!("size {n} leaves no train/validation split")));
            }
        }
        Ok(())
    }

    fn validation_rows(&self, n: usize) -> usize {
        (self.validation_fraction * n as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgTrial {
    pub size: usize,
    pub trial: usize,
    pub rmse_ridge: f64,
    pub rmse_rg: f64,
    /// `100·(rmse_ridge − rmse_rg)/rmse_ridge`; positive favours `β_rg`.
    pub pct_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgExperimentResult {
    pub trials: Vec<RgTrial>,
}

impl RgExperimentResult {
    /// `(size, mean pct_diff)` in size order.
    pub fn per_size(&self) -> Vec<(usize, f64)> {
        let mut sizes: Vec<usize> = self.trials.iter().map(|t| t.size).collect();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|s| {
                let v: Vec<f64> = self.trials.iter().filter(|t| t.size == s).map(|t| t.pct_diff).collect();
                (s, mean(&v))
            })
            .collect()
    }

    pub fn mean_pct_diff(&self) -> f64 {
        mean(&self.trials.iter().map(|t| t.pct_diff).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,trial,rmse_ridge,rmse_rg,pct_diff\n");
        for t in &self.trials {
            writeln!(out, "{},{},{},{},{}", t.size, t.trial, t.rmse_ridge, t.rmse_rg, t.pct_diff)
                .expect("writing to String");
        }
        out
    }
}

/// First grid value with the lowest score; later ties lose.
fn argmin_by<T: Copy>(items: &[T], mut score: impl FnMut(T) -> Result<f64>) -> Result<T> {
    let mut best: Option<(T, f64)> = None;
    for &item in items {
        let s = score(item)?;
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((item, s));
        }
    }
    best.map(|(t, _)| t).ok_or(Error::Empty("tuning grid"))
}

fn rg_trial(cfg: &RgExperimentConfig, basis: &RbfBasis, size: usize, trial: usize, seed: u64) -> Result<RgTrial> {
    let mut rng = Rng::derive(seed, ((size as u64) << 32) | trial as u64);
    let (x, z, g) = sine_draw(size, cfg.interval, cfg.noise_sd, &mut rng);
    let n_fit = size - cfg.validation_rows(size);
    let phi_fit = rbf_design(&x[..n_fit], basis)?;
    let phi_val = rbf_design(&x[n_fit..], basis)?;
    let phid_fit = rbf_deriv_design(&x[..n_fit], basis)?;
    let phid_val = rbf_deriv_design(&x[n_fit..], basis)?;
    let (z_fit, z_val) = z.split_at(n_fit);
    let (g_fit, g_val) = g.split_at(n_fit);

    let l_ridge = argmin_by(&cfg.lambda1_grid, |l| {
        rmse(&phi_val.matvec(&fit_ridge(&phi_fit, z_fit, l)?)?, z_val)
    })?;
    let l_grad = argmin_by(&cfg.lambda_grad_grid, |l| {
        rmse(&phid_val.matvec(&fit_beta_grad(&phid_fit, g_fit, l)?)?, g_val)
    })?;
    let bg_fit = fit_beta_grad(&phid_fit, g_fit, l_grad)?;
    let pairs: Vec<(f64, f64)> = cfg
        .lambda1_grid
        .iter()
        .flat_map(|&a| cfg.lambda2_grid.iter().map(move |&b| (a, b)))
        .collect();
    let (l1, l2) = argmin_by(&pairs, |(a, b)| {
        rmse(&phi_val.matvec(&fit_ridge_gradients(&phi_fit, z_fit, &bg_fit, a, b)?)?, z_val)
    })?;

    let model_ridge = RgModel::fit(basis, &x[..n_fit], z_fit, g_fit, l_ridge, 0.0, l_grad)?;
    let model_rg = RgModel::fit(basis, &x[..n_fit], z_fit, g_fit, l1, l2, l_grad)?;
    let x_test = linspace(cfg.interval.0, cfg.interval.1, cfg.test_size);
    let z_test: Vec<f64> = x_test.iter().map(|v| v.sin()).collect();
    let rmse_ridge = rmse(&model_ridge.predict(&x_test, &model_ridge.beta_ridge)?, &z_test)?;
    let rmse_rg = rmse(&model_rg.predict(&x_test, &model_rg.beta_rg)?, &z_test)?;
    Ok(RgTrial {
        size,
        trial,
        rmse_ridge,
        rmse_rg,
        pct_diff: 100.0 * (rmse_ridge - rmse_rg) / rmse_ridge,
    })
}

/// For each size and trial: tune `λ` for ridge, `λ_grad` for `β_grad` and
/// `(λ₁, λ₂)` for Ridge-Gradients on a held-out split of the draw, then score
/// the tuned fits on a dense noiseless test grid.
pub fn rg_experiment(cfg: &RgExperimentConfig, seed: u64) -> Result<RgExperimentResult> {
    cfg.validate()?;
    let basis = RbfBasis::even(cfg.interval.0, cfg.interval.1, cfg.centres, cfg.width)?
        .with_deriv_intercept(cfg.deriv_intercept);
    let cells: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let trials = cells
        .into_par_iter()
        .map(|(s, t)| rg_trial(cfg, &basis, s, t, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(RgExperimentResult { trials })
}
