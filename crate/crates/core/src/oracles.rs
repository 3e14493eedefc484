//! Independent reference computations (finite differences, brute-force
//! recursions, an iterative minimiser) and a harness that checks the
//! analytic code against them on random instances.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mlp::{GiBatch, Mlp, OutputActivation};
use crate::numerics::{dot, fd_gradient, fd_jacobian, max_abs, max_rel_error, Matrix, Rng};
use crate::processes::{gen_garch, GarchParams, ProcessKind, ProcessSpec};
use crate::ridgegrad::{
    fit_beta_grad, fit_ridge, fit_ridge_gradients, rbf_deriv_design, rbf_design, sine_draw, RbfBasis,
};

/// Outcome of one family of checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.trials
    }

    fn collect(name: &str, tolerance: f64, errors: &[f64]) -> Self {
        OracleReport {
            name: name.to_string(),
            trials: errors.len(),
            passed: errors.iter().filter(|&&e| e <= tolerance).count(),
            max_error: errors.iter().copied().fold(0.0, f64::max),
            tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Random networks and batches per gradient check.
    pub network_trials: usize,
    pub garch_trials: usize,
    pub process_trials: usize,
    pub ridge_trials: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            network_trials: 200,
            garch_trials: 1000,
            process_trials: 200,
            ridge_trials: 100,
        }
    }
}

/// Random tanh network with 1–2 hidden layers and a random output activation.
pub fn random_network(rng: &mut Rng) -> Result<Mlp> {
    let mut sizes = vec![1 + rng.below(4)];
    for _ in 0..1 + rng.below(2) {
        sizes.push(2 + rng.below(7));
    }
    sizes.push(1 + rng.below(3));
    let out = if rng.below(2) == 0 {
        OutputActivation::Identity
    } else {
        OutputActivation::Sigmoid
    };
    Mlp::init(&sizes, out, rng)
}

/// Batch of `n` random inputs, targets and target Jacobians for `net`.
pub fn random_batch(net: &Mlp, n: usize, rng: &mut Rng) -> Result<GiBatch> {
    let (di, d_o) = (net.input_dim(), net.output_dim());
    GiBatch::new(
        Matrix::from_fn(n, di, |_, _| rng.uniform(-1.5, 1.5)),
        Matrix::from_fn(n, d_o, |_, _| rng.standard_normal()),
        Matrix::from_fn(n, d_o * di, |_, _| rng.standard_normal()),
    )
}

fn with_params(net: &Mlp, params: &[f64]) -> Mlp {
    let mut copy = net.clone();
    copy.params_mut().copy_from_slice(params);
    copy
}

/// Relative errors of the analytic input Jacobian, `∂E/∂θ` and `∂E_grad/∂θ`
/// against central differences for one random network and batch.
pub fn network_gradient_errors(rng: &mut Rng) -> Result<[f64; 3]> {
    let net = random_network(rng)?;
    let batch = random_batch(&net, 1 + rng.below(4), rng)?;
    let x = batch.input(0).to_vec();
    let jac = net.input_jacobian(&x)?;
    let fd_jac = fd_jacobian(|v| net.forward(v).expect("input shape checked"), &x, 1e-6)?;
    let (g_t, g_gi) = net.param_grads(&batch, true)?;
    let g_gi = g_gi.expect("requested GI gradient");
    let fd_t = fd_gradient(
        |p| with_params(&net, p).loss_target(&batch).expect("batch shape checked"),
        net.params(),
        1e-6,
    )?;
    let fd_gi = fd_gradient(
        |p| with_params(&net, p).loss_gi(&batch).expect("batch shape checked"),
        net.params(),
        1e-6,
    )?;
    Ok([
        max_rel_error(jac.data(), fd_jac.data()),
        max_rel_error(&g_t, &fd_t),
        max_rel_error(&g_gi, &fd_gi),
    ])
}

/// Forecasts from the closed-form geometric sum
/// `σ²_{t+h} = ω·Σ_{k<h−1} (α+β)^k + (α+β)^{h−1}·σ²_{t+1}`.
pub fn garch_closed_sum(p: &GarchParams) -> Vec<f64> {
    let one_step = p.omega + p.alpha * p.u * p.u + p.beta * p.sigma2;
    let persistence = p.alpha + p.beta;
    p.horizons
        .iter()
        .map(|&h| {
            let geometric: f64 = (0..h - 1).map(|k| persistence.powi(k as i32)).sum();
            p.omega * geometric + persistence.powi(h as i32 - 1) * one_step
        })
        .collect()
}

/// Random stationary parameters in the surrogate ranges, horizons 1–5.
pub fn random_garch(rng: &mut Rng) -> GarchParams {
    loop {
        let p = GarchParams {
            u: rng.uniform(-0.1, 0.1),
            omega: rng.uniform(0.0, 0.1),
            alpha: rng.uniform(0.0, 0.5),
            beta: rng.uniform(0.0, 0.95),
            sigma2: rng.uniform(0.01, 0.2),
            horizons: (1..=5).collect(),
        };
        if p.is_stationary() {
            return p;
        }
    }
}

/// Max relative error of forecasts against the closed sum, and of the
/// Jacobian against central differences.
pub fn garch_errors(p: &GarchParams) -> Result<(f64, f64)> {
    let f = gen_garch(p)?;
    let value_err = max_rel_error(&f.values, &garch_closed_sum(p));
    let at = [p.u, p.omega, p.alpha, p.beta];
    let eval = |v: &[f64]| {
        let q = GarchParams {
            u: v[0],
            omega: v[1],
            alpha: v[2],
            beta: v[3],
            ..p.clone()
        };
        garch_closed_sum(&q)
    };
    let fd = fd_jacobian(eval, &at, 1e-6)?;
    Ok((value_err, max_rel_error(f.jacobian.data(), fd.data())))
}

/// Minimises the Ridge-Gradients objective by conjugate gradients on its
/// gradient, never forming or factorising the normal equations.
pub fn cg_minimise_rg(phi: &Matrix, z: &[f64], beta_grad: &[f64], l1: f64, l2: f64) -> Result<Vec<f64>> {
    let p = phi.cols();
    let hess_vec = |v: &[f64]| -> Result<Vec<f64>> {
        let back = phi.tmatvec(&phi.matvec(v)?)?;
        Ok(back.iter().zip(v).map(|(b, vi)| 2.0 * b + 2.0 * (l1 + l2) * vi).collect())
    };
    let grad = |b: &[f64]| -> Result<Vec<f64>> {
        let resid: Vec<f64> = phi.matvec(b)?.iter().zip(z).map(|(f, t)| f - t).collect();
        let back = phi.tmatvec(&resid)?;
        Ok((0..p)
            .map(|i| 2.0 * back[i] + 2.0 * l1 * b[i] + 2.0 * l2 * (b[i] - beta_grad[i]))
            .collect())
    };
    let mut beta = vec![0.0; p];
    for _restart in 0..4 {
        let mut r: Vec<f64> = grad(&beta)?.iter().map(|g| -g).collect();
        let mut d = r.clone();
        for _ in 0..4 * p {
            let rr = dot(&r, &r);
            if rr < 1e-30 {
                break;
            }
            let hd = hess_vec(&d)?;
            let step = rr / dot(&d, &hd);
            for i in 0..p {
                beta[i] += step * d[i];
                r[i] -= step * hd[i];
            }
            let k = dot(&r, &r) / rr;
            for i in 0..p {
                d[i] = r[i] + k * d[i];
            }
        }
    }
    Ok(beta)
}

/// Runs every oracle family and returns one report per family.
pub fn run_oracle_checks(cfg: &OracleConfig, seed: u64) -> Result<Vec<OracleReport>> {
    let mut reports = Vec::new();

    let mut rng = Rng::derive(seed, 0x0A1);
    let mut net_errs = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..cfg.network_trials {
        let e = network_gradient_errors(&mut rng)?;
        for (bucket, v) in net_errs.iter_mut().zip(e) {
            bucket.push(v);
        }
    }
    reports.push(OracleReport::collect("mlp input jacobian vs fd", 1e-6, &net_errs[0]));
    reports.push(OracleReport::collect("mlp target-loss gradient vs fd", 1e-5, &net_errs[1]));
    reports.push(OracleReport::collect("mlp gi-loss gradient vs fd", 1e-4, &net_errs[2]));

    let mut rng = Rng::derive(seed, 0x0A2);
    let (mut vals, mut jacs) = (Vec::new(), Vec::new());
    for _ in 0..cfg.garch_trials {
        let (v, j) = garch_errors(&random_garch(&mut rng))?;
        vals.push(v);
        jacs.push(j);
    }
    reports.push(OracleReport::collect("garch forecasts vs closed sum", 1e-8, &vals));
    reports.push(OracleReport::collect("garch jacobian vs fd", 1e-5, &jacs));

    let mut rng = Rng::derive(seed, 0x0A3);
    for kind in [ProcessKind::Quadratic, ProcessKind::Cosine2d, ProcessKind::Exp8d, ProcessKind::Sine] {
        let spec = ProcessSpec::new(kind);
        let mut errs = Vec::with_capacity(cfg.process_trials);
        for _ in 0..cfg.process_trials {
            let x: Vec<f64> = spec
                .parameter_box()
                .iter()
                .map(|&(lo, hi)| rng.uniform(lo, hi))
                .collect();
            let (_, jac) = spec.evaluate(&x)?;
            let fd = fd_jacobian(|v| spec.evaluate(v).map(|r| r.0).unwrap_or_default(), &x, 1e-5)?;
            errs.push(max_rel_error(jac.data(), fd.data()));
        }
        reports.push(OracleReport::collect(&format!("{} jacobian vs fd", kind.name()), 1e-4, &errs));
    }

    let mut rng = Rng::derive(seed, 0x0A4);
    let basis = RbfBasis::even(0.0, std::f64::consts::TAU, 7, 1.0)?;
    let (mut cg_errs, mut red_errs, mut deriv_errs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.ridge_trials {
        let (x, z, g) = sine_draw(12, (0.0, std::f64::consts::TAU), 0.5, &mut rng);
        let phi = rbf_design(&x, &basis)?;
        let dphi = rbf_deriv_design(&x, &basis)?;
        let bg = fit_beta_grad(&dphi, &g, 0.1)?;
        let (l1, l2) = (rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0));
        let closed = fit_ridge_gradients(&phi, &z, &bg, l1, l2)?;
        let oracle = cg_minimise_rg(&phi, &z, &bg, l1, l2)?;
        let diff: Vec<f64> = closed.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        cg_errs.push(max_abs(&diff));
        let reduced = fit_ridge_gradients(&phi, &z, &bg, l1, 0.0)?;
        let ridge = fit_ridge(&phi, &z, l1)?;
        red_errs.push(if reduced == ridge { 0.0 } else { f64::INFINITY });

        // Without the intercept switch every column is an exact derivative.
        let exact = basis.clone().with_deriv_intercept(false);
        let xi = x[rng.below(x.len())];
        let analytic = rbf_deriv_design(&[xi], &exact)?;
        let fd = fd_jacobian(|v| rbf_design(v, &exact).map(|m| m.into_data()).unwrap_or_default(), &[xi], 1e-5)?;
        deriv_errs.push(max_rel_error(analytic.data(), fd.data()));
    }
    reports.push(OracleReport::collect("ridge-gradients closed form vs cg", 1e-6, &cg_errs));
    reports.push(OracleReport::collect("ridge-gradients at lambda2=0 equals ridge", 0.0, &red_errs));
    reports.push(OracleReport::collect("rbf derivative design vs fd", 1e-7, &deriv_errs));
    Ok(reports)
}

pub fn reports_csv(reports: &[OracleReport]) -> String {
    let mut out = String::from("check,trials,passed,max_error,tolerance\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{:e},{:e}\n",
            r.name, r.trials, r.passed, r.max_error, r.tolerance
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_sum_matches_hand_values() {
        let p = GarchParams {
            u: 0.1,
            omega: 0.01,
            alpha: 0.2,
            beta: 0.7,
            sigma2: 0.05,
            horizons: vec![1, 2, 3],
        };
        let s1 = 0.01 + 0.2 * 0.01 + 0.7 * 0.05;
        let s2 = 0.01 + 0.9 * s1;
        let s3 = 0.01 + 0.9 * s2;
        let got = garch_closed_sum(&p);
        for (g, w) in got.iter().zip([s1, s2, s3]) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn random_garch_is_stationary() {
        let mut rng = Rng::new(3);
        assert!((0..200).all(|_| random_garch(&mut rng).is_stationary()));
    }

    #[test]
    fn cg_solves_plain_ridge() {
        let mut rng = Rng::new(5);
        let phi = Matrix::from_fn(9, 4, |_, _| rng.standard_normal());
        let z: Vec<f64> = (0..9).map(|_| rng.standard_normal()).collect();
        let cg = cg_minimise_rg(&phi, &z, &[0.0; 4], 0.3, 0.0).unwrap();
        let closed = fit_ridge(&phi, &z, 0.3).unwrap();
        assert!(cg.iter().zip(&closed).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn small_harness_passes() {
        let cfg = OracleConfig {
            network_trials: 10,
            garch_trials: 20,
            process_trials: 10,
            ridge_trials: 5,
        };
        let reports = run_oracle_checks(&cfg, 1).unwrap();
        assert_eq!(reports.len(), 12);
        for r in &reports {
            assert!(r.all_passed(), "{r:?}");
        }
        assert!(reports_csv(&reports).starts_with("check,trials,passed,max_error,tolerance\n"));
    }
}
