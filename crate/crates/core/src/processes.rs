//! Synthetic processes whose output derivatives are known in closed form.
//!
//! Each process yields both values and the Jacobian of those values with
//! respect to its inputs, which is the gradient information used as an extra
//! training target.
//!
//! Surrogate inputs: for the parametric processes (`cosine2d`, `garch`,
//! `exp8d`) a surrogate maps the parameter vector to the full output vector
//! over a fixed grid. [`sample_surrogate`] expresses those parameters in unit
//! coordinates `u ∈ [−1, 1]^d` (`θ = mid + half·u`) and rescales the Jacobian
//! by the chain rule, so networks see well-conditioned inputs. The 1-D
//! `quadratic` and `sine` processes keep raw inputs.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::GiBatch;
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Quadratic,
    Cosine2d,
    Garch,
    Exp8d,
    Sine,
}

impl ProcessKind {
    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Quadratic => "quadratic",
            ProcessKind::Cosine2d => "cosine2d",
            ProcessKind::Garch => "garch",
            ProcessKind::Exp8d => "exp8d",
            ProcessKind::Sine => "sine",
        }
    }
}

/// Constants for every process. Only the fields relevant to `kind` are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Standard deviation of additive output noise (quadratic only).
    pub noise_sd: f64,
    /// Sampling interval of the quadratic's input.
    pub quadratic_interval: (f64, f64),
    pub phi: f64,
    pub psi: f64,
    pub time_grid: Vec<f64>,
    /// `θ₁, θ₂ ~ U[lo, hi]` for the cosine process.
    pub cosine_theta_range: (f64, f64),
    /// Variance at the forecast origin, held fixed for surrogate data.
    pub garch_sigma2: f64,
    pub garch_horizons: Vec<usize>,
    pub garch_return_range: (f64, f64),
    pub garch_omega_range: (f64, f64),
    pub garch_alpha_range: (f64, f64),
    pub garch_beta_range: (f64, f64),
    /// Fixed shift inside the first exponential of the 8-D process.
    pub exp_alpha: f64,
    /// Fixed shift inside the second exponential of the 8-D process.
    pub exp_eta: f64,
    pub exp_theta_range: (f64, f64),
    pub exp_design_rows: usize,
    pub exp_design_seed: u64,
    pub sine_interval: (f64, f64),
}

impl Default for ProcessSpec {
    fn default() -> Self {
        ProcessSpec {
            kind: ProcessKind::Quadratic,
            noise_sd: 1.0,
            quadratic_interval: (-3.0, 3.0),
            phi: 0.1,
            psi: 5.0,
            time_grid: (1..=10).map(f64::from).collect(),
            cosine_theta_range: (0.0, 15.0),
            garch_sigma2: 0.05,
            garch_horizons: vec![1, 2, 3, 4, 5],
            garch_return_range: (-0.1, 0.1),
            garch_omega_range: (0.0, 0.1),
            garch_alpha_range: (0.0, 0.5),
            garch_beta_range: (0.0, 0.95),
            exp_alpha: 0.5,
            exp_eta: 0.5,
            exp_theta_range: (0.0, 1.0),
            exp_design_rows: 10,
            exp_design_seed: 0x8D,
            sine_interval: (0.0, TAU),
        }
    }
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind) -> Self {
        let noise_sd = if kind == ProcessKind::Quadratic { 1.0 } else { 0.0 };
        ProcessSpec {
            kind,
            noise_sd,
            ..ProcessSpec::default()
        }
    }

    pub fn noiseless(&self) -> Self {
        ProcessSpec {
            noise_sd: 0.0,
            ..self.clone()
        }
    }

    /// Dimension of the raw process input.
    pub fn input_dim(&self) -> usize {
        match self.kind {
            ProcessKind::Quadratic | ProcessKind::Sine => 1,
            ProcessKind::Cosine2d => 2,
            ProcessKind::Garch => 4,
            ProcessKind::Exp8d => 8,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            ProcessKind::Quadratic | ProcessKind::Sine => 1,
            ProcessKind::Cosine2d => self.time_grid.len(),
            ProcessKind::Garch => self.garch_horizons.len(),
            ProcessKind::Exp8d => self.exp_design_rows,
        }
    }

    /// Fixed `n × 3` design on `[0, 1]³` for the 8-D process.
    pub fn exp8d_design(&self) -> Matrix {
        let mut rng = Rng::new(self.exp_design_seed);
        Matrix::from_fn(self.exp_design_rows, 3, |_, _| rng.next_f64())
    }

    /// Noiseless values and analytic Jacobian at a raw input.
    pub fn evaluate(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("ProcessSpec::evaluate", self.input_dim(), x.len()));
        }
        match self.kind {
            ProcessKind::Quadratic => Ok((
                vec![2.0 * x[0] * x[0]],
                Matrix::from_vec(1, 1, vec![4.0 * x[0]])?,
            )),
            ProcessKind::Sine => Ok((vec![x[0].sin()], Matrix::from_vec(1, 1, vec![x[0].cos()])?)),
            ProcessKind::Cosine2d => Ok(gen_cosine2d([x[0], x[1]], self)),
            ProcessKind::Garch => {
                let f = gen_garch(&GarchParams {
                    u: x[0],
                    omega: x[1],
                    alpha: x[2],
                    beta: x[3],
                    sigma2: self.garch_sigma2,
                    horizons: self.garch_horizons.clone(),
                })?;
                Ok((f.values, f.jacobian))
            }
            ProcessKind::Exp8d => {
                let theta: [f64; 8] = x.try_into().expect("length checked above");
                gen_exp8d(&theta, &self.exp8d_design(), self)
            }
        }
    }

    /// Per-dimension `(lo, hi)` box that surrogate parameters are drawn from.
    pub fn parameter_box(&self) -> Vec<(f64, f64)> {
        match self.kind {
            ProcessKind::Quadratic => vec![self.quadratic_interval],
            ProcessKind::Sine => vec![self.sine_interval],
            ProcessKind::Cosine2d => vec![self.cosine_theta_range; 2],
            ProcessKind::Garch => vec![
                self.garch_return_range,
                self.garch_omega_range,
                self.garch_alpha_range,
                self.garch_beta_range,
            ],
            ProcessKind::Exp8d => vec![self.exp_theta_range; 8],
        }
    }

    fn uses_unit_inputs(&self) -> bool {
        matches!(
            self.kind,
            ProcessKind::Cosine2d | ProcessKind::Garch | ProcessKind::Exp8d
        )
    }

    /// Maps a surrogate input to the raw process input.
    pub fn surrogate_to_raw(&self, u: &[f64]) -> Vec<f64> {
        if !self.uses_unit_inputs() {
            return u.to_vec();
        }
        self.parameter_box()
            .iter()
            .zip(u)
            .map(|(&(lo, hi), &v)| 0.5 * (lo + hi) + 0.5 * (hi - lo) * v)
            .collect()
    }

    fn surrogate_scale(&self) -> Vec<f64> {
        if !self.uses_unit_inputs() {
            return vec![1.0; self.input_dim()];
        }
        self.parameter_box()
            .iter()
            .map(|&(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }
}

/// Cosine simulator over the time grid, with its `T × 2` Jacobian.
pub fn gen_cosine2d(theta: [f64; 2], spec: &ProcessSpec) -> (Vec<f64>, Matrix) {
    let phi = spec.phi;
    let t_len = spec.time_grid.len();
    let mut y = Vec::with_capacity(t_len);
    let mut jac = Matrix::zeros(t_len, 2);
    for (r, &t) in spec.time_grid.iter().enumerate() {
        let a1 = phi * (theta[0] - t - spec.psi);
        let a2 = phi * (theta[1] - t - spec.psi);
        let (c1, c2) = (a1.cos(), a2.cos());
        y.push((c1 * c2).powi(2));
        jac[(r, 0)] = -phi * (2.0 * a1).sin() * c2 * c2;
        jac[(r, 1)] = -phi * (2.0 * a2).sin() * c1 * c1;
    }
    (y, jac)
}

/// GARCH(1,1) state at the forecast origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    /// Period-t return.
    pub u: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Variance at period t.
    pub sigma2: f64,
    pub horizons: Vec<usize>,
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.u, self.omega, self.alpha, self.beta, self.sigma2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::BadParams("GARCH parameters must be finite".into()));
        }
        if self.omega < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::BadParams(format!(
                "GARCH weights must be ≥ 0 (ω={}, α={}, β={})",
                self.omega, self.alpha, self.beta
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::BadParams(format!("σ²_t must be > 0, got {}", self.sigma2)));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::BadParams("horizons must be nonempty and ≥ 1".into()));
        }
        Ok(())
    }

    pub fn is_stationary(&self) -> bool {
        self.alpha + self.beta < 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GarchForecast {
    /// `σ²_{t+h}` for each requested horizon.
    pub values: Vec<f64>,
    /// Rows follow `values`; columns are `(u, ω, α, β)`.
    pub jacobian: Matrix,
}

/// Multi-horizon variance forecasts and their derivatives.
///
/// `h = 1` is the one-step update `ω + α·u² + β·σ²_t`; longer horizons use
/// `σ²_{t+h} = ω + (α+β)·σ²_{t+h−1}`, differentiated alongside.
pub fn gen_garch(p: &GarchParams) -> Result<GarchForecast> {
    p.validate()?;
    let max_h = *p.horizons.iter().max().expect("validated nonempty");
    let persistence = p.alpha + p.beta;
    let mut value = p.omega + p.alpha * p.u * p.u + p.beta * p.sigma2;
    let mut grad = [2.0 * p.alpha * p.u, 1.0, p.u * p.u, p.sigma2];
    let mut path = Vec::with_capacity(max_h);
    path.push((value, grad));
    for _ in 2..=max_h {
        let prev = value;
        value = p.omega + persistence * prev;
        grad = [
            persistence * grad[0],
            1.0 + persistence * grad[1],
            prev + persistence * grad[2],
            prev + persistence * grad[3],
        ];
        path.push((value, grad));
    }
    let mut jacobian = Matrix::zeros(p.horizons.len(), 4);
    let mut values = Vec::with_capacity(p.horizons.len());
    for (r, &h) in p.horizons.iter().enumerate() {
        let (v, g) = path[h - 1];
        values.push(v);
        jacobian.row_mut(r).copy_from_slice(&g);
    }
    Ok(GarchForecast { values, jacobian })
}

/// 8-parameter exponential process over a design `X ⊂ [0, 1]³`, with the
/// `n × 8` Jacobian with respect to the parameters.
pub fn gen_exp8d(theta: &[f64; 8], design: &Matrix, spec: &ProcessSpec) -> Result<(Vec<f64>, Matrix)> {
    if design.cols() != 3 {
        return Err(Error::shape("gen_exp8d design columns", 3, design.cols()));
    }
    if design.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::BadParams("exp8d design must lie in [0, 1]³".into()));
    }
    let [b1, b2, b3, b4, b5, b6, b7, b8] = *theta;
    let mut y = Vec::with_capacity(design.rows());
    let mut jac = Matrix::zeros(design.rows(), 8);
    for r in 0..design.rows() {
        let x = design.row(r);
        let d1 = x[1] - spec.exp_alpha;
        let d2 = x[2] - spec.exp_eta;
        let e1 = (b4 * d1).exp();
        let e2 = (b7 * d2).exp();
        y.push(b1 * x[0] + b2 * (b3 * e1) + b5 * (b6 * e2) + b8);
        jac.row_mut(r).copy_from_slice(&[
            x[0],
            b3 * e1,
            b2 * e1,
            b2 * b3 * d1 * e1,
            b6 * e2,
            b5 * e2,
            b5 * b6 * d2 * e2,
            1.0,
        ]);
    }
    Ok((y, jac))
}

fn batch_from_rows(xs: Vec<Vec<f64>>, zs: Vec<Vec<f64>>, gs: Vec<Vec<f64>>) -> Result<GiBatch> {
    GiBatch::new(Matrix::from_rows(&xs)?, Matrix::from_rows(&zs)?, Matrix::from_rows(&gs)?)
}

/// `z = 2x² + ε`, `ε ~ N(0, noise_sd²)`, with the noiseless derivative `4x`.
pub fn gen_quadratic(n: usize, rng: &mut Rng, spec: &ProcessSpec) -> Result<GiBatch> {
    if n == 0 {
        return Err(Error::Empty("gen_quadratic n"));
    }
    let (lo, hi) = spec.quadratic_interval;
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(lo, hi);
        let eps = rng.standard_normal();
        xs.push(vec![x]);
        zs.push(vec![2.0 * x * x + spec.noise_sd * eps]);
        gs.push(vec![4.0 * x]);
    }
    batch_from_rows(xs, zs, gs)
}

/// `z = sin x` on the configured interval with derivative `cos x`.
pub fn gen_sine(n: usize, rng: &mut Rng, spec: &ProcessSpec) -> Result<GiBatch> {
    if n == 0 {
        return Err(Error::Empty("gen_sine n"));
    }
    let (lo, hi) = spec.sine_interval;
    let xs: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    batch_from_rows(
        xs.iter().map(|&x| vec![x]).collect(),
        xs.iter().map(|&x| vec![x.sin()]).collect(),
        xs.iter().map(|&x| vec![x.cos()]).collect(),
    )
}

/// Draws one raw GARCH parameter vector, rejecting non-stationary draws.
fn draw_garch_raw(spec: &ProcessSpec, rng: &mut Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = spec
            .parameter_box()
            .iter()
            .map(|&(lo, hi)| rng.uniform(lo, hi))
            .collect();
        if raw[2] + raw[3] < 1.0 {
            return raw;
        }
    }
}

/// Surrogate training data for any process kind; see the module docs for the
/// input convention.
pub fn sample_surrogate(spec: &ProcessSpec, n: usize, rng: &mut Rng) -> Result<GiBatch> {
    match spec.kind {
        ProcessKind::Quadratic => return gen_quadratic(n, rng, spec),
        ProcessKind::Sine => return gen_sine(n, rng, spec),
        _ => {}
    }
    if n == 0 {
        return Err(Error::Empty("sample_surrogate n"));
    }
    let boxes = spec.parameter_box();
    let scale = spec.surrogate_scale();
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = if spec.kind == ProcessKind::Garch {
            draw_garch_raw(spec, rng)
        } else {
            boxes.iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect()
        };
        let unit: Vec<f64> = boxes
            .iter()
            .zip(&raw)
            .map(|(&(lo, hi), &v)| (2.0 * v - lo - hi) / (hi - lo))
            .collect();
        let (y, jac) = spec.evaluate(&raw)?;
        let scaled: Vec<f64> = (0..jac.rows())
            .flat_map(|r| (0..jac.cols()).map(move |c| (r, c)))
            .map(|(r, c)| jac[(r, c)] * scale[c])
            .collect();
        xs.push(unit);
        zs.push(y);
        gs.push(scaled);
    }
    batch_from_rows(xs, zs, gs)
}

/// CSV with header `x0..,z0..,g0..`; `g` columns hold each sample's Jacobian
/// row-major. Values use Rust's shortest round-trip float formatting.
pub fn batch_to_csv(batch: &GiBatch) -> String {
    let (di, d_o) = (batch.input_dim(), batch.output_dim());
    let header: Vec<String> = (0..di)
        .map(|i| format!("x{i}"))
        .chain((0..d_o).map(|i| format!("z{i}")))
        .chain((0..di * d_o).map(|i| format!("g{i}")))
        .collect();
    let mut out = header.join(",");
    out.push('\n');
    for r in 0..batch.len() {
        let cells: Vec<String> = batch
            .input(r)
            .iter()
            .chain(batch.target(r))
            .chain(batch.target_grad(r))
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to String");
    }
    out
}

pub fn batch_from_csv(text: &str) -> Result<GiBatch> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty dataset CSV".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let count = |prefix: char| columns.iter().filter(|c| c.starts_with(prefix)).count();
    let (di, d_o, dg) = (count('x'), count('z'), count('g'));
    let expected: Vec<String> = (0..di)
        .map(|i| format!("x{i}"))
        .chain((0..d_o).map(|i| format!("z{i}")))
        .chain((0..dg).map(|i| format!("g{i}")))
        .collect();
    if columns != expected || dg != di * d_o {
        return Err(Error::Parse(format!("unexpected dataset header {header:?}")));
    }
    let (mut xs, mut zs, mut gs) = (Vec::new(), Vec::new(), Vec::new());
    for (lineno, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {c:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != columns.len() {
            return Err(Error::Parse(format!("row {} has {} cells", lineno + 1, vals.len())));
        }
        xs.push(vals[..di].to_vec());
        zs.push(vals[di..di + d_o].to_vec());
        gs.push(vals[di + d_o..].to_vec());
    }
    let n = xs.len();
    GiBatch::new(
        Matrix::from_vec(n, di, xs.concat())?,
        Matrix::from_vec(n, d_o, zs.concat())?,
        Matrix::from_vec(n, dg, gs.concat())?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_jacobian, max_rel_error};

    fn random_raw(spec: &ProcessSpec, rng: &mut Rng) -> Vec<f64> {
        match spec.kind {
            ProcessKind::Garch => draw_garch_raw(spec, rng),
            _ => spec
                .parameter_box()
                .iter()
                .map(|&(lo, hi)| rng.uniform(lo, hi))
                .collect(),
        }
    }

    #[test]
    fn quadratic_values() {
        let spec = ProcessSpec::new(ProcessKind::Quadratic);
        let (y, g) = spec.evaluate(&[0.0]).unwrap();
        assert_eq!((y[0], g[(0, 0)]), (0.0, 0.0));
        assert_eq!(spec.evaluate(&[1.0]).unwrap().1[(0, 0)], 4.0);
        assert_eq!(spec.evaluate(&[3.0]).unwrap().0[0], 18.0);
        let batch = gen_quadratic(50, &mut Rng::new(1), &spec).unwrap();
        for i in 0..batch.len() {
            assert_eq!(batch.target_grad(i)[0], 4.0 * batch.input(i)[0]);
            assert!((-3.0..3.0).contains(&batch.input(i)[0]));
        }
        assert!(gen_quadratic(0, &mut Rng::new(1), &spec).is_err());
    }

    #[test]
    fn quadratic_noise_only_touches_targets() {
        let noisy = ProcessSpec::new(ProcessKind::Quadratic);
        let a = gen_quadratic(20, &mut Rng::new(3), &noisy).unwrap();
        let b = gen_quadratic(20, &mut Rng::new(3), &noisy.noiseless()).unwrap();
        assert_eq!(a.inputs(), b.inputs());
        assert_eq!(a.target_grads(), b.target_grads());
        assert_ne!(a.targets(), b.targets());
    }

    #[test]
    fn cosine_extremum_and_symmetry() {
        let spec = ProcessSpec::new(ProcessKind::Cosine2d);
        let t = spec.time_grid[3];
        let at = t + spec.psi;
        let (y, j) = gen_cosine2d([at, at], &spec);
        assert!((y[3] - 1.0).abs() < 1e-15);
        assert!(j[(3, 0)].abs() < 1e-15 && j[(3, 1)].abs() < 1e-15);
        let (ya, _) = gen_cosine2d([2.0, 11.0], &spec);
        let (yb, _) = gen_cosine2d([11.0, 2.0], &spec);
        assert_eq!(ya, yb);
    }

    #[test]
    fn cosine_bounded() {
        let spec = ProcessSpec::new(ProcessKind::Cosine2d);
        let mut rng = Rng::new(9);
        for _ in 0..500 {
            let th = [rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)];
            assert!(gen_cosine2d(th, &spec).0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn garch_closed_forms() {
        let p = GarchParams {
            u: 0.03,
            omega: 0.0,
            alpha: 0.0,
            beta: 1.0,
            sigma2: 0.2,
            horizons: vec![1],
        };
        assert_eq!(gen_garch(&p).unwrap().values, vec![0.2]);
        let p = GarchParams {
            alpha: 0.3,
            beta: 0.5,
            omega: 0.01,
            ..p
        };
        let f = gen_garch(&p).unwrap();
        assert_eq!(f.jacobian[(0, 2)], 0.03 * 0.03);
    }

    #[test]
    fn garch_rejects_invalid() {
        let p = GarchParams {
            u: 0.0,
            omega: -0.1,
            alpha: 0.1,
            beta: 0.1,
            sigma2: 0.1,
            horizons: vec![1],
        };
        assert!(matches!(gen_garch(&p), Err(Error::BadParams(_))));
        let p = GarchParams {
            omega: 0.1,
            sigma2: 0.0,
            ..p
        };
        assert!(gen_garch(&p).is_err());
        let p = GarchParams {
            sigma2: 0.1,
            horizons: vec![],
            ..p
        };
        assert!(gen_garch(&p).is_err());
    }

    #[test]
    fn garch_converges_to_long_run_variance() {
        let p = GarchParams {
            u: 0.05,
            omega: 0.02,
            alpha: 0.2,
            beta: 0.6,
            sigma2: 0.5,
            horizons: (1..=200).collect(),
        };
        let f = gen_garch(&p).unwrap();
        let long_run = 0.02 / (1.0 - 0.8);
        assert!(f.values.iter().all(|&v| v >= 0.0));
        assert!((f.values[199] - long_run).abs() < 1e-12);
        let gaps: Vec<f64> = f.values.iter().map(|v| (v - long_run).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn exp8d_closed_forms() {
        let spec = ProcessSpec::new(ProcessKind::Exp8d);
        let design = spec.exp8d_design();
        let (y, j) = gen_exp8d(&[0.0; 8], &design, &spec).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        for r in 0..design.rows() {
            assert_eq!(j[(r, 7)], 1.0);
            assert_eq!(j[(r, 0)], design[(r, 0)]);
        }
        let outside = Matrix::from_vec(1, 3, vec![0.5, 1.5, 0.5]).unwrap();
        assert!(gen_exp8d(&[1.0; 8], &outside, &spec).is_err());
    }

    #[test]
    fn sine_values() {
        let spec = ProcessSpec::new(ProcessKind::Sine);
        let (y, g) = spec.evaluate(&[0.0]).unwrap();
        assert_eq!((y[0], g[(0, 0)]), (0.0, 1.0));
        let (y, g) = spec.evaluate(&[std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15 && g[(0, 0)].abs() < 1e-15);
        // ∫₀^{2π} cos = 0
        let n = 100_000;
        let dx = TAU / n as f64;
        let integral: f64 = (0..n).map(|i| ((i as f64 + 0.5) * dx).cos() * dx).sum();
        assert!(integral.abs() < 1e-9);
        let batch = gen_sine(100, &mut Rng::new(2), &spec).unwrap();
        assert!((0..100).all(|i| (0.0..TAU).contains(&batch.input(i)[0])));
    }

    #[test]
    fn every_generator_matches_fd() {
        for kind in [
            ProcessKind::Quadratic,
            ProcessKind::Cosine2d,
            ProcessKind::Garch,
            ProcessKind::Exp8d,
            ProcessKind::Sine,
        ] {
            let spec = ProcessSpec::new(kind);
            let mut rng = Rng::new(100 + kind as u64);
            for _ in 0..100 {
                let x = random_raw(&spec, &mut rng);
                let (_, jac) = spec.evaluate(&x).unwrap();
                let fd = fd_jacobian(|v| spec.evaluate(v).unwrap().0, &x, 1e-5).unwrap();
                assert!(max_rel_error(jac.data(), fd.data()) < 1e-4, "{kind:?} at {x:?}");
            }
        }
    }

    #[test]
    fn surrogate_gradients_use_unit_coordinates() {
        for kind in [ProcessKind::Cosine2d, ProcessKind::Garch, ProcessKind::Exp8d] {
            let spec = ProcessSpec::new(kind);
            let batch = sample_surrogate(&spec, 5, &mut Rng::new(4)).unwrap();
            for i in 0..batch.len() {
                let u = batch.input(i).to_vec();
                assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
                let f = |v: &[f64]| spec.evaluate(&spec.surrogate_to_raw(v)).unwrap().0;
                let fd = fd_jacobian(f, &u, 1e-6).unwrap();
                assert!(max_rel_error(batch.target_grad(i), fd.data()) < 1e-5, "{kind:?}");
                assert!(max_rel_error(batch.target(i), &f(&u)) < 1e-14);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = ProcessSpec::new(ProcessKind::Cosine2d);
        let batch = sample_surrogate(&spec, 3, &mut Rng::new(8)).unwrap();
        let text = batch_to_csv(&batch);
        assert!(text.starts_with("x0,x1,z0,"));
        assert_eq!(batch_from_csv(&text).unwrap(), batch);
        assert!(batch_from_csv("x0,z0,g0,g1\n1,2,3,4\n").is_err());
    }
}
