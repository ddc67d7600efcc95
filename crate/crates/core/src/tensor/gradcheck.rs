//! Central-difference verification of reverse-mode gradients.

use std::fmt;

use super::{Result, Tape, Tensor, TensorError, Var};
use crate::rng::SeedStream;
use rand::Rng;
use rayon::prelude::*;

/// Analytic gradient of the scalar `f` at `x` obtained by one backward sweep.
pub fn analytic_grad<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    let grad = tape.grad(xv).expect("param leaf has a gradient").data().to_vec();
    Ok((value, grad))
}

fn eval<F>(f: &F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let loss = f(&mut tape, xv)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(TensorError::Contract(format!("grad_check needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Max over coordinates of |analytic − numeric| / max(1, |analytic|).
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var> + Sync,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// Like [`grad_check`] but only probes the listed flat coordinates.
/// Coordinates are probed in parallel.
pub fn grad_check_coords<F>(f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var> + Sync,
{
    let (_, analytic) = analytic_grad(&f, x)?;
    let errors = coords
        .par_iter()
        .map(|&i| Ok(relative_error(analytic[i], central_difference(&f, x, eps, i)?)))
        .collect::<Result<Vec<f64>>>()?;
    // NaN propagates instead of being dropped by max
    Ok(errors.into_iter().fold(0.0, |a, e| if a.is_nan() || e.is_nan() { f64::NAN } else { a.max(e) }))
}

pub fn central_difference<F>(f: &F, x: &Tensor<f64>, eps: f64, i: usize) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    Ok((eval(f, plus)? - eval(f, minus)?) / (2.0 * eps))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Evenly spaced subset of `0..n` with at most `max` entries.
pub fn sample_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

/// A named quantity whose gradient should be verified.
pub struct Component {
    pub name: String,
    check: Box<dyn Fn(f64) -> Result<f64> + Send + Sync>,
}

impl Component {
    /// `check` receives the finite-difference step and returns the max relative error.
    pub fn new(name: impl Into<String>, check: impl Fn(f64) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self { name: name.into(), check: Box::new(check) }
    }

    /// Component from a scalar tape function and a probe point.
    pub fn from_fn<F>(name: impl Into<String>, x: Tensor<f64>, f: F) -> Self
    where
        F: Fn(&mut Tape<f64>, Var) -> Result<Var> + Send + Sync + 'static,
    {
        Self::new(name, move |eps| grad_check(&f, &x, eps))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.threshold)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(9);
        writeln!(f, "{:<width$}  {:>14}  status", "component", "max_rel_err")?;
        for e in &self.entries {
            let ok = e.max_rel_error < self.threshold;
            writeln!(
                f,
                "{:<width$}  {:>14.3e}  {}",
                e.name,
                e.max_rel_error,
                if ok { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "threshold {:.0e}: {}", self.threshold, if self.passed() { "PASS" } else { "FAIL" })
    }
}

pub fn run_components(components: &[Component], eps: f64, threshold: f64) -> Result<GradcheckReport> {
    let mut entries = Vec::with_capacity(components.len());
    for c in components {
        let err = (c.check)(eps)?;
        // NaN must never pass
        let err = if err.is_nan() { f64::INFINITY } else { err };
        entries.push(GradcheckEntry { name: c.name.clone(), max_rel_error: err });
    }
    Ok(GradcheckReport { entries, threshold })
}

fn random_tensor(shape: &[usize], seed: SeedStream) -> Tensor<f64> {
    let mut rng = seed.rng();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradient checks for every primitive operation of the engine.
///
/// Each primitive is composed with a fixed random weighting so the scalar loss has a
/// generic (non-symmetric) gradient.
pub fn primitive_components(seed: SeedStream) -> Vec<Component> {
    let r = |label: &str, shape: &[usize]| random_tensor(shape, seed.split_named(label));

    fn weighted(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv)?;
        Ok(tape.sum(p))
    }

    let mut out = Vec::new();

    let b = r("add.b", &[4]);
    let w = r("add.w", &[3, 4]);
    out.push(Component::from_fn("add", r("add.x", &[3, 4]), move |t, x| {
        let bv = t.param(b.clone());
        let y = t.add(x, bv)?;
        weighted(t, y, &w)
    }));

    let b = r("sub.b", &[2, 1]);
    let w = r("sub.w", &[2, 3]);
    out.push(Component::from_fn("sub", r("sub.x", &[2, 3]), move |t, x| {
        let bv = t.constant(b.clone());
        let y = t.sub(bv, x)?;
        weighted(t, y, &w)
    }));

    let b = r("mul.b", &[3, 1, 4]);
    let w = r("mul.w", &[3, 2, 4]);
    out.push(Component::from_fn("mul", r("mul.x", &[2, 4]), move |t, x| {
        let bv = t.constant(b.clone());
        let y = t.mul(x, bv)?;
        let y2 = t.mul(y, x)?;
        weighted(t, y2, &w)
    }));

    let w = r("scale.w", &[5]);
    out.push(Component::from_fn("scale", r("scale.x", &[5]), move |t, x| {
        let y = t.scale(x, -2.5);
        weighted(t, y, &w)
    }));

    let b = r("matmul.b", &[2, 4, 3]);
    let w = r("matmul.w", &[2, 5, 3]);
    out.push(Component::from_fn("matmul", r("matmul.x", &[5, 4]), move |t, x| {
        let bv = t.constant(b.clone());
        let y = t.matmul(x, bv)?;
        weighted(t, y, &w)
    }));

    let a = r("matmul_rhs.a", &[3, 2, 4]);
    let w = r("matmul_rhs.w", &[3, 2, 3]);
    out.push(Component::from_fn("matmul_rhs", r("matmul_rhs.x", &[4, 3]), move |t, x| {
        let av = t.constant(a.clone());
        let y = t.matmul(av, x)?;
        weighted(t, y, &w)
    }));

    let w = r("softmax.w", &[3, 5]);
    out.push(Component::from_fn("softmax", r("softmax.x", &[3, 5]), move |t, x| {
        let y = t.softmax(x, 1)?;
        weighted(t, y, &w)
    }));

    let w = r("softmax_axis0.w", &[3, 5]);
    out.push(Component::from_fn("softmax_axis0", r("softmax_axis0.x", &[3, 5]), move |t, x| {
        let y = t.softmax(x, 0)?;
        weighted(t, y, &w)
    }));

    let g = r("layer_norm.gamma", &[6]);
    let bt = r("layer_norm.beta", &[6]);
    let w = r("layer_norm.w", &[4, 6]);
    out.push(Component::from_fn("layer_norm", r("layer_norm.x", &[4, 6]), move |t, x| {
        let gv = t.constant(g.clone());
        let bv = t.constant(bt.clone());
        let y = t.layer_norm(x, gv, bv, 1e-5)?;
        weighted(t, y, &w)
    }));

    let xln = r("layer_norm_affine.x", &[4, 6]);
    let w = r("layer_norm_affine.w", &[4, 6]);
    out.push(Component::from_fn("layer_norm_affine", r("layer_norm_affine.p", &[2, 6]), move |t, p| {
        let x = t.constant(xln.clone());
        let gamma = t.gather(p, (0..6).collect(), &[6])?;
        let beta = t.gather(p, (6..12).collect(), &[6])?;
        let y = t.layer_norm(x, gamma, beta, 1e-5)?;
        weighted(t, y, &w)
    }));

    let wk = r("conv2d_3x3.k", &[3, 3, 2, 3]);
    let bias = r("conv2d_3x3.b", &[3]);
    let w = r("conv2d_3x3.w", &[5, 4, 3]);
    out.push(Component::from_fn("conv2d_3x3", r("conv2d_3x3.x", &[5, 4, 2]), move |t, x| {
        let k = t.constant(wk.clone());
        let b = t.constant(bias.clone());
        let y = t.conv2d_3x3(x, k, b)?;
        weighted(t, y, &w)
    }));

    let xin = r("conv2d_3x3_weights.x", &[4, 5, 2]);
    let w = r("conv2d_3x3_weights.w", &[4, 5, 3]);
    out.push(Component::from_fn("conv2d_3x3_weights", r("conv2d_3x3_weights.p", &[57]), move |t, p| {
        let x = t.constant(xin.clone());
        let k = t.gather(p, (0..54).collect(), &[3, 3, 2, 3])?;
        let b = t.gather(p, (54..57).collect(), &[3])?;
        let y = t.conv2d_3x3(x, k, b)?;
        weighted(t, y, &w)
    }));

    let w = r("gelu.w", &[7]);
    out.push(Component::from_fn("gelu", r("gelu.x", &[7]).map(|v| 3.0 * v), move |t, x| {
        let y = t.gelu(x);
        weighted(t, y, &w)
    }));

    let w = r("abs.w", &[6]);
    out.push(Component::from_fn("abs", r("abs.x", &[6]), move |t, x| {
        let y = t.abs(x);
        weighted(t, y, &w)
    }));

    out.push(Component::from_fn("sum", r("sum.x", &[2, 3]), |t, x| Ok(t.sum(x))));
    out.push(Component::from_fn("mean", r("mean.x", &[2, 3]), |t, x| Ok(t.mean(x))));

    let w = r("gather.w", &[5]);
    out.push(Component::from_fn("gather", r("gather.x", &[4]), move |t, x| {
        let y = t.gather(x, vec![3, 0, 0, 2, 3], &[5])?;
        weighted(t, y, &w)
    }));

    let w = r("permute.w", &[4, 2, 3]);
    out.push(Component::from_fn("permute", r("permute.x", &[2, 3, 4]), move |t, x| {
        let y = t.permute(x, &[2, 0, 1])?;
        weighted(t, y, &w)
    }));

    let w = r("reshape.w", &[3, 2]);
    out.push(Component::from_fn("reshape", r("reshape.x", &[2, 3]), move |t, x| {
        let y = t.reshape(x, &[3, 2])?;
        weighted(t, y, &w)
    }));

    out
}
