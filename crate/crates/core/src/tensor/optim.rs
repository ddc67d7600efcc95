//! Adam and Xavier-uniform initialization.

use rand::Rng;

use super::{Real, Result, Tensor, TensorError};
use crate::rng::SeedStream;

/// Moments and hyperparameters of an Adam optimizer over a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        Self {
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[&[T]],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(TensorError::Shape {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.first_moment.len()],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || p.numel() != state.first_moment[i].len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let c1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));
    let lr = T::from_f64_lossy(state.learning_rate);
    let eps = T::from_f64_lossy(state.eps);
    let one = T::one();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Fan-in and fan-out of a weight laid out as `[..receptive, in, out]`.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::Param(format!(
            "xavier init needs rank >= 2, got shape {shape:?}"
        )));
    }
    let r = shape.len();
    let receptive: usize = shape[..r - 2].iter().product();
    Ok((shape[r - 2] * receptive, shape[r - 1] * receptive))
}

/// Uniform on ±√(6/(fan_in+fan_out)).
pub fn xavier_init<T: Real>(shape: &[usize], seed: SeedStream) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed.rng();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[&[0.0, 0.0, 0.0]], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        // Scalar simulation: with g constant, m̂ = g and v̂ = g² for every t, so the
        // displacement is lr·|g|/(|g|+eps).
        let lr = 1e-3;
        let g = 0.37;
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = AdamState::new(&p, lr);
        let mut prev = 0.0;
        for _ in 0..200 {
            adam_step(&mut p, &[&[g]], &mut st).unwrap();
            let now = p[0].data()[0];
            let step = (now - prev).abs();
            assert!((step - lr * g / (g + 1e-8)).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![xavier_init::<f32>(&[4, 3], SeedStream::new(5)).unwrap()];
            let mut st = AdamState::new(&p, 1e-2);
            for k in 0..10 {
                let g: Vec<f32> = (0..12).map(|i| ((i * 7 + k) % 5) as f32 - 2.0).collect();
                adam_step(&mut p, &[&g], &mut st).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a[0].data().iter().zip(b[0].data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let mut st = AdamState::new(&p, 1e-3);
        assert!(adam_step(&mut p, &[&[0.0, 0.0, 0.0]], &mut st).is_err());
    }

    #[test]
    fn xavier_variance_and_support() {
        let t = xavier_init::<f64>(&[100, 100], SeedStream::new(11)).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / 200.0;
        assert!((var - target).abs() / target < 0.2, "var {var}");

        let big = xavier_init::<f64>(&[1000, 1000], SeedStream::new(3)).unwrap();
        let bound = (6.0f64 / 2000.0).sqrt();
        assert!(big.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn xavier_is_seeded_and_rejects_rank_one() {
        let a = xavier_init::<f32>(&[3, 3, 2, 4], SeedStream::new(1)).unwrap();
        let b = xavier_init::<f32>(&[3, 3, 2, 4], SeedStream::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(fans(&[3, 3, 2, 4]).unwrap(), (18, 36));
        assert!(xavier_init::<f32>(&[5], SeedStream::new(1)).is_err());
    }
}
