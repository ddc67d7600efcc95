//! Minibatch training with on-the-fly noise, Adam and a step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use sst_core::hsi::HsiCube;
use sst_core::metrics::psnr;
use sst_core::net::{denoise, denoise_tiled, sst_forward, Binding, SstModel};
use sst_core::noise::{synthesize, NoiseKind, NoiseSpec, Sigma};
use sst_core::tensor::optim::{adam_step, AdamState};
use sst_core::tensor::{Tape, Tensor};
use sst_core::SeedStream;

use crate::config::{LossKind, RunConfig};
use crate::{CliError, Result};

/// Concrete noise for one sample: blind i.i.d Gaussian draws a single σ from the range,
/// every other kind keeps its spec and gets a fresh seed.
pub fn sample_noise_spec(base: &NoiseSpec, seed: SeedStream) -> NoiseSpec {
    let mut spec = base.clone().with_seed(seed.split_named("noise").seed());
    if let (NoiseKind::GaussianIid, Sigma::Range(lo, hi)) = (base.kind, base.sigma) {
        let s = if hi > lo { seed.split_named("sigma").rng().random_range(lo..hi) } else { lo };
        spec.sigma = Sigma::Fixed(s);
    }
    spec
}

/// Loss of one sample and the gradient for every parameter tensor, in canonical order.
pub fn loss_and_grads(
    model: &SstModel<f32>,
    clean: &HsiCube,
    noisy: &HsiCube,
    loss: LossKind,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let (params, vars) = model.bind(&mut tape, Binding::Trainable)?;
    let x = tape.constant(noisy.to_tensor());
    let y = sst_forward(&mut tape, x, &params, model.config())?;
    let target = tape.constant(clean.to_tensor());
    let diff = tape.sub(y, target)?;
    let per_elem = match loss {
        LossKind::Mse => tape.mul(diff, diff)?,
        LossKind::L1 => tape.abs(diff),
    };
    let l = tape.mean(per_elem);
    tape.backward(l)?;
    let value = tape.value(l).data()[0] as f64;
    let grads = vars
        .iter()
        .zip(model.tensors())
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub val_noisy_psnr: Option<f64>,
    pub val_psnr: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"));
        format!(
            "epoch {:>4}  lr {:.2e}  steps {:>6}  loss {:.6e}  val_noisy_psnr {}  val_psnr {}",
            self.epoch,
            self.lr,
            self.steps,
            self.mean_loss,
            opt(self.val_noisy_psnr),
            opt(self.val_psnr)
        )
    }
}

/// Held-out cube with a fixed, seeded noisy copy.
#[derive(Clone, Debug)]
pub struct ValidationCube {
    pub id: String,
    pub clean: HsiCube,
    pub noisy: HsiCube,
}

pub fn validation_set(cubes: Vec<(String, HsiCube)>, noise: &NoiseSpec, seed: u64) -> Result<Vec<ValidationCube>> {
    let root = SeedStream::new(seed).split_named("validation");
    cubes
        .into_iter()
        .map(|(id, clean)| {
            let spec = sample_noise_spec(noise, root.split_named(&id));
            let (noisy, _) = synthesize(&clean, &spec)?;
            Ok(ValidationCube { id, clean, noisy })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean PSNR of the noisy inputs and of the model outputs over a validation set.
pub fn validate(model: &SstModel<f32>, set: &[ValidationCube], cfg: &RunConfig) -> Result<(Option<f64>, Option<f64>)> {
    let scores = set
        .par_iter()
        .map(|v| {
            let out = if cfg.tiled {
                denoise_tiled(model, &v.noisy, cfg.tile, cfg.overlap)?
            } else {
                denoise(model, &v.noisy)?
            };
            Ok((psnr(&v.clean, &v.noisy)?, psnr(&v.clean, &out)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok((mean(scores.iter().map(|s| s.0)), mean(scores.iter().map(|s| s.1))))
}

/// Runs the optimization. `on_epoch` sees each epoch's log and the updated model, e.g. to
/// write a checkpoint; it may stop training by returning an error.
pub fn train<F>(
    model: &mut SstModel<f32>,
    patches: &[HsiCube],
    validation: &[ValidationCube],
    cfg: &RunConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&EpochLog, &SstModel<f32>) -> Result<()>,
{
    if patches.is_empty() {
        return Err(CliError::Data("no training patches (are the cubes smaller than the patch size?)".into()));
    }
    if cfg.batch == 0 {
        return Err(CliError::Config("batch must be positive".into()));
    }
    let noise = cfg.noise_spec()?;
    let root = SeedStream::new(cfg.seed).split_named("train");
    let mut adam = AdamState::new(model.tensors(), cfg.lr);
    let mut step = 0usize;
    let mut logs = Vec::new();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=cfg.epochs {
        if step >= limit {
            break;
        }
        adam.learning_rate = cfg.learning_rate(epoch);
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut root.split_named("shuffle").split(epoch as u64).rng());

        let (mut loss_sum, mut loss_count, first_step) = (0.0, 0usize, step);
        for batch in order.chunks(cfg.batch) {
            if step >= limit {
                break;
            }
            let step_seed = root.split_named("noise").split(step as u64);
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let spec = sample_noise_spec(&noise, step_seed.split(i as u64));
                    let (noisy, _) = synthesize(&patches[idx], &spec)?;
                    loss_and_grads(model, &patches[idx], &noisy, cfg.loss)
                })
                .collect::<Result<Vec<_>>>()?;

            let batch_loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            if !batch_loss.is_finite() {
                return Err(CliError::Numerical(format!(
                    "loss became {batch_loss} at epoch {epoch}, step {step} (lr {:.2e})",
                    adam.learning_rate
                )));
            }
            let scale = 1.0 / results.len() as f32;
            let mut grads: Vec<Vec<f32>> = model.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            for (_, g) in &results {
                for (acc, t) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(t.data()).for_each(|(a, &v)| *a += v * scale);
                }
            }
            let views: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(model.tensors_mut(), &views, &mut adam)?;
            loss_sum += batch_loss;
            loss_count += 1;
            step += 1;
        }

        let (val_noisy_psnr, val_psnr) = validate(model, validation, cfg)?;
        let log = EpochLog {
            epoch,
            lr: adam.learning_rate,
            steps: step - first_step,
            mean_loss: loss_sum / loss_count.max(1) as f64,
            val_noisy_psnr,
            val_psnr,
        };
        log::info!("{}", log.line());
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sst_core::hsi::synthetic_cube;
    use sst_core::net::SstConfig;

    #[test]
    fn blind_sigma_is_drawn_per_sample() {
        let base = NoiseSpec::blind(NoiseKind::GaussianIid, (10.0, 70.0), 0);
        let a = sample_noise_spec(&base, SeedStream::new(1));
        let b = sample_noise_spec(&base, SeedStream::new(2));
        let (Sigma::Fixed(sa), Sigma::Fixed(sb)) = (a.sigma, b.sigma) else { panic!("fixed sigma expected") };
        assert!((10.0..70.0).contains(&sa) && (10.0..70.0).contains(&sb) && sa != sb);
        assert_ne!(a.seed, b.seed);
        let fixed = sample_noise_spec(&NoiseSpec::gaussian_iid(25.0, 0), SeedStream::new(1));
        assert_eq!(fixed.sigma, Sigma::Fixed(25.0));
    }

    #[test]
    fn gradients_cover_every_tensor() {
        let model = SstModel::<f32>::init(&SstConfig::desk(3), SeedStream::new(0)).unwrap();
        let clean = synthetic_cube(8, 8, 3, SeedStream::new(1));
        let (noisy, _) = synthesize(&clean, &NoiseSpec::gaussian_iid(25.0, 2)).unwrap();
        let (loss, grads) = loss_and_grads(&model, &clean, &noisy, LossKind::Mse).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(grads.len(), model.tensors().len());
        for (g, t) in grads.iter().zip(model.tensors()) {
            assert_eq!(g.shape(), t.shape());
        }
        assert!(grads.iter().all(|g| g.data().iter().all(|v| v.is_finite())));
    }
}
