//! Finite-difference gradient checks of the network blocks.

use rand::Rng;

use super::config::SstConfig;
use super::layers::{gsa_forward, nlsa_stage, sst_forward, sstl_forward, AttnContext};
use super::model::{Binding, SstModel};
use crate::rng::SeedStream;
use crate::tensor::gradcheck::Component;
use crate::tensor::{Result, Tape, Tensor, Var};

fn random_tensor(shape: &[usize], seed: SeedStream, scale: f64) -> Tensor<f64> {
    let mut rng = seed.rng();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Model with every parameter (including gains, biases and bias tables) randomly perturbed,
/// so no gradient is checked at a special point.
pub fn perturbed_model(config: &SstConfig, seed: SeedStream) -> SstModel<f64> {
    let mut model = SstModel::<f64>::init(config, seed).expect("valid config");
    let mut rng = seed.split_named("perturb").rng();
    for t in model.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    model
}

fn weighted_sum(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// Configuration of the tiny single-layer checks: C=4, two heads, 2×2 windows.
fn tiny_config(bands: usize, layers: usize) -> SstConfig {
    SstConfig { channels: 4, heads: 2, window: 2, sstl_per_rssb: layers, ..SstConfig::desk(bands) }
}

/// Input-gradient checks of windowed attention, spectral attention and one layer, each
/// on 4×4×4 features with random parameters.
pub fn block_components(seed: SeedStream) -> Vec<Component> {
    let config = tiny_config(3, 2);
    let model = perturbed_model(&config, seed.split_named("blocks"));
    let ctx = AttnContext::from(&config);
    let x = random_tensor(&[4, 4, 4], seed.split_named("blocks.x"), 1.0);
    let w = random_tensor(&[4, 4, 4], seed.split_named("blocks.w"), 1.0);
    let mut out = Vec::new();

    for (name, shifted) in [("nlsa", false), ("nlsa_shifted", true)] {
        let (model, w) = (model.clone(), w.clone());
        out.push(Component::from_fn(name, x.clone(), move |t, xv| {
            let (p, _) = model.bind(t, Binding::Frozen).map_err(super::NetError::into_tensor)?;
            let layer = &p.blocks[0].layers[0];
            let super::layers::StageParams::Nlsa { attn, bias_table } = layer.stages[0] else { unreachable!() };
            let y = nlsa_stage(t, xv, &attn, bias_table, &ctx, shifted)?;
            weighted_sum(t, y, &w)
        }));
    }
    {
        let (model, w) = (model.clone(), w.clone());
        out.push(Component::from_fn("gsa", x.clone(), move |t, xv| {
            let (p, _) = model.bind(t, Binding::Frozen).map_err(super::NetError::into_tensor)?;
            let super::layers::StageParams::Gsa { attn } = p.blocks[0].layers[0].stages[1] else { unreachable!() };
            let (y, _) = gsa_forward(t, xv, &attn, ctx.heads)?;
            weighted_sum(t, y, &w)
        }));
    }
    for (name, shifted) in [("sstl", false), ("sstl_shifted", true)] {
        let (model, w) = (model.clone(), w.clone());
        out.push(Component::from_fn(name, x.clone(), move |t, xv| {
            let (p, _) = model.bind(t, Binding::Frozen).map_err(super::NetError::into_tensor)?;
            let y = sstl_forward(t, xv, &p.blocks[0].layers[1], &ctx, shifted)?;
            weighted_sum(t, y, &w)
        }));
    }
    out
}

/// End-to-end checks of the full network: gradient with respect to the input cube and
/// with respect to every parameter (as one flat vector).
pub fn network_components(config: &SstConfig, input_hw: (usize, usize), prefix: &str, seed: SeedStream) -> Vec<Component> {
    let model = perturbed_model(config, seed.split_named("model"));
    let shape = [input_hw.0, input_hw.1, config.bands];
    let x = random_tensor(&shape, seed.split_named("x"), 0.5).map(|v| v + 0.5);
    let w = random_tensor(&shape, seed.split_named("w"), 1.0);
    let mut out = Vec::new();
    {
        let (model, w) = (model.clone(), w.clone());
        out.push(Component::from_fn(format!("{prefix}.input"), x.clone(), move |t, xv| {
            let (p, _) = model.bind(t, Binding::Frozen).map_err(super::NetError::into_tensor)?;
            let y = sst_forward(t, xv, &p, model.config())?;
            weighted_sum(t, y, &w)
        }));
    }
    let flat = model.flatten();
    out.push(Component::from_fn(format!("{prefix}.params"), flat, move |t, fv| {
        let p = model.bind_flat(t, fv).map_err(super::NetError::into_tensor)?;
        let xv = t.constant(x.clone());
        let y = sst_forward(t, xv, &p, model.config())?;
        weighted_sum(t, y, &w)
    }));
    out
}

/// Every network check used by the `gradcheck` command: block-level checks, a single-layer
/// network, and the given configuration end to end on an `input_hw` cube.
pub fn all_network_components(config: &SstConfig, input_hw: (usize, usize), seed: SeedStream) -> Vec<Component> {
    let mut out = block_components(seed.split_named("blocks"));
    out.extend(network_components(&tiny_config(3, 1), (4, 4), "sst_single_layer", seed.split_named("l1")));
    out.extend(network_components(config, input_hw, "sst", seed.split_named("sst")));
    out
}
