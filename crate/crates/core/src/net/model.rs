use rand_distr::{Distribution, Normal};

use super::config::{SstConfig, Stage};
use super::layers::{AttnParams, Conv, Linear, Norm, RssbParams, SstParams, SstlParams, StageParams};
use super::{NetError, Result};
use crate::rng::SeedStream;
use crate::tensor::optim::xavier_init;
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier,
    Zeros,
    Ones,
    /// Normal(0, 0.02) clipped to ±0.04.
    SmallNormal,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Visits every parameter in canonical order, letting `f` supply the tape variable.
fn walk<F>(config: &SstConfig, f: &mut F) -> crate::tensor::Result<SstParams>
where
    F: FnMut(&str, &[usize], Init) -> crate::tensor::Result<Var>,
{
    let (b, c, h) = (config.bands, config.channels, config.mlp_hidden());
    let m = config.window;
    let conv = |f: &mut F, name: &str, cin: usize, cout: usize| -> crate::tensor::Result<Conv> {
        Ok(Conv {
            weight: f(&format!("{name}.weight"), &[3, 3, cin, cout], Init::Xavier)?,
            bias: f(&format!("{name}.bias"), &[cout], Init::Zeros)?,
        })
    };
    let linear = |f: &mut F, name: &str, cin: usize, cout: usize| -> crate::tensor::Result<Linear> {
        Ok(Linear {
            weight: f(&format!("{name}.weight"), &[cin, cout], Init::Xavier)?,
            bias: f(&format!("{name}.bias"), &[cout], Init::Zeros)?,
        })
    };
    let norm = |f: &mut F, name: &str| -> crate::tensor::Result<Norm> {
        Ok(Norm {
            gamma: f(&format!("{name}.gamma"), &[c], Init::Ones)?,
            beta: f(&format!("{name}.beta"), &[c], Init::Zeros)?,
        })
    };
    let attn = |f: &mut F, name: &str| -> crate::tensor::Result<AttnParams> {
        Ok(AttnParams {
            q: linear(f, &format!("{name}.q"), c, c)?,
            k: linear(f, &format!("{name}.k"), c, c)?,
            v: linear(f, &format!("{name}.v"), c, c)?,
            proj: linear(f, &format!("{name}.proj"), c, c)?,
        })
    };

    let head = conv(f, "head", b, c)?;
    let mut blocks = Vec::with_capacity(config.rssb_count);
    for t in 0..config.rssb_count {
        let mut layers = Vec::with_capacity(config.sstl_per_rssb);
        for l in 0..config.sstl_per_rssb {
            let pre = format!("blocks.{t}.layers.{l}");
            let norm1 = norm(f, &format!("{pre}.norm1"))?;
            let mut stages = Vec::new();
            for (s, kind) in config.attention_order.stages().iter().enumerate() {
                stages.push(match kind {
                    Stage::Nlsa => {
                        let name = format!("{pre}.stage{s}.nlsa");
                        let attn = attn(f, &name)?;
                        let side = 2 * m - 1;
                        let bias_table =
                            f(&format!("{name}.bias_table"), &[config.heads, side * side], Init::SmallNormal)?;
                        StageParams::Nlsa { attn, bias_table }
                    }
                    Stage::Gsa => StageParams::Gsa { attn: attn(f, &format!("{pre}.stage{s}.gsa"))? },
                });
            }
            let norm2 = norm(f, &format!("{pre}.norm2"))?;
            let fc1 = linear(f, &format!("{pre}.mlp.fc1"), c, h)?;
            let fc2 = linear(f, &format!("{pre}.mlp.fc2"), h, c)?;
            layers.push(SstlParams { norm1, stages, norm2, fc1, fc2 });
        }
        blocks.push(RssbParams { layers, conv: conv(f, &format!("blocks.{t}.conv"), c, c)? });
    }
    let tail1 = conv(f, "tail1", c, c)?;
    let tail2 = conv(f, "tail2", c, b)?;
    Ok(SstParams { head, blocks, tail1, tail2 })
}

/// Every parameter of a configuration, in canonical order.
pub fn param_layout(config: &SstConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut scratch = Tape::<f32>::new();
    let dummy = scratch.constant(Tensor::scalar(0.0));
    walk(config, &mut |name, shape, init| {
        out.push(ParamSpec { name: name.to_owned(), shape: shape.to_vec(), init });
        Ok(dummy)
    })
    .expect("layout walk has no failure path");
    out
}

fn init_tensor<T: Real>(spec: &ParamSpec, seed: SeedStream) -> Tensor<T> {
    match spec.init {
        Init::Xavier => xavier_init(&spec.shape, seed).expect("weights have rank >= 2"),
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Ones => Tensor::ones(&spec.shape),
        Init::SmallNormal => {
            let mut rng = seed.rng();
            let normal = Normal::<f64>::new(0.0, 0.02).unwrap();
            let n = spec.shape.iter().product();
            let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng).clamp(-0.04, 0.04))).collect();
            Tensor::new(spec.shape.clone(), data).unwrap()
        }
    }
}

/// How [`SstModel::bind`] exposes parameters on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Leaves that accumulate gradients.
    Trainable,
    /// Constants; no gradients are tracked.
    Frozen,
}

/// Named parameter tensors of one network, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct SstModel<T> {
    config: SstConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> SstModel<T> {
    /// Xavier-uniform weights, zero biases, unit norm gains; each tensor seeded by its name.
    pub fn init(config: &SstConfig, seed: SeedStream) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(config);
        let tensors = layout.iter().map(|p| init_tensor(p, seed.split_named(&p.name))).collect();
        let names = layout.into_iter().map(|p| p.name).collect();
        Ok(Self { config: config.clone(), names, tensors })
    }

    /// Assembles a model from named tensors, checking them against the layout of `config`.
    pub fn from_tensors(config: &SstConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(config);
        if layout.len() != named.len() {
            return Err(NetError::Config(format!(
                "configuration has {} tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        for (spec, (name, t)) in layout.iter().zip(&named) {
            if spec.name != *name || spec.shape != t.shape() {
                return Err(NetError::Config(format!(
                    "expected {} {:?}, got {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { config: config.clone(), names, tensors })
    }

    pub fn config(&self) -> &SstConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters held.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Sets every tensor whose name satisfies `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (n, t) in self.names.iter().zip(&mut self.tensors) {
            if pred(n) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn cast<U: Real>(&self) -> SstModel<U> {
        SstModel {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Tensor<T> {
        let data: Vec<T> = self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(vec![data.len()], data).expect("model has parameters")
    }

    /// Places the parameters on `tape` and returns the handles the forward pass needs.
    /// Returns the variables in canonical order alongside the structured view.
    pub fn bind(&self, tape: &mut Tape<T>, binding: Binding) -> Result<(SstParams, Vec<Var>)> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        let mut i = 0;
        let params = walk(&self.config, &mut |name, _, _| {
            debug_assert_eq!(self.names[i], name);
            let t = self.tensors[i].clone();
            i += 1;
            let v = match binding {
                Binding::Trainable => tape.param(t),
                Binding::Frozen => tape.constant(t),
            };
            vars.push(v);
            Ok(v)
        })?;
        Ok((params, vars))
    }

    /// Binds parameters as slices of one flat vector variable (see [`flatten`](Self::flatten)),
    /// so a single gradient covers the whole model.
    pub fn bind_flat(&self, tape: &mut Tape<T>, flat: Var) -> Result<SstParams> {
        let total = self.param_count();
        if tape.shape(flat) != [total] {
            return Err(TensorError::Shape { op: "bind_flat", lhs: tape.shape(flat).to_vec(), rhs: vec![total] }.into());
        }
        let mut offset = 0;
        Ok(walk(&self.config, &mut |_, shape, _| {
            let n: usize = shape.iter().product();
            let v = tape.gather(flat, (offset..offset + n).collect(), shape)?;
            offset += n;
            Ok(v)
        })?)
    }
}

/// Names of the tensors that end each residual branch: attention output projections, MLP
/// output layers, block convolutions and the last tail convolution. Zeroing them turns the
/// corresponding block into an identity map.
pub fn is_branch_output(name: &str) -> bool {
    name.contains(".proj.") || name.contains(".mlp.fc2.") || name.contains(".conv.") || name.starts_with("tail2.")
}
