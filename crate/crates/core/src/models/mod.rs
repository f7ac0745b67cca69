//! The five architectures, their configuration and receptive-field
//! accounting.
//!
//! Parameter names follow the module path of each layer, e.g.
//! `blocks.3.conv.weight` (TCN), `blocks.1.stacks.2.film.gen2.bias`
//! (WaveNet), `blocks.0.layers.1.mix.weight` (GCN) or `rnn.w_hh`
//! (recurrent kinds). Every kind ends in a 1×1 `head`.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, ModelKind, ReceptiveField, POOL_KERNEL, POOL_STRIDE};

use crate::error::{Error, Result};
use crate::nn::{self, Bound, Mode, ParamInit, ParamStore, BN_MOMENTUM};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    /// Batch-norm running statistics (empty unless `use_batchnorm`).
    buffers: ParamStore,
}

fn tcn_block(i: usize) -> String {
    format!("blocks.{i}")
}

fn wavenet_stack(b: usize, s: usize) -> String {
    format!("blocks.{b}.stacks.{s}")
}

fn gcn_layer(b: usize, l: usize) -> String {
    format!("blocks.{b}.layers.{l}")
}

impl Model {
    /// Builds a model with parameters drawn deterministically from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = ParamInit::new(&mut rng);
        let mut films: Vec<(String, usize)> = Vec::new();
        let (c, k, cd) = (config.channels, config.kernel_size, config.cond_dim);
        match config.kind {
            ModelKind::Tcn => {
                for i in 0..config.n_blocks {
                    let name = tcn_block(i);
                    init.conv(&format!("{name}.conv"), if i == 0 { 1 } else { c }, c, k);
                    if i == 0 {
                        init.conv(&format!("{name}.res"), 1, c, 1);
                    }
                    init.film(&format!("{name}.film"), cd, c);
                    init.prelu(&format!("{name}.prelu"), c);
                    films.push((format!("{name}.film"), c));
                }
            }
            ModelKind::WaveNet => {
                init.conv("input", 1, c, 1);
                for b in 0..config.n_blocks {
                    for s in 0..config.stacks_per_block {
                        let name = wavenet_stack(b, s);
                        init.conv(&format!("{name}.conv"), c, c, k);
                        init.film(&format!("{name}.film"), cd, c);
                        init.prelu(&format!("{name}.prelu"), c);
                        films.push((format!("{name}.film"), c));
                    }
                }
            }
            ModelKind::Gcn => {
                init.conv("input", 1, c, 1);
                for b in 0..config.n_blocks {
                    for l in 0..config.stacks_per_block {
                        let name = gcn_layer(b, l);
                        init.conv(&format!("{name}.conv"), c, 2 * c, k);
                        init.film(&format!("{name}.film"), cd, 2 * c);
                        init.conv(&format!("{name}.mix"), c, c, 1);
                        films.push((format!("{name}.film"), 2 * c));
                    }
                }
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let h = config.hidden_size;
                init.conv("front", 1, c, k);
                if config.kind == ModelKind::Lstm {
                    init.lstm("rnn", c, h);
                } else {
                    init.gru("rnn", c, h);
                }
                init.film("film", cd, h);
                films.push(("film".into(), h));
            }
        }
        let head_in = if config.kind.is_recurrent() {
            config.hidden_size
        } else {
            c
        };
        init.conv("head", head_in, 1, 1);

        let mut buffers = ParamStore::new();
        if config.use_batchnorm {
            for (name, ch) in films {
                buffers.insert(format!("{name}.bn.running_mean"), Tensor::zeros(vec![ch]));
                buffers.insert(format!("{name}.bn.running_var"), Tensor::ones(vec![ch]));
            }
        }
        let params = init.store;
        debug_assert_eq!(params.numel(), config.param_count());
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Reassembles a model from stored tensors, checking names and shapes
    /// against a fresh build of `config`.
    pub fn from_parts(config: ModelConfig, params: ParamStore, buffers: ParamStore) -> Result<Self> {
        let reference = Self::build(config, 0)?;
        for (want, got) in [(&reference.params, &params), (&reference.buffers, &buffers)] {
            if want.specs() != got.specs() {
                return Err(Error::invalid(
                    "stored tensors do not match the model configuration",
                ));
            }
        }
        Ok(Self {
            config: reference.config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn receptive_field(&self) -> ReceptiveField {
        self.config.receptive_field()
    }

    /// Folds batch statistics recorded during a training forward pass into
    /// the running estimates (stored at `f32` precision). Several records for one buffer (one per
    /// tape) are averaged first.
    pub fn update_running_stats(&mut self, stats: &[(String, Tensor)]) -> Result<()> {
        let mut names: Vec<&str> = stats.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        for name in names {
            let records: Vec<&Tensor> = stats.iter().filter(|(n, _)| n == name).map(|(_, t)| t).collect();
            let current = self
                .buffers
                .get(name)
                .ok_or_else(|| Error::invalid(format!("unknown buffer {name}")))?;
            let n = records.len() as f64;
            let mut batch = vec![0.0; current.numel()];
            for r in &records {
                batch.iter_mut().zip(r.data()).for_each(|(a, b)| *a += b / n);
            }
            let updated: Vec<f64> = current
                .data()
                .iter()
                .zip(&batch)
                .map(|(r, b)| ((1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b) as f32 as f64)
                .collect();
            self.buffers.set(name, Tensor::new(current.shape().to_vec(), updated)?)?;
        }
        Ok(())
    }

    /// Forward pass `x [B×1×T]`, `cond [B×C_cond]` → `[B×1×T]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, cond: Var<'t>, mode: Mode) -> Result<Var<'t>> {
        let shape = x.shape();
        let [batch, 1, t] = shape[..] else {
            return Err(Error::invalid(format!("model input must be [B×1×T], got {shape:?}")));
        };
        if cond.shape() != [batch, self.config.cond_dim] {
            return Err(Error::ShapeMismatch {
                op: "model conditioning",
                lhs: vec![batch, self.config.cond_dim],
                rhs: cond.shape(),
            });
        }
        if let ReceptiveField::Samples(rf) = self.receptive_field() {
            if t < rf {
                return Err(Error::InputTooShort {
                    required: rf,
                    actual: t,
                });
            }
        } else if t == 0 {
            return Err(Error::InputTooShort {
                required: 1,
                actual: 0,
            });
        }
        let norm = self.config.use_batchnorm.then_some((&self.buffers, mode));
        let cfg = &self.config;
        match cfg.kind {
            ModelKind::Tcn => {
                let mut h = x;
                for (i, d) in cfg.dilations().into_iter().enumerate() {
                    let name = tcn_block(i);
                    let y = nn::causal_conv(h, p, &format!("{name}.conv"), d)?;
                    let y = nn::film(y, cond, p, &format!("{name}.film"), norm)?;
                    let y = nn::prelu(y, p.get(&format!("{name}.prelu.slope"))?)?;
                    let res = if i == 0 {
                        nn::conv1x1(h, p, &format!("{name}.res"))?
                    } else {
                        h
                    };
                    h = y.add(res)?;
                }
                nn::conv1x1(h, p, "head")
            }
            ModelKind::WaveNet => {
                let mut h = nn::conv1x1(x, p, "input")?;
                let mut skip: Option<Var<'t>> = None;
                for b in 0..cfg.n_blocks {
                    for s in 0..cfg.stacks_per_block {
                        let name = wavenet_stack(b, s);
                        let d = cfg.dilation_growth.pow(s as u32);
                        let y = nn::causal_conv(h, p, &format!("{name}.conv"), d)?;
                        let y = nn::film(y, cond, p, &format!("{name}.film"), norm)?;
                        let y = nn::prelu(y, p.get(&format!("{name}.prelu.slope"))?)?;
                        skip = Some(match skip {
                            Some(acc) => acc.add(y)?,
                            None => y,
                        });
                        h = h.add(y)?;
                    }
                }
                let out = if cfg.use_skip { skip.unwrap_or(h) } else { h };
                nn::conv1x1(out, p, "head")
            }
            ModelKind::Gcn => {
                let mut h = nn::conv1x1(x, p, "input")?;
                let mut skip: Option<Var<'t>> = None;
                for b in 0..cfg.n_blocks {
                    for l in 0..cfg.stacks_per_block {
                        let name = gcn_layer(b, l);
                        let d = cfg.dilation_growth.pow(l as u32);
                        let w = p.get(&format!("{name}.conv.weight"))?;
                        let bias = p.get(&format!("{name}.conv.bias"))?;
                        // valid convolution, then zeros in front restore the length
                        let y = h.conv1d(w, Some(bias), d, 0)?;
                        let y = nn::film(y, cond, p, &format!("{name}.film"), norm)?;
                        let y = nn::gated_activation(y)?;
                        let y = y.pad_left(d * (cfg.kernel_size - 1))?;
                        let y = nn::conv1x1(y, p, &format!("{name}.mix"))?;
                        skip = Some(match skip {
                            Some(acc) => acc.add(y)?,
                            None => y,
                        });
                        h = h.add(y)?;
                    }
                }
                let out = if cfg.use_skip { skip.unwrap_or(h) } else { h };
                nn::conv1x1(out, p, "head")
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let y = nn::causal_conv(x, p, "front", 1)?.relu();
                let y = nn::max_pool1d(y, POOL_KERNEL, POOL_STRIDE)?;
                let (w_ih, w_hh, bias) = (p.get("rnn.w_ih")?, p.get("rnn.w_hh")?, p.get("rnn.bias")?);
                let y = if cfg.kind == ModelKind::Lstm {
                    nn::lstm_forward(y, w_ih, w_hh, bias, None, None)?.y
                } else {
                    nn::gru_forward(y, w_ih, w_hh, bias, None)?.y
                };
                let y = nn::film(y, cond, p, "film", norm)?;
                let y = nn::conv1x1(y, p, "head")?;
                match cfg.kind {
                    ModelKind::Gru => Ok(y.tanh()),
                    _ if cfg.use_skip => y.add(x),
                    _ => Ok(y),
                }
            }
        }
    }

    /// Evaluation-mode forward pass without gradient bookkeeping.
    pub fn infer(&self, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape, false);
        let y = self.forward(&p, tape.constant(x.clone()), tape.constant(cond.clone()), Mode::Eval)?;
        Ok(y.value())
    }

    /// Processes one mono signal.
    pub fn process(&self, samples: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::new(vec![1, 1, samples.len()], samples.to_vec())?;
        let c = Tensor::new(vec![1, cond.len()], cond.to_vec())?;
        Ok(self.infer(&x, &c)?.into_vec())
    }
}
