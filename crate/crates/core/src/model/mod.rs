//! Skip-connected 1-D CNN: `n_blocks` encoding blocks
//! `conv → batchnorm → ELU → dropout → maxpool`, where every block from the
//! second on also adds its max-pooled input, followed by a three-layer
//! fully connected head.

mod config;

pub use config::EncoderConfig;

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::seed;
use crate::tensor::{
    read_checkpoint, write_checkpoint, BatchNormStats, Checkpoint, Mode, NamedTensor, Scalar, Tape,
    Tensor, TensorError, Var,
};

const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    conv_w: Tensor<T>,
    conv_b: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    stats: BatchNormStats<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense<T> {
    w: Tensor<T>,
    b: Tensor<T>,
}

/// Tape handles of every learnable tensor, in [`SkipCnnModel::parameters`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipCnnModel<T = f32> {
    config: EncoderConfig,
    blocks: Vec<Block<T>>,
    head: Vec<Dense<T>>,
    mode: Mode,
    frozen: bool,
}

fn uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

/// Paper-default sizes with `seed`-determined initial weights, `f32`.
pub fn build_model(config: EncoderConfig, seed: u64) -> Result<SkipCnnModel<f32>> {
    SkipCnnModel::new(config, seed)
}

impl<T: Scalar> SkipCnnModel<T> {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases and BN shift zero, BN
    /// scale one.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let (f, k) = (config.feature_channels, config.kernel_size);
        let blocks = (0..config.n_blocks)
            .map(|i| {
                let cin = if i == 0 { config.input_channels } else { f };
                Block {
                    conv_w: uniform(&[f, cin, k], cin * k, &mut rng),
                    conv_b: Tensor::zeros(&[f]),
                    gamma: Tensor::full(&[f], T::one()),
                    beta: Tensor::zeros(&[f]),
                    stats: BatchNormStats::new(f),
                }
            })
            .collect();
        let widths = [
            config.latent_features(),
            config.head_hidden,
            config.head_hidden,
            config.n_classes,
        ];
        let head = widths
            .windows(2)
            .map(|w| Dense {
                w: uniform(&[w[1], w[0]], w[0], &mut rng),
                b: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            config,
            blocks,
            head,
            mode: Mode::Train,
            frozen: false,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// A frozen model keeps its batchnorm running statistics fixed even in
    /// train mode; optimisers leave its parameters alone.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn latent_features(&self) -> usize {
        self.config.latent_features()
    }

    /// Names and values of the learnable tensors.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let k = i + 1;
            out.push((format!("block{k}.conv.weight"), &b.conv_w));
            out.push((format!("block{k}.conv.bias"), &b.conv_b));
            out.push((format!("block{k}.bn.gamma"), &b.gamma));
            out.push((format!("block{k}.bn.beta"), &b.beta));
        }
        for (j, d) in self.head.iter().enumerate() {
            let k = j + 1;
            out.push((format!("head{k}.weight"), &d.w));
            out.push((format!("head{k}.bias"), &d.b));
        }
        out
    }

    /// Same order as [`Self::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv_w);
            out.push(&mut b.conv_b);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        for d in &mut self.head {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let idx = self.parameters().iter().position(|(n, _)| n == name)?;
        self.parameters_mut().into_iter().nth(idx)
    }

    /// Running statistics of 1-based block `k`.
    pub fn batchnorm_stats(&self, k: usize) -> Option<&BatchNormStats<T>> {
        self.blocks.get(k.checked_sub(1)?).map(|b| &b.stats)
    }

    /// Learnable element count; running statistics are not parameters.
    pub fn count_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copies every learnable tensor onto `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .parameters()
                .into_iter()
                .map(|(_, t)| tape.param(t.clone()))
                .collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.input_channels || shape[2] != c.input_samples {
            return Err(TensorError::Shape {
                op: "forward",
                detail: format!(
                    "batch {shape:?} vs configured [batch, {}, {}]",
                    c.input_channels, c.input_samples
                ),
            }
            .into());
        }
        Ok(())
    }

    /// Encoder on a tape: `[batch, C, T]` to `[batch, latent]`.
    pub fn encode_on<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        input: Var,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        let c = self.config.clone();
        let alpha = T::from_f64_lossy(ELU_ALPHA);
        let mode = self.mode;
        let frozen = self.frozen;
        let mut x = input;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = &params.vars[4 * i..4 * i + 4];
            let h = tape.conv1d(x, p[0], Some(p[1]), 1, c.kernel_size / 2)?;
            let h = if frozen {
                let mut scratch = block.stats.clone();
                tape.batchnorm1d(h, p[2], p[3], &mut scratch, mode)?
            } else {
                tape.batchnorm1d(h, p[2], p[3], &mut block.stats, mode)?
            };
            let h = tape.elu(h, alpha);
            let h = tape.dropout(h, c.dropout_p, mode, rng)?;
            let mut y = tape.maxpool1d(h, c.pool_kernel, c.pool_stride)?;
            if c.has_skip(i + 1) {
                let shortcut = tape.maxpool1d(x, c.pool_kernel, c.pool_stride)?;
                y = tape.add(y, shortcut)?;
            }
            x = y;
        }
        let batch = tape.shape(x)[0];
        Ok(tape.reshape(x, vec![batch, c.latent_features()])?)
    }

    /// Classifier head on a tape: `[batch, latent]` to `[batch, n_classes]`.
    pub fn head_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        latent: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let base = 4 * self.blocks.len();
        let p = &params.vars[base..base + 6];
        let alpha = T::from_f64_lossy(ELU_ALPHA);
        let mut h = latent;
        for j in 0..2 {
            h = tape.linear(h, p[2 * j], Some(p[2 * j + 1]))?;
            h = tape.elu(h, alpha);
            h = tape.dropout(h, self.config.dropout_p, self.mode, rng)?;
        }
        let out = tape.linear(h, p[4], Some(p[5]))?;
        if self.config.output_softmax {
            Ok(tape.softmax(out)?)
        } else {
            Ok(out)
        }
    }

    pub fn forward_on<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        input: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let latent = self.encode_on(tape, params, input, rng)?;
        self.head_on(tape, params, latent, rng)
    }

    /// Class probabilities (or raw scores) for a `[batch, C, T]` batch.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        let out = self.forward_on(&mut tape, &params, x, rng)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        let out = self.encode_on(&mut tape, &params, x, rng)?;
        Ok(tape.value(out).clone())
    }

    pub fn head<R: Rng + ?Sized>(&self, latent: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.constant(latent.clone());
        let out = self.head_on(&mut tape, &params, x, rng)?;
        Ok(tape.value(out).clone())
    }

    /// Parameters, running statistics and the config record.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<NamedTensor> = self
            .parameters()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                tensor: t.cast(),
            })
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            let f = b.stats.running_mean.len();
            for (what, v) in [("running_mean", &b.stats.running_mean), ("running_var", &b.stats.running_var)] {
                tensors.push(NamedTensor {
                    name: format!("block{}.bn.{what}", i + 1),
                    tensor: Tensor::new(vec![f], v.clone()).expect("sized by channels").cast(),
                });
            }
        }
        Checkpoint {
            tensors,
            config: Some(self.config.to_text()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let text = ckpt
            .config
            .as_deref()
            .ok_or_else(|| ModelError::Checkpoint("missing config record".into()))?;
        let config = EncoderConfig::parse(text)?;
        let mut model = Self::new(config, 0)?;
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let t = ckpt
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        for (i, b) in model.blocks.iter_mut().enumerate() {
            for (what, dst) in [
                ("running_mean", &mut b.stats.running_mean),
                ("running_var", &mut b.stats.running_var),
            ] {
                let name = format!("block{}.bn.{what}", i + 1);
                let t = ckpt
                    .get(&name)
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
                if t.numel() != dst.len() {
                    return Err(ModelError::Checkpoint(format!("{name}: wrong length")));
                }
                *dst = t.cast::<T>().into_data();
            }
        }
        model.mode = Mode::Eval;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(write_checkpoint(&self.to_checkpoint())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
