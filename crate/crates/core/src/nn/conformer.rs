//! Toy Conformer acoustic model: two stride-2 3×3 convolutions, a linear
//! projection with sinusoidal positions, Conformer blocks, and a
//! log-softmax output layer over labels plus blank (blank is the last column).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{ConvGeom, Tape, Var};
use super::tensor::Mat;
use super::NnError;
use crate::features::FeatureMatrix;
use crate::loss::LogProbMatrix;

/// Shortest input the subsampling front-end accepts.
pub const MIN_FRAMES: usize = 8;

const SUB_KERNEL: usize = 3;
const SUB_STRIDE: usize = 2;
const SUB_PAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformerConfig {
    pub num_blocks: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub conv_kernel: usize,
    pub ffn_expansion: usize,
    /// Output width: label vocabulary plus blank.
    pub vocab_size_plus_blank: usize,
    pub input_dim: usize,
    /// Channels of the subsampling convolutions; `d_model / 2` when unset.
    pub subsample_channels: Option<usize>,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            d_model: 64,
            num_heads: 4,
            conv_kernel: 32,
            ffn_expansion: 4,
            vocab_size_plus_blank: 6,
            input_dim: 80,
            subsample_channels: None,
            dropout: 0.0,
            layer_norm_eps: 1e-9,
        }
    }
}

impl ConformerConfig {
    /// `(num_blocks, d_model, num_heads, conv_kernel)` with everything else default.
    pub fn sized(num_blocks: usize, d_model: usize, num_heads: usize, conv_kernel: usize) -> Self {
        Self {
            num_blocks,
            d_model,
            num_heads,
            conv_kernel,
            ..Self::default()
        }
    }

    pub fn channels(&self) -> usize {
        self.subsample_channels.unwrap_or((self.d_model / 2).max(1))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.conv_kernel == 0 || self.ffn_expansion == 0 || self.channels() == 0 {
            return bad("conv_kernel, ffn_expansion and subsample_channels must be positive".into());
        }
        if self.vocab_size_plus_blank < 2 {
            return bad(format!("vocab_size_plus_blank {} leaves no labels", self.vocab_size_plus_blank));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Frequency bins left after the two stride-2 convolutions.
    pub fn subsampled_dim(&self) -> usize {
        subsampled_len(self.input_dim)
    }
}

/// `T′ = ⌊(T₁ − 1)/2⌋ + 1` with `T₁ = ⌊(T − 1)/2⌋ + 1`: two stride-2, kernel-3
/// convolutions padded by one on each side.
pub fn subsampled_len(t: usize) -> usize {
    let once = ConvGeom::out_len(t, SUB_KERNEL, SUB_STRIDE, SUB_PAD);
    ConvGeom::out_len(once, SUB_KERNEL, SUB_STRIDE, SUB_PAD)
}

/// Closed-form number of trainable scalars for `config`.
pub fn param_count(config: &ConformerConfig) -> usize {
    let d = config.d_model;
    let c = config.channels();
    let k = SUB_KERNEL * SUB_KERNEL;
    let front = (k * c + c) + (k * c * c + c) + (c * config.subsampled_dim() * d + d);
    let ln = 2 * d;
    let ffn = ln + d * config.ffn_expansion * d + config.ffn_expansion * d + config.ffn_expansion * d * d + d;
    let mhsa = ln + 4 * (d * d + d);
    let conv = ln + (d * 2 * d + 2 * d) + (config.conv_kernel * d + d) + ln + (d * d + d);
    let block = 2 * ffn + mhsa + conv + ln;
    let out = d * config.vocab_size_plus_blank + config.vocab_size_plus_blank;
    front + config.num_blocks * block + out
}

/// Named trainable tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Mat) -> Result<usize, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.id(name).map(move |i| &mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Zero buffers shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformerModel {
    pub config: ConformerConfig,
    pub params: ParamStore,
}

struct Init<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn xavier(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Result<(), NnError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.store.insert(name, Mat::from_vec(rows, cols, data)).map(drop)
    }

    fn linear(&mut self, prefix: &str, n_in: usize, n_out: usize) -> Result<(), NnError> {
        self.xavier(&format!("{prefix}.w"), n_in, n_out, n_in, n_out)?;
        self.store.insert(&format!("{prefix}.b"), Mat::zeros(1, n_out)).map(drop)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<(), NnError> {
        self.store.insert(&format!("{prefix}.g"), Mat::filled(1, d, 1.0))?;
        self.store.insert(&format!("{prefix}.b"), Mat::zeros(1, d)).map(drop)
    }
}

/// A recorded forward pass: the tape and its log-softmax output node.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub output: Var,
}

impl ForwardPass {
    pub fn log_probs(&self) -> Result<LogProbMatrix, NnError> {
        let m = self.tape.value(self.output);
        LogProbMatrix::new(m.rows, m.cols, m.data.clone()).map_err(|e| NnError::Shape {
            module: "output".into(),
            msg: e.to_string(),
        })
    }

    /// Adds `∂L/∂params` into `grads` given `∂L/∂log-probs` (row-major).
    pub fn backward(&self, loss_grad: &[f64], grads: &mut [Mat]) -> Result<(), NnError> {
        let out = self.tape.value(self.output);
        if loss_grad.len() != out.len() {
            return Err(NnError::Shape {
                module: "output".into(),
                msg: format!("{} gradient entries for a {}x{} output", loss_grad.len(), out.rows, out.cols),
            });
        }
        let seed = Mat::from_vec(out.rows, out.cols, loss_grad.to_vec());
        self.tape.backward(self.output, &seed, grads)
    }
}

/// Builder state while a forward pass is recorded.
struct Ctx<'a> {
    model: &'a ConformerModel,
    tape: Tape,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Ctx<'_> {
    fn p(&mut self, name: &str) -> Result<Var, NnError> {
        let id = self
            .model
            .params
            .id(name)
            .ok_or_else(|| NnError::Config(format!("missing parameter {name}")))?;
        Ok(self.tape.param(id, self.model.params.get(id).clone()))
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var, NnError> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.tape.matmul(x, w, prefix)?;
        self.tape.add_row(y, b, prefix)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var, NnError> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.tape.layer_norm(x, g, b, self.model.config.layer_norm_eps, prefix)
    }

    fn dropout(&mut self, x: Var) -> Var {
        let rate = self.model.config.dropout;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.tape.value(x).len();
        let mask = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        self.tape.dropout(x, mask)
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var, NnError> {
        let h = self.norm(x, &format!("{prefix}.ln"))?;
        let h = self.linear(h, &format!("{prefix}.l1"))?;
        let h = self.tape.swish(h);
        let h = self.dropout(h);
        let h = self.linear(h, &format!("{prefix}.l2"))?;
        Ok(self.dropout(h))
    }

    fn mhsa(&mut self, x: Var, prefix: &str) -> Result<Var, NnError> {
        let cfg = &self.model.config;
        let (heads, dk) = (cfg.num_heads, cfg.d_model / cfg.num_heads);
        let h = self.norm(x, &format!("{prefix}.ln"))?;
        let q = self.linear(h, &format!("{prefix}.q"))?;
        let k = self.linear(h, &format!("{prefix}.k"))?;
        let v = self.linear(h, &format!("{prefix}.v"))?;
        let mut ctx = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = self.tape.col_slice(q, head * dk, dk, prefix)?;
            let kh = self.tape.col_slice(k, head * dk, dk, prefix)?;
            let vh = self.tape.col_slice(v, head * dk, dk, prefix)?;
            let kt = self.tape.transpose(kh);
            let scores = self.tape.matmul(qh, kt, prefix)?;
            let scores = self.tape.scale(scores, 1.0 / (dk as f64).sqrt());
            let attn = self.tape.softmax(scores);
            let attn = self.dropout(attn);
            ctx.push(self.tape.matmul(attn, vh, prefix)?);
        }
        let joined = self.tape.concat_cols(&ctx, prefix)?;
        let out = self.linear(joined, &format!("{prefix}.o"))?;
        Ok(self.dropout(out))
    }

    fn conv(&mut self, x: Var, prefix: &str) -> Result<Var, NnError> {
        let d = self.model.config.d_model;
        let h = self.norm(x, &format!("{prefix}.ln"))?;
        let h = self.linear(h, &format!("{prefix}.pw1"))?;
        let a = self.tape.col_slice(h, 0, d, prefix)?;
        let gate = self.tape.col_slice(h, d, d, prefix)?;
        let gate = self.tape.sigmoid(gate);
        let h = self.tape.mul(a, gate, prefix)?;
        let w = self.p(&format!("{prefix}.dw.w"))?;
        let b = self.p(&format!("{prefix}.dw.b"))?;
        let h = self.tape.depthwise_conv(h, w, b, prefix)?;
        let h = self.norm(h, &format!("{prefix}.norm"))?;
        let h = self.tape.swish(h);
        let h = self.linear(h, &format!("{prefix}.pw2"))?;
        Ok(self.dropout(h))
    }

    fn block(&mut self, x: Var, i: usize) -> Result<Var, NnError> {
        let pre = format!("block{i}");
        let f = self.ffn(x, &format!("{pre}.ffn1"))?;
        let f = self.tape.scale(f, 0.5);
        let x = self.tape.add(x, f, &pre)?;
        let a = self.mhsa(x, &format!("{pre}.mhsa"))?;
        let x = self.tape.add(x, a, &pre)?;
        let c = self.conv(x, &format!("{pre}.conv"))?;
        let x = self.tape.add(x, c, &pre)?;
        let f = self.ffn(x, &format!("{pre}.ffn2"))?;
        let f = self.tape.scale(f, 0.5);
        let x = self.tape.add(x, f, &pre)?;
        self.norm(x, &format!("{pre}.out_ln"))
    }

    fn subsample(&mut self, feat: &FeatureMatrix) -> Result<Var, NnError> {
        let cfg = &self.model.config;
        let (t, f) = (feat.num_frames(), feat.dim());
        if t < MIN_FRAMES {
            return Err(NnError::Length { frames: t, min: MIN_FRAMES });
        }
        if f != cfg.input_dim {
            return Err(NnError::Shape {
                module: "frontend".into(),
                msg: format!("feature dim {f}, model expects {}", cfg.input_dim),
            });
        }
        let c = cfg.channels();
        let x = self.tape.input(Mat::from_vec(t * f, 1, feat.data().to_vec()));
        let g1 = ConvGeom {
            height: t,
            width: f,
            channels: 1,
            kernel: SUB_KERNEL,
            stride: SUB_STRIDE,
            pad: SUB_PAD,
        };
        let cols = self.tape.im2col(x, g1, "frontend.conv1")?;
        let h = self.linear(cols, "frontend.conv1")?;
        let h = self.tape.relu(h);
        let g2 = ConvGeom {
            height: g1.out_height(),
            width: g1.out_width(),
            channels: c,
            ..g1
        };
        let cols = self.tape.im2col(h, g2, "frontend.conv2")?;
        let h = self.linear(cols, "frontend.conv2")?;
        let h = self.tape.relu(h);
        let (t2, f2) = (g2.out_height(), g2.out_width());
        let h = self.tape.reshape(h, t2, f2 * c, "frontend")?;
        self.linear(h, "frontend.proj")
    }
}

fn positional_encoding(frames: usize, d: usize) -> Mat {
    let mut pe = Mat::zeros(frames, d);
    for t in 0..frames {
        for i in 0..d {
            let angle = t as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            pe.data[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl ConformerModel {
    /// Xavier-uniform weights, zero biases, unit norm gains.
    pub fn new(config: ConformerConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let (d, c, e) = (config.d_model, config.channels(), config.ffn_expansion);
        let k2 = SUB_KERNEL * SUB_KERNEL;
        init.xavier("frontend.conv1.w", k2, c, k2, c * k2)?;
        init.store.insert("frontend.conv1.b", Mat::zeros(1, c))?;
        init.xavier("frontend.conv2.w", k2 * c, c, k2 * c, k2 * c)?;
        init.store.insert("frontend.conv2.b", Mat::zeros(1, c))?;
        init.linear("frontend.proj", c * config.subsampled_dim(), d)?;
        for i in 0..config.num_blocks {
            for ffn in ["ffn1", "ffn2"] {
                let pre = format!("block{i}.{ffn}");
                init.norm(&format!("{pre}.ln"), d)?;
                init.linear(&format!("{pre}.l1"), d, e * d)?;
                init.linear(&format!("{pre}.l2"), e * d, d)?;
            }
            let pre = format!("block{i}.mhsa");
            init.norm(&format!("{pre}.ln"), d)?;
            for proj in ["q", "k", "v", "o"] {
                init.linear(&format!("{pre}.{proj}"), d, d)?;
            }
            let pre = format!("block{i}.conv");
            init.norm(&format!("{pre}.ln"), d)?;
            init.linear(&format!("{pre}.pw1"), d, 2 * d)?;
            init.xavier(&format!("{pre}.dw.w"), config.conv_kernel, d, config.conv_kernel, config.conv_kernel)?;
            init.store.insert(&format!("{pre}.dw.b"), Mat::zeros(1, d))?;
            init.norm(&format!("{pre}.norm"), d)?;
            init.linear(&format!("{pre}.pw2"), d, d)?;
            init.norm(&format!("block{i}.out_ln"), d)?;
        }
        init.linear("output", d, config.vocab_size_plus_blank)?;
        let params = init.store;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ConformerConfig, params: ParamStore) -> Result<Self, NnError> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(NnError::Checkpoint(format!(
                "{} tensors, config implies {}",
                params.len(),
                reference.params.len()
            )));
        }
        for ((n1, m1), (n2, m2)) in reference.params.iter().zip(params.iter()) {
            if n1 != n2 || m1.shape() != m2.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {n2} {:?} does not match expected {n1} {:?}",
                    m2.shape(),
                    m1.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn output_frames(&self, frames: usize) -> usize {
        subsampled_len(frames)
    }

    /// Records the full forward pass. Dropout is applied only when `rng`
    /// is supplied and the configured rate is non-zero.
    pub fn forward(&self, feat: &FeatureMatrix, rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass, NnError> {
        let mut ctx = Ctx {
            model: self,
            tape: Tape::new(),
            rng,
        };
        let x = ctx.subsample(feat)?;
        let (t, d) = ctx.tape.value(x).shape();
        let pe = ctx.tape.input(positional_encoding(t, d));
        let mut x = ctx.tape.add(x, pe, "frontend")?;
        x = ctx.dropout(x);
        for i in 0..self.config.num_blocks {
            x = ctx.block(x, i)?;
        }
        let logits = ctx.linear(x, "output")?;
        let output = ctx.tape.log_softmax(logits);
        Ok(ForwardPass { tape: ctx.tape, output })
    }

    /// Front-end output before positional encodings: `T′ × d_model`.
    pub fn subsample(&self, feat: &FeatureMatrix) -> Result<Mat, NnError> {
        let mut ctx = Ctx {
            model: self,
            tape: Tape::new(),
            rng: None,
        };
        let v = ctx.subsample(feat)?;
        Ok(ctx.tape.value(v).clone())
    }

    /// Runs block `i` alone on `x` (`T × d_model`), without dropout.
    pub fn block_forward(&self, x: &Mat, i: usize) -> Result<Mat, NnError> {
        let mut ctx = Ctx {
            model: self,
            tape: Tape::new(),
            rng: None,
        };
        let v = ctx.tape.input(x.clone());
        let out = ctx.block(v, i)?;
        Ok(ctx.tape.value(out).clone())
    }

    pub fn log_probs(&self, feat: &FeatureMatrix) -> Result<LogProbMatrix, NnError> {
        self.forward(feat, None)?.log_probs()
    }
}
