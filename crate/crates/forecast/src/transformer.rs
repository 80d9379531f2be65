use dsse_data::{Calendar, Window};
use dsse_tensor::{init, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ForecastData;
use crate::error::{ForecastError, Result};
use crate::prompt::{PromptTemplate, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    /// Measurement sequence length `L_s`.
    pub lookback: usize,
    /// Prompt length `L_p`; 0 disables the prompt.
    pub prompt_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ff_width: 256,
            lookback: 96,
            prompt_len: 16,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(ForecastError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.lookback == 0 || self.ff_width == 0 {
            return Err(ForecastError::Config("lookback and ff_width must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.prompt_len + self.lookback
    }
}

/// Fixed sinusoidal encoding, `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("sized above")
}

/// Parameter handles of one attention sublayer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `[D, 3D]` fused query/key/value projection.
    pub wqkv: Var,
    pub bqkv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Causal multi-head self-attention over `x = [batch·seq, D]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    p: AttentionVars,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    if heads == 0 || d % heads != 0 {
        return Err(ForecastError::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let qkv = tape.linear(x, p.wqkv, p.bqkv)?;
    let q = tape.slice_cols(qkv, 0, d)?;
    let k = tape.slice_cols(qkv, d, d)?;
    let v = tape.slice_cols(qkv, 2 * d, d)?;
    let q = tape.split_heads(q, batch, heads)?;
    let k = tape.split_heads(k, batch, heads)?;
    let v = tape.split_heads(v, batch, heads)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let att = tape.causal_softmax(scores)?;
    let ctx = tape.batch_matmul(att, v, false)?;
    let ctx = tape.merge_heads(ctx, batch, heads)?;
    Ok(tape.linear(ctx, p.wo, p.bo)?)
}

/// Decoder-only transformer forecaster.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub cfg: TransformerConfig,
    pub channels: usize,
    pub params: ParamStore,
    pub template: Option<PromptTemplate>,
    vocab: Option<Vocabulary>,
    pos_z: Tensor,
    pos_p: Tensor,
}

impl Transformer {
    pub fn new(cfg: TransformerConfig, channels: usize, template: Option<PromptTemplate>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(ForecastError::Config("no channels".into()));
        }
        let template = if cfg.prompt_len == 0 { None } else { template };
        if cfg.prompt_len > 0 && template.is_none() {
            return Err(ForecastError::Config("prompt_len > 0 needs a prompt template".into()));
        }
        let template = template.map(|mut t| {
            t.length = cfg.prompt_len;
            t
        });
        let vocab = template.as_ref().map(|t| t.vocabulary());
        let d = cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let resid = 1.0 / (2.0 * cfg.layers.max(1) as f64).sqrt();

        ps.add("embed_z.w", init::xavier_uniform(&mut rng, 2 * channels, d, &[2 * channels, d]));
        ps.add("embed_z.b", Tensor::zeros(&[d]));
        if let Some(v) = &vocab {
            ps.add("embed_p.table", init::normal(&mut rng, &[v.len(), d], 1.0 / (d as f64).sqrt()));
        }
        ps.add("adjust.w", Tensor::eye(d));
        ps.add("adjust.b", Tensor::zeros(&[d]));
        for l in 0..cfg.layers {
            let p = |s: &str| format!("block{l}.{s}");
            ps.add(p("ln1.g"), Tensor::full(&[d], 1.0));
            ps.add(p("ln1.b"), Tensor::zeros(&[d]));
            ps.add(p("attn.wqkv"), init::xavier_uniform(&mut rng, d, d, &[d, 3 * d]));
            ps.add(p("attn.bqkv"), Tensor::zeros(&[3 * d]));
            let mut wo = init::xavier_uniform(&mut rng, d, d, &[d, d]);
            wo.data_mut().iter_mut().for_each(|w| *w *= resid);
            ps.add(p("attn.wo"), wo);
            ps.add(p("attn.bo"), Tensor::zeros(&[d]));
            ps.add(p("ln2.g"), Tensor::full(&[d], 1.0));
            ps.add(p("ln2.b"), Tensor::zeros(&[d]));
            ps.add(p("ffn.w1"), init::xavier_uniform(&mut rng, d, cfg.ff_width, &[d, cfg.ff_width]));
            ps.add(p("ffn.b1"), Tensor::zeros(&[cfg.ff_width]));
            let mut w2 = init::xavier_uniform(&mut rng, cfg.ff_width, d, &[cfg.ff_width, d]);
            w2.data_mut().iter_mut().for_each(|w| *w *= resid);
            ps.add(p("ffn.w2"), w2);
            ps.add(p("ffn.b2"), Tensor::zeros(&[d]));
        }
        ps.add("ln_f.g", Tensor::full(&[d], 1.0));
        ps.add("ln_f.b", Tensor::zeros(&[d]));
        ps.add("head.w", init::xavier_uniform(&mut rng, d, channels, &[d, channels]));
        ps.add("head.b", Tensor::zeros(&[channels]));

        Ok(Self {
            pos_z: sinusoidal_positions(cfg.lookback, d),
            pos_p: sinusoidal_positions(cfg.prompt_len, d),
            cfg,
            channels,
            params: ps,
            template,
            vocab,
        })
    }

    /// Train only layer norms, embeddings, the adjustment layer and the output head.
    pub fn freeze_body(&mut self) {
        self.params.set_trainable(|name| !(name.contains(".attn.") || name.contains(".ffn.")));
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn p(&self, tape: &mut Tape, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        tape.param(&self.params, id)
    }

    pub fn attention_vars(&self, tape: &mut Tape, layer: usize) -> AttentionVars {
        AttentionVars {
            wqkv: self.p(tape, &format!("block{layer}.attn.wqkv")),
            bqkv: self.p(tape, &format!("block{layer}.attn.bqkv")),
            wo: self.p(tape, &format!("block{layer}.attn.wo")),
            bo: self.p(tape, &format!("block{layer}.attn.bo")),
        }
    }

    /// `E_z = X·W_z + b_z + P_z` for `inputs = [batch·L_s, 2m]`; returns `[batch·L_s, D]`.
    pub fn embed_measurements(&self, tape: &mut Tape, inputs: Tensor, batch: usize) -> Result<Var> {
        let (ls, d) = (self.cfg.lookback, self.cfg.d_model);
        let expect = [batch * ls, 2 * self.channels];
        if inputs.shape() != expect {
            return Err(ForecastError::ChannelMismatch { expected: 2 * self.channels, got: inputs.shape()[1..].iter().product() });
        }
        let x = tape.constant(inputs);
        let (w, b) = (self.p(tape, "embed_z.w"), self.p(tape, "embed_z.b"));
        let e = tape.linear(x, w, b)?;
        let e = tape.reshape(e, &[batch, ls, d])?;
        let pos = tape.constant(self.pos_z.clone());
        let e = tape.add(e, pos)?;
        Ok(tape.reshape(e, &[batch * ls, d])?)
    }

    /// Token ids for each window's prompt, `batch·L_p` entries.
    pub fn prompt_tokens(&self, calendars: &[Calendar]) -> Result<Vec<usize>> {
        let (Some(t), Some(v)) = (&self.template, &self.vocab) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(calendars.len() * self.cfg.prompt_len);
        for c in calendars {
            out.extend(t.encode(c, v)?);
        }
        Ok(out)
    }

    /// `E_p = Embedding_p(p) + P_p`, `[batch·L_p, D]`; `None` when the prompt is disabled.
    pub fn embed_prompt(&self, tape: &mut Tape, tokens: &[usize], batch: usize) -> Result<Option<Var>> {
        let (lp, d) = (self.cfg.prompt_len, self.cfg.d_model);
        if lp == 0 {
            return Ok(None);
        }
        if tokens.len() != batch * lp {
            return Err(ForecastError::Config(format!("expected {} prompt tokens, got {}", batch * lp, tokens.len())));
        }
        let table = self.p(tape, "embed_p.table");
        let e = tape.gather_rows(table, tokens)?;
        let e = tape.reshape(e, &[batch, lp, d])?;
        let pos = tape.constant(self.pos_p.clone());
        let e = tape.add(e, pos)?;
        Ok(Some(tape.reshape(e, &[batch * lp, d])?))
    }

    /// `[E_p; E_z]` per window, then the token-wise adjustment layer.
    pub fn concat_and_adjust(&self, tape: &mut Tape, ep: Option<Var>, ez: Var, batch: usize) -> Result<Var> {
        let d = self.cfg.d_model;
        if *tape.shape(ez).last().unwrap_or(&0) != d {
            return Err(ForecastError::Config("measurement embedding width differs from D".into()));
        }
        let e = match ep {
            None => ez,
            Some(ep) => {
                if *tape.shape(ep).last().unwrap_or(&0) != d {
                    return Err(ForecastError::Config("prompt embedding width differs from D".into()));
                }
                let lp = tape.shape(ep)[0] / batch;
                let ls = tape.shape(ez)[0] / batch;
                let a = tape.reshape(ep, &[batch, lp * d])?;
                let b = tape.reshape(ez, &[batch, ls * d])?;
                let c = tape.concat_cols(&[a, b])?;
                tape.reshape(c, &[batch * (lp + ls), d])?
            }
        };
        let (w, b) = (self.p(tape, "adjust.w"), self.p(tape, "adjust.b"));
        Ok(tape.linear(e, w, b)?)
    }

    /// Pre-norm decoder stack followed by the final layer norm, `[batch·T, D]`.
    pub fn decoder_forward(&self, tape: &mut Tape, mut x: Var, batch: usize) -> Result<Var> {
        for l in 0..self.cfg.layers {
            let (g, b) = (self.p(tape, &format!("block{l}.ln1.g")), self.p(tape, &format!("block{l}.ln1.b")));
            let h = tape.layer_norm(x, g, b)?;
            let att = self.attention_vars(tape, l);
            let h = multi_head_attention(tape, h, att, batch, self.cfg.heads)?;
            x = tape.add(x, h)?;

            let (g, b) = (self.p(tape, &format!("block{l}.ln2.g")), self.p(tape, &format!("block{l}.ln2.b")));
            let h = tape.layer_norm(x, g, b)?;
            let (w1, b1) = (self.p(tape, &format!("block{l}.ffn.w1")), self.p(tape, &format!("block{l}.ffn.b1")));
            let h = tape.linear(h, w1, b1)?;
            let h = tape.gelu(h)?;
            let (w2, b2) = (self.p(tape, &format!("block{l}.ffn.w2")), self.p(tape, &format!("block{l}.ffn.b2")));
            let h = tape.linear(h, w2, b2)?;
            x = tape.add(x, h)?;
        }
        let (g, b) = (self.p(tape, "ln_f.g"), self.p(tape, "ln_f.b"));
        Ok(tape.layer_norm(x, g, b)?)
    }

    pub fn output_head(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let (w, b) = (self.p(tape, "head.w"), self.p(tape, "head.b"));
        Ok(tape.linear(h, w, b)?)
    }

    /// Runs the full stack and returns `[batch·T, D]` hidden states.
    pub fn hidden(&self, tape: &mut Tape, inputs: Tensor, tokens: &[usize], batch: usize) -> Result<Var> {
        let ez = self.embed_measurements(tape, inputs, batch)?;
        let ep = self.embed_prompt(tape, tokens, batch)?;
        let e = self.concat_and_adjust(tape, ep, ez, batch)?;
        self.decoder_forward(tape, e, batch)
    }

    /// Standardized forecasts: `[batch·L_s, m]` for every measurement position
    /// when `dense`, otherwise `[batch, m]` for the last position only.
    pub fn forward(&self, tape: &mut Tape, data: &ForecastData, windows: &[Window], dense: bool) -> Result<Var> {
        let b = windows.len();
        let ls = self.cfg.lookback;
        if data.channels() != self.channels {
            return Err(ForecastError::ChannelMismatch { expected: self.channels, got: data.channels() });
        }
        if let Some(w) = windows.iter().find(|w| w.target + 1 - w.start != ls) {
            return Err(ForecastError::Config(format!("window {w:?} does not span {ls} steps")));
        }
        let inputs = Tensor::new(vec![b * ls, 2 * self.channels], data.stack_inputs(windows))?;
        let cal: Vec<Calendar> = windows.iter().map(|w| data.calendar[w.target]).collect();
        let tokens = self.prompt_tokens(&cal)?;
        let h = self.hidden(tape, inputs, &tokens, b)?;
        let t = self.cfg.seq_len();
        let lp = self.cfg.prompt_len;
        let rows: Vec<usize> = if dense {
            (0..b).flat_map(|i| (0..ls).map(move |j| i * t + lp + j)).collect()
        } else {
            (0..b).map(|i| i * t + t - 1).collect()
        };
        let h = tape.gather_rows(h, &rows)?;
        self.output_head(tape, h)
    }
}
