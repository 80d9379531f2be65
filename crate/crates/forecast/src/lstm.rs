use dsse_data::Window;
use dsse_tensor::{init, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ForecastData;
use crate::error::{ForecastError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    pub lookback: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { hidden: 64, lookback: 96 }
    }
}

/// Single-layer LSTM over the zero-filled window plus mask, with a linear
/// read-out of the hidden state.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub cfg: LstmConfig,
    pub channels: usize,
    pub params: ParamStore,
}

impl Lstm {
    pub fn new(cfg: LstmConfig, channels: usize, seed: u64) -> Result<Self> {
        if cfg.hidden == 0 || cfg.lookback == 0 || channels == 0 {
            return Err(ForecastError::Config("hidden, lookback and channels must be positive".into()));
        }
        let h = cfg.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        ps.add("lstm.wx", init::xavier_uniform(&mut rng, 2 * channels, h, &[2 * channels, 4 * h]));
        ps.add("lstm.wh", init::xavier_uniform(&mut rng, h, h, &[h, 4 * h]));
        // Forget-gate bias of 1 is the usual starting point.
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        ps.add("lstm.b", Tensor::vector(b));
        ps.add("head.w", init::xavier_uniform(&mut rng, h, channels, &[h, channels]));
        ps.add("head.b", Tensor::zeros(&[channels]));
        Ok(Self { cfg, channels, params: ps })
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Var {
        tape.param(&self.params, self.params.id(name).expect("registered in new"))
    }

    /// Standardized forecasts, `[batch·k, m]` ordered window-major when
    /// `dense`, else `[batch, m]` from the final hidden state.
    pub fn forward(&self, tape: &mut Tape, data: &ForecastData, windows: &[Window], dense: bool) -> Result<Var> {
        if data.channels() != self.channels {
            return Err(ForecastError::ChannelMismatch { expected: self.channels, got: data.channels() });
        }
        let (b, k, h, w) = (windows.len(), self.cfg.lookback, self.cfg.hidden, 2 * self.channels);
        if let Some(win) = windows.iter().find(|win| win.target + 1 - win.start != k) {
            return Err(ForecastError::Config(format!("window {win:?} does not span {k} steps")));
        }
        let (wx, wh, bias) = (self.p(tape, "lstm.wx"), self.p(tape, "lstm.wh"), self.p(tape, "lstm.b"));
        let (hw, hb) = (self.p(tape, "head.w"), self.p(tape, "head.b"));

        // All input projections at once: [b·k, 4h], rows window-major.
        let x = Tensor::new(vec![b * k, w], data.stack_inputs(windows))?;
        let x = tape.constant(x);
        let xg = tape.linear(x, wx, bias)?;

        let mut hs = tape.constant(Tensor::zeros(&[b, h]));
        let mut cs = tape.constant(Tensor::zeros(&[b, h]));
        let mut outs = Vec::with_capacity(if dense { k } else { 1 });
        for step in 0..k {
            let rows: Vec<usize> = (0..b).map(|i| i * k + step).collect();
            let xt = tape.gather_rows(xg, &rows)?;
            let hg = tape.matmul(hs, wh)?;
            let g = tape.add(xt, hg)?;
            let i = tape.slice_cols(g, 0, h)?;
            let f = tape.slice_cols(g, h, h)?;
            let c_hat = tape.slice_cols(g, 2 * h, h)?;
            let o = tape.slice_cols(g, 3 * h, h)?;
            let (i, f, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.sigmoid(o)?);
            let c_hat = tape.tanh(c_hat)?;
            let keep = tape.mul(f, cs)?;
            let write = tape.mul(i, c_hat)?;
            cs = tape.add(keep, write)?;
            let ct = tape.tanh(cs)?;
            hs = tape.mul(o, ct)?;
            if dense {
                outs.push(hs);
            }
        }
        if !dense {
            return Ok(tape.linear(hs, hw, hb)?);
        }
        // [k·b, h] step-major, then reorder to window-major.
        let stacked = tape.concat_rows(&outs)?;
        let order: Vec<usize> = (0..b).flat_map(|i| (0..k).map(move |s| s * b + i)).collect();
        let stacked = tape.gather_rows(stacked, &order)?;
        Ok(tape.linear(stacked, hw, hb)?)
    }
}
