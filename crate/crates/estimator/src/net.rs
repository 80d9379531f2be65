use dsse_tensor::{init, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Architecture, EstimatorConfig};
use crate::error::{EstimatorError, Result};

/// `relu(W_u·x + W_z·z + b)`; without a state (first block) only `z` enters.
pub fn proxlinear_block(tape: &mut Tape, x: Option<(Var, Var)>, z: Var, wz: Var, b: Var) -> Result<Var> {
    let mut y = tape.linear(z, wz, b)?;
    if let Some((x, wu)) = x {
        let u = tape.matmul(x, wu)?;
        y = tape.add(y, u)?;
    }
    Ok(tape.relu(y)?)
}

fn dense(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    ps.add(format!("{name}.w"), init::xavier_uniform(rng, fan_in, fan_out, &[fan_in, fan_out]));
    ps.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// One trunk with any number of output heads, over inputs `[batch, 2m]`
/// laid out as standardized values then mask bits.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: EstimatorConfig,
    pub channels: usize,
    /// Output width of each head.
    pub heads: Vec<usize>,
    pub params: ParamStore,
}

impl Network {
    pub fn new(cfg: EstimatorConfig, channels: usize, heads: Vec<usize>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 || heads.is_empty() || heads.contains(&0) {
            return Err(EstimatorError::Config("channels and head widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let w = cfg.width;
        let input = 2 * channels;
        match cfg.architecture {
            Architecture::Mlp => {
                for l in 0..cfg.depth {
                    dense(&mut ps, &mut rng, &format!("trunk{l}"), if l == 0 { input } else { w }, w);
                }
            }
            Architecture::ResNetD => {
                dense(&mut ps, &mut rng, "trunk.in", input, w);
                for l in 0..cfg.depth {
                    dense(&mut ps, &mut rng, &format!("res{l}.a"), w, w);
                    dense(&mut ps, &mut rng, &format!("res{l}.b"), w, w);
                }
            }
            Architecture::ProxLinear | Architecture::CnnProx => {
                let z = if cfg.architecture == Architecture::CnnProx {
                    let (c, k) = (cfg.conv_channels, cfg.conv_width);
                    let lim = (6.0 / ((2 * k + c * k) as f64)).sqrt();
                    ps.add("conv.k", init::uniform(&mut rng, &[c, 2, k], lim));
                    ps.add("conv.b", Tensor::zeros(&[c]));
                    c * channels
                } else {
                    input
                };
                for l in 0..cfg.depth {
                    dense(&mut ps, &mut rng, &format!("prox{l}.z"), z, w);
                    if l > 0 {
                        ps.add(format!("prox{l}.u"), init::xavier_uniform(&mut rng, w, w, &[w, w]));
                    }
                }
            }
        }
        for (h, &out) in heads.iter().enumerate() {
            dense(&mut ps, &mut rng, &format!("head{h}.hidden"), w, cfg.head_width);
            dense(&mut ps, &mut rng, &format!("head{h}.out"), cfg.head_width, out);
        }
        Ok(Self { cfg, channels, heads, params: ps })
    }

    pub fn input_width(&self) -> usize {
        2 * self.channels
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        tape.param(&self.params, id)
    }

    fn dense(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let (w, b) = (self.p(tape, &format!("{name}.w")), self.p(tape, &format!("{name}.b")));
        Ok(tape.linear(x, w, b)?)
    }

    /// Shared representation, `[batch, width]`.
    pub fn trunk(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 2 || s[1] != self.input_width() {
            return Err(EstimatorError::WidthMismatch { expected: self.input_width(), got: *s.last().unwrap_or(&0) });
        }
        let batch = s[0];
        match self.cfg.architecture {
            Architecture::Mlp => {
                let mut h = x;
                for l in 0..self.cfg.depth {
                    h = self.dense(tape, h, &format!("trunk{l}"))?;
                    h = tape.relu(h)?;
                }
                Ok(h)
            }
            Architecture::ResNetD => {
                let h = self.dense(tape, x, "trunk.in")?;
                let mut h = tape.relu(h)?;
                for l in 0..self.cfg.depth {
                    let a = self.dense(tape, h, &format!("res{l}.a"))?;
                    let a = tape.relu(a)?;
                    let b = self.dense(tape, a, &format!("res{l}.b"))?;
                    let sum = tape.add(h, b)?;
                    h = tape.relu(sum)?;
                }
                Ok(h)
            }
            Architecture::ProxLinear => self.prox_trunk(tape, x),
            Architecture::CnnProx => {
                let m = self.channels;
                let grid = tape.reshape(x, &[batch, 2, m])?;
                let (k, b) = (self.p(tape, "conv.k"), self.p(tape, "conv.b"));
                let c = tape.conv1d(grid, k, Some(b), self.cfg.conv_width / 2)?;
                let c = tape.relu(c)?;
                let z = tape.reshape(c, &[batch, self.cfg.conv_channels * m])?;
                self.prox_trunk(tape, z)
            }
        }
    }

    fn prox_trunk(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let mut x: Option<Var> = None;
        for l in 0..self.cfg.depth {
            let (wz, b) = (self.p(tape, &format!("prox{l}.z.w")), self.p(tape, &format!("prox{l}.z.b")));
            let state = match x {
                Some(prev) => Some((prev, self.p(tape, &format!("prox{l}.u")))),
                None => None,
            };
            x = Some(proxlinear_block(tape, state, z, wz, b)?);
        }
        Ok(x.expect("depth validated positive"))
    }

    /// Output of every head, each `[batch, heads[i]]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let h = self.trunk(tape, x)?;
        (0..self.heads.len())
            .map(|i| {
                let a = self.dense(tape, h, &format!("head{i}.hidden"))?;
                let a = tape.relu(a)?;
                self.dense(tape, a, &format!("head{i}.out"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_architecture_produces_head_shapes() {
        for arch in Architecture::ALL {
            let cfg = EstimatorConfig { width: 16, head_width: 8, ..EstimatorConfig::new(arch) };
            let net = Network::new(cfg, 5, vec![4, 4], 1).unwrap();
            let mut tape = Tape::inference();
            let x = tape.constant(Tensor::full(&[3, 10], 0.5));
            let out = net.forward(&mut tape, x).unwrap();
            assert_eq!(out.len(), 2);
            for o in out {
                assert_eq!(tape.shape(o), &[3, 4]);
                assert!(tape.value(o).is_finite());
            }
            let bad = tape.constant(Tensor::zeros(&[3, 9]));
            assert!(matches!(net.forward(&mut tape, bad), Err(EstimatorError::WidthMismatch { .. })));
        }
    }
}
