//! Inverted-attention encoder over the channel axis: each variate's full
//! (sub-band) series is one token, multi-head self-attention mixes variates,
//! and a projection restores sequence length with a residual connection.
//! Applied to detail bands only — the approximation band bypasses it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{concat_lastdim, Graph, Param, Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub e_layers: usize,
    pub n_heads: usize,
    pub dropout: Real,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_layers < 1 {
            return Err(Error::config("encoder: e_layers must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "encoder: dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "encoder: d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Default head count: 8, reduced to the largest divisor of `d_model` that is
/// ≤ 8 when `d_model` < 64.
pub fn default_n_heads(d_model: usize) -> usize {
    if d_model >= 64 {
        8
    } else {
        (1..=8.min(d_model)).rev().find(|h| d_model % h == 0).unwrap_or(1)
    }
}

pub struct EncoderLayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        EncoderLayer {
            wq: Linear::new(&format!("{name}.wq"), d, d, rng),
            wk: Linear::new(&format!("{name}.wk"), d, d, rng),
            wv: Linear::new(&format!("{name}.wv"), d, d, rng),
            wo: Linear::new(&format!("{name}.wo"), d, d, rng),
            ffn1: Linear::new(&format!("{name}.ffn1"), d, cfg.d_ff, rng),
            ffn2: Linear::new(&format!("{name}.ffn2"), cfg.d_ff, d, rng),
            norm1: LayerNorm::new(&format!("{name}.norm1"), d),
            norm2: LayerNorm::new(&format!("{name}.norm2"), d),
        }
    }

    /// One post-norm encoder layer over tokens shaped `[.., C, d_model]`.
    pub fn forward(
        &self,
        g: &Graph,
        h: &Tensor,
        cfg: &EncoderConfig,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        let d = cfg.d_model;
        let dh = d / cfg.n_heads;
        let q = self.wq.bind(g).forward(h)?;
        let k = self.wk.bind(g).forward(h)?;
        let v = self.wv.bind(g).forward(h)?;
        let scale = 1.0 / (dh as Real).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for hi in 0..cfg.n_heads {
            let qh = q.slice_lastdim(hi * dh, dh)?;
            let kh = k.slice_lastdim(hi * dh, dh)?;
            let vh = v.slice_lastdim(hi * dh, dh)?;
            let scores = qh.matmul_nt(&kh)?.affine(scale, 0.0).softmax_lastdim();
            let scores = scores.dropout(cfg.dropout, training, rng)?;
            heads.push(scores.matmul(&vh)?);
        }
        let attn = self.wo.bind(g).forward(&concat_lastdim(&heads)?)?;
        let h1 = self.norm1.bind(g).forward(&h.add(&attn)?)?;
        let f = self.ffn1.bind(g).forward(&h1)?.gelu().dropout(cfg.dropout, training, rng)?;
        let f = self.ffn2.bind(g).forward(&f)?;
        self.norm2.bind(g).forward(&h1.add(&f)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for lin in [&self.wq, &self.wk, &self.wv, &self.wo, &self.ffn1, &self.ffn2] {
            out.extend(lin.params());
        }
        out.extend(self.norm1.params());
        out.extend(self.norm2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for lin in [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ffn1,
            &mut self.ffn2,
        ] {
            out.extend(lin.params_mut());
        }
        out.extend(self.norm1.params_mut());
        out.extend(self.norm2.params_mut());
        out
    }
}

/// Full per-band encoder: embed L→d_model, `e_layers` attention layers,
/// project d_model→L, residual around the whole stack.
pub struct ChannelEncoder {
    pub cfg: EncoderConfig,
    pub embed: Linear,
    pub layers: Vec<EncoderLayer>,
    pub project: Linear,
}

impl ChannelEncoder {
    pub fn new(name: &str, lookback: usize, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.e_layers)
            .map(|i| EncoderLayer::new(&format!("{name}.layer{i}"), &cfg, rng))
            .collect();
        Ok(ChannelEncoder {
            cfg,
            embed: Linear::new(&format!("{name}.embed"), lookback, cfg.d_model, rng),
            layers,
            project: Linear::new(&format!("{name}.project"), cfg.d_model, lookback, rng),
        })
    }

    /// `D̂ = D + Project(layers(Embed(D)))` for a band shaped `[.., C, L]`.
    pub fn encode_band(
        &self,
        g: &Graph,
        band: &Tensor,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        let expect = self.embed.in_dim();
        let got = *band.shape().last().unwrap();
        if got != expect {
            return Err(Error::shape(format!(
                "encode_band: band length {got} does not match embed width {expect}"
            )));
        }
        let mut h = self.embed.bind(g).forward(band)?;
        for layer in &self.layers {
            h = layer.forward(g, &h, &self.cfg, training, rng)?;
        }
        band.add(&self.project.bind(g).forward(&h)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.embed.params();
        for l in &self.layers {
            out.extend(l.params());
        }
        out.extend(self.project.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.embed.params_mut();
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.extend(self.project.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::max_grad_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d_model: usize, d_ff: usize, e_layers: usize, n_heads: usize) -> EncoderConfig {
        EncoderConfig { d_model, d_ff, e_layers, n_heads, dropout: 0.0 }
    }

    fn no_rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn default_heads_rule() {
        assert_eq!(default_n_heads(64), 8);
        assert_eq!(default_n_heads(256), 8);
        assert_eq!(default_n_heads(32), 8);
        assert_eq!(default_n_heads(12), 6);
        assert_eq!(default_n_heads(7), 7);
        assert_eq!(default_n_heads(5), 5);
        assert_eq!(default_n_heads(9), 3);
    }

    #[test]
    fn shapes_and_zero_project_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, l) = (7, 96);
        let mut enc = ChannelEncoder::new("enc", l, cfg(64, 32, 1, 8), &mut rng).unwrap();
        let g = Graph::new();
        let band = g
            .leaf((0..c * l).map(|i| ((i * 31) % 17) as Real * 0.1 - 0.5).collect(), &[c, l])
            .unwrap();
        let h = enc.embed.bind(&g).forward(&band).unwrap();
        assert_eq!(h.shape(), &[7, 64]);
        let out = enc.encode_band(&g, &band, false, &mut no_rng()).unwrap();
        assert_eq!(out.shape(), &[c, l]);

        // zero projection weights → residual makes encode_band the identity
        enc.project.w.data.iter_mut().for_each(|v| *v = 0.0);
        enc.project.b.data.iter_mut().for_each(|v| *v = 0.0);
        let out = enc.encode_band(&g, &band, false, &mut no_rng()).unwrap();
        for (a, b) in out.to_vec().iter().zip(band.to_vec().iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_layer_matches_plain_reference() {
        // One head, no dropout: recompute attention + FFN + post-norms with
        // straightforward scalar loops and compare.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = 3;
        let conf = cfg(2, 3, 1, 1);
        let layer = EncoderLayer::new("l", &conf, &mut rng);
        let h_in: Vec<Real> = vec![0.4, -0.2, 1.1, 0.6, -0.9, 0.3];
        let g = Graph::new();
        let h = g.leaf(h_in.clone(), &[c, 2]).unwrap();
        let got = layer.forward(&g, &h, &conf, false, &mut no_rng()).unwrap().to_vec();

        let lin = |x: &[Real], w: &Linear| -> Vec<Real> {
            let (i, o) = (w.in_dim(), w.out_dim());
            let rows = x.len() / i;
            let mut y = vec![0.0; rows * o];
            for r in 0..rows {
                for j in 0..o {
                    let mut acc = w.b.data[j];
                    for p in 0..i {
                        acc += x[r * i + p] * w.w.data[p * o + j];
                    }
                    y[r * o + j] = acc;
                }
            }
            y
        };
        let q = lin(&h_in, &layer.wq);
        let k = lin(&h_in, &layer.wk);
        let v = lin(&h_in, &layer.wv);
        let scale = 1.0 / (2.0 as Real).sqrt();
        let mut attn = vec![0.0; c * 2];
        for i in 0..c {
            let mut scores = vec![0.0; c];
            for j in 0..c {
                scores[j] = scale * (q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]);
            }
            let m = scores.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let exps: Vec<Real> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: Real = exps.iter().sum();
            for j in 0..c {
                let w = exps[j] / z;
                attn[i * 2] += w * v[j * 2];
                attn[i * 2 + 1] += w * v[j * 2 + 1];
            }
        }
        let attn = lin(&attn, &layer.wo);
        let norm = |x: &[Real], ln: &LayerNorm| -> Vec<Real> {
            let d = 2;
            let mut y = vec![0.0; x.len()];
            for r in 0..x.len() / d {
                let row = &x[r * d..(r + 1) * d];
                let mean = (row[0] + row[1]) / 2.0;
                let var = ((row[0] - mean).powi(2) + (row[1] - mean).powi(2)) / 2.0;
                let istd = 1.0 / (var + ln.eps).sqrt();
                for i in 0..d {
                    y[r * d + i] = (row[i] - mean) * istd * ln.gamma.data[i] + ln.beta.data[i];
                }
            }
            y
        };
        let h1_in: Vec<Real> = h_in.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let h1 = norm(&h1_in, &layer.norm1);
        let f1 = lin(&h1, &layer.ffn1);
        let gelu = |x: Real| {
            let u = (0.7978845608028654 as Real) * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        };
        let f1g: Vec<Real> = f1.iter().map(|&x| gelu(x)).collect();
        let f2 = lin(&f1g, &layer.ffn2);
        let h2_in: Vec<Real> = h1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let expect = norm(&h2_in, &layer.norm2);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn single_token_attention_is_identity_mixing() {
        // C=1: the token attends to itself with weight 1, so the attention
        // mix equals V exactly; verify via the softmax of a 1-wide row.
        let g = Graph::new();
        let x = g.leaf(vec![3.7], &[1, 1]).unwrap();
        let s = x.softmax_lastdim().to_vec();
        assert!((s[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (c, l) = (4, 12);
        let enc = ChannelEncoder::new("enc", l, cfg(8, 16, 2, 2), &mut rng).unwrap();
        let data: Vec<Real> = (0..c * l).map(|i| ((i * 7) % 13) as Real * 0.17 - 1.0).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Real> = perm
            .iter()
            .flat_map(|&p| data[p * l..(p + 1) * l].to_vec())
            .collect();
        let run = |input: Vec<Real>| {
            let g = Graph::new();
            let x = g.leaf(input, &[c, l]).unwrap();
            enc.encode_band(&g, &x, false, &mut no_rng()).unwrap().to_vec()
        };
        let base = run(data);
        let shuffled = run(permuted);
        for (out_row, &p) in perm.iter().enumerate() {
            for t in 0..l {
                let a = shuffled[out_row * l + t];
                let b = base[p * l + t];
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (c, l) = (2, 8);
        let enc = ChannelEncoder::new("enc", l, cfg(4, 6, 1, 2), &mut rng).unwrap();
        let data: Vec<Real> = (0..c * l).map(|i| ((i * 5) % 11) as Real * 0.2 - 1.0).collect();
        let mut params: Vec<Param> = enc.params().into_iter().cloned().collect();
        let err = max_grad_rel_error(&mut params, &mut |g, ps| {
            let x = g.leaf(data.clone(), &[c, l])?;
            let out = forward_with(enc.cfg, ps, g, &x)?;
            Ok(out.mul(&out)?.mean())
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    /// Forward an encoder whose parameters are taken from `ps` (same order
    /// as `ChannelEncoder::params`), so tape gradients map back onto `ps`.
    /// Cloned parameters keep their identity, so gradient accumulation in
    /// the checker still reaches the originals.
    fn forward_with(cfg: EncoderConfig, ps: &[Param], g: &Graph, x: &Tensor) -> Result<Tensor> {
        let mut clone = ChannelEncoder {
            cfg,
            embed: Linear { w: ps[0].clone(), b: ps[1].clone() },
            layers: Vec::new(),
            project: Linear {
                w: ps[ps.len() - 2].clone(),
                b: ps[ps.len() - 1].clone(),
            },
        };
        let mut i = 2;
        for _ in 0..cfg.e_layers {
            let take_lin = |i: &mut usize| {
                let l = Linear { w: ps[*i].clone(), b: ps[*i + 1].clone() };
                *i += 2;
                l
            };
            let wq = take_lin(&mut i);
            let wk = take_lin(&mut i);
            let wv = take_lin(&mut i);
            let wo = take_lin(&mut i);
            let ffn1 = take_lin(&mut i);
            let ffn2 = take_lin(&mut i);
            let norm1 = LayerNorm {
                gamma: ps[i].clone(),
                beta: ps[i + 1].clone(),
                eps: 1e-5,
            };
            let norm2 = LayerNorm {
                gamma: ps[i + 2].clone(),
                beta: ps[i + 3].clone(),
                eps: 1e-5,
            };
            i += 4;
            clone.layers.push(EncoderLayer { wq, wk, wv, wo, ffn1, ffn2, norm1, norm2 });
        }
        clone.encode_band(g, x, false, &mut ChaCha8Rng::seed_from_u64(0))
    }
}
