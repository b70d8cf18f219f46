//! Full model assembly: instance normalization → learnable wavelet
//! decomposition → per-detail-band channel encoder → per-band patch mixer →
//! inverse wavelet reconstruction → gated final projection → instance
//! denormalization. Ablation variants are construction-time flags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{default_n_heads, ChannelEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::filters::WaveletInit;
use crate::mixer::{patchify, unpatchify, MixerConfig, NeighboringMixer};
use crate::nn::Linear;
use crate::revin::Revin;
use crate::tensor::{Graph, Param, Real, Tensor, PRECISION};
use crate::wavelet::{iswt_reconstruct, swt_decompose, FilterBank, WaveletCoefficients};

/// Construction-time ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Single time-domain branch: no decomposition, no reconstruction, no
    /// channel encoder; patch mixing and the final projection remain.
    pub no_swt: bool,
    /// Keep the decomposition but freeze the filters at initialization.
    pub fixed_swt: bool,
    /// Drop the hierarchical pair mixing; the per-patch MLP remains.
    pub no_neighboring_mixer: bool,
    /// Drop the attention encoder on detail bands.
    pub no_channel_encoder: bool,
}

impl AblationFlags {
    pub fn parse_variant(name: &str) -> Result<Self> {
        let mut f = AblationFlags::default();
        match name {
            "full" => {}
            "no_swt" => f.no_swt = true,
            "fixed_swt" => f.fixed_swt = true,
            "no_neighboring_mixer" => f.no_neighboring_mixer = true,
            "no_channel_encoder" => f.no_channel_encoder = true,
            _ => {
                return Err(Error::config(format!(
                    "unknown variant '{name}'; expected full, no_swt, fixed_swt, \
                     no_neighboring_mixer or no_channel_encoder"
                )))
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub patch: usize,
    /// Wavelet decomposition depth (the `J` of the config files).
    pub levels: usize,
    pub wavelet: WaveletInit,
    pub d_model: usize,
    pub d_ff: usize,
    pub e_layers: usize,
    /// 0 selects the default head count for `d_model`.
    pub n_heads: usize,
    pub dropout: Real,
    pub mp_depth: usize,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl ModelConfig {
    /// A small but fully wired default; config files override fields.
    pub fn base() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            channels: 7,
            patch: 24,
            levels: 1,
            wavelet: WaveletInit::Db2,
            d_model: 64,
            d_ff: 256,
            e_layers: 1,
            n_heads: 0,
            dropout: 0.1,
            mp_depth: 2,
            ablation: AblationFlags::default(),
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("patch", self.patch),
            ("levels", self.levels),
            ("mp_depth", self.mp_depth),
        ] {
            if v < 1 {
                return Err(Error::config(format!("model: {name} must be ≥ 1")));
            }
        }
        if self.ablation.no_swt && self.ablation.fixed_swt {
            return Err(Error::config("model: no_swt and fixed_swt are mutually exclusive"));
        }
        self.encoder_config().validate()
    }

    pub fn resolved_n_heads(&self) -> usize {
        if self.n_heads == 0 {
            default_n_heads(self.d_model)
        } else {
            self.n_heads
        }
    }

    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            d_ff: self.d_ff,
            e_layers: self.e_layers,
            n_heads: self.resolved_n_heads(),
            dropout: self.dropout,
        }
    }

    fn mixer_config(&self) -> MixerConfig {
        MixerConfig {
            patch: self.patch,
            d_ff: self.d_ff,
            mp_depth: self.mp_depth,
            dropout: self.dropout,
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub revin: Revin,
    /// Absent under `no_swt`.
    pub bank: Option<FilterBank>,
    /// One per detail band; empty under `no_swt` / `no_channel_encoder`.
    pub encoders: Vec<ChannelEncoder>,
    /// Mixer branches: detail bands 1..=M then the approximation band
    /// (a single branch under `no_swt`).
    pub mixers: Vec<NeighboringMixer>,
    pub w_g: Linear,
    pub w_out: Linear,
}

/// Builds the configured variant deterministically from `cfg.seed`.
pub fn build_variant(cfg: ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let revin = Revin::new("revin", cfg.channels);
    let mut bank = None;
    let mut encoders = Vec::new();
    let mut mixers = Vec::new();
    let mut mixer_cfg = cfg.mixer_config();
    if cfg.ablation.no_swt {
        mixers.push(new_mixer("mixer_time", &cfg, &mut mixer_cfg, &mut rng)?);
    } else {
        let mut fb = FilterBank::new("bank", cfg.wavelet);
        if cfg.ablation.fixed_swt {
            fb.set_trainable(false);
        }
        bank = Some(fb);
        for m in 1..=cfg.levels {
            if !cfg.ablation.no_channel_encoder {
                encoders.push(ChannelEncoder::new(
                    &format!("encoder_d{m}"),
                    cfg.lookback,
                    cfg.encoder_config(),
                    &mut rng,
                )?);
            }
            mixers.push(new_mixer(&format!("mixer_d{m}"), &cfg, &mut mixer_cfg, &mut rng)?);
        }
        mixers.push(new_mixer("mixer_a", &cfg, &mut mixer_cfg, &mut rng)?);
    }
    let w_g = Linear::new("proj.gate", cfg.lookback, cfg.lookback, &mut rng);
    let w_out = Linear::new("proj.out", cfg.lookback, cfg.horizon, &mut rng);
    Ok(Model { cfg, revin, bank, encoders, mixers, w_g, w_out })
}

fn new_mixer(
    name: &str,
    cfg: &ModelConfig,
    mixer_cfg: &mut MixerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<NeighboringMixer> {
    let mut mixer = NeighboringMixer::new(name, cfg.lookback, *mixer_cfg, rng)?;
    if cfg.ablation.no_neighboring_mixer {
        mixer.levels.clear();
    }
    Ok(mixer)
}

impl Model {
    /// Forward pass for `x: [.., C, L]`, producing `[.., C, H]`.
    pub fn forward(
        &self,
        g: &Graph,
        x: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() < 2
            || shape[shape.len() - 1] != self.cfg.lookback
            || shape[shape.len() - 2] != self.cfg.channels
        {
            return Err(Error::shape(format!(
                "forward: expected [.., {}, {}], got {:?}",
                self.cfg.channels, self.cfg.lookback, shape
            )));
        }
        let (xn, state) = self.revin.norm(g, x)?;
        let x_hat = if self.cfg.ablation.no_swt {
            self.mixer_branch(g, 0, &xn, training, rng)?
        } else {
            let bank = self.bank.as_ref().expect("bank present unless no_swt");
            let bind = bank.bind(g);
            let coeffs = swt_decompose(&xn, &bind, self.cfg.levels)?;
            let mut details = Vec::with_capacity(self.cfg.levels);
            for (m, band) in coeffs.details.iter().enumerate() {
                let encoded = if self.cfg.ablation.no_channel_encoder {
                    band.clone()
                } else {
                    self.encoders[m].encode_band(g, band, training, rng)?
                };
                details.push(self.mixer_branch(g, m, &encoded, training, rng)?);
            }
            let approx = self.mixer_branch(g, self.cfg.levels, &coeffs.approx, training, rng)?;
            let mixed = WaveletCoefficients { approx, details, levels: self.cfg.levels };
            iswt_reconstruct(&mixed, &bind)?
        };
        let y = self.final_projection(g, &x_hat, training)?;
        self.revin.denorm(g, &y, &state)
    }

    fn mixer_branch(
        &self,
        g: &Graph,
        idx: usize,
        band: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let mixer = &self.mixers[idx];
        let grid = patchify(band, self.cfg.patch)?;
        let grid = mixer.sp_mlp(g, &grid, training, rng)?;
        let grid = mixer.hierarchy_forward(g, &grid, training, rng)?;
        unpatchify(&grid)
    }

    /// `Y = (x̂ + GELU(x̂·W_g + b_g))·W_out + b_out`, weights shared across
    /// channels.
    fn final_projection(&self, g: &Graph, x_hat: &Tensor, _training: bool) -> Result<Tensor> {
        let gated = self.w_g.bind(g).forward(x_hat)?.gelu();
        let bottleneck = x_hat.add(&gated)?;
        self.w_out.bind(g).forward(&bottleneck)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.revin.params();
        if let Some(bank) = &self.bank {
            out.extend(bank.params());
        }
        for e in &self.encoders {
            out.extend(e.params());
        }
        for m in &self.mixers {
            out.extend(m.params());
        }
        out.extend(self.w_g.params());
        out.extend(self.w_out.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.revin.params_mut();
        if let Some(bank) = &mut self.bank {
            out.extend(bank.params_mut());
        }
        for e in &mut self.encoders {
            out.extend(e.params_mut());
        }
        for m in &mut self.mixers {
            out.extend(m.params_mut());
        }
        out.extend(self.w_g.params_mut());
        out.extend(self.w_out.params_mut());
        out
    }

    /// Number of scalar learnable parameters.
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// (param_count, flops) for one forward pass at the given batch size;
    /// flops counts multiply-accumulates ×2 over matmuls, convolutions and
    /// attention.
    pub fn count_params_flops(&self, batch: usize) -> Result<(usize, u128)> {
        let g = Graph::new();
        let x = g.leaf(
            vec![0.0; batch * self.cfg.channels * self.cfg.lookback],
            &[batch, self.cfg.channels, self.cfg.lookback],
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(&g, &x, false, &mut rng)?;
        Ok((self.count_params(), g.macs() * 2))
    }

    /// Canonical textual serialization of the architecture config (stored in
    /// checkpoints and echoed into run directories).
    pub fn config_lines(&self) -> Vec<(String, String)> {
        let c = &self.cfg;
        let mut out = vec![
            ("lookback".into(), c.lookback.to_string()),
            ("horizon".into(), c.horizon.to_string()),
            ("channels".into(), c.channels.to_string()),
            ("patch".into(), c.patch.to_string()),
            ("levels".into(), c.levels.to_string()),
            ("wavelet".into(), c.wavelet.name().to_string()),
            ("d_model".into(), c.d_model.to_string()),
            ("d_ff".into(), c.d_ff.to_string()),
            ("e_layers".into(), c.e_layers.to_string()),
            ("n_heads".into(), c.resolved_n_heads().to_string()),
            ("dropout".into(), format!("{}", c.dropout)),
            ("mp_depth".into(), c.mp_depth.to_string()),
            ("seed".into(), c.seed.to_string()),
            ("precision".into(), PRECISION.to_string()),
        ];
        for (name, on) in [
            ("no_swt", c.ablation.no_swt),
            ("fixed_swt", c.ablation.fixed_swt),
            ("no_neighboring_mixer", c.ablation.no_neighboring_mixer),
            ("no_channel_encoder", c.ablation.no_channel_encoder),
        ] {
            if on {
                out.push((name.into(), "true".into()));
            }
        }
        out
    }
}

impl ModelConfig {
    /// Inverse of [`Model::config_lines`]; used when loading checkpoints.
    pub fn from_lines(lines: &[(String, String)]) -> Result<Self> {
        let mut cfg = ModelConfig::base();
        cfg.ablation = AblationFlags::default();
        let num = |k: &str, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::ingest(None, format!("checkpoint config: bad {k} '{v}'")))
        };
        for (k, v) in lines {
            match k.as_str() {
                "lookback" => cfg.lookback = num(k, v)?,
                "horizon" => cfg.horizon = num(k, v)?,
                "channels" => cfg.channels = num(k, v)?,
                "patch" => cfg.patch = num(k, v)?,
                "levels" => cfg.levels = num(k, v)?,
                "wavelet" => cfg.wavelet = WaveletInit::parse(v)?,
                "d_model" => cfg.d_model = num(k, v)?,
                "d_ff" => cfg.d_ff = num(k, v)?,
                "e_layers" => cfg.e_layers = num(k, v)?,
                "n_heads" => cfg.n_heads = num(k, v)?,
                "mp_depth" => cfg.mp_depth = num(k, v)?,
                "seed" => cfg.seed = num(k, v)? as u64,
                "dropout" => {
                    cfg.dropout = v.parse().map_err(|_| {
                        Error::ingest(None, format!("checkpoint config: bad dropout '{v}'"))
                    })?
                }
                "precision" => {
                    if v != PRECISION {
                        return Err(Error::ingest(
                            None,
                            format!("checkpoint was written with {v}, this build uses {PRECISION}"),
                        ));
                    }
                }
                "no_swt" => cfg.ablation.no_swt = v == "true",
                "fixed_swt" => cfg.ablation.fixed_swt = v == "true",
                "no_neighboring_mixer" => cfg.ablation.no_neighboring_mixer = v == "true",
                "no_channel_encoder" => cfg.ablation.no_channel_encoder = v == "true",
                _ => {
                    return Err(Error::ingest(
                        None,
                        format!("checkpoint config: unknown key '{k}'"),
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
