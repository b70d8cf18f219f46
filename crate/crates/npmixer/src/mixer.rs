//! Non-overlapping patching and the hierarchical Group-Mix-Dissolve
//! recursion: a shared per-patch MLP, then K levels of pairwise relational
//! mixing over blocks whose size doubles per level, with a learnable gate
//! splitting each relation output asymmetrically between the first block and
//! the rest.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, LinearBind};
use crate::tensor::{concat_lastdim, Graph, Param, Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct MixerConfig {
    pub patch: usize,
    pub d_ff: usize,
    /// MP-MLP depth (number of linear layers).
    pub mp_depth: usize,
    pub dropout: Real,
}

/// A channel × patch-count × patch-length view of a sub-band.
pub struct PatchGrid {
    /// Shaped `[.., C, N, P]`.
    pub data: Tensor,
    pub pad_len: usize,
    pub orig_len: usize,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        self.data.shape()[self.data.shape().len() - 2]
    }

    pub fn patch_len(&self) -> usize {
        *self.data.shape().last().unwrap()
    }
}

/// Zero-pad the tail so the length divides by `p`, then reshape to patches.
pub fn patchify(x: &Tensor, p: usize) -> Result<PatchGrid> {
    if p < 1 {
        return Err(Error::config("patchify: patch size must be ≥ 1"));
    }
    let l = *x.shape().last().unwrap();
    let pad = (p - l % p) % p;
    let n = (l + pad) / p;
    let padded = if pad == 0 {
        x.clone()
    } else {
        let mut zshape = x.shape().to_vec();
        *zshape.last_mut().unwrap() = pad;
        let zeros = x.graph().leaf(vec![0.0; zshape.iter().product()], &zshape)?;
        concat_lastdim(&[x.clone(), zeros])?
    };
    let mut shape = x.shape().to_vec();
    shape.pop();
    shape.push(n);
    shape.push(p);
    Ok(PatchGrid { data: padded.reshape(&shape)?, pad_len: pad, orig_len: l })
}

/// Flatten patches back and truncate to the original length.
pub fn unpatchify(grid: &PatchGrid) -> Result<Tensor> {
    let n = grid.n_patches();
    let p = grid.patch_len();
    let mut shape = grid.data.shape().to_vec();
    shape.pop();
    shape.pop();
    shape.push(n * p);
    let flat = grid.data.reshape(&shape)?;
    if grid.pad_len == 0 {
        Ok(flat)
    } else {
        flat.slice_lastdim(0, grid.orig_len)
    }
}

/// Gated asymmetric update: block 0 becomes `q_0 + α·R_0`; block i>0 becomes
/// `q_i + (1−α)·R_{i−1}` (so R_0 feeds both q_0 and q_1 with complementary
/// weights). `alpha` is a scalar tensor in (0,1), normally `sigmoid(γ)`.
pub fn level_mix(blocks: &[Tensor], relations: &[Tensor], alpha: &Tensor) -> Result<Vec<Tensor>> {
    if blocks.len() < 2 {
        return Err(Error::contract("level_mix: needs at least two blocks"));
    }
    if relations.len() != blocks.len() - 1 {
        return Err(Error::contract(format!(
            "level_mix: {} blocks require {} relation outputs, got {}",
            blocks.len(),
            blocks.len() - 1,
            relations.len()
        )));
    }
    let one_minus_alpha = alpha.affine(-1.0, 1.0);
    let mut updated = Vec::with_capacity(blocks.len());
    updated.push(blocks[0].add(&relations[0].mul(alpha)?)?);
    for i in 1..blocks.len() {
        updated.push(blocks[i].add(&relations[i - 1].mul(&one_minus_alpha)?)?);
    }
    Ok(updated)
}

/// One hierarchy level: an MP-MLP (2S → … → S) and a gate logit.
pub struct MixLevel {
    pub mp: Vec<Linear>,
    pub gate: Param,
    pub block_len: usize,
}

/// Patch mixer for one wavelet branch: shared SP-MLP plus K gated levels.
pub struct NeighboringMixer {
    pub cfg: MixerConfig,
    pub sp1: Linear,
    pub sp2: Linear,
    pub levels: Vec<MixLevel>,
    pub n_patches: usize,
}

/// Block length, block count, and pair-mix count per level for a sequence of
/// `n` patches of length `p`.
pub fn level_plan(n: usize, p: usize) -> Vec<(usize, usize, usize)> {
    let k_max = if n >= 2 { (n as f64).log2().floor() as usize } else { 0 };
    let total = n * p;
    (1..=k_max)
        .map(|k| {
            let s = (1usize << (k - 1)) * p;
            let b = total / s;
            (s, b, b.saturating_sub(1))
        })
        .collect()
}

impl NeighboringMixer {
    pub fn new(name: &str, lookback: usize, cfg: MixerConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.patch < 1 {
            return Err(Error::config("mixer: patch size must be ≥ 1"));
        }
        if cfg.mp_depth < 1 {
            return Err(Error::config("mixer: mp_depth must be ≥ 1"));
        }
        let p = cfg.patch;
        let n = lookback.div_ceil(p);
        let hidden = cfg.d_ff.min(4 * p).max(1);
        let sp1 = Linear::new(&format!("{name}.sp1"), p, hidden, rng);
        let sp2 = Linear::new(&format!("{name}.sp2"), hidden, p, rng);
        let mut levels = Vec::new();
        for (k, (s, _b, _)) in level_plan(n, p).iter().enumerate() {
            let mut mp = Vec::with_capacity(cfg.mp_depth);
            for li in 0..cfg.mp_depth {
                let in_dim = if li == 0 { 2 * s } else { *s };
                mp.push(Linear::new(&format!("{name}.level{k}.mp{li}"), in_dim, *s, rng));
            }
            levels.push(MixLevel {
                mp,
                gate: Param::new(format!("{name}.level{k}.gate"), vec![0.0], &[1]),
                block_len: *s,
            });
        }
        Ok(NeighboringMixer { cfg, sp1, sp2, levels, n_patches: n })
    }

    /// Residual per-patch MLP: `X' = X + Lin2(Dropout(GELU(Lin1(X))))`,
    /// weights shared across channels and patches.
    pub fn sp_mlp(
        &self,
        g: &Graph,
        grid: &PatchGrid,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<PatchGrid> {
        if grid.patch_len() != self.cfg.patch {
            return Err(Error::shape(format!(
                "sp_mlp: grid patch length {} does not match weights ({})",
                grid.patch_len(),
                self.cfg.patch
            )));
        }
        let h = self
            .sp1
            .bind(g)
            .forward(&grid.data)?
            .gelu()
            .dropout(self.cfg.dropout, training, rng)?;
        let update = self.sp2.bind(g).forward(&h)?;
        Ok(PatchGrid {
            data: grid.data.add(&update)?,
            pad_len: grid.pad_len,
            orig_len: grid.orig_len,
        })
    }

    fn mp_forward(
        &self,
        binds: &[LinearBind],
        pair: &Tensor,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        let mut h = pair.clone();
        for (i, bind) in binds.iter().enumerate() {
            h = bind.forward(&h)?;
            if i + 1 < binds.len() {
                h = h.gelu().dropout(self.cfg.dropout, training, rng)?;
            }
        }
        Ok(h)
    }

    /// The Group-Mix-Dissolve recursion. Identity when no levels exist
    /// (fewer than two patches).
    pub fn hierarchy_forward(
        &self,
        g: &Graph,
        grid: &PatchGrid,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<PatchGrid> {
        self.hierarchy_truncated(g, grid, self.levels.len(), training, rng)
    }

    /// Like `hierarchy_forward`, but running only the first `max_levels`
    /// levels (used by locality probes).
    pub fn hierarchy_truncated(
        &self,
        g: &Graph,
        grid: &PatchGrid,
        max_levels: usize,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<PatchGrid> {
        if grid.patch_len() != self.cfg.patch {
            return Err(Error::shape(format!(
                "hierarchy_forward: grid patch length {} does not match weights ({})",
                grid.patch_len(),
                self.cfg.patch
            )));
        }
        let n = grid.n_patches();
        let p = grid.patch_len();
        let total = n * p;
        let grid_shape = grid.data.shape().to_vec();
        let mut flat_shape = grid_shape.clone();
        flat_shape.pop();
        flat_shape.pop();
        flat_shape.push(total);
        let mut flat = grid.data.reshape(&flat_shape)?;

        for level in self.levels.iter().take(max_levels) {
            let s = level.block_len;
            let b = total / s;
            if b < 2 {
                continue;
            }
            let binds: Vec<LinearBind> = level.mp.iter().map(|l| l.bind(g)).collect();
            let alpha = level.gate.leaf(g).sigmoid();
            let blocks: Vec<Tensor> = (0..b)
                .map(|i| flat.slice_lastdim(i * s, s))
                .collect::<Result<_>>()?;
            let mut relations = Vec::with_capacity(b - 1);
            for i in 0..b - 1 {
                let pair = concat_lastdim(&[blocks[i].clone(), blocks[i + 1].clone()])?;
                relations.push(self.mp_forward(&binds, &pair, training, rng)?);
            }
            let mut updated = level_mix(&blocks, &relations, &alpha)?;
            if b * s < total {
                updated.push(flat.slice_lastdim(b * s, total - b * s)?);
            }
            flat = concat_lastdim(&updated)?;
        }
        Ok(PatchGrid {
            data: flat.reshape(&grid_shape)?,
            pad_len: grid.pad_len,
            orig_len: grid.orig_len,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.sp1.params();
        out.extend(self.sp2.params());
        for level in &self.levels {
            for lin in &level.mp {
                out.extend(lin.params());
            }
            out.push(&level.gate);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.sp1.params_mut();
        out.extend(self.sp2.params_mut());
        for level in &mut self.levels {
            for lin in &mut level.mp {
                out.extend(lin.params_mut());
            }
            out.push(&mut level.gate);
        }
        out
    }
}
