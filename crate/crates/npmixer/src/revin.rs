//! Reversible instance normalization: per-window, per-channel
//! standardization with a learnable affine, inverted after prediction using
//! the stored window statistics.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Param, Real, Tensor};

/// Learnable per-channel affine (identity at initialization).
pub struct Revin {
    pub scale: Param,
    pub shift: Param,
    pub eps: Real,
}

/// Window statistics captured by `norm`, needed to invert it.
pub struct RevinState {
    /// Per (leading…, channel) row of the normalized window.
    pub mean: Vec<Real>,
    /// Std with the eps floor already applied; always ≥ eps.
    pub std: Vec<Real>,
}

impl Revin {
    pub fn new(name: &str, channels: usize) -> Self {
        Revin {
            scale: Param::new(format!("{name}.scale"), vec![1.0; channels], &[channels]),
            shift: Param::new(format!("{name}.shift"), vec![0.0; channels], &[channels]),
            eps: 1e-5,
        }
    }

    fn channels(&self) -> usize {
        self.scale.numel()
    }

    /// Normalize `x: [.., C, L]`: subtract per-row mean, divide by per-row
    /// std (+eps), then apply the learnable per-channel affine.
    pub fn norm(&self, g: &Graph, x: &Tensor) -> Result<(Tensor, RevinState)> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 2] != self.channels() {
            return Err(Error::shape(format!(
                "revin norm: expected [.., {}, L], got {:?}",
                self.channels(),
                shape
            )));
        }
        let l = *shape.last().unwrap();
        let rows = x.numel() / l;
        let data = x.data();
        let mut mean = Vec::with_capacity(rows);
        let mut std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &data[r * l..(r + 1) * l];
            let m = row.iter().sum::<Real>() / l as Real;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<Real>() / l as Real;
            mean.push(m);
            std.push(var.sqrt() + self.eps);
        }
        let mul: Vec<Real> = std.iter().map(|s| 1.0 / s).collect();
        let add: Vec<Real> = mean.iter().zip(&std).map(|(m, s)| -m / s).collect();
        let standardized = x.row_affine_const(&mul, &add)?;
        let scaled = standardized.channel_affine(&self.scale.leaf(g), &self.shift.leaf(g))?;
        Ok((scaled, RevinState { mean, std }))
    }

    /// Invert the affine, then restore the window statistics on
    /// `y: [.., C, H]` (same leading/channel layout as the normalized input).
    pub fn denorm(&self, g: &Graph, y: &Tensor, state: &RevinState) -> Result<Tensor> {
        let shape = y.shape();
        if shape.len() < 2 || shape[shape.len() - 2] != self.channels() {
            return Err(Error::shape(format!(
                "revin denorm: expected [.., {}, H], got {:?}",
                self.channels(),
                shape
            )));
        }
        let h = *shape.last().unwrap();
        let rows = y.numel() / h;
        if rows != state.mean.len() {
            return Err(Error::state(format!(
                "revin denorm: state holds {} rows, output has {rows}",
                state.mean.len()
            )));
        }
        let scale = self.scale.leaf(g);
        let shift = self.shift.leaf(g);
        let inv_scale = scale.recip();
        let neg_shift = shift.mul(&inv_scale)?.affine(-1.0, 0.0);
        let unscaled = y.channel_affine(&inv_scale, &neg_shift)?;
        unscaled.row_affine_const(&state.std, &state.mean)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.scale, &self.shift]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scale, &mut self.shift]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_affine_round_trip() {
        let revin = Revin::new("revin", 2);
        let g = Graph::new();
        let data: Vec<Real> = vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.5, 2.5, 100.0];
        let x = g.leaf(data.clone(), &[2, 4]).unwrap();
        let (n, state) = revin.norm(&g, &x).unwrap();
        let back = revin.denorm(&g, &n, &state).unwrap().to_vec();
        for (a, b) in back.iter().zip(&data) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // normalized rows have ~zero mean, ~unit variance
        let nv = n.to_vec();
        for r in 0..2 {
            let row = &nv[r * 4..(r + 1) * 4];
            let m = row.iter().sum::<Real>() / 4.0;
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn constant_channel_via_eps() {
        let revin = Revin::new("revin", 1);
        let g = Graph::new();
        let x = g.leaf(vec![7.0; 6], &[1, 6]).unwrap();
        let (n, state) = revin.norm(&g, &x).unwrap();
        // zero variance: normalized to the affine shift (0 at identity init)
        assert!(n.to_vec().iter().all(|v| v.abs() < 1e-8));
        let back = revin.denorm(&g, &n, &state).unwrap().to_vec();
        assert!(back.iter().all(|v| (v - 7.0).abs() < 1e-10));
    }

    #[test]
    fn non_identity_affine_still_inverts() {
        let mut revin = Revin::new("revin", 1);
        revin.scale.data[0] = 2.5;
        revin.shift.data[0] = -0.7;
        let g = Graph::new();
        let data = vec![0.1, -0.4, 2.2, 1.3];
        let x = g.leaf(data.clone(), &[1, 4]).unwrap();
        let (n, state) = revin.norm(&g, &x).unwrap();
        let back = revin.denorm(&g, &n, &state).unwrap().to_vec();
        for (a, b) in back.iter().zip(&data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn state_row_mismatch_is_an_error() {
        let revin = Revin::new("revin", 1);
        let g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]).unwrap();
        let (_, state) = revin.norm(&g, &x).unwrap();
        let bad = g.leaf(vec![0.0; 8], &[2, 4]).unwrap();
        assert!(revin.denorm(&g, &bad, &state).is_err());
    }
}
