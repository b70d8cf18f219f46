//! Learnable stationary wavelet transform (SWT) and its inverse.
//!
//! The SWT is undecimated: every level keeps full sequence length, using
//! dilated circular convolutions with dilation `2^(m−1)` at level `m`.
//! Analysis uses the causal convention `y[t] = Σ h[k]·x[(t − k·d) mod L]`;
//! synthesis uses its adjoint `y[t] = Σ g[k]·x[(t + k·d) mod L]` with a ½
//! factor per level, which makes reconstruction exact at initialization for
//! every supported family. All four filters are learnable and unconstrained
//! after initialization.

use crate::error::{Error, Result};
use crate::filters::WaveletInit;
use crate::tensor::{Graph, Param, Real, Tensor};

/// Four learnable 1-D filters plus their frozen initialization.
pub struct FilterBank {
    pub h0: Param,
    pub h1: Param,
    pub g0: Param,
    pub g1: Param,
    pub init_name: WaveletInit,
    pub w_init_lo: Vec<Real>,
    pub w_init_hi: Vec<Real>,
}

impl FilterBank {
    pub fn new(name_prefix: &str, init: WaveletInit) -> Self {
        let (h0, h1, g0, g1) = init.filters();
        let f = init.filter_len();
        FilterBank {
            w_init_lo: h0.clone(),
            w_init_hi: h1.clone(),
            h0: Param::new(format!("{name_prefix}.h0"), h0, &[f]),
            h1: Param::new(format!("{name_prefix}.h1"), h1, &[f]),
            g0: Param::new(format!("{name_prefix}.g0"), g0, &[f]),
            g1: Param::new(format!("{name_prefix}.g1"), g1, &[f]),
            init_name: init,
        }
    }

    /// Freeze or unfreeze all four filters.
    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.trainable = trainable;
        }
    }

    pub fn bind(&self, g: &Graph) -> BankBind {
        BankBind {
            h0: self.h0.leaf(g),
            h1: self.h1.leaf(g),
            g0: self.g0.leaf(g),
            g1: self.g1.leaf(g),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.h0, &self.h1, &self.g0, &self.g1]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.h0, &mut self.h1, &mut self.g0, &mut self.g1]
    }
}

/// Per-forward-pass binding of the bank's filters to a tape.
pub struct BankBind {
    pub h0: Tensor,
    pub h1: Tensor,
    pub g0: Tensor,
    pub g1: Tensor,
}

/// One approximation band and `levels` detail bands, all at full length.
pub struct WaveletCoefficients {
    pub approx: Tensor,
    /// Ordered by level m = 1..=levels.
    pub details: Vec<Tensor>,
    pub levels: usize,
}

/// Recursive analysis: `A_0 = x`; at level m,
/// `A_m = A_{m−1} * h0`, `D_m = A_{m−1} * h1` with dilation `2^(m−1)`.
pub fn swt_decompose(x: &Tensor, bank: &BankBind, levels: usize) -> Result<WaveletCoefficients> {
    if levels < 1 {
        return Err(Error::config("swt_decompose: levels must be ≥ 1"));
    }
    let mut approx = x.clone();
    let mut details = Vec::with_capacity(levels);
    for m in 1..=levels {
        let d = 1usize << (m - 1);
        let next = approx.conv1d_dilated_circular(&bank.h0, d)?;
        details.push(approx.conv1d_dilated_circular(&bank.h1, d)?);
        approx = next;
    }
    Ok(WaveletCoefficients { approx, details, levels })
}

/// Recursive synthesis: for m = M..1,
/// `A_{m−1} = ½·(A_m ⊛ g0 + D_m ⊛ g1)` with the adjoint convolution.
pub fn iswt_reconstruct(coeffs: &WaveletCoefficients, bank: &BankBind) -> Result<Tensor> {
    if coeffs.levels != coeffs.details.len() {
        return Err(Error::contract(format!(
            "iswt_reconstruct: coefficient set claims {} levels but holds {} detail bands",
            coeffs.levels,
            coeffs.details.len()
        )));
    }
    let mut a = coeffs.approx.clone();
    for m in (1..=coeffs.levels).rev() {
        let d = 1usize << (m - 1);
        let lo = a.conv1d_dilated_circular_adjoint(&bank.g0, d)?;
        let hi = coeffs.details[m - 1].conv1d_dilated_circular_adjoint(&bank.g1, d)?;
        a = lo.add(&hi)?.affine(0.5, 0.0);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::SUPPORTED_WAVELETS;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut impl Rng, c: usize, l: usize) -> Vec<Real> {
        (0..c * l).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Naive index-by-index reference of the analysis recursion, independent
    /// of the tensor engine's segmented convolution kernel.
    fn reference_swt(x: &[Real], c: usize, l: usize, h: &[Real], dil: usize) -> Vec<Real> {
        let mut y = vec![0.0; c * l];
        for ch in 0..c {
            for t in 0..l {
                let mut acc = 0.0;
                for (k, &hk) in h.iter().enumerate() {
                    let idx = (t + l * h.len() * dil - k * dil) % l;
                    acc += hk * x[ch * l + idx];
                }
                y[ch * l + t] = acc;
            }
        }
        y
    }

    #[test]
    fn constant_signal_db1() {
        let bank = FilterBank::new("bank", WaveletInit::Db1);
        let g = Graph::new();
        let x = g.leaf(vec![3.0; 8], &[1, 8]).unwrap();
        let coeffs = swt_decompose(&x, &bank.bind(&g), 1).unwrap();
        let sqrt2: Real = (2.0 as Real).sqrt();
        for v in coeffs.approx.to_vec() {
            assert!((v - 3.0 * sqrt2).abs() < 1e-12);
        }
        for v in coeffs.details[0].to_vec() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn bands_match_reference_recursion_db2_two_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, l) = (3, 32);
        let data = random_signal(&mut rng, c, l);
        let bank = FilterBank::new("bank", WaveletInit::Db2);
        let g = Graph::new();
        let x = g.leaf(data.clone(), &[c, l]).unwrap();
        let coeffs = swt_decompose(&x, &bank.bind(&g), 2).unwrap();

        let a1 = reference_swt(&data, c, l, &bank.w_init_lo, 1);
        let d1 = reference_swt(&data, c, l, &bank.w_init_hi, 1);
        let a2 = reference_swt(&a1, c, l, &bank.w_init_lo, 2);
        let d2 = reference_swt(&a1, c, l, &bank.w_init_hi, 2);
        for (a, b) in coeffs.approx.to_vec().iter().zip(&a2) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in coeffs.details[0].to_vec().iter().zip(&d1) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in coeffs.details[1].to_vec().iter().zip(&d2) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn perfect_reconstruction_and_zero_coeffs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in SUPPORTED_WAVELETS {
            let bank = FilterBank::new("bank", WaveletInit::parse(name).unwrap());
            let (c, l) = (2, 48);
            let data = random_signal(&mut rng, c, l);
            let g = Graph::new();
            let bind = bank.bind(&g);
            let x = g.leaf(data.clone(), &[c, l]).unwrap();
            let coeffs = swt_decompose(&x, &bind, 3).unwrap();
            let rec = iswt_reconstruct(&coeffs, &bind).unwrap();
            for (a, b) in rec.to_vec().iter().zip(&data) {
                assert!((a - b).abs() < 1e-8, "{name}: PR violated ({a} vs {b})");
            }
        }
        // all-zero coefficients reconstruct to zero
        let bank = FilterBank::new("bank", WaveletInit::Db2);
        let g = Graph::new();
        let bind = bank.bind(&g);
        let zero = g.leaf(vec![0.0; 16], &[1, 16]).unwrap();
        let coeffs = WaveletCoefficients {
            approx: zero.clone(),
            details: vec![zero.clone(), zero],
            levels: 2,
        };
        let rec = iswt_reconstruct(&coeffs, &bind).unwrap();
        assert!(rec.to_vec().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn perturbed_filter_breaks_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bank = FilterBank::new("bank", WaveletInit::Db2);
        bank.h0.data[1] += 0.01;
        let data = random_signal(&mut rng, 1, 32);
        let g = Graph::new();
        let bind = bank.bind(&g);
        let x = g.leaf(data.clone(), &[1, 32]).unwrap();
        let coeffs = swt_decompose(&x, &bind, 2).unwrap();
        let rec = iswt_reconstruct(&coeffs, &bind).unwrap();
        let err: Real = rec
            .to_vec()
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max);
        assert!(err > 1e-4, "perturbation should break the identity, err={err}");
    }

    #[test]
    fn translation_invariance_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = 32;
        let data = random_signal(&mut rng, 1, l);
        let shift = 5;
        let rotated: Vec<Real> = (0..l).map(|t| data[(t + l - shift) % l]).collect();
        let bank = FilterBank::new("bank", WaveletInit::Sym4);
        let decomposed = |input: Vec<Real>| {
            let g = Graph::new();
            let x = g.leaf(input, &[1, l]).unwrap();
            let c = swt_decompose(&x, &bank.bind(&g), 2).unwrap();
            (c.approx.to_vec(), c.details[0].to_vec(), c.details[1].to_vec())
        };
        let (a, d1, d2) = decomposed(data);
        let (ar, d1r, d2r) = decomposed(rotated);
        for (orig, rot) in [(&a, &ar), (&d1, &d1r), (&d2, &d2r)] {
            for t in 0..l {
                let expect = orig[t];
                let got = rot[(t + shift) % l];
                assert!((expect - got).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linearity_with_perturbed_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = 24;
        let mut bank = FilterBank::new("bank", WaveletInit::Db3);
        for v in bank.h0.data.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let xs = random_signal(&mut rng, 1, l);
        let ys = random_signal(&mut rng, 1, l);
        let (a, b): (Real, Real) = (1.7, -0.6);
        let combo: Vec<Real> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
        let run = |input: Vec<Real>| {
            let g = Graph::new();
            let x = g.leaf(input, &[1, l]).unwrap();
            let c = swt_decompose(&x, &bank.bind(&g), 2).unwrap();
            c.approx.to_vec()
        };
        let lhs = run(combo);
        let (rx, ry) = (run(xs), run(ys));
        for t in 0..l {
            assert!((lhs[t] - (a * rx[t] + b * ry[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn filter_gradients_pass_finite_difference_check() {
        use crate::check::max_grad_rel_error;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = 16;
        let data = random_signal(&mut rng, 2, l);
        let bank = FilterBank::new("bank", WaveletInit::Db2);
        let mut params: Vec<Param> = bank.params().into_iter().cloned().collect();
        let err = max_grad_rel_error(&mut params, &mut |g, ps| {
            let bind = BankBind {
                h0: ps[0].leaf(g),
                h1: ps[1].leaf(g),
                g0: ps[2].leaf(g),
                g1: ps[3].leaf(g),
            };
            let x = g.leaf(data.clone(), &[2, l])?;
            let coeffs = swt_decompose(&x, &bind, 2)?;
            let rec = iswt_reconstruct(&coeffs, &bind)?;
            // generic scalar loss touching every band
            let extra = coeffs.details[0].mul(&coeffs.details[0])?.mean();
            Ok(rec.mul(&rec)?.mean().add(&extra)?.sum())
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn level_mismatch_is_a_contract_error() {
        let bank = FilterBank::new("bank", WaveletInit::Db1);
        let g = Graph::new();
        let bind = bank.bind(&g);
        let zero = g.leaf(vec![0.0; 8], &[1, 8]).unwrap();
        let bad = WaveletCoefficients { approx: zero.clone(), details: vec![zero], levels: 2 };
        assert!(iswt_reconstruct(&bad, &bind).is_err());
    }
}
