//! Reference wavelet filter coefficients used to initialize the learnable
//! filter bank.
//!
//! Orthogonal families store the decomposition low-pass filter only; the
//! high-pass companion follows from the quadrature-mirror rule
//! `h1[k] = (−1)^k · h0[F−1−k]`, and under the adjoint synthesis convention
//! used by this crate (see `wavelet`), the reconstruction filters equal the
//! decomposition filters. The Daubechies taps were obtained by spectral
//! factorization of the maximally-flat half-band polynomial (minimum-phase
//! root selection), symlets by the least-asymmetric root selection, and the
//! coiflet by solving the defining orthonormality/vanishing-moment equations
//! to machine precision; db2/db3/db5 and sym4 agree with published tables to
//! better than 1e-12.
//!
//! `bior3.1` is biorthogonal: analysis and synthesis filters differ. Its
//! reconstruction filters are stored time-reversed so that the same adjoint
//! synthesis convention yields perfect reconstruction with zero phase shift.

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const DB1_LO: [f64; 2] = [7.07106781186547573e-01, 7.07106781186547573e-01];

pub const DB2_LO: [f64; 4] = [
    4.82962913144534267e-01,
    8.36516303737808053e-01,
    2.24143868042013306e-01,
    -1.29409522551260453e-01,
];

pub const DB3_LO: [f64; 6] = [
    3.32670552950082576e-01,
    8.06891509311092436e-01,
    4.59877502118491488e-01,
    -1.35011020010254612e-01,
    -8.54412738820266304e-02,
    3.52262918857095611e-02,
];

pub const DB4_LO: [f64; 8] = [
    2.30377813308896451e-01,
    7.14846570552915561e-01,
    6.30880767929859032e-01,
    -2.79837694168595941e-02,
    -1.87034811719093058e-01,
    3.08413818355606287e-02,
    3.28830116668851757e-02,
    -1.05974017850690178e-02,
];

pub const DB5_LO: [f64; 10] = [
    1.60102397974192928e-01,
    6.03829269797189649e-01,
    7.24308528437773047e-01,
    1.38428145901320881e-01,
    -2.42294887066381998e-01,
    -3.22448695846384720e-02,
    7.75714938400457049e-02,
    -6.24149021279827004e-03,
    -1.25807519990819936e-02,
    3.33572528547377081e-03,
];

pub const SYM3_LO: [f64; 6] = [
    3.52262918857095333e-02,
    -8.54412738820266582e-02,
    -1.35011020010254557e-01,
    4.59877502118491488e-01,
    8.06891509311092547e-01,
    3.32670552950082576e-01,
];

pub const SYM4_LO: [f64; 8] = [
    -7.57657147895022115e-02,
    -2.96355276460026108e-02,
    4.97618667632774792e-01,
    8.03738751805131990e-01,
    2.97857795605306397e-01,
    -9.92195435766333039e-02,
    -1.26039672620313695e-02,
    3.22231006040514106e-02,
];

pub const SYM5_LO: [f64; 10] = [
    1.95388827352498476e-02,
    -2.11018340246890250e-02,
    -1.75328089908056262e-01,
    1.66021057645105059e-02,
    6.33978963456791833e-01,
    7.23407690404041070e-01,
    1.99397533976855890e-01,
    -3.91342493023137949e-02,
    2.95194909257062363e-02,
    2.73330683449987503e-02,
];

pub const COIF5_LO: [f64; 30] = [
    -9.60401206897739388e-08,
    -1.62379978899731024e-07,
    2.06122066078195651e-06,
    3.70072826536779349e-06,
    -2.12702237396771807e-05,
    -4.12198658825036911e-05,
    1.40356336540218988e-04,
    3.01857965888599022e-04,
    -6.37558957350284426e-04,
    -1.66162742080349442e-03,
    2.43157559832708368e-03,
    6.76152058630730829e-03,
    -9.15950797988916016e-03,
    -1.97583923013092376e-02,
    3.26748012122354409e-02,
    4.12875312197410957e-02,
    -1.05563154468311299e-01,
    -6.20377517744446008e-02,
    4.37982310573843292e-01,
    7.74293622238372503e-01,
    4.21571263381292471e-01,
    -5.20466692299888165e-02,
    -9.19215861040045962e-02,
    2.81697434705402254e-02,
    2.34083213720470244e-02,
    -1.01315844843244286e-02,
    -4.15931245907697183e-03,
    2.17829428615204379e-03,
    3.58577724093989472e-04,
    -2.12081851987596390e-04,
];

pub const BIOR3_1_DEC_LO: [f64; 4] = [
    -3.53553390593273786e-01,
    1.06066017177982141e+00,
    1.06066017177982141e+00,
    -3.53553390593273786e-01,
];

pub const BIOR3_1_DEC_HI: [f64; 4] = [
    -1.76776695296636893e-01,
    5.30330085889910707e-01,
    -5.30330085889910707e-01,
    1.76776695296636893e-01,
];

// Stored time-reversed relative to the usual reconstruction tables; see the
// module docs.
pub const BIOR3_1_REC_LO: [f64; 4] = [
    1.76776695296636893e-01,
    5.30330085889910707e-01,
    5.30330085889910707e-01,
    1.76776695296636893e-01,
];

pub const BIOR3_1_REC_HI: [f64; 4] = [
    3.53553390593273786e-01,
    1.06066017177982141e+00,
    -1.06066017177982141e+00,
    -3.53553390593273786e-01,
];

/// Supported wavelet family initializations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveletInit {
    Db1,
    Db2,
    Db3,
    Db4,
    Db5,
    Sym3,
    Sym4,
    Sym5,
    Coif5,
    Bior3_1,
}

pub const SUPPORTED_WAVELETS: [&str; 10] =
    ["db1", "db2", "db3", "db4", "db5", "sym3", "sym4", "sym5", "coif5", "bior3.1"];

impl WaveletInit {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "db1" => WaveletInit::Db1,
            "db2" => WaveletInit::Db2,
            "db3" => WaveletInit::Db3,
            "db4" => WaveletInit::Db4,
            "db5" => WaveletInit::Db5,
            "sym3" => WaveletInit::Sym3,
            "sym4" => WaveletInit::Sym4,
            "sym5" => WaveletInit::Sym5,
            "coif5" => WaveletInit::Coif5,
            "bior3.1" => WaveletInit::Bior3_1,
            _ => {
                return Err(Error::config(format!(
                    "unknown wavelet '{name}'; supported: {}",
                    SUPPORTED_WAVELETS.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            WaveletInit::Db1 => "db1",
            WaveletInit::Db2 => "db2",
            WaveletInit::Db3 => "db3",
            WaveletInit::Db4 => "db4",
            WaveletInit::Db5 => "db5",
            WaveletInit::Sym3 => "sym3",
            WaveletInit::Sym4 => "sym4",
            WaveletInit::Sym5 => "sym5",
            WaveletInit::Coif5 => "coif5",
            WaveletInit::Bior3_1 => "bior3.1",
        }
    }

    fn dec_lo_f64(&self) -> &'static [f64] {
        match self {
            WaveletInit::Db1 => &DB1_LO,
            WaveletInit::Db2 => &DB2_LO,
            WaveletInit::Db3 => &DB3_LO,
            WaveletInit::Db4 => &DB4_LO,
            WaveletInit::Db5 => &DB5_LO,
            WaveletInit::Sym3 => &SYM3_LO,
            WaveletInit::Sym4 => &SYM4_LO,
            WaveletInit::Sym5 => &SYM5_LO,
            WaveletInit::Coif5 => &COIF5_LO,
            WaveletInit::Bior3_1 => &BIOR3_1_DEC_LO,
        }
    }

    /// Filter length F (all four filters share it).
    pub fn filter_len(&self) -> usize {
        self.dec_lo_f64().len()
    }

    /// The four initial filters: (analysis lo, analysis hi, synthesis lo,
    /// synthesis hi), each of length `filter_len()`.
    pub fn filters(&self) -> (Vec<Real>, Vec<Real>, Vec<Real>, Vec<Real>) {
        let to_real = |s: &[f64]| s.iter().map(|&v| v as Real).collect::<Vec<Real>>();
        match self {
            WaveletInit::Bior3_1 => (
                to_real(&BIOR3_1_DEC_LO),
                to_real(&BIOR3_1_DEC_HI),
                to_real(&BIOR3_1_REC_LO),
                to_real(&BIOR3_1_REC_HI),
            ),
            _ => {
                let h0 = to_real(self.dec_lo_f64());
                let h1 = qmf(&h0);
                (h0.clone(), h1.clone(), h0, h1)
            }
        }
    }
}

/// Quadrature-mirror companion: `h1[k] = (−1)^k · h0[F−1−k]`.
pub fn qmf(h0: &[Real]) -> Vec<Real> {
    let f = h0.len();
    (0..f)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * h0[f - 1 - k]
        })
        .collect()
}
