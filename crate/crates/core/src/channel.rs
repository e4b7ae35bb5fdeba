//! Transmitter side of the LDPC part and the block-fading MIMO channel.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::codebook::{check_binary, CsIndex};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, tag};

/// Seeded random permutation keyed by a user's codeword index.
///
/// `interleave` maps a codeword-order sequence `s` to channel order
/// `t[l] = s[perm[l]]`; `deinterleave` is its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    pattern_id: CsIndex,
    perm: Vec<usize>,
    inv: Vec<usize>,
}

/// Fisher-Yates shuffle seeded by `derive_seed(master_seed, "interleaver", idx)`.
pub fn make_interleaver(idx: CsIndex, lc: usize, master_seed: u64) -> Interleaver {
    let mut perm: Vec<usize> = (0..lc).collect();
    let mut rng = rng_from_seed(derive_seed(master_seed, tag::INTERLEAVER, idx.value() as u64));
    perm.shuffle(&mut rng);
    Interleaver::from_permutation(idx, perm).expect("shuffle yields a permutation")
}

impl Interleaver {
    pub fn from_permutation(pattern_id: CsIndex, perm: Vec<usize>) -> Result<Self> {
        let mut inv = vec![usize::MAX; perm.len()];
        for (l, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inv[p] != usize::MAX {
                return Err(Error::format("permutation", format!("entry {p} at {l}")));
            }
            inv[p] = l;
        }
        Ok(Interleaver {
            pattern_id,
            perm,
            inv,
        })
    }

    pub fn identity(pattern_id: CsIndex, lc: usize) -> Self {
        Interleaver::from_permutation(pattern_id, (0..lc).collect()).unwrap()
    }

    pub fn pattern_id(&self) -> CsIndex {
        self.pattern_id
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Codeword position sent at channel use `l`.
    pub fn source_of(&self, l: usize) -> usize {
        self.perm[l]
    }

    /// Channel use carrying codeword position `i`.
    pub fn slot_of(&self, i: usize) -> usize {
        self.inv[i]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, seq: &[T]) -> Vec<T> {
        assert_eq!(seq.len(), self.perm.len(), "interleaver length");
        self.perm.iter().map(|&p| seq[p]).collect()
    }

    pub fn deinterleave<T: Copy>(&self, seq: &[T]) -> Vec<T> {
        assert_eq!(seq.len(), self.perm.len(), "interleaver length");
        self.inv.iter().map(|&l| seq[l]).collect()
    }
}

/// Bit 1 maps to +1, bit 0 to -1.
pub fn bpsk_modulate(bits: &[u8]) -> Result<Vec<f64>> {
    check_binary(bits)?;
    Ok(bits.iter().map(|&b| 2.0 * b as f64 - 1.0).collect())
}

/// Hard demapping: positive symbols are bit 1.
pub fn bpsk_demap(symbols: &[f64]) -> Vec<u8> {
    symbols.iter().map(|&s| u8::from(s > 0.0)).collect()
}

/// One user's transmitted frame `sqrt(Es) * [a; pi(s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub user_id: usize,
    pub cs_index: CsIndex,
    pub symbols: Vec<Complex64>,
}

pub fn assemble_frame(
    user_id: usize,
    a: ArrayView1<'_, Complex64>,
    s: &[f64],
    pi: &Interleaver,
    es: f64,
) -> Result<TxFrame> {
    if s.len() != pi.len() {
        return Err(Error::Dimension {
            what: "BPSK vector vs interleaver",
            expected: pi.len(),
            got: s.len(),
        });
    }
    let amp = es.sqrt();
    let mut symbols = Vec::with_capacity(a.len() + s.len());
    symbols.extend(a.iter().map(|&z| z * amp));
    symbols.extend(pi.interleave(s).into_iter().map(|x| Complex64::new(x * amp, 0.0)));
    Ok(TxFrame {
        user_id,
        cs_index: pi.pattern_id(),
        symbols,
    })
}

/// Channel matrix `h` (`Ka x M`) and noise `noise` (`L x M`) of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Array2<Complex64>,
    pub noise: Array2<Complex64>,
}

fn complex_gaussian(rows: usize, cols: usize, var: f64, seed: u64) -> Array2<Complex64> {
    let mut rng = rng_from_seed(seed);
    let sd = (var / 2.0).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re * sd, im * sd)
    })
}

impl ChannelRealization {
    /// Rayleigh block fading: `h` entries CN(0, 1), noise entries
    /// CN(0, `noise_var`), drawn from independent streams.
    pub fn generate(
        ka: usize,
        m: usize,
        l: usize,
        noise_var: f64,
        channel_seed: u64,
        noise_seed: u64,
    ) -> Self {
        ChannelRealization {
            h: complex_gaussian(ka, m, 1.0, channel_seed),
            noise: complex_gaussian(l, m, noise_var, noise_seed),
        }
    }

    /// Same channel, noise removed.
    pub fn noiseless(h: Array2<Complex64>, l: usize) -> Self {
        let m = h.ncols();
        ChannelRealization {
            h,
            noise: Array2::zeros((l, m)),
        }
    }
}

/// `Y = V H + Z` with `V` holding one frame per column.
pub fn transmit(frames: &[TxFrame], chan: &ChannelRealization) -> Result<Array2<Complex64>> {
    let (l, m) = chan.noise.dim();
    if frames.len() != chan.h.nrows() {
        return Err(Error::Dimension {
            what: "frame count vs channel rows",
            expected: chan.h.nrows(),
            got: frames.len(),
        });
    }
    if chan.h.ncols() != m {
        return Err(Error::Dimension {
            what: "antenna count",
            expected: m,
            got: chan.h.ncols(),
        });
    }
    let mut v = Array2::zeros((l, frames.len()));
    for (k, f) in frames.iter().enumerate() {
        if f.symbols.len() != l {
            return Err(Error::Dimension {
                what: "frame length",
                expected: l,
                got: f.symbols.len(),
            });
        }
        v.column_mut(k).iter_mut().zip(&f.symbols).for_each(|(d, &s)| *d = s);
    }
    Ok(v.dot(&chan.h) + &chan.noise)
}
