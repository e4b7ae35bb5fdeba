//! Common SPARC dictionary and the CS-part index mapping.
//!
//! The first `b_p` message bits select one column of a shared `l_p x 2^b_p`
//! complex dictionary. Columns are i.i.d. circularly-symmetric Gaussian,
//! rescaled so that every column has squared norm exactly `l_p`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ShapeBuilder};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::MAX_BP;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// 1-based codeword index in `[1, 2^b_p]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CsIndex(u32);

impl CsIndex {
    pub fn new(value: u64, bp: usize) -> Result<Self> {
        let max = 1u64 << bp;
        if value == 0 || value > max {
            return Err(Error::IndexOutOfRange { index: value, max });
        }
        Ok(CsIndex(value as u32))
    }

    /// Index from a 0-based column number.
    pub fn from_column(column: usize) -> Self {
        CsIndex(column as u32 + 1)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    /// 0-based column of the codebook matrix.
    pub fn column(self) -> usize {
        self.0 as usize - 1
    }
}

impl std::fmt::Display for CsIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Shared SPARC dictionary, stored column-major (`lp x 2^bp`).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    columns: Array2<Complex64>,
    seed: u64,
    lp: usize,
    bp: usize,
}

impl Codebook {
    /// Draws a dictionary with i.i.d. CN(0, 1) entries and normalizes every
    /// column to squared norm `lp`.
    pub fn generate(seed: u64, lp: usize, bp: usize) -> Result<Self> {
        if bp > MAX_BP {
            return Err(Error::CodebookTooLarge { bp, max: MAX_BP });
        }
        if bp == 0 {
            return Err(Error::config("b_p", "must be at least 1"));
        }
        if lp == 0 {
            return Err(Error::config("l_p", "must be at least 1"));
        }
        let n = 1usize << bp;
        let mut rng = rng_from_seed(seed);
        let mut data = Vec::with_capacity(lp * n);
        let target = (lp as f64).sqrt();
        for _ in 0..n {
            let start = data.len();
            for _ in 0..lp {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                data.push(Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2);
            }
            let col = &mut data[start..];
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let scale = target / norm;
            col.iter_mut().for_each(|z| *z *= scale);
        }
        let columns = Array2::from_shape_vec((lp, n).f(), data).expect("shape matches data");
        Ok(Codebook {
            columns,
            seed,
            lp,
            bp,
        })
    }

    pub fn lp(&self) -> usize {
        self.lp
    }

    pub fn bp(&self) -> usize {
        self.bp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of codewords.
    pub fn size(&self) -> usize {
        1 << self.bp
    }

    /// The full `lp x 2^bp` matrix.
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.columns
    }

    pub fn codeword(&self, idx: CsIndex) -> ArrayView1<'_, Complex64> {
        self.columns.column(idx.column())
    }

    /// Writes the codebook in the binary dictionary format.
    ///
    /// Layout (all little-endian): magic `b"SPARCCB1"`, `lp: u64`, `bp: u64`,
    /// `seed: u64`, then `lp * 2^bp` entries in column-major order, each as
    /// `re: f64, im: f64`.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        write_complex_matrix(
            path,
            CODEBOOK_MAGIC,
            [self.lp as u64, self.bp as u64, self.seed],
            self.columns.t().iter().copied(),
        )
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let (header, data) = read_complex_matrix(path, CODEBOOK_MAGIC, |h| {
            let bp = h[1] as usize;
            if bp == 0 || bp > MAX_BP {
                return Err(Error::format("codebook file", format!("bp = {bp}")));
            }
            Ok(h[0] as usize * (1usize << bp))
        })?;
        let lp = header[0] as usize;
        let bp = header[1] as usize;
        let columns = Array2::from_shape_vec((lp, 1usize << bp).f(), data)
            .map_err(|e| Error::format("codebook file", e.to_string()))?;
        Ok(Codebook {
            columns,
            seed: header[2],
            lp,
            bp,
        })
    }
}

pub(crate) const CODEBOOK_MAGIC: &[u8; 8] = b"SPARCCB1";
pub(crate) const MATRIX_MAGIC: &[u8; 8] = b"URAMATX1";

/// Writes a dense complex matrix with the same container as the codebook
/// (magic `b"URAMATX1"`, header `rows, cols, seed`, column-major payload).
pub fn write_matrix(path: &Path, m: &Array2<Complex64>, seed: u64) -> Result<()> {
    write_complex_matrix(
        path,
        MATRIX_MAGIC,
        [m.nrows() as u64, m.ncols() as u64, seed],
        m.t().iter().copied(),
    )
}

/// Reads a matrix written by [`write_matrix`]; returns it with its seed.
pub fn read_matrix(path: &Path) -> Result<(Array2<Complex64>, u64)> {
    let (header, data) = read_complex_matrix(path, MATRIX_MAGIC, |h| Ok((h[0] * h[1]) as usize))?;
    let m = Array2::from_shape_vec((header[0] as usize, header[1] as usize).f(), data)
        .map_err(|e| Error::format("matrix file", e.to_string()))?;
    Ok((m, header[2]))
}

fn write_complex_matrix(
    path: &Path,
    magic: &[u8; 8],
    header: [u64; 3],
    entries: impl Iterator<Item = Complex64>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(magic).map_err(io)?;
    for h in header {
        w.write_all(&h.to_le_bytes()).map_err(io)?;
    }
    for z in entries {
        w.write_all(&z.re.to_le_bytes()).map_err(io)?;
        w.write_all(&z.im.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_complex_matrix(
    path: &Path,
    magic: &[u8; 8],
    count: impl Fn(&[u64; 3]) -> Result<usize>,
) -> Result<([u64; 3], Vec<Complex64>)> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(io)?;
    if &buf != magic {
        return Err(Error::format("matrix file", "bad magic"));
    }
    let mut header = [0u64; 3];
    for h in header.iter_mut() {
        r.read_exact(&mut buf).map_err(io)?;
        *h = u64::from_le_bytes(buf);
    }
    let n = count(&header)?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(io)?;
        let re = f64::from_le_bytes(buf);
        r.read_exact(&mut buf).map_err(io)?;
        let im = f64::from_le_bytes(buf);
        data.push(Complex64::new(re, im));
    }
    if r.read(&mut buf).map_err(io)? != 0 {
        return Err(Error::format("matrix file", "trailing bytes"));
    }
    Ok((header, data))
}

pub(crate) fn check_binary(bits: &[u8]) -> Result<()> {
    match bits.iter().position(|&b| b > 1) {
        Some(position) => Err(Error::NonBinary {
            position,
            value: bits[position],
        }),
        None => Ok(()),
    }
}

/// Maps `bp` message bits (MSB first) to the codeword index `1 + value`.
pub fn encode_cs(bits: &[u8], bp: usize) -> Result<CsIndex> {
    if bits.len() != bp {
        return Err(Error::BitLength {
            expected: bp,
            got: bits.len(),
        });
    }
    if bp > MAX_BP {
        return Err(Error::CodebookTooLarge { bp, max: MAX_BP });
    }
    check_binary(bits)?;
    let value = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
    CsIndex::new(value + 1, bp)
}

/// Inverse of [`encode_cs`].
pub fn decode_cs(idx: CsIndex, bp: usize) -> Result<Vec<u8>> {
    let idx = CsIndex::new(idx.value() as u64, bp)?;
    let value = idx.column() as u64;
    Ok((0..bp).rev().map(|i| ((value >> i) & 1) as u8).collect())
}

/// Groups of users (positions in `indices`) that picked the same codeword.
/// Singletons are omitted; groups are ordered by their first member.
pub fn detect_collisions(indices: &[CsIndex]) -> Vec<Vec<usize>> {
    let mut by_index: BTreeMap<CsIndex, Vec<usize>> = BTreeMap::new();
    for (user, &idx) in indices.iter().enumerate() {
        by_index.entry(idx).or_default().push(user);
    }
    let mut groups: Vec<Vec<usize>> = by_index.into_values().filter(|g| g.len() > 1).collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn column_norms_small() {
        let cb = Codebook::generate(7, 4, 1).unwrap();
        assert_eq!(cb.size(), 2);
        for col in cb.matrix().columns() {
            let n2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = Codebook::generate(7, 16, 5).unwrap();
        let b = Codebook::generate(7, 16, 5).unwrap();
        let c = Codebook::generate(8, 16, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn rejects_oversized_codebook() {
        assert!(matches!(
            Codebook::generate(1, 4, 25),
            Err(Error::CodebookTooLarge { bp: 25, .. })
        ));
    }

    #[test]
    fn encode_extremes() {
        assert_eq!(encode_cs(&[0; 16], 16).unwrap().value(), 1);
        assert_eq!(encode_cs(&[1; 16], 16).unwrap().value(), 65536);
        assert_eq!(encode_cs(&[1, 0, 1], 3).unwrap().value(), 6);
        assert!(matches!(encode_cs(&[1, 0], 3), Err(Error::BitLength { .. })));
        assert!(matches!(encode_cs(&[1, 2, 0], 3), Err(Error::NonBinary { position: 1, .. })));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let idx = CsIndex::new(9, 4).unwrap();
        assert!(decode_cs(idx, 3).is_err());
        assert!(CsIndex::new(0, 3).is_err());
        assert_eq!(decode_cs(CsIndex::new(1, 3).unwrap(), 3).unwrap(), vec![0, 0, 0]);
        assert_eq!(decode_cs(CsIndex::new(8, 3).unwrap(), 3).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let bits: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
            let idx = encode_cs(&bits, 16).unwrap();
            assert_eq!(decode_cs(idx, 16).unwrap(), bits);
        }
    }

    proptest! {
        #[test]
        fn index_bijection(bp in 1usize..=24, raw in any::<u64>()) {
            let value = raw % (1u64 << bp) + 1;
            let idx = CsIndex::new(value, bp).unwrap();
            let bits = decode_cs(idx, bp).unwrap();
            prop_assert_eq!(encode_cs(&bits, bp).unwrap(), idx);
        }
    }

    #[test]
    fn collision_groups() {
        let ix = |v| CsIndex::new(v, 4).unwrap();
        assert_eq!(detect_collisions(&[ix(5), ix(9), ix(5)]), vec![vec![0, 2]]);
        assert!(detect_collisions(&[ix(1), ix(2), ix(3)]).is_empty());
        assert_eq!(
            detect_collisions(&[ix(3), ix(2), ix(2), ix(3), ix(7)]),
            vec![vec![0, 3], vec![1, 2]]
        );
    }

    #[test]
    fn collision_fraction_matches_birthday_bound() {
        // P(user collides with at least one of the other 99) = 1 - (1 - 2^-16)^99.
        let (ka, bp) = (100usize, 16usize);
        let expected = 1.0 - (1.0 - 2f64.powi(-(bp as i32))).powi(ka as i32 - 1);
        let mut rng = rng_from_seed(11);
        let draws = 2000;
        let mut collided = 0usize;
        for _ in 0..draws {
            let idx: Vec<CsIndex> = (0..ka)
                .map(|_| CsIndex::from_column(rng.random_range(0..1usize << bp)))
                .collect();
            collided += detect_collisions(&idx).iter().map(Vec::len).sum::<usize>();
        }
        let users = (draws * ka) as f64;
        let frac = collided as f64 / users;
        // Binomial standard error over 2e5 user draws is ~8.7e-5.
        let se = (expected * (1.0 - expected) / users).sqrt();
        assert!((expected - 1.51e-3).abs() < 1e-5);
        assert!((frac - expected).abs() < 4.0 * se, "{frac} vs {expected}");
    }

    #[test]
    fn binary_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("sparc-cb-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cb.bin");
        let cb = Codebook::generate(99, 5, 3).unwrap();
        cb.write_to(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CODEBOOK_MAGIC);
        assert_eq!(bytes.len(), 32 + 5 * 8 * 16);
        // first payload entry is row 0 of column 0
        let re0 = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        assert_eq!(re0, cb.matrix()[(0, 0)].re);
        let re1 = f64::from_le_bytes(bytes[48..56].try_into().unwrap());
        assert_eq!(re1, cb.matrix()[(1, 0)].re);
        assert_eq!(Codebook::read_from(&path).unwrap(), cb);

        let m = cb.matrix().slice(ndarray::s![.., 0..3]).to_owned();
        let mpath = dir.join("m.bin");
        write_matrix(&mpath, &m, 5).unwrap();
        assert_eq!(read_matrix(&mpath).unwrap(), (m, 5));
        assert!(Codebook::read_from(&mpath).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
