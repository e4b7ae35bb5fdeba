//! Column-weight-3 LDPC codes built by progressive edge growth.
//!
//! A code is constructed for any `(lc, bc)` with `lc - bc` check rows. Every
//! variable node targets degree 3 and check degrees are kept within one of
//! each other (exactly `3 * lc / (lc - bc)` when that divides), so `(200, 100)`
//! yields the (3,6)-regular ensemble. Edges that would close a length-4 cycle
//! are never placed. Encoding is systematic: the message occupies
//! [`LdpcCode::message_positions`] and the remaining positions are computed
//! from the reduced row-echelon form of the parity-check matrix.

use std::ops::Range;

use rand::Rng;

use crate::codebook::check_binary;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Target variable-node degree.
pub const VARIABLE_DEGREE: usize = 3;

/// Construction attempts before giving up. The first half insists on every
/// column having the target degree, the second half accepts weight-2 columns
/// where a third edge would close a 4-cycle.
pub const CONSTRUCTION_ATTEMPTS: usize = 64;

/// Binary LDPC code with its Tanner graph and systematic encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    seed: u64,
    check_adj: Vec<Vec<usize>>,
    var_adj: Vec<Vec<usize>>,
    check_edges: Vec<Range<usize>>,
    edge_var: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    message_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    // parity_positions[i] = xor of message[j] for j in parity_terms[i]
    parity_terms: Vec<Vec<usize>>,
}

/// Builds an `(lc, bc)` code. Retries with derived seeds until the graph has
/// no 4-cycles, every column has weight >= 2 and the rows are independent.
pub fn build_ldpc(lc: usize, bc: usize, seed: u64) -> Result<LdpcCode> {
    if bc == 0 || bc >= lc {
        return Err(Error::config("b_c", format!("need 0 < bc < lc, got ({lc}, {bc})")));
    }
    let checks = lc - bc;
    for attempt in 0..CONSTRUCTION_ATTEMPTS {
        let strict = attempt < CONSTRUCTION_ATTEMPTS / 2;
        let attempt_seed = derive_seed(seed, "ldpc-attempt", attempt as u64);
        let Some(check_adj) = progressive_edge_growth(lc, checks, VARIABLE_DEGREE, strict, attempt_seed)
        else {
            continue;
        };
        match LdpcCode::from_checks(lc, check_adj, seed) {
            Ok(code) => return Ok(code),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::LdpcConstruction {
        lc,
        bc,
        seed,
        attempts: CONSTRUCTION_ATTEMPTS,
    })
}

/// Greedy girth-maximizing edge placement. Returns the check adjacency lists,
/// or `None` when a column could not reach weight 2 (or the target degree in
/// strict mode) without closing a 4-cycle.
fn progressive_edge_growth(
    n: usize,
    checks: usize,
    dv: usize,
    strict: bool,
    seed: u64,
) -> Option<Vec<Vec<usize>>> {
    let dv = dv.min(checks);
    if dv < 2 {
        return None;
    }
    let cap = (dv * n).div_ceil(checks);
    let mut rng = rng_from_seed(seed);
    let mut check_adj: Vec<Vec<usize>> = vec![Vec::new(); checks];
    let mut var_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut level = vec![usize::MAX; checks];
    let mut seen_var = vec![false; n];
    let mut candidates = Vec::with_capacity(checks);

    for v in 0..n {
        for e in 0..dv {
            if e == 0 {
                level.iter_mut().for_each(|l| *l = usize::MAX);
            } else {
                bfs_levels(v, &var_adj, &check_adj, &mut level, &mut seen_var);
            }
            // farthest admissible checks, then lowest degree, random tie-break
            let far = (0..checks)
                .filter(|&c| check_adj[c].len() < cap && level[c] != 0)
                .map(|c| level[c])
                .max()?;
            if e > 0 && far <= 1 {
                if strict || e < 2 {
                    return None;
                }
                break;
            }
            let min_deg = (0..checks)
                .filter(|&c| check_adj[c].len() < cap && level[c] == far)
                .map(|c| check_adj[c].len())
                .min()?;
            candidates.clear();
            candidates.extend(
                (0..checks).filter(|&c| level[c] == far && check_adj[c].len() == min_deg),
            );
            let c = candidates[rng.random_range(0..candidates.len())];
            check_adj[c].push(v);
            var_adj[v].push(c);
        }
    }
    Some(check_adj)
}

/// Check-node distances from variable `v`: level 0 are its own checks, level
/// `d + 1` are checks reached through a variable adjacent to a level-`d`
/// check. Unreached checks keep `usize::MAX`.
fn bfs_levels(
    v: usize,
    var_adj: &[Vec<usize>],
    check_adj: &[Vec<usize>],
    level: &mut [usize],
    seen_var: &mut [bool],
) {
    level.iter_mut().for_each(|l| *l = usize::MAX);
    seen_var.iter_mut().for_each(|s| *s = false);
    seen_var[v] = true;
    let mut frontier: Vec<usize> = var_adj[v].clone();
    for &c in &frontier {
        level[c] = 0;
    }
    let mut depth = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &c in &frontier {
            for &u in &check_adj[c] {
                if seen_var[u] {
                    continue;
                }
                seen_var[u] = true;
                for &c2 in &var_adj[u] {
                    if level[c2] == usize::MAX {
                        level[c2] = depth + 1;
                        next.push(c2);
                    }
                }
            }
        }
        frontier = next;
        depth += 1;
    }
}

type BitRow = Vec<u64>;

fn bit(row: &BitRow, j: usize) -> bool {
    row[j / 64] >> (j % 64) & 1 == 1
}

/// Reduced row-echelon form over GF(2), pivots chosen in ascending column
/// order. Returns the reduced rows (first `rank` rows) and pivot columns.
fn rref(mut rows: Vec<BitRow>, n: usize) -> (Vec<BitRow>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..n {
        let Some(p) = (r..rows.len()).find(|&i| bit(&rows[i], col)) else {
            continue;
        };
        rows.swap(r, p);
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && bit(row, col) {
                row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    (rows, pivots)
}

/// Rank over GF(2) of a dense 0/1 matrix.
pub fn gf2_rank(rows: &[Vec<u8>]) -> usize {
    let n = rows.first().map_or(0, Vec::len);
    let packed = rows.iter().map(|r| pack(r)).collect();
    rref(packed, n).1.len()
}

fn pack(bits: &[u8]) -> BitRow {
    let mut row = vec![0u64; bits.len().div_ceil(64).max(1)];
    for (j, &b) in bits.iter().enumerate() {
        if b != 0 {
            row[j / 64] |= 1 << (j % 64);
        }
    }
    row
}

impl LdpcCode {
    /// Builds a code from check-node adjacency lists over `n` variables.
    /// Fails if any row is dependent.
    pub fn from_checks(n: usize, mut check_adj: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        let m = check_adj.len();
        if m == 0 || m >= n {
            return Err(Error::format("parity-check matrix", format!("{m} checks for {n} bits")));
        }
        let mut var_adj = vec![Vec::new(); n];
        for (c, vars) in check_adj.iter_mut().enumerate() {
            vars.sort_unstable();
            vars.dedup();
            for &v in vars.iter() {
                if v >= n {
                    return Err(Error::format("parity-check matrix", format!("column {v} >= {n}")));
                }
                var_adj[v].push(c);
            }
        }

        let mut rows = vec![vec![0u64; n.div_ceil(64)]; m];
        for (c, vars) in check_adj.iter().enumerate() {
            for &v in vars {
                rows[c][v / 64] |= 1 << (v % 64);
            }
        }
        let (reduced, pivots) = rref(rows, n);
        if pivots.len() < m {
            return Err(Error::RankDeficient {
                rank: pivots.len(),
                rows: m,
            });
        }
        let mut is_pivot = vec![false; n];
        pivots.iter().for_each(|&p| is_pivot[p] = true);
        let message_positions: Vec<usize> = (0..n).filter(|&j| !is_pivot[j]).collect();
        let parity_terms = reduced
            .iter()
            .map(|row| {
                message_positions
                    .iter()
                    .enumerate()
                    .filter(|&(_, &j)| bit(row, j))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();

        let mut check_edges = Vec::with_capacity(m);
        let mut edge_var = Vec::new();
        let mut var_edges = vec![Vec::new(); n];
        for vars in &check_adj {
            let start = edge_var.len();
            for &v in vars {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_edges.push(start..edge_var.len());
        }

        Ok(LdpcCode {
            n,
            k: n - m,
            seed,
            check_adj,
            var_adj,
            check_edges,
            edge_var,
            var_edges,
            message_positions,
            parity_positions: pivots,
            parity_terms,
        })
    }

    /// Block length `lc`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Message length `bc`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_checks(&self) -> usize {
        self.check_adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Variables attached to each check, ascending.
    pub fn check_adjacency(&self) -> &[Vec<usize>] {
        &self.check_adj
    }

    /// Checks attached to each variable, ascending.
    pub fn var_adjacency(&self) -> &[Vec<usize>] {
        &self.var_adj
    }

    /// Edge ids of check `c`. Edges are numbered check-major.
    pub fn check_edges(&self, c: usize) -> Range<usize> {
        self.check_edges[c].clone()
    }

    /// Edge ids incident to variable `v`.
    pub fn var_edges(&self, v: usize) -> &[usize] {
        &self.var_edges[v]
    }

    /// Variable at the end of edge `e`.
    pub fn edge_var(&self, e: usize) -> usize {
        self.edge_var[e]
    }

    /// Codeword positions carrying the message bits, ascending.
    pub fn message_positions(&self) -> &[usize] {
        &self.message_positions
    }

    pub fn parity_positions(&self) -> &[usize] {
        &self.parity_positions
    }

    /// Dense `N x n` parity-check matrix.
    pub fn parity_check_matrix(&self) -> Vec<Vec<u8>> {
        self.check_adj
            .iter()
            .map(|vars| {
                let mut row = vec![0u8; self.n];
                vars.iter().for_each(|&v| row[v] = 1);
                row
            })
            .collect()
    }

    /// Dense `k x n` systematic generator matrix; row `i` encodes unit message `e_i`.
    pub fn generator_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.k)
            .map(|i| {
                let mut msg = vec![0u8; self.k];
                msg[i] = 1;
                self.encode(&msg).expect("unit message has length k")
            })
            .collect()
    }

    /// Systematic encoding of `k` message bits into an `n`-bit codeword.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.k {
            return Err(Error::BitLength {
                expected: self.k,
                got: message.len(),
            });
        }
        check_binary(message)?;
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.message_positions.iter().zip(message) {
            cw[pos] = b;
        }
        for (&pos, terms) in self.parity_positions.iter().zip(&self.parity_terms) {
            cw[pos] = terms.iter().fold(0, |acc, &i| acc ^ message[i]);
        }
        Ok(cw)
    }

    /// Message bits of a codeword.
    pub fn extract_message(&self, codeword: &[u8]) -> Vec<u8> {
        self.message_positions.iter().map(|&p| codeword[p]).collect()
    }

    /// True iff every parity equation holds. Words of the wrong length fail.
    pub fn parity_check(&self, word: &[u8]) -> bool {
        word.len() == self.n
            && self
                .check_adj
                .iter()
                .all(|vars| vars.iter().fold(0u8, |acc, &v| acc ^ (word[v] & 1)) == 0)
    }

    /// True if two checks share two or more variables.
    pub fn has_four_cycle(&self) -> bool {
        let mut pairs = std::collections::HashSet::new();
        for checks in &self.var_adj {
            for (i, &a) in checks.iter().enumerate() {
                for &b in &checks[i + 1..] {
                    if !pairs.insert((a, b)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Serializes the parity-check matrix in MacKay's alist format.
    pub fn to_alist(&self) -> String {
        use std::fmt::Write;
        let col_w: Vec<usize> = self.var_adj.iter().map(Vec::len).collect();
        let row_w: Vec<usize> = self.check_adj.iter().map(Vec::len).collect();
        let max_c = col_w.iter().copied().max().unwrap_or(0);
        let max_r = row_w.iter().copied().max().unwrap_or(0);
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(s, "{} {}", self.n, self.num_checks()).unwrap();
        writeln!(s, "{max_c} {max_r}").unwrap();
        writeln!(s, "{}", join(&col_w)).unwrap();
        writeln!(s, "{}", join(&row_w)).unwrap();
        let padded = |list: &[usize], width: usize| {
            let mut v: Vec<usize> = list.iter().map(|x| x + 1).collect();
            v.resize(width, 0);
            join(&v)
        };
        for checks in &self.var_adj {
            writeln!(s, "{}", padded(checks, max_c)).unwrap();
        }
        for vars in &self.check_adj {
            writeln!(s, "{}", padded(vars, max_r)).unwrap();
        }
        s
    }

    /// Parses an alist file. Zero padding is optional; the column and row
    /// sections must describe the same matrix.
    pub fn from_alist(text: &str, seed: u64) -> Result<Self> {
        let bad = |r: String| Error::format("alist", r);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut nums = |what: &str| -> Result<Vec<usize>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {what}")))?;
            line.split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("bad integer `{t}` in {what}"))))
                .collect()
        };
        let dims = nums("dimensions")?;
        let [n, m] = dims[..] else {
            return Err(bad("first line must be `n m`".into()));
        };
        nums("max weights")?;
        let col_w = nums("column weights")?;
        let row_w = nums("row weights")?;
        if col_w.len() != n || row_w.len() != m {
            return Err(bad("weight list lengths do not match dimensions".into()));
        }
        let mut from_cols = vec![Vec::new(); m];
        for (v, &w) in col_w.iter().enumerate() {
            let entries: Vec<usize> = nums("column entries")?.into_iter().filter(|&x| x != 0).collect();
            if entries.len() != w || entries.iter().any(|&c| c > m) {
                return Err(bad(format!("column {} inconsistent with its weight", v + 1)));
            }
            entries.iter().for_each(|&c| from_cols[c - 1].push(v));
        }
        let mut from_rows = Vec::with_capacity(m);
        for (c, &w) in row_w.iter().enumerate() {
            let mut entries: Vec<usize> =
                nums("row entries")?.into_iter().filter(|&x| x != 0).map(|x| x - 1).collect();
            entries.sort_unstable();
            if entries.len() != w {
                return Err(bad(format!("row {} inconsistent with its weight", c + 1)));
            }
            from_rows.push(entries);
        }
        from_cols.iter_mut().for_each(|r| r.sort_unstable());
        if from_cols != from_rows {
            return Err(bad("row and column sections disagree".into()));
        }
        LdpcCode::from_checks(n, from_rows, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_message(k: usize, rng: &mut impl Rng) -> Vec<u8> {
        (0..k).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn table_code_degrees() {
        let code = build_ldpc(200, 80, 1).unwrap();
        assert_eq!(code.num_checks(), 120);
        assert!(code.var_adjacency().iter().all(|c| c.len() == 3));
        assert!(code.check_adjacency().iter().all(|v| v.len() == 5));
        assert!(!code.has_four_cycle());
        assert_eq!(gf2_rank(&code.parity_check_matrix()), 120);
    }

    #[test]
    fn regular_three_six() {
        let code = build_ldpc(200, 100, 2).unwrap();
        assert!(code.var_adjacency().iter().all(|c| c.len() == 3));
        assert!(code.check_adjacency().iter().all(|v| v.len() == 6));
        assert!(!code.has_four_cycle());
    }

    #[test]
    fn encoder_contract() {
        let code = build_ldpc(200, 80, 5).unwrap();
        assert_eq!(code.encode(&[0; 80]).unwrap(), vec![0; 200]);
        let mut rng = rng_from_seed(9);
        for _ in 0..1000 {
            let msg = random_message(80, &mut rng);
            let cw = code.encode(&msg).unwrap();
            assert!(code.parity_check(&cw));
            assert_eq!(code.extract_message(&cw), msg);
        }
        assert!(matches!(code.encode(&[0; 79]), Err(Error::BitLength { .. })));
    }

    #[test]
    fn generator_is_orthogonal_to_checks() {
        let code = build_ldpc(60, 30, 3).unwrap();
        let h = code.parity_check_matrix();
        for g in code.generator_matrix() {
            for row in &h {
                let dot = g.iter().zip(row).fold(0u8, |acc, (a, b)| acc ^ (a & b));
                assert_eq!(dot, 0);
            }
        }
    }

    #[test]
    fn single_flip_detected() {
        let code = build_ldpc(200, 80, 5).unwrap();
        let mut rng = rng_from_seed(4);
        let cw = code.encode(&random_message(80, &mut rng)).unwrap();
        assert!(code.parity_check(&cw));
        assert!(code.parity_check(&[0; 200]));
        for pos in 0..200 {
            let mut w = cw.clone();
            w[pos] ^= 1;
            assert!(!code.parity_check(&w));
        }
        assert!(!code.parity_check(&cw[..199]));
    }

    #[test]
    fn deterministic_construction() {
        assert_eq!(build_ldpc(100, 40, 8).unwrap(), build_ldpc(100, 40, 8).unwrap());
    }

    #[test]
    fn alist_round_trip() {
        let code = build_ldpc(64, 24, 6).unwrap();
        let text = code.to_alist();
        let back = LdpcCode::from_alist(&text, code.seed()).unwrap();
        assert_eq!(back, code);
        // unpadded variant parses too
        let unpadded: String = text
            .lines()
            .map(|l| {
                let t: Vec<&str> = l.split_whitespace().collect();
                let trimmed: Vec<&str> = if t.len() > 2 {
                    t.into_iter().filter(|x| *x != "0").collect()
                } else {
                    t
                };
                trimmed.join(" ") + "\n"
            })
            .collect();
        assert_eq!(LdpcCode::from_alist(&unpadded, code.seed()).unwrap(), code);
        assert!(LdpcCode::from_alist("3 2\n", 0).is_err());
    }

    #[test]
    fn rank_deficient_matrix_rejected() {
        // rows 0 and 1 identical
        let checks = vec![vec![0, 1, 2], vec![0, 1, 2], vec![2, 3, 4]];
        assert!(matches!(
            LdpcCode::from_checks(6, checks, 0),
            Err(Error::RankDeficient { rank: 2, rows: 3 })
        ));
    }
}
