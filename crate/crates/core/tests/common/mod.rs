//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sparc_ura::ldpc::LdpcCode;

pub const CLAMP: f64 = 40.0;
pub const P_MIN: f64 = 1e-12;

pub fn cn(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * (var / 2.0).sqrt()
}

pub fn cn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, var: f64) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || cn(rng, var))
}

pub fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// Edge id of (check, variable), found by scanning the check's edge range.
pub fn edge_of(code: &LdpcCode, c: usize, v: usize) -> usize {
    code.check_edges(c)
        .find(|&e| code.edge_var(e) == v)
        .expect("variable on check")
}

/// `Lambda[a][k][l]` straight from the Gaussian-interference formulas, with
/// the interference moments summed over `j != k` explicitly.
pub fn lambda_direct(
    y: ArrayView2<'_, Complex64>,
    h: ArrayView2<'_, Complex64>,
    p: &Array3<f64>,
    noise_var: f64,
) -> Array3<f64> {
    let (lc, m) = y.dim();
    let k = h.nrows();
    Array3::from_shape_fn((m, k, lc), |(a, u, l)| {
        let mut mu = Complex64::new(0.0, 0.0);
        let mut var = noise_var;
        for j in (0..k).filter(|&j| j != u) {
            let pj = p[(j, a, l)];
            mu += h[(j, a)] * (2.0 * pj - 1.0);
            var += 4.0 * h[(j, a)].norm_sqr() * (1.0 - pj) * pj;
        }
        2.0 / var * (h[(u, a)].conj() * (y[(l, a)] - mu)).re
    })
}

/// Sum of `R` into variable `v`, walking the checks of `v`.
pub fn r_into(code: &LdpcCode, r: &[f64], v: usize, except: Option<usize>) -> f64 {
    code.var_adjacency()[v]
        .iter()
        .filter(|&&c| Some(c) != except)
        .map(|&c| r[edge_of(code, c, v)])
        .sum()
}

/// `P[k][a][l]` from the sigmoid of the extrinsic antenna sum plus all `R`.
pub fn p_direct(code: &LdpcCode, lambda: &Array3<f64>, r: &[Vec<f64>]) -> Array3<f64> {
    let (m, k, lc) = lambda.dim();
    Array3::from_shape_fn((k, m, lc), |(u, a, l)| {
        let mut x = r_into(code, &r[u], l, None);
        for b in (0..m).filter(|&b| b != a) {
            x += lambda[(b, u, l)];
        }
        let x = x.clamp(-CLAMP, CLAMP);
        (1.0 / (1.0 + (-x).exp())).clamp(P_MIN, 1.0 - P_MIN)
    })
}

/// `Q` on every edge of one user.
pub fn q_direct(code: &LdpcCode, lambda_sum: &[f64], r: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; code.num_edges()];
    for (c, vars) in code.check_adjacency().iter().enumerate() {
        for &v in vars {
            q[edge_of(code, c, v)] = (lambda_sum[v] + r_into(code, r, v, Some(c))).clamp(-CLAMP, CLAMP);
        }
    }
    q
}

/// `R` by the product-of-tanh rule. Messages are `ln P(1)/P(0)`, so the
/// rule is applied to the negated messages and the result negated back.
pub fn r_direct(code: &LdpcCode, q: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; code.num_edges()];
    for (c, vars) in code.check_adjacency().iter().enumerate() {
        for &v in vars {
            let prod: f64 = vars
                .iter()
                .filter(|&&w| w != v)
                .map(|&w| (-q[edge_of(code, c, w)] / 2.0).tanh())
                .product();
            r[edge_of(code, c, v)] = (-2.0 * prod.atanh()).clamp(-CLAMP, CLAMP);
        }
    }
    r
}

/// Total LLR of one user.
pub fn l_direct(code: &LdpcCode, lambda_sum: &[f64], r: &[f64]) -> Vec<f64> {
    (0..code.n()).map(|v| lambda_sum[v] + r_into(code, r, v, None)).collect()
}

/// Dense sum-product decoder over `H`, in the `ln P(0)/P(1)` domain, with the
/// same message caps as the joint decoder. Takes and returns `ln P(1)/P(0)`.
/// Stops after the first iteration whose decisions satisfy `H`.
pub struct TextbookBp {
    pub llr: Vec<f64>,
    pub bits: Vec<u8>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn textbook_bp(h: &[Vec<u8>], channel_llr: &[f64], max_iter: usize) -> TextbookBp {
    let rows = h.len();
    let n = channel_llr.len();
    let ch: Vec<f64> = channel_llr.iter().map(|x| (-x).clamp(-CLAMP, CLAMP)).collect();
    // dense message matrices, only entries with h = 1 are used
    let mut r = vec![vec![0.0; n]; rows];
    let mut q = vec![vec![0.0; n]; rows];
    let phi = |x: f64| -> f64 {
        if x <= 0.0 {
            f64::INFINITY
        } else {
            // -ln tanh(x/2) = ln(1 + e^-x) - ln(1 - e^-x)
            let t = (-x).exp();
            let tail = if x > 1.0 { (-t).ln_1p() } else { (-(-x).exp_m1()).ln() };
            t.ln_1p() - tail
        }
    };
    let mut total = ch.clone();
    let mut bits = vec![0u8; n];
    for it in 1..=max_iter {
        for j in 0..n {
            for i in 0..rows {
                if h[i][j] == 1 {
                    let mut s = ch[j];
                    for i2 in 0..rows {
                        if i2 != i && h[i2][j] == 1 {
                            s += r[i2][j];
                        }
                    }
                    q[i][j] = s.clamp(-CLAMP, CLAMP);
                }
            }
        }
        for i in 0..rows {
            for j in 0..n {
                if h[i][j] == 1 {
                    let mut sign = 1.0;
                    let mut acc = 0.0;
                    for j2 in 0..n {
                        if j2 != j && h[i][j2] == 1 {
                            if q[i][j2] < 0.0 {
                                sign = -sign;
                            }
                            acc += phi(q[i][j2].abs());
                        }
                    }
                    r[i][j] = sign * phi(acc).min(CLAMP);
                }
            }
        }
        for j in 0..n {
            total[j] = ch[j] + (0..rows).filter(|&i| h[i][j] == 1).map(|i| r[i][j]).sum::<f64>();
            bits[j] = u8::from(total[j] < 0.0);
        }
        let ok = h
            .iter()
            .all(|row| row.iter().zip(&bits).filter(|(&hij, _)| hij == 1).map(|(_, &b)| b).sum::<u8>() % 2 == 0);
        if ok || it == max_iter {
            return TextbookBp {
                llr: total.iter().map(|x| -x).collect(),
                bits,
                iterations: it,
                converged: ok,
            };
        }
    }
    TextbookBp {
        llr: channel_llr.to_vec(),
        bits: channel_llr.iter().map(|&x| u8::from(x > 0.0)).collect(),
        iterations: 0,
        converged: false,
    }
}

/// Bernoulli-Gaussian posterior activity probability, from the two
/// circular Gaussian densities.
pub fn posterior_direct(r: &[Complex64], tau_sq: f64, lambda: f64, gamma: f64) -> f64 {
    let m = r.len() as f64;
    let e: f64 = r.iter().map(|z| z.norm_sqr()).sum();
    let log_pdf = |v: f64| -m * (std::f64::consts::PI * v).ln() - e / v;
    let on = lambda.ln() + log_pdf(gamma + tau_sq);
    let off = (1.0 - lambda).ln() + log_pdf(tau_sq);
    1.0 / (1.0 + (off - on).exp())
}

/// Posterior activity probability and posterior mean of a Bernoulli-Gaussian
/// row given `r = x + CN(0, tau_sq I)`, by trapezoidal integration over each
/// complex coordinate (the active prior and the likelihood factor per entry).
pub fn posterior_quadrature(r: &[Complex64], tau_sq: f64, lambda: f64, gamma: f64) -> (f64, Vec<Complex64>) {
    let pi = std::f64::consts::PI;
    let steps = 1200;
    let half = 12.0 * gamma.min(tau_sq).sqrt();
    let dx = 2.0 * half / steps as f64;
    // per coordinate: evidence under the active prior and its first moment
    let moments: Vec<(f64, Complex64)> = r
        .iter()
        .map(|&ri| {
            let center = ri * gamma / (gamma + tau_sq);
            let mut z = 0.0;
            let mut first = Complex64::new(0.0, 0.0);
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = center + Complex64::new(-half + i as f64 * dx, -half + j as f64 * dx);
                    let w = (-(ri - x).norm_sqr() / tau_sq - x.norm_sqr() / gamma).exp() / (pi * tau_sq * pi * gamma);
                    z += w;
                    first += x * w;
                }
            }
            (z * dx * dx, first * dx * dx)
        })
        .collect();
    let active: f64 = moments.iter().map(|m| m.0).product();
    let inactive: f64 = r.iter().map(|ri| (-ri.norm_sqr() / tau_sq).exp() / (pi * tau_sq)).product();
    let evidence = lambda * active + (1.0 - lambda) * inactive;
    let posterior = lambda * active / evidence;
    let mean = moments
        .iter()
        .map(|(z, first)| first * (lambda * active / z) / evidence)
        .collect();
    (posterior, mean)
}

/// Synthetic CS observation `Yp = sqrt(es) A X + Z` with `ka` distinct active
/// columns. Returns the ascending support, the matching `ka x M` rows of `X`
/// and `Yp`.
pub fn cs_instance(
    rng: &mut ChaCha8Rng,
    a: ArrayView2<'_, Complex64>,
    ka: usize,
    m: usize,
    es: f64,
    noise_var: f64,
) -> (Vec<usize>, Array2<Complex64>, Array2<Complex64>) {
    let n = a.ncols();
    let mut support = rand::seq::index::sample(rng, n, ka).into_vec();
    support.sort_unstable();
    let h = cn_matrix(rng, ka, m, 1.0);
    let mut y = cn_matrix(rng, a.nrows(), m, noise_var);
    for (k, &col) in support.iter().enumerate() {
        for l in 0..a.nrows() {
            for c in 0..m {
                y[(l, c)] += a[(l, col)] * h[(k, c)] * es.sqrt();
            }
        }
    }
    (support, h, y)
}

/// Exhaustive least-squares support search of a given size.
/// Returns the best support (ascending) and its coefficients (`size x M`).
pub fn ls_support_search(
    a: ArrayView2<'_, Complex64>,
    y: ArrayView2<'_, Complex64>,
    size: usize,
) -> (Vec<usize>, Array2<Complex64>) {
    assert_eq!(size, 3, "search is written for supports of size 3");
    let n = a.ncols();
    let m = y.ncols();
    let ah = a.t().mapv(|z| z.conj());
    let gram = ah.dot(&a);
    let ahy = ah.dot(&y);
    let mut best = (f64::NEG_INFINITY, vec![0, 1, 2]);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let s = [i, j, k];
                let g = Array2::from_shape_fn((3, 3), |(p, q)| gram[(s[p], s[q])]);
                let Some(gi) = inverse3(&g) else { continue };
                // energy captured by the projection: sum_m b_m^H G^-1 b_m
                let mut captured = 0.0;
                for c in 0..m {
                    for p in 0..3 {
                        for q in 0..3 {
                            captured += (ahy[(s[p], c)].conj() * gi[(p, q)] * ahy[(s[q], c)]).re;
                        }
                    }
                }
                if captured > best.0 {
                    best = (captured, s.to_vec());
                }
            }
        }
    }
    let s = best.1;
    let g = Array2::from_shape_fn((3, 3), |(p, q)| gram[(s[p], s[q])]);
    let gi = inverse3(&g).expect("best support is well conditioned");
    let b = Array2::from_shape_fn((3, m), |(p, c)| ahy[(s[p], c)]);
    (s, gi.dot(&b))
}

/// Inverse of a 3x3 complex matrix by cofactors.
pub fn inverse3(g: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let c = |r: usize, col: usize| g[(r, col)];
    let cof = Array2::from_shape_fn((3, 3), |(i, j)| {
        let r: Vec<usize> = (0..3).filter(|&x| x != i).collect();
        let k: Vec<usize> = (0..3).filter(|&x| x != j).collect();
        let minor = c(r[0], k[0]) * c(r[1], k[1]) - c(r[0], k[1]) * c(r[1], k[0]);
        if (i + j) % 2 == 0 {
            minor
        } else {
            -minor
        }
    });
    let det = (0..3).map(|j| c(0, j) * cof[(0, j)]).sum::<Complex64>();
    if det.norm() < 1e-12 {
        return None;
    }
    Some(cof.t().mapv(|z| z / det))
}

/// Wirtinger Jacobian of `f` at `r` by central differences:
/// `d f_i / d r_j = (d/dx - i d/dy) f_i / 2`.
pub fn wirtinger_fd(f: impl Fn(&[Complex64]) -> Vec<Complex64>, r: &[Complex64], step: f64) -> Array2<Complex64> {
    let m = r.len();
    let mut jac = Array2::zeros((m, m));
    for j in 0..m {
        let shifted = |d: Complex64| {
            let mut x = r.to_vec();
            x[j] += d;
            f(&x)
        };
        let dxp = shifted(Complex64::new(step, 0.0));
        let dxm = shifted(Complex64::new(-step, 0.0));
        let dyp = shifted(Complex64::new(0.0, step));
        let dym = shifted(Complex64::new(0.0, -step));
        for i in 0..m {
            let dx = (dxp[i] - dxm[i]) / (2.0 * step);
            let dy = (dyp[i] - dym[i]) / (2.0 * step);
            jac[(i, j)] = (dx - Complex64::i() * dy) / 2.0;
        }
    }
    jac
}

/// Max-entry relative error of `got` against `want`.
pub fn max_rel_err(got: &Array2<Complex64>, want: &Array2<Complex64>) -> f64 {
    let scale = want.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = got.iter().zip(want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

/// One frame of users with known channel rows, in LDPC-block form.
pub struct LdpcBlock {
    pub yc: Array2<Complex64>,
    pub est: sparc_ura::amp::CsEstimate,
    pub codewords: Vec<Vec<u8>>,
}

/// `yc = sum_k sqrt(es) pi_k(2 s_k - 1) h_k^T + Z`, with interleavers keyed by
/// `master` and an oracle CS estimate (true indices and channels).
pub fn ldpc_block(
    rng: &mut ChaCha8Rng,
    code: &LdpcCode,
    columns: &[usize],
    h: &Array2<Complex64>,
    es: f64,
    noise_var: f64,
    master: u64,
) -> LdpcBlock {
    use sparc_ura::channel::make_interleaver;
    use sparc_ura::codebook::CsIndex;
    let (lc, m) = (code.n(), h.ncols());
    let mut yc = cn_matrix(rng, lc, m, noise_var);
    let mut codewords = Vec::new();
    for (k, &col) in columns.iter().enumerate() {
        let cw = code.encode(&random_bits(rng, code.k())).unwrap();
        let pi = make_interleaver(CsIndex::from_column(col), lc, master);
        for l in 0..lc {
            let s = if cw[pi.source_of(l)] == 1 { es.sqrt() } else { -es.sqrt() };
            for a in 0..m {
                yc[(l, a)] += h[(k, a)] * s;
            }
        }
        codewords.push(cw);
    }
    LdpcBlock {
        yc,
        est: sparc_ura::amp::CsEstimate {
            detected: columns.iter().map(|&c| CsIndex::from_column(c)).collect(),
            h_hat: h.clone(),
            posteriors: vec![1.0; columns.len()],
        },
        codewords,
    }
}

/// Three users on one antenna with channel powers 1000, 30 and 1, Es = 8,
/// two BP iterations per round. Returns the users decoded by plain LDPC and by
/// LDPC-SIC, after checking every decoded word against the truth.
pub fn staged_trial(code: &LdpcCode, seed: u64) -> (usize, usize) {
    use sparc_ura::bp::BpSchedule;
    use sparc_ura::sic::{run_sic, SicParams};
    let mut rng = sparc_ura::seed::rng_from_seed(seed);
    let powers = [1000.0, 30.0, 1.0];
    let h = Array2::from_shape_fn((3, 1), |(k, _)| cn(&mut rng, powers[k]));
    let block = ldpc_block(&mut rng, code, &[4, 17, 40], &h, 8.0, 1.0, seed);
    let run = |rounds| {
        let params = SicParams {
            es: 8.0,
            noise_var: 1.0,
            bp_max_iter: 2,
            schedule: BpSchedule::Flooding,
            max_rounds: rounds,
            master_seed: seed,
        };
        let state = run_sic(block.yc.view(), &block.est, code, &params).unwrap();
        for d in &state.decoded {
            assert_eq!(d.codeword, block.codewords[d.user], "decoded a wrong codeword");
        }
        state.decoded.len()
    };
    (run(1), run(8))
}
