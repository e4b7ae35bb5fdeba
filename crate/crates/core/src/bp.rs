//! Joint multi-user BP over the observation / variable / check factor graph.
//!
//! Each detected user owns an LDPC Tanner graph in codeword order. The
//! observation nodes live in channel order, one per (antenna, channel use), and
//! see every user through its interleaver. Messages:
//!
//! * `Lambda[m][k][l]`: observation `m` to variable `(k, l)`, a BPSK
//!   log-likelihood ratio `ln P(s=+1)/P(s=-1)` under Gaussian treatment of the
//!   other users.
//! * `P[k][m][l]`: variable to observation, `P(s_{k,l} = +1)`.
//! * `Q`, `R`: the usual sum-product messages on the Tanner graph edges.
//!
//! The default schedule is flooding: observations, de-interleave, variables to checks,
//! checks to variables, decisions, re-interleave, variables to observations.
//! A user whose hard decision passes the parity check is frozen and its `P`
//! pinned to the decided symbols.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amp::sigmoid;
use crate::channel::Interleaver;
pub use crate::config::BpSchedule;
use crate::error::{Error, Result};
use crate::ldpc::LdpcCode;

/// Magnitude cap on `Q`, `R` and on the argument of the `P` update.
pub const LLR_CLAMP: f64 = 40.0;
/// `P` stays in `[P_FLOOR, 1 - P_FLOOR]`.
pub const P_FLOOR: f64 = 1e-12;

fn clamp_llr(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// `phi(x) = -ln tanh(x / 2)`, an involution on `(0, inf)`.
fn phi(x: f64) -> f64 {
    if x <= 0.0 {
        f64::INFINITY
    } else if x.is_infinite() {
        0.0
    } else {
        (2.0 / x.exp_m1()).ln_1p()
    }
}

/// Observation-to-variable messages in channel order.
///
/// `yc` is `Lc x M`, `h` is `K x M` (effective channels, transmit power
/// included) and `p` is `K x M x Lc`. Returns `M x K x Lc`.
pub fn obs_to_var(
    yc: ArrayView2<'_, Complex64>,
    h: ArrayView2<'_, Complex64>,
    p: &Array3<f64>,
    noise_var: f64,
) -> Result<Array3<f64>> {
    let (lc, m) = yc.dim();
    let k = h.nrows();
    if h.ncols() != m {
        return Err(Error::Dimension {
            what: "channel estimate antennas",
            expected: m,
            got: h.ncols(),
        });
    }
    if p.dim() != (k, m, lc) {
        return Err(Error::Dimension {
            what: "variable-to-observation messages",
            expected: k * m * lc,
            got: p.len(),
        });
    }
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(Error::NonFinite("noise variance"));
    }
    if !yc.iter().chain(h.iter()).all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("joint BP observation"));
    }

    let mut lambda = Array3::<f64>::zeros((m, k, lc));
    let mut mean = vec![Complex64::new(0.0, 0.0); k];
    let mut var = vec![0.0; k];
    for a in 0..m {
        for l in 0..lc {
            let mut mean_all = Complex64::new(0.0, 0.0);
            let mut var_all = 0.0;
            for j in 0..k {
                let pj = p[(j, a, l)];
                let hj = h[(j, a)];
                mean[j] = hj * (2.0 * pj - 1.0);
                var[j] = 4.0 * hj.norm_sqr() * (1.0 - pj) * pj;
                mean_all += mean[j];
                var_all += var[j];
            }
            let y = yc[(l, a)];
            for j in 0..k {
                let mu = mean_all - mean[j];
                let sigma_sq = (var_all - var[j]).max(0.0) + noise_var;
                lambda[(a, j, l)] = 2.0 / sigma_sq * (h[(j, a)].conj() * (y - mu)).re;
            }
        }
    }
    Ok(lambda)
}

/// Variable-to-observation messages: for each antenna, the sigmoid of every
/// other antenna's `Lambda` plus the check-side sum `r_sum` (`K x Lc`).
///
/// Input and output share one position order. Returns `K x M x Lc`.
pub fn var_to_obs(lambda: &Array3<f64>, r_sum: ArrayView2<'_, f64>) -> Array3<f64> {
    let (m, k, lc) = lambda.dim();
    assert_eq!(r_sum.dim(), (k, lc), "check-sum shape");
    let mut p = Array3::<f64>::zeros((k, m, lc));
    for j in 0..k {
        for l in 0..lc {
            let total: f64 = (0..m).map(|a| lambda[(a, j, l)]).sum::<f64>() + r_sum[(j, l)];
            for a in 0..m {
                let extrinsic = clamp_llr(total - lambda[(a, j, l)]);
                p[(j, a, l)] = clamp_p(sigmoid(extrinsic));
            }
        }
    }
    p
}

/// Sum over each variable of its incoming check messages.
pub fn check_sums(code: &LdpcCode, r: &[f64]) -> Vec<f64> {
    (0..code.n())
        .map(|v| code.var_edges(v).iter().map(|&e| r[e]).sum())
        .collect()
}

/// Variable-to-check messages of one user. `lambda_sum[v]` is the
/// antenna sum of observation messages at codeword position `v`.
pub fn var_to_check(code: &LdpcCode, lambda_sum: &[f64], r: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; code.num_edges()];
    for v in 0..code.n() {
        let edges = code.var_edges(v);
        for &e in edges {
            let others: f64 = edges.iter().filter(|&&f| f != e).map(|&f| r[f]).sum();
            q[e] = clamp_llr(lambda_sum[v] + others);
        }
    }
    q
}

/// Check-to-variable messages of one user, by the tanh rule in the
/// `phi`-domain.
///
/// Messages are `ln P(b=1)/P(b=0)`, so the even-parity constraint carries an
/// extra sign `(-1)^deg(c)` relative to the `ln P(b=0)/P(b=1)` form.
pub fn check_to_var(code: &LdpcCode, q: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; code.num_edges()];
    for c in 0..code.num_checks() {
        let edges = code.check_edges(c);
        let odd_degree = edges.len() % 2 == 1;
        for e in edges.clone() {
            let mut negative = odd_degree;
            let mut mag = 0.0;
            for f in edges.clone().filter(|&f| f != e) {
                negative ^= q[f] < 0.0;
                mag += phi(q[f].abs());
            }
            let out = phi(mag).min(LLR_CLAMP);
            r[e] = if negative { -out } else { out };
        }
    }
    r
}

/// Total LLR `lambda_sum + sum R` and hard decisions (`1` iff `L > 0`).
pub fn total_llr_and_decide(code: &LdpcCode, lambda_sum: &[f64], r: &[f64]) -> (Vec<f64>, Vec<u8>) {
    let llr: Vec<f64> = check_sums(code, r)
        .iter()
        .zip(lambda_sum)
        .map(|(s, l)| l + s)
        .collect();
    let bits = llr.iter().map(|&x| u8::from(x > 0.0)).collect();
    (llr, bits)
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpIterStats {
    pub iteration: usize,
    /// Users whose decisions satisfy the parity check (frozen included).
    pub passing: usize,
    /// Mean `|L|` over every user and position.
    pub mean_abs_llr: f64,
}

/// Complete message state of the joint decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BpWorkspace {
    /// `M x K x Lc`, codeword order.
    pub lambda_msgs: Array3<f64>,
    /// `K x M x Lc`, channel order.
    pub p_msgs: Array3<f64>,
    /// `K x E` variable-to-check messages.
    pub q_msgs: Array2<f64>,
    /// `K x E` check-to-variable messages.
    pub r_msgs: Array2<f64>,
    /// `K x Lc`, codeword order.
    pub total_llr: Array2<f64>,
    pub hard: Vec<Vec<u8>>,
    /// Iteration at which each user passed parity, if it has.
    pub decoded_at: Vec<Option<usize>>,
    pub iteration: usize,
}

/// The joint factor graph for one block of LDPC observations.
pub struct JointGraph<'a> {
    yc: ArrayView2<'a, Complex64>,
    h: Array2<Complex64>,
    interleavers: Vec<&'a Interleaver>,
    code: &'a LdpcCode,
    noise_var: f64,
}

impl<'a> JointGraph<'a> {
    /// `h` holds effective channel rows (transmit power included), one per
    /// entry of `interleavers`.
    pub fn new(
        yc: ArrayView2<'a, Complex64>,
        h: Array2<Complex64>,
        interleavers: Vec<&'a Interleaver>,
        code: &'a LdpcCode,
        noise_var: f64,
    ) -> Result<Self> {
        let (lc, m) = yc.dim();
        if code.n() != lc {
            return Err(Error::Dimension {
                what: "LDPC block length vs observation rows",
                expected: code.n(),
                got: lc,
            });
        }
        if h.nrows() != interleavers.len() || h.ncols() != m {
            return Err(Error::Dimension {
                what: "channel rows vs users",
                expected: interleavers.len(),
                got: h.nrows(),
            });
        }
        if let Some(bad) = interleavers.iter().find(|p| p.len() != lc) {
            return Err(Error::Dimension {
                what: "interleaver length",
                expected: lc,
                got: bad.len(),
            });
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::NonFinite("noise variance"));
        }
        Ok(JointGraph {
            yc,
            h,
            interleavers,
            code,
            noise_var,
        })
    }

    pub fn users(&self) -> usize {
        self.interleavers.len()
    }

    /// Fresh state: `P = 0.5`, `R = 0`.
    pub fn workspace(&self) -> BpWorkspace {
        let (lc, m) = self.yc.dim();
        let k = self.users();
        let e = self.code.num_edges();
        BpWorkspace {
            lambda_msgs: Array3::zeros((m, k, lc)),
            p_msgs: Array3::from_elem((k, m, lc), 0.5),
            q_msgs: Array2::zeros((k, e)),
            r_msgs: Array2::zeros((k, e)),
            total_llr: Array2::zeros((k, lc)),
            hard: vec![vec![0; lc]; k],
            decoded_at: vec![None; k],
            iteration: 0,
        }
    }

    /// Soft mean and variance of user `k`'s contribution at `(a, l)`.
    fn soft_symbol(&self, p: &Array3<f64>, k: usize, a: usize, l: usize) -> (Complex64, f64) {
        let pk = p[(k, a, l)];
        let hk = self.h[(k, a)];
        (hk * (2.0 * pk - 1.0), 4.0 * hk.norm_sqr() * (1.0 - pk) * pk)
    }

    /// Sum of every user's soft contribution, `M x Lc`.
    fn superposition(&self, p: &Array3<f64>) -> (Array2<Complex64>, Array2<f64>) {
        let (lc, m) = self.yc.dim();
        let mut mean = Array2::<Complex64>::zeros((m, lc));
        let mut var = Array2::<f64>::zeros((m, lc));
        for a in 0..m {
            for l in 0..lc {
                for k in 0..self.users() {
                    let (mu, v) = self.soft_symbol(p, k, a, l);
                    mean[(a, l)] += mu;
                    var[(a, l)] += v;
                }
            }
        }
        (mean, var)
    }

    /// Observation messages to user `k`, given the superposition of all users.
    fn user_lambda(&self, ws: &mut BpWorkspace, k: usize, mean: &Array2<Complex64>, var: &Array2<f64>) {
        let (lc, m) = self.yc.dim();
        let pi = self.interleavers[k];
        for a in 0..m {
            for l in 0..lc {
                let (mu_k, v_k) = self.soft_symbol(&ws.p_msgs, k, a, l);
                let mu = mean[(a, l)] - mu_k;
                let sigma_sq = (var[(a, l)] - v_k).max(0.0) + self.noise_var;
                ws.lambda_msgs[(a, k, pi.source_of(l))] =
                    2.0 / sigma_sq * (self.h[(k, a)].conj() * (self.yc[(l, a)] - mu)).re;
            }
        }
    }

    /// Tanner-graph half of an iteration for user `k`; true if it now passes parity.
    fn tanner_update(&self, ws: &mut BpWorkspace, k: usize) -> bool {
        let (lc, m) = self.yc.dim();
        let lambda_sum: Vec<f64> = (0..lc)
            .map(|i| clamp_llr((0..m).map(|a| ws.lambda_msgs[(a, k, i)]).sum()))
            .collect();
        let r_prev = ws.r_msgs.row(k).to_vec();
        let q = var_to_check(self.code, &lambda_sum, &r_prev);
        let r = check_to_var(self.code, &q);
        let (llr, bits) = total_llr_and_decide(self.code, &lambda_sum, &r);
        ws.q_msgs.row_mut(k).assign(&ArrayView1::from(&q[..]));
        ws.r_msgs.row_mut(k).assign(&ArrayView1::from(&r[..]));
        ws.total_llr.row_mut(k).assign(&ArrayView1::from(&llr[..]));
        let passed = self.code.parity_check(&bits);
        if passed {
            ws.decoded_at[k] = Some(ws.iteration);
        }
        ws.hard[k] = bits;
        passed
    }

    /// New `P` messages of user `k`, pinned to its decisions once decoded.
    fn refresh_p(&self, ws: &mut BpWorkspace, k: usize) {
        let (lc, m) = self.yc.dim();
        let pi = self.interleavers[k];
        if ws.decoded_at[k].is_some() {
            for l in 0..lc {
                let v = if ws.hard[k][pi.source_of(l)] == 1 {
                    1.0 - P_FLOOR
                } else {
                    P_FLOOR
                };
                ws.p_msgs.slice_mut(s![k, .., l]).fill(v);
            }
            return;
        }
        let r_sum = check_sums(self.code, ws.r_msgs.row(k).as_slice().expect("row-major"));
        for l in 0..lc {
            let i = pi.source_of(l);
            let total: f64 = (0..m).map(|a| ws.lambda_msgs[(a, k, i)]).sum::<f64>() + r_sum[i];
            for a in 0..m {
                let extrinsic = clamp_llr(total - ws.lambda_msgs[(a, k, i)]);
                ws.p_msgs[(k, a, l)] = clamp_p(sigmoid(extrinsic));
            }
        }
    }

    /// One iteration under `schedule`. Returns the number of users newly
    /// passing parity.
    pub fn iterate(&self, ws: &mut BpWorkspace, schedule: BpSchedule) -> Result<usize> {
        let (lc, m) = self.yc.dim();
        ws.iteration += 1;
        let mut newly = 0;
        match schedule {
            BpSchedule::Flooding => {
                let chan_lambda = obs_to_var(self.yc, self.h.view(), &ws.p_msgs, self.noise_var)?;
                for (k, pi) in self.interleavers.iter().enumerate() {
                    for a in 0..m {
                        for i in 0..lc {
                            ws.lambda_msgs[(a, k, i)] = chan_lambda[(a, k, pi.slot_of(i))];
                        }
                    }
                }
                for k in 0..self.users() {
                    if ws.decoded_at[k].is_none() && self.tanner_update(ws, k) {
                        newly += 1;
                    }
                }
                for k in 0..self.users() {
                    self.refresh_p(ws, k);
                }
            }
            BpSchedule::Serial => {
                let (mut mean, mut var) = self.superposition(&ws.p_msgs);
                for k in 0..self.users() {
                    self.user_lambda(ws, k, &mean, &var);
                    if ws.decoded_at[k].is_some() {
                        continue;
                    }
                    if self.tanner_update(ws, k) {
                        newly += 1;
                    }
                    for a in 0..m {
                        for l in 0..lc {
                            let (mu, v) = self.soft_symbol(&ws.p_msgs, k, a, l);
                            mean[(a, l)] -= mu;
                            var[(a, l)] -= v;
                        }
                    }
                    self.refresh_p(ws, k);
                    for a in 0..m {
                        for l in 0..lc {
                            let (mu, v) = self.soft_symbol(&ws.p_msgs, k, a, l);
                            mean[(a, l)] += mu;
                            var[(a, l)] += v;
                        }
                    }
                }
            }
        }
        Ok(newly)
    }

    /// Runs up to `max_iter` iterations, stopping early once every user passes.
    pub fn decode(&self, max_iter: usize, schedule: BpSchedule) -> Result<JbpOutcome> {
        let mut ws = self.workspace();
        let mut trace = Vec::new();
        if self.users() == 0 {
            return Ok(JbpOutcome::from_workspace(self.code, ws, trace));
        }
        for _ in 0..max_iter {
            self.iterate(&mut ws, schedule)?;
            let passing = ws.decoded_at.iter().filter(|d| d.is_some()).count();
            let mean_abs_llr = ws.total_llr.iter().map(|x| x.abs()).sum::<f64>() / ws.total_llr.len() as f64;
            trace.push(BpIterStats {
                iteration: ws.iteration,
                passing,
                mean_abs_llr,
            });
            if passing == self.users() {
                break;
            }
        }
        Ok(JbpOutcome::from_workspace(self.code, ws, trace))
    }
}

/// Result of one joint BP run.
#[derive(Debug, Clone, PartialEq)]
pub struct JbpOutcome {
    /// `(user, codeword)` for every user that passed parity, by ascending user.
    pub decoded: Vec<(usize, Vec<u8>)>,
    pub undecoded_users: Vec<usize>,
    pub iterations_used: usize,
    pub trace: Vec<BpIterStats>,
    /// `K x Lc` total LLRs at exit, codeword order.
    pub final_llr: Array2<f64>,
}

impl JbpOutcome {
    fn from_workspace(code: &LdpcCode, ws: BpWorkspace, trace: Vec<BpIterStats>) -> Self {
        let mut decoded = Vec::new();
        let mut undecoded_users = Vec::new();
        for (k, status) in ws.decoded_at.iter().enumerate() {
            if status.is_some() {
                assert!(code.parity_check(&ws.hard[k]), "decoded word fails parity");
                decoded.push((k, ws.hard[k].clone()));
            } else {
                undecoded_users.push(k);
            }
        }
        JbpOutcome {
            decoded,
            undecoded_users,
            iterations_used: ws.iteration,
            trace,
            final_llr: ws.total_llr,
        }
    }

    pub fn decoded_users(&self) -> Vec<usize> {
        self.decoded.iter().map(|(k, _)| *k).collect()
    }
}

/// Joint decoding of every user in `h_hat` (normalized channel estimates, one
/// row per interleaver) from `yc`.
pub fn jbp_decode(
    yc: ArrayView2<'_, Complex64>,
    h_hat: ArrayView2<'_, Complex64>,
    interleavers: &[&Interleaver],
    code: &LdpcCode,
    es: f64,
    noise_var: f64,
    max_iter: usize,
    schedule: BpSchedule,
) -> Result<JbpOutcome> {
    let h_eff = h_hat.mapv(|z| z * es.sqrt());
    JointGraph::new(yc, h_eff, interleavers.to_vec(), code, noise_var)?.decode(max_iter, schedule)
}
