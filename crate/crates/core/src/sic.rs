//! Outer successive-cancellation loop, message stitching and error metrics.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amp::CsEstimate;
use crate::bp::{jbp_decode, BpIterStats, BpSchedule};
use crate::channel::{make_interleaver, Interleaver};
use crate::codebook::{decode_cs, CsIndex};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::ldpc::LdpcCode;

/// One decoded user's contribution to cancel from the LDPC block.
#[derive(Debug, Clone, Copy)]
pub struct Cancellation<'a> {
    pub codeword: &'a [u8],
    /// Normalized channel row (transmit power not included).
    pub h: ArrayView1<'a, Complex64>,
    pub interleaver: &'a Interleaver,
}

/// `yc - sum sqrt(es) * pi(2 s - 1) h^T` over `decoded`.
pub fn subtract_decoded(
    yc: ArrayView2<'_, Complex64>,
    decoded: &[Cancellation<'_>],
    es: f64,
) -> Result<Array2<Complex64>> {
    let (lc, m) = yc.dim();
    let amp = es.sqrt();
    let mut residual = yc.to_owned();
    for d in decoded {
        if d.codeword.len() != lc || d.interleaver.len() != lc {
            return Err(Error::Dimension {
                what: "cancelled codeword length",
                expected: lc,
                got: d.codeword.len(),
            });
        }
        if d.h.len() != m {
            return Err(Error::Dimension {
                what: "cancelled channel row",
                expected: m,
                got: d.h.len(),
            });
        }
        for (l, mut row) in residual.outer_iter_mut().enumerate() {
            let sign = if d.codeword[d.interleaver.source_of(l)] == 1 { amp } else { -amp };
            row.zip_mut_with(&d.h, |y, &h| *y -= h * sign);
        }
    }
    Ok(residual)
}

/// Decoder knobs shared by the joint BP and the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicParams {
    pub es: f64,
    pub noise_var: f64,
    pub bp_max_iter: usize,
    pub schedule: BpSchedule,
    pub max_rounds: usize,
    /// Seed the interleavers are keyed by.
    pub master_seed: u64,
}

impl From<&SimConfig> for SicParams {
    fn from(cfg: &SimConfig) -> Self {
        SicParams {
            es: cfg.derive_energy().symbol_energy,
            noise_var: cfg.noise_var,
            bp_max_iter: cfg.bp_max_iter,
            schedule: cfg.bp_schedule,
            max_rounds: cfg.sic_max_rounds,
            master_seed: cfg.master_seed,
        }
    }
}

/// A user recovered by the loop. `user` indexes the CS estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedUser {
    pub user: usize,
    pub index: CsIndex,
    pub codeword: Vec<u8>,
    /// 1-based round it was decoded in.
    pub round: usize,
}

/// State of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SicState {
    pub residual_y: Array2<Complex64>,
    /// CS-estimate rows not yet decoded, ascending.
    pub remaining_users: Vec<usize>,
    pub decoded: Vec<DecodedUser>,
    pub round: usize,
    pub bp_iterations: usize,
    /// BP iterations spent in each round.
    pub round_iterations: Vec<usize>,
    /// BP trace of every round, concatenated; iteration numbers restart per round.
    pub bp_trace: Vec<BpIterStats>,
}

impl SicState {
    /// Users decoded by the end of round `round`.
    pub fn decoded_by_round(&self, round: usize) -> impl Iterator<Item = &DecodedUser> {
        self.decoded.iter().filter(move |d| d.round <= round)
    }
}

/// Interleavers for every detected index.
pub fn interleavers_for(cs_est: &CsEstimate, lc: usize, master_seed: u64) -> Vec<Interleaver> {
    cs_est
        .detected
        .iter()
        .map(|&i| make_interleaver(i, lc, master_seed))
        .collect()
}

/// Repeated joint BP with cancellation of every newly decoded user.
pub fn run_sic(
    yc: ArrayView2<'_, Complex64>,
    cs_est: &CsEstimate,
    code: &LdpcCode,
    params: &SicParams,
) -> Result<SicState> {
    let interleavers = interleavers_for(cs_est, code.n(), params.master_seed);
    let mut state = SicState {
        residual_y: yc.to_owned(),
        remaining_users: (0..cs_est.k_detected()).collect(),
        decoded: Vec::new(),
        round: 0,
        bp_iterations: 0,
        round_iterations: Vec::new(),
        bp_trace: Vec::new(),
    };
    while !state.remaining_users.is_empty() && state.round < params.max_rounds {
        state.round += 1;
        let rows = cs_est.h_hat.select(Axis(0), &state.remaining_users);
        let pis: Vec<&Interleaver> = state.remaining_users.iter().map(|&u| &interleavers[u]).collect();
        let out = jbp_decode(
            state.residual_y.view(),
            rows.view(),
            &pis,
            code,
            params.es,
            params.noise_var,
            params.bp_max_iter,
            params.schedule,
        )?;
        state.bp_iterations += out.iterations_used;
        state.round_iterations.push(out.iterations_used);
        state.bp_trace.extend_from_slice(&out.trace);
        if out.decoded.is_empty() {
            break;
        }
        let fresh: Vec<DecodedUser> = out
            .decoded
            .into_iter()
            .map(|(slot, codeword)| {
                let user = state.remaining_users[slot];
                DecodedUser {
                    user,
                    index: cs_est.detected[user],
                    codeword,
                    round: state.round,
                }
            })
            .collect();
        let cancel: Vec<Cancellation> = fresh
            .iter()
            .map(|d| Cancellation {
                codeword: &d.codeword,
                h: cs_est.h_hat.row(d.user),
                interleaver: &interleavers[d.user],
            })
            .collect();
        state.residual_y = subtract_decoded(state.residual_y.view(), &cancel, params.es)?;
        let done: HashSet<usize> = fresh.iter().map(|d| d.user).collect();
        state.remaining_users.retain(|u| !done.contains(u));
        state.decoded.extend(fresh);
    }
    state.decoded.sort_by_key(|d| d.user);
    Ok(state)
}

/// A full recovered message: `Bp` index bits then `Bc` systematic bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecoveredMessage {
    pub bits: Vec<u8>,
}

/// Joins the index bits and the LDPC message bits of each decoded user.
pub fn stitch<'a>(
    decoded: impl IntoIterator<Item = &'a DecodedUser>,
    code: &LdpcCode,
    bp: usize,
) -> Result<Vec<RecoveredMessage>> {
    decoded
        .into_iter()
        .map(|d| {
            let mut bits = decode_cs(d.index, bp)?;
            bits.extend(code.extract_message(&d.codeword));
            Ok(RecoveredMessage { bits })
        })
        .collect()
}

/// Misdetection and false-alarm rates of a recovered list against the truth.
///
/// Each transmitted message counts once per user; one recovered entry covers
/// every user that sent it. An empty list has no false alarms.
pub fn compute_metrics(truth: &[Vec<u8>], recovered: &[RecoveredMessage]) -> (f64, f64) {
    assert!(!truth.is_empty(), "metrics need at least one transmitted message");
    let got: HashSet<&[u8]> = recovered.iter().map(|r| r.bits.as_slice()).collect();
    let sent: HashSet<&[u8]> = truth.iter().map(|t| t.as_slice()).collect();
    let missed = truth.iter().filter(|t| !got.contains(t.as_slice())).count();
    let false_alarms = recovered.iter().filter(|r| !sent.contains(r.bits.as_slice())).count();
    let p_md = missed as f64 / truth.len() as f64;
    let p_fa = if recovered.is_empty() {
        0.0
    } else {
        false_alarms as f64 / recovered.len() as f64
    };
    (p_md, p_fa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(bits: &[u8]) -> RecoveredMessage {
        RecoveredMessage { bits: bits.to_vec() }
    }

    #[test]
    fn metrics() {
        let truth: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i >> 3 & 1, i >> 2 & 1, i >> 1 & 1, i & 1]).collect();
        let exact: Vec<RecoveredMessage> = truth.iter().map(|t| msg(t)).collect();
        assert_eq!(compute_metrics(&truth, &exact), (0.0, 0.0));
        let mut partial: Vec<RecoveredMessage> = exact[..9].to_vec();
        partial.push(msg(&[1, 1, 1, 1]));
        let (md, fa) = compute_metrics(&truth, &partial);
        assert!((md - 0.1).abs() < 1e-15 && (fa - 0.1).abs() < 1e-15);
        assert_eq!(compute_metrics(&truth, &[]), (1.0, 0.0));
    }

    #[test]
    fn duplicate_truth_counts_per_user() {
        let truth = vec![vec![0, 1], vec![0, 1], vec![1, 1]];
        assert_eq!(compute_metrics(&truth, &[msg(&[0, 1])]), (1.0 / 3.0, 0.0));
        assert_eq!(compute_metrics(&truth, &[msg(&[1, 1])]), (2.0 / 3.0, 0.0));
    }

    #[test]
    fn empty_cancellation_is_identity() {
        let y = Array2::from_shape_fn((4, 2), |(i, j)| Complex64::new(i as f64, j as f64));
        assert_eq!(subtract_decoded(y.view(), &[], 2.0).unwrap(), y);
    }
}
