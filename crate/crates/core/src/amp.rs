//! Multiple-measurement-vector AMP for the CS part.
//!
//! The decoder works in a normalized domain: the dictionary is scaled to unit
//! column norm and the observation by `1 / sqrt(Es * Lp)`, so the unknown
//! row-sparse matrix `X` has active rows equal to the user channels, with unit
//! prior variance. Each iteration is
//!
//! ```text
//! R       = A^H Z + X
//! X'      = eta(R)                        (row-wise Bernoulli-Gaussian MMSE)
//! Z'      = Y - A X' + (N / Lp) Z <eta'>^T
//! ```
//!
//! with `<eta'>` the average row Jacobian and the effective noise variance
//! re-estimated as `|Z|_F^2 / (Lp * M)`.

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CsIndex};
use crate::config::SimConfig;
use crate::error::{Error, Result};

/// Smallest effective noise variance the iteration will use.
pub const TAU_SQ_FLOOR: f64 = 1e-12;

/// Rows whose Jacobian rank-one weight falls below this are skipped when
/// averaging; their contribution is under one ulp of the diagonal term.
const JACOBIAN_WEIGHT_CUTOFF: f64 = 1e-18;

/// Denoiser output for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub row: Vec<Complex64>,
    /// Posterior probability that the row is active.
    pub posterior: f64,
    /// `J[i][j] = d out_i / d r_j` (holomorphic Wirtinger derivative).
    pub jacobian: Array2<Complex64>,
}

#[derive(Debug, Clone, Copy)]
struct RowScalars {
    posterior: f64,
    /// Linear MMSE gain `gamma / (gamma + tau^2)`.
    shrink: f64,
    /// Coefficient of `r r^H` in the Jacobian.
    rank_one: f64,
}

#[derive(Debug, Clone, Copy)]
struct Prior {
    log_odds: f64,
    gamma: f64,
}

impl Prior {
    fn new(lambda: f64, gamma: f64) -> Self {
        Prior {
            log_odds: (lambda / (1.0 - lambda)).ln(),
            gamma,
        }
    }

    fn scalars(&self, norm_sq: f64, m: usize, tau_sq: f64) -> RowScalars {
        let total = tau_sq + self.gamma;
        let delta = 1.0 / tau_sq - 1.0 / total;
        let u = self.log_odds + m as f64 * (tau_sq / total).ln() + norm_sq * delta;
        let posterior = sigmoid(u);
        let shrink = self.gamma / total;
        RowScalars {
            posterior,
            shrink,
            rank_one: shrink * posterior * (1.0 - posterior) * delta,
        }
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli-Gaussian MMSE denoiser with unit signal variance.
pub fn mmse_denoise(row: &[Complex64], tau_sq: f64, lambda: f64) -> Result<Denoised> {
    mmse_denoise_with_variance(row, tau_sq, lambda, 1.0)
}

/// Denoiser for the prior `x = 0` w.p. `1 - lambda`, `x ~ CN(0, gamma I)`
/// w.p. `lambda`, observed as `r = x + CN(0, tau_sq I)`.
pub fn mmse_denoise_with_variance(
    row: &[Complex64],
    tau_sq: f64,
    lambda: f64,
    gamma: f64,
) -> Result<Denoised> {
    if !row.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("denoiser input row"));
    }
    if !(tau_sq.is_finite() && tau_sq > 0.0) {
        return Err(Error::NonFinite("denoiser noise variance"));
    }
    if !(lambda > 0.0 && lambda < 1.0) || !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::NonFinite("denoiser prior"));
    }
    let m = row.len();
    let norm_sq: f64 = row.iter().map(|z| z.norm_sqr()).sum();
    let s = Prior::new(lambda, gamma).scalars(norm_sq, m, tau_sq);
    let gain = s.posterior * s.shrink;
    let jacobian = Array2::from_shape_fn((m, m), |(i, j)| {
        let diag = if i == j { gain } else { 0.0 };
        row[i] * row[j].conj() * s.rank_one + diag
    });
    Ok(Denoised {
        row: row.iter().map(|&z| z * gain).collect(),
        posterior: s.posterior,
        jacobian,
    })
}

/// Iteration state of the CS decoder, in the normalized domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// `2^Bp x M` estimate of `X`.
    pub x_hat: Array2<Complex64>,
    /// `Lp x M` corrected residual.
    pub residual: Array2<Complex64>,
    /// Effective noise variance used in the last denoising step.
    pub tau_sq: f64,
    pub iteration: usize,
    /// `|X^{t+1} - X^t|_F^2 / (N M)` of the last step.
    pub mse_delta: f64,
    /// Activity posterior of every row from the last denoising step.
    pub posteriors: Vec<f64>,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpIterStats {
    pub iteration: usize,
    pub tau_sq: f64,
    pub mse_delta: f64,
    pub detected: usize,
}

/// Parameters of the CS decoder, taken from a [`SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpParams {
    pub sparsity_prior: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub activity_threshold: f64,
}

impl From<&SimConfig> for AmpParams {
    fn from(cfg: &SimConfig) -> Self {
        AmpParams {
            sparsity_prior: cfg.sparsity_prior,
            max_iter: cfg.amp_max_iter,
            tol: cfg.amp_tol,
            activity_threshold: cfg.activity_threshold,
        }
    }
}

fn frob_sq(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Runs AMP on `yp` (the first `Lp` received rows) against the effective
/// dictionary `sqrt(es) * A`.
pub fn amp_iterate(
    codebook: &Codebook,
    es: f64,
    yp: ArrayView2<'_, Complex64>,
    params: &AmpParams,
) -> Result<(AmpState, Vec<AmpIterStats>)> {
    let a = codebook.matrix();
    let (lp, n) = a.dim();
    let m = yp.ncols();
    if yp.nrows() != lp {
        return Err(Error::Dimension {
            what: "CS observation rows",
            expected: lp,
            got: yp.nrows(),
        });
    }
    if !yp.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("CS observation"));
    }
    if !(es.is_finite() && es > 0.0) {
        return Err(Error::NonFinite("symbol energy"));
    }
    let col_scale = 1.0 / (lp as f64).sqrt();
    let y = yp.mapv(|z| z / (es * lp as f64).sqrt());
    let prior = Prior::new(params.sparsity_prior, 1.0);

    let mut x = Array2::<Complex64>::zeros((n, m));
    let mut z = y.clone();
    let mut posteriors = vec![0.0; n];
    let mut history: Vec<AmpIterStats> = Vec::new();
    let mut tau_sq = TAU_SQ_FLOOR;
    let mut mse_delta = 0.0;

    for t in 0..params.max_iter {
        tau_sq = (frob_sq(&z) / (lp * m) as f64).max(TAU_SQ_FLOOR);

        // R = A~^H Z + X, with A~^H Z = conj(A^T conj(Z)) / sqrt(Lp)
        let zc = z.mapv(|v| v.conj());
        let mut r = a.t().dot(&zc);
        r.zip_mut_with(&x, |rv, &xv| *rv = rv.conj() * col_scale + xv);

        let mut x_new = Array2::<Complex64>::zeros((n, m));
        let mut diag_sum = 0.0;
        let mut rank_one_sum = Array2::<Complex64>::zeros((m, m));
        for (i, (r_row, mut x_row)) in r.outer_iter().zip(x_new.outer_iter_mut()).enumerate() {
            let norm_sq: f64 = r_row.iter().map(|v| v.norm_sqr()).sum();
            let s = prior.scalars(norm_sq, m, tau_sq);
            posteriors[i] = s.posterior;
            let gain = s.posterior * s.shrink;
            diag_sum += gain;
            x_row.zip_mut_with(&r_row, |xv, &rv| *xv = rv * gain);
            if s.rank_one > JACOBIAN_WEIGHT_CUTOFF {
                // row convention: accumulate conj(r_a) r_b for J^T
                for a_ in 0..m {
                    let ca = r_row[a_].conj() * s.rank_one;
                    for b in 0..m {
                        rank_one_sum[(a_, b)] += ca * r_row[b];
                    }
                }
            }
        }

        // Onsager: (N / Lp) Z J_avg^T = Z (sum_n J_n^T) / Lp
        let mut jt = rank_one_sum;
        for d in 0..m {
            jt[(d, d)] += diag_sum;
        }
        jt.mapv_inplace(|v| v / lp as f64);
        let onsager = z.dot(&jt);
        let ax = a.dot(&x_new).mapv(|v| v * col_scale);
        let z_new = &y - &ax + &onsager;

        let delta_sq: f64 = x_new
            .iter()
            .zip(x.iter())
            .map(|(p, q)| (p - q).norm_sqr())
            .sum();
        let norm_sq = frob_sq(&x_new);
        mse_delta = delta_sq / (n * m) as f64;
        let detected = posteriors
            .iter()
            .filter(|&&p| p >= params.activity_threshold)
            .count();
        history.push(AmpIterStats {
            iteration: t + 1,
            tau_sq,
            mse_delta,
            detected,
        });
        x = x_new;
        z = z_new;

        if !mse_delta.is_finite() || !tau_sq.is_finite() {
            return Err(Error::AmpDiverged {
                iteration: t + 1,
                tau_sq,
            });
        }
        if diverging(&history) {
            return Err(Error::AmpDiverged {
                iteration: t + 1,
                tau_sq,
            });
        }
        let converged = if norm_sq == 0.0 {
            delta_sq == 0.0
        } else {
            delta_sq / norm_sq < params.tol
        };
        if converged {
            break;
        }
    }

    Ok((
        AmpState {
            x_hat: x,
            residual: z,
            tau_sq,
            iteration: history.len(),
            mse_delta,
            posteriors,
        },
        history,
    ))
}

/// tau^2 grew at every one of the last 5 steps and by more than 10x overall.
fn diverging(history: &[AmpIterStats]) -> bool {
    let n = history.len();
    if n < 6 {
        return false;
    }
    let w = &history[n - 6..];
    w.windows(2).all(|p| p[1].tau_sq > p[0].tau_sq) && w[5].tau_sq > 10.0 * w[0].tau_sq
}

/// CS decoder output: detected codeword indices and their channel estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CsEstimate {
    /// Ascending detected indices.
    pub detected: Vec<CsIndex>,
    /// `K x M`, row `k` is the channel estimate for `detected[k]`.
    pub h_hat: Array2<Complex64>,
    pub posteriors: Vec<f64>,
}

impl CsEstimate {
    pub fn empty(m: usize) -> Self {
        CsEstimate {
            detected: Vec::new(),
            h_hat: Array2::zeros((0, m)),
            posteriors: Vec::new(),
        }
    }

    pub fn k_detected(&self) -> usize {
        self.detected.len()
    }
}

/// Keeps every row whose activity posterior reaches `threshold`.
pub fn detect_active(state: &AmpState, threshold: f64) -> CsEstimate {
    let rows: Vec<usize> = state
        .posteriors
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect();
    CsEstimate {
        detected: rows.iter().map(|&i| CsIndex::from_column(i)).collect(),
        h_hat: state.x_hat.select(Axis(0), &rows),
        posteriors: rows.iter().map(|&i| state.posteriors[i]).collect(),
    }
}
