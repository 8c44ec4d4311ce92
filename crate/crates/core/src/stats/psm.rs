//! Propensity-score matching with a bootstrap: areas are matched across the
//! treatment split on the log-odds of treatment, the outcome gap over
//! matched pairs estimates the average treatment effect, and the whole
//! procedure is repeated over resamples to get uncertainty.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{checked_cholesky, DesignMatrix};

/// Width of the matching window as a multiple of the log-odds spread.
pub const CALIPER_SD_MULTIPLE: f64 = 0.2;
/// Resamples producing fewer matched pairs than this are redrawn.
pub const MIN_MATCHED_PAIRS: usize = 10;
const MAX_REDRAWS_PER_REPLICATE: usize = 10_000;
const IRLS_MAX_ITERATIONS: usize = 100;

/// Average-treatment-effect estimate with bootstrap uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    /// Name of the greenery measure whose median split defines treatment.
    pub treatment: String,
    pub ate_mean: f64,
    /// Standard deviation of the bootstrap estimates.
    pub se: f64,
    /// 0.5th and 99.5th percentiles of the bootstrap estimates.
    pub ci99: (f64, f64),
    /// True iff zero lies outside `ci99`.
    pub significant: bool,
    /// One estimate per bootstrap replicate.
    pub bootstrap_draws: Vec<f64>,
    /// Resamples discarded and redrawn (too few pairs, one-sided draws, or
    /// failed propensity fits).
    pub discarded: u64,
}

/// Log-odds of a probability in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// True where the value strictly exceeds the median. An all-equal input has
/// nothing above its median, so everything lands in the control group.
pub fn binarize_treatment(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    values.iter().map(|&v| v > median).collect()
}

/// Logistic regression probabilities by iteratively reweighted least
/// squares. `x` carries the intercept column.
fn irls(x: &DMatrix<f64>, treated: &[bool]) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    let y: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let mut beta = DVector::<f64>::zeros(p);
    for _ in 0..IRLS_MAX_ITERATIONS {
        let eta = x * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| 1.0 / (1.0 + (-e).exp())).collect();
        let perfectly_classified = treated.iter().zip(&probs).all(|(&t, &pr)| {
            if t {
                pr > 1.0 - 1e-6
            } else {
                pr < 1e-6
            }
        });
        if perfectly_classified {
            return Err(Error::Separation(
                "a covariate combination perfectly predicts the treatment split".to_string(),
            ));
        }
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let w = (probs[i] * (1.0 - probs[i])).max(1e-10);
            let z = eta[i] + (y[i] - probs[i]) / w;
            let row = x.row(i);
            for a in 0..p {
                xtwz[a] += w * row[a] * z;
                for b in a..p {
                    xtwx[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let Some(chol) = checked_cholesky(xtwx) else {
            return Err(Error::Singular(
                "collinear covariates in the propensity model".to_string(),
            ));
        };
        let next = chol.solve(&xtwz);
        let step = (&next - &beta).amax();
        beta = next;
        if step < 1e-10 {
            let eta = x * &beta;
            return Ok(eta
                .iter()
                .map(|&e| (1.0 / (1.0 + (-e).exp())).clamp(1e-12, 1.0 - 1e-12))
                .collect());
        }
    }
    Err(Error::Singular(
        "propensity model did not converge".to_string(),
    ))
}

/// Probability of treatment per area from a logistic model on every
/// predictor column of `data`.
pub fn propensity_scores(data: &DesignMatrix, treatment: &[bool]) -> Result<Vec<f64>> {
    if treatment.len() != data.n() {
        return Err(Error::config(format!(
            "{} treatment flags for {} areas",
            treatment.len(),
            data.n()
        )));
    }
    let treated = treatment.iter().filter(|&&t| t).count();
    if treated == 0 || treated == treatment.len() {
        return Err(Error::InsufficientData(
            "both treatment groups must be non-empty".to_string(),
        ));
    }
    irls(&data.with_intercept(), treatment)
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Nearest-neighbour pairs (control, treated) on the log-odds scale, with
/// replacement, in both directions, keeping only pairs within the caliper.
/// Ties go to the lower index.
fn match_pairs(logits: &[f64], treatment: &[bool], caliper: f64) -> Vec<(usize, usize)> {
    let treated: Vec<usize> = (0..treatment.len()).filter(|&i| treatment[i]).collect();
    let controls: Vec<usize> = (0..treatment.len()).filter(|&i| !treatment[i]).collect();
    let nearest = |i: usize, pool: &[usize]| -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &j in pool {
            let d = (logits[i] - logits[j]).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best.filter(|&(d, _)| d <= caliper).map(|(_, j)| j)
    };
    let mut pairs = Vec::new();
    for &t in &treated {
        if let Some(c) = nearest(t, &controls) {
            pairs.push((c, t));
        }
    }
    for &c in &controls {
        if let Some(t) = nearest(c, &treated) {
            pairs.push((c, t));
        }
    }
    pairs
}

fn ate_over_pairs(y: &[f64], pairs: &[(usize, usize)]) -> f64 {
    let sum: f64 = pairs.iter().map(|&(c, t)| y[t] - y[c]).sum();
    sum / pairs.len() as f64
}

/// Independent random stream for one bootstrap replicate, derived from the
/// run seed and the replicate index so replicates can run in any order.
fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() as f64 - 1.0);
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// One bootstrap replicate: resample areas with replacement, refit the
/// propensity model, match, and average the matched outcome gaps. Draws
/// that cannot produce a valid estimate are discarded and redrawn.
fn bootstrap_replicate(
    x: &DMatrix<f64>,
    y: &[f64],
    treatment: &[bool],
    seed: u64,
    replicate: u64,
) -> Result<(f64, u64)> {
    let n = y.len();
    let mut rng = replicate_rng(seed, replicate);
    let mut discarded = 0u64;
    for _ in 0..MAX_REDRAWS_PER_REPLICATE {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let rt: Vec<bool> = idx.iter().map(|&i| treatment[i]).collect();
        let treated = rt.iter().filter(|&&t| t).count();
        if treated == 0 || treated == n {
            discarded += 1;
            continue;
        }
        let rx = DMatrix::from_fn(n, x.ncols(), |i, j| x[(idx[i], j)]);
        let scores = match irls(&rx, &rt) {
            Ok(s) => s,
            Err(Error::Separation(_)) | Err(Error::Singular(_)) => {
                discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let logits: Vec<f64> = scores.iter().map(|&p| logit(p)).collect();
        let caliper = CALIPER_SD_MULTIPLE * sd(&logits);
        let pairs = match_pairs(&logits, &rt, caliper);
        if pairs.len() < MIN_MATCHED_PAIRS {
            discarded += 1;
            continue;
        }
        let ry: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        return Ok((ate_over_pairs(&ry, &pairs), discarded));
    }
    Err(Error::InsufficientData(format!(
        "replicate {replicate} found no valid resample in {MAX_REDRAWS_PER_REPLICATE} draws"
    )))
}

/// Bootstrapped average treatment effect of a median-split treatment on the
/// outcome in `data`, with every predictor column used as a confounder.
pub fn psm_ate(
    data: &DesignMatrix,
    treatment: &[bool],
    treatment_name: &str,
    b: usize,
    seed: u64,
) -> Result<AteResult> {
    if treatment.len() != data.n() {
        return Err(Error::config(format!(
            "{} treatment flags for {} areas",
            treatment.len(),
            data.n()
        )));
    }
    if b == 0 {
        return Err(Error::config("bootstrap replicate count must be positive"));
    }
    let treated = treatment.iter().filter(|&&t| t).count();
    if treated == 0 || treated == treatment.len() {
        return Err(Error::InsufficientData(
            "both treatment groups must be non-empty".to_string(),
        ));
    }
    let x = data.with_intercept();
    let results: Result<Vec<(f64, u64)>> = (0..b as u64)
        .into_par_iter()
        .map(|r| bootstrap_replicate(&x, &data.y, treatment, seed, r))
        .collect();
    let results = results?;
    let draws: Vec<f64> = results.iter().map(|&(d, _)| d).collect();
    let discarded: u64 = results.iter().map(|&(_, c)| c).sum();
    let ate_mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let se = sd(&draws);
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let ci99 = (percentile(&sorted, 0.005), percentile(&sorted, 0.995));
    let significant = !(ci99.0 <= 0.0 && 0.0 <= ci99.1);
    Ok(AteResult {
        treatment: treatment_name.to_string(),
        ate_mean,
        se,
        ci99,
        significant,
        bootstrap_draws: draws,
        discarded,
    })
}
