//! Geographically weighted regression: a separate weighted least-squares
//! fit at every area, with weights shrinking over distance so coefficients
//! may drift across the map.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{checked_cholesky, DesignMatrix};

/// Spatial weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GwrKernel {
    /// Bisquare taper over the `bandwidth` nearest neighbours: the weight of
    /// neighbour j at location i is (1 − (d_ij/d_i)²)² where d_i is the
    /// distance to the bandwidth-th nearest neighbour, and 0 beyond it.
    AdaptiveBisquare,
    /// Every observation weighted 1 regardless of distance; every location
    /// then reproduces the global least-squares fit. Diagnostic only.
    Uniform,
}

/// Local coefficient surfaces plus fit diagnostics. Locations whose local
/// system was singular carry `None` rows and are listed in `skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrResult {
    /// Coefficient names: intercept first, then the predictors.
    pub names: Vec<String>,
    /// Per-location coefficients, intercept first.
    pub coefficients: Vec<Option<Vec<f64>>>,
    /// Per-location coefficient standard errors.
    pub standard_errors: Vec<Option<Vec<f64>>>,
    /// Per-location residual y_i − x_iᵀβ̂_i.
    pub residuals: Vec<Option<f64>>,
    /// Neighbours contributing to each local fit.
    pub bandwidth: usize,
    /// Corrected Akaike information criterion of the whole surface.
    pub aicc: f64,
    /// Locations with singular local designs, skipped.
    pub skipped: Vec<usize>,
}

struct LocalFits {
    coefficients: Vec<Option<Vec<f64>>>,
    unscaled_se: Vec<Option<Vec<f64>>>,
    residuals: Vec<Option<f64>>,
    leverages: Vec<f64>,
    skipped: Vec<usize>,
}

fn distances(coords: &[(f64, f64)]) -> Vec<Vec<f64>> {
    coords
        .iter()
        .map(|&(ux, uy)| {
            coords
                .iter()
                .map(|&(vx, vy)| ((ux - vx).powi(2) + (uy - vy).powi(2)).sqrt())
                .collect()
        })
        .collect()
}

fn local_weights(kernel: GwrKernel, dist_row: &[f64], sorted_row: &[f64], bw: usize) -> Vec<f64> {
    match kernel {
        GwrKernel::Uniform => vec![1.0; dist_row.len()],
        GwrKernel::AdaptiveBisquare => {
            let d_bw = sorted_row[bw - 1];
            if d_bw == 0.0 {
                // more coincident points than the bandwidth: weight them
                // equally and nothing else
                return dist_row
                    .iter()
                    .map(|&d| if d == 0.0 { 1.0 } else { 0.0 })
                    .collect();
            }
            dist_row
                .iter()
                .map(|&d| {
                    if d < d_bw {
                        let t = 1.0 - (d / d_bw).powi(2);
                        t * t
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

/// One weighted least-squares fit; `None` when XᵀWX is not positive
/// definite. Returns the coefficient vector, the unscaled standard errors
/// sqrt(diag((XᵀWX)⁻¹XᵀW²X(XᵀWX)⁻¹)), and the leverage of location `i`.
fn wls_at(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    i: usize,
) -> Option<(DVector<f64>, Vec<f64>, f64)> {
    let n = x.nrows();
    let p = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtw2x = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for j in 0..n {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        let row = x.row(j);
        for a in 0..p {
            xtwy[a] += w * row[a] * y[j];
            for b in a..p {
                xtwx[(a, b)] += w * row[a] * row[b];
                xtw2x[(a, b)] += w * w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
            xtw2x[(a, b)] = xtw2x[(b, a)];
        }
    }
    let chol = checked_cholesky(xtwx)?;
    let beta = chol.solve(&xtwy);
    let inv = chol.inverse();
    let mid = &inv * &xtw2x * &inv;
    let unscaled_se: Vec<f64> = (0..p).map(|a| mid[(a, a)].max(0.0).sqrt()).collect();
    let xi = x.row(i).transpose();
    // the self-weight is 1 for both kernels, so the hat diagonal reduces to
    // x_iᵀ(XᵀWX)⁻¹x_i
    let leverage = (xi.transpose() * chol.solve(&xi))[(0, 0)];
    Some((beta, unscaled_se, leverage))
}

fn fit_all(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    dists: &[Vec<f64>],
    sorted: &[Vec<f64>],
    kernel: GwrKernel,
    bw: usize,
) -> LocalFits {
    let n = x.nrows();
    let mut out = LocalFits {
        coefficients: vec![None; n],
        unscaled_se: vec![None; n],
        residuals: vec![None; n],
        leverages: vec![0.0; n],
        skipped: Vec::new(),
    };
    for i in 0..n {
        let weights = local_weights(kernel, &dists[i], &sorted[i], bw);
        match wls_at(x, y, &weights, i) {
            Some((beta, se, leverage)) => {
                let fitted = (x.row(i) * &beta)[(0, 0)];
                out.residuals[i] = Some(y[i] - fitted);
                out.coefficients[i] = Some(beta.iter().cloned().collect());
                out.unscaled_se[i] = Some(se);
                out.leverages[i] = leverage;
            }
            None => out.skipped.push(i),
        }
    }
    out
}

/// Corrected AIC over the locations that produced a fit: with σ̂² = RSS/n
/// and tr(S) the summed leverages, n·ln(σ̂²) + n·ln(2π) + n(n + tr S)/(n − 2 − tr S).
fn aicc_of(fits: &LocalFits) -> f64 {
    let survivors: Vec<usize> = (0..fits.residuals.len())
        .filter(|&i| fits.residuals[i].is_some())
        .collect();
    let n = survivors.len() as f64;
    if n == 0.0 {
        return f64::INFINITY;
    }
    let rss: f64 = survivors
        .iter()
        .map(|&i| fits.residuals[i].unwrap().powi(2))
        .sum();
    let tr_s: f64 = survivors.iter().map(|&i| fits.leverages[i]).sum();
    if rss <= 0.0 {
        // an exact interpolation has no defined likelihood scale; treat as
        // ideal so the search prefers it
        return f64::NEG_INFINITY;
    }
    let dof = n - 2.0 - tr_s;
    if dof <= 0.0 {
        return f64::INFINITY;
    }
    let sigma2 = rss / n;
    n * sigma2.ln() + n * (2.0 * std::f64::consts::PI).ln() + n * (n + tr_s) / dof
}

/// Golden-section search over integer bandwidths in [lo, hi], minimizing
/// `eval`; ties break toward the smaller bandwidth.
fn golden_section(lo: usize, hi: usize, mut eval: impl FnMut(usize) -> f64) -> (usize, f64) {
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut f = |b: usize, cache: &mut BTreeMap<usize, f64>| -> f64 {
        if let Some(&v) = cache.get(&b) {
            return v;
        }
        let v = eval(b);
        cache.insert(b, v);
        v
    };
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo as f64, hi as f64);
    f(lo, &mut cache);
    f(hi, &mut cache);
    while b - a > 2.0 {
        let c = (b - (b - a) * INV_PHI).round().clamp(lo as f64, hi as f64) as usize;
        let d = (a + (b - a) * INV_PHI).round().clamp(lo as f64, hi as f64) as usize;
        if c == d {
            break;
        }
        if f(c, &mut cache) < f(d, &mut cache) {
            b = d as f64;
        } else {
            a = c as f64;
        }
    }
    for bw in (a.floor() as usize)..=(b.ceil() as usize).min(hi) {
        f(bw, &mut cache);
    }
    cache
        .into_iter()
        .min_by(|(bw1, v1), (bw2, v2)| v1.total_cmp(v2).then(bw1.cmp(bw2)))
        .expect("at least the endpoints were evaluated")
}

/// Fits a local regression at every location. With an explicit `bandwidth`
/// the fit uses it directly; otherwise the bandwidth minimizing the
/// corrected AIC over [k+2, n] is selected by golden-section search.
pub fn gwr_fit(
    data: &DesignMatrix,
    kernel: GwrKernel,
    bandwidth: Option<usize>,
) -> Result<GwrResult> {
    let n = data.n();
    let k = data.k();
    let p = k + 1;
    let lo = p + 1;
    if n < lo {
        return Err(Error::InsufficientData(format!(
            "need at least {lo} areas for {k} predictor(s), got {n}"
        )));
    }
    if let Some(bw) = bandwidth {
        if bw < lo || bw > n {
            return Err(Error::config(format!(
                "bandwidth {bw} outside the valid range [{lo}, {n}]"
            )));
        }
    }
    let x = data.with_intercept();
    let y = data.y_vector();
    let dists = distances(&data.coords);
    let sorted: Vec<Vec<f64>> = dists
        .iter()
        .map(|row| {
            let mut s = row.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();

    let (bw, fits, aicc) = match bandwidth {
        Some(bw) => {
            let fits = fit_all(&x, &y, &dists, &sorted, kernel, bw);
            let aicc = aicc_of(&fits);
            (bw, fits, aicc)
        }
        None => {
            // during the search a bandwidth is only admissible if every
            // location admits a fit
            let (best, _) = golden_section(lo, n, |bw| {
                let fits = fit_all(&x, &y, &dists, &sorted, kernel, bw);
                if fits.skipped.is_empty() {
                    aicc_of(&fits)
                } else {
                    f64::INFINITY
                }
            });
            let fits = fit_all(&x, &y, &dists, &sorted, kernel, best);
            if !fits.skipped.is_empty() {
                return Err(Error::Singular(
                    "no bandwidth produced a full-rank fit at every location".to_string(),
                ));
            }
            let aicc = aicc_of(&fits);
            (best, fits, aicc)
        }
    };

    // residual variance for the coefficient standard errors, on the
    // surface's effective degrees of freedom
    let survivors: Vec<usize> = (0..n).filter(|&i| fits.residuals[i].is_some()).collect();
    let rss: f64 = survivors
        .iter()
        .map(|&i| fits.residuals[i].unwrap().powi(2))
        .sum();
    let tr_s: f64 = survivors.iter().map(|&i| fits.leverages[i]).sum();
    let dof = survivors.len() as f64 - tr_s;
    let sigma = if dof > 0.0 { (rss / dof).sqrt() } else { f64::NAN };

    let mut names = vec!["intercept".to_string()];
    names.extend(data.names.iter().cloned());
    Ok(GwrResult {
        names,
        coefficients: fits.coefficients,
        standard_errors: fits
            .unscaled_se
            .into_iter()
            .map(|row| row.map(|se| se.into_iter().map(|s| s * sigma).collect()))
            .collect(),
        residuals: fits.residuals,
        bandwidth: bw,
        aicc,
        skipped: fits.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{build_design, ols};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy_fixture(n: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut outcome = Vec::with_capacity(n);
        let mut x1 = Vec::with_capacity(n);
        let mut x2 = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        for i in 0..n {
            let u = (i % 10) as f64 * 100.0;
            let v = (i / 10) as f64 * 100.0;
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
            outcome.push(Some(1.5 + 2.0 * a - 3.0 * b + eps));
            x1.push(Some(a));
            x2.push(Some(b));
            coords.push((u, v));
        }
        let ids: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let cols = vec![("x1".to_string(), x1), ("x2".to_string(), x2)];
        let mut warnings = Vec::new();
        build_design(&ids, &outcome, &cols, &coords, &mut warnings).unwrap()
    }

    #[test]
    fn uniform_weights_reproduce_global_least_squares() {
        let data = noisy_fixture(40, 11);
        let global = ols(&data).unwrap();
        let fit = gwr_fit(&data, GwrKernel::Uniform, Some(data.n())).unwrap();
        assert!(fit.skipped.is_empty());
        for row in fit.coefficients.iter() {
            let row = row.as_ref().unwrap();
            for (local, global) in row.iter().zip(&global) {
                assert_relative_eq!(local, global, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn exact_linear_data_is_recovered_at_every_bandwidth() {
        let n = 25;
        let outcome: Vec<Option<f64>> = (0..n)
            .map(|i| Some(2.0 + 0.5 * (i as f64 * 1.7 % 13.0)))
            .collect();
        let cols = vec![(
            "x1".to_string(),
            (0..n).map(|i| Some(i as f64 * 1.7 % 13.0)).collect::<Vec<_>>(),
        )];
        let coords: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 * 31.0, (i * i % 11) as f64)).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut warnings = Vec::new();
        let data = build_design(&ids, &outcome, &cols, &coords, &mut warnings).unwrap();
        for bw in [3, 5, 12, 25] {
            let fit = gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(bw)).unwrap();
            for row in fit.coefficients.iter().flatten() {
                assert_relative_eq!(row[0], 2.0, epsilon = 1e-8);
                assert_relative_eq!(row[1], 0.5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn coefficient_surface_tracks_spatial_variation() {
        // slope rises linearly west to east; a tight kernel must see it
        let side = 12usize;
        let n = side * side;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut outcome = Vec::new();
        let mut col = Vec::new();
        let mut coords = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let u = (i % side) as f64 * 100.0;
            let v = (i / side) as f64 * 100.0;
            let x: f64 = rng.gen_range(-1.0..1.0);
            let beta = 1.0 + u / ((side - 1) as f64 * 100.0); // 1 → 2
            outcome.push(Some(0.5 + beta * x));
            col.push(Some(x));
            coords.push((u, v));
            truth.push(beta);
        }
        let ids: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let cols = vec![("x1".to_string(), col)];
        let mut warnings = Vec::new();
        let data = build_design(&ids, &outcome, &cols, &coords, &mut warnings).unwrap();
        let fit = gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(20)).unwrap();
        assert!(fit.skipped.is_empty());
        let est: Vec<f64> = fit.coefficients.iter().map(|c| c.as_ref().unwrap()[1]).collect();
        let mean_t = truth.iter().sum::<f64>() / n as f64;
        let mean_e = est.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut dt = 0.0;
        let mut de = 0.0;
        for i in 0..n {
            num += (truth[i] - mean_t) * (est[i] - mean_e);
            dt += (truth[i] - mean_t).powi(2);
            de += (est[i] - mean_e).powi(2);
        }
        let r = num / (dt.sqrt() * de.sqrt());
        assert!(r > 0.9, "coefficient surface correlation {r} too low");
    }

    #[test]
    fn collinear_predictors_skip_every_location() {
        let n = 20;
        let outcome: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
        let col: Vec<Option<f64>> = (0..n).map(|i| Some((i % 5) as f64)).collect();
        let cols = vec![("x1".to_string(), col.clone()), ("x1_copy".to_string(), col)];
        let coords: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, 0.0)).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut warnings = Vec::new();
        let data = build_design(&ids, &outcome, &cols, &coords, &mut warnings).unwrap();
        let fit = gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(10)).unwrap();
        assert_eq!(fit.skipped.len(), n);
        assert!(fit.coefficients.iter().all(|c| c.is_none()));
        assert!(matches!(
            gwr_fit(&data, GwrKernel::AdaptiveBisquare, None),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn bandwidth_bounds_are_enforced() {
        let data = noisy_fixture(30, 3);
        // k = 2 so the smallest admissible bandwidth is 4
        assert!(matches!(
            gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(3)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(31)),
            Err(Error::Config(_))
        ));
        assert!(gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(4)).is_ok());
        assert!(gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(30)).is_ok());
    }

    #[test]
    fn bandwidth_selection_is_deterministic_and_in_range() {
        let data = noisy_fixture(50, 19);
        let a = gwr_fit(&data, GwrKernel::AdaptiveBisquare, None).unwrap();
        let b = gwr_fit(&data, GwrKernel::AdaptiveBisquare, None).unwrap();
        assert_eq!(a.bandwidth, b.bandwidth);
        assert_eq!(a.aicc, b.aicc);
        assert!(a.bandwidth >= 4 && a.bandwidth <= 50);
        // the selected bandwidth reproduces its own advertised score
        let again = gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(a.bandwidth)).unwrap();
        assert_eq!(again.aicc, a.aicc);
        assert_eq!(again.coefficients, a.coefficients);
    }

    #[test]
    fn constant_coefficients_are_recovered_under_noise() {
        let data = noisy_fixture(100, 23);
        let fit = gwr_fit(&data, GwrKernel::AdaptiveBisquare, Some(60)).unwrap();
        let n = data.n() as f64;
        for (j, truth) in [(0usize, 1.5), (1, 2.0), (2, -3.0)] {
            let mean: f64 = fit
                .coefficients
                .iter()
                .map(|c| c.as_ref().unwrap()[j])
                .sum::<f64>()
                / n;
            assert!(
                (mean - truth).abs() < 0.05,
                "coefficient {j}: mean {mean} vs truth {truth}"
            );
        }
        // standard errors are positive and finite
        for row in fit.standard_errors.iter().flatten() {
            assert!(row.iter().all(|s| s.is_finite() && *s > 0.0));
        }
    }
}
