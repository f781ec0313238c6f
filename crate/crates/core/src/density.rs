//! Parametric density fits, binned distributions and the divergences between
//! them.
//!
//! Binned divergences are in bits. The closed-form Gaussian divergence is in
//! nats. Function names carry no unit, so callers label results themselves.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Univariate normal density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss1D {
    pub mu: f64,
    pub sigma: f64,
}

impl Gauss1D {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::DegenerateDensity);
        }
        Ok(Self { mu, sigma })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// `KL(self || other)` in nats.
    pub fn kld(&self, other: &Gauss1D) -> f64 {
        let r = self.sigma / other.sigma;
        let d = (self.mu - other.mu) / other.sigma;
        (-(r.ln()) + 0.5 * (r * r + d * d - 1.0)).max(0.0)
    }
}

/// Maximum-likelihood normal fit (divide-by-n variance).
pub fn fit_gauss1d(x: &[f64]) -> Result<Gauss1D> {
    if x.len() < 2 {
        return Err(invalid("need at least two samples"));
    }
    let mu = mean(x);
    let sigma = (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    Gauss1D::new(mu, sigma)
}

/// Multivariate normal density with symmetric positive-definite covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussNdRepr", into = "GaussNdRepr")]
pub struct GaussND {
    mu: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Serialize, Deserialize)]
struct GaussNdRepr {
    mu: Vec<f64>,
    sigma_mat: Vec<Vec<f64>>,
}

impl TryFrom<GaussNdRepr> for GaussND {
    type Error = Error;

    fn try_from(r: GaussNdRepr) -> Result<Self> {
        GaussND::new(r.mu, r.sigma_mat)
    }
}

impl From<GaussND> for GaussNdRepr {
    fn from(g: GaussND) -> Self {
        GaussNdRepr {
            mu: g.mu(),
            sigma_mat: g.sigma_mat(),
        }
    }
}

impl PartialEq for GaussND {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.cov == other.cov
    }
}

impl GaussND {
    pub fn new(mu: Vec<f64>, sigma_mat: Vec<Vec<f64>>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if sigma_mat.len() != n || sigma_mat.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(n, sigma_mat.len()));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| sigma_mat[i][j]);
        Self::from_parts(DVector::from_vec(mu), cov)
    }

    fn from_parts(mu: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let symmetric = (0..cov.nrows()).all(|i| (0..i).all(|j| (cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12 * scale));
        if !symmetric || !mu.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::DegenerateCovariance);
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::DegenerateCovariance)?;
        // Reject numerically singular matrices that still factor.
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
        if !(lo > 0.0) || lo / hi < 1e-7 {
            return Err(Error::DegenerateCovariance);
        }
        Ok(Self { mu, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> Vec<f64> {
        self.mu.iter().copied().collect()
    }

    pub fn sigma_mat(&self) -> Vec<Vec<f64>> {
        self.cov.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mu;
        let maha = d.dot(&self.chol.solve(&d));
        -0.5 * (maha + self.ln_det() + self.dim() as f64 * (2.0 * PI).ln())
    }

    /// Coordinates reordered by `perm` (new axis `i` is old axis `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim();
        if perm.len() != n {
            return Err(Error::DimensionMismatch(n, perm.len()));
        }
        let mu = DVector::from_fn(n, |i, _| self.mu[perm[i]]);
        let cov = DMatrix::from_fn(n, n, |i, j| self.cov[(perm[i], perm[j])]);
        Self::from_parts(mu, cov)
    }

    /// Lower Cholesky factor, for sampling.
    pub fn cholesky_l(&self) -> Vec<Vec<f64>> {
        let l = self.chol.l();
        l.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Maximum-likelihood multivariate normal fit; `columns[k]` holds variable `k`.
pub fn fit_gauss_nd(columns: &[&[f64]]) -> Result<GaussND> {
    let n = columns.len();
    if n == 0 {
        return Err(invalid("no columns"));
    }
    let len = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != len) {
        return Err(Error::DimensionMismatch(len, c.len()));
    }
    if len < n + 1 {
        return Err(invalid(format!("need at least {} samples, got {len}", n + 1)));
    }
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        columns[i]
            .iter()
            .zip(columns[j])
            .map(|(a, b)| (a - means[i]) * (b - means[j]))
            .sum::<f64>()
            / len as f64
    });
    GaussND::from_parts(DVector::from_vec(means), cov)
}

/// Closed-form `KL(p1 || p2)` between multivariate normals, in nats.
pub fn kld_gauss_nd(p1: &GaussND, p2: &GaussND) -> Result<f64> {
    let n = p1.dim();
    if p2.dim() != n {
        return Err(Error::DimensionMismatch(n, p2.dim()));
    }
    let trace = p2.chol.solve(&p1.cov).trace();
    let dmu = &p2.mu - &p1.mu;
    let maha = dmu.dot(&p2.chol.solve(&dmu));
    let kl = 0.5 * (p2.ln_det() - p1.ln_det() - n as f64 + trace + maha);
    Ok(kl.max(0.0))
}

/// Candidate distribution families for [`select_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Gaussian,
    Laplace,
    Logistic,
    Uniform,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gaussian, Family::Laplace, Family::Logistic, Family::Uniform];
}

/// A family fitted by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    /// Location (mean, median, logistic centre, or interval start).
    pub location: f64,
    /// Scale (sigma, Laplace b, logistic s, or interval width).
    pub scale: f64,
    pub log_likelihood: f64,
}

/// Outcome of comparing candidate families by total log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub fits: BTreeMap<Family, FamilyFit>,
    pub winner: Family,
}

impl ModelSelection {
    pub fn log_likelihood(&self, family: Family) -> f64 {
        self.fits[&family].log_likelihood
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[m - 1] + sorted[m])
    } else {
        sorted[m]
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn logistic_loglik(x: &[f64], mu: f64, s: f64) -> f64 {
    x.iter()
        .map(|v| {
            let z = (v - mu) / s;
            -z - 2.0 * softplus(-z)
        })
        .sum::<f64>()
        - x.len() as f64 * s.ln()
}

/// Newton ascent on the logistic log-likelihood with step halving.
fn fit_logistic(x: &[f64], mu0: f64, s0: f64) -> FamilyFit {
    let (mut mu, mut s) = (mu0, s0);
    let mut ll = logistic_loglik(x, mu, s);
    for _ in 0..100 {
        let (mut g_mu, mut g_s, mut h_mm, mut h_ms, mut h_ss) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for v in x {
            let z = (v - mu) / s;
            let t = (0.5 * z).tanh();
            let dt = 1.0 - t * t;
            g_mu += t;
            g_s += z * t - 1.0;
            h_mm -= 0.5 * dt;
            h_ms -= t + 0.5 * z * dt;
            h_ss += 1.0 - 2.0 * z * t - 0.5 * z * z * dt;
        }
        let (g_mu, g_s) = (g_mu / s, g_s / s);
        let s2 = s * s;
        let (h_mm, h_ms, h_ss) = (h_mm / s2, h_ms / s2, h_ss / s2);
        let det = h_mm * h_ss - h_ms * h_ms;
        let (mut d_mu, mut d_s) = if h_mm < 0.0 && det > 0.0 {
            (-(h_ss * g_mu - h_ms * g_s) / det, -(h_mm * g_s - h_ms * g_mu) / det)
        } else {
            // Not locally concave: fall back to a scaled gradient step.
            let n = x.len() as f64;
            (g_mu * s2 / n, g_s * s2 / n)
        };
        let mut improved = false;
        for _ in 0..60 {
            let (m1, s1) = (mu + d_mu, s + d_s);
            if s1 > 0.0 {
                let l1 = logistic_loglik(x, m1, s1);
                if l1 >= ll {
                    let done = (l1 - ll).abs() <= 1e-12 * ll.abs().max(1.0);
                    mu = m1;
                    s = s1;
                    ll = l1;
                    improved = !done;
                    break;
                }
            }
            d_mu *= 0.5;
            d_s *= 0.5;
        }
        if !improved {
            break;
        }
    }
    FamilyFit {
        location: mu,
        scale: s,
        log_likelihood: ll,
    }
}

/// Fit every [`Family`] by maximum likelihood and pick the most likely.
pub fn select_model(x: &[f64]) -> Result<ModelSelection> {
    if x.len() < 100 {
        return Err(invalid(format!("need at least 100 samples, got {}", x.len())));
    }
    let n = x.len() as f64;
    let g = fit_gauss1d(x)?;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median_sorted(&sorted);
    let b = x.iter().map(|v| (v - med).abs()).sum::<f64>() / n;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);

    let mut fits = BTreeMap::new();
    fits.insert(
        Family::Gaussian,
        FamilyFit {
            location: g.mu,
            scale: g.sigma,
            log_likelihood: -0.5 * n * ((2.0 * PI * g.sigma * g.sigma).ln() + 1.0),
        },
    );
    fits.insert(
        Family::Laplace,
        FamilyFit {
            location: med,
            scale: b,
            log_likelihood: -n * ((2.0 * b).ln() + 1.0),
        },
    );
    fits.insert(Family::Logistic, fit_logistic(x, med, g.sigma * 3f64.sqrt() / PI));
    fits.insert(
        Family::Uniform,
        FamilyFit {
            location: lo,
            scale: hi - lo,
            log_likelihood: -n * (hi - lo).ln(),
        },
    );
    let winner = fits
        .iter()
        .max_by(|a, b| a.1.log_likelihood.total_cmp(&b.1.log_likelihood))
        .map(|(f, _)| *f)
        .unwrap_or(Family::Gaussian);
    Ok(ModelSelection { fits, winner })
}

/// Probability mass over contiguous bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePdf {
    bin_edges: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscretePdf {
    pub fn new(bin_edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if bin_edges.len() != probs.len() + 1 || probs.is_empty() {
            return Err(Error::DimensionMismatch(bin_edges.len(), probs.len() + 1));
        }
        if !bin_edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("bin edges must be strictly increasing"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(invalid("probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { bin_edges, probs })
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn check_same_support(&self, other: &Self) -> Result<()> {
        if self.bin_edges != other.bin_edges {
            return Err(invalid("distributions use different bin edges"));
        }
        Ok(())
    }
}

/// Normalised histogram over `bins` equal bins of `range`; samples outside
/// the range count toward the edge bins.
pub fn hist_pdf(x: &[f64], bins: usize, range: (f64, f64)) -> Result<DiscretePdf> {
    let (lo, hi) = range;
    if bins < 2 {
        return Err(invalid("need at least two bins"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid(format!("bad histogram range ({lo}, {hi})")));
    }
    if x.is_empty() {
        return Err(invalid("empty sample"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in x {
        let k = ((v - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    let total = x.len() as f64;
    let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    DiscretePdf::new(edges, counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Histograms of `a` and `b` over shared bins spanning the pooled mean
/// plus or minus six pooled standard deviations.
pub fn pooled_histograms(a: &[f64], b: &[f64], bins: usize) -> Result<(DiscretePdf, DiscretePdf)> {
    let n = (a.len() + b.len()) as f64;
    let m = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n;
    let var = a.iter().chain(b).map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let half = if var > 0.0 { 6.0 * var.sqrt() } else { 0.5 };
    let range = (m - half, m + half);
    Ok((hist_pdf(a, bins, range)?, hist_pdf(b, bins, range)?))
}

pub(crate) fn kld_bits(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).log2();
        }
    }
    total.max(0.0)
}

pub(crate) fn jsd_bits(p: &[f64], q: &[f64]) -> f64 {
    let half = |pi: f64, qi: f64| {
        if pi > 0.0 {
            pi * (2.0 * pi / (pi + qi)).log2()
        } else {
            0.0
        }
    };
    let total: f64 = p.iter().zip(q).map(|(&pi, &qi)| half(pi, qi) + half(qi, pi)).sum();
    (0.5 * total).clamp(0.0, 1.0)
}

/// `KL(p || q)` in bits; infinite where `q` misses mass that `p` has.
pub fn kld_discrete(p: &DiscretePdf, q: &DiscretePdf) -> Result<f64> {
    p.check_same_support(q)?;
    Ok(kld_bits(&p.probs, &q.probs))
}

/// Jensen-Shannon divergence in bits against the midpoint mixture.
pub fn jsd_discrete(p: &DiscretePdf, q: &DiscretePdf) -> Result<f64> {
    p.check_same_support(q)?;
    Ok(jsd_bits(&p.probs, &q.probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian_samples;

    fn pdf(probs: &[f64]) -> DiscretePdf {
        let edges = (0..=probs.len()).map(|k| k as f64).collect();
        DiscretePdf::new(edges, probs.to_vec()).unwrap()
    }

    #[test]
    fn two_point_fit() {
        let g = fit_gauss1d(&[-1.0, 1.0]).unwrap();
        assert_eq!((g.mu, g.sigma), (0.0, 1.0));
    }

    #[test]
    fn constant_is_degenerate() {
        assert!(matches!(fit_gauss1d(&[3.0; 5]), Err(Error::DegenerateDensity)));
    }

    #[test]
    fn identical_columns_are_singular() {
        let x = gaussian_samples(1000, 1.0, 1);
        assert!(matches!(fit_gauss_nd(&[&x, &x]), Err(Error::DegenerateCovariance)));
    }

    #[test]
    fn correlated_columns() {
        let x = gaussian_samples(10_000, 1.0, 2);
        let e = gaussian_samples(10_000, 0.05, 3);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 2.0 * a + b).collect();
        let g = fit_gauss_nd(&[&x, &y]).unwrap();
        let c = g.sigma_mat();
        let r = c[0][1] / (c[0][0] * c[1][1]).sqrt();
        assert!(c[0][1] > 0.0 && r > 0.99);
    }

    #[test]
    fn kl_worked_values() {
        let a = GaussND::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = GaussND::new(vec![1.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((kld_gauss_nd(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(kld_gauss_nd(&a, &a).unwrap(), 0.0);
        let n1 = GaussND::new(vec![0.0], vec![vec![1.0]]).unwrap();
        let n4 = GaussND::new(vec![0.0], vec![vec![4.0]]).unwrap();
        let fwd = kld_gauss_nd(&n1, &n4).unwrap();
        let rev = kld_gauss_nd(&n4, &n1).unwrap();
        assert!((fwd - (2f64.ln() + 0.125 - 0.5)).abs() < 1e-12);
        assert!((rev - (-(2f64.ln()) + 1.5)).abs() < 1e-12);
        let c = GaussND::new(vec![0.0; 3], vec![vec![1.0, 0.0, 0.0]; 3]);
        assert!(c.is_err());
        assert!(matches!(kld_gauss_nd(&a, &n1), Err(Error::DimensionMismatch(2, 1))));
    }

    #[test]
    fn gauss_nd_serde_round_trip() {
        let g = GaussND::new(vec![1.0, -2.0], vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("sigma_mat"));
        let back: GaussND = serde_json::from_str(&text).unwrap();
        assert_eq!(back.sigma_mat(), g.sigma_mat());
        assert!(serde_json::from_str::<GaussND>(r#"{"mu":[0],"sigma_mat":[[-1]]}"#).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = hist_pdf(&[0.1, 0.9], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.probs(), &[0.5, 0.5]);
        let h = hist_pdf(&[0.2, 0.21, 0.22, -5.0], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.probs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn histogram_matches_normal_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let x = gaussian_samples(200_000, 1.0, 4);
        let h = hist_pdf(&x, 64, (-5.0, 5.0)).unwrap();
        let nd = Normal::standard();
        for (k, p) in h.probs().iter().enumerate() {
            let (a, b) = (h.bin_edges()[k], h.bin_edges()[k + 1]);
            let mut want = nd.cdf(b) - nd.cdf(a);
            if k == 0 {
                want += nd.cdf(a);
            }
            if k == 63 {
                want += 1.0 - nd.cdf(b);
            }
            assert!((p - want).abs() < 0.01);
        }
    }

    #[test]
    fn discrete_divergences() {
        let p = pdf(&[1.0, 0.0]);
        let q = pdf(&[0.5, 0.5]);
        assert_eq!(kld_discrete(&p, &q).unwrap(), 1.0);
        assert_eq!(kld_discrete(&q, &p).unwrap(), f64::INFINITY);
        assert_eq!(kld_discrete(&q, &q).unwrap(), 0.0);
        assert_eq!(jsd_discrete(&q, &q).unwrap(), 0.0);
        assert_eq!(jsd_discrete(&pdf(&[1.0, 0.0]), &pdf(&[0.0, 1.0])).unwrap(), 1.0);
        let other = DiscretePdf::new(vec![0.0, 1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert!(kld_discrete(&q, &other).is_err());
    }

    #[test]
    fn pdf_validation() {
        assert!(DiscretePdf::new(vec![0.0, 1.0, 2.0], vec![0.6, 0.6]).is_err());
        assert!(DiscretePdf::new(vec![0.0, 1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscretePdf::new(vec![0.0, 1.0, 2.0], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn select_model_needs_samples() {
        assert!(select_model(&[1.0; 10]).is_err());
    }

    #[test]
    fn logistic_fit_converges() {
        use rand::RngExt;
        let mut rng = crate::synth::rng(5);
        let x: Vec<f64> = (0..20_000)
            .map(|_| {
                let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                3.0 + 0.5 * (u / (1.0 - u)).ln()
            })
            .collect();
        let sel = select_model(&x).unwrap();
        let f = sel.fits[&Family::Logistic];
        assert!((f.location - 3.0).abs() < 0.02 && (f.scale - 0.5).abs() < 0.02, "{f:?}");
        assert_eq!(sel.winner, Family::Logistic);
    }
}
