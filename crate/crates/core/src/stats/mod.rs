//! Hypothesis tests used to compare groups of scores and signal features.

mod anova;
mod ranks;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::synth;

pub use anova::{anova_oneway, anova_tukey, studentized_range_cdf, AnovaTukey, TukeyPair};
pub use ranks::{mann_whitney_u, wilcoxon_signed};

/// Whether a p-value counts one tail or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sided {
    One,
    Two,
}

/// Alternative hypothesis about the first sample relative to the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First sample tends to be smaller.
    Less,
    /// First sample tends to be larger.
    Greater,
}

impl Alternative {
    pub fn sided(self) -> Sided {
        match self {
            Alternative::TwoSided => Sided::Two,
            _ => Sided::One,
        }
    }

    /// p-value from the lower-tail and upper-tail probabilities of the
    /// observed statistic.
    pub(crate) fn p_from_tails(self, lower: f64, upper: f64) -> f64 {
        let p = match self {
            Alternative::TwoSided => 2.0 * lower.min(upper),
            Alternative::Less => lower,
            Alternative::Greater => upper,
        };
        p.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub test_name: String,
    pub sided: Sided,
}

impl TestResult {
    pub(crate) fn new(test_name: &str, statistic: f64, p_value: f64, sided: Sided) -> Self {
        Self {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            test_name: test_name.to_string(),
            sided,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub(crate) fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

/// Which flavour of t-test to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TKind {
    /// Differences of equal-length samples.
    Paired,
    /// Unpaired with pooled variance.
    Student,
    /// Unpaired with Welch-Satterthwaite degrees of freedom.
    Welch,
}

/// Two-sample or paired t-test of `a` against `b`.
pub fn t_test(a: &[f64], b: &[f64], kind: TKind, alt: Alternative) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("t-test needs at least two values per group"));
    }
    let (t, df, name) = match kind {
        TKind::Paired => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch(a.len(), b.len()));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let v = sample_var(&d);
            if !(v > 0.0) {
                return Err(Error::ZeroVariance);
            }
            let n = d.len() as f64;
            (mean(&d) / (v / n).sqrt(), n - 1.0, "paired t")
        }
        TKind::Student => {
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let pooled = ((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0);
            if !(pooled > 0.0) {
                return Err(Error::ZeroVariance);
            }
            let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
            ((mean(a) - mean(b)) / se, na + nb - 2.0, "student t")
        }
        TKind::Welch => {
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let (qa, qb) = (sample_var(a) / na, sample_var(b) / nb);
            if !(qa + qb > 0.0) {
                return Err(Error::ZeroVariance);
            }
            let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((mean(a) - mean(b)) / (qa + qb).sqrt(), df, "welch t")
        }
    };
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(e.to_string()))?;
    let p = alt.p_from_tails(dist.cdf(t), dist.sf(t));
    Ok(TestResult::new(name, t, p, alt.sided()))
}

const LILLIEFORS_REPLICATES: usize = 4000;
const LILLIEFORS_MAX_N: usize = 200;

/// Stephens' size adjustment, which makes the null distribution of the
/// statistic nearly independent of the sample size.
fn stephens(d: f64, n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    d * (rn - 0.01 + 0.85 / rn)
}

fn ks_statistic(sorted_z: &[f64]) -> f64 {
    let nd = std_normal();
    let n = sorted_z.len() as f64;
    sorted_z
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = nd.cdf(z);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn standardized_sorted(x: &[f64]) -> Result<Vec<f64>> {
    let m = mean(x);
    let s = sample_var(x).sqrt();
    if !(s > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut z: Vec<f64> = x.iter().map(|v| (v - m) / s).collect();
    z.sort_by(f64::total_cmp);
    Ok(z)
}

/// Sorted, size-adjusted statistics simulated under normality, cached per
/// reference size.
fn lilliefors_null(n_ref: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&n_ref) {
        return Arc::clone(v);
    }
    let mut rng = synth::rng(synth::derive_seed(0x4c49_4c4c, n_ref as u64));
    let mut sims: Vec<f64> = (0..LILLIEFORS_REPLICATES)
        .map(|_| {
            let x: Vec<f64> = (0..n_ref).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = standardized_sorted(&x).expect("continuous draws are not constant");
            stephens(ks_statistic(&z), n_ref)
        })
        .collect();
    sims.sort_by(f64::total_cmp);
    let sims = Arc::new(sims);
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(n_ref, Arc::clone(&sims));
    sims
}

/// Kolmogorov-Smirnov test of normality with mean and standard deviation
/// estimated from the sample.
///
/// Because the parameters are estimated, the p-value comes from a seeded
/// Monte-Carlo null (Lilliefors) rather than the textbook KS table, which
/// would be far too lenient. Null samples are drawn at the sample size up
/// to 200 and transferred to larger sizes via Stephens' adjustment. The
/// smallest reportable p-value is `1 / 4001`.
pub fn ks_normality(x: &[f64]) -> Result<TestResult> {
    if x.len() < 5 {
        return Err(invalid("normality test needs at least five values"));
    }
    let d = ks_statistic(&standardized_sorted(x)?);
    let n_ref = x.len().min(LILLIEFORS_MAX_N);
    let null = lilliefors_null(n_ref);
    let observed = stephens(d, x.len());
    let exceed = null.len() - null.partition_point(|&s| s < observed);
    let p = (exceed as f64 + 1.0) / (null.len() as f64 + 1.0);
    Ok(TestResult::new("ks normality (lilliefors)", d, p, Sided::Two))
}
