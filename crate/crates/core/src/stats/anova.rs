use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::gamma::ln_gamma;

use super::{mean, std_normal, Sided, TestResult};
use crate::error::{invalid, Error, Result};

/// One post-hoc comparison between groups `i` and `j` (indices into the
/// input, `i < j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub i: usize,
    pub j: usize,
    /// Mean of group `i` minus mean of group `j`.
    pub mean_diff: f64,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTukey {
    pub omnibus: TestResult,
    pub pairwise: Vec<TukeyPair>,
}

struct Summary {
    means: Vec<f64>,
    sizes: Vec<usize>,
    ms_within: f64,
    df_within: f64,
}

fn summarize(groups: &[Vec<f64>]) -> Result<(Summary, TestResult)> {
    if groups.len() < 2 {
        return Err(invalid("ANOVA needs at least two groups"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(invalid("every ANOVA group needs at least two values"));
    }
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let grand = groups.iter().flatten().sum::<f64>() / total as f64;
    let ss_between: f64 = means
        .iter()
        .zip(&sizes)
        .map(|(m, &n)| n as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df_between = (groups.len() - 1) as f64;
    let df_within = (total - groups.len()) as f64;
    if !(ss_within > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let ms_within = ss_within / df_within;
    let f = ss_between / df_between / ms_within;
    let dist = FisherSnedecor::new(df_between, df_within).map_err(|e| invalid(e.to_string()))?;
    let omnibus = TestResult::new("one-way anova", f, dist.sf(f), Sided::Two);
    Ok((
        Summary {
            means,
            sizes,
            ms_within,
            df_within,
        },
        omnibus,
    ))
}

/// One-way ANOVA omnibus F test.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult> {
    summarize(groups).map(|(_, omnibus)| omnibus)
}

/// One-way ANOVA followed by Tukey-Kramer comparisons of every pair.
pub fn anova_tukey(groups: &[Vec<f64>]) -> Result<AnovaTukey> {
    let (s, omnibus) = summarize(groups)?;
    let k = groups.len();
    let mut pairwise = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let diff = s.means[i] - s.means[j];
            let se = (0.5 * s.ms_within * (1.0 / s.sizes[i] as f64 + 1.0 / s.sizes[j] as f64)).sqrt();
            let q = diff.abs() / se;
            let p = 1.0 - studentized_range_cdf(q, k, s.df_within);
            pairwise.push(TukeyPair {
                i,
                j,
                mean_diff: diff,
                result: TestResult::new("tukey hsd", q, p, Sided::Two),
            });
        }
    }
    Ok(AnovaTukey { omnibus, pairwise })
}

const GL_POINTS: usize = 16;

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64); GL_POINTS] {
    static RULE: OnceLock<[(f64, f64); GL_POINTS]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = [(0.0, 0.0); GL_POINTS];
        for (i, slot) in rule.iter_mut().enumerate() {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

/// Composite Gauss-Legendre quadrature over `panels` equal panels.
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let rule = gauss_legendre();
    (0..panels)
        .map(|p| {
            let mid = lo + (p as f64 + 0.5) * h;
            rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// CDF of the range of `k` independent standard normals.
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let nd = std_normal();
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let inner = integrate(
        |z| phi(z) * (nd.cdf(z) - nd.cdf(z - w)).max(0.0).powi(k as i32 - 1),
        -8.5,
        8.5 + w.min(8.5),
        24,
    );
    (k as f64 * inner).clamp(0.0, 1.0)
}

/// CDF of the studentized range for `k` means and `df` error degrees of
/// freedom, by numerical integration over the chi-distributed scale.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 || k < 2 {
        return 0.0;
    }
    if !df.is_finite() || df > 1e5 {
        return normal_range_cdf(q, k);
    }
    // Density of s = chi_df / sqrt(df).
    let half = 0.5 * df;
    let ln_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * 2f64.ln();
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (ln_norm + (df - 1.0) * s.ln() - half * s * s).exp()
        }
    };
    let spread = (0.5 / df).sqrt();
    let lo = (1.0 - 12.0 * spread).max(0.0);
    let hi = 1.0 + 12.0 * spread.max(0.25);
    integrate(|s| density(s) * normal_range_cdf(q * s, k), lo, hi, 24).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{t_test, Alternative, TKind};
    use crate::synth::gaussian_samples;
    use statrs::distribution::StudentsT;

    #[test]
    fn two_means_reduce_to_t() {
        // The range of two means over its standard error is sqrt(2)|t|.
        for (q, df) in [(1.0, 5.0), (3.0, 10.0), (4.5, 30.0)] {
            let t = StudentsT::new(0.0, 1.0, df).unwrap();
            let want = 1.0 - 2.0 * t.sf(q / 2f64.sqrt());
            let got = studentized_range_cdf(q, 2, df);
            assert!((got - want).abs() < 1e-7, "q={q} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn table_critical_values() {
        // Upper 5% points of the studentized range.
        for (q, k, df) in [
            (3.877, 3, 10.0),
            (3.314, 3, f64::INFINITY),
            (4.232, 5, 20.0),
            (4.076, 4, 15.0),
        ] {
            let p = studentized_range_cdf(q, k, df);
            assert!((p - 0.95).abs() < 1e-3, "k={k} df={df}: {p}");
        }
    }

    #[test]
    fn identical_groups() {
        let g = vec![1.0, 2.0, 3.0, 4.0];
        let r = anova_tukey(&[g.clone(), g.clone(), g]).unwrap();
        assert!(r.omnibus.statistic.abs() < 1e-12 && r.omnibus.p_value > 0.999);
        assert!(anova_oneway(&[vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn shifted_group_is_flagged() {
        let a = gaussian_samples(30, 1.0, 1);
        let b = gaussian_samples(30, 1.0, 2);
        let c: Vec<f64> = gaussian_samples(30, 1.0, 3).iter().map(|v| v + 3.0).collect();
        let r = anova_tukey(&[a, b, c]).unwrap();
        assert!(r.omnibus.p_value < 0.001);
        let flagged: Vec<(usize, usize)> = r
            .pairwise
            .iter()
            .filter(|p| p.result.p_value < 0.05)
            .map(|p| (p.i, p.j))
            .collect();
        assert_eq!(flagged, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn f_is_t_squared() {
        let a = gaussian_samples(12, 1.0, 8);
        let b: Vec<f64> = gaussian_samples(17, 1.3, 9).iter().map(|v| v + 0.4).collect();
        let t = t_test(&a, &b, TKind::Student, Alternative::TwoSided).unwrap();
        let f = anova_oneway(&[a, b]).unwrap();
        assert!((f.statistic - t.statistic.powi(2)).abs() < 1e-9);
        assert!((f.p_value - t.p_value).abs() < 1e-9);
    }
}
