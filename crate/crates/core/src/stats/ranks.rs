use statrs::distribution::ContinuousCDF;

use super::{std_normal, Alternative, TestResult};
use crate::error::{invalid, Error, Result};

/// Largest group size for which Mann-Whitney p-values are exact.
const MWU_EXACT_MAX: usize = 20;
/// Largest count of non-zero differences for which Wilcoxon is exact.
const WILCOXON_EXACT_MAX: usize = 25;

/// Midranks (1-based) of `x` and the tie sizes encountered.
fn midranks(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = 0.5 * (start + end + 1) as f64;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Null distribution of the sum of `k` values drawn without replacement
/// from `halves` (doubled ranks, so integral), as counts per sum.
fn subset_sum_counts(halves: &[usize], k: usize) -> Vec<Vec<f64>> {
    let total: usize = halves.iter().sum();
    // counts[j][s]: number of j-subsets of the items seen so far with sum s.
    let mut counts = vec![vec![0.0; total + 1]; k + 1];
    counts[0][0] = 1.0;
    for &h in halves {
        for j in (1..=k).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (h..=total).rev() {
                cur[s] += prev[s - h];
            }
        }
    }
    counts
}

fn tails(dist: &[f64], observed: usize) -> (f64, f64) {
    let total: f64 = dist.iter().sum();
    let lower: f64 = dist[..=observed].iter().sum();
    let upper: f64 = dist[observed..].iter().sum();
    (lower / total, upper / total)
}

/// Mann-Whitney U test; the statistic is U for `a`.
///
/// Exact (tie-aware, by enumeration over midranks) when both groups have at
/// most 20 values, otherwise a tie-corrected normal approximation with
/// continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    mwu(a, b, alt, a.len().max(b.len()) <= MWU_EXACT_MAX)
}

fn mwu(a: &[f64], b: &[f64], alt: Alternative, exact: bool) -> Result<TestResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(invalid("Mann-Whitney needs at least three values per group"));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..na].iter().sum();
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = rank_sum - offset;

    let p = if exact {
        let halves: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = subset_sum_counts(&halves, na);
        alt_tails(alt, tails(&counts[na], (2.0 * rank_sum).round() as usize))
    } else {
        let n = (na + nb) as f64;
        let mu = (na * nb) as f64 / 2.0;
        let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term(&ties) / (n * (n - 1.0)));
        normal_p(u, mu, var, alt)
    };
    Ok(TestResult::new("mann-whitney u", u, p, alt.sided()))
}

fn alt_tails(alt: Alternative, (lower, upper): (f64, f64)) -> f64 {
    alt.p_from_tails(lower, upper)
}

fn normal_p(stat: f64, mu: f64, var: f64, alt: Alternative) -> f64 {
    if !(var > 0.0) {
        return 1.0;
    }
    let sd = var.sqrt();
    let nd = std_normal();
    let lower = nd.cdf((stat - mu + 0.5) / sd);
    let upper = nd.sf((stat - mu - 0.5) / sd);
    alt.p_from_tails(lower, upper)
}

/// Wilcoxon signed-rank test on the paired differences `a - b`; the
/// statistic is the rank sum of positive differences.
///
/// Zero differences are dropped. Exact (by enumeration over midranks) for
/// up to 25 remaining pairs, otherwise a tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_signed(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(invalid("all paired differences are zero"));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let n = d.len();

    let p = if n <= WILCOXON_EXACT_MAX {
        let halves: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        // Every subset size is possible, so sum the counts over sizes.
        let counts = subset_sum_counts(&halves, n);
        let mut dist = vec![0.0; counts[0].len()];
        for row in &counts {
            for (acc, c) in dist.iter_mut().zip(row) {
                *acc += c;
            }
        }
        alt_tails(alt, tails(&dist, (2.0 * w_plus).round() as usize))
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        normal_p(w_plus, mu, var, alt)
    };
    Ok(TestResult::new("wilcoxon signed-rank", w_plus, p, alt.sided()))
}
