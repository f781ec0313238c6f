//! Signal-quality checks: autocorrelation, rescaled-range Hurst exponent,
//! maximal Lyapunov exponent and shuffle surrogates, plus plain summary
//! statistics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Signal;
use crate::synth;

/// Normalised autocorrelation for lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrSeries {
    pub lags: Vec<usize>,
    pub coefficients: Vec<f64>,
}

impl AutocorrSeries {
    pub fn at(&self, lag: usize) -> Option<f64> {
        self.coefficients.get(lag).copied()
    }
}

/// Biased estimator `r(k) = sum (x_t - m)(x_{t+k} - m) / sum (x_t - m)^2`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<AutocorrSeries> {
    if max_lag == 0 || max_lag >= x.len() {
        return Err(invalid(format!("max lag must be in 1..{}, got {max_lag}", x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let coefficients = (0..=max_lag)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                let num: f64 = d.iter().zip(&d[k..]).map(|(a, b)| a * b).sum();
                (num / denom).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok(AutocorrSeries {
        lags: (0..=max_lag).collect(),
        coefficients,
    })
}

/// Lag-one autocorrelation.
pub fn lag1(x: &[f64]) -> Result<f64> {
    Ok(autocorrelation(x, 1)?.coefficients[1])
}

/// Least-squares line `y = intercept + slope * x`, with R^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub(crate) fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).min(1.0)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

/// Result of rescaled-range analysis: `E[R/S](n) ~ C n^H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstFit {
    pub hurst: f64,
    pub c: f64,
    /// `(scale, mean R/S)` pairs, increasing in scale.
    pub per_scale: Vec<(usize, f64)>,
    pub r_squared: f64,
}

/// Scale grid for [`hurst_rs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstScales {
    pub min_scale: usize,
    pub max_scale: usize,
    pub scales_per_decade: usize,
}

impl HurstScales {
    /// 16 up to a quarter of the series, eight scales per decade.
    pub fn for_len(len: usize) -> Self {
        Self {
            min_scale: 16,
            max_scale: len / 4,
            scales_per_decade: 8,
        }
    }

    /// Distinct integer scales spaced evenly in log10.
    pub fn grid(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let step = 1.0 / self.scales_per_decade as f64;
        let mut k = 0;
        loop {
            let s = (self.min_scale as f64 * 10f64.powf(k as f64 * step)).round() as usize;
            if s > self.max_scale {
                break;
            }
            if out.last() != Some(&s) {
                out.push(s);
            }
            k += 1;
        }
        out
    }
}

/// Rescaled range of one block: range of cumulative deviations from the
/// block mean over their population standard deviation. `None` for a flat
/// block.
fn rescaled_range(block: &[f64]) -> Option<f64> {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    let (mut cum, mut lo, mut hi, mut ss) = (0.0, 0.0f64, 0.0f64, 0.0);
    for v in block {
        let d = v - mean;
        cum += d;
        lo = lo.min(cum);
        hi = hi.max(cum);
        ss += d * d;
    }
    let s = (ss / n).sqrt();
    (s > 0.0).then(|| (hi - lo) / s)
}

/// Classical block-averaged R/S estimate of the Hurst exponent.
///
/// For each scale `n` the series is cut into `len / n` disjoint blocks and
/// the block R/S values are averaged; `H` and `ln C` are the slope and
/// intercept of `ln(mean R/S)` against `ln n`.
pub fn hurst_rs(x: &[f64], scales: &HurstScales) -> Result<HurstFit> {
    if scales.min_scale < 8 {
        return Err(invalid(format!("min scale must be >= 8, got {}", scales.min_scale)));
    }
    if scales.max_scale > x.len() / 2 {
        return Err(invalid(format!(
            "max scale {} exceeds half the series length {}",
            scales.max_scale,
            x.len()
        )));
    }
    if scales.scales_per_decade == 0 {
        return Err(invalid("scales per decade must be positive"));
    }
    let per_scale: Vec<(usize, f64)> = scales
        .grid()
        .into_iter()
        .filter_map(|n| {
            let (sum, count) = x
                .chunks_exact(n)
                .filter_map(rescaled_range)
                .fold((0.0, 0usize), |(s, c), rs| (s + rs, c + 1));
            (count > 0 && sum > 0.0).then(|| (n, sum / count as f64))
        })
        .collect();
    if per_scale.len() < 3 {
        return Err(Error::InsufficientScales { found: per_scale.len() });
    }
    let lx: Vec<f64> = per_scale.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ly: Vec<f64> = per_scale.iter().map(|(_, rs)| rs.ln()).collect();
    let fit = fit_line(&lx, &ly);
    Ok(HurstFit {
        hurst: fit.slope,
        c: fit.intercept.exp(),
        per_scale,
        r_squared: fit.r_squared,
    })
}

/// [`hurst_rs`] with the default scale grid for the series length.
pub fn hurst_default(x: &[f64]) -> Result<HurstFit> {
    hurst_rs(x, &HurstScales::for_len(x.len()))
}

/// Uniformly random permutation of the samples, fixed by `seed`.
pub fn shuffle_surrogate(signal: &Signal, seed: u64) -> Result<Signal> {
    let mut v = signal.samples().to_vec();
    v.shuffle(&mut synth::rng(seed));
    signal.with_samples(v)
}

/// Delay-embedding and fit settings for [`lyapunov_max`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub embed_dim: usize,
    pub delay: usize,
    /// Neighbours closer than this many samples in time are ignored.
    pub theiler: usize,
    /// Number of divergence steps tracked (`0..horizon`).
    pub horizon: usize,
    /// Half-open range of steps the slope is fitted over.
    pub fit_range: (usize, usize),
}

impl LyapunovParams {
    /// Embedding dimension 6, delay at the first lag where the
    /// autocorrelation drops below `1 - 1/e`, Theiler window `delay * dim`,
    /// 200 tracked steps and a fit over the first tenth of them.
    pub fn auto(x: &[f64]) -> Result<Self> {
        let embed_dim = 6;
        let delay = decorrelation_lag(x)?;
        let horizon = 200;
        Ok(Self {
            embed_dim,
            delay,
            theiler: delay * embed_dim,
            horizon,
            fit_range: (0, horizon / 10),
        })
    }
}

/// First lag whose autocorrelation falls below `1 - 1/e` (at least 1).
pub fn decorrelation_lag(x: &[f64]) -> Result<usize> {
    let target = 1.0 - (-1.0f64).exp();
    let max_lag = (x.len() / 10).clamp(1, 1000).min(x.len() - 1);
    let ac = autocorrelation(x, max_lag)?;
    Ok(ac
        .coefficients
        .iter()
        .position(|r| *r < target)
        .unwrap_or(max_lag)
        .max(1))
}

/// Maximal Lyapunov exponent estimate and the curve it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Per sample.
    pub lambda: f64,
    /// `(step, mean ln distance)`.
    pub divergence_curve: Vec<(usize, f64)>,
    pub fit_range: (usize, usize),
}

const MIN_EMBEDDED: usize = 100;

/// Rosenstein nearest-neighbour divergence estimate.
///
/// The series is delay-embedded; each point is paired with its nearest
/// neighbour outside the Theiler window, the mean log separation of the pairs
/// is tracked forward in time, and the exponent is the least-squares slope of
/// that curve over `fit_range`.
pub fn lyapunov_max(x: &[f64], params: &LyapunovParams) -> Result<LyapunovEstimate> {
    let LyapunovParams {
        embed_dim: m,
        delay,
        theiler,
        horizon,
        fit_range,
    } = *params;
    if m == 0 || delay == 0 {
        return Err(invalid("embedding dimension and delay must be >= 1"));
    }
    if fit_range.1 > horizon || fit_range.1 < fit_range.0 + 2 {
        return Err(invalid(format!(
            "fit range {fit_range:?} must hold at least two steps within 0..{horizon}"
        )));
    }
    let span = (m - 1) * delay;
    let embedded = x.len().saturating_sub(span);
    if embedded < MIN_EMBEDDED || embedded <= horizon {
        return Err(Error::SeriesTooShort {
            embedded,
            required: MIN_EMBEDDED.max(horizon + 1),
        });
    }

    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    // Separations at or below this are treated as exact repeats.
    let floor_sq = (1e-9 * sd).powi(2) * m as f64;

    let dist_sq = |i: usize, j: usize| -> f64 {
        (0..m)
            .map(|k| {
                let d = x[i + k * delay] - x[j + k * delay];
                d * d
            })
            .sum()
    };

    // Sort points by first coordinate; the search around each point stops as
    // soon as that coordinate alone is farther than the best match.
    let mut order: Vec<usize> = (0..embedded).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; embedded];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let neighbours: Vec<Option<usize>> = (0..embedded)
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            let mut best_j = None;
            let r = rank[i];
            let (mut up, mut down) = (r + 1, r);
            loop {
                let up_j = order.get(up).copied().filter(|&j| (x[j] - x[i]).powi(2) <= best);
                let down_j = (down > 0)
                    .then(|| order[down - 1])
                    .filter(|&j| (x[j] - x[i]).powi(2) <= best);
                if up_j.is_none() && down_j.is_none() {
                    break;
                }
                for j in up_j.into_iter().chain(down_j) {
                    if i.abs_diff(j) <= theiler {
                        continue;
                    }
                    let d = dist_sq(i, j);
                    if d > floor_sq && (d < best || (d == best && Some(j) < best_j)) {
                        best = d;
                        best_j = Some(j);
                    }
                }
                up += usize::from(up_j.is_some());
                down -= usize::from(down_j.is_some());
            }
            best_j
        })
        .collect();

    let mut divergence_curve = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (sum, count) = neighbours
            .iter()
            .enumerate()
            .filter_map(|(i, j)| {
                let j = (*j)?;
                (i + t < embedded && j + t < embedded).then(|| dist_sq(i + t, j + t))
            })
            .filter(|d| *d > floor_sq)
            .fold((0.0, 0usize), |(s, c), d| (s + 0.5 * d.ln(), c + 1));
        if count == 0 {
            return Err(Error::SeriesTooShort {
                embedded,
                required: MIN_EMBEDDED,
            });
        }
        divergence_curve.push((t, sum / count as f64));
    }

    let (a, b) = fit_range;
    let ts: Vec<f64> = (a..b).map(|t| t as f64).collect();
    let ys: Vec<f64> = divergence_curve[a..b].iter().map(|(_, y)| *y).collect();
    Ok(LyapunovEstimate {
        lambda: fit_line(&ts, &ys).slope,
        divergence_curve,
        fit_range,
    })
}

/// Mean, extremes, median and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicFeatures {
    pub mean: f64,
    pub maximum: f64,
    pub minimum: f64,
    pub median: f64,
    pub stdev: f64,
}

pub fn basic_features(x: &[f64]) -> Result<BasicFeatures> {
    if x.is_empty() {
        return Err(invalid("empty series"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let stdev = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let (minimum, maximum) = (sorted[0], sorted[sorted.len() - 1]);
    if minimum == maximum {
        return Ok(BasicFeatures {
            mean: minimum,
            maximum,
            minimum,
            median,
            stdev: 0.0,
        });
    }
    Ok(BasicFeatures {
        mean: mean.clamp(minimum, maximum),
        maximum,
        minimum,
        median,
        stdev,
    })
}

/// Memory, autocorrelation and divergence measures of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowValidation {
    pub start_s: f64,
    pub hurst: f64,
    pub lyapunov: f64,
    pub lag1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub windows: Vec<WindowValidation>,
    pub mean_hurst: f64,
    pub mean_lyapunov: f64,
    pub mean_lag1: f64,
    pub warnings: Vec<String>,
}

/// Hurst exponents this close to 1 suggest a non-stationary series.
pub const HURST_WARNING: f64 = 0.95;

pub fn validate_window(x: &[f64]) -> Result<(f64, f64, f64)> {
    let hurst = hurst_default(x)?.hurst;
    let lyapunov = lyapunov_max(x, &LyapunovParams::auto(x)?)?.lambda;
    Ok((hurst, lyapunov, lag1(x)?))
}

/// Validates non-overlapping windows of `signal`. With `max_windows`, only
/// that many evenly spaced windows are analysed.
pub fn validate_signal(signal: &Signal, window_seconds: f64, max_windows: Option<usize>) -> Result<ValidationSummary> {
    let all = crate::model::window(signal, window_seconds, 0.0)?;
    let picked: Vec<usize> = match max_windows {
        Some(0) => return Err(invalid("need at least one window")),
        Some(k) if k < all.len() => {
            if k == 1 {
                vec![all.len() / 2]
            } else {
                (0..k).map(|i| (i * (all.len() - 1) + (k - 1) / 2) / (k - 1)).collect()
            }
        }
        _ => (0..all.len()).collect(),
    };
    let step = crate::model::window_len(signal.fs(), window_seconds)?;
    let windows = picked
        .iter()
        .map(|&i| {
            let (hurst, lyapunov, lag1) = validate_window(all[i].samples())?;
            Ok(WindowValidation {
                start_s: (i * step) as f64 / signal.fs(),
                hurst,
                lyapunov,
                lag1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&WindowValidation) -> f64| windows.iter().map(f).sum::<f64>() / windows.len() as f64;
    let mean_hurst = mean(|w| w.hurst);
    let mut warnings = Vec::new();
    if mean_hurst > HURST_WARNING {
        warnings.push(format!(
            "{}: mean Hurst exponent {mean_hurst:.3} exceeds {HURST_WARNING}; the series may be non-stationary",
            signal.channel_id()
        ));
    }
    Ok(ValidationSummary {
        mean_hurst,
        mean_lyapunov: mean(|w| w.lyapunov),
        mean_lag1: mean(|w| w.lag1),
        windows,
        warnings,
    })
}
