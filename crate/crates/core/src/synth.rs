//! Seeded synthetic signals and sessions.
//!
//! All randomness comes from PCG-XSH-RR 64/32 (`rand_pcg::Pcg32`: 64-bit LCG
//! state, 32-bit permuted output), seeded through SplitMix64 so that nearby
//! integer seeds give unrelated streams. Gaussian draws use `rand_distr`'s
//! ziggurat sampler. Both are fixed algorithms, so every generator here is
//! reproducible bit for bit from its seed.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{PhaseLabel, SessionRecord, Signal, TreatmentLabel, DEFAULT_FS};

/// SplitMix64 finaliser applied to `seed + tag * golden`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator every seeded routine in the crate uses.
pub fn rng(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(derive_seed(seed, 0))
}

pub fn gaussian_samples(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// I.i.d. Gaussian samples at the default rate.
pub fn gen_white(n: usize, sigma: f64, seed: u64) -> Result<Signal> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Signal::new(gaussian_samples(n, sigma, seed), DEFAULT_FS, "white")
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

struct Embedding {
    /// Per-frequency amplitudes `sqrt(eigenvalue / m)`.
    amplitudes: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

type EmbeddingCache = Mutex<Vec<((usize, u64), Arc<Embedding>)>>;

/// Circulant embedding for `(n, hurst)`. Cohorts reuse a handful of sizes,
/// so a few recent embeddings are cached.
fn embedding(n: usize, hurst: f64) -> Arc<Embedding> {
    static CACHE: OnceLock<EmbeddingCache> = OnceLock::new();
    let key = (n, hurst.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some((_, e)) = cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .iter()
        .find(|(k, _)| *k == key)
    {
        return Arc::clone(e);
    }
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|j| Complex64::new(fgn_autocovariance(j.min(m - j), hurst), 0.0))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut row);
    let lambda_max = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let amplitudes = row
        .iter()
        .map(|c| {
            // Non-negative for every H in (0, 1); allow rounding noise only.
            assert!(
                c.re > -1e-9 * lambda_max,
                "circulant embedding not positive semi-definite"
            );
            (c.re.max(0.0) / m as f64).sqrt()
        })
        .collect();
    let e = Arc::new(Embedding { amplitudes, fft });
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if guard.len() >= 4 {
        guard.remove(0);
    }
    guard.push((key, Arc::clone(&e)));
    e
}

/// Two independent unit-variance fractional Gaussian noise series of length
/// `n` (a power of two), from the real and imaginary parts of one circulant
/// embedding draw.
pub fn fgn_pair(n: usize, hurst: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(invalid(format!("Hurst exponent must be in (0, 1), got {hurst}")));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(invalid(format!("fGn length must be a power of two >= 2, got {n}")));
    }
    let e = embedding(n, hurst);
    let mut rng = rng(seed);
    let mut w: Vec<Complex64> = e
        .amplitudes
        .iter()
        .map(|amp| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * amp
        })
        .collect();
    e.fft.process(&mut w);
    Ok(w[..n].iter().map(|c| (c.re, c.im)).unzip())
}

/// Exact unit-variance fractional Gaussian noise of length `n` (a power of
/// two) by circulant embedding of the autocovariance.
pub fn fgn_samples(n: usize, hurst: f64, seed: u64) -> Result<Vec<f64>> {
    fgn_pair(n, hurst, seed).map(|(re, _)| re)
}

pub fn gen_fgn(n: usize, hurst: f64, seed: u64) -> Result<Signal> {
    Signal::new(fgn_samples(n, hurst, seed)?, DEFAULT_FS, "fgn")
}

/// Iterates of `x -> r x (1 - x)` after discarding 1000 transient steps.
pub fn gen_logistic(n: usize, r: f64, x0: f64) -> Result<Signal> {
    if !(r > 0.0 && r <= 4.0) {
        return Err(invalid(format!("logistic parameter must be in (0, 4], got {r}")));
    }
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(invalid(format!("x0 must be in (0, 1), got {x0}")));
    }
    if n < 100 {
        return Err(invalid(format!("need at least 100 iterates, got {n}")));
    }
    let mut x = x0;
    let mut out = Vec::with_capacity(n);
    for i in 0..1000 + n {
        x = r * x * (1.0 - x);
        if i >= 1000 {
            out.push(x);
        }
    }
    Signal::new(out, 1.0, "logistic")
}

/// Unit sine sampled at `fs`.
pub fn gen_sine(n: usize, freq_hz: f64, fs: f64) -> Result<Signal> {
    Signal::new(
        (0..n).map(|i| (2.0 * PI * freq_hz * i as f64 / fs).sin()).collect(),
        fs,
        "sine",
    )
}

/// How a treatment changes the post-conditioning recordings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectProfile {
    pub treatment: TreatmentLabel,
    pub nac_sigma_post_scale: f64,
    pub hip_sigma_post_scale: f64,
    pub post_coupling: f64,
    pub hurst_target: f64,
}

impl EffectProfile {
    /// Morphine narrows NAc, food widens HIP and couples NAc to it, saline
    /// changes nothing.
    pub fn default_for(treatment: TreatmentLabel) -> Self {
        let base = Self {
            treatment,
            nac_sigma_post_scale: 1.0,
            hip_sigma_post_scale: 1.0,
            post_coupling: 0.0,
            hurst_target: 0.85,
        };
        match treatment {
            TreatmentLabel::Saline => base,
            TreatmentLabel::Morphine => Self {
                nac_sigma_post_scale: 0.7,
                ..base
            },
            TreatmentLabel::Food => Self {
                hip_sigma_post_scale: 1.6,
                post_coupling: 0.6,
                ..base
            },
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.nac_sigma_post_scale > 0.0 && self.hip_sigma_post_scale > 0.0) {
            return Err(invalid("sigma scales must be positive"));
        }
        if !(0.0..1.0).contains(&self.post_coupling) {
            return Err(invalid("coupling must be in [0, 1)"));
        }
        if !(self.hurst_target > 0.0 && self.hurst_target < 1.0) {
            return Err(invalid("Hurst target must be in (0, 1)"));
        }
        Ok(())
    }
}

/// One synthetic recording session.
///
/// HIP and NAc start as independent unit-variance fGn streams. In the POST
/// phase NAc is first mixed as `sqrt(1 - c^2) nac + c hip` (so the channels
/// correlate at `c` while staying unit variance) and then each site is scaled
/// by its profile factor.
pub fn gen_session(
    subject_id: &str,
    profile: &EffectProfile,
    phase: PhaseLabel,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<SessionRecord> {
    profile.check()?;
    let n = (duration_s * fs).round() as usize;
    if n < 1 << 14 {
        return Err(invalid(format!(
            "session of {n} samples is shorter than the 2^14 minimum"
        )));
    }
    let phase_tag = match phase {
        PhaseLabel::Pre => 0,
        PhaseLabel::Post => 1,
    };
    let padded = n.next_power_of_two();
    let (mut hip, mut nac) = fgn_pair(padded, profile.hurst_target, derive_seed(seed, phase_tag))?;
    hip.truncate(n);
    nac.truncate(n);

    if phase == PhaseLabel::Post {
        let c = profile.post_coupling;
        let keep = (1.0 - c * c).sqrt();
        for (v, h) in nac.iter_mut().zip(&hip) {
            *v = keep * *v + c * h;
        }
        hip.iter_mut().for_each(|v| *v *= profile.hip_sigma_post_scale);
        nac.iter_mut().for_each(|v| *v *= profile.nac_sigma_post_scale);
    }
    SessionRecord::new(
        subject_id,
        phase,
        Some(profile.treatment),
        Signal::new(hip, fs, "hip")?,
        Signal::new(nac, fs, "nac")?,
    )
}

/// PRE and POST sessions of one synthetic subject.
#[derive(Debug, Clone)]
pub struct SubjectPair {
    pub pre: SessionRecord,
    pub post: SessionRecord,
}

/// Shape of a synthetic cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub subjects_per_group: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects_per_group: 5,
            duration_s: 600.0,
            fs: DEFAULT_FS,
            seed: 7,
        }
    }
}

/// Seed of subject `index` of `treatment` within a cohort seeded `seed`.
pub fn subject_seed(seed: u64, treatment: TreatmentLabel, index: usize) -> u64 {
    let t = TreatmentLabel::ALL.iter().position(|x| *x == treatment).unwrap_or(0) as u64;
    derive_seed(seed, 1_000_000 * (t + 1) + index as u64)
}

pub fn subject_id(treatment: TreatmentLabel, index: usize) -> String {
    format!("{}-{:02}", treatment.as_str().to_lowercase(), index + 1)
}

pub fn gen_subject(profile: &EffectProfile, index: usize, spec: &CohortSpec) -> Result<SubjectPair> {
    let id = subject_id(profile.treatment, index);
    let seed = subject_seed(spec.seed, profile.treatment, index);
    Ok(SubjectPair {
        pre: gen_session(&id, profile, PhaseLabel::Pre, spec.duration_s, spec.fs, seed)?,
        post: gen_session(&id, profile, PhaseLabel::Post, spec.duration_s, spec.fs, seed)?,
    })
}

/// Every treatment with its default profile, `subjects_per_group` each,
/// generated in parallel. Output order is by treatment then subject index.
pub fn gen_cohort(spec: &CohortSpec) -> Result<Vec<SubjectPair>> {
    use rayon::prelude::*;
    let jobs: Vec<(TreatmentLabel, usize)> = TreatmentLabel::ALL
        .iter()
        .flat_map(|t| (0..spec.subjects_per_group).map(move |i| (*t, i)))
        .collect();
    jobs.par_iter()
        .map(|(t, i)| gen_subject(&EffectProfile::default_for(*t), *i, spec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    fn lag1(x: &[f64]) -> f64 {
        let m = mean(x);
        let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        num / den
    }

    #[test]
    fn fgn_pair_halves_are_uncorrelated() {
        let n = 1 << 16;
        let (a, b) = fgn_pair(n, 0.5, 11).unwrap();
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
        assert!(cov.abs() < 3.0 / (n as f64).sqrt(), "{cov}");
        let var_b = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n as f64;
        assert!((var_b - 1.0).abs() < 0.03);
    }

    #[test]
    fn white_is_deterministic_and_centred() {
        let a = gen_white(100_000, 2.0, 3).unwrap();
        let b = gen_white(100_000, 2.0, 3).unwrap();
        assert_eq!(a, b);
        let bound = 3.0 * 2.0 / (100_000f64).sqrt();
        assert!(mean(a.samples()).abs() < bound);
        assert_ne!(a, gen_white(100_000, 2.0, 4).unwrap());
    }

    #[test]
    fn fgn_half_is_white() {
        let n = 1 << 16;
        let x = fgn_samples(n, 0.5, 9).unwrap();
        assert!(lag1(&x).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn fgn_lag_one_matches_autocovariance() {
        for (h, seed) in [(0.3, 1), (0.7, 2), (0.8, 3)] {
            let x = fgn_samples(1 << 17, h, seed).unwrap();
            let want = 2f64.powf(2.0 * h - 1.0) - 1.0;
            assert!((lag1(&x) - want).abs() < 0.02, "H={h}: {} vs {want}", lag1(&x));
        }
    }

    #[test]
    fn fgn_unit_variance() {
        let x = fgn_samples(1 << 16, 0.3, 5).unwrap();
        let m = mean(&x);
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn fgn_rejects_non_power_of_two() {
        assert!(fgn_samples(1000, 0.7, 1).is_err());
        assert!(fgn_samples(1024, 1.0, 1).is_err());
    }

    #[test]
    fn logistic_stays_in_unit_interval() {
        let s = gen_logistic(5000, 4.0, 0.2).unwrap();
        assert!(s.samples().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn session_effects_follow_profile() {
        let food = EffectProfile::default_for(TreatmentLabel::Food);
        let pre = gen_session("f", &food, PhaseLabel::Pre, 40.0, 1000.0, 1).unwrap();
        let post = gen_session("f", &food, PhaseLabel::Post, 40.0, 1000.0, 1).unwrap();
        let r = |s: &SessionRecord| {
            let (x, y) = (s.hip().samples(), s.nac().samples());
            let (mx, my) = (mean(x), mean(y));
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            sxy / (sxx * syy).sqrt()
        };
        assert!((r(&post) - 0.6).abs() < 0.05, "{}", r(&post));
        assert!(r(&pre).abs() < 0.1, "{}", r(&pre));
        assert_eq!(post.treatment(), Some(TreatmentLabel::Food));
        assert_eq!(pre.len(), 40_000);
    }

    #[test]
    fn session_too_short() {
        let p = EffectProfile::default_for(TreatmentLabel::Saline);
        assert!(gen_session("s", &p, PhaseLabel::Pre, 10.0, 1000.0, 1).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
