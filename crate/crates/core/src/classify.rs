//! Treatment classifiers built on channel correlation, windowed
//! single-channel divergences and the two-channel Gaussian divergence.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::density::{fit_gauss1d, fit_gauss_nd, jsd_discrete, kld_gauss_nd, pooled_histograms};
use crate::error::{invalid, Error, Result};
use crate::model::{window, SessionRecord, Signal, SiteLabel, TreatmentLabel};
use crate::stats::{t_test, Alternative, TKind};

/// Decision thresholds for the three classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// HIP windowed-divergence score above which a subject is FOOD (bits).
    pub hip_kld_t: f64,
    /// NAc windowed-divergence score above which a subject is MORPHINE (bits).
    pub nac_kld_t: f64,
    /// Two-channel divergence above which a subject is FOOD (nats).
    pub food_2d: f64,
    /// Two-channel divergence above which a subject is at least MORPHINE (nats).
    pub morphine_2d: f64,
    /// POST-phase HIP/NAc correlation above which a subject is FOOD.
    pub corr_band: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            hip_kld_t: 1000.0,
            nac_kld_t: 900.0,
            food_2d: 0.3050,
            morphine_2d: 0.1341,
            corr_band: 0.1,
        }
    }
}

impl Thresholds {
    pub fn check(&self) -> Result<()> {
        let all = [
            self.hip_kld_t,
            self.nac_kld_t,
            self.food_2d,
            self.morphine_2d,
            self.corr_band,
        ];
        if all.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid("thresholds must be finite and positive"));
        }
        if self.morphine_2d >= self.food_2d {
            return Err(invalid(format!(
                "morphine_2d ({}) must be below food_2d ({})",
                self.morphine_2d, self.food_2d
            )));
        }
        Ok(())
    }
}

/// Window length and bin count used for the windowed divergence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSettings {
    pub window_seconds: f64,
    pub bins: usize,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            window_seconds: 5.0,
            bins: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Corr,
    Kld1d,
    Kld2d,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Corr, Method::Kld1d, Method::Kld2d];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Corr => "CORR",
            Method::Kld1d => "KLD1D",
            Method::Kld2d => "KLD2D",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

/// A classifier's verdict. The correlation rule can only tell FOOD from
/// everything else, hence `NotFood`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Prediction {
    Saline,
    Morphine,
    Food,
    NotFood,
}

impl Prediction {
    pub fn is_correct(self, truth: TreatmentLabel) -> bool {
        match self {
            Prediction::Saline => truth == TreatmentLabel::Saline,
            Prediction::Morphine => truth == TreatmentLabel::Morphine,
            Prediction::Food => truth == TreatmentLabel::Food,
            Prediction::NotFood => truth != TreatmentLabel::Food,
        }
    }
}

impl From<TreatmentLabel> for Prediction {
    fn from(t: TreatmentLabel) -> Self {
        match t {
            TreatmentLabel::Saline => Prediction::Saline,
            TreatmentLabel::Morphine => Prediction::Morphine,
            TreatmentLabel::Food => Prediction::Food,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub predicted: Prediction,
    pub method: Method,
    /// Named scores; names carry their unit where one applies.
    pub scores: BTreeMap<String, f64>,
    /// Set when more than one rule fired.
    #[serde(default)]
    pub ambiguous: bool,
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(invalid("correlation needs at least two samples"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(pre: &SessionRecord, post: &SessionRecord) -> Result<()> {
    if pre.subject_id() != post.subject_id() {
        return Err(Error::SessionMismatch(format!(
            "sessions belong to {} and {}",
            pre.subject_id(),
            post.subject_id()
        )));
    }
    Ok(())
}

pub fn decide_corr(r_post: f64, th: &Thresholds) -> Prediction {
    if r_post > th.corr_band {
        Prediction::Food
    } else {
        Prediction::NotFood
    }
}

/// HIP rule first, then NAc. When both fire the label goes to the rule with
/// the larger score-to-threshold ratio and the result is flagged ambiguous.
pub fn decide_kld1d(k_hip: f64, k_nac: f64, th: &Thresholds) -> (Prediction, bool) {
    let hip = k_hip > th.hip_kld_t;
    let nac = k_nac > th.nac_kld_t;
    match (hip, nac) {
        (true, true) if k_nac / th.nac_kld_t > k_hip / th.hip_kld_t => (Prediction::Morphine, true),
        (true, true) => (Prediction::Food, true),
        (true, false) => (Prediction::Food, false),
        (false, true) => (Prediction::Morphine, false),
        (false, false) => (Prediction::Saline, false),
    }
}

pub fn decide_kld2d(k: f64, th: &Thresholds) -> Prediction {
    if k > th.food_2d {
        Prediction::Food
    } else if k > th.morphine_2d {
        Prediction::Morphine
    } else {
        Prediction::Saline
    }
}

/// Correlation classifier; only the POST phase decides, the PRE value is
/// reported for reference.
pub fn classify_by_correlation(
    pre: &SessionRecord,
    post: &SessionRecord,
    th: &Thresholds,
) -> Result<ClassificationResult> {
    check_pair(pre, post)?;
    let r_post = pearson(post.hip().samples(), post.nac().samples())?;
    let r_pre = pearson(pre.hip().samples(), pre.nac().samples())?;
    Ok(ClassificationResult {
        predicted: decide_corr(r_post, th),
        method: Method::Corr,
        scores: BTreeMap::from([("r_post".into(), r_post), ("r_pre".into(), r_pre)]),
        ambiguous: false,
    })
}

/// Sum over aligned non-overlapping windows of the Jensen-Shannon
/// divergence (bits) between PRE and POST histograms on shared bins.
pub fn kld1d_score(pre: &Signal, post: &Signal, settings: &ScoreSettings) -> Result<f64> {
    if pre.fs() != post.fs() {
        return Err(Error::SessionMismatch(format!(
            "sampling rates differ: {} vs {}",
            pre.fs(),
            post.fs()
        )));
    }
    let a = window(pre, settings.window_seconds, 0.0)?;
    let b = window(post, settings.window_seconds, 0.0)?;
    a.iter().zip(&b).try_fold(0.0, |acc, (wa, wb)| {
        let (p, q) = pooled_histograms(wa.samples(), wb.samples(), settings.bins)?;
        Ok(acc + jsd_discrete(&p, &q)?)
    })
}

pub fn classify_by_kld1d(
    pre: &SessionRecord,
    post: &SessionRecord,
    th: &Thresholds,
    settings: &ScoreSettings,
) -> Result<ClassificationResult> {
    check_pair(pre, post)?;
    let k_hip = kld1d_score(pre.hip(), post.hip(), settings)?;
    let k_nac = kld1d_score(pre.nac(), post.nac(), settings)?;
    let (predicted, ambiguous) = decide_kld1d(k_hip, k_nac, th);
    Ok(ClassificationResult {
        predicted,
        method: Method::Kld1d,
        scores: BTreeMap::from([("hip_jsd_bits".into(), k_hip), ("nac_jsd_bits".into(), k_nac)]),
        ambiguous,
    })
}

/// Divergence (nats) from the PRE to the POST two-channel Gaussian fit.
pub fn kld2d_score(pre: &SessionRecord, post: &SessionRecord) -> Result<f64> {
    let fit = |s: &SessionRecord| fit_gauss_nd(&[s.hip().samples(), s.nac().samples()]);
    kld_gauss_nd(&fit(pre)?, &fit(post)?)
}

pub fn classify_by_kld2d(pre: &SessionRecord, post: &SessionRecord, th: &Thresholds) -> Result<ClassificationResult> {
    check_pair(pre, post)?;
    let k = kld2d_score(pre, post)?;
    Ok(ClassificationResult {
        predicted: decide_kld2d(k, th),
        method: Method::Kld2d,
        scores: BTreeMap::from([("kld_nats".into(), k)]),
        ambiguous: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Increased,
    Decreased,
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub direction: Direction,
    /// One-sided p-value in the direction of the observed change.
    pub p_value: f64,
    /// Mean per-window sigma, POST minus PRE.
    pub sigma_change: f64,
}

/// Compares per-window sigma estimates of PRE and POST with a one-sided
/// Welch test in the direction of the observed change.
pub fn compare_variance(pre: &Signal, post: &Signal, window_seconds: f64) -> Result<VarianceComparison> {
    let sigmas = |s: &Signal| -> Result<Vec<f64>> {
        let w = window(s, window_seconds, 0.0)?;
        if w.len() < 3 {
            return Err(Error::SignalTooShort(format!(
                "{} covers {} windows of {window_seconds} s, need 3",
                s.channel_id(),
                w.len()
            )));
        }
        w.iter().map(|w| fit_gauss1d(w.samples()).map(|g| g.sigma)).collect()
    };
    let (a, b) = (sigmas(pre)?, sigmas(post)?);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let change = mean(&b) - mean(&a);
    let alt = if change >= 0.0 {
        Alternative::Greater
    } else {
        Alternative::Less
    };
    let p_value = match t_test(&b, &a, TKind::Welch, alt) {
        Ok(r) => r.p_value,
        Err(Error::ZeroVariance) => 1.0,
        Err(e) => return Err(e),
    };
    let direction = if p_value >= 0.05 || change == 0.0 {
        Direction::Unchanged
    } else if change > 0.0 {
        Direction::Increased
    } else {
        Direction::Decreased
    };
    Ok(VarianceComparison {
        direction,
        p_value,
        sigma_change: change,
    })
}

/// Every score the classifiers use, for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectScores {
    pub r_post: f64,
    pub hip_jsd_bits: f64,
    pub nac_jsd_bits: f64,
    pub kld2d_nats: f64,
}

pub fn score_subject(pre: &SessionRecord, post: &SessionRecord, settings: &ScoreSettings) -> Result<SubjectScores> {
    check_pair(pre, post)?;
    Ok(SubjectScores {
        r_post: pearson(post.hip().samples(), post.nac().samples())?,
        hip_jsd_bits: kld1d_score(pre.site(SiteLabel::Hip), post.site(SiteLabel::Hip), settings)?,
        nac_jsd_bits: kld1d_score(pre.site(SiteLabel::Nac), post.site(SiteLabel::Nac), settings)?,
        kld2d_nats: kld2d_score(pre, post)?,
    })
}

/// Thresholds refitted on a labelled cohort, plus any rule whose groups
/// overlap (its threshold is then still the midpoint, but cannot separate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub thresholds: Thresholds,
    pub overlapping: Vec<String>,
}

/// Max-margin thresholds: each sits midway between the highest score of
/// the groups that must stay below it and the lowest of those that must
/// exceed it.
///
/// The NAc rule only sees subjects the HIP rule passed, so FOOD is left out
/// of it.
pub fn calibrate(labelled: &[(TreatmentLabel, SubjectScores)]) -> Result<Calibration> {
    use TreatmentLabel::{Food, Morphine, Saline};
    let pick = |groups: &[TreatmentLabel], f: fn(&SubjectScores) -> f64| -> Vec<f64> {
        labelled
            .iter()
            .filter(|(t, _)| groups.contains(t))
            .map(|(_, s)| f(s))
            .collect()
    };
    for t in TreatmentLabel::ALL {
        if !labelled.iter().any(|(l, _)| *l == *t) {
            return Err(invalid(format!("calibration cohort has no {t} subjects")));
        }
    }
    let mut overlapping = Vec::new();
    let mut split = |name: &str, below: Vec<f64>, above: Vec<f64>| {
        let hi = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = above.iter().copied().fold(f64::INFINITY, f64::min);
        if hi >= lo {
            overlapping.push(name.to_string());
        }
        0.5 * (hi + lo)
    };
    let th = Thresholds {
        hip_kld_t: split(
            "hip_kld_t",
            pick(&[Saline, Morphine], |s| s.hip_jsd_bits),
            pick(&[Food], |s| s.hip_jsd_bits),
        ),
        nac_kld_t: split(
            "nac_kld_t",
            pick(&[Saline], |s| s.nac_jsd_bits),
            pick(&[Morphine], |s| s.nac_jsd_bits),
        ),
        morphine_2d: split(
            "morphine_2d",
            pick(&[Saline], |s| s.kld2d_nats),
            pick(&[Morphine], |s| s.kld2d_nats),
        ),
        food_2d: split(
            "food_2d",
            pick(&[Saline, Morphine], |s| s.kld2d_nats),
            pick(&[Food], |s| s.kld2d_nats),
        ),
        corr_band: split(
            "corr_band",
            pick(&[Saline, Morphine], |s| s.r_post),
            pick(&[Food], |s| s.r_post),
        ),
    };
    th.check()?;
    Ok(Calibration {
        thresholds: th,
        overlapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhaseLabel;
    use crate::synth::{gaussian_samples, gen_fgn};

    fn sig(v: Vec<f64>) -> Signal {
        Signal::new(v, 1000.0, "x").unwrap()
    }

    #[test]
    fn pearson_examples() {
        let x = gaussian_samples(1000, 1.0, 1);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let a = gaussian_samples(100_000, 1.0, 2);
        let b = gaussian_samples(100_000, 1.0, 3);
        assert!(pearson(&a, &b).unwrap().abs() < 0.01);
        assert!(matches!(pearson(&x, &[1.0; 1000]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn kld1d_rules() {
        let th = Thresholds::default();
        assert_eq!(decide_kld1d(1200.0, 300.0, &th), (Prediction::Food, false));
        assert_eq!(decide_kld1d(400.0, 950.0, &th), (Prediction::Morphine, false));
        assert_eq!(decide_kld1d(500.0, 500.0, &th), (Prediction::Saline, false));
        assert_eq!(decide_kld1d(1100.0, 1800.0, &th), (Prediction::Morphine, true));
        assert_eq!(decide_kld1d(3000.0, 1000.0, &th), (Prediction::Food, true));
    }

    #[test]
    fn kld2d_rules() {
        let th = Thresholds::default();
        assert_eq!(decide_kld2d(0.4, &th), Prediction::Food);
        assert_eq!(decide_kld2d(0.2, &th), Prediction::Morphine);
        assert_eq!(decide_kld2d(0.05, &th), Prediction::Saline);
        assert_eq!(decide_corr(0.6, &th), Prediction::Food);
        assert_eq!(decide_corr(0.02, &th), Prediction::NotFood);
    }

    #[test]
    fn threshold_validation() {
        assert!(Thresholds::default().check().is_ok());
        let bad = Thresholds {
            morphine_2d: 0.5,
            ..Thresholds::default()
        };
        assert!(bad.check().is_err());
        let th: Thresholds = serde_json::from_str(r#"{"corr_band": 0.2}"#).unwrap();
        assert_eq!(th.hip_kld_t, 1000.0);
        assert_eq!(th.corr_band, 0.2);
    }

    #[test]
    fn kld1d_score_properties() {
        let x = sig(gaussian_samples(20_000, 1.0, 4));
        let s = ScoreSettings::default();
        assert_eq!(kld1d_score(&x, &x, &s).unwrap(), 0.0);
        let y = sig(gaussian_samples(20_000, 1.0, 5));
        let ab = kld1d_score(&x, &y, &s).unwrap();
        let ba = kld1d_score(&y, &x, &s).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let scores: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|r| {
                let post = sig(y.samples().iter().map(|v| v * r).collect());
                kld1d_score(&x, &post, &s).unwrap()
            })
            .collect();
        assert!(scores[0] < scores[1] && scores[1] < scores[2], "{scores:?}");
    }

    fn record(id: &str, phase: PhaseLabel, hip: Vec<f64>, nac: Vec<f64>) -> SessionRecord {
        SessionRecord::new(id, phase, None, sig(hip), sig(nac)).unwrap()
    }

    #[test]
    fn correlation_ignores_pre_phase() {
        let h = gaussian_samples(10_000, 1.0, 6);
        let n = gaussian_samples(10_000, 1.0, 7);
        let coupled: Vec<f64> = n.iter().zip(&h).map(|(a, b)| 0.8 * a + 0.6 * b).collect();
        let post = record("s", PhaseLabel::Post, h.clone(), coupled.clone());
        for pre_nac in [n.clone(), coupled] {
            let pre = record("s", PhaseLabel::Pre, h.clone(), pre_nac);
            let r = classify_by_correlation(&pre, &post, &Thresholds::default()).unwrap();
            assert_eq!(r.predicted, Prediction::Food);
        }
        let other = record("t", PhaseLabel::Pre, h, n);
        assert!(matches!(
            classify_by_correlation(&other, &post, &Thresholds::default()),
            Err(Error::SessionMismatch(_))
        ));
    }

    #[test]
    fn kld2d_invariant_to_channel_swap() {
        let a = gaussian_samples(5000, 1.0, 8);
        let b = gaussian_samples(5000, 1.0, 9);
        let c: Vec<f64> = gaussian_samples(5000, 1.0, 10).iter().map(|v| 1.5 * v).collect();
        let d: Vec<f64> = gaussian_samples(5000, 1.0, 11)
            .iter()
            .zip(&c)
            .map(|(x, y)| x + 0.3 * y)
            .collect();
        let k = kld2d_score(
            &record("s", PhaseLabel::Pre, a.clone(), b.clone()),
            &record("s", PhaseLabel::Post, c.clone(), d.clone()),
        )
        .unwrap();
        let swapped = kld2d_score(
            &record("s", PhaseLabel::Pre, b, a),
            &record("s", PhaseLabel::Post, d, c),
        )
        .unwrap();
        assert!((k - swapped).abs() < 1e-12 * k.max(1.0));
    }

    #[test]
    fn variance_directions() {
        let pre = gen_fgn(1 << 16, 0.85, 12).unwrap();
        let base = gen_fgn(1 << 16, 0.85, 13).unwrap();
        let scaled = |k: f64| sig(base.samples().iter().map(|v| v * k).collect());
        let same = compare_variance(&pre, &pre, 5.0).unwrap();
        assert_eq!(same.direction, Direction::Unchanged);
        let down = compare_variance(&pre, &scaled(0.5), 5.0).unwrap();
        assert!(down.direction == Direction::Decreased && down.p_value < 0.05);
        let up = compare_variance(&pre, &scaled(2.0), 5.0).unwrap();
        assert!(up.direction == Direction::Increased && up.p_value < 0.05);
        let short = sig(vec![0.0, 1.0, 0.5, 0.2]);
        assert!(compare_variance(&short, &short, 5.0).is_err());
    }

    #[test]
    fn calibration_midpoints() {
        let s = |r, h, n, k| SubjectScores {
            r_post: r,
            hip_jsd_bits: h,
            nac_jsd_bits: n,
            kld2d_nats: k,
        };
        use TreatmentLabel::*;
        let cohort = [
            (Saline, s(0.01, 10.0, 10.0, 0.01)),
            (Saline, s(0.03, 12.0, 14.0, 0.03)),
            (Morphine, s(0.02, 11.0, 30.0, 0.15)),
            (Morphine, s(-0.02, 13.0, 26.0, 0.19)),
            (Food, s(0.6, 40.0, 20.0, 0.35)),
            (Food, s(0.55, 44.0, 12.0, 0.31)),
        ];
        let c = calibrate(&cohort).unwrap();
        assert!(c.overlapping.is_empty());
        let t = c.thresholds;
        assert_eq!((t.hip_kld_t, t.nac_kld_t), (26.5, 20.0));
        assert!((t.morphine_2d - 0.09).abs() < 1e-12 && (t.food_2d - 0.25).abs() < 1e-12);
        assert!((t.corr_band - 0.29).abs() < 1e-12);
        assert!(calibrate(&cohort[..4]).is_err());
    }
}
