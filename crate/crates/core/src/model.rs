//! Domain types shared across the crate: sampled channels, recording labels
//! and paired HIP/NAc sessions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sampling rate used by the recording rig, in Hz.
pub const DEFAULT_FS: f64 = 1000.0;

/// One channel of sampled voltage (microvolts).
///
/// Samples are always finite and there are at least two of them; the value is
/// immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    fs: f64,
    channel_id: String,
}

impl Signal {
    pub fn new(samples: Vec<f64>, fs: f64, channel_id: impl Into<String>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.len() < 2 {
            return Err(Error::SignalTooShort(format!(
                "{} sample(s), need at least 2",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            fs,
            channel_id: channel_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Same rate and channel id, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.fs, self.channel_id.clone())
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "UPPERCASE")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $(if s.eq_ignore_ascii_case($text) {
                    return Ok($name::$variant);
                })+
                Err(invalid(format!("unknown {} label {s:?}", stringify!($name))))
            }
        }
    };
}

label_enum!(
    /// Recording site.
    SiteLabel { Hip => "HIP", Nac => "NAC" }
);

label_enum!(
    /// Conditioning phase the recording was taken in.
    PhaseLabel { Pre => "PRE", Post => "POST" }
);

label_enum!(
    /// Treatment received during conditioning.
    TreatmentLabel { Saline => "SALINE", Morphine => "MORPHINE", Food => "FOOD" }
);

/// Simultaneous HIP and NAc recordings of one subject in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    subject_id: String,
    phase: PhaseLabel,
    treatment: Option<TreatmentLabel>,
    hip: Signal,
    nac: Signal,
}

impl SessionRecord {
    pub fn new(
        subject_id: impl Into<String>,
        phase: PhaseLabel,
        treatment: Option<TreatmentLabel>,
        hip: Signal,
        nac: Signal,
    ) -> Result<Self> {
        if hip.fs() != nac.fs() {
            return Err(Error::SessionMismatch(format!(
                "sampling rates differ: HIP {} Hz, NAc {} Hz",
                hip.fs(),
                nac.fs()
            )));
        }
        if hip.len() != nac.len() {
            return Err(Error::SessionMismatch(format!(
                "sample counts differ: HIP {}, NAc {}",
                hip.len(),
                nac.len()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            phase,
            treatment,
            hip,
            nac,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn phase(&self) -> PhaseLabel {
        self.phase
    }

    pub fn treatment(&self) -> Option<TreatmentLabel> {
        self.treatment
    }

    pub fn hip(&self) -> &Signal {
        &self.hip
    }

    pub fn nac(&self) -> &Signal {
        &self.nac
    }

    pub fn site(&self, site: SiteLabel) -> &Signal {
        match site {
            SiteLabel::Hip => &self.hip,
            SiteLabel::Nac => &self.nac,
        }
    }

    pub fn fs(&self) -> f64 {
        self.hip.fs()
    }

    pub fn len(&self) -> usize {
        self.hip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hip.is_empty()
    }

    /// Copy of this record with the treatment label removed, for blind scoring.
    pub fn blinded(&self) -> Self {
        Self {
            treatment: None,
            ..self.clone()
        }
    }

    /// Replace both channels, keeping labels. Used after preprocessing.
    pub fn map_signals<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Signal) -> Result<Signal>,
    {
        Self::new(
            self.subject_id.clone(),
            self.phase,
            self.treatment,
            f(&self.hip)?,
            f(&self.nac)?,
        )
    }
}

/// Cut a signal into consecutive windows of `window_seconds`.
///
/// Windows start every `window * (1 - overlap_fraction)` samples. A trailing
/// stretch that does not fill a whole window is dropped.
pub fn window(signal: &Signal, window_seconds: f64, overlap_fraction: f64) -> Result<Vec<Signal>> {
    let len = window_len(signal.fs(), window_seconds)?;
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(invalid(format!(
            "overlap fraction must be in [0, 1), got {overlap_fraction}"
        )));
    }
    if len > signal.len() {
        return Err(Error::SignalTooShort(format!(
            "window of {len} samples exceeds signal of {} samples",
            signal.len()
        )));
    }
    let step = ((len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    (0..=signal.len() - len)
        .step_by(step)
        .map(|start| signal.with_samples(signal.samples()[start..start + len].to_vec()))
        .collect()
}

/// Number of samples in a window of `window_seconds` at rate `fs`.
pub fn window_len(fs: f64, window_seconds: f64) -> Result<usize> {
    if !(window_seconds.is_finite() && window_seconds > 0.0) {
        return Err(invalid(format!(
            "window length must be positive, got {window_seconds} s"
        )));
    }
    let len = (window_seconds * fs).round() as usize;
    if len < 2 {
        return Err(invalid(format!(
            "window of {window_seconds} s at {fs} Hz holds fewer than 2 samples"
        )));
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seconds: f64) -> Signal {
        let n = (seconds * DEFAULT_FS) as usize;
        Signal::new((0..n).map(|i| i as f64).collect(), DEFAULT_FS, "ramp").unwrap()
    }

    #[test]
    fn ten_seconds_into_two_windows() {
        let w = window(&ramp(10.0), 5.0, 0.0).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|s| s.len() == 5000));
    }

    #[test]
    fn trailing_remainder_dropped() {
        let w = window(&ramp(12.0), 5.0, 0.0).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].samples()[4999], 9999.0);
    }

    #[test]
    fn half_overlap_starts() {
        let w = window(&ramp(10.0), 5.0, 0.5).unwrap();
        let starts: Vec<f64> = w.iter().map(|s| s.samples()[0] / DEFAULT_FS).collect();
        assert_eq!(starts, vec![0.0, 2.5, 5.0]);
    }

    #[test]
    fn window_longer_than_signal() {
        let err = window(&ramp(3.0), 5.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("signal too short"));
    }

    #[test]
    fn non_overlapping_windows_reassemble_prefix() {
        let s = ramp(12.3);
        let joined: Vec<f64> = window(&s, 2.0, 0.0)
            .unwrap()
            .into_iter()
            .flat_map(Signal::into_samples)
            .collect();
        assert_eq!(&s.samples()[..joined.len()], &joined[..]);
        assert_eq!(joined.len(), 12_000);
    }

    #[test]
    fn session_rejects_mismatch() {
        let a = Signal::new(vec![0.0; 10], 1000.0, "hip").unwrap();
        let b = Signal::new(vec![0.0; 11], 1000.0, "nac").unwrap();
        let c = Signal::new(vec![0.0; 10], 500.0, "nac").unwrap();
        assert!(SessionRecord::new("r1", PhaseLabel::Pre, None, a.clone(), b).is_err());
        assert!(SessionRecord::new("r1", PhaseLabel::Pre, None, a, c).is_err());
    }

    #[test]
    fn signal_invariants() {
        assert!(Signal::new(vec![1.0], 1000.0, "x").is_err());
        assert!(Signal::new(vec![1.0, 2.0], 0.0, "x").is_err());
        assert!(Signal::new(vec![1.0, f64::NAN], 1000.0, "x").is_err());
    }

    #[test]
    fn labels_round_trip_text() {
        for t in TreatmentLabel::ALL {
            assert_eq!(t.as_str().parse::<TreatmentLabel>().unwrap(), *t);
        }
        assert_eq!("nac".parse::<SiteLabel>().unwrap(), SiteLabel::Nac);
        assert_eq!(
            serde_json::to_string(&TreatmentLabel::Morphine).unwrap(),
            "\"MORPHINE\""
        );
    }
}
