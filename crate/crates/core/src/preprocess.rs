//! Band-pass filtering and three-sigma outlier replacement.
//!
//! The band-pass is a Butterworth design (analog prototype, low-pass to
//! band-pass transform, bilinear map with pre-warping) realised as a cascade
//! of second-order sections and run forward then backward for zero phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Signal;

/// Band-pass design parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    /// Prototype order; the band-pass has twice as many poles.
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_cut_hz: 0.5,
            high_cut_hz: 300.0,
            order: 4,
        }
    }
}

impl FilterSpec {
    pub fn check(&self, fs: f64) -> Result<()> {
        let nyquist = fs / 2.0;
        if self.order == 0 {
            return Err(invalid("filter order must be positive"));
        }
        if !(self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz) {
            return Err(invalid(format!(
                "need 0 < low cut < high cut, got {} and {} Hz",
                self.low_cut_hz, self.high_cut_hz
            )));
        }
        if self.high_cut_hz >= nyquist {
            return Err(Error::CutoffAboveNyquist {
                high_hz: self.high_cut_hz,
                nyquist_hz: nyquist,
            });
        }
        Ok(())
    }
}

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Direct-form II transposed state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let y = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        [y - self.b[0], self.b[2] - self.a[2] * y]
    }
}

/// Second-order-section cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Butterworth band-pass for sampling rate `fs`.
    pub fn butter_bandpass(spec: &FilterSpec, fs: f64) -> Result<Self> {
        spec.check(fs)?;
        let n = spec.order;
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz));
        let bw = w2 - w1;
        let w0_sq = w1 * w2;
        let fs2 = 2.0 * fs;

        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let m = -(n as f64) + 1.0 + 2.0 * k as f64;
            let proto = -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64));
            let half = proto * (bw / 2.0);
            let root = (half * half - w0_sq).sqrt();
            for s in [half + root, half - root] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }
        // The n analog zeros at s = 0 map to z = 1 and the n zeros at infinity
        // to z = -1, so every section gets the numerator 1 - z^-2.

        let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
        complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.sort_by(f64::total_cmp);
        if real.len() % 2 != 0 || complex.len() * 2 + real.len() != 2 * n {
            return Err(invalid("pole pairing failed; cut-offs too close to the band edges"));
        }
        let mut sections: Vec<Biquad> = complex
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        sections.extend(real.chunks(2).map(|r| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(r[0] + r[1]), r[0] * r[1]],
        }));

        // Unit gain at the geometric centre of the warped band.
        let mut sos = Sos { sections };
        let f_centre = fs / PI * (w0_sq.sqrt() / fs2).atan();
        let h = sos.response(f_centre, fs).norm();
        sos.sections[0].b.iter_mut().for_each(|b| *b /= h);
        Ok(sos)
    }

    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Causal filtering with explicit initial states (one pair per section).
    fn run(&self, x: &mut [f64], init: Option<f64>) {
        let mut scale = init.unwrap_or(0.0);
        for sec in &self.sections {
            let zi = sec.step_state();
            let (mut z1, mut z2) = (zi[0] * scale, zi[1] * scale);
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
            scale *= sec.b.iter().sum::<f64>() / sec.a.iter().sum::<f64>();
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, None);
        y
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions at each end.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let pad = (3 * (2 * self.sections.len() + 1)).min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}

/// Zero-phase Butterworth band-pass; same length and rate as the input.
pub fn bandpass(signal: &Signal, spec: &FilterSpec) -> Result<Signal> {
    let sos = Sos::butter_bandpass(spec, signal.fs())?;
    signal.with_samples(sos.filtfilt(signal.samples()))
}

/// Replace every sample farther than three population standard deviations
/// from the mean with the mean. Mean and deviation come from the input, once.
pub fn clamp_outliers(signal: &Signal) -> Result<Signal> {
    let x = signal.samples();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let limit = 3.0 * sd;
    signal.with_samples(
        x.iter()
            .map(|&v| if (v - mean).abs() > limit { mean } else { v })
            .collect(),
    )
}

/// Filter, then clamp.
pub fn preprocess(signal: &Signal, spec: &FilterSpec) -> Result<Signal> {
    clamp_outliers(&bandpass(signal, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    /// Analog Butterworth band-pass magnitude at the pre-warped frequency,
    /// which the bilinear design reproduces exactly.
    fn oracle_gain(f: f64, spec: &FilterSpec, fs: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2, w) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz), warp(f));
        let q = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + q.powi(2 * spec.order as i32)).sqrt()
    }

    #[test]
    fn magnitude_matches_analog_oracle() {
        let spec = FilterSpec::default();
        let sos = Sos::butter_bandpass(&spec, 1000.0).unwrap();
        for f in [0.1, 0.5, 1.0, 10.0, 50.0, 200.0, 300.0, 400.0, 450.0, 490.0] {
            let got = sos.response(f, 1000.0).norm();
            let want = oracle_gain(f, &spec, 1000.0);
            assert!((got - want).abs() < 1e-9, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn odd_order_designs() {
        for order in [1, 2, 3, 5] {
            let spec = FilterSpec {
                order,
                ..Default::default()
            };
            let sos = Sos::butter_bandpass(&spec, 1000.0).unwrap();
            assert_eq!(sos.sections.len(), order);
            for f in [1.0, 20.0, 350.0] {
                let got = sos.response(f, 1000.0).norm();
                assert!((got - oracle_gain(f, &spec, 1000.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn passband_sine_keeps_unit_amplitude() {
        let s = Signal::new(tone(50.0, 10_000, 1000.0), 1000.0, "x").unwrap();
        let y = bandpass(&s, &FilterSpec::default()).unwrap();
        let peak = y.samples()[3000..7000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn removes_offset_keeps_slow_sine() {
        let x: Vec<f64> = tone(10.0, 20_000, 1000.0).iter().map(|v| v + 5.0).collect();
        let s = Signal::new(x, 1000.0, "x").unwrap();
        let y = bandpass(&s, &FilterSpec::default()).unwrap();
        let mid = &y.samples()[5000..15_000];
        let mean = mid.iter().sum::<f64>() / mid.len() as f64;
        let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((peak - 1.0).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn attenuates_above_band() {
        let spec = FilterSpec::default();
        // Forward-backward squares the single-pass gain.
        let oracle_db = 20.0 * oracle_gain(450.0, &spec, 1000.0).powi(2).log10();
        assert!(oracle_db < -20.0);
        let s = Signal::new(tone(450.0, 10_000, 1000.0), 1000.0, "x").unwrap();
        let y = bandpass(&s, &spec).unwrap();
        // Lock-in amplitude at 450 Hz, so the slow edge transient of the
        // high-pass section does not count as leakage.
        let seg = 2000..8000;
        let (mut c, mut q) = (0.0, 0.0);
        for i in seg.clone() {
            let ph = 2.0 * PI * 450.0 * i as f64 / 1000.0;
            c += y.samples()[i] * ph.cos();
            q += y.samples()[i] * ph.sin();
        }
        let amp = 2.0 * c.hypot(q) / seg.len() as f64;
        let ratio_db = 20.0 * amp.log10();
        assert!(ratio_db < -20.0, "{ratio_db} dB");
    }

    #[test]
    fn nyquist_rejected() {
        let s = Signal::new(vec![0.0; 100], 500.0, "x").unwrap();
        let err = bandpass(&s, &FilterSpec::default()).unwrap_err();
        assert!(err.to_string().contains("cutoff above Nyquist"));
    }

    #[test]
    fn zero_phase_keeps_pulse_peak() {
        let n = 4001;
        let x: Vec<f64> = (0..n).map(|i| (-((i as f64 - 2000.0) / 8.0).powi(2)).exp()).collect();
        let s = Signal::new(x, 1000.0, "x").unwrap();
        let y = bandpass(&s, &FilterSpec::default()).unwrap();
        let peak = y
            .samples()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((peak as i64 - 2000).abs() <= 1);
        assert_eq!(y.len(), n);
        assert_eq!(y.fs(), 1000.0);
    }

    #[test]
    fn clamp_leaves_small_excursion() {
        // mean 25, population sd 43.30, 3 sd = 129.9 > 75
        let s = Signal::new(vec![0.0, 0.0, 0.0, 100.0], 1000.0, "x").unwrap();
        assert_eq!(clamp_outliers(&s).unwrap(), s);
    }

    #[test]
    fn clamp_constant_is_identity() {
        let s = Signal::new(vec![3.5; 50], 1000.0, "x").unwrap();
        assert_eq!(clamp_outliers(&s).unwrap(), s);
    }

    #[test]
    fn clamp_replaces_spike_with_input_mean() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_pcg::Pcg32::seed_from_u64(11);
        let mut x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        x[500] = 10.0;
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let s = Signal::new(x.clone(), 1000.0, "x").unwrap();
        let y = clamp_outliers(&s).unwrap();
        assert_eq!(y.samples()[500], mean);
        assert!(mean.abs() < 0.02);
    }
}
