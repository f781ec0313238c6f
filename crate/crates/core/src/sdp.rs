//! Symmetrized dot patterns: each sample becomes a radius and the lagged
//! sample a pair of mirrored angles, replicated around the circle.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::density::jsd_bits;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpConfig {
    /// Lag between the radius sample and the angle sample.
    #[serde(alias = "L")]
    pub lag: usize,
    /// Angle between mirror axes; must divide 360.
    pub theta_deg: f64,
    /// Angular gain applied to the normalized lagged sample.
    pub zeta_deg: f64,
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self {
            lag: 1,
            theta_deg: 45.0,
            zeta_deg: 90.0,
        }
    }
}

impl SdpConfig {
    pub fn check(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(invalid("lag must be positive"));
        }
        if !(self.theta_deg > 0.0 && self.theta_deg <= 360.0) {
            return Err(invalid(format!("symmetry angle {} outside (0, 360]", self.theta_deg)));
        }
        let sectors = 360.0 / self.theta_deg;
        if (sectors - sectors.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "symmetry angle {} does not divide 360",
                self.theta_deg
            )));
        }
        if !self.zeta_deg.is_finite() {
            return Err(invalid("gain angle must be finite"));
        }
        Ok(())
    }

    pub fn sectors(&self) -> usize {
        (360.0 / self.theta_deg).round() as usize
    }

    /// Advisory notes about settings that are legal but unusual.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.zeta_deg > 2.0 * self.theta_deg {
            out.push(format!(
                "gain angle {} exceeds twice the symmetry angle {}; neighbouring sectors overlap",
                self.zeta_deg, self.theta_deg
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpDot {
    pub radius: f64,
    pub angle_deg: f64,
}

/// Replicated dots, grouped per base point: for each base point, each
/// sector contributes its `+` then `-` mirror dot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpDotSet {
    pub dots: Vec<SdpDot>,
    /// Number of base points before replication.
    pub base_count: usize,
    pub config: SdpConfig,
    /// Normalized amplitude of each base point's lagged sample.
    #[serde(skip)]
    lagged: Vec<f64>,
}

impl SdpDotSet {
    pub fn dots_per_base(&self) -> usize {
        2 * self.config.sectors()
    }

    /// `(radius, normalized lagged amplitude)` for each base point.
    pub fn base_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let per = self.dots_per_base();
        self.lagged
            .iter()
            .enumerate()
            .map(move |(i, g)| (self.dots[i * per].radius, *g))
    }
}

fn canonical(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

pub fn sdp_transform(x: &[f64], cfg: &SdpConfig) -> Result<SdpDotSet> {
    cfg.check()?;
    if x.len() <= cfg.lag {
        return Err(Error::SignalTooShort(format!(
            "{} samples with lag {}",
            x.len(),
            cfg.lag
        )));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    if !(hi > lo) {
        return Err(Error::ZeroDynamicRange);
    }
    let span = hi - lo;
    let norm = |v: f64| ((v - lo) / span).clamp(0.0, 1.0);
    let base_count = x.len() - cfg.lag;
    let sectors = cfg.sectors();
    let mut dots = Vec::with_capacity(base_count * 2 * sectors);
    let mut lagged = Vec::with_capacity(base_count);
    for i in 0..base_count {
        let radius = norm(x[i]);
        let g = norm(x[i + cfg.lag]);
        lagged.push(g);
        for k in 0..sectors {
            let axis = cfg.theta_deg * (k + 1) as f64;
            dots.push(SdpDot {
                radius,
                angle_deg: canonical(axis + g * cfg.zeta_deg),
            });
            dots.push(SdpDot {
                radius,
                angle_deg: canonical(axis - g * cfg.zeta_deg),
            });
        }
    }
    Ok(SdpDotSet {
        dots,
        base_count,
        config: *cfg,
        lagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpStyle {
    pub dot_radius_px: f64,
    pub color: String,
}

impl Default for SdpStyle {
    fn default() -> Self {
        Self {
            dot_radius_px: 0.6,
            color: "#1f4e9c".into(),
        }
    }
}

/// Base points kept when rendering; longer inputs are stride-decimated.
pub const RENDER_MAX_BASE: usize = 100_000;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Square SVG with the pattern centred and unit radius at 45% of the width.
pub fn sdp_render(set: &SdpDotSet, width_px: u32, style: &SdpStyle) -> Result<String> {
    if width_px < 64 {
        return Err(invalid(format!("width {width_px} px is below the 64 px minimum")));
    }
    if !(style.dot_radius_px > 0.0 && style.dot_radius_px.is_finite()) {
        return Err(invalid("dot radius must be positive"));
    }
    let w = f64::from(width_px);
    let c = w / 2.0;
    let unit = 0.45 * w;
    let per = set.dots_per_base().max(1);
    let stride = set.base_count.div_ceil(RENDER_MAX_BASE).max(1);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{width_px}" viewBox="0 0 {width_px} {width_px}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g fill="{}" stroke="none">"#, xml_escape(&style.color));
    for chunk in set.dots.chunks(per).step_by(stride) {
        for d in chunk {
            let a = d.angle_deg.to_radians();
            let x = c + d.radius * unit * a.cos();
            let y = c - d.radius * unit * a.sin();
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.3}" cy="{y:.3}" r="{:.3}"/>"#,
                style.dot_radius_px
            );
        }
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// Grid size per axis for [`sdp_compare`].
pub const COMPARE_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpComparison {
    pub hip: SdpDotSet,
    pub nac: SdpDotSet,
    /// Jensen-Shannon divergence in bits between the base-point histograms.
    pub dissimilarity: f64,
}

fn base_histogram(set: &SdpDotSet) -> Vec<f64> {
    let n = COMPARE_BINS;
    let bin = |v: f64| ((v * n as f64) as usize).min(n - 1);
    let mut h = vec![0.0; n * n];
    for (r, g) in set.base_points() {
        h[bin(r) * n + bin(g)] += 1.0;
    }
    let total = set.base_count as f64;
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Transforms both channels and measures how far apart their patterns are,
/// using a 32 x 32 histogram of radius against mirror angle.
pub fn sdp_compare(hip: &[f64], nac: &[f64], cfg: &SdpConfig) -> Result<SdpComparison> {
    let hip = sdp_transform(hip, cfg)?;
    let nac = sdp_transform(nac, cfg)?;
    let dissimilarity = jsd_bits(&base_histogram(&hip), &base_histogram(&nac));
    Ok(SdpComparison {
        hip,
        nac,
        dissimilarity,
    })
}
