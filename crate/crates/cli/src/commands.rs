use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::process::ExitCode;

use anyhow::{Context, Result};
use lfp_core::classify::{
    classify_by_correlation, classify_by_kld1d, classify_by_kld2d, kld1d_score, kld2d_score, Thresholds,
};
use lfp_core::density::{fit_gauss1d, jsd_discrete, pooled_histograms, select_model, Gauss1D, ModelSelection};
use lfp_core::io::{load_signals, read_meta, sidecar_path, write_columns, write_meta, write_sessions};
use lfp_core::pipeline::{calibrate_cohort, run_pipeline, validate_gate, PipelineConfig};
use lfp_core::preprocess::{preprocess, FilterSpec};
use lfp_core::sdp::{sdp_render, sdp_transform};
use lfp_core::stats::{
    anova_tukey, ks_normality, mann_whitney_u, t_test, wilcoxon_signed, Alternative, TKind, TestResult,
};
use lfp_core::synth::{gen_subject, CohortSpec, EffectProfile};
use lfp_core::validate::{validate_signal, ValidationSummary};
use lfp_core::{PhaseLabel, SessionRecord, Signal, SiteLabel, TreatmentLabel};
use rayon::prelude::*;
use serde::Serialize;

use crate::input::{emit_json, load_config, load_record, read_group, read_json};
use crate::*;

/// An argument or configuration problem found after parsing; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Preprocess(a) => preprocess_cmd(a, &config),
        Command::Validate(a) => validate_cmd(a, &config),
        Command::Fit(a) => fit_cmd(a),
        Command::Kld(a) => kld_cmd(a, &config),
        Command::Classify(a) => classify_cmd(a, &config),
        Command::Calibrate(a) => calibrate_cmd(a, &config),
        Command::Sdp(a) => sdp_cmd(a, &config),
        Command::Synth(a) => synth_cmd(a, cli.seed),
        Command::Pipeline(a) => pipeline_cmd(a, &config),
        Command::Stats(a) => stats_cmd(a),
    }
}

fn site_label(site: Site) -> SiteLabel {
    match site {
        Site::Hip => SiteLabel::Hip,
        Site::Nac => SiteLabel::Nac,
    }
}

fn pick(hip: Signal, nac: Signal, site: Site) -> Signal {
    match site {
        Site::Hip => hip,
        Site::Nac => nac,
    }
}

fn preprocess_cmd(a: PreprocessArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let spec = FilterSpec {
        low_cut_hz: a.low.unwrap_or(config.filter.low_cut_hz),
        high_cut_hz: a.high.unwrap_or(config.filter.high_cut_hz),
        order: a.order.unwrap_or(config.filter.order),
    };
    let (hip, nac) = load_signals(&a.input, a.fs).with_context(|| format!("loading {}", a.input.display()))?;
    spec.check(hip.fs()).map_err(|e| usage(e.to_string()))?;
    let hip = preprocess(&hip, &spec)?;
    let nac = preprocess(&nac, &spec)?;
    write_columns(&a.out, &hip, &nac)?;
    let sidecar = sidecar_path(&a.input);
    if sidecar.exists() {
        write_meta(&sidecar_path(&a.out), &read_meta(&sidecar)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ChannelValidation {
    #[serde(flatten)]
    summary: ValidationSummary,
    passed: bool,
}

fn validate_cmd(a: ValidateArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let (hip, nac) = load_signals(&a.input, a.fs).with_context(|| format!("loading {}", a.input.display()))?;
    let mut out = BTreeMap::new();
    for (site, signal) in [(SiteLabel::Hip, &hip), (SiteLabel::Nac, &nac)] {
        let summary = validate_signal(signal, a.window, a.max_windows)?;
        let passed = validate_gate(
            summary.mean_hurst,
            summary.mean_lyapunov,
            summary.mean_lag1,
            &config.gate,
        );
        for w in &summary.warnings {
            eprintln!("warning: {w}");
        }
        out.insert(site, ChannelValidation { summary, passed });
    }
    emit_json(&out, a.report.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitOutput {
    column: SiteLabel,
    gauss: Gauss1D,
    model_selection: ModelSelection,
}

fn fit_cmd(a: FitArgs) -> Result<ExitCode> {
    let (hip, nac) = load_signals(&a.input, a.fs).with_context(|| format!("loading {}", a.input.display()))?;
    let signal = pick(hip, nac, a.column);
    let out = FitOutput {
        column: site_label(a.column),
        gauss: fit_gauss1d(signal.samples())?,
        model_selection: select_model(signal.samples())?,
    };
    emit_json(&out, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn load_pair(pair: &PairArgs, config: &PipelineConfig) -> Result<(SessionRecord, SessionRecord)> {
    let mut pre = load_record(&pair.pre, PhaseLabel::Pre)?;
    let mut post = load_record(&pair.post, PhaseLabel::Post)?;
    if !pair.raw {
        pre = pre.map_signals(|s| preprocess(s, &config.filter))?;
        post = post.map_signals(|s| preprocess(s, &config.filter))?;
    }
    Ok((pre, post))
}

#[derive(Serialize)]
struct Discrete1d {
    /// Sum over windows of the per-window divergence, bits.
    windowed_jsd_bits: f64,
    /// Divergence of the whole-session histograms, bits.
    session_jsd_bits: f64,
}

#[derive(Serialize)]
struct Gauss2d {
    kld_pre_post_nats: f64,
    kld_post_pre_nats: f64,
}

fn kld_cmd(a: KldArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let (pre, post) = load_pair(&a.pair, config)?;
    match a.mode {
        KldMode::Discrete1d => {
            let mut out = BTreeMap::new();
            for site in SiteLabel::ALL.iter().copied() {
                let (p, q) = (pre.site(site), post.site(site));
                let (hp, hq) = pooled_histograms(p.samples(), q.samples(), config.bins)?;
                out.insert(
                    site,
                    Discrete1d {
                        windowed_jsd_bits: kld1d_score(p, q, &config.score_settings())?,
                        session_jsd_bits: jsd_discrete(&hp, &hq)?,
                    },
                );
            }
            emit_json(&out, a.out.as_deref())?;
        }
        KldMode::Gauss2d => {
            let out = Gauss2d {
                kld_pre_post_nats: kld2d_score(&pre, &post)?,
                kld_post_pre_nats: kld2d_score(&post, &pre)?,
            };
            emit_json(&out, a.out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn classify_cmd(a: ClassifyArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let thresholds: Thresholds = match &a.thresholds {
        Some(path) => read_json(path)?,
        None => config.thresholds,
    };
    thresholds
        .check()
        .map_err(|e| usage(format!("invalid thresholds: {e}")))?;
    let (pre, post) = load_pair(&a.pair, config)?;
    let result = match a.method {
        MethodArg::Corr => classify_by_correlation(&pre, &post, &thresholds)?,
        MethodArg::Kld1d => classify_by_kld1d(&pre, &post, &thresholds, &config.score_settings())?,
        MethodArg::Kld2d => classify_by_kld2d(&pre, &post, &thresholds)?,
    };
    emit_json(&result, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn calibrate_cmd(a: CalibrateArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let result = calibrate_cohort(&a.cohort, config)?;
    for name in &result.calibration.overlapping {
        eprintln!("warning: groups overlap for {name}; the threshold cannot separate them");
    }
    for (id, e) in &result.errors {
        eprintln!("error: {id}: {e}");
    }
    emit_json(&result.calibration.thresholds, Some(&a.out))?;
    Ok(if result.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn sdp_cmd(a: SdpArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let mut cfg = config.sdp;
    cfg.lag = a.lag.unwrap_or(cfg.lag);
    cfg.theta_deg = a.theta.unwrap_or(cfg.theta_deg);
    cfg.zeta_deg = a.zeta.unwrap_or(cfg.zeta_deg);
    cfg.check().map_err(|e| usage(e.to_string()))?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let (hip, nac) = load_signals(&a.input, a.fs).with_context(|| format!("loading {}", a.input.display()))?;
    let signal = pick(hip, nac, a.column);
    let x = signal.samples();
    let start = (a.start * signal.fs()).round() as usize;
    if a.start < 0.0 || start >= x.len() {
        return Err(usage(format!("--start {} s is outside the recording", a.start)));
    }
    let end = match a.seconds {
        Some(s) if s > 0.0 => (start + (s * signal.fs()).round() as usize).min(x.len()),
        Some(_) => return Err(usage("--seconds must be positive")),
        None => x.len(),
    };
    let dots = sdp_transform(&x[start..end], &cfg)?;
    let svg = sdp_render(&dots, a.width, &config.sdp_style).map_err(|e| usage(e.to_string()))?;
    fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.out_csv {
        let mut text = String::from("radius,angle_deg\n");
        for d in &dots.dots {
            text.push_str(&format!("{},{}\n", d.radius, d.angle_deg));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn synth_cmd(a: SynthArgs, seed: Option<u64>) -> Result<ExitCode> {
    let spec = CohortSpec {
        subjects_per_group: a.subjects,
        duration_s: a.duration,
        fs: a.fs,
        seed: seed.unwrap_or(CohortSpec::default().seed),
    };
    let treatments: Vec<TreatmentLabel> = if a.profile.is_empty() {
        TreatmentLabel::ALL.to_vec()
    } else {
        a.profile
            .iter()
            .map(|p| match p {
                Profile::Saline => TreatmentLabel::Saline,
                Profile::Morphine => TreatmentLabel::Morphine,
                Profile::Food => TreatmentLabel::Food,
            })
            .collect()
    };
    let jobs: Vec<(TreatmentLabel, usize)> = treatments
        .iter()
        .flat_map(|t| (0..a.subjects).map(move |i| (*t, i)))
        .collect();
    jobs.par_iter()
        .map(|(t, i)| -> Result<()> {
            let pair = gen_subject(&EffectProfile::default_for(*t), *i, &spec).map_err(|e| usage(e.to_string()))?;
            write_sessions(&a.out, [&pair.pre, &pair.post])?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(ExitCode::SUCCESS)
}

fn pipeline_cmd(a: PipelineArgs, config: &PipelineConfig) -> Result<ExitCode> {
    let report = run_pipeline(&a.cohort, &a.out, config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for s in &report.subjects {
        if let Some(e) = &s.error {
            eprintln!("error: {}: {e}", s.subject_id);
        }
    }
    for (method, acc) in &report.accuracy {
        eprintln!("{method}: {}/{} correct", acc.correct, acc.total);
    }
    Ok(if report.has_subject_errors() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

#[derive(Serialize)]
struct GroupResult {
    group: String,
    result: TestResult,
}

fn stats_cmd(a: StatsArgs) -> Result<ExitCode> {
    let groups: Vec<Vec<f64>> = a
        .groups
        .iter()
        .map(|p| read_group(p, a.column.as_deref()))
        .collect::<Result<_>>()?;
    let alt = match a.alternative {
        AltArg::TwoSided => Alternative::TwoSided,
        AltArg::Less => Alternative::Less,
        AltArg::Greater => Alternative::Greater,
    };
    let two = || -> Result<(&[f64], &[f64])> {
        match groups.as_slice() {
            [x, y] => Ok((x, y)),
            _ => Err(usage(format!(
                "this test needs exactly two groups, got {}",
                groups.len()
            ))),
        }
    };
    let out = a.out.as_deref();
    match a.test {
        TestArg::Ks => {
            let results = a
                .groups
                .iter()
                .zip(&groups)
                .map(|(p, g)| {
                    Ok(GroupResult {
                        group: p.display().to_string(),
                        result: ks_normality(g)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            emit_json(&results, out)?;
        }
        TestArg::T => {
            let (x, y) = two()?;
            let kind = match (a.paired, a.equal_var) {
                (true, _) => TKind::Paired,
                (false, true) => TKind::Student,
                (false, false) => TKind::Welch,
            };
            emit_json(&t_test(x, y, kind, alt)?, out)?;
        }
        TestArg::Mwu => {
            let (x, y) = two()?;
            emit_json(&mann_whitney_u(x, y, alt)?, out)?;
        }
        TestArg::Wilcoxon => {
            let (x, y) = two()?;
            emit_json(&wilcoxon_signed(x, y, alt)?, out)?;
        }
        TestArg::Anova => emit_json(&anova_tukey(&groups)?, out)?,
    }
    Ok(ExitCode::SUCCESS)
}
