use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fastconformer::attention::reference::masked_mhsa;
use fastconformer::attention::{
    full_mhsa, limited_global_mhsa, limited_mhsa, AttentionKind, AttentionParams,
};
use fastconformer::encoder::{build_config, Encoder, EncoderConfig, EncoderWeights, Preset};
use fastconformer::longform::{
    buffered_encode_with_report, ctc_greedy_decode, plan_buffers, read_features, write_features,
    CtcHead,
};
use fastconformer::profiler::{
    corpus_feasibility, count_macs, profile_reference_schemas, read_manifest, ProfileReport,
};
use fastconformer::{MacCounter, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{AttentionArg, Format, ModelArgs};

/// Tolerance for the chunked-vs-reference comparison.
const EQUIVALENCE_TOL: f32 = 1e-5;

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<fastconformer::Error> for CliError {
    fn from(e: fastconformer::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io_error", format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

/// Resolves preset/config plus attention overrides. Defaults to A4.
pub fn resolve_config(m: &ModelArgs) -> Result<EncoderConfig> {
    let mut cfg = match (&m.preset, &m.config) {
        (Some(_), Some(_)) => {
            return Err(CliError::new(
                "usage_error",
                "--preset and --config are mutually exclusive",
            ))
        }
        (Some(p), None) => build_config(p.parse::<Preset>()?),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            EncoderConfig::from_json(&text)?
        }
        (None, None) => build_config(Preset::A4),
    };
    if let Some(kind) = m.attention {
        cfg.attention.kind = match kind {
            AttentionArg::Full => AttentionKind::Full,
            AttentionArg::Limited => AttentionKind::Limited,
            AttentionArg::LimitedWithGlobal => AttentionKind::LimitedWithGlobal,
        };
    }
    if let Some(w) = m.window_left {
        cfg.attention.window_left = w;
    }
    if let Some(w) = m.window_right {
        cfg.attention.window_right = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seconds_to_frames(cfg: &EncoderConfig, seconds: f64) -> Result<usize> {
    if !seconds.is_finite() || seconds <= 0.0 {
        return Err(CliError::new(
            "invalid_argument",
            format!("duration must be a positive number of seconds, got {seconds}"),
        ));
    }
    Ok(cfg.frames_for_seconds(seconds))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_line(v: &serde_json::Value) -> String {
    format!(
        "{}\n",
        serde_json::to_string_pretty(v).expect("json values serialize")
    )
}

fn load_encoder(cfg: EncoderConfig, weights: Option<&Path>, seed: u64) -> Result<Encoder> {
    match weights {
        Some(p) => {
            let f = File::open(p).map_err(|e| io_err(p, e))?;
            let w = EncoderWeights::read_from(&cfg, BufReader::new(f))?;
            Ok(Encoder::new(cfg, w)?)
        }
        None => Ok(Encoder::from_seed(cfg, seed)?),
    }
}

fn load_features(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_features(BufReader::new(f))?)
}

fn save_features(path: &Path, t: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_features(&mut w, t)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn profile(m: &ModelArgs, duration: f64, format: Format, output: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(m)?;
    let frames = seconds_to_frames(&cfg, duration)?;
    let mut report = count_macs(&cfg, frames)?;
    if let Some(p) = &m.preset {
        report = report.with_name(p.parse::<Preset>()?.name());
    }
    let text = match format {
        Format::Json => format!("{}\n", report.to_json()),
        Format::Table => report.render_table(),
    };
    emit(&text, output)
}

pub fn compare(names: &[String], duration: f64, format: Format) -> Result<()> {
    let mut unique: Vec<&str> = Vec::new();
    let mut duplicates = Vec::new();
    for n in names {
        if unique.contains(&n.as_str()) {
            duplicates.push(n);
        } else {
            unique.push(n);
        }
    }
    if unique.len() < 2 {
        return Err(CliError::new(
            "usage_error",
            "compare needs at least two distinct schema names",
        ));
    }
    for n in duplicates {
        eprintln!("warning: duplicate schema {n:?} ignored");
    }
    // Reference schemas all use the 80-feature, 10 ms front end.
    let frames = seconds_to_frames(&build_config(Preset::A0), duration)?;
    let mut reports: Vec<ProfileReport> = unique
        .iter()
        .map(|n| profile_reference_schemas(n, frames))
        .collect::<std::result::Result<_, _>>()?;
    reports.sort_by_key(|r| r.totals.macs);
    let text = match format {
        Format::Json => json_line(&json!(reports
            .iter()
            .map(|r| json!({
                "schema_name": r.schema_name,
                "input_duration_s": r.input_duration_s,
                "params": r.totals.params,
                "macs": r.totals.macs,
                "gmacs": r.gmacs(),
                "peak_memory_bytes": r.peak_memory_bytes,
            }))
            .collect::<Vec<_>>())),
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "{:<20}  {:>10}  {:>10}  {:>12}",
                "schema", "params M", "GMACs", "peak MiB"
            );
            for r in &reports {
                let _ = writeln!(
                    s,
                    "{:<20}  {:>10.2}  {:>10.2}  {:>12.1}",
                    r.schema_name,
                    r.totals.params as f64 / 1e6,
                    r.gmacs(),
                    r.peak_memory_bytes as f64 / (1024.0 * 1024.0)
                );
            }
            s
        }
    };
    emit(&text, None)
}

pub fn encode(
    m: &ModelArgs,
    input: &Path,
    output: &Path,
    weights: Option<&Path>,
    seed: u64,
    format: Format,
) -> Result<()> {
    let cfg = resolve_config(m)?;
    let x = load_features(input)?;
    let encoder = load_encoder(cfg, weights, seed)?;
    let mut counter = MacCounter::new();
    let y = encoder.encode(&x, &mut counter)?;
    save_features(output, &y)?;
    let (t_out, d) = y.dims2()?;
    let text = match format {
        Format::Json => json_line(&json!({
            "input_frames": x.dims2()?.0,
            "output_frames": t_out,
            "d_model": d,
            "macs": counter.total(),
        })),
        Format::Table => format!(
            "encoded {} -> {t_out} x {d} frames\nmacs {}\n",
            x.dims2()?.0,
            counter.total()
        ),
    };
    emit(&text, None)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    let n = shape.iter().product();
    Ok(Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )?)
}

pub fn check_equivalence(
    m: &ModelArgs,
    frames: usize,
    window: Option<usize>,
    seed: u64,
    format: Format,
) -> Result<()> {
    let cfg = resolve_config(m)?;
    if frames == 0 {
        return Err(CliError::new(
            "invalid_argument",
            "--frames must be positive",
        ));
    }
    let mut ctx = cfg.attention;
    if ctx.kind == AttentionKind::Full {
        ctx.kind = AttentionKind::Limited;
    }
    if let Some(w) = window {
        ctx.window_left = w;
        ctx.window_right = w;
    }
    let (d, heads) = (cfg.d_model, cfg.n_heads);
    let global = ctx.has_global();
    let params = AttentionParams::random(d, heads, global, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = uniform(&mut rng, &[frames, d])?;
    let g = uniform(&mut rng, &[d])?;

    let mut counter = MacCounter::new();
    let (chunked, reference) = if global {
        let (y, gy) = limited_global_mhsa(&x, &g, &params, heads, &ctx, &mut counter)?;
        let r = masked_mhsa(&x, &params, heads, &ctx, Some(&g))?;
        let rg = r.global.expect("reference returns the global row");
        (
            Tensor::concat_rows(&[y, gy.reshape(&[1, d])?])?,
            Tensor::concat_rows(&[r.output, rg.reshape(&[1, d])?])?,
        )
    } else {
        let y = limited_mhsa(&x, &params, heads, &ctx, &mut counter)?;
        (y, masked_mhsa(&x, &params, heads, &ctx, None)?.output)
    };
    let reference_diff = chunked.max_abs_diff(&reference)?;
    let full = full_mhsa(&x, &params, heads, &mut MacCounter::new())?;
    let full_diff = chunked.slice_rows(0, frames)?.max_abs_diff(&full)?;
    let covers = !global && ctx.window_left.min(ctx.window_right) + 1 >= frames;
    let pass = reference_diff <= EQUIVALENCE_TOL && (!covers || full_diff <= EQUIVALENCE_TOL);

    let kind = match ctx.kind {
        AttentionKind::LimitedWithGlobal => "limited_with_global",
        _ => "limited",
    };
    let text = match format {
        Format::Json => json_line(&json!({
            "kind": kind,
            "frames": frames,
            "window_left": ctx.window_left,
            "window_right": ctx.window_right,
            "d_model": d,
            "heads": heads,
            "max_abs_diff_reference": reference_diff,
            "max_abs_diff_full": full_diff,
            "window_covers_sequence": covers,
            "tolerance": EQUIVALENCE_TOL,
            "macs": counter.total(),
            "pass": pass,
        })),
        Format::Table => format!(
            "{kind} attention, T={frames}, window {}/{}\nmax |chunked - masked reference| {reference_diff:.3e}\nmax |chunked - full| {full_diff:.3e}\n{}\n",
            ctx.window_left,
            ctx.window_right,
            if pass { "PASS" } else { "FAIL" }
        ),
    };
    emit(&text, None)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::new(
            "equivalence_failed",
            format!(
                "reference diff {reference_diff:.3e}, full diff {full_diff:.3e}, tolerance {EQUIVALENCE_TOL:.0e}"
            ),
        ))
    }
}

pub fn feasibility(
    m: &ModelArgs,
    manifest: &Path,
    length_field: &str,
    format: Format,
) -> Result<()> {
    let cfg = resolve_config(m)?;
    let f = File::open(manifest).map_err(|e| io_err(manifest, e))?;
    let records = read_manifest(BufReader::new(f), length_field)?;
    if records.is_empty() {
        eprintln!("warning: manifest {} has no records", manifest.display());
    }
    let report = corpus_feasibility(&records, &cfg.subsampling, cfg.frame_hop_ms);
    let text = match format {
        Format::Json => json_line(&serde_json::to_value(&report).expect("report serializes")),
        Format::Table => {
            let mut s = format!(
                "records {}  infeasible {}  fraction {:.4}\ndeficit    count\n",
                report.records, report.infeasible, report.infeasible_fraction
            );
            for b in &report.histogram {
                let _ = writeln!(s, "{:<8}  {:>7}", b.label, b.count);
            }
            s
        }
    };
    emit(&text, None)
}

pub struct LongformArgs<'a> {
    pub model: &'a ModelArgs,
    pub input: &'a Path,
    pub output: &'a Path,
    pub weights: Option<&'a Path>,
    pub buffer_s: f64,
    pub context_s: f64,
    pub vocab: usize,
    pub blank: usize,
    pub seed: u64,
    pub decode_output: Option<&'a Path>,
    pub format: Format,
}

pub fn longform(a: &LongformArgs) -> Result<()> {
    let cfg = resolve_config(a.model)?;
    if a.context_s.is_nan() || a.context_s < 0.0 || a.buffer_s <= 2.0 * a.context_s {
        return Err(CliError::new(
            "invalid_argument",
            format!(
                "buffer ({} s) must be longer than twice the context ({} s)",
                a.buffer_s, a.context_s
            ),
        ));
    }
    let buffer = seconds_to_frames(&cfg, a.buffer_s)?;
    let context = cfg.frames_for_seconds(a.context_s);
    let x = load_features(a.input)?;
    let (t, _) = x.dims2()?;
    let plan = plan_buffers(t, buffer, context, context)?;
    let d = cfg.d_model;
    let encoder = load_encoder(cfg, a.weights, a.seed)?;
    let mut counter = MacCounter::new();
    let merged = buffered_encode_with_report(&x, &encoder, &plan, &mut counter)?;
    save_features(a.output, &merged.output)?;
    let head = CtcHead::random(d, a.vocab, a.seed.wrapping_add(1))?;
    let log_probs = head.log_probs(&merged.output, &mut counter)?;
    let decoded = ctc_greedy_decode(&log_probs, a.blank)?;
    if let Some(p) = a.decode_output {
        let text = json_line(&serde_json::to_value(&decoded).expect("decode result serializes"));
        std::fs::write(p, text).map_err(|e| io_err(p, e))?;
    }
    let peak = merged
        .buffers
        .iter()
        .map(|b| b.peak_memory_bytes)
        .max()
        .unwrap_or(0);
    let text = match a.format {
        Format::Json => json_line(&json!({
            "input_frames": t,
            "output_frames": merged.output.dims2()?.0,
            "buffer_frames": buffer,
            "context_frames": context,
            "buffers": merged.buffers,
            "peak_memory_bytes": peak,
            "macs": counter.total(),
            "decode": decoded,
        })),
        Format::Table => {
            let mut s = format!(
                "{t} input frames in {} buffers of {buffer} (context {context})\n",
                merged.buffers.len()
            );
            let _ = writeln!(
                s,
                "{:>4}  {:>17}  {:>17}  {:>17}  {:>12}",
                "buf", "encoded", "kept", "output", "peak MiB"
            );
            for (i, b) in merged.buffers.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{i:>4}  {:>17}  {:>17}  {:>17}  {:>12.1}",
                    format!("{}..{}", b.encoded[0], b.encoded[1]),
                    format!("{}..{}", b.span.keep_start, b.span.keep_end),
                    format!("{}..{}", b.output[0], b.output[1]),
                    b.peak_memory_bytes as f64 / (1024.0 * 1024.0)
                );
            }
            let _ = writeln!(
                s,
                "output {} frames  tokens {}  macs {}",
                merged.output.dims2()?.0,
                decoded.tokens.len(),
                counter.total()
            );
            s
        }
    };
    emit(&text, None)
}
