//! Command-line front end: trace generation, diagnostics, pruning runs,
//! and FLOPs estimates as reproducible file-based invocations.
//!
//! Every subcommand takes an `--out` directory and leaves exactly one
//! `manifest.json` there describing the resolved flags, so any output can
//! be regenerated from its manifest. All randomness flows from `--seed`;
//! nothing reads the clock or the environment, so a repeated invocation is
//! byte-identical. Exit codes: 0 success, 1 runtime or data failure,
//! 2 usage failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::efficiency::{self, ModelDims, StackDims, TokenSchedule};
use crate::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use crate::engine::{self, PruneConfig, PruneStage, ScheduleSource};
use crate::flow;
use crate::trace::read_trace;

#[derive(Debug, Parser)]
#[command(
    name = "flowcut",
    version,
    about = "Information-flow-aware visual token pruning toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a deterministic encoder trace from a synthetic input
    Trace(TraceArgs),
    /// Emit diagnostics CSV (flow, entropy, density, criteria) from a trace
    Analyze(AnalyzeArgs),
    /// Run the pruning schedule on a trace or a live encoder
    Prune(PruneArgs),
    /// Estimate prefill FLOPs for a model and token budget
    Flops(FlopsArgs),
}

/// Grid dimensions given as `RxC`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
        let rows = r
            .trim()
            .parse()
            .map_err(|_| format!("bad row count '{r}'"))?;
        let cols = c
            .trim()
            .parse()
            .map_err(|_| format!("bad column count '{c}'"))?;
        if rows == 0 || cols == 0 {
            return Err("grid dimensions must be positive".into());
        }
        Ok(Self { rows, cols })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Stage given as `LAYER:TARGET`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageSpec {
    pub location: usize,
    pub target: usize,
}

impl FromStr for StageSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (l, t) = s
            .split_once(':')
            .ok_or_else(|| format!("expected LAYER:TARGET, got '{s}'"))?;
        Ok(Self {
            location: l.trim().parse().map_err(|_| format!("bad layer '{l}'"))?,
            target: t.trim().parse().map_err(|_| format!("bad target '{t}'"))?,
        })
    }
}

/// Cumulative weighting given as `HISTORY:CURRENT`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightSpec {
    pub history: f64,
    pub current: f64,
}

impl FromStr for WeightSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, c) = s
            .split_once(':')
            .ok_or_else(|| format!("expected HISTORY:CURRENT, got '{s}'"))?;
        Ok(Self {
            history: h.trim().parse().map_err(|_| format!("bad weight '{h}'"))?,
            current: c.trim().parse().map_err(|_| format!("bad weight '{c}'"))?,
        })
    }
}

/// Encoder flags shared by `trace` and `prune --live`.
#[derive(Debug, Args, Serialize)]
pub struct EncoderArgs {
    /// Encoder depth
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    /// Attention heads
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Model width (must divide by heads)
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// MLP width (default 4x dim)
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    /// Patch grid as RxC
    #[arg(long, default_value = "8x8")]
    pub grid: GridSpec,
    /// Seed for weights and the synthetic input
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prepend a CLS token (the default)
    #[arg(long, conflicts_with = "no_cls")]
    pub cls: bool,
    /// Omit the CLS token
    #[arg(long)]
    pub no_cls: bool,
}

impl EncoderArgs {
    fn to_config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.dim,
            mlp_dim: self.mlp_dim.unwrap_or(4 * self.dim),
            grid_rows: self.grid.rows,
            grid_cols: self.grid.cols,
            has_cls: !self.no_cls,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Output directory (receives trace.fctr and manifest.json)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzeKind {
    Flow,
    Entropy,
    Density,
    Criteria,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Which diagnostic to emit
    #[arg(value_enum)]
    pub kind: AnalyzeKind,
    /// Input trace file
    pub trace: PathBuf,
    /// Layer for the criteria report (default: penultimate)
    #[arg(long)]
    pub layer: Option<usize>,
    /// Contradiction fraction for the criteria report
    #[arg(long, default_value_t = 0.2)]
    pub q: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselinePreset {
    /// One attention-only event at the penultimate layer
    SingleLayer,
    /// Equal per-event quotas, attention-only, no history
    FixedRatio,
}

#[derive(Debug, Args, Serialize)]
pub struct PruneArgs {
    /// Input trace file (omit when running --live)
    #[arg(required_unless_present = "live", conflicts_with = "live")]
    pub trace: Option<PathBuf>,
    /// Re-encode live over the shrinking token set instead of masking a
    /// recorded trace
    #[arg(long)]
    pub live: bool,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Final number of patch tokens to keep
    #[arg(long)]
    pub target: usize,
    /// Prune every N layers
    #[arg(long, default_value_t = 2)]
    pub interval: usize,
    /// Fire exactly one prune event per stage, at the stage location
    #[arg(long)]
    pub single_event: bool,
    /// Disable the entropy-adaptive prune count
    #[arg(long)]
    pub no_adaptive: bool,
    /// Disable cumulative score tracking
    #[arg(long)]
    pub no_cumulative: bool,
    /// Disable multi-criteria scoring (attention only)
    #[arg(long)]
    pub no_multicriteria: bool,
    /// Replace the toggles with a named baseline configuration
    #[arg(long, value_enum)]
    pub baseline: Option<BaselinePreset>,
    /// Stage as LAYER:TARGET; repeat for multi-stage schedules
    #[arg(long = "stage")]
    pub stages: Vec<StageSpec>,
    /// History:current weighting of the cumulative score
    #[arg(long, default_value = "0.5:0.5")]
    pub weights: WeightSpec,
    /// Include per-layer score vectors in the report
    #[arg(long)]
    pub scores: bool,
    /// Output directory (receives report.json, decisions.csv, manifest.json)
    #[arg(long)]
    pub out: PathBuf,
}

impl PruneArgs {
    fn to_config(&self) -> PruneConfig {
        let mut cfg = PruneConfig::new(self.target);
        cfg.interval = self.interval;
        cfg.single_event = self.single_event;
        cfg.adaptive_count = !self.no_adaptive;
        cfg.cumulative = !self.no_cumulative;
        cfg.multi_criteria = !self.no_multicriteria;
        cfg.weight_history = self.weights.history;
        cfg.weight_current = self.weights.current;
        cfg.stages = self
            .stages
            .iter()
            .map(|s| PruneStage {
                location: s.location,
                target: s.target,
            })
            .collect();
        cfg.record_scores = self.scores;
        match self.baseline {
            Some(BaselinePreset::SingleLayer) => {
                cfg.adaptive_count = false;
                cfg.cumulative = false;
                cfg.multi_criteria = false;
                cfg.single_event = true;
            }
            Some(BaselinePreset::FixedRatio) => {
                cfg.adaptive_count = false;
                cfg.cumulative = false;
                cfg.multi_criteria = false;
            }
            None => {}
        }
        cfg
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    /// Published architecture preset
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(efficiency::PRESET_NAMES))]
    pub model_preset: Option<String>,
    /// Language stack depth (custom dims)
    #[arg(long, required_unless_present = "model_preset")]
    pub layers: Option<usize>,
    /// Language hidden width (custom dims)
    #[arg(long, required_unless_present = "model_preset")]
    pub dim: Option<usize>,
    /// Language MLP width (custom dims)
    #[arg(long, required_unless_present = "model_preset")]
    pub mlp: Option<usize>,
    /// Vision tower depth (custom dims)
    #[arg(long)]
    pub vision_layers: Option<usize>,
    /// Vision tower hidden width (custom dims)
    #[arg(long)]
    pub vision_dim: Option<usize>,
    /// Vision tower MLP width (custom dims)
    #[arg(long)]
    pub vision_mlp: Option<usize>,
    /// Visual tokens entering the language stack
    #[arg(long)]
    pub visual_tokens: usize,
    /// Text tokens in the prompt
    #[arg(long, default_value_t = 40)]
    pub text_tokens: usize,
    /// Vision tower sequence length (default: preset value, 0 without one)
    #[arg(long)]
    pub vision_tokens: Option<usize>,
    /// Optional output directory (receives flops.json and manifest.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    args: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(manifest)?;
    body.push('\n');
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Run one parsed invocation. Errors map to exit code 1 in `main`.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Trace(args) => cmd_trace(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Prune(args) => cmd_prune(args),
        Command::Flops(args) => cmd_flops(args),
    }
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let cfg = args.encoder.to_config();
    let mut state = build_encoder(&cfg)?;
    let layers = state.encode(&cfg.synthetic_grid())?;
    let trace = trace_from_layers(&cfg, layers)?;
    ensure_out_dir(&args.out)?;
    let trace_path = args.out.join("trace.fctr");
    crate::trace::write_trace(&trace, &trace_path)?;
    write_manifest(
        &args.out,
        &RunManifest {
            tool: "flowcut",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "trace",
            args: serde_json::to_value(&args)?,
            seed: Some(cfg.seed),
            inputs: vec![],
            outputs: vec!["trace.fctr".into()],
        },
    )?;
    println!(
        "wrote {} ({} layers, {} tokens)",
        trace_path.display(),
        trace.num_layers(),
        trace.num_tokens
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let trace = read_trace(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let (file_name, body) = match args.kind {
        AnalyzeKind::Entropy => {
            let curve = flow::entropy_curve(&trace)?;
            ("entropy.csv", flow::entropy_csv(&curve))
        }
        AnalyzeKind::Flow => {
            let graphs = flow::flow_graphs(&trace)?;
            ("flow.csv", flow::flow_csv(&graphs))
        }
        AnalyzeKind::Density => {
            let stats = flow::density_stats(&trace)?;
            ("density.csv", flow::density_csv(&stats))
        }
        AnalyzeKind::Criteria => {
            let layer = args.layer.unwrap_or(trace.num_layers().saturating_sub(2));
            let report = flow::criteria_report(&trace, layer, args.q)?;
            ("criteria.csv", flow::criteria_csv(&report))
        }
    };
    ensure_out_dir(&args.out)?;
    let out_path = args.out.join(file_name);
    fs::write(&out_path, body).with_context(|| format!("writing {}", out_path.display()))?;
    write_manifest(
        &args.out,
        &RunManifest {
            tool: "flowcut",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "analyze",
            args: serde_json::to_value(&args)?,
            seed: None,
            inputs: vec![args.trace.display().to_string()],
            outputs: vec![file_name.into()],
        },
    )?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_prune(args: PruneArgs) -> Result<()> {
    let cfg = args.to_config();
    let report = if args.live {
        let enc_cfg = args.encoder.to_config();
        let mut state = build_encoder(&enc_cfg)?;
        state.embed_input(&enc_cfg.synthetic_grid())?;
        engine::run_schedule(ScheduleSource::Live(&mut state), &cfg)?
    } else {
        let path = args
            .trace
            .as_ref()
            .expect("clap requires trace unless --live");
        let trace =
            read_trace(path).with_context(|| format!("reading trace {}", path.display()))?;
        engine::run_schedule(ScheduleSource::Trace(&trace), &cfg)?
    };
    if report.final_kept.len() != args.target {
        bail!(
            "schedule ended with {} tokens, expected {}",
            report.final_kept.len(),
            args.target
        );
    }
    ensure_out_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    fs::write(&report_path, body).with_context(|| format!("writing {}", report_path.display()))?;
    let decisions_path = args.out.join("decisions.csv");
    fs::write(&decisions_path, report.decisions_csv())
        .with_context(|| format!("writing {}", decisions_path.display()))?;
    write_manifest(
        &args.out,
        &RunManifest {
            tool: "flowcut",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "prune",
            args: serde_json::to_value(&args)?,
            seed: args.live.then_some(args.encoder.seed),
            inputs: args.trace.iter().map(|p| p.display().to_string()).collect(),
            outputs: vec!["report.json".into(), "decisions.csv".into()],
        },
    )?;
    println!(
        "kept {} of {} tokens over {} prune events",
        report.final_kept.len(),
        report.records.first().map(|r| r.active_before).unwrap_or(0),
        report.records.iter().filter(|r| r.prune_event).count()
    );
    Ok(())
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    let (dims, preset_vision_tokens) = match &args.model_preset {
        Some(name) => {
            let preset = efficiency::preset(name)?;
            (preset.dims, preset.vision_tokens)
        }
        None => {
            let language = StackDims {
                layers: args.layers.expect("clap requires layers without a preset"),
                hidden: args.dim.expect("clap requires dim without a preset"),
                intermediate: args.mlp.expect("clap requires mlp without a preset"),
            };
            let vision = match (args.vision_layers, args.vision_dim, args.vision_mlp) {
                (Some(layers), Some(hidden), Some(intermediate)) => {
                    Some(StackDims { layers, hidden, intermediate })
                }
                (None, None, None) => None,
                _ => bail!(
                    "custom vision dims need --vision-layers, --vision-dim, and --vision-mlp together"
                ),
            };
            (ModelDims { language, vision }, 0)
        }
    };
    // no visual tokens means no image was encoded, so the tower is idle
    let vision_tokens = if args.visual_tokens == 0 {
        0
    } else {
        args.vision_tokens.unwrap_or(preset_vision_tokens)
    };
    let sched = TokenSchedule::constant(
        dims.language.layers,
        args.visual_tokens,
        vision_tokens,
        args.text_tokens,
    );
    let estimate = efficiency::estimate(&dims, &sched)?;
    let mut body = serde_json::to_string_pretty(&estimate)?;
    body.push('\n');
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        let path = out.join("flops.json");
        fs::write(&path, &body).with_context(|| format!("writing {}", path.display()))?;
        write_manifest(
            out,
            &RunManifest {
                tool: "flowcut",
                version: env!("CARGO_PKG_VERSION"),
                subcommand: "flops",
                args: serde_json::to_value(&args)?,
                seed: None,
                inputs: vec![],
                outputs: vec!["flops.json".into()],
            },
        )?;
    }
    print!("{body}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_parses_both_cases() {
        let g: GridSpec = "8x8".parse().unwrap();
        assert_eq!((g.rows, g.cols), (8, 8));
        let g: GridSpec = "3X5".parse().unwrap();
        assert_eq!((g.rows, g.cols), (3, 5));
        assert!("8".parse::<GridSpec>().is_err());
        assert!("0x4".parse::<GridSpec>().is_err());
    }

    #[test]
    fn stage_and_weight_specs_parse() {
        let s: StageSpec = "10:32".parse().unwrap();
        assert_eq!((s.location, s.target), (10, 32));
        let w: WeightSpec = "0.6:0.4".parse().unwrap();
        assert_eq!((w.history, w.current), (0.6, 0.4));
        assert!("10".parse::<StageSpec>().is_err());
    }

    #[test]
    fn baseline_presets_override_toggles() {
        let args = PruneArgs {
            trace: None,
            live: true,
            encoder: EncoderArgs {
                layers: 12,
                heads: 4,
                dim: 64,
                mlp_dim: None,
                grid: "8x8".parse().unwrap(),
                seed: 0,
                cls: false,
                no_cls: false,
            },
            target: 16,
            interval: 2,
            single_event: false,
            no_adaptive: false,
            no_cumulative: false,
            no_multicriteria: false,
            baseline: Some(BaselinePreset::SingleLayer),
            stages: vec![],
            weights: "0.5:0.5".parse().unwrap(),
            scores: false,
            out: PathBuf::from("unused"),
        };
        let cfg = args.to_config();
        assert!(!cfg.adaptive_count && !cfg.cumulative && !cfg.multi_criteria);
        assert!(cfg.single_event);
    }

    #[test]
    fn cli_parses_a_full_prune_invocation() {
        let cli = Cli::try_parse_from([
            "flowcut",
            "prune",
            "--live",
            "--target",
            "16",
            "--interval",
            "2",
            "--stage",
            "10:32",
            "--stage",
            "11:16",
            "--out",
            "/tmp/x",
        ])
        .unwrap();
        match cli.command {
            Command::Prune(p) => {
                assert_eq!(p.target, 16);
                assert_eq!(p.stages.len(), 2);
            }
            _ => panic!("expected prune"),
        }
    }

    #[test]
    fn trace_requires_out_flag() {
        assert!(Cli::try_parse_from(["flowcut", "trace"]).is_err());
    }

    #[test]
    fn prune_requires_trace_or_live() {
        assert!(
            Cli::try_parse_from(["flowcut", "prune", "--target", "8", "--out", "/tmp/x"]).is_err()
        );
    }
}
