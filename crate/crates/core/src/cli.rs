//! The `lpfp` command line.
//!
//! Exit status is 0 on success, 2 for argument errors, and otherwise
//! [`Error::exit_code`] of the failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::format::LpfpFormat;
use crate::infer::{
    build_scheme, capture, evaluate, split_samples, Dataset, InferOptions, Manifest, Model,
    QuantizedModel,
};
use crate::infer::manifest::{read_f32_file, read_text};
use crate::pe::verify_packing;
use crate::perf::{candidate_pairs, compute_layers, fmt_num, sweep, sweep_csv, BufferSizes};
use crate::quant::QuantScheme;

#[derive(Debug, Parser)]
#[command(name = "lpfp", version, about = "8-bit minifloat CNN golden model")]
pub struct Cli {
    /// Append a generation timestamp to written reports.
    #[arg(long, global = true)]
    pub stamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print every code of a format with its exact value, ascending.
    FmtTable {
        format: LpfpFormat,
    },
    /// Check the packed four-product multiply-add against independent multiplies.
    VerifyPack {
        #[arg(long, default_value = "M4E3")]
        format: LpfpFormat,
        /// Sweep all operand pairs, also through each lane.
        #[arg(long)]
        exhaustive: bool,
        /// Random quads, each also checked for cross-lane contamination.
        #[arg(long, default_value_t = 1_000_000)]
        random: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Search formats and scale factors; write a scheme file.
    Quantize(QuantizeArgs),
    /// Run the quantized network on raw input samples.
    Infer(InferArgs),
    /// Top-k accuracy of the quantized network against full precision.
    Eval(EvalArgs),
    /// Throughput and bandwidth over (Nm, Np) configurations.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatapathArgs {
    /// Convert accumulators directly, skipping the 16-bit intermediate.
    #[arg(long)]
    pub no_truncate: bool,
    /// Accumulator width in bits (format default if omitted).
    #[arg(long)]
    pub acc_width: Option<u32>,
}

impl DatapathArgs {
    fn options(&self) -> InferOptions {
        InferOptions {
            truncate16: !self.no_truncate,
            accumulator_width: self.acc_width,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "M4E3,M5E2", value_delimiter = ',')]
    pub formats: Vec<LpfpFormat>,
    /// Calibration inputs as a bare f32 blob.
    #[arg(long, required_unless_present = "calib_dataset", conflicts_with = "calib_dataset")]
    pub calib: Option<PathBuf>,
    /// Take calibration inputs from a labeled dataset file instead.
    #[arg(long)]
    pub calib_dataset: Option<PathBuf>,
    /// Number of calibration samples used (from the start of the source).
    #[arg(long, default_value_t = 8)]
    pub calib_count: usize,
    #[arg(long, default_value_t = -16, allow_hyphen_values = true)]
    pub sf_min: i32,
    #[arg(long, default_value_t = 16, allow_hyphen_values = true)]
    pub sf_max: i32,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-tensor CSV of every searched format.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scheme: PathBuf,
    /// Bare f32 blob of one or more samples.
    #[arg(long)]
    pub input: PathBuf,
    /// Output codes, one byte per code, samples back to back.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub datapath: DatapathArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scheme: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "1,5", value_delimiter = ',')]
    pub topk: Vec<usize>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub datapath: DatapathArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Further manifests, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value_t = 768)]
    pub dsp: u64,
    #[arg(long, default_value_t = 200e6)]
    pub freq: f64,
    /// (Nm, Np) pairs as `NmxNp`, comma separated; all valid pairs with both
    /// at least 8 if omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pub pairs: Vec<(u64, u64)>,
    #[arg(long, default_value_t = BufferSizes::default().ifmb_bytes)]
    pub ifmb_bytes: u64,
    #[arg(long, default_value_t = BufferSizes::default().wb_bytes)]
    pub wb_bytes: u64,
    #[arg(long, default_value_t = BufferSizes::default().ofmb_bytes)]
    pub ofmb_bytes: u64,
    /// Flag layers needing more than this off-chip bandwidth (MB/s).
    #[arg(long)]
    pub board_bw: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(u64, u64), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("expected NmxNp, got `{s}`"))?;
    Ok((
        a.parse().map_err(|_| format!("bad Nm `{a}`"))?,
        b.parse().map_err(|_| format!("bad Np `{b}`"))?,
    ))
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(
                *p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_report(path: &Path, text: &str, stamp: bool) -> Result<()> {
    let mut text = text.to_string();
    if stamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(text, "# generated {secs}");
    }
    write_file(path, text.as_bytes())
}

fn load_scheme(path: &Path) -> Result<QuantScheme> {
    read_text(path)?.parse()
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status. Reports go to `out`, errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut text = String::new();
    match &cli.command {
        Command::FmtTable { format } => text = fmt_table(*format),
        Command::VerifyPack {
            format,
            exhaustive,
            random,
            seed,
        } => {
            let r = verify_packing(*format, *exhaustive, *random, *seed)?;
            let headline = if *exhaustive { r.pairs } else { r.random };
            let _ = writeln!(
                text,
                "{} {}/{}",
                if r.ok() { "PASS" } else { "FAIL" },
                headline.passed,
                headline.checked
            );
            for (name, t) in [
                ("pairs", r.pairs),
                ("lanes", r.lanes),
                ("random", r.random),
                ("contamination", r.contamination),
            ] {
                if t.checked > 0 {
                    let _ = writeln!(text, "{name} {}/{}", t.passed, t.checked);
                }
            }
            let _ = writeln!(text, "max_aligned_magnitude {}", r.max_aligned_magnitude);
            let _ = writeln!(text, "observed_width_bits {}", r.observed_width());
            let _ = writeln!(text, "declared_width_bits {}", r.aligned_width);
            if !r.ok() {
                out.write_all(text.as_bytes()).map_err(|e| Error::io("stdout", e))?;
                return Err(Error::Constraint("packed products differ from direct multiplies".into()));
            }
        }
        Command::Quantize(a) => {
            let calib_src = a.calib.as_ref().or(a.calib_dataset.as_ref()).expect("clap enforces one");
            require(&[&a.model.model, &a.model.weights, calib_src])?;
            let model = Model::load(&a.model.model, &a.model.weights)?;
            let mut samples = match (&a.calib, &a.calib_dataset) {
                (Some(p), _) => split_samples(&read_f32_file(p)?, model.graph.input)?,
                (None, Some(p)) => Dataset::load(p)?.inputs,
                (None, None) => unreachable!(),
            };
            samples.truncate(a.calib_count);
            let cal = capture(&model, &samples)?;
            let (scheme, report) = build_scheme(&model, &cal, &a.formats, a.sf_min..=a.sf_max)?;
            write_report(&a.out, &scheme.to_string(), false)?;
            if let Some(p) = &a.report {
                write_report(p, &report.to_csv(), cli.stamp)?;
            }
            text = report.summary();
            let _ = writeln!(text, "calibration_samples {}", samples.len());
            let _ = writeln!(text, "chosen {}", scheme.format);
        }
        Command::Infer(a) => {
            require(&[&a.model.model, &a.model.weights, &a.scheme, &a.input])?;
            let model = Model::load(&a.model.model, &a.model.weights)?;
            let scheme = load_scheme(&a.scheme)?;
            let q = QuantizedModel::new(&model, &scheme, a.datapath.options())?;
            let samples = split_samples(&read_f32_file(&a.input)?, model.graph.input)?;
            let mut codes = Vec::new();
            for (i, x) in samples.iter().enumerate() {
                let y = q.forward(x)?;
                let out_t = y.output();
                codes.extend_from_slice(&out_t.codes);
                let vals = out_t.dequantize();
                let top = (0..vals.len())
                    .find(|&j| crate::infer::eval::rank_of(&vals, j) == 0)
                    .unwrap_or(0);
                let shown: Vec<String> = vals.iter().map(|v| fmt_num(*v, 6)).collect();
                let _ = writeln!(text, "sample {i} top1 {top} values {}", shown.join(" "));
            }
            write_file(&a.out, &codes)?;
        }
        Command::Eval(a) => {
            require(&[&a.model.model, &a.model.weights, &a.scheme, &a.dataset])?;
            if a.topk.is_empty() || a.topk.contains(&0) {
                return Err(Error::Constraint("top-k values must be positive".into()));
            }
            let model = Model::load(&a.model.model, &a.model.weights)?;
            let scheme = load_scheme(&a.scheme)?;
            let q = QuantizedModel::new(&model, &scheme, a.datapath.options())?;
            let data = Dataset::load(&a.dataset)?;
            text = evaluate(&q, &data, &a.topk)?.render();
            if let Some(p) = &a.out {
                write_report(p, &text, cli.stamp)?;
            }
        }
        Command::Sweep(a) => {
            let paths: Vec<&PathBuf> = a.model.iter().chain(&a.models).collect();
            for p in &paths {
                require(&[p.as_path()])?;
            }
            let mut models = Vec::new();
            for p in &paths {
                let graph = Manifest::parse(&read_text(p)?)?.graph()?;
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                models.push((name, compute_layers(&graph)));
            }
            let pairs = if a.pairs.is_empty() {
                candidate_pairs(a.dsp, 8)
            } else {
                a.pairs.clone()
            };
            let buf = BufferSizes {
                ifmb_bytes: a.ifmb_bytes,
                wb_bytes: a.wb_bytes,
                ofmb_bytes: a.ofmb_bytes,
            };
            let rows = sweep(&models, a.dsp, a.freq, &pairs, &buf)?;
            let csv = sweep_csv(&rows);
            write_report(&a.out, &csv, cli.stamp)?;
            text = csv;
            if let Some(limit) = a.board_bw {
                for r in &rows {
                    for l in r.report.over_limit(limit * 1e6) {
                        let _ = writeln!(
                            text,
                            "over_bandwidth {} Nm={} Np={} layer {} {} MB/s",
                            r.model,
                            r.report.cfg.nm,
                            r.report.cfg.np,
                            l.name,
                            fmt_num(l.bandwidth / 1e6, 3)
                        );
                    }
                }
            }
        }
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("stdout", e))
}

/// All codes of `format` ascending by value, with their fields.
pub fn fmt_table(format: LpfpFormat) -> String {
    let (a, b) = (format.mantissa_bits() as usize, format.exponent_bits() as usize);
    let mut text = format!(
        "# {format}: {} codes, bias {}, max {}\ncode  S {:<a$} {:<b$} value\n",
        format.code_count(),
        format.bias(),
        format.max_value().to_decimal().unwrap_or_default(),
        "M",
        "E",
    );
    for c in format.sorted_codes() {
        let m = format!("{:0a$b}", c.mantissa_field());
        let e = if b == 0 {
            String::new()
        } else {
            format!("{:0b$b}", c.exponent_field())
        };
        let v = c.decode().to_decimal().unwrap_or_else(|| c.to_f64().to_string());
        let v = if c.is_negative() && c.is_zero() { "-0".to_string() } else { v };
        let _ = writeln!(
            text,
            "0x{:02x}  {} {m:<a$} {e:<b$} {v}",
            c.bits(),
            c.is_negative() as u8
        );
    }
    text
}
