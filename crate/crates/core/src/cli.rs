//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::graph::{qag_transform, Graph};
use crate::pipeline::{
    bench_distributions, expensive_set, run_search, run_train, RunConfig, RunReport,
};
use crate::qss::trace_to_csv;
use crate::schemes::{optimize_alpha, AlphaTable, SchemeId};

#[derive(Parser, Debug)]
#[command(name = "qnn", version, about = "Mixed-scheme, mixed-precision quantization search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Insert quantizing vertices on every input edge of the expensive vertices.
    Qag {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated vertex ids; defaults to every FC and Conv vertex.
        #[arg(long, value_delimiter = ',')]
        expensive: Option<Vec<String>>,
        /// Leave the first and last expensive vertices unquantized.
        #[arg(long)]
        exempt_first_last: bool,
    },
    /// Fit the clip threshold α of ClipQ or PotQ by Monte-Carlo MSE minimization.
    OptimizeAlpha {
        #[arg(long)]
        scheme: SchemeId,
        /// A single width or an inclusive range such as `2..8`.
        #[arg(long)]
        bits: String,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "normal")]
        distribution: Distribution,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantization loss of each scheme on each reference distribution.
    BenchDistributions {
        /// Comma-separated schemes; defaults to all.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<SchemeId>>,
        #[arg(long, default_value = "2..8")]
        bits: String,
        /// Comma-separated distributions; defaults to the reference set.
        #[arg(long, value_delimiter = ',')]
        distributions: Option<Vec<Distribution>>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        alpha_table: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite and scheme search; writes a report that `train` resumes from.
    Search(RunArgs),
    /// Weight and bitwidth training from a search report.
    Train {
        #[arg(long)]
        from: PathBuf,
        /// Output directory; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        record_timing: bool,
    },
    /// Every stage in order.
    Run(RunArgs),
    /// Pretty-print a report file.
    Report { file: PathBuf },
}

macro_rules! run_flags {
    ($($field:ident),* $(,)?) => {
        #[derive(Args, Debug)]
        struct RunArgs {
            /// Configuration file; flags override its values.
            #[arg(long)]
            config: Option<PathBuf>,
            /// Output directory; standard output when omitted.
            #[arg(long)]
            out: Option<PathBuf>,
            /// Store the wall-clock time in the report.
            #[arg(long)]
            record_timing: bool,
            $(
                #[arg(long)]
                $field: Option<String>,
            )*
        }

        impl RunArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push((stringify!($field), x.as_str()));
                    }
                )*
                v
            }
        }
    };
}

run_flags!(
    model,
    dataset,
    samples,
    dim,
    separation,
    noise,
    qss_epochs,
    qpl_epochs,
    tau0,
    tau_power,
    target_bits,
    precision_weight,
    mode,
    weight_candidates,
    activation_candidates,
    search_bits,
    lambda,
    lr_weights,
    lr_theta,
    lr_bits,
    batch_size,
    seed,
    exempt_first_last,
    final_selection,
    learn_bits,
    fp_baseline,
    alpha_table,
);

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v, None)?;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if cfg.seed.is_none() {
            return Err(Error::InvalidArgument("--seed is required".into()));
        }
        Ok(cfg)
    }
}

fn parse_bits(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::InvalidArgument(format!("invalid bit list '{s}'"));
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    match s.split_once("..") {
        Some((a, b)) => {
            let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
            if lo > hi {
                return Err(bad());
            }
            Ok((lo..=hi).collect())
        }
        None => s.split(',').map(num).collect(),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_report(report: &RunReport, dir: Option<&Path>) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            report.save(&d.join("report.toml"))?;
            let trace = d.join("trace.csv");
            std::fs::write(&trace, trace_to_csv(&report.trace)).map_err(|e| Error::io(&trace, e))?;
            info!("wrote {}", d.join("report.toml").display());
            Ok(())
        }
        None => write_or_print(None, &report.to_text()?),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Qag {
            input,
            out,
            expensive,
            exempt_first_last,
        } => {
            let g = Graph::load(&input)?;
            let ve = match expensive {
                Some(ids) => ids.into_iter().collect(),
                None => expensive_set(&g, exempt_first_last)?,
            };
            let r = qag_transform(&g, &ve)?;
            r.graph.save(&out)?;
            info!(
                "inserted {} quantizers in {} iterations",
                r.quantizers.len(),
                r.iterations
            );
        }
        Command::OptimizeAlpha {
            scheme,
            bits,
            samples,
            seed,
            distribution,
            out,
        } => {
            let mut table = AlphaTable::new();
            for b in parse_bits(&bits)? {
                let r = optimize_alpha(scheme, b, &distribution, samples, seed)?;
                info!("{scheme} b={b}: alpha {:.4}, mse {:.6}", r.alpha, r.mse);
                table.insert(scheme, b, r.alpha);
            }
            table.save(&out)?;
        }
        Command::BenchDistributions {
            schemes,
            bits,
            distributions,
            samples,
            seed,
            alpha_table,
            out,
        } => {
            let mut table = AlphaTable::reference();
            if let Some(p) = alpha_table {
                table.merge(&AlphaTable::load(&p)?);
            }
            let schemes = schemes.unwrap_or_else(|| SchemeId::ALL.to_vec());
            let dists = distributions.unwrap_or_else(Distribution::reference_set);
            let t = bench_distributions(&schemes, &parse_bits(&bits)?, &dists, samples, seed, &table)?;
            write_or_print(out.as_deref(), &t.to_csv())?;
        }
        Command::Search(args) => {
            let cfg = args.config()?;
            let start = Instant::now();
            let mut r = run_search(&cfg)?;
            if args.record_timing {
                r.wall_clock_secs = Some(start.elapsed().as_secs_f64());
            }
            emit_report(&r, cfg.output.as_deref())?;
        }
        Command::Train {
            from,
            out,
            record_timing,
        } => {
            let search = RunReport::load(&from)?;
            let start = Instant::now();
            let mut r = run_train(&search)?;
            r.wall_clock_secs = if record_timing {
                Some(search.wall_clock_secs.unwrap_or(0.0) + start.elapsed().as_secs_f64())
            } else {
                None
            };
            emit_report(&r, out.as_deref())?;
        }
        Command::Run(args) => {
            let cfg = args.config()?;
            let start = Instant::now();
            let mut r = run_train(&run_search(&cfg)?)?;
            if args.record_timing {
                r.wall_clock_secs = Some(start.elapsed().as_secs_f64());
            }
            emit_report(&r, cfg.output.as_deref())?;
        }
        Command::Report { file } => {
            print!("{}", RunReport::load(&file)?.render());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on usage or validation errors,
/// 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
