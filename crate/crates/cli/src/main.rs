use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use geosafe::bench::{dhaka_box, generate_dataset, run_benchmark, run_correctness, DEFAULT_SIZES};
use geosafe::geo::BoundingBox;
use geosafe::http::serve;
use geosafe::{ServiceConfig, SystemClock, TracingService};

#[derive(Parser)]
#[command(name = "geosafe", version, about = "Unsafe-zone contact tracing: experiments and server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate uniformly distributed report points as `lat,lon` CSV.
    Gen {
        #[arg(long)]
        n: usize,
        /// south,west,north,east in degrees (default: central Dhaka)
        #[arg(long)]
        bbox: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time zone construction over growing datasets; writes `data_size,runtime_ms` CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 2021)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare index verdicts with a linear scan over random probes.
    Check {
        #[arg(long, default_value_t = 10_000)]
        zones: usize,
        #[arg(long, default_value_t = 1_000)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV of every probe; the per-probe report lines go next to it with a `.log` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP tracing service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured port.
        #[arg(long)]
        port: Option<u16>,
    },
}

fn parse_bbox(s: &str) -> Result<BoundingBox> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bbox {s:?} is not four numbers"))?;
    let [south, west, north, east] = parts[..] else {
        bail!("bbox needs south,west,north,east, got {} values", parts.len());
    };
    Ok(BoundingBox::new(south, west, north, east)?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Gen { n, bbox, seed, out } => {
            let bbox = bbox.as_deref().map(parse_bbox).transpose()?.unwrap_or_else(dhaka_box);
            let points = generate_dataset(n, &bbox, seed)?;
            let mut csv = String::from("lat,lon\n");
            for p in &points {
                csv.push_str(&format!("{:.9},{:.9}\n", p.latitude(), p.longitude()));
            }
            write(&out, &csv)?;
            println!("wrote {} points to {}", points.len(), out.display());
        }
        Command::Bench { sizes, seed, out } => {
            let report = run_benchmark(&sizes, seed)?;
            write(&out, &report.to_csv())?;
            for r in &report.rows {
                println!("{:>6} zones  {:.4} ms", r.data_size, r.runtime_ms);
            }
            let fit = report.fit;
            println!(
                "fit: runtime_ms = {:.3e} * n + {:.4}, R² = {:.4}",
                fit.slope, fit.intercept, fit.r_squared
            );
        }
        Command::Check { zones, probes, seed, out } => {
            let report = run_correctness(zones, probes, seed)?;
            write(&out, &report.to_csv())?;
            let log = out.with_extension("log");
            write(&log, &report.report_lines())?;
            println!(
                "{} probes, {} agreements, {} disagreements, {} unsafe",
                report.probes,
                report.agreements,
                report.disagreements.len(),
                report.unsafe_count()
            );
            if !report.disagreements.is_empty() {
                bail!("index and scan disagree on {} probes", report.disagreements.len());
            }
        }
        Command::Serve { config, port } => {
            let mut cfg = ServiceConfig::load(config.as_deref())?;
            if let Some(port) = port {
                cfg.port = port;
            }
            let service = TracingService::open(&cfg, Arc::new(SystemClock))?;
            let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
            tokio::runtime::Runtime::new()?.block_on(serve(Arc::new(service), addr))?;
        }
    }
    Ok(())
}
