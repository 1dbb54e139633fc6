use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use sixtrace::addr::Oui;
use sixtrace::analysis::AnalysisOptions;
use sixtrace::flows::{AnonKey, AnonymizeSide, Anonymizer};
use sixtrace::pipeline::{self, AnalyzeSettings, Inputs, Manifest, PipelineError};
use sixtrace::simgen::SimConfig;
use sixtrace::tracker::PeripheryParams;
use sixtrace::verify;

const KEY_ENV: &str = "SIXTRACE_KEY";

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// EUI-64 IPv6 privacy-leakage analysis over flow records.
///
/// Exit status: 0 success, 1 usage error, 2 input or I/O error,
/// 3 verification failure. The anonymization key is read from the
/// SIXTRACE_KEY environment variable (32 hex digits) or --key-file.
#[derive(Debug, Parser)]
#[command(name = "sixtrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate flows, ground truth and analyzer inputs from a simulator config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a flow CSV into a report directory.
    Analyze(AnalyzeArgs),
    /// Check a run directory against its manifest and print a table.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Table to print, e.g. `venn` or `collateral.csv`.
        #[arg(long, default_value = "summary")]
        table: String,
    },
    /// Simulate, analyze and compare the analysis with ground truth.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Working directory; receives `sim/` and `report/`.
        #[arg(long)]
        out: PathBuf,
        /// Reference run whose output digests must match.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long)]
        key_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    flows: PathBuf,
    #[arg(long)]
    oui_db: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    providers: Option<PathBuf>,
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// File holding the anonymization key as 32 hex digits.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Endpoint replaced by its anonymized form: source, destination, both, none.
    #[arg(long, default_value = "source")]
    anonymize: AnonymizeSide,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 50)]
    top_ouis: usize,
    #[arg(long, default_value_t = 50)]
    heatmap_ouis: usize,
    #[arg(long, default_value_t = 20)]
    heatmap_ports: usize,
    #[arg(long, default_value_t = 3600)]
    bucket_seconds: u64,
    #[arg(long, default_value_t = 64)]
    periphery_min_iids: usize,
    #[arg(long, default_value_t = 0.9)]
    periphery_min_cpe_fraction: f64,
    #[arg(long, default_value_t = 10_000)]
    hamming_min_samples: u64,
    #[arg(long, default_value_t = 0.01)]
    hamming_p_threshold: f64,
    /// Signature elements a source must contact to count for a product.
    #[arg(long, default_value_t = 1)]
    min_hits: usize,
    /// Comma-separated OUIs (6 hex digits) admitted to product series.
    #[arg(long, value_delimiter = ',')]
    product_ouis: Vec<String>,
}

/// Failure with its exit status.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_INPUT, e.into())
    }
}

fn usage(e: anyhow::Error) -> Failure {
    Failure(EXIT_USAGE, e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let (sim, _) = pipeline::run_simulate(&config, &out)?;
            println!(
                "simulated {} households, {} flows into {}",
                sim.truth.households.len(),
                sim.flows.len(),
                out.display()
            );
            Ok(())
        }
        Command::Analyze(args) => analyze(args),
        Command::Report { dir, table } => report(&dir, &table),
        Command::Verify { config, seed, out, against, key_file, threads } => {
            let config = load_config(&config, seed)?;
            let key = match read_key(key_file.as_deref())? {
                Some(k) => k,
                None => derive_key(config.seed),
            };
            let (sim, _) = pipeline::run_simulate(&config, &out.join("sim"))?;
            let settings = AnalyzeSettings { threads, ..Default::default() };
            let outcome = pipeline::run_analyze(&Inputs::simulated(&out.join("sim")), &settings, Some(&key), &out.join("report"))?;
            let v = verify::verify(&sim, &outcome.analysis, Some(&Anonymizer::new(&key)), &settings.options);
            for c in &v.checks {
                println!("{c}");
            }
            let mut ok = v.passed();
            if let Some(reference) = against {
                ok &= compare_runs(&reference, &out)?;
            }
            if ok {
                println!("verify: all checks passed");
                Ok(())
            } else {
                Err(Failure(EXIT_VERIFY, anyhow!("verification failed")))
            }
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SimConfig, Failure> {
    if !path.exists() {
        return Err(usage(anyhow!("config file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = SimConfig::from_toml(&text).with_context(|| path.display().to_string())?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

/// Key from `--key-file`, else from the environment.
fn read_key(file: Option<&Path>) -> Result<Option<AnonKey>, Failure> {
    let text = match file {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading key file {}", p.display()))?,
        None => match std::env::var(KEY_ENV) {
            Ok(v) => v,
            Err(_) => return Ok(None),
        },
    };
    Ok(Some(AnonKey::from_hex(&text).context("anonymization key")?))
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let product_ouis = a
        .product_ouis
        .iter()
        .map(|s| Oui::from_hex(s))
        .collect::<Result<BTreeSet<Oui>, _>>()
        .map_err(|e| usage(anyhow!("--product-ouis: {e}")))?;
    let settings = AnalyzeSettings {
        options: AnalysisOptions {
            top_ouis: a.top_ouis,
            heatmap_ouis: a.heatmap_ouis,
            heatmap_ports: a.heatmap_ports,
            periphery: PeripheryParams { min_iids: a.periphery_min_iids, min_cpe_fraction: a.periphery_min_cpe_fraction },
            bucket_seconds: a.bucket_seconds,
            hamming_min_samples: a.hamming_min_samples,
            hamming_p_threshold: a.hamming_p_threshold,
            min_hits: a.min_hits,
        },
        anonymize: a.anonymize,
        product_ouis,
        threads: a.threads,
        ..Default::default()
    };
    let key = read_key(a.key_file.as_deref())?;
    let inputs = Inputs {
        flows: a.flows,
        oui_db: a.oui_db,
        taxonomy: a.taxonomy,
        providers: a.providers,
        signatures: a.signatures,
    };
    let outcome = match pipeline::run_analyze(&inputs, &settings, key.as_ref(), &a.out) {
        Ok(o) => o,
        Err(e @ PipelineError::MissingKey) => {
            return Err(usage(anyhow!(e).context(format!("set {KEY_ENV} or pass --key-file"))))
        }
        Err(e) => return Err(e.into()),
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let c = outcome.counts;
    println!(
        "analyzed {} flows ({} lines, {} IPv4 skipped, {} malformed) into {}",
        c.flows,
        c.lines,
        c.skipped_not_ipv6,
        c.malformed,
        a.out.display()
    );
    Ok(())
}

fn report(dir: &Path, table: &str) -> Result<(), Failure> {
    let problems = pipeline::check_outputs(dir)?;
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("digest mismatch: {p}");
        }
        return Err(Failure(EXIT_VERIFY, anyhow!("{} file(s) differ from the manifest", problems.len())));
    }
    let name = if table.ends_with(".csv") { table.to_string() } else { format!("{table}.csv") };
    let manifest = Manifest::read(dir)?;
    if !manifest.outputs.contains_key(&name) {
        let known: Vec<&str> = manifest.outputs.keys().map(String::as_str).collect();
        return Err(usage(anyhow!("no table `{name}` in this run; available: {}", known.join(", "))));
    }
    let text = fs::read_to_string(dir.join(&name)).with_context(|| name.clone())?;
    print!("{text}");
    Ok(())
}

/// Compares output digests of `sim/` and `report/` against a reference run.
fn compare_runs(reference: &Path, out: &Path) -> Result<bool, Failure> {
    let mut ok = true;
    for sub in ["sim", "report"] {
        let mine = Manifest::read(&out.join(sub))?;
        let theirs = Manifest::read(&reference.join(sub))?;
        for (name, digest) in &theirs.outputs {
            match mine.outputs.get(name) {
                Some(d) if d == digest => {}
                Some(d) => {
                    ok = false;
                    println!("FAIL digest {sub}/{name}: {d} differs from reference {digest}");
                }
                None => {
                    ok = false;
                    println!("FAIL digest {sub}/{name}: missing from this run");
                }
            }
        }
    }
    if ok {
        println!("PASS digests: identical to {}", reference.display());
    }
    Ok(ok)
}

/// Deterministic key for verify runs without a configured key.
fn derive_key(seed: u64) -> AnonKey {
    let digest = pipeline::sha256_hex(format!("sixtrace verify key {seed}").as_bytes());
    AnonKey::from_hex(&digest[..32]).expect("32 hex digits")
}
