//! File-level runs: simulate to a directory, analyze a flow file into a
//! report directory, and check a directory against its manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::addr::Oui;
use crate::analysis::{Analysis, AnalysisError, AnalysisOptions, FlowAggregator, IngestContext, ProviderMap, SignatureSet};
use crate::flows::{AnonKey, AnonymizeSide, Anonymizer, IngestCounts, LineBatches, PRF_NAME};
use crate::oui::{LoadStats, OuiDatabase, OuiError, Taxonomy};
use crate::simgen::{SimConfig, SimError, Simulation};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL: &str = "sixtrace";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Oui { path: PathBuf, source: OuiError },
    #[error("{path}: {source}")]
    Analysis { path: PathBuf, source: AnalysisError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no IPv6 flows in {lines} input lines ({not_ipv6} IPv4, {malformed} malformed)")]
    NoIpv6Flows { lines: u64, not_ipv6: u64, malformed: u64 },
    #[error("an anonymization key is required unless anonymization is disabled")]
    MissingKey,
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

impl PipelineError {
    /// True when the failure is caused by input content rather than I/O.
    pub fn is_input(&self) -> bool {
        !matches!(self, PipelineError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let mut f = open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Run metadata. Contains no wall-clock time and no thread count, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    /// Input role to SHA-256 of its file.
    pub inputs: BTreeMap<String, String>,
    pub key_fingerprint: Option<String>,
    pub prf: Option<String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        Manifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config,
            inputs: BTreeMap::new(),
            key_fingerprint: None,
            prf: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Manifest { path, reason: e.to_string() })
    }

    fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }
}

/// Writes small output files and records their digests.
fn write_file(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<(), PipelineError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// One line per mismatch between a directory and its manifest.
pub fn check_outputs(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let manifest = Manifest::read(dir)?;
    let mut problems = Vec::new();
    for (name, digest) in &manifest.outputs {
        let path = dir.join(name);
        if !path.exists() {
            problems.push(format!("{name}: missing"));
            continue;
        }
        let actual = sha256_file(&path)?;
        if &actual != digest {
            problems.push(format!("{name}: digest {actual} does not match manifest {digest}"));
        }
    }
    Ok(problems)
}

/// Writes the flow stream, ground truth, analyzer catalog and manifest.
pub fn run_simulate(config: &SimConfig, out: &Path) -> Result<(Simulation, Manifest), PipelineError> {
    let sim = Simulation::generate(config)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = Manifest::new("simulate", serde_json::to_value(config).expect("config serializes"));

    let flows = out.join("flows.csv");
    let f = File::create(&flows).map_err(io_err(&flows))?;
    sim.write_flows(BufWriter::new(f)).map_err(io_err(&flows))?;
    manifest.outputs.insert("flows.csv".into(), sha256_file(&flows)?);

    write_file(out, "households.csv", sim.households_csv().as_bytes(), &mut manifest)?;
    write_file(out, "assignments.csv", sim.assignments_csv().as_bytes(), &mut manifest)?;
    for (name, text) in sim.catalog_files() {
        write_file(out, name, text.as_bytes(), &mut manifest)?;
    }
    manifest.write(out)?;
    Ok((sim, manifest))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Inputs {
    pub flows: PathBuf,
    pub oui_db: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub providers: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
}

impl Inputs {
    /// The analyzer inputs a simulate run leaves in `dir`.
    pub fn simulated(dir: &Path) -> Self {
        Inputs {
            flows: dir.join("flows.csv"),
            oui_db: Some(dir.join("oui_db.csv")),
            taxonomy: Some(dir.join("taxonomy.csv")),
            providers: Some(dir.join("providers.csv")),
            signatures: Some(dir.join("signatures.csv")),
        }
    }

    fn roles(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("flows", self.flows.as_path())];
        for (role, p) in [
            ("oui_db", &self.oui_db),
            ("taxonomy", &self.taxonomy),
            ("providers", &self.providers),
            ("signatures", &self.signatures),
        ] {
            if let Some(p) = p {
                v.push((role, p.as_path()));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSettings {
    pub options: AnalysisOptions,
    pub anonymize: AnonymizeSide,
    /// Manufacturers whose EUI-64 sources count towards product series; empty admits all.
    pub product_ouis: BTreeSet<Oui>,
    /// Worker threads; 0 uses every available core. Excluded from manifests.
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub batch_lines: usize,
}

impl Default for AnalyzeSettings {
    fn default() -> Self {
        AnalyzeSettings {
            options: AnalysisOptions::default(),
            anonymize: AnonymizeSide::Source,
            product_ouis: BTreeSet::new(),
            threads: 0,
            batch_lines: 1 << 16,
        }
    }
}

/// Reference data the analyzer joins flows against.
pub struct Catalog {
    pub oui_db: OuiDatabase,
    pub oui_stats: LoadStats,
    pub taxonomy: Taxonomy,
    pub providers: ProviderMap,
    pub signatures: SignatureSet,
}

impl Catalog {
    /// Loads the optional inputs, returning warnings for absent ones.
    pub fn load(inputs: &Inputs, min_hits: usize) -> Result<(Self, Vec<String>), PipelineError> {
        let mut warnings = Vec::new();
        let (oui_db, oui_stats) = match &inputs.oui_db {
            Some(p) => OuiDatabase::load(open(p)?).map_err(|source| PipelineError::Oui { path: p.clone(), source })?,
            None => {
                warnings.push("no OUI registry given; manufacturer names are empty".into());
                Default::default()
            }
        };
        if oui_stats.skipped > 0 {
            warnings.push(format!("OUI registry: skipped {} malformed lines", oui_stats.skipped));
        }
        let taxonomy = match &inputs.taxonomy {
            Some(p) => Taxonomy::load(open(p)?).map_err(|source| PipelineError::Oui { path: p.clone(), source })?,
            None => {
                warnings.push("no taxonomy given; every manufacturer is categorized Unknown".into());
                Taxonomy::default()
            }
        };
        let providers = match &inputs.providers {
            Some(p) => ProviderMap::load(open(p)?).map_err(|source| PipelineError::Analysis { path: p.clone(), source })?,
            None => {
                warnings.push("no provider map given; collateral tables are empty".into());
                ProviderMap::default()
            }
        };
        let signatures = match &inputs.signatures {
            Some(p) => SignatureSet::load(open(p)?, &providers, min_hits)
                .map_err(|source| PipelineError::Analysis { path: p.clone(), source })?,
            None => SignatureSet { min_hits: min_hits.max(1), ..Default::default() },
        };
        Ok((Catalog { oui_db, oui_stats, taxonomy, providers, signatures }, warnings))
    }
}

fn thread_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

/// Streams CSV lines into an aggregator. Each batch is split across the
/// pool and merged; memory is bounded by one batch plus the aggregates.
pub fn ingest<R: BufRead>(
    reader: R,
    ctx: &IngestContext<'_>,
    threads: usize,
    batch_lines: usize,
) -> io::Result<FlowAggregator> {
    let pool = thread_pool(threads);
    let n_products = ctx.signatures.products.len();
    let chunk = (batch_lines / pool.current_num_threads().max(1) / 4).max(256);
    let mut batches = LineBatches::new(reader, batch_lines);
    let mut total = FlowAggregator::new(n_products);
    loop {
        let batch = batches.next_batch()?;
        if batch.is_empty() {
            break;
        }
        let part = pool.install(|| {
            batch
                .par_chunks(chunk)
                .map(|lines| {
                    let mut agg = FlowAggregator::new(n_products);
                    for (n, line) in lines {
                        agg.add_line(line.trim_end(), *n, ctx);
                    }
                    agg
                })
                .reduce(
                    || FlowAggregator::new(n_products),
                    |mut a, b| {
                        a.merge(b);
                        a
                    },
                )
        });
        total.merge(part);
    }
    Ok(total)
}

pub struct AnalyzeOutcome {
    pub analysis: Analysis,
    pub counts: IngestCounts,
    pub warnings: Vec<String>,
    pub manifest: Manifest,
}

/// Analyzes `inputs` into report files under `out`.
pub fn run_analyze(
    inputs: &Inputs,
    settings: &AnalyzeSettings,
    key: Option<&AnonKey>,
    out: &Path,
) -> Result<AnalyzeOutcome, PipelineError> {
    let anonymizer = match (settings.anonymize.source(), key) {
        (true, Some(k)) => Some(Anonymizer::new(k)),
        (true, None) => return Err(PipelineError::MissingKey),
        (false, _) => None,
    };
    let (catalog, mut warnings) = Catalog::load(inputs, settings.options.min_hits)?;
    let ctx = IngestContext {
        anonymizer: anonymizer.as_ref(),
        providers: &catalog.providers,
        signatures: &catalog.signatures,
        product_ouis: &settings.product_ouis,
    };
    let agg = ingest(open(&inputs.flows)?, &ctx, settings.threads, settings.batch_lines).map_err(io_err(&inputs.flows))?;
    let counts = agg.counts;
    if counts.flows == 0 {
        return Err(PipelineError::NoIpv6Flows {
            lines: counts.lines,
            not_ipv6: counts.skipped_not_ipv6,
            malformed: counts.malformed,
        });
    }
    if counts.malformed > 0 {
        warnings.push(format!("flows: skipped {} malformed lines", counts.malformed));
    }
    if counts.skipped_not_ipv6 > 0 {
        warnings.push(format!("flows: skipped {} IPv4 flows", counts.skipped_not_ipv6));
    }

    let analysis = Analysis::run(
        &agg,
        &catalog.oui_db,
        &catalog.taxonomy,
        &catalog.providers,
        &catalog.signatures,
        &settings.options,
    );
    drop(agg);

    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = Manifest::new("analyze", serde_json::to_value(settings).expect("settings serialize"));
    for (role, path) in inputs.roles() {
        manifest.inputs.insert(role.into(), sha256_file(path)?);
    }
    if let Some(k) = key.filter(|_| anonymizer.is_some()) {
        manifest.key_fingerprint = Some(k.fingerprint());
        manifest.prf = Some(PRF_NAME.into());
    }
    let mut files = analysis.render(&catalog.oui_db, &settings.options);
    let mut ingest_csv = String::from("key,value\n");
    for (k, v) in [
        ("lines", counts.lines),
        ("flows", counts.flows),
        ("headers", counts.headers),
        ("skipped_not_ipv6", counts.skipped_not_ipv6),
        ("malformed", counts.malformed),
    ] {
        ingest_csv.push_str(&format!("{k},{v}\n"));
    }
    files.insert("ingest.csv", ingest_csv);
    for (name, text) in &files {
        write_file(out, name, text.as_bytes(), &mut manifest)?;
    }
    manifest.write(out)?;
    Ok(AnalyzeOutcome { analysis, counts, warnings, manifest })
}
