//! `geolink` command-line interface.
//!
//! Exit codes: 0 success, 1 input error, 2 internal or provider error.

mod config;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geolink_core::embedding::{EmbeddingProvider, ProviderSpec};
use geolink_core::eval::{self, DEFAULT_THRESHOLDS, Level};
use geolink_core::gazetteer::{
    self, CodeTables, GazetteerConfig, GranularityCounts, LocationTriple,
};
use geolink_core::index::{self, IndexKind, LocationIndex, PruneConfig};
use geolink_core::linker;
use geolink_core::mentions::{self, LabeledMention};
use geolink_core::reverse_geocode::{CityLocator, reverse_geocode_tsv};
use geolink_core::synthetic::{self, SyntheticConfig};
use serde_json::json;

use config::{ENDPOINT_ENV, RunConfig, existing, pick, write_sidecar};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl From<geolink_core::Error> for CliError {
    fn from(e: geolink_core::Error) -> Self {
        let mut msg = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            msg.push_str(&format!(": {s}"));
            source = s.source();
        }
        if e.is_input_error() {
            CliError::Input(msg)
        } else {
            CliError::Internal(msg)
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "geolink",
    version,
    about = "Link free-text locations to (city, admin1, country) triples"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a GeoNames dump into the target location database.
    BuildDb(BuildDbArgs),
    /// Build a NameGeo or UserGeo index.
    BuildIndex(BuildIndexArgs),
    /// Link one user input per line.
    Link(LinkArgs),
    /// Score predictions against labeled mentions (JSON report).
    Evaluate(EvaluateArgs),
    /// Precision-coverage curve as CSV.
    Curve(CurveArgs),
    /// Map lat/lon pairs to the nearest database city.
    ReverseGeocode(ReverseGeocodeArgs),
    /// Seeded train/test split of a mentions file.
    Split(SplitArgs),
    /// Write the bundled synthetic corpus as GeoNames-shaped files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct BuildDbArgs {
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    admin1_codes: Option<PathBuf>,
    #[arg(long)]
    admin2_codes: Option<PathBuf>,
    #[arg(long)]
    country_info: Option<PathBuf>,
    #[arg(long)]
    min_population: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// `test:<dim>:<seed>`, `file:<path>` or `service:<unix:path|cmd:command>[#tag]`.
    #[arg(long)]
    provider: Option<String>,
    /// Connections to open to an embedding service.
    #[arg(long)]
    pool_size: Option<usize>,
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<IndexKind>,
    /// Labeled mentions (required for usergeo).
    #[arg(long)]
    mentions: Option<PathBuf>,
    /// Add name variants to each location's supplemental strings.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    variants: Option<bool>,
    /// Enable pruning with this multiplier of the mean squared distance.
    #[arg(long)]
    prune: Option<f64>,
    /// Let pruning drop canonical/variant strings as well as mentions.
    #[arg(long)]
    prune_supplemental: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LinkArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// One raw user input per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Mentions file aligned line by line with the predictions.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Index used for the mention-count buckets.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    min_country_examples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReverseGeocodeArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    /// `lat<TAB>lon` per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    mentions: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Fraction of mentions replaced by off-topic text.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_kind(s: &str) -> Result<IndexKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "namegeo" => Ok(IndexKind::NameGeo),
        "usergeo" => Ok(IndexKind::UserGeo),
        _ => Err(format!("expected namegeo or usergeo, got {s:?}")),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::Internal(e.to_string()))?;
    finish(w, path)
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn resolve_provider(args: &ProviderArgs, cfg: &RunConfig) -> CliResult<(ProviderSpec, usize)> {
    let spec = match pick(args.provider.clone(), &cfg.provider) {
        Some(s) => s,
        None => match std::env::var(ENDPOINT_ENV) {
            Ok(endpoint) if !endpoint.is_empty() => format!("service:{endpoint}"),
            _ => {
                return Err(CliError::Input(format!(
                    "no embedding provider: pass --provider or set {ENDPOINT_ENV}"
                )));
            }
        },
    };
    let spec = ProviderSpec::parse(&spec)?;
    if let ProviderSpec::File(p) = &spec {
        existing(Some(PathBuf::from(p)), "provider file")?;
    }
    Ok((spec, pick(args.pool_size, &cfg.pool_size).unwrap_or(4)))
}

fn open_provider(spec: &ProviderSpec, pool: usize) -> CliResult<Box<dyn EmbeddingProvider>> {
    spec.open(pool).map_err(|e| match e {
        // An unreachable service is not the user's input mistake.
        geolink_core::Error::Provider { .. } => CliError::Internal(e.to_string()),
        other => other.into(),
    })
}

fn load_database(path: &Path) -> CliResult<Vec<gazetteer::LocationEntity>> {
    let es = gazetteer::read_database(open(path)?)?;
    if es.is_empty() {
        return Err(CliError::Input(format!(
            "{} contains no locations",
            path.display()
        )));
    }
    Ok(es)
}

fn load_index(path: &Path) -> CliResult<LocationIndex> {
    Ok(LocationIndex::read(open(path)?)?)
}

fn load_truths(path: &Path) -> CliResult<Vec<LabeledMention>> {
    Ok(mentions::read_mentions(open(path)?)?)
}

fn check_threshold(t: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::Input(format!(
            "threshold must be in [0, 1], got {t}"
        )))
    }
}

// -- commands ----------------------------------------------------------------

fn cmd_build_db(args: BuildDbArgs, cfg: &RunConfig) -> CliResult<()> {
    let dump = existing(pick(args.dump, &cfg.dump), "dump")?;
    let admin1 = existing(pick(args.admin1_codes, &cfg.admin1_codes), "admin1_codes")?;
    let country_info = existing(pick(args.country_info, &cfg.country_info), "country_info")?;
    let admin2 = match pick(args.admin2_codes, &cfg.admin2_codes) {
        Some(p) => Some(existing(Some(p), "admin2_codes")?),
        None => None,
    };
    let gcfg = GazetteerConfig {
        min_population: pick(args.min_population, &cfg.min_population).unwrap_or(15_000),
        feature_codes: cfg.feature_codes.clone().unwrap_or_default(),
    };
    let tables = CodeTables::parse(
        open(&country_info)?,
        open(&admin1)?,
        admin2.as_deref().map(open).transpose()?,
    )?;
    let parsed = gazetteer::parse_gazetteer(open(&dump)?, &tables, &gcfg)?;
    if parsed.stats.lines == 0 {
        return Err(CliError::Input(format!("{} is empty", dump.display())));
    }
    let filtered = gazetteer::filter_entities(&parsed.entities, &gcfg);
    if filtered.is_empty() {
        return Err(CliError::Input("no locations survive filtering".into()));
    }
    let mut w = create(&args.out)?;
    gazetteer::write_database(&mut w, &filtered)?;
    finish(w, &args.out)?;
    let counts = GranularityCounts::of(&filtered);
    let hash = write_sidecar(
        &args.out,
        "build-db",
        json!({
            "dump": dump, "admin1_codes": admin1, "admin2_codes": admin2,
            "country_info": country_info, "gazetteer": gcfg,
        }),
    )?;
    print_json(&json!({
        "parse": parsed.stats,
        "countries": counts.countries,
        "admin1": counts.admin1,
        "cities": counts.cities,
        "total": counts.total(),
        "config_hash": hash,
    }));
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs, cfg: &RunConfig) -> CliResult<()> {
    let db = existing(pick(args.db, &cfg.database), "database")?;
    let (spec, pool) = resolve_provider(&args.provider, cfg)?;
    let kind = pick(args.kind, &cfg.kind).unwrap_or(IndexKind::NameGeo);
    let variants = pick(args.variants, &cfg.variants).unwrap_or(false);
    let multiplier = pick(args.prune, &cfg.prune_multiplier);
    let prune = PruneConfig {
        enabled: multiplier.is_some(),
        multiplier: multiplier.unwrap_or(1.0),
        exempt_supplemental: !args.prune_supplemental
            && cfg.prune_exempt_supplemental.unwrap_or(true),
    };
    let mentions_path = match kind {
        IndexKind::UserGeo => Some(existing(pick(args.mentions, &cfg.mentions), "mentions")?),
        IndexKind::NameGeo => None,
    };
    if kind == IndexKind::NameGeo && prune.enabled {
        return Err(CliError::Input(
            "pruning applies to usergeo indexes only".into(),
        ));
    }
    let entities = load_database(&db)?;
    let provider = open_provider(&spec, pool)?;
    let (index, stats) = match kind {
        IndexKind::NameGeo => {
            let idx = index::build_name_index(&entities, provider.as_ref(), variants)?;
            let stats = index::BuildStats {
                entries: idx.len(),
                ..Default::default()
            };
            (idx, stats)
        }
        IndexKind::UserGeo => {
            let ms = load_truths(mentions_path.as_deref().expect("checked above"))?;
            index::build_user_index(&entities, &ms, provider.as_ref(), variants, prune)?
        }
    };
    let mut w = create(&args.out)?;
    index.write(&mut w)?;
    finish(w, &args.out)?;
    let hash = write_sidecar(
        &args.out,
        "build-index",
        json!({
            "database": db, "provider": spec.to_string(), "mentions": mentions_path,
            "mode": index.mode(),
        }),
    )?;
    if stats.mentions_dropped > 0 {
        eprintln!(
            "warning: dropped {} mentions whose location is not in the database",
            stats.mentions_dropped
        );
    }
    print_json(&json!({
        "entries": stats.entries,
        "mentions_used": stats.mentions_used,
        "mentions_dropped": stats.mentions_dropped,
        "prunable": stats.prunable,
        "pruned": stats.pruned,
        "pruned_fraction": stats.pruned_fraction(),
        "mean_cluster_pruned_fraction": stats.mean_cluster_pruned_fraction,
        "config_hash": hash,
    }));
    Ok(())
}

fn cmd_link(args: LinkArgs, cfg: &RunConfig) -> CliResult<()> {
    let index_path = existing(pick(args.index, &cfg.index), "index")?;
    let (spec, pool) = resolve_provider(&args.provider, cfg)?;
    let threshold = check_threshold(pick(args.threshold, &cfg.threshold).unwrap_or(0.0))?;
    let input_path = existing(Some(args.input), "input")?;
    let index = load_index(&index_path)?;
    let inputs: Vec<String> = open(&input_path)?
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", input_path.display())))?;
    let provider = open_provider(&spec, pool)?;
    let preds = linker::link_batch(&index, provider.as_ref(), &inputs, threshold)?;
    let mut w = create(&args.out)?;
    linker::write_predictions(&mut w, &inputs, &preds)?;
    finish(w, &args.out)?;
    write_sidecar(
        &args.out,
        "link",
        json!({
            "index": index_path, "provider": spec.to_string(), "input": input_path,
            "threshold": threshold,
        }),
    )?;
    let accepted = preds.iter().filter(|p| p.accepted).count();
    print_json(&json!({ "inputs": preds.len(), "accepted": accepted }));
    Ok(())
}

/// Predictions and aligned truths; the inputs must match line for line.
fn load_scored(
    predictions: Option<PathBuf>,
    truth: Option<PathBuf>,
    cfg: &RunConfig,
) -> CliResult<(
    PathBuf,
    PathBuf,
    Vec<linker::Prediction>,
    Vec<LocationTriple>,
)> {
    let pred_path = existing(pick(predictions, &cfg.predictions), "predictions")?;
    let truth_path = existing(pick(truth, &cfg.truth), "truth")?;
    let rows = linker::read_predictions(open(&pred_path)?)?;
    let truths = load_truths(&truth_path)?;
    if rows.len() != truths.len() {
        return Err(CliError::Input(format!(
            "{} predictions but {} labeled mentions",
            rows.len(),
            truths.len()
        )));
    }
    if let Some(k) = rows
        .iter()
        .zip(&truths)
        .position(|((input, _), m)| *input != m.user_input)
    {
        return Err(CliError::Input(format!(
            "prediction {} is for {:?} but the truth row is {:?}",
            k + 1,
            rows[k].0,
            truths[k].user_input
        )));
    }
    let preds = rows.into_iter().map(|(_, p)| p).collect();
    let truths = truths.into_iter().map(|m| m.truth).collect();
    Ok((pred_path, truth_path, preds, truths))
}

fn cmd_evaluate(args: EvaluateArgs, cfg: &RunConfig) -> CliResult<()> {
    let (pred_path, truth_path, preds, truths) = load_scored(args.predictions, args.truth, cfg)?;
    let index_path = match pick(args.index, &cfg.index) {
        Some(p) => Some(existing(Some(p), "index")?),
        None => None,
    };
    let index = index_path.as_deref().map(load_index).transpose()?;
    let thresholds = pick(args.thresholds, &cfg.thresholds).unwrap_or(DEFAULT_THRESHOLDS.to_vec());
    let min_examples = pick(args.min_country_examples, &cfg.min_country_examples).unwrap_or(1);
    let report = eval::evaluate(&preds, &truths, index.as_ref(), min_examples, &thresholds)?;
    let hash = write_sidecar(
        &args.out,
        "evaluate",
        json!({
            "predictions": pred_path, "truth": truth_path, "index": index_path,
            "thresholds": thresholds, "min_country_examples": min_examples,
        }),
    )?;
    let mut value = serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    value["config_hash"] = json!(hash);
    write_json(&args.out, &value)?;
    let summary: serde_json::Map<String, serde_json::Value> = Level::ALL
        .iter()
        .map(|l| (l.to_string(), json!(report.metrics[l])))
        .collect();
    print_json(&json!(summary));
    Ok(())
}

fn cmd_curve(args: CurveArgs, cfg: &RunConfig) -> CliResult<()> {
    let (pred_path, truth_path, preds, truths) = load_scored(args.predictions, args.truth, cfg)?;
    let thresholds = pick(args.thresholds, &cfg.thresholds).unwrap_or(DEFAULT_THRESHOLDS.to_vec());
    let curves = Level::ALL
        .iter()
        .map(|&l| {
            Ok((
                l,
                eval::precision_coverage_curve(&preds, &truths, l, &thresholds)?,
            ))
        })
        .collect::<CliResult<_>>()?;
    let mut w = create(&args.out)?;
    eval::write_curve_csv(&mut w, &curves)?;
    finish(w, &args.out)?;
    write_sidecar(
        &args.out,
        "curve",
        json!({ "predictions": pred_path, "truth": truth_path, "thresholds": thresholds }),
    )?;
    Ok(())
}

fn cmd_reverse_geocode(args: ReverseGeocodeArgs, cfg: &RunConfig) -> CliResult<()> {
    let db = existing(pick(args.db, &cfg.database), "database")?;
    let input = existing(Some(args.input), "input")?;
    let locator = CityLocator::from_database(&load_database(&db)?)?;
    let mut w = create(&args.out)?;
    let rows = reverse_geocode_tsv(&locator, open(&input)?, &mut w)?;
    finish(w, &args.out)?;
    write_sidecar(
        &args.out,
        "reverse-geocode",
        json!({ "database": db, "input": input }),
    )?;
    print_json(&json!({ "rows": rows, "cities": locator.len() }));
    Ok(())
}

fn cmd_split(args: SplitArgs, cfg: &RunConfig) -> CliResult<()> {
    let path = existing(pick(args.mentions, &cfg.mentions), "mentions")?;
    let fraction = pick(args.test_fraction, &cfg.test_fraction).unwrap_or(0.1);
    let seed = pick(args.seed, &cfg.seed).unwrap_or(0);
    let all = load_truths(&path)?;
    let (train, test) = eval::split_train_test(&all, fraction, seed)?;
    for (out, part) in [(&args.train_out, &train), (&args.test_out, &test)] {
        let mut w = create(out)?;
        mentions::write_mentions(&mut w, part)?;
        finish(w, out)?;
        write_sidecar(
            out,
            "split",
            json!({ "mentions": path, "test_fraction": fraction, "seed": seed }),
        )?;
    }
    print_json(&json!({ "train": train.len(), "test": test.len() }));
    Ok(())
}

fn cmd_synth(args: SynthArgs, cfg: &RunConfig) -> CliResult<()> {
    if !(0.0..1.0).contains(&args.noise) {
        return Err(CliError::Input(format!(
            "noise must be in [0, 1), got {}",
            args.noise
        )));
    }
    let mut scfg = SyntheticConfig {
        noise_fraction: args.noise,
        ..SyntheticConfig::default()
    };
    if let Some(seed) = pick(args.seed, &cfg.seed) {
        scfg.seed = seed;
    }
    let corpus = synthetic::generate(&scfg);
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let write = |name: &str, text: &str| {
        let p = args.out_dir.join(name);
        std::fs::write(&p, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display())))
    };
    write("geonames.txt", &corpus.geonames_dump())?;
    write("admin1CodesASCII.txt", &corpus.admin1_codes())?;
    write("countryInfo.txt", &corpus.country_info())?;
    let mut buf = Vec::new();
    mentions::write_mentions(&mut buf, &corpus.mentions)?;
    write("mentions.tsv", &String::from_utf8(buf).expect("utf-8"))?;
    print_json(&json!({
        "locations": corpus.entities.len(),
        "mentions": corpus.mentions.len(),
        "noise": scfg.noise_fraction,
        "seed": scfg.seed,
    }));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = pick(cli.threads, &cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::BuildDb(a) => cmd_build_db(a, &cfg),
        Command::BuildIndex(a) => cmd_build_index(a, &cfg),
        Command::Link(a) => cmd_link(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Curve(a) => cmd_curve(a, &cfg),
        Command::ReverseGeocode(a) => cmd_reverse_geocode(a, &cfg),
        Command::Split(a) => cmd_split(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
