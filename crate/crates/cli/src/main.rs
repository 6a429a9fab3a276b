//! `prefstage` command-line interface: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 2 validation error, 3 runtime error, 4 refusal
//! because the boundary interval straddles 0.5.

mod overrides;

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefstage::align::{train, DpoConfig, Method, TrainManifest};
use prefstage::diagnostics::{
    boundary_measure, distinct_rate, sampled_consistency, simplified_consistency, CandidateSamples, Side,
};
use prefstage::harness::{build_policy, emit_report, run_protocol_full, PolicySpec, ProtocolConfig, ReportFormat, RunManifest, SpaceSpec, TruthSpec};
use prefstage::space::{read_jsonl, write_jsonl};
use prefstage::{
    Annotator, BTPreference, Error, ExactBTAnnotator, PreferenceDataset, PreferenceRecord, RemoteAnnotator,
    RemoteConfig, RewardTable, Source, Space, TabularPolicy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "prefstage", version, about = "Tabular preference-alignment laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic prompt/response space.
    GenSpace {
        #[arg(long)]
        prompts: usize,
        #[arg(long)]
        responses: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a ground-truth reward table.
    GenTruth {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a policy: uniform, or tempered toward the truth with `--alpha`.
    GenPolicy {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, requires = "alpha")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample candidate responses per prompt from a policy.
    Sample {
        #[arg(long)]
        space: PathBuf,
        /// `uniform` or a policy snapshot path.
        #[arg(long, default_value = "uniform")]
        policy: String,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn sampled candidates into a labelled JSONL dataset.
    Annotate {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[command(flatten)]
        annotator: AnnotatorArgs,
        #[arg(long, value_enum, default_value_t = SourceArg::External)]
        source: SourceArg,
        /// Keep the annotator probability as `p_chosen`.
        #[arg(long)]
        soft: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy on a dataset with DPO or SLiC-HF.
    Train {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// `uniform` or a policy snapshot path.
        #[arg(long, default_value = "uniform")]
        initial: String,
        /// Reference policy; defaults to the initial policy.
        #[arg(long)]
        reference: Option<String>,
        /// Method document, e.g. `{"method": "dpo", "config": {...}}`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a method field, e.g. `config.beta=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Where to write the final policy snapshot.
        #[arg(long)]
        policy_out: Option<PathBuf>,
        /// Where to write the training manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Boundary measurement between an on- and an off-policy dataset.
    Boundary {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        on: PathBuf,
        #[arg(long)]
        off: PathBuf,
        #[command(flatten)]
        annotator: AnnotatorArgs,
        /// Exit with status 4 when the 95% interval contains 0.5.
        #[arg(long)]
        refuse_on_straddle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consistency estimators on sampled candidates.
    Consistency {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        on_samples: PathBuf,
        #[arg(long)]
        off_samples: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Policy that produced the on-policy samples; adds the distinct rate
        /// and the sampled consistency between truth and this policy.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full multi-iteration protocol.
    Protocol {
        /// JSON or key-value protocol config.
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `seeds.pc_on=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Directory for datasets, policies and the manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Manifest path; defaults to `<out-dir>/manifest.json`, else stdout.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Render a run manifest as JSON or CSV.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AnnotatorArgs {
    /// Reward table for the exact Bradley-Terry annotator.
    #[arg(long, conflicts_with = "remote", required_unless_present = "remote")]
    truth: Option<PathBuf>,
    /// Base URL of a remote `/compare` service.
    #[arg(long)]
    remote: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    OffPolicy,
    OnPolicy,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<overrides::OverrideError> for CliError {
    fn from(e: overrides::OverrideError) -> Self {
        CliError::Usage(e.0)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if matches!(e.root(), Error::Straddle { .. }) => 4,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn load_space(path: &Path) -> CliResult<Arc<Space>> {
    Ok(Arc::new(Space::from_json(&read_text(path)?)?))
}

fn load_truth(path: &Path, space: &Arc<Space>) -> CliResult<RewardTable> {
    Ok(RewardTable::from_json(&read_text(path)?, space.clone())?)
}

fn load_policy(spec: &str, space: &Arc<Space>) -> CliResult<TabularPolicy> {
    if spec == "uniform" {
        Ok(TabularPolicy::uniform(space.clone()))
    } else {
        Ok(TabularPolicy::from_json(&read_text(Path::new(spec))?, space.clone())?)
    }
}

fn load_dataset(path: &Path, space: &Arc<Space>) -> CliResult<PreferenceDataset> {
    let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_jsonl(BufReader::new(file), space.clone())?)
}

fn load_samples(path: &Path, space: &Arc<Space>) -> CliResult<CandidateSamples> {
    let rows = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(CandidateSamples::from_ids(space.clone(), &rows)?)
}

fn build_annotator(args: &AnnotatorArgs, space: &Arc<Space>) -> CliResult<Box<dyn Annotator>> {
    match (&args.truth, &args.remote) {
        (Some(truth), None) => {
            let table = load_truth(truth, space)?;
            Ok(Box::new(ExactBTAnnotator::new(BTPreference::FromReward(table)).with_name("truth")))
        }
        (None, Some(url)) => {
            let config = RemoteConfig {
                timeout_ms: args.timeout_ms,
                max_retries: args.max_retries,
                max_in_flight: args.max_in_flight,
                ..RemoteConfig::new(url.clone())
            };
            Ok(Box::new(RemoteAnnotator::new(space.clone(), config)?))
        }
        _ => Err(CliError::Usage("give exactly one of --truth or --remote".into())),
    }
}

/// Paths in a config file are relative to the file's directory.
fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn rebase_config(config: &mut ProtocolConfig, base: &Path) {
    if let SpaceSpec::Path { path } = &mut config.space {
        rebase(path, base);
    }
    if let TruthSpec::Path { path } = &mut config.truth {
        rebase(path, base);
    }
    for spec in [&mut config.pi_off, &mut config.initial_policy] {
        if let PolicySpec::Path { path } = spec {
            rebase(path, base);
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenSpace {
            prompts,
            responses,
            seed,
            out,
        } => {
            let space = Space::build(prompts, responses, seed)?;
            emit(out.as_deref(), space.to_json()?.as_bytes())
        }
        Command::GenTruth { space, seed, scale, out } => {
            let space = load_space(&space)?;
            let table = RewardTable::random(space, scale, &mut ChaCha8Rng::seed_from_u64(seed))?;
            emit(out.as_deref(), table.to_json()?.as_bytes())
        }
        Command::GenPolicy {
            space,
            truth,
            alpha,
            noise,
            seed,
            out,
        } => {
            let space = load_space(&space)?;
            let policy = match (truth, alpha) {
                (Some(t), Some(alpha)) => build_policy(&PolicySpec::Tempered { alpha, noise, seed }, &load_truth(&t, &space)?)?,
                _ => build_policy(&PolicySpec::Uniform, &RewardTable::constant(space, 0.0))?,
            };
            emit(out.as_deref(), policy.to_json()?.as_bytes())
        }
        Command::Sample {
            space,
            policy,
            k,
            seed,
            out,
        } => {
            let space = load_space(&space)?;
            let policy = load_policy(&policy, &space)?;
            let samples = CandidateSamples::sample(&policy, k, &mut ChaCha8Rng::seed_from_u64(seed))?;
            emit_json(out.as_deref(), &samples.to_ids())
        }
        Command::Annotate {
            space,
            candidates,
            annotator,
            source,
            soft,
            out,
        } => {
            let space = load_space(&space)?;
            let samples = load_samples(&candidates, &space)?;
            let annotator = build_annotator(&annotator, &space)?;
            let dataset = annotate_samples(&samples, annotator.as_ref(), source, soft)?;
            let mut buf = Vec::new();
            write_jsonl(&dataset, &mut buf)?;
            emit(out.as_deref(), &buf)
        }
        Command::Train {
            space,
            dataset,
            initial,
            reference,
            config,
            set,
            policy_out,
            out,
        } => {
            let space = load_space(&space)?;
            let dataset = load_dataset(&dataset, &space)?;
            let initial_policy = load_policy(&initial, &space)?;
            let reference = load_policy(reference.as_deref().unwrap_or(&initial), &space)?;
            let base = serde_json::to_value(Method::Dpo(DpoConfig::default())).map_err(Error::from)?;
            let doc = overrides::load(config.as_deref(), base, &set)?;
            let method: Method = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("method config: {e}")))?;
            let result = train(&initial_policy, &reference, &dataset, &method)?;
            if let Some(p) = &policy_out {
                fs::write(p, result.final_policy.to_json()?)?;
            }
            emit_json(out.as_deref(), &TrainManifest::new(&method, &dataset, &initial_policy, &result)?)
        }
        Command::Boundary {
            space,
            on,
            off,
            annotator,
            refuse_on_straddle,
            out,
        } => {
            let space = load_space(&space)?;
            let on = load_dataset(&on, &space)?;
            let off = load_dataset(&off, &space)?;
            let annotator = build_annotator(&annotator, &space)?;
            let report = boundary_measure(&on, &off, annotator.as_ref())?;
            emit_json(out.as_deref(), &report)?;
            if refuse_on_straddle && report.straddles_half() {
                return Err(Error::Straddle {
                    low: report.wilson_95[0],
                    high: report.wilson_95[1],
                }
                .into());
            }
            Ok(())
        }
        Command::Consistency {
            space,
            on_samples,
            off_samples,
            truth,
            policy,
            out,
        } => {
            let space = load_space(&space)?;
            let on = load_samples(&on_samples, &space)?;
            let off = load_samples(&off_samples, &space)?;
            let truth = BTPreference::FromReward(load_truth(&truth, &space)?);
            let mut result = serde_json::Map::new();
            result.insert("simplified_on".into(), simplified_consistency(&on, &off, &truth, Side::On)?.into());
            result.insert("simplified_off".into(), simplified_consistency(&on, &off, &truth, Side::Off)?.into());
            if let Some(p) = policy {
                let policy = TabularPolicy::from_json(&read_text(&p)?, space.clone())?;
                result.insert("distinct_rate".into(), distinct_rate(&policy, &on, &off)?.into());
                let model = BTPreference::FromPolicy(policy);
                result.insert("sampled_consistency".into(), sampled_consistency(&on, &off, &truth, &model)?.into());
            }
            emit_json(out.as_deref(), &Value::Object(result))
        }
        Command::Protocol {
            config,
            set,
            out_dir,
            manifest,
        } => {
            let doc = overrides::load(Some(&config), Value::Null, &set)?;
            let mut cfg: ProtocolConfig = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("protocol config: {e}")))?;
            rebase_config(&mut cfg, config.parent().unwrap_or(Path::new(".")));
            let output = run_protocol_full(&cfg, out_dir.as_deref())?;
            let hash = output.manifest.hash()?;
            let target = manifest.or_else(|| out_dir.map(|d| d.join("manifest.json")));
            emit_json(target.as_deref(), &output.manifest)?;
            if target.is_some() {
                println!("manifest_hash {hash}");
            } else {
                eprintln!("manifest_hash {hash}");
            }
            Ok(())
        }
        Command::Report { manifest, format, out } => {
            let manifest: RunManifest = serde_json::from_str(&read_text(&manifest)?)
                .map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
            let format = match format {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Csv => ReportFormat::Csv,
            };
            emit(out.as_deref(), &emit_report(&manifest, format)?)
        }
    }
}

/// One record per prompt from its first two candidates.
fn annotate_samples(samples: &CandidateSamples, annotator: &dyn Annotator, source: SourceArg, soft: bool) -> CliResult<PreferenceDataset> {
    let space = samples.space().clone();
    let source = match source {
        SourceArg::OffPolicy => Source::OffPolicy,
        SourceArg::OnPolicy => Source::OnPolicy,
        SourceArg::External => Source::External,
    };
    let mut pairs = Vec::new();
    for (&x, ys) in samples.rows() {
        if ys.len() < 2 {
            return Err(CliError::Usage(format!(
                "prompt `{}` has {} candidate(s); annotation needs two",
                space.prompt_id(x),
                ys.len()
            )));
        }
        pairs.push((x, ys[0], ys[1]));
    }
    let queries: Vec<_> = pairs.iter().copied().filter(|&(_, a, b)| a != b).collect();
    let mut probs = annotator.annotate_batch(&queries)?.into_iter();
    let records = pairs
        .into_iter()
        .map(|(x, a, b)| {
            let (chosen, rejected, p) = if a == b {
                (a, b, Some(0.5))
            } else {
                let p = probs.next().expect("one probability per query");
                let (c, r, p) = if p >= 0.5 { (a, b, p) } else { (b, a, 1.0 - p) };
                (c, r, soft.then_some(p))
            };
            PreferenceRecord {
                prompt: space.prompt_id(x).to_owned(),
                chosen: space.response_id(x, chosen).to_owned(),
                rejected: space.response_id(x, rejected).to_owned(),
                p_chosen: p,
                source,
                annotator: annotator.name().to_owned(),
            }
        })
        .collect();
    Ok(PreferenceDataset::new(space, records)?)
}
