//! The multi-iteration on/off-policy protocol.
//!
//! Each iteration samples a fresh on-policy dataset from the current policy
//! and an off-policy dataset from the fixed generator `pi_off`, both labelled
//! by the same ground-truth annotator. It optionally measures the boundary
//! between them, trains on the configured source with the iteration's
//! starting policy as the reference, and records evaluation metrics against
//! the true reward.
//!
//! Given the same [`ProtocolConfig`], [`run_protocol`] produces the same
//! [`RunManifest`] bit for bit. Wall-clock time and artifact paths are kept
//! out of [`RunManifest::hash`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::align::{alignment_objective, train, LabelMode, Method, TrainManifest};
use crate::diagnostics::{boundary_measure, exact_boundary_score, BoundaryReport, DataSource};
use crate::error::{Error, Result};
use crate::hash::json_hash;
use crate::policy::{mean_kl, TabularPolicy};
use crate::preference::{Annotator, BTPreference, ExactBTAnnotator, RewardTable};
use crate::space::{write_jsonl, PreferenceDataset, PreferenceRecord, Source, Space};

/// Resample attempts before an identical pair becomes a degenerate record.
pub const DEFAULT_MAX_RESAMPLES: usize = 8;

/// Samples two responses per prompt, annotates them and emits one record per
/// prompt. Identical draws are redrawn up to `max_resamples` times; if the
/// draws still coincide the record is emitted with `chosen == rejected` and
/// `p_chosen = 0.5`.
///
/// The chosen candidate is the one the annotator prefers (the first draw on
/// an exact tie). Hard labels leave `p_chosen` absent; soft labels keep the
/// annotator's probability for the chosen candidate.
pub fn make_pairs<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    annotator: &dyn Annotator,
    source: Source,
    labels: LabelMode,
    max_resamples: usize,
    rng: &mut R,
) -> Result<PreferenceDataset> {
    crate::policy::same_space(policy.space(), annotator.space())?;
    let space = policy.space().clone();
    let mut draws = Vec::with_capacity(space.n_prompts());
    for x in 0..space.n_prompts() {
        let mut pick = policy.sample_indices(x, 2, rng);
        for _ in 0..max_resamples {
            if pick[0] != pick[1] {
                break;
            }
            pick = policy.sample_indices(x, 2, rng);
        }
        draws.push((x, pick[0], pick[1]));
    }
    let queries: Vec<_> = draws.iter().copied().filter(|&(_, a, b)| a != b).collect();
    let mut probs = annotator.annotate_batch(&queries)?.into_iter();
    let records = draws
        .into_iter()
        .map(|(x, a, b)| {
            let (chosen, rejected, p) = if a == b {
                (a, b, Some(0.5))
            } else {
                let p = probs.next().expect("one probability per query");
                let (chosen, rejected, p) = if p >= 0.5 { (a, b, p) } else { (b, a, 1.0 - p) };
                (chosen, rejected, (labels == LabelMode::Soft).then_some(p))
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
    PreferenceDataset::new(space, records)
}

/// Hard-labelled on-policy dataset: candidates sampled from the current policy.
pub fn make_pc_on<R: Rng + ?Sized>(policy: &TabularPolicy, annotator: &dyn Annotator, rng: &mut R) -> Result<PreferenceDataset> {
    make_pairs(policy, annotator, Source::OnPolicy, LabelMode::Hard, DEFAULT_MAX_RESAMPLES, rng)
}

/// Hard-labelled off-policy dataset: candidates sampled from the fixed
/// generator `pi_off`, with exactly the same draw sequence as [`make_pc_on`].
pub fn make_pc_off<R: Rng + ?Sized>(pi_off: &TabularPolicy, annotator: &dyn Annotator, rng: &mut R) -> Result<PreferenceDataset> {
    make_pairs(pi_off, annotator, Source::OffPolicy, LabelMode::Hard, DEFAULT_MAX_RESAMPLES, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    /// `Space::build(n_prompts, n_responses, seed)`.
    Synthetic {
        n_prompts: usize,
        n_responses: usize,
        #[serde(default)]
        seed: u64,
    },
    Path { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// i.i.d. `N(0, scale^2)` reward table.
    Random {
        seed: u64,
        #[serde(default = "one")]
        scale: f64,
    },
    Path { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

/// How to obtain a policy. A bare string in JSON is `"uniform"` or a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, try_from = "PolicySpecRepr")]
pub enum PolicySpec {
    Uniform,
    Path { path: PathBuf },
    /// Logits `alpha * r*(x, y) + noise * z` with `z ~ N(0, 1)` drawn from
    /// `seed`: positive `alpha` favours truth-preferred responses.
    Tempered {
        alpha: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolicySpecRepr {
    Bare(String),
    Tagged(PolicySpecTagged),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PolicySpecTagged {
    Uniform,
    Path {
        path: PathBuf,
    },
    Tempered {
        alpha: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl TryFrom<PolicySpecRepr> for PolicySpec {
    type Error = String;

    fn try_from(repr: PolicySpecRepr) -> std::result::Result<Self, String> {
        Ok(match repr {
            PolicySpecRepr::Bare(s) if s == "uniform" => PolicySpec::Uniform,
            PolicySpecRepr::Bare(s) if s.is_empty() => return Err("empty policy path".into()),
            PolicySpecRepr::Bare(s) => PolicySpec::Path { path: s.into() },
            PolicySpecRepr::Tagged(PolicySpecTagged::Uniform) => PolicySpec::Uniform,
            PolicySpecRepr::Tagged(PolicySpecTagged::Path { path }) => PolicySpec::Path { path },
            PolicySpecRepr::Tagged(PolicySpecTagged::Tempered { alpha, noise, seed }) => {
                PolicySpec::Tempered { alpha, noise, seed }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub pc_on: u64,
    #[serde(default = "one_u64")]
    pub pc_off: u64,
}

fn one_u64() -> u64 {
    1
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { pc_on: 0, pc_off: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryCheck {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub refuse_on_straddle: bool,
}

fn yes() -> bool {
    true
}

impl Default for BoundaryCheck {
    fn default() -> Self {
        BoundaryCheck {
            enabled: true,
            refuse_on_straddle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub space: SpaceSpec,
    pub truth: TruthSpec,
    pub pi_off: PolicySpec,
    #[serde(default = "uniform")]
    pub initial_policy: PolicySpec,
    pub iterations: Vec<DataSource>,
    pub method: Method,
    /// Candidates per record; only 2 is supported.
    #[serde(default = "two")]
    pub samples_per_prompt: usize,
    #[serde(default = "max_resamples")]
    pub max_resamples: usize,
    /// Whether generated records keep the annotator probability.
    #[serde(default)]
    pub labels: LabelMode,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub boundary_check: BoundaryCheck,
    /// KL weight for the reported alignment objective. Defaults to the DPO
    /// `beta`, or 0.1 for SLiC-HF.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_beta: Option<f64>,
}

fn uniform() -> PolicySpec {
    PolicySpec::Uniform
}
fn two() -> usize {
    2
}
fn max_resamples() -> usize {
    DEFAULT_MAX_RESAMPLES
}

impl ProtocolConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn eval_beta(&self) -> f64 {
        match (self.eval_beta, &self.method) {
            (Some(b), _) => b,
            (None, Method::Dpo(c)) => c.beta,
            (None, Method::Slic(_)) => 0.1,
        }
    }

    /// Checks everything that can be checked without running: the
    /// iteration list, method parameters and that every path exists.
    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() {
            return Err(Error::Config("iterations must list at least one data source".into()));
        }
        if self.samples_per_prompt != 2 {
            return Err(Error::Config(format!(
                "samples_per_prompt must be 2, got {}",
                self.samples_per_prompt
            )));
        }
        self.method.validate()?;
        if let Method::Dpo(c) = &self.method {
            if c.label_mode == LabelMode::Soft && self.labels == LabelMode::Hard {
                return Err(Error::Config("soft-label DPO needs labels = \"soft\"".into()));
            }
        }
        let beta = self.eval_beta();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("eval_beta must be positive, got {beta}")));
        }
        if let SpaceSpec::Synthetic { n_prompts, n_responses, .. } = self.space {
            if n_prompts == 0 || n_responses < 2 {
                return Err(Error::Config(
                    "synthetic space needs n_prompts >= 1 and n_responses >= 2".into(),
                ));
            }
        }
        if let TruthSpec::Random { scale, .. } = self.truth {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Config(format!("truth scale must be positive, got {scale}")));
            }
        }
        for spec in [&self.pi_off, &self.initial_policy] {
            if let PolicySpec::Tempered { alpha, noise, .. } = *spec {
                if !alpha.is_finite() || !(noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::Config(format!(
                        "tempered policy needs finite alpha and noise >= 0, got alpha {alpha}, noise {noise}"
                    )));
                }
            }
        }
        let paths = [
            match &self.space {
                SpaceSpec::Path { path } => Some(path),
                _ => None,
            },
            match &self.truth {
                TruthSpec::Path { path } => Some(path),
                _ => None,
            },
            match &self.pi_off {
                PolicySpec::Path { path } => Some(path),
                _ => None,
            },
            match &self.initial_policy {
                PolicySpec::Path { path } => Some(path),
                _ => None,
            },
        ];
        for path in paths.into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::Config(format!("no such file: {}", path.display())));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        json_hash(self)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Materialized inputs of a protocol run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub space: Arc<Space>,
    pub truth: RewardTable,
    pub pi_off: TabularPolicy,
    pub initial: TabularPolicy,
}

impl Setup {
    pub fn load(config: &ProtocolConfig) -> Result<Self> {
        let space = Arc::new(match &config.space {
            SpaceSpec::Synthetic { n_prompts, n_responses, seed } => Space::build(*n_prompts, *n_responses, *seed)?,
            SpaceSpec::Path { path } => Space::from_json(&read(path)?)?,
        });
        let truth = match &config.truth {
            TruthSpec::Random { seed, scale } => {
                RewardTable::random(space.clone(), *scale, &mut ChaCha8Rng::seed_from_u64(*seed))?
            }
            TruthSpec::Path { path } => RewardTable::from_json(&read(path)?, space.clone())?,
        };
        let pi_off = build_policy(&config.pi_off, &truth)?;
        let initial = build_policy(&config.initial_policy, &truth)?;
        Ok(Setup {
            space,
            truth,
            pi_off,
            initial,
        })
    }

    pub fn annotator(&self) -> ExactBTAnnotator {
        ExactBTAnnotator::new(BTPreference::FromReward(self.truth.clone())).with_name("truth")
    }
}

/// Builds a policy from a recipe; tempered recipes are relative to `truth`.
pub fn build_policy(spec: &PolicySpec, truth: &RewardTable) -> Result<TabularPolicy> {
    let space = truth.space().clone();
    match spec {
        PolicySpec::Uniform => Ok(TabularPolicy::uniform(space)),
        PolicySpec::Path { path } => TabularPolicy::from_json(&read(path)?, space),
        PolicySpec::Tempered { alpha, noise, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let logits = truth
                .values()
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|r| {
                            let z: f64 = rng.sample(StandardNormal);
                            alpha * r + noise * z
                        })
                        .collect()
                })
                .collect();
            TabularPolicy::new(space, logits)
        }
    }
}

/// Independent stream per (stage seed, iteration).
pub fn stage_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Alignment objective of the trained policy against the true reward,
    /// with the iteration's starting policy as reference.
    pub objective: f64,
    /// Mean over prompts of the trained policy's expected true reward.
    pub expected_reward: f64,
    /// Exact boundary score of the iteration's starting policy against `pi_off`.
    pub exact_boundary_score: f64,
    /// Mean KL from the trained policy to the starting policy.
    pub kl_to_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub data_source: DataSource,
    pub dataset_hash: String,
    pub reference_policy_hash: String,
    pub train: TrainManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub space_id: String,
    pub truth_hash: String,
    pub pi_off_hash: String,
    pub initial_policy_hash: String,
    /// Starting expected true reward of the initial policy and of `pi_off`.
    pub initial_expected_reward: f64,
    pub pi_off_expected_reward: f64,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    /// Hash of everything except wall-clock time and artifact paths.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.wall_clock_ms = None;
        canonical.artifacts.clear();
        json_hash(&canonical)
    }

    /// The final policy of the last iteration.
    pub fn final_policy(&self, space: Arc<Space>) -> Result<TabularPolicy> {
        let last = self
            .iterations
            .last()
            .ok_or_else(|| Error::Report(vec!["iterations".into()]))?;
        TabularPolicy::from_snapshot(&last.train.final_policy, space)
    }
}

/// In-memory artifacts of one iteration, for callers that want more than
/// the manifest.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub pc_on: PreferenceDataset,
    pub pc_off: PreferenceDataset,
    pub final_policy: TabularPolicy,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub setup: Setup,
    pub iterations: Vec<IterationArtifacts>,
}

pub fn run_protocol(config: &ProtocolConfig) -> Result<RunManifest> {
    Ok(run_protocol_full(config, None)?.manifest)
}

/// Runs the protocol; with `out_dir`, also writes every dataset and policy
/// there and records their paths in the manifest.
pub fn run_protocol_full(config: &ProtocolConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let started = Instant::now();
    config.validate()?;
    let setup = Setup::load(config)?;
    let annotator = setup.annotator();
    let truth_pref = annotator.preference().clone();
    let beta = config.eval_beta();
    let mut artifacts = BTreeMap::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        artifacts.insert("space".into(), write_text(dir, "space.json", &setup.space.to_json()?)?);
        artifacts.insert("truth".into(), write_text(dir, "truth.json", &setup.truth.to_json()?)?);
        artifacts.insert("pi_off".into(), write_text(dir, "pi_off.json", &setup.pi_off.to_json()?)?);
        artifacts.insert("initial_policy".into(), write_text(dir, "initial_policy.json", &setup.initial.to_json()?)?);
    }

    let mut current = setup.initial.clone();
    let mut records = Vec::with_capacity(config.iterations.len());
    let mut outputs = Vec::with_capacity(config.iterations.len());
    for (i, &source) in config.iterations.iter().enumerate() {
        let index = i + 1;
        let wrap = |e: Error| Error::Iteration {
            index,
            source: Box::new(e),
        };
        let pc_on = make_pairs(
            &current,
            &annotator,
            Source::OnPolicy,
            config.labels,
            config.max_resamples,
            &mut stage_rng(config.seeds.pc_on, index),
        )
        .map_err(wrap)?;
        let pc_off = make_pairs(
            &setup.pi_off,
            &annotator,
            Source::OffPolicy,
            config.labels,
            config.max_resamples,
            &mut stage_rng(config.seeds.pc_off, index),
        )
        .map_err(wrap)?;
        let boundary = if config.boundary_check.enabled {
            let report = boundary_measure(&pc_on, &pc_off, &annotator).map_err(wrap)?;
            if config.boundary_check.refuse_on_straddle && report.straddles_half() {
                return Err(wrap(Error::Straddle {
                    low: report.wilson_95[0],
                    high: report.wilson_95[1],
                }));
            }
            Some(report)
        } else {
            None
        };
        let dataset = match source {
            DataSource::PcOn => &pc_on,
            DataSource::PcOff => &pc_off,
        };
        let reference = current.clone();
        let out = train(&current, &reference, dataset, &config.method).map_err(wrap)?;
        let metrics = Metrics {
            objective: alignment_objective(&out.final_policy, &reference, &setup.truth, beta)?,
            expected_reward: out.final_policy.expected(setup.truth.values()),
            exact_boundary_score: exact_boundary_score(&current, &setup.pi_off, &truth_pref)?,
            kl_to_prev: mean_kl(&out.final_policy, &reference)?,
        };
        let train_manifest = TrainManifest::new(&config.method, dataset, &current, &out)?;
        if let Some(dir) = out_dir {
            let mut put = |key: String, name: String, text: String| -> Result<()> {
                artifacts.insert(key, write_text(dir, &name, &text)?);
                Ok(())
            };
            put(format!("iter{index}.pc_on"), format!("iter{index}_pc_on.jsonl"), jsonl(&pc_on)?)?;
            put(format!("iter{index}.pc_off"), format!("iter{index}_pc_off.jsonl"), jsonl(&pc_off)?)?;
            put(
                format!("iter{index}.policy"),
                format!("iter{index}_policy.json"),
                out.final_policy.to_json()?,
            )?;
        }
        records.push(IterationRecord {
            iteration: index,
            data_source: source,
            dataset_hash: train_manifest.dataset_hash.clone(),
            reference_policy_hash: reference.content_hash()?,
            train: train_manifest,
            boundary,
            metrics: Some(metrics),
        });
        current = out.final_policy.clone();
        outputs.push(IterationArtifacts {
            pc_on,
            pc_off,
            final_policy: out.final_policy,
        });
    }

    let manifest = RunManifest {
        config_hash: config.hash()?,
        space_id: setup.space.id().to_owned(),
        truth_hash: setup.truth.content_hash()?,
        pi_off_hash: setup.pi_off.content_hash()?,
        initial_policy_hash: setup.initial.content_hash()?,
        initial_expected_reward: setup.initial.expected(setup.truth.values()),
        pi_off_expected_reward: setup.pi_off.expected(setup.truth.values()),
        iterations: records,
        wall_clock_ms: Some(started.elapsed().as_secs_f64() * 1e3),
        artifacts,
    };
    Ok(RunOutput {
        manifest,
        setup,
        iterations: outputs,
    })
}

fn jsonl(dataset: &PreferenceDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(dataset, &mut buf)?;
    Ok(String::from_utf8(buf).expect("JSONL output is UTF-8"))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<String> {
    let path = dir.join(name);
    let mut file = fs::File::create(&path)?;
    file.write_all(text.as_bytes())?;
    Ok(path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_COLUMNS: [&str; 7] = [
    "iteration",
    "data_source",
    "boundary_score",
    "stage",
    "objective",
    "expected_reward",
    "kl_to_prev",
];

/// Renders the manifest as pretty JSON or as one CSV row per iteration.
///
/// CSV needs a boundary report and metrics on every iteration; missing
/// pieces are listed in the [`Error::Report`] rather than left blank.
pub fn emit_report(manifest: &RunManifest, format: ReportFormat) -> Result<Vec<u8>> {
    let mut missing = Vec::new();
    if manifest.iterations.is_empty() {
        missing.push("iterations".to_owned());
    }
    for it in &manifest.iterations {
        if it.metrics.is_none() {
            missing.push(format!("iterations[{}].metrics", it.iteration));
        }
        if format == ReportFormat::Csv && it.boundary.is_none() {
            missing.push(format!("iterations[{}].boundary", it.iteration));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Report(missing));
    }
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(manifest)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = CSV_COLUMNS.join(",");
            out.push('\n');
            for it in &manifest.iterations {
                let m = it.metrics.as_ref().expect("checked above");
                let b = it.boundary.as_ref().expect("checked above");
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    it.iteration,
                    it.data_source.as_str(),
                    b.boundary_score,
                    b.stage.as_str(),
                    m.objective,
                    m.expected_reward,
                    m.kl_to_prev
                ));
            }
            Ok(out.into_bytes())
        }
    }
}
