//! Stage diagnostics: the on/off-policy boundary measurement, preference
//! consistency and the estimators derived from it.
//!
//! Every indicator maps a preference in `[0, 0.5]` to 0 and `(0.5, 1]` to 1,
//! so an exact tie never counts as a win. In the boundary measurement a tie
//! therefore counts toward `v_off`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::policy::{same_space, TabularPolicy};
use crate::preference::{Annotator, BTPreference};
use crate::space::{PreferenceDataset, Space};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Thresholded preference indicator.
#[inline]
pub fn indicator(p: f64) -> bool {
    p > 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreferenceInjection,
    PreferenceFineTuning,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreferenceInjection => "preference_injection",
            Stage::PreferenceFineTuning => "preference_fine_tuning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    #[serde(rename = "PC_off")]
    PcOff,
    #[serde(rename = "PC_on")]
    PcOn,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::PcOff => "PC_off",
            DataSource::PcOn => "PC_on",
        }
    }
}

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Outcome of a boundary measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub v_on: u64,
    pub v_off: u64,
    /// `v_on / (v_on + v_off)`.
    pub boundary_score: f64,
    pub stage: Stage,
    pub recommended_data: DataSource,
    pub wilson_95: [f64; 2],
}

impl BoundaryReport {
    /// Builds the report from raw counts. The stage is preference injection
    /// exactly when `v_off > v_on`; ties go to fine-tuning.
    pub fn from_counts(v_on: u64, v_off: u64) -> Result<Self> {
        let n = v_on + v_off;
        if n == 0 {
            return Err(Error::Input("boundary score needs at least one comparison".into()));
        }
        let (stage, recommended_data) = if v_off > v_on {
            (Stage::PreferenceInjection, DataSource::PcOff)
        } else {
            (Stage::PreferenceFineTuning, DataSource::PcOn)
        };
        let (low, high) = wilson_interval(v_on, n, Z_95);
        Ok(BoundaryReport {
            v_on,
            v_off,
            boundary_score: v_on as f64 / n as f64,
            stage,
            recommended_data,
            wilson_95: [low, high],
        })
    }

    /// Half-width of the Wilson interval around its center.
    pub fn wilson_half_width(&self) -> f64 {
        0.5 * (self.wilson_95[1] - self.wilson_95[0])
    }

    /// Whether the 95% interval contains 0.5 strictly inside.
    pub fn straddles_half(&self) -> bool {
        self.wilson_95[0] < 0.5 && self.wilson_95[1] > 0.5
    }
}

fn shared_prompts(a: &PreferenceDataset, b: &PreferenceDataset) -> Result<Vec<(usize, usize, usize)>> {
    same_space(a.space(), b.space())?;
    let ia = a.by_prompt()?;
    let ib = b.by_prompt()?;
    let shared: Vec<_> = ia
        .iter()
        .filter_map(|(x, &ra)| ib.get(x).map(|&rb| (*x, ra, rb)))
        .collect();
    if shared.is_empty() {
        return Err(Error::Input("the two datasets share no prompt".into()));
    }
    Ok(shared)
}

/// Compares each on-policy candidate against each off-policy candidate of
/// every shared prompt; a strict preference for the on-policy candidate
/// counts toward `v_on`, anything else toward `v_off`.
pub fn boundary_measure(pc_on: &PreferenceDataset, pc_off: &PreferenceDataset, annotator: &dyn Annotator) -> Result<BoundaryReport> {
    same_space(pc_on.space(), annotator.space())?;
    let shared = shared_prompts(pc_on, pc_off)?;
    let on = pc_on.pairs();
    let off = pc_off.pairs();
    let mut queries = Vec::with_capacity(4 * shared.len());
    for &(x, ron, roff) in &shared {
        for y in [on[ron].chosen, on[ron].rejected] {
            for y_off in [off[roff].chosen, off[roff].rejected] {
                queries.push((x, y, y_off));
            }
        }
    }
    let probs = annotator.annotate_batch(&queries)?;
    let v_on = probs.iter().filter(|&&p| indicator(p)).count() as u64;
    BoundaryReport::from_counts(v_on, probs.len() as u64 - v_on)
}

/// The expectation that the sampled boundary score estimates:
/// `mean_x sum_{y, y'} pi_on(y|x) pi_off(y'|x) 1[truth(x, y, y') > 0.5]`.
/// Self-pairs contribute zero.
pub fn exact_boundary_score(pi_on: &TabularPolicy, pi_off: &TabularPolicy, truth: &BTPreference) -> Result<f64> {
    same_space(pi_on.space(), pi_off.space())?;
    same_space(pi_on.space(), truth.space())?;
    let n = pi_on.space().n_prompts();
    let total = par::sum_range(n, |x| {
        let p_on = pi_on.probs(x);
        let p_off = pi_off.probs(x);
        let mut s = 0.0;
        for (y, a) in p_on.iter().enumerate() {
            for (y2, b) in p_off.iter().enumerate() {
                if indicator(truth.prefer_at(x, y, y2)) {
                    s += a * b;
                }
            }
        }
        s
    });
    Ok(total / n as f64)
}

/// Fraction of ordered pairs `(x, y1, y2)`, `y1 != y2`, on which the two
/// thresholded preferences agree.
pub fn preference_consistency(p1: &BTPreference, p2: &BTPreference) -> Result<f64> {
    same_space(p1.space(), p2.space())?;
    let space = p1.space();
    let counts = par::map_range(space.n_prompts(), |x| {
        let n = space.n_responses(x);
        let mut agree = 0u64;
        for a in 0..n {
            for b in 0..n {
                if a != b && indicator(p1.prefer_at(x, a, b)) == indicator(p2.prefer_at(x, a, b)) {
                    agree += 1;
                }
            }
        }
        (agree, (n * (n - 1)) as u64)
    });
    let (agree, total) = counts
        .into_iter()
        .fold((0u64, 0u64), |(a, t), (da, dt)| (a + da, t + dt));
    Ok(agree as f64 / total as f64)
}

/// Sample counts for the consistency estimators. The indicator threshold is
/// fixed at 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    /// Samples per prompt from the policy under study.
    pub m: usize,
    /// Samples per prompt from the off-policy generator.
    pub n: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { m: 2, n: 2 }
    }
}

impl ConsistencyConfig {
    pub const THRESHOLD: f64 = 0.5;

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "consistency needs m, n >= 1 (got m = {}, n = {})",
                self.m, self.n
            )));
        }
        Ok(())
    }
}

/// Sampled responses per prompt, as response indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSamples {
    space: Arc<Space>,
    rows: BTreeMap<usize, Vec<usize>>,
}

impl CandidateSamples {
    pub fn new(space: Arc<Space>, rows: BTreeMap<usize, Vec<usize>>) -> Result<Self> {
        for (&x, ys) in &rows {
            if x >= space.n_prompts() {
                return Err(Error::lookup("prompt", format!("#{x}")));
            }
            if ys.is_empty() {
                return Err(Error::Input(format!(
                    "empty sample list for prompt `{}`",
                    space.prompt_id(x)
                )));
            }
            if let Some(&bad) = ys.iter().find(|&&y| y >= space.n_responses(x)) {
                return Err(Error::lookup("response", format!("{}/#{bad}", space.prompt_id(x))));
            }
        }
        if rows.is_empty() {
            return Err(Error::Input("no samples".into()));
        }
        Ok(CandidateSamples { space, rows })
    }

    /// Samples keyed by prompt id.
    pub fn from_ids(space: Arc<Space>, rows: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (pid, ys) in rows {
            let x = space.prompt_index(pid)?;
            let idx = ys
                .iter()
                .map(|y| space.response_index(x, y))
                .collect::<Result<Vec<_>>>()?;
            out.insert(x, idx);
        }
        CandidateSamples::new(space, out)
    }

    /// The two candidates of each record, keyed by prompt.
    pub fn from_dataset(dataset: &PreferenceDataset) -> Result<Self> {
        let index = dataset.by_prompt()?;
        let rows = index
            .into_iter()
            .map(|(x, i)| {
                let p = &dataset.pairs()[i];
                (x, vec![p.chosen, p.rejected])
            })
            .collect();
        CandidateSamples::new(dataset.space().clone(), rows)
    }

    /// Draws `k` responses per prompt from `policy`, prompts in order.
    pub fn sample<R: Rng + ?Sized>(policy: &TabularPolicy, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("sample count must be at least 1".into()));
        }
        let space = policy.space().clone();
        let rows = (0..space.n_prompts())
            .map(|x| (x, policy.sample_indices(x, k, rng)))
            .collect();
        CandidateSamples::new(space, rows)
    }

    /// Response ids keyed by prompt id.
    pub fn to_ids(&self) -> BTreeMap<String, Vec<String>> {
        self.rows
            .iter()
            .map(|(&x, ys)| {
                let ids = ys.iter().map(|&y| self.space.response_id(x, y).to_owned()).collect();
                (self.space.prompt_id(x).to_owned(), ids)
            })
            .collect()
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn rows(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.rows
    }
}

fn aligned<'a>(on: &'a CandidateSamples, off: &'a CandidateSamples) -> Result<Vec<(usize, &'a [usize], &'a [usize])>> {
    same_space(&on.space, &off.space)?;
    if on.rows.len() != off.rows.len() || on.rows.keys().zip(off.rows.keys()).any(|(a, b)| a != b) {
        return Err(Error::Input("on- and off-policy samples must cover the same prompts".into()));
    }
    Ok(on
        .rows
        .iter()
        .zip(off.rows.values())
        .map(|((&x, a), b)| (x, a.as_slice(), b.as_slice()))
        .collect())
}

/// Macro average over prompts of the per-prompt fraction of cross pairs
/// satisfying `hit`. Each per-prompt fraction is `count / (m n)`, so when
/// `m n` is a power of two the result equals the pooled ratio exactly.
fn macro_rate(rows: &[(usize, &[usize], &[usize])], hit: impl Fn(usize, usize, usize) -> bool + Sync + Send) -> f64 {
    let rates = par::map_slice(rows, |&(x, on, off)| {
        let count = on
            .iter()
            .flat_map(|&a| off.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| hit(x, a, b))
            .count();
        count as f64 / (on.len() * off.len()) as f64
    });
    rates.iter().sum::<f64>() / rates.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    On,
    Off,
}

/// Consistency of the truth with `pi_on` (side `On`) or `pi_off` (side
/// `Off`) under the assumption that the two sample sets are fully separated:
/// the fraction of cross pairs the truth decides for that side.
pub fn simplified_consistency(on: &CandidateSamples, off: &CandidateSamples, truth: &BTPreference, side: Side) -> Result<f64> {
    same_space(&on.space, truth.space())?;
    let rows = aligned(on, off)?;
    Ok(match side {
        Side::On => macro_rate(&rows, |x, a, b| indicator(truth.prefer_at(x, a, b))),
        Side::Off => macro_rate(&rows, |x, a, b| indicator(truth.prefer_at(x, b, a))),
    })
}

/// Sampled preference consistency between `truth` and `model` on the cross
/// pairs `(y_on, y_off)`, without the separation assumption.
pub fn sampled_consistency(on: &CandidateSamples, off: &CandidateSamples, truth: &BTPreference, model: &BTPreference) -> Result<f64> {
    same_space(&on.space, truth.space())?;
    same_space(&on.space, model.space())?;
    let rows = aligned(on, off)?;
    Ok(macro_rate(&rows, |x, a, b| {
        indicator(truth.prefer_at(x, a, b)) == indicator(model.prefer_at(x, a, b))
    }))
}

/// Fraction of cross pairs where `pi_on` gives the on-policy sample strictly
/// higher probability, macro-averaged over prompts.
pub fn distinct_rate(pi_on: &TabularPolicy, on: &CandidateSamples, off: &CandidateSamples) -> Result<f64> {
    same_space(pi_on.space(), &on.space)?;
    let rows = aligned(on, off)?;
    Ok(macro_rate(&rows, |x, a, b| {
        let row = pi_on.logit_row(x);
        row[a] > row[b]
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivIntra {
    pub mean: f64,
    pub per_record: Vec<f64>,
}

/// Signed mean of `log pi(chosen) - log pi(rejected)` over the records.
pub fn div_intra(policy: &TabularPolicy, dataset: &PreferenceDataset) -> Result<DivIntra> {
    same_space(policy.space(), dataset.space())?;
    if dataset.is_empty() {
        return Err(Error::Input("Div_intra of an empty dataset is undefined".into()));
    }
    let per_record: Vec<f64> = dataset
        .pairs()
        .iter()
        .map(|p| policy.log_prob_at(p.prompt, p.chosen) - policy.log_prob_at(p.prompt, p.rejected))
        .collect();
    let mean = per_record.iter().sum::<f64>() / per_record.len() as f64;
    Ok(DivIntra { mean, per_record })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Chosen candidate of `a` against chosen candidate of `b`.
    ChosenVsChosen,
    /// A uniformly drawn candidate of `a` against the chosen candidate of `b`.
    RandomVsChosen,
}

/// Fraction of shared prompts where the annotator strictly prefers the
/// selected candidate of `dataset_a` over that of `dataset_b`.
pub fn quality_win_rate<R: Rng + ?Sized>(
    dataset_a: &PreferenceDataset,
    dataset_b: &PreferenceDataset,
    annotator: &dyn Annotator,
    pairing: Pairing,
    rng: &mut R,
) -> Result<f64> {
    same_space(dataset_a.space(), annotator.space())?;
    let shared = shared_prompts(dataset_a, dataset_b)?;
    let a = dataset_a.pairs();
    let b = dataset_b.pairs();
    let queries: Vec<_> = shared
        .iter()
        .map(|&(x, ra, rb)| {
            let ya = match pairing {
                Pairing::ChosenVsChosen => a[ra].chosen,
                Pairing::RandomVsChosen => {
                    if rng.random_bool(0.5) {
                        a[ra].chosen
                    } else {
                        a[ra].rejected
                    }
                }
            };
            (x, ya, b[rb].chosen)
        })
        .collect();
    let probs = annotator.annotate_batch(&queries)?;
    Ok(probs.iter().filter(|&&p| indicator(p)).count() as f64 / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preference::{ExactBTAnnotator, RewardTable};
    use crate::space::{PreferenceRecord, Source};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(n_prompts: usize, n_responses: usize) -> Arc<Space> {
        Arc::new(Space::build(n_prompts, n_responses, 0).unwrap())
    }

    fn rec(x: &str, w: &str, l: &str, source: Source) -> PreferenceRecord {
        PreferenceRecord {
            prompt: x.into(),
            chosen: w.into(),
            rejected: l.into(),
            p_chosen: None,
            source,
            annotator: "t".into(),
        }
    }

    /// Reward increasing in the response index.
    fn ladder(s: &Arc<Space>) -> RewardTable {
        let values = (0..s.n_prompts())
            .map(|x| (0..s.n_responses(x)).map(|r| r as f64).collect())
            .collect();
        RewardTable::new(s.clone(), values).unwrap()
    }

    #[test]
    fn wilson_reference_values() {
        // 8 of 10 at z = 1.96: (0.4902, 0.9433).
        let (lo, hi) = wilson_interval(8, 10, 1.96);
        assert!((lo - 0.4902).abs() < 1e-4 && (hi - 0.9433).abs() < 1e-4);
        assert_eq!(wilson_interval(0, 0, Z_95), (0.0, 1.0));
    }

    #[test]
    fn report_decision_rule() {
        for (v_on, v_off, stage) in [
            (62, 38, Stage::PreferenceFineTuning),
            (23, 77, Stage::PreferenceInjection),
            (50, 50, Stage::PreferenceFineTuning),
        ] {
            let r = BoundaryReport::from_counts(v_on, v_off).unwrap();
            assert_eq!(r.stage, stage);
            assert_eq!(r.recommended_data == DataSource::PcOff, stage == Stage::PreferenceInjection);
            assert_eq!(r.boundary_score, v_on as f64 / 100.0);
        }
        assert!(BoundaryReport::from_counts(0, 0).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = BoundaryReport::from_counts(3, 1).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["stage"], "preference_fine_tuning");
        assert_eq!(v["recommended_data"], "PC_on");
        assert_eq!(v["wilson_95"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn on_policy_always_preferred() {
        let s = space(3, 4);
        let ann = ExactBTAnnotator::new(BTPreference::FromReward(ladder(&s)));
        let on = PreferenceDataset::new(
            s.clone(),
            ["x0", "x1", "x2"].iter().map(|x| rec(x, "y3", "y2", Source::OnPolicy)).collect(),
        )
        .unwrap();
        let off = PreferenceDataset::new(
            s,
            ["x0", "x1", "x2"].iter().map(|x| rec(x, "y1", "y0", Source::OffPolicy)).collect(),
        )
        .unwrap();
        let r = boundary_measure(&on, &off, &ann).unwrap();
        assert_eq!((r.v_on, r.v_off), (12, 0));
        assert_eq!(r.stage, Stage::PreferenceFineTuning);
        assert_eq!(r.recommended_data, DataSource::PcOn);
    }

    #[test]
    fn boundary_input_errors() {
        let s = space(2, 3);
        let ann = ExactBTAnnotator::new(BTPreference::FromReward(ladder(&s)));
        let on = PreferenceDataset::new(s.clone(), vec![rec("x0", "y1", "y0", Source::OnPolicy)]).unwrap();
        let off = PreferenceDataset::new(s.clone(), vec![rec("x1", "y1", "y0", Source::OffPolicy)]).unwrap();
        assert!(matches!(boundary_measure(&on, &off, &ann), Err(Error::Input(_))));
        let dup = PreferenceDataset::new(
            s,
            vec![rec("x0", "y1", "y0", Source::OffPolicy), rec("x0", "y2", "y0", Source::OffPolicy)],
        )
        .unwrap();
        assert!(matches!(boundary_measure(&on, &dup, &ann), Err(Error::Input(_))));
    }

    #[test]
    fn exact_score_two_response_uniform() {
        // truth(y0 > y1) = 0.9 via reward gap ln 9.
        let s = space(1, 2);
        let truth = BTPreference::FromReward(RewardTable::new(s.clone(), vec![vec![9f64.ln(), 0.0]]).unwrap());
        assert!((truth.prefer_at(0, 0, 1) - 0.9).abs() < 1e-15);
        let u = TabularPolicy::uniform(s);
        assert_eq!(exact_boundary_score(&u, &u, &truth).unwrap(), 0.25);
    }

    #[test]
    fn exact_score_one_hot() {
        let s = space(1, 4);
        let truth = BTPreference::FromReward(ladder(&s));
        let on = TabularPolicy::new(s.clone(), vec![vec![0.0, 0.0, 0.0, 800.0]]).unwrap();
        let off = TabularPolicy::new(s, vec![vec![800.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(exact_boundary_score(&on, &off, &truth).unwrap(), 1.0);
    }

    #[test]
    fn consistency_cases() {
        let s = space(1, 3);
        let p1 = BTPreference::FromPolicy(TabularPolicy::from_probs(s.clone(), &[vec![0.5, 0.3, 0.2]]).unwrap());
        let p2 = BTPreference::FromPolicy(TabularPolicy::uniform(s.clone()));
        assert_eq!(preference_consistency(&p1, &p1).unwrap(), 1.0);
        assert_eq!(preference_consistency(&p1, &p2).unwrap(), 0.5);
        let r = ladder(&s);
        let fwd = BTPreference::FromReward(r.clone());
        let rev = BTPreference::FromReward(r.map(|_, _, v| -v));
        assert_eq!(preference_consistency(&fwd, &rev).unwrap(), 0.0);
    }

    #[test]
    fn simplified_sides() {
        let s = space(2, 4);
        let truth = BTPreference::FromReward(ladder(&s));
        let on = CandidateSamples::new(s.clone(), [(0, vec![3, 2]), (1, vec![3])].into()).unwrap();
        let off = CandidateSamples::new(s.clone(), [(0, vec![0, 1]), (1, vec![1, 0, 2])].into()).unwrap();
        assert_eq!(simplified_consistency(&on, &off, &truth, Side::On).unwrap(), 1.0);
        assert_eq!(simplified_consistency(&on, &off, &truth, Side::Off).unwrap(), 0.0);
        let empty = CandidateSamples::new(s.clone(), [(0, vec![])].into());
        assert!(matches!(empty, Err(Error::Input(_))));
        let partial = CandidateSamples::new(s, [(0, vec![1])].into()).unwrap();
        assert!(simplified_consistency(&on, &partial, &truth, Side::On).is_err());
    }

    #[test]
    fn distinct_rate_cases() {
        let s = space(1, 4);
        let pi = TabularPolicy::new(s.clone(), vec![vec![800.0, 0.0, 0.0, 0.0]]).unwrap();
        let on = CandidateSamples::new(s.clone(), [(0, vec![0, 0])].into()).unwrap();
        let off = CandidateSamples::new(s.clone(), [(0, vec![1, 3])].into()).unwrap();
        assert_eq!(distinct_rate(&pi, &on, &off).unwrap(), 1.0);
        let same = CandidateSamples::new(s, [(0, vec![1, 3])].into()).unwrap();
        assert_eq!(distinct_rate(&pi, &same, &same).unwrap(), 0.0);
    }

    #[test]
    fn div_intra_cases() {
        let s = space(2, 3);
        let pi = TabularPolicy::from_probs(s.clone(), &[vec![0.4, 0.1, 0.5], vec![0.2, 0.3, 0.5]]).unwrap();
        let one = PreferenceDataset::new(s.clone(), vec![rec("x0", "y0", "y1", Source::External)]).unwrap();
        let d = div_intra(&pi, &one).unwrap();
        assert!((d.mean - 4f64.ln()).abs() < 1e-12);
        assert!((d.mean - 1.386294).abs() < 1e-6);

        let flat = TabularPolicy::uniform(s.clone());
        assert_eq!(div_intra(&flat, &one).unwrap().mean, 0.0);

        // Differences +0.2 and -0.2.
        let logits = vec![vec![0.2, 0.0, 0.0], vec![0.0, 0.2, 0.0]];
        let pi = TabularPolicy::new(s.clone(), logits).unwrap();
        let two = PreferenceDataset::new(
            s.clone(),
            vec![rec("x0", "y0", "y1", Source::External), rec("x1", "y0", "y1", Source::External)],
        )
        .unwrap();
        let d = div_intra(&pi, &two).unwrap();
        assert!((d.per_record[0] - 0.2).abs() < 1e-15 && (d.per_record[1] + 0.2).abs() < 1e-15);
        assert!(d.mean.abs() < 1e-15);
        assert!(div_intra(&pi, &PreferenceDataset::empty(s)).is_err());
    }

    #[test]
    fn quality_win_rate_cases() {
        let s = space(3, 4);
        let ann = ExactBTAnnotator::new(BTPreference::FromReward(ladder(&s)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = PreferenceDataset::new(
            s.clone(),
            ["x0", "x1", "x2"].iter().map(|x| rec(x, "y3", "y2", Source::OnPolicy)).collect(),
        )
        .unwrap();
        let bad = PreferenceDataset::new(
            s,
            ["x0", "x1", "x2"].iter().map(|x| rec(x, "y1", "y0", Source::OffPolicy)).collect(),
        )
        .unwrap();
        assert_eq!(quality_win_rate(&good, &good, &ann, Pairing::ChosenVsChosen, &mut rng).unwrap(), 0.0);
        assert_eq!(quality_win_rate(&good, &bad, &ann, Pairing::ChosenVsChosen, &mut rng).unwrap(), 1.0);
        assert_eq!(quality_win_rate(&good, &bad, &ann, Pairing::RandomVsChosen, &mut rng).unwrap(), 1.0);
    }
}
