//! Bradley-Terry preference distributions.
//!
//! A preference `P(y1 > y2 | x)` is built either from a reward table,
//! `sigmoid(r(x, y1) - r(x, y2))`, or from a policy,
//! `sigmoid(log pi(y1|x) - log pi(y2|x))`. Policy-derived preferences invert
//! exactly: [`reconstruct_pi_g`] recovers the unique policy that induces a
//! given Bradley-Terry-consistent preference.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;
use crate::math::{bce_with_logit, sigmoid};
use crate::par;
use crate::policy::{check_matrix, map_to_matrix, matrix_to_map, same_space, CellMap, TabularPolicy};
use crate::space::{PreferenceDataset, Space};

/// Real-valued score per (prompt, response) cell.
#[derive(Debug, Clone)]
pub struct RewardTable {
    space: Arc<Space>,
    values: Vec<Vec<f64>>,
}

impl PartialEq for RewardTable {
    fn eq(&self, other: &Self) -> bool {
        self.space.id() == other.space.id() && self.values == other.values
    }
}

/// JSON form, keyed like the policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSnapshot {
    pub space_ref: String,
    pub reward: CellMap,
}

impl RewardTable {
    pub fn new(space: Arc<Space>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_matrix(&space, &values, "reward")?;
        Ok(RewardTable { space, values })
    }

    pub fn constant(space: Arc<Space>, c: f64) -> Self {
        let values = space
            .zeros()
            .into_iter()
            .map(|row| row.into_iter().map(|_| c).collect())
            .collect();
        RewardTable { space, values }
    }

    /// i.i.d. `N(0, scale^2)` rewards.
    pub fn random<R: Rng + ?Sized>(space: Arc<Space>, scale: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, scale)
            .map_err(|e| Error::Config(format!("reward scale {scale}: {e}")))?;
        let values = space
            .zeros()
            .into_iter()
            .map(|row| row.into_iter().map(|_| normal.sample(rng)).collect())
            .collect();
        Ok(RewardTable { space, values })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.values[prompt]
    }

    pub fn at(&self, prompt: usize, response: usize) -> f64 {
        self.values[prompt][response]
    }

    pub fn get(&self, prompt: &str, response: &str) -> Result<f64> {
        let (p, r) = self.space.cell(prompt, response)?;
        Ok(self.values[p][r])
    }

    /// Same table with each row shifted to mean zero.
    pub fn gauge_fixed(&self) -> Self {
        let values = self
            .values
            .iter()
            .map(|row| {
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                row.iter().map(|v| v - mean).collect()
            })
            .collect();
        RewardTable {
            space: self.space.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(p, row)| row.iter().enumerate().map(|(r, &v)| f(p, r, v)).collect())
            .collect();
        RewardTable {
            space: self.space.clone(),
            values,
        }
    }

    pub fn to_snapshot(&self) -> RewardSnapshot {
        RewardSnapshot {
            space_ref: self.space.id().to_owned(),
            reward: matrix_to_map(&self.space, &self.values),
        }
    }

    pub fn from_snapshot(snapshot: &RewardSnapshot, space: Arc<Space>) -> Result<Self> {
        space.check_id("reward table", &snapshot.space_ref)?;
        let values = map_to_matrix(&space, &snapshot.reward, "reward")?;
        RewardTable::new(space, values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_snapshot())?)
    }

    pub fn from_json(text: &str, space: Arc<Space>) -> Result<Self> {
        let snapshot: RewardSnapshot = serde_json::from_str(text)?;
        Self::from_snapshot(&snapshot, space)
    }

    pub fn content_hash(&self) -> Result<String> {
        hash::json_hash(&self.to_snapshot())
    }
}

/// Explicit pairwise preference matrices, one `n x n` block per prompt.
///
/// Used for empirically supplied preferences that need not come from any
/// score. Entries must satisfy `p[a][b] + p[b][a] = 1` and `p[a][a] = 0.5`.
#[derive(Debug, Clone)]
pub struct PreferenceTable {
    space: Arc<Space>,
    probs: Vec<Vec<Vec<f64>>>,
}

impl PreferenceTable {
    pub fn new(space: Arc<Space>, probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if probs.len() != space.n_prompts() {
            return Err(Error::Shape("one preference block per prompt".into()));
        }
        for (x, block) in probs.iter().enumerate() {
            let n = space.n_responses(x);
            if block.len() != n || block.iter().any(|row| row.len() != n) {
                return Err(Error::Shape(format!(
                    "preference block for prompt `{}` must be {n}x{n}",
                    space.prompt_id(x)
                )));
            }
            for a in 0..n {
                if block[a][a] != 0.5 {
                    return Err(Error::Range("self-preference must be 0.5".into()));
                }
                for b in 0..n {
                    let v = block[a][b];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Range(format!("preference {v} outside [0, 1]")));
                    }
                    if (v + block[b][a] - 1.0).abs() > 1e-12 {
                        return Err(Error::Range(format!(
                            "preference block for prompt `{}` is not antisymmetric at ({a}, {b})",
                            space.prompt_id(x)
                        )));
                    }
                }
            }
        }
        Ok(PreferenceTable { space, probs })
    }
}

/// Where a preference distribution comes from.
#[derive(Debug, Clone)]
pub enum BTPreference {
    FromReward(RewardTable),
    FromPolicy(TabularPolicy),
    Table(PreferenceTable),
}

impl BTPreference {
    pub fn space(&self) -> &Arc<Space> {
        match self {
            BTPreference::FromReward(r) => r.space(),
            BTPreference::FromPolicy(p) => p.space(),
            BTPreference::Table(t) => &t.space,
        }
    }

    /// Score difference whose logistic is the preference, when one exists.
    fn score_gap(&self, prompt: usize, a: usize, b: usize) -> Option<f64> {
        match self {
            BTPreference::FromReward(r) => Some(r.at(prompt, a) - r.at(prompt, b)),
            // log pi(a) - log pi(b): the row normalizer cancels.
            BTPreference::FromPolicy(p) => {
                let row = p.logit_row(prompt);
                Some(row[a] - row[b])
            }
            BTPreference::Table(_) => None,
        }
    }

    /// `P(a > b | prompt)` by index.
    pub fn prefer_at(&self, prompt: usize, a: usize, b: usize) -> f64 {
        match self.score_gap(prompt, a, b) {
            Some(d) => sigmoid(d),
            None => match self {
                BTPreference::Table(t) => t.probs[prompt][a][b],
                _ => unreachable!(),
            },
        }
    }

    /// `P(y1 > y2 | prompt)` by id.
    pub fn prefer(&self, prompt: &str, y1: &str, y2: &str) -> Result<f64> {
        let space = self.space();
        let p = space.prompt_index(prompt)?;
        let a = space.response_index(p, y1)?;
        let b = space.response_index(p, y2)?;
        Ok(self.prefer_at(p, a, b))
    }
}

/// `sigmoid(r(x, y1) - r(x, y2))`.
pub fn bt_from_reward(reward: &RewardTable, prompt: &str, y1: &str, y2: &str) -> Result<f64> {
    let (p, a) = reward.space.cell(prompt, y1)?;
    let b = reward.space.response_index(p, y2)?;
    Ok(sigmoid(reward.at(p, a) - reward.at(p, b)))
}

/// `sigmoid(log pi(y1|x) - log pi(y2|x))`.
pub fn bt_from_policy(policy: &TabularPolicy, prompt: &str, y1: &str, y2: &str) -> Result<f64> {
    let (p, a) = policy.space().cell(prompt, y1)?;
    let b = policy.space().response_index(p, y2)?;
    Ok(sigmoid(policy.log_prob_at(p, a) - policy.log_prob_at(p, b)))
}

/// Largest tolerated cocycle violation, in log-odds, before a preference is
/// declared inconsistent with any Bradley-Terry policy.
pub const COCYCLE_TOLERANCE: f64 = 1e-6;

/// Recovers the policy that induces `pref`.
///
/// With odds `f(x, a, b) = P(a > b) / (1 - P(a > b))`, each column gives
/// `pi(b | x) = 1 / sum_a f(x, a, b)`. The result is exact when `pref` is
/// Bradley-Terry consistent; otherwise a [`Error::Consistency`] reports the
/// largest violation of `f(a, b) f(b, c) = f(a, c)`.
pub fn reconstruct_pi_g(pref: &BTPreference) -> Result<TabularPolicy> {
    reconstruct_pi_g_with_tolerance(pref, COCYCLE_TOLERANCE)
}

pub fn reconstruct_pi_g_with_tolerance(pref: &BTPreference, tolerance: f64) -> Result<TabularPolicy> {
    let space = pref.space().clone();
    let rows = par::map_range(space.n_prompts(), |x| reconstruct_row(pref, &space, x, tolerance));
    let logits = rows.into_iter().collect::<Result<Vec<_>>>()?;
    TabularPolicy::new(space, logits)
}

fn reconstruct_row(pref: &BTPreference, space: &Space, x: usize, tolerance: f64) -> Result<Vec<f64>> {
    let n = space.n_responses(x);
    let mut odds = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let p = pref.prefer_at(x, a, b);
            if p <= 0.0 || p >= 1.0 || p.is_nan() {
                return Err(Error::Domain {
                    prompt: space.prompt_id(x).to_owned(),
                    a: space.response_id(x, a).to_owned(),
                    b: space.response_id(x, b).to_owned(),
                    value: p,
                });
            }
            odds[a][b] = p / (1.0 - p);
        }
    }

    // Cocycle through pivot 0: log f(a, b) = log f(a, 0) + log f(0, b).
    // Together with antisymmetry this implies the identity for all triples.
    let mut max_violation: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let v = (odds[a][b].ln() - odds[a][0].ln() - odds[0][b].ln()).abs();
            max_violation = max_violation.max(v);
        }
    }
    if max_violation > tolerance {
        return Err(Error::Consistency {
            prompt: space.prompt_id(x).to_owned(),
            max_violation,
        });
    }

    Ok((0..n)
        .map(|b| {
            let column: f64 = (0..n).map(|a| odds[a][b]).sum();
            -column.ln()
        })
        .collect())
}

/// Supported link functions for reward fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default)]
    pub link: Link,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
    /// Stop early once the gradient norm falls to this value.
    #[serde(default)]
    pub tolerance: f64,
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FittedReward {
    /// Gauge-fixed (per-prompt mean zero) rewards.
    pub reward: RewardTable,
    pub loss: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub loss_trace: Vec<f64>,
}

/// Mean Bradley-Terry negative log-likelihood plus `l2/2 * ||r||^2`.
///
/// Soft labels use cross-entropy against `p_chosen`; hard labels are the
/// `p_chosen = 1` case.
pub fn reward_loss(dataset: &PreferenceDataset, values: &[Vec<f64>], l2: f64) -> (f64, Vec<Vec<f64>>) {
    let n = dataset.len().max(1) as f64;
    let mut grad: Vec<Vec<f64>> = values.iter().map(|row| vec![0.0; row.len()]).collect();
    let mut loss = 0.0;
    for pair in dataset.pairs() {
        let row = &values[pair.prompt];
        let d = row[pair.chosen] - row[pair.rejected];
        let target = pair.target();
        loss += bce_with_logit(d, target);
        let g = (sigmoid(d) - target) / n;
        grad[pair.prompt][pair.chosen] += g;
        grad[pair.prompt][pair.rejected] -= g;
    }
    loss /= n;
    if l2 > 0.0 {
        for (grow, row) in grad.iter_mut().zip(values) {
            for (g, v) in grow.iter_mut().zip(row) {
                loss += 0.5 * l2 * v * v;
                *g += l2 * v;
            }
        }
    }
    (loss, grad)
}

fn norm(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fits a reward table to a preference dataset by full-batch gradient descent.
pub fn fit_reward(dataset: &PreferenceDataset, config: &FitConfig) -> Result<FittedReward> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot fit a reward model to an empty dataset".into()));
    }
    let space = dataset.space().clone();
    let mut values = space.zeros();
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut steps = 0;
    let (mut loss, mut grad) = reward_loss(dataset, &values, config.l2);
    trace.push(loss);
    while steps < config.steps && norm(&grad) > config.tolerance {
        for (row, grow) in values.iter_mut().zip(&grad) {
            for (v, g) in row.iter_mut().zip(grow) {
                *v -= config.learning_rate * g;
            }
        }
        steps += 1;
        (loss, grad) = reward_loss(dataset, &values, config.l2);
        trace.push(loss);
    }
    let reward = RewardTable::new(space, values)?.gauge_fixed();
    Ok(FittedReward {
        grad_norm: norm(&grad),
        reward,
        loss,
        steps,
        loss_trace: trace,
    })
}

/// A source of pairwise judgements: the probability that candidate `a` is
/// preferred to candidate `b` for a prompt.
pub trait Annotator: Send + Sync {
    /// Tag written into the `annotator` field of emitted records.
    fn name(&self) -> &str;

    fn space(&self) -> &Arc<Space>;

    fn annotate_at(&self, prompt: usize, a: usize, b: usize) -> Result<f64>;

    /// Annotates many `(prompt, a, b)` queries; results follow input order.
    fn annotate_batch(&self, queries: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|&(x, a, b)| self.annotate_at(x, a, b))
            .collect()
    }
}

/// Probability that `a` is preferred to `b`, by id.
pub fn annotate(annotator: &dyn Annotator, prompt: &str, a: &str, b: &str) -> Result<f64> {
    let space = annotator.space();
    let x = space.prompt_index(prompt)?;
    let ia = space.response_index(x, a)?;
    let ib = space.response_index(x, b)?;
    annotator.annotate_at(x, ia, ib)
}

/// Annotator backed by an exact preference distribution.
#[derive(Debug, Clone)]
pub struct ExactBTAnnotator {
    pref: BTPreference,
    name: String,
}

impl ExactBTAnnotator {
    pub fn new(pref: BTPreference) -> Self {
        ExactBTAnnotator {
            pref,
            name: "exact-bt".into(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn preference(&self) -> &BTPreference {
        &self.pref
    }
}

impl Annotator for ExactBTAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &Arc<Space> {
        self.pref.space()
    }

    fn annotate_at(&self, prompt: usize, a: usize, b: usize) -> Result<f64> {
        Ok(self.pref.prefer_at(prompt, a, b))
    }

    fn annotate_batch(&self, queries: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        Ok(par::map_slice(queries, |&(x, a, b)| self.pref.prefer_at(x, a, b)))
    }
}

/// Checks that two preferences live on the same space.
pub fn same_preference_space(a: &BTPreference, b: &BTPreference) -> Result<()> {
    same_space(a.space(), b.space())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{PreferenceRecord, Source};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(n_prompts: usize, n_responses: usize) -> Arc<Space> {
        Arc::new(Space::build(n_prompts, n_responses, 0).unwrap())
    }

    #[test]
    fn bt_from_reward_cases() {
        let s = space(1, 3);
        let r = RewardTable::new(s, vec![vec![3f64.ln(), 0.0, 0.0]]).unwrap();
        assert_eq!(bt_from_reward(&r, "x0", "y1", "y2").unwrap(), 0.5);
        assert!((bt_from_reward(&r, "x0", "y0", "y1").unwrap() - 0.75).abs() < 1e-15);
        let fwd = bt_from_reward(&r, "x0", "y0", "y1").unwrap();
        let back = bt_from_reward(&r, "x0", "y1", "y0").unwrap();
        assert_eq!(fwd + back, 1.0);
        assert!(bt_from_reward(&r, "x0", "y0", "y7").is_err());
    }

    #[test]
    fn bt_from_policy_cases() {
        let s = space(1, 3);
        let u = TabularPolicy::uniform(s.clone());
        assert_eq!(bt_from_policy(&u, "x0", "y0", "y2").unwrap(), 0.5);
        let pi = TabularPolicy::from_probs(s, &[vec![0.5, 0.3, 0.2]]).unwrap();
        assert!((bt_from_policy(&pi, "x0", "y0", "y1").unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(bt_from_policy(&pi, "x0", "y1", "y1").unwrap(), 0.5);
        let pref = BTPreference::FromPolicy(pi);
        assert!((pref.prefer("x0", "y0", "y1").unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_half_gives_uniform() {
        let s = space(2, 5);
        let pref = BTPreference::FromReward(RewardTable::constant(s, 0.0));
        let pi = reconstruct_pi_g(&pref).unwrap();
        for x in 0..2 {
            for p in pi.probs(x) {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reconstruct_three_point() {
        let s = space(1, 3);
        let pi = TabularPolicy::from_probs(s, &[vec![0.5, 0.3, 0.2]]).unwrap();
        let back = reconstruct_pi_g(&BTPreference::FromPolicy(pi)).unwrap();
        // Column sum for y0: (0.5 + 0.3 + 0.2) / 0.5 = 2.
        let lp = back.logit_row(0);
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
        let p = back.probs(0);
        for (got, want) in p.iter().zip([0.5, 0.3, 0.2]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_rejects_degenerate() {
        let s = space(1, 2);
        let t = PreferenceTable::new(s, vec![vec![vec![0.5, 1.0], vec![0.0, 0.5]]]).unwrap();
        match reconstruct_pi_g(&BTPreference::Table(t)) {
            Err(Error::Domain { a, b, value, .. }) => {
                assert_eq!((a.as_str(), b.as_str()), ("y0", "y1"));
                assert_eq!(value, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reconstruct_rejects_cocycle_violation() {
        // Intransitive odds: a > b > c > a.
        let s = space(1, 3);
        let block = vec![
            vec![0.5, 0.8, 0.2],
            vec![0.2, 0.5, 0.8],
            vec![0.8, 0.2, 0.5],
        ];
        let t = PreferenceTable::new(s, vec![block]).unwrap();
        match reconstruct_pi_g(&BTPreference::Table(t)) {
            Err(Error::Consistency { max_violation, .. }) => assert!(max_violation > 1.0),
            other => panic!("{other:?}"),
        }
    }

    fn exhaustive_soft(reward: &RewardTable) -> PreferenceDataset {
        let space = reward.space().clone();
        let mut records = Vec::new();
        for x in 0..space.n_prompts() {
            let n = space.n_responses(x);
            for a in 0..n {
                for b in (a + 1)..n {
                    records.push(PreferenceRecord {
                        prompt: space.prompt_id(x).into(),
                        chosen: space.response_id(x, a).into(),
                        rejected: space.response_id(x, b).into(),
                        p_chosen: Some(sigmoid(reward.at(x, a) - reward.at(x, b))),
                        source: Source::External,
                        annotator: "truth".into(),
                    });
                }
            }
        }
        PreferenceDataset::new(space, records).unwrap()
    }

    #[test]
    fn fit_recovers_reward_differences() {
        let s = space(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = RewardTable::random(s, 1.0, &mut rng).unwrap();
        let ds = exhaustive_soft(&truth);
        let cfg = FitConfig {
            link: Link::Logistic,
            steps: 20_000,
            learning_rate: 20.0,
            l2: 0.0,
            tolerance: 1e-10,
        };
        let fit = fit_reward(&ds, &cfg).unwrap();
        let expected = truth.gauge_fixed();
        for x in 0..2 {
            for a in 0..4 {
                for b in 0..4 {
                    let got = fit.reward.at(x, a) - fit.reward.at(x, b);
                    let want = truth.at(x, a) - truth.at(x, b);
                    assert!((got - want).abs() < 1e-3, "{got} vs {want}");
                }
                assert!((fit.reward.at(x, a) - expected.at(x, a)).abs() < 1e-3);
            }
        }
        // Preference matching at every training pair.
        let fitted = BTPreference::FromReward(fit.reward.clone());
        for (rec, pair) in ds.records().iter().zip(ds.pairs()) {
            let got = fitted.prefer_at(pair.prompt, pair.chosen, pair.rejected);
            assert!((got - rec.p_chosen.unwrap()).abs() < 1e-3);
        }
    }

    fn single_hard() -> PreferenceDataset {
        let s = space(1, 2);
        PreferenceDataset::new(
            s,
            vec![PreferenceRecord {
                prompt: "x0".into(),
                chosen: "y0".into(),
                rejected: "y1".into(),
                p_chosen: None,
                source: Source::External,
                annotator: "truth".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn hard_label_gap_grows_without_bound() {
        let ds = single_hard();
        let mut last_gap = 0.0;
        for steps in [10, 100, 1000, 10_000] {
            let cfg = FitConfig {
                link: Link::Logistic,
                steps,
                learning_rate: 1.0,
                l2: 0.0,
                tolerance: 0.0,
            };
            let fit = fit_reward(&ds, &cfg).unwrap();
            assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
            let gap = fit.reward.at(0, 0) - fit.reward.at(0, 1);
            assert!(gap > last_gap);
            last_gap = gap;
        }
        assert!(last_gap > 8.0);
    }

    #[test]
    fn regularized_single_pair_converges() {
        let ds = single_hard();
        let cfg = FitConfig {
            link: Link::Logistic,
            steps: 100_000,
            learning_rate: 1.0,
            l2: 0.1,
            tolerance: 1e-7,
        };
        let fit = fit_reward(&ds, &cfg).unwrap();
        assert!(fit.grad_norm <= 1e-6);
        // Stationarity: sigmoid(-d) = 0.1 * d / 2 with r = (d/2, -d/2).
        let d = fit.reward.at(0, 0) - fit.reward.at(0, 1);
        assert!((sigmoid(-d) - 0.05 * d).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_bad_learning_rate() {
        let cfg = FitConfig {
            link: Link::Logistic,
            steps: 1,
            learning_rate: 0.0,
            l2: 0.0,
            tolerance: 0.0,
        };
        assert!(matches!(fit_reward(&single_hard(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn exact_annotator_contract() {
        let s = space(1, 3);
        let r = RewardTable::new(s, vec![vec![1.0, 1.0, -0.3]]).unwrap();
        let ann = ExactBTAnnotator::new(BTPreference::FromReward(r));
        assert_eq!(annotate(&ann, "x0", "y0", "y1").unwrap(), 0.5);
        let ab = annotate(&ann, "x0", "y0", "y2").unwrap();
        let ba = annotate(&ann, "x0", "y2", "y0").unwrap();
        assert_eq!(ab + ba, 1.0);
        let batch = ann.annotate_batch(&[(0, 0, 2), (0, 2, 0)]).unwrap();
        assert_eq!(batch, vec![ab, ba]);
    }

    #[test]
    fn reward_snapshot_round_trip() {
        let s = space(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = RewardTable::random(s.clone(), 2.0, &mut rng).unwrap();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"reward\":{\"x0\":{\"y0\":"));
        assert_eq!(RewardTable::from_json(&json, s).unwrap(), r);
    }
}
