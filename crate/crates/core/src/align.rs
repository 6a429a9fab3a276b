//! Alignment losses, their analytic gradients, the KL-regularized optimum and
//! a deterministic full-batch trainer.
//!
//! DPO scores a record through the margin
//!
//! ```text
//! m = beta * ((log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l)))
//! ```
//!
//! Because the softmax normalizer cancels inside `log pi(y_w) - log pi(y_l)`,
//! `dm/dlogit` is `+beta` at `y_w`, `-beta` at `y_l` and zero elsewhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{bce_with_logit, log_sigmoid, logsumexp, sigmoid};
use crate::par;
use crate::policy::{kl_row, same_space, PolicySnapshot, TabularPolicy};
use crate::preference::RewardTable;
use crate::space::{Pair, PreferenceDataset, PreferenceRecord};

/// Gradient with the same shape as the policy logits.
pub type Gradient = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// `-log sigmoid(m)`; the chosen response always wins.
    #[default]
    Hard,
    /// Cross-entropy of `sigmoid(m)` against `p_chosen`.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub label_mode: LabelMode,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            steps: 200,
            learning_rate: 10.0,
            label_mode: LabelMode::Hard,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        positive("beta", self.beta)?;
        positive("learning_rate", self.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicConfig {
    /// Hinge margin.
    pub delta: f64,
    /// Weight of the cross-entropy term on the reference target.
    pub lambda: f64,
    /// Target response per prompt id for the cross-entropy term.
    #[serde(default)]
    pub reference_targets: BTreeMap<String, String>,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for SlicConfig {
    fn default() -> Self {
        SlicConfig {
            delta: 1.0,
            lambda: 0.0,
            reference_targets: BTreeMap::new(),
            steps: 200,
            learning_rate: 1.0,
        }
    }
}

impl SlicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be non-negative, got {}", self.delta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        positive("learning_rate", self.learning_rate)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Per-record loss and its derivative with respect to the DPO margin.
fn dpo_terms(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &Pair,
    beta: f64,
    mode: LabelMode,
) -> Result<(f64, f64)> {
    let theta = policy.logit_row(pair.prompt);
    let refr = reference.logit_row(pair.prompt);
    let m = beta * ((theta[pair.chosen] - theta[pair.rejected]) - (refr[pair.chosen] - refr[pair.rejected]));
    match mode {
        LabelMode::Hard => Ok((-log_sigmoid(m), sigmoid(m) - 1.0)),
        LabelMode::Soft => {
            let p = pair
                .p_chosen
                .ok_or_else(|| Error::Label("soft-label DPO needs p_chosen on every record".into()))?;
            Ok((bce_with_logit(m, p), sigmoid(m) - p))
        }
    }
}

/// Records that take part in training: hard mode skips degenerate
/// identical-pair records, soft mode keeps them (their gradient is zero).
fn active(pair: &Pair, mode: LabelMode) -> bool {
    mode == LabelMode::Soft || !pair.is_degenerate()
}

fn check_pair_spaces(policy: &TabularPolicy, reference: &TabularPolicy, dataset: &PreferenceDataset) -> Result<()> {
    same_space(policy.space(), reference.space())?;
    same_space(policy.space(), dataset.space())
}

/// DPO loss of one record.
pub fn dpo_loss(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    record: &PreferenceRecord,
    beta: f64,
    mode: LabelMode,
) -> Result<f64> {
    same_space(policy.space(), reference.space())?;
    positive("beta", beta)?;
    let space = policy.space();
    let (x, w) = space.cell(&record.prompt, &record.chosen)?;
    let l = space.response_index(x, &record.rejected)?;
    let pair = Pair {
        prompt: x,
        chosen: w,
        rejected: l,
        p_chosen: record.p_chosen,
    };
    Ok(dpo_terms(policy, reference, &pair, beta, mode)?.0)
}

/// Mean DPO loss over the active records of a dataset.
pub fn dpo_loss_mean(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    dataset: &PreferenceDataset,
    beta: f64,
    mode: LabelMode,
) -> Result<f64> {
    Ok(dpo_loss_and_grad(policy, reference, dataset, beta, mode)?.0)
}

/// Exact gradient of the mean DPO loss with respect to the policy logits.
pub fn dpo_grad(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    dataset: &PreferenceDataset,
    beta: f64,
    mode: LabelMode,
) -> Result<Gradient> {
    Ok(dpo_loss_and_grad(policy, reference, dataset, beta, mode)?.1)
}

pub fn dpo_loss_and_grad(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    dataset: &PreferenceDataset,
    beta: f64,
    mode: LabelMode,
) -> Result<(f64, Gradient)> {
    check_pair_spaces(policy, reference, dataset)?;
    positive("beta", beta)?;
    let terms = par::map_slice(dataset.pairs(), |pair| {
        if active(pair, mode) {
            dpo_terms(policy, reference, pair, beta, mode).map(Some)
        } else {
            Ok(None)
        }
    });
    let mut grad = policy.space().zeros();
    let mut loss = 0.0;
    let mut n = 0usize;
    let mut contributions = Vec::with_capacity(terms.len());
    for (pair, t) in dataset.pairs().iter().zip(terms) {
        if let Some((l, dm)) = t? {
            loss += l;
            n += 1;
            contributions.push((pair, dm));
        }
    }
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = beta / n as f64;
    for (pair, dm) in contributions {
        grad[pair.prompt][pair.chosen] += scale * dm;
        grad[pair.prompt][pair.rejected] -= scale * dm;
    }
    Ok((loss / n as f64, grad))
}

fn slic_target(policy: &TabularPolicy, config: &SlicConfig, prompt: usize) -> Result<Option<usize>> {
    if config.lambda == 0.0 {
        return Ok(None);
    }
    let pid = policy.space().prompt_id(prompt);
    let target = config.reference_targets.get(pid).ok_or_else(|| {
        Error::Config(format!("no SLiC reference target for prompt `{pid}` while lambda > 0"))
    })?;
    Ok(Some(policy.space().response_index(prompt, target)?))
}

/// SLiC-HF loss of one record:
/// `max(0, delta - (log pi(y+) - log pi(y-))) - lambda * log pi(y_ref)`.
pub fn slic_loss(policy: &TabularPolicy, record: &PreferenceRecord, config: &SlicConfig) -> Result<f64> {
    config.validate()?;
    let space = policy.space();
    let (x, pos) = space.cell(&record.prompt, &record.chosen)?;
    let neg = space.response_index(x, &record.rejected)?;
    let pair = Pair {
        prompt: x,
        chosen: pos,
        rejected: neg,
        p_chosen: record.p_chosen,
    };
    Ok(slic_terms(policy, &pair, config)?.0)
}

/// Loss and logit gradient of one SLiC record. At the hinge kink the hinge
/// subgradient is taken as zero.
fn slic_terms(policy: &TabularPolicy, pair: &Pair, config: &SlicConfig) -> Result<(f64, Vec<(usize, f64)>, Option<(usize, f64)>)> {
    let row = policy.logit_row(pair.prompt);
    let ratio = row[pair.chosen] - row[pair.rejected];
    let slack = config.delta - ratio;
    let mut loss = slack.max(0.0);
    let mut sparse = Vec::new();
    if slack > 0.0 {
        sparse.push((pair.chosen, -1.0));
        sparse.push((pair.rejected, 1.0));
    }
    let ce = match slic_target(policy, config, pair.prompt)? {
        Some(t) => {
            loss -= config.lambda * policy.log_prob_at(pair.prompt, t);
            Some((t, config.lambda))
        }
        None => None,
    };
    Ok((loss, sparse, ce))
}

pub fn slic_loss_and_grad(policy: &TabularPolicy, dataset: &PreferenceDataset, config: &SlicConfig) -> Result<(f64, Gradient)> {
    config.validate()?;
    same_space(policy.space(), dataset.space())?;
    let terms = par::map_slice(dataset.pairs(), |pair| {
        if pair.is_degenerate() {
            Ok(None)
        } else {
            slic_terms(policy, pair, config).map(Some)
        }
    });
    let mut grad = policy.space().zeros();
    let mut loss = 0.0;
    let mut n = 0usize;
    let mut parts = Vec::new();
    for (pair, t) in dataset.pairs().iter().zip(terms) {
        if let Some(t) = t? {
            loss += t.0;
            n += 1;
            parts.push((pair.prompt, t));
        }
    }
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut probs_cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (x, (_, sparse, ce)) in parts {
        for (r, g) in sparse {
            grad[x][r] += inv * g;
        }
        if let Some((t, lambda)) = ce {
            // d(-log pi(t)) / dlogits = pi - e_t
            let probs = probs_cache.entry(x).or_insert_with(|| policy.probs(x));
            for (r, p) in probs.iter().enumerate() {
                grad[x][r] += inv * lambda * p;
            }
            grad[x][t] -= inv * lambda;
        }
    }
    Ok((loss * inv, grad))
}

/// Mean SLiC-HF loss over non-degenerate records.
pub fn slic_loss_mean(policy: &TabularPolicy, dataset: &PreferenceDataset, config: &SlicConfig) -> Result<f64> {
    Ok(slic_loss_and_grad(policy, dataset, config)?.0)
}

/// Gradient (subgradient at the kink) of the mean SLiC-HF loss.
pub fn slic_grad(policy: &TabularPolicy, dataset: &PreferenceDataset, config: &SlicConfig) -> Result<Gradient> {
    Ok(slic_loss_and_grad(policy, dataset, config)?.1)
}

/// `beta * (log pi(y1)/ref(y1) - log pi(y2)/ref(y2))`; the partition term
/// cancels and is never formed.
pub fn implicit_reward_margin(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompt: &str,
    y1: &str,
    y2: &str,
    beta: f64,
) -> Result<f64> {
    same_space(policy.space(), reference.space())?;
    let (x, a) = policy.space().cell(prompt, y1)?;
    let b = policy.space().response_index(x, y2)?;
    Ok(implicit_margin_at(policy, reference, x, a, b, beta))
}

pub fn implicit_margin_at(policy: &TabularPolicy, reference: &TabularPolicy, x: usize, a: usize, b: usize, beta: f64) -> f64 {
    let theta = policy.logit_row(x);
    let refr = reference.logit_row(x);
    beta * ((theta[a] - theta[b]) - (refr[a] - refr[b]))
}

/// `beta * log(pi / ref)` at every cell.
pub fn implicit_reward(policy: &TabularPolicy, reference: &TabularPolicy, beta: f64) -> Result<RewardTable> {
    same_space(policy.space(), reference.space())?;
    positive("beta", beta)?;
    let space = policy.space().clone();
    let values = (0..space.n_prompts())
        .map(|x| {
            let lp = policy.log_probs(x);
            let lr = reference.log_probs(x);
            lp.iter().zip(&lr).map(|(a, b)| beta * (a - b)).collect()
        })
        .collect();
    RewardTable::new(space, values)
}

/// Mean over prompts of `E_pi[r] - beta * KL(pi || ref)`.
pub fn alignment_objective(policy: &TabularPolicy, reference: &TabularPolicy, reward: &RewardTable, beta: f64) -> Result<f64> {
    same_space(policy.space(), reference.space())?;
    same_space(policy.space(), reward.space())?;
    let n = policy.space().n_prompts();
    let total = par::sum_range(n, |x| {
        let expected: f64 = policy.probs(x).iter().zip(reward.row(x)).map(|(p, r)| p * r).sum();
        expected - beta * kl_row(policy, reference, x)
    });
    Ok(total / n as f64)
}

/// The maximizer of the alignment objective and its log-partition.
#[derive(Debug, Clone)]
pub struct ClosedFormSolution {
    pub policy: TabularPolicy,
    log_partition: Vec<f64>,
}

impl ClosedFormSolution {
    /// `log Z(x)` by prompt id.
    pub fn log_partition(&self, prompt: &str) -> Result<f64> {
        Ok(self.log_partition[self.policy.space().prompt_index(prompt)?])
    }

    pub fn log_partitions(&self) -> &[f64] {
        &self.log_partition
    }
}

/// `pi*(y|x) = ref(y|x) exp(r(x,y)/beta) / Z(x)`, computed in log space with
/// a max shift so large `r/beta` does not overflow.
pub fn closed_form_optimum(reference: &TabularPolicy, reward: &RewardTable, beta: f64) -> Result<ClosedFormSolution> {
    positive("beta", beta)?;
    same_space(reference.space(), reward.space())?;
    let space = reference.space().clone();
    let mut log_partition = Vec::with_capacity(space.n_prompts());
    let mut logits = Vec::with_capacity(space.n_prompts());
    for x in 0..space.n_prompts() {
        let tilted: Vec<f64> = reference
            .log_probs(x)
            .iter()
            .zip(reward.row(x))
            .map(|(lr, r)| lr + r / beta)
            .collect();
        let log_z = logsumexp(&tilted);
        logits.push(tilted.iter().map(|t| t - log_z).collect());
        log_partition.push(log_z);
    }
    Ok(ClosedFormSolution {
        policy: TabularPolicy::new(space, logits)?,
        log_partition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "config", rename_all = "snake_case")]
pub enum Method {
    Dpo(DpoConfig),
    Slic(SlicConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dpo(_) => "dpo",
            Method::Slic(_) => "slic",
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Method::Dpo(c) => c.steps,
            Method::Slic(c) => c.steps,
        }
    }

    fn learning_rate(&self) -> f64 {
        match self {
            Method::Dpo(c) => c.learning_rate,
            Method::Slic(c) => c.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Dpo(c) => c.validate(),
            Method::Slic(c) => c.validate(),
        }
    }

    fn loss_and_grad(&self, policy: &TabularPolicy, reference: &TabularPolicy, dataset: &PreferenceDataset) -> Result<(f64, Gradient)> {
        match self {
            Method::Dpo(c) => dpo_loss_and_grad(policy, reference, dataset, c.beta, c.label_mode),
            Method::Slic(c) => slic_loss_and_grad(policy, dataset, c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub final_policy: TabularPolicy,
    /// Loss before each update, plus the loss at the final policy.
    pub loss_trace: Vec<f64>,
    /// `(log pi(chosen), log pi(rejected))` per record, at the same points
    /// as `loss_trace`.
    pub pair_trace: Vec<Vec<(f64, f64)>>,
}

fn pair_logprobs(policy: &TabularPolicy, dataset: &PreferenceDataset) -> Vec<(f64, f64)> {
    let norms: Vec<f64> = (0..policy.space().n_prompts()).map(|x| policy.log_norm(x)).collect();
    dataset
        .pairs()
        .iter()
        .map(|p| {
            let row = policy.logit_row(p.prompt);
            (row[p.chosen] - norms[p.prompt], row[p.rejected] - norms[p.prompt])
        })
        .collect()
}

/// Full-batch gradient descent with a fixed step size.
///
/// Aborts with [`Error::Divergence`] when the loss becomes non-finite or
/// exceeds ten times its initial value.
pub fn train(initial: &TabularPolicy, reference: &TabularPolicy, dataset: &PreferenceDataset, method: &Method) -> Result<TrainOutput> {
    method.validate()?;
    check_pair_spaces(initial, reference, dataset)?;
    let space = initial.space().clone();
    let lr = method.learning_rate();
    let mut logits = initial.logits().to_vec();
    let mut policy = initial.clone();
    let mut loss_trace = Vec::with_capacity(method.steps() + 1);
    let mut pair_trace = Vec::with_capacity(method.steps() + 1);
    let (initial_loss, mut grad) = method.loss_and_grad(&policy, reference, dataset)?;
    loss_trace.push(initial_loss);
    pair_trace.push(pair_logprobs(&policy, dataset));
    for step in 1..=method.steps() {
        for (row, grow) in logits.iter_mut().zip(&grad) {
            for (l, g) in row.iter_mut().zip(grow) {
                *l -= lr * g;
            }
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
                initial: initial_loss,
            });
        }
        policy = TabularPolicy::new(space.clone(), logits.clone())?;
        let (loss, g) = method.loss_and_grad(&policy, reference, dataset)?;
        if !loss.is_finite() || (initial_loss > 0.0 && loss > 10.0 * initial_loss) {
            return Err(Error::Divergence {
                step,
                loss,
                initial: initial_loss,
            });
        }
        grad = g;
        loss_trace.push(loss);
        pair_trace.push(pair_logprobs(&policy, dataset));
    }
    Ok(TrainOutput {
        final_policy: policy,
        loss_trace,
        pair_trace,
    })
}

/// Training run record written alongside protocol outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    #[serde(flatten)]
    pub method: Method,
    pub dataset_hash: String,
    pub initial_policy_hash: String,
    pub final_policy: PolicySnapshot,
    pub loss_trace: Vec<f64>,
}

impl TrainManifest {
    pub fn new(method: &Method, dataset: &PreferenceDataset, initial: &TabularPolicy, out: &TrainOutput) -> Result<Self> {
        Ok(TrainManifest {
            method: method.clone(),
            dataset_hash: dataset.content_hash()?,
            initial_policy_hash: initial.content_hash()?,
            final_policy: out.final_policy.to_snapshot(),
            loss_trace: out.loss_trace.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Source, Space};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;
    use std::sync::Arc;

    fn rec(x: &str, w: &str, l: &str, p: Option<f64>) -> PreferenceRecord {
        PreferenceRecord {
            prompt: x.into(),
            chosen: w.into(),
            rejected: l.into(),
            p_chosen: p,
            source: Source::OffPolicy,
            annotator: "t".into(),
        }
    }

    fn space(n_prompts: usize, n_responses: usize) -> Arc<Space> {
        Arc::new(Space::build(n_prompts, n_responses, 0).unwrap())
    }

    #[test]
    fn dpo_loss_at_reference() {
        let s = space(1, 3);
        let pi = TabularPolicy::new(s.clone(), vec![vec![0.2, -0.4, 1.0]]).unwrap();
        let r = rec("x0", "y0", "y1", Some(0.5));
        assert!((dpo_loss(&pi, &pi, &r, 0.1, LabelMode::Hard).unwrap() - LN_2).abs() < 1e-15);
        assert!((dpo_loss(&pi, &pi, &r, 0.1, LabelMode::Soft).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn dpo_loss_hand_value() {
        // ratio(y_w) = 2, ratio(y_l) = 0.5 with a uniform reference.
        let s = space(1, 3);
        let reference = TabularPolicy::uniform(s.clone());
        let pi = TabularPolicy::new(s, vec![vec![2f64.ln(), 0.5f64.ln(), 0.0]]).unwrap();
        let lp = pi.log_probs(0);
        let lr = reference.log_probs(0);
        let ratio_w = (lp[0] - lr[0]).exp();
        let ratio_l = (lp[1] - lr[1]).exp();
        assert!((ratio_w / ratio_l - 4.0).abs() < 1e-12);
        let loss = dpo_loss(&pi, &reference, &rec("x0", "y0", "y1", None), 0.1, LabelMode::Hard).unwrap();
        // -ln sigmoid(0.2 ln 2) evaluated in 50-digit arithmetic.
        assert!((loss - 0.626_232_806_408_696_1).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn soft_mode_requires_labels() {
        let s = space(1, 2);
        let pi = TabularPolicy::uniform(s);
        let r = rec("x0", "y0", "y1", None);
        assert!(matches!(dpo_loss(&pi, &pi, &r, 0.1, LabelMode::Soft), Err(Error::Label(_))));
    }

    #[test]
    fn dpo_grad_sign_at_reference() {
        let s = space(1, 3);
        let pi = TabularPolicy::uniform(s.clone());
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y2", "y0", None)]).unwrap();
        let g = dpo_grad(&pi, &pi, &ds, 0.5, LabelMode::Hard).unwrap();
        assert!(g[0][2] < 0.0, "descent raises the chosen logit");
        assert!(g[0][0] > 0.0, "descent lowers the rejected logit");
        assert_eq!(g[0][1], 0.0);
    }

    #[test]
    fn soft_record_at_model_preference_has_zero_gradient() {
        let s = space(1, 3);
        let reference = TabularPolicy::uniform(s.clone());
        let pi = TabularPolicy::new(s.clone(), vec![vec![0.7, -0.1, 0.3]]).unwrap();
        let beta = 0.8;
        let m = implicit_margin_at(&pi, &reference, 0, 0, 1, beta);
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y0", "y1", Some(sigmoid(m)))]).unwrap();
        let g = dpo_grad(&pi, &reference, &ds, beta, LabelMode::Soft).unwrap();
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-16));
    }

    #[test]
    fn slic_cases() {
        let s = space(1, 4);
        let cfg = SlicConfig {
            delta: 1.0,
            lambda: 0.0,
            ..Default::default()
        };
        // log-ratio 1.5 >= delta: hinge inactive.
        let pi = TabularPolicy::new(s.clone(), vec![vec![1.5, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(slic_loss(&pi, &rec("x0", "y0", "y1", None), &cfg).unwrap(), 0.0);
        let flat = TabularPolicy::uniform(s.clone());
        assert_eq!(slic_loss(&flat, &rec("x0", "y0", "y1", None), &cfg).unwrap(), 1.0);

        let mut targets = BTreeMap::new();
        targets.insert("x0".to_string(), "y3".to_string());
        let cfg = SlicConfig {
            delta: 0.0,
            lambda: 0.5,
            reference_targets: targets,
            ..Default::default()
        };
        let got = slic_loss(&flat, &rec("x0", "y0", "y1", None), &cfg).unwrap();
        assert!((got - 0.5 * 4f64.ln()).abs() < 1e-15);
        assert!((got - 0.693147).abs() < 1e-6);

        let missing = SlicConfig {
            lambda: 0.5,
            ..Default::default()
        };
        assert!(matches!(slic_loss(&flat, &rec("x0", "y0", "y1", None), &missing), Err(Error::Config(_))));
    }

    #[test]
    fn slic_inactive_hinge_zero_gradient() {
        let s = space(1, 3);
        let pi = TabularPolicy::new(s.clone(), vec![vec![3.0, 0.0, 0.0]]).unwrap();
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y0", "y1", None)]).unwrap();
        let cfg = SlicConfig {
            delta: 1.0,
            ..Default::default()
        };
        assert!(slic_grad(&pi, &ds, &cfg).unwrap().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn slic_kink_subgradient_is_lambda_term() {
        let s = space(1, 3);
        // log-ratio exactly delta = 1.
        let pi = TabularPolicy::new(s.clone(), vec![vec![1.0, 0.0, 0.25]]).unwrap();
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y0", "y1", None)]).unwrap();
        let mut targets = BTreeMap::new();
        targets.insert("x0".to_string(), "y2".to_string());
        let cfg = SlicConfig {
            delta: 1.0,
            lambda: 0.3,
            reference_targets: targets,
            ..Default::default()
        };
        let g = slic_grad(&pi, &ds, &cfg).unwrap();
        let probs = pi.probs(0);
        let want = [0.3 * probs[0], 0.3 * probs[1], 0.3 * (probs[2] - 1.0)];
        for (a, b) in g[0].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_margin_properties() {
        let s = space(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = TabularPolicy::uniform(s.clone()).perturb(1.0, &mut rng).unwrap();
        let pi = reference.perturb(1.0, &mut rng).unwrap();
        assert_eq!(implicit_reward_margin(&reference, &reference, "x0", "y0", "y2", 0.3).unwrap(), 0.0);
        let m = implicit_reward_margin(&pi, &reference, "x0", "y0", "y2", 0.3).unwrap();
        let rev = implicit_reward_margin(&pi, &reference, "x0", "y2", "y0", 0.3).unwrap();
        assert_eq!(m, -rev);
        let m2 = implicit_reward_margin(&pi, &reference, "x0", "y0", "y2", 0.6).unwrap();
        assert!((m2 - 2.0 * m).abs() < 1e-15);
    }

    #[test]
    fn closed_form_cases() {
        let s = space(1, 2);
        let reference = TabularPolicy::uniform(s.clone());
        let beta = 0.7;
        let r = RewardTable::new(s.clone(), vec![vec![beta * 3f64.ln(), 0.0]]).unwrap();
        let sol = closed_form_optimum(&reference, &r, beta).unwrap();
        let p = sol.policy.probs(0);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        // Z = 0.5 * 3 + 0.5 * 1 = 2.
        assert!((sol.log_partition("x0").unwrap() - 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s3 = space(2, 5);
        let refp = TabularPolicy::uniform(s3.clone()).perturb(1.0, &mut rng).unwrap();
        let constant = RewardTable::constant(s3.clone(), 4.2);
        let sol = closed_form_optimum(&refp, &constant, 0.3).unwrap();
        for x in 0..2 {
            for (a, b) in sol.policy.log_probs(x).iter().zip(refp.log_probs(x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let any = RewardTable::random(s3, 2.0, &mut rng).unwrap();
        let sol = closed_form_optimum(&refp, &any, 1e9).unwrap();
        for x in 0..2 {
            for (a, b) in sol.policy.probs(x).iter().zip(refp.probs(x)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(matches!(closed_form_optimum(&refp, &constant, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn objective_cases() {
        let s = space(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reference = TabularPolicy::uniform(s.clone()).perturb(1.0, &mut rng).unwrap();
        let c = RewardTable::constant(s.clone(), -1.25);
        assert!((alignment_objective(&reference, &reference, &c, 0.5).unwrap() + 1.25).abs() < 1e-12);
        let r = RewardTable::random(s, 1.0, &mut rng).unwrap();
        let expected = reference.expected(r.values());
        assert!((alignment_objective(&reference, &reference, &r, 0.5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initial() {
        let s = space(2, 3);
        let pi = TabularPolicy::uniform(s.clone());
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y0", "y1", None)]).unwrap();
        let method = Method::Dpo(DpoConfig {
            steps: 0,
            ..Default::default()
        });
        let out = train(&pi, &pi, &ds, &method).unwrap();
        assert_eq!(out.final_policy, pi);
        assert_eq!(out.loss_trace.len(), 1);
        assert_eq!(out.pair_trace.len(), 1);
    }

    #[test]
    fn divergence_guard_names_step() {
        let s = space(1, 3);
        let pi = TabularPolicy::uniform(s.clone());
        let mut targets = BTreeMap::new();
        targets.insert("x0".to_string(), "y2".to_string());
        // The hinge pushes y2's mass away while a huge step overshoots.
        let ds = PreferenceDataset::new(s, vec![rec("x0", "y0", "y2", None)]).unwrap();
        let method = Method::Slic(SlicConfig {
            delta: 1.0,
            lambda: 0.01,
            reference_targets: targets,
            steps: 50,
            learning_rate: 1e4,
        });
        match train(&pi, &pi, &ds, &method) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn method_serde_shape() {
        let m = Method::Dpo(DpoConfig::default());
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["method"], "dpo");
        assert_eq!(v["config"]["label_mode"], "hard");
        let back: Method = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
