//! Tabular softmax policies.
//!
//! A [`TabularPolicy`] stores one logit per (prompt, response) cell; the
//! per-prompt distribution is the softmax of its row. Logits are kept
//! unconstrained so training never needs a projection step.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;
use crate::math::{log_softmax, logsumexp, softmax};
use crate::space::Space;

#[derive(Debug, Clone)]
pub struct TabularPolicy {
    space: Arc<Space>,
    logits: Vec<Vec<f64>>,
}

impl PartialEq for TabularPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.space.id() == other.space.id() && self.logits == other.logits
    }
}

impl TabularPolicy {
    pub fn new(space: Arc<Space>, logits: Vec<Vec<f64>>) -> Result<Self> {
        check_matrix(&space, &logits, "logits")?;
        Ok(TabularPolicy { space, logits })
    }

    pub fn uniform(space: Arc<Space>) -> Self {
        let logits = space.zeros();
        TabularPolicy { space, logits }
    }

    /// Policy with the given probabilities; every entry must be positive.
    pub fn from_probs(space: Arc<Space>, probs: &[Vec<f64>]) -> Result<Self> {
        check_matrix(&space, probs, "probabilities")?;
        let mut logits = Vec::with_capacity(probs.len());
        for (p, row) in probs.iter().enumerate() {
            if row.iter().any(|&v| v <= 0.0) {
                return Err(Error::Range(format!(
                    "prompt `{}` has a non-positive probability",
                    space.prompt_id(p)
                )));
            }
            logits.push(row.iter().map(|v| v.ln()).collect());
        }
        Ok(TabularPolicy { space, logits })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn space_ref(&self) -> &str {
        self.space.id()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<Vec<f64>> {
        self.logits
    }

    pub fn logit_row(&self, prompt: usize) -> &[f64] {
        &self.logits[prompt]
    }

    pub fn log_probs(&self, prompt: usize) -> Vec<f64> {
        log_softmax(&self.logits[prompt])
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.logits[prompt])
    }

    /// Log-normalizer of a prompt's row.
    pub fn log_norm(&self, prompt: usize) -> f64 {
        logsumexp(&self.logits[prompt])
    }

    pub fn log_prob_at(&self, prompt: usize, response: usize) -> f64 {
        self.logits[prompt][response] - self.log_norm(prompt)
    }

    /// `log pi(response | prompt)` in nats.
    pub fn log_prob(&self, prompt: &str, response: &str) -> Result<f64> {
        let (p, r) = self.space.cell(prompt, response)?;
        Ok(self.log_prob_at(p, r))
    }

    /// Draws `k` i.i.d. response indices for a prompt.
    pub fn sample_indices<R: Rng + ?Sized>(&self, prompt: usize, k: usize, rng: &mut R) -> Vec<usize> {
        let probs = self.probs(prompt);
        let dist = WeightedIndex::new(&probs).expect("softmax rows are positive and finite");
        (0..k).map(|_| dist.sample(rng)).collect()
    }

    /// Draws `k` i.i.d. response ids for a prompt.
    pub fn sample<R: Rng + ?Sized>(&self, prompt: &str, k: usize, rng: &mut R) -> Result<Vec<String>> {
        if k == 0 {
            return Err(Error::Input("sample count must be at least 1".into()));
        }
        let p = self.space.prompt_index(prompt)?;
        Ok(self
            .sample_indices(p, k, rng)
            .into_iter()
            .map(|r| self.space.response_id(p, r).to_owned())
            .collect())
    }

    /// Adds i.i.d. `N(0, magnitude^2)` noise to every logit.
    pub fn perturb<R: Rng + ?Sized>(&self, magnitude: f64, rng: &mut R) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::Config(format!(
                "perturbation magnitude must be finite and non-negative, got {magnitude}"
            )));
        }
        if magnitude == 0.0 {
            return Ok(self.clone());
        }
        let noise = Normal::new(0.0, magnitude).expect("validated scale");
        let logits = self
            .logits
            .iter()
            .map(|row| row.iter().map(|l| l + noise.sample(rng)).collect())
            .collect();
        Ok(TabularPolicy {
            space: self.space.clone(),
            logits,
        })
    }

    /// Expected value of a per-cell table under this policy, averaged over prompts.
    pub fn expected(&self, table: &[Vec<f64>]) -> f64 {
        let n = self.space.n_prompts();
        (0..n)
            .map(|p| {
                self.probs(p)
                    .iter()
                    .zip(&table[p])
                    .map(|(q, v)| q * v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn to_snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            space_ref: self.space.id().to_owned(),
            logits: matrix_to_map(&self.space, &self.logits),
        }
    }

    pub fn from_snapshot(snapshot: &PolicySnapshot, space: Arc<Space>) -> Result<Self> {
        space.check_id("policy", &snapshot.space_ref)?;
        let logits = map_to_matrix(&space, &snapshot.logits, "logits")?;
        TabularPolicy::new(space, logits)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_snapshot())?)
    }

    pub fn from_json(text: &str, space: Arc<Space>) -> Result<Self> {
        let snapshot: PolicySnapshot = serde_json::from_str(text)?;
        Self::from_snapshot(&snapshot, space)
    }

    /// Hash of the snapshot encoding.
    pub fn content_hash(&self) -> Result<String> {
        hash::json_hash(&self.to_snapshot())
    }
}

/// `KL(p || q)` at one prompt index, by exact enumeration.
pub fn kl_row(p: &TabularPolicy, q: &TabularPolicy, prompt: usize) -> f64 {
    let lp = p.log_probs(prompt);
    let lq = q.log_probs(prompt);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum();
    kl.max(0.0)
}

/// `KL(p(.|x) || q(.|x))` in nats.
pub fn kl_divergence(p: &TabularPolicy, q: &TabularPolicy, prompt: &str) -> Result<f64> {
    same_space(p.space(), q.space())?;
    let x = p.space.prompt_index(prompt)?;
    Ok(kl_row(p, q, x))
}

/// Mean over prompts of `KL(p || q)`.
pub fn mean_kl(p: &TabularPolicy, q: &TabularPolicy) -> Result<f64> {
    same_space(p.space(), q.space())?;
    let n = p.space.n_prompts();
    Ok((0..n).map(|x| kl_row(p, q, x)).sum::<f64>() / n as f64)
}

pub(crate) fn same_space(a: &Space, b: &Space) -> Result<()> {
    if a.id() != b.id() {
        return Err(Error::Shape(format!(
            "operands live in different spaces ({} vs {})",
            a.id(),
            b.id()
        )));
    }
    Ok(())
}

/// JSON form: `{"space_ref": ..., "logits": {prompt: {response: number}}}`.
///
/// Maps keep the space's ordering; floats use the shortest representation
/// that parses back to the identical `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub space_ref: String,
    pub logits: CellMap,
}

/// Ordered `{prompt: {response: value}}` map.
pub type CellMap = IndexMap<String, IndexMap<String, f64>>;

pub(crate) fn matrix_to_map(space: &Space, m: &[Vec<f64>]) -> CellMap {
    space
        .prompts()
        .iter()
        .enumerate()
        .map(|(p, pid)| {
            let row = space
                .responses(p)
                .iter()
                .zip(&m[p])
                .map(|(r, v)| (r.clone(), *v))
                .collect();
            (pid.clone(), row)
        })
        .collect()
}

pub(crate) fn map_to_matrix(space: &Space, map: &CellMap, what: &str) -> Result<Vec<Vec<f64>>> {
    if map.len() != space.n_prompts() {
        return Err(Error::Shape(format!(
            "{what} has {} prompts, space has {}",
            map.len(),
            space.n_prompts()
        )));
    }
    let mut out = Vec::with_capacity(space.n_prompts());
    for (p, pid) in space.prompts().iter().enumerate() {
        let row = map
            .get(pid.as_str())
            .ok_or_else(|| Error::lookup("prompt", pid.clone()))?;
        if row.len() != space.n_responses(p) {
            return Err(Error::Shape(format!(
                "{what} row for prompt `{pid}` has {} entries, expected {}",
                row.len(),
                space.n_responses(p)
            )));
        }
        let values = space
            .responses(p)
            .iter()
            .map(|r| {
                row.get(r.as_str())
                    .copied()
                    .ok_or_else(|| Error::lookup("response", format!("{pid}/{r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(values);
    }
    Ok(out)
}

pub(crate) fn check_matrix(space: &Space, m: &[Vec<f64>], what: &str) -> Result<()> {
    if m.len() != space.n_prompts() {
        return Err(Error::Shape(format!(
            "{what} has {} rows, space has {} prompts",
            m.len(),
            space.n_prompts()
        )));
    }
    for (p, row) in m.iter().enumerate() {
        if row.len() != space.n_responses(p) {
            return Err(Error::Shape(format!(
                "{what} row {p} has {} entries, expected {}",
                row.len(),
                space.n_responses(p)
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range(format!(
                "{what} row for prompt `{}` contains a non-finite value",
                space.prompt_id(p)
            )));
        }
    }
    Ok(())
}
