//! Enumerable prompt/response universes and the preference dataset model.
//!
//! Responses are opaque identifiers scoped to their prompt. A [`Space`] is
//! identified by the SHA-256 of its canonical JSON snapshot, and every table
//! in the crate (policies, rewards, datasets) carries that identifier so
//! mismatched artifacts are rejected at load time.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Deserializer;
use serde::ser::{SerializeMap, SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;

/// Ordered prompts, each with an ordered list of at least two responses.
#[derive(Clone, PartialEq)]
pub struct Space {
    prompts: Vec<String>,
    responses: Vec<Vec<String>>,
    labels: BTreeMap<String, String>,
    prompt_index: HashMap<String, usize>,
    response_index: Vec<HashMap<String, usize>>,
    id: String,
}

impl fmt::Debug for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Space")
            .field("id", &self.id)
            .field("prompts", &self.prompts.len())
            .field("cells", &self.n_cells())
            .finish()
    }
}

impl Space {
    /// Builds a space from explicit identifiers.
    ///
    /// `labels` maps a prompt id, or `"<prompt-id>/<response-id>"` for a
    /// response, to display text used by remote annotators.
    pub fn new(
        prompts: Vec<String>,
        responses: Vec<Vec<String>>,
        labels: BTreeMap<String, String>,
    ) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Input("a space needs at least one prompt".into()));
        }
        if prompts.len() != responses.len() {
            return Err(Error::Shape(format!(
                "{} prompts but {} response lists",
                prompts.len(),
                responses.len()
            )));
        }
        let mut prompt_index = HashMap::with_capacity(prompts.len());
        for (i, p) in prompts.iter().enumerate() {
            if prompt_index.insert(p.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate prompt id `{p}`")));
            }
        }
        let mut response_index = Vec::with_capacity(prompts.len());
        for (p, rs) in prompts.iter().zip(&responses) {
            if rs.len() < 2 {
                return Err(Error::Input(format!(
                    "prompt `{p}` has {} response(s); preferences need at least 2",
                    rs.len()
                )));
            }
            let mut idx = HashMap::with_capacity(rs.len());
            for (j, r) in rs.iter().enumerate() {
                if idx.insert(r.clone(), j).is_some() {
                    return Err(Error::Input(format!(
                        "duplicate response id `{r}` under prompt `{p}`"
                    )));
                }
            }
            response_index.push(idx);
        }
        let mut space = Space {
            prompts,
            responses,
            labels,
            prompt_index,
            response_index,
            id: String::new(),
        };
        space.id = hash::json_hash(&space)?;
        Ok(space)
    }

    /// Deterministic synthetic space: prompts `x0..`, responses `y0..` under
    /// each prompt, with seeded pseudo-text labels.
    pub fn build(n_prompts: usize, n_responses: usize, seed: u64) -> Result<Self> {
        if n_prompts < 1 {
            return Err(Error::Input("n_prompts must be at least 1".into()));
        }
        if n_responses < 2 {
            return Err(Error::Input(
                "n_responses must be at least 2; preferences are undefined on singletons".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompts: Vec<String> = (0..n_prompts).map(|i| format!("x{i}")).collect();
        let responses: Vec<Vec<String>> = (0..n_prompts)
            .map(|_| (0..n_responses).map(|j| format!("y{j}")).collect())
            .collect();
        let mut labels = BTreeMap::new();
        for (p, rs) in prompts.iter().zip(&responses) {
            labels.insert(p.clone(), pseudo_text(&mut rng, 6));
            for r in rs {
                labels.insert(format!("{p}/{r}"), pseudo_text(&mut rng, 10));
            }
        }
        Space::new(prompts, responses, labels)
    }

    /// Content hash of the canonical snapshot.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn n_responses(&self, prompt: usize) -> usize {
        self.responses[prompt].len()
    }

    /// Total number of (prompt, response) cells.
    pub fn n_cells(&self) -> usize {
        self.responses.iter().map(Vec::len).sum()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn responses(&self, prompt: usize) -> &[String] {
        &self.responses[prompt]
    }

    pub fn prompt_id(&self, prompt: usize) -> &str {
        &self.prompts[prompt]
    }

    pub fn response_id(&self, prompt: usize, response: usize) -> &str {
        &self.responses[prompt][response]
    }

    pub fn prompt_index(&self, prompt: &str) -> Result<usize> {
        self.prompt_index
            .get(prompt)
            .copied()
            .ok_or_else(|| Error::lookup("prompt", prompt))
    }

    pub fn response_index(&self, prompt: usize, response: &str) -> Result<usize> {
        self.response_index[prompt]
            .get(response)
            .copied()
            .ok_or_else(|| Error::lookup("response", format!("{}/{response}", self.prompts[prompt])))
    }

    /// Resolves a (prompt, response) id pair to indices.
    pub fn cell(&self, prompt: &str, response: &str) -> Result<(usize, usize)> {
        let p = self.prompt_index(prompt)?;
        Ok((p, self.response_index(p, response)?))
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.labels
    }

    /// Display text for a prompt, falling back to its id.
    pub fn prompt_text(&self, prompt: usize) -> &str {
        let id = &self.prompts[prompt];
        self.labels.get(id).map(String::as_str).unwrap_or(id)
    }

    /// Display text for a response, falling back to its id.
    pub fn response_text(&self, prompt: usize, response: usize) -> &str {
        let id = &self.responses[prompt][response];
        self.labels
            .get(&format!("{}/{id}", self.prompts[prompt]))
            .map(String::as_str)
            .unwrap_or(id)
    }

    /// A zero-filled matrix with one row per prompt.
    pub fn zeros(&self) -> Vec<Vec<f64>> {
        self.responses.iter().map(|r| vec![0.0; r.len()]).collect()
    }

    /// Canonical compact JSON snapshot.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub(crate) fn check_id(&self, kind: &str, space_ref: &str) -> Result<()> {
        if space_ref != self.id {
            return Err(Error::Shape(format!(
                "{kind} is bound to space {space_ref}, not {}",
                self.id
            )));
        }
        Ok(())
    }
}

fn pseudo_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    const SYLLABLES: [&str; 16] = [
        "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "de", "po", "an", "el", "or", "ti", "mu",
        "ze",
    ];
    (0..words)
        .map(|_| {
            let len = rng.random_range(1..=3);
            (0..len)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

struct ResponsesOf<'a>(&'a Space);

impl Serialize for ResponsesOf<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.prompts.len()))?;
        for (p, rs) in self.0.prompts.iter().zip(&self.0.responses) {
            map.serialize_entry(p, rs)?;
        }
        map.end()
    }
}

impl Serialize for Space {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let n = if self.labels.is_empty() { 2 } else { 3 };
        let mut s = serializer.serialize_struct("Space", n)?;
        s.serialize_field("prompts", &self.prompts)?;
        s.serialize_field("responses_of", &ResponsesOf(self))?;
        if !self.labels.is_empty() {
            s.serialize_field("labels", &self.labels)?;
        }
        s.end()
    }
}

impl<'de> Deserialize<'de> for Space {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            prompts: Vec<String>,
            responses_of: HashMap<String, Vec<String>>,
            #[serde(default)]
            labels: BTreeMap<String, String>,
        }
        let mut raw = Raw::deserialize(deserializer)?;
        if raw.responses_of.len() != raw.prompts.len() {
            return Err(serde::de::Error::custom(
                "responses_of must have exactly one entry per prompt",
            ));
        }
        let mut responses = Vec::with_capacity(raw.prompts.len());
        for p in &raw.prompts {
            let rs = raw.responses_of.remove(p).ok_or_else(|| {
                serde::de::Error::custom(format!("responses_of is missing prompt `{p}`"))
            })?;
            responses.push(rs);
        }
        Space::new(raw.prompts, responses, raw.labels).map_err(serde::de::Error::custom)
    }
}

/// Where a preference pair's candidates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    OffPolicy,
    OnPolicy,
    External,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::OffPolicy => "off-policy",
            Source::OnPolicy => "on-policy",
            Source::External => "external",
        }
    }
}

/// One annotated comparison. Field order is the on-disk order.
///
/// An absent `p_chosen` is a hard label. A record whose `chosen` equals
/// `rejected` is only legal as the degenerate tie emitted when sampling could
/// not produce two distinct candidates, and must carry `p_chosen = 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_chosen: Option<f64>,
    pub source: Source,
    pub annotator: String,
}

impl PreferenceRecord {
    /// Probability that `chosen` is preferred; hard labels read as 1.
    pub fn target(&self) -> f64 {
        self.p_chosen.unwrap_or(1.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.chosen == self.rejected
    }
}

/// Index form of a validated record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
    pub p_chosen: Option<f64>,
}

impl Pair {
    pub fn target(&self) -> f64 {
        self.p_chosen.unwrap_or(1.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.chosen == self.rejected
    }
}

/// Validated records bound to a space.
#[derive(Debug, Clone)]
pub struct PreferenceDataset {
    space: Arc<Space>,
    records: Vec<PreferenceRecord>,
    pairs: Vec<Pair>,
}

impl PartialEq for PreferenceDataset {
    fn eq(&self, other: &Self) -> bool {
        self.space.id() == other.space.id() && self.records == other.records
    }
}

impl PreferenceDataset {
    pub fn new(space: Arc<Space>, records: Vec<PreferenceRecord>) -> Result<Self> {
        let pairs = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                validate_record(&space, r).map_err(|message| Error::Validation {
                    line: i + 1,
                    message,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreferenceDataset {
            space,
            records,
            pairs,
        })
    }

    pub fn empty(space: Arc<Space>) -> Self {
        PreferenceDataset {
            space,
            records: Vec::new(),
            pairs: Vec::new(),
        }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn space_ref(&self) -> &str {
        self.space.id()
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The same pairs with chosen and rejected exchanged and soft labels
    /// complemented.
    pub fn swapped(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| PreferenceRecord {
                chosen: r.rejected.clone(),
                rejected: r.chosen.clone(),
                p_chosen: r.p_chosen.map(|p| 1.0 - p),
                ..r.clone()
            })
            .collect::<Vec<_>>();
        let pairs = self
            .pairs
            .iter()
            .map(|p| Pair {
                chosen: p.rejected,
                rejected: p.chosen,
                p_chosen: p.p_chosen.map(|q| 1.0 - q),
                ..*p
            })
            .collect();
        PreferenceDataset {
            space: self.space.clone(),
            records,
            pairs,
        }
    }

    /// Map from prompt index to record position; fails on duplicate prompts.
    pub fn by_prompt(&self) -> Result<BTreeMap<usize, usize>> {
        let mut out = BTreeMap::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if out.insert(p.prompt, i).is_some() {
                return Err(Error::Input(format!(
                    "prompt `{}` appears more than once in the dataset",
                    self.space.prompt_id(p.prompt)
                )));
            }
        }
        Ok(out)
    }

    /// Content hash of the JSONL serialization.
    pub fn content_hash(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_jsonl(self, &mut buf)?;
        Ok(hash::sha256_hex(&buf))
    }
}

fn validate_record(space: &Space, r: &PreferenceRecord) -> Result<Pair, String> {
    let prompt = space
        .prompt_index(&r.prompt)
        .map_err(|_| format!("unknown prompt id `{}`", r.prompt))?;
    let resolve = |id: &str| {
        space
            .response_index(prompt, id)
            .map_err(|_| format!("unknown response id `{id}` for prompt `{}`", r.prompt))
    };
    let chosen = resolve(&r.chosen)?;
    let rejected = resolve(&r.rejected)?;
    if let Some(p) = r.p_chosen {
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("p_chosen {p} is outside [0, 1]"));
        }
    }
    if chosen == rejected && r.p_chosen != Some(0.5) {
        return Err(format!(
            "chosen and rejected are both `{}`; identical pairs must carry p_chosen = 0.5",
            r.chosen
        ));
    }
    Ok(Pair {
        prompt,
        chosen,
        rejected,
        p_chosen: r.p_chosen,
    })
}

/// Byte counter so partial writes report how far they got.
struct Counting<W> {
    inner: W,
    written: usize,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Writes one JSON object per line (LF, UTF-8) and returns the line count.
pub fn write_jsonl<W: Write>(dataset: &PreferenceDataset, sink: W) -> Result<usize> {
    let mut out = Counting {
        inner: sink,
        written: 0,
    };
    for record in &dataset.records {
        let line = serde_json::to_vec(record)?;
        let res = out
            .write_all(&line)
            .and_then(|_| out.write_all(b"\n"));
        if let Err(source) = res {
            return Err(Error::Io {
                written: out.written,
                source,
            });
        }
    }
    out.flush().map_err(|source| Error::Io {
        written: out.written,
        source,
    })?;
    Ok(dataset.records.len())
}

/// Parses and validates JSONL against `space`. Blank lines are skipped;
/// reported line numbers are 1-based physical lines.
pub fn read_jsonl<R: BufRead>(source: R, space: Arc<Space>) -> Result<PreferenceDataset> {
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PreferenceRecord = serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: line_no,
            source,
        })?;
        if let Some(p) = record.p_chosen {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Range(format!(
                    "line {line_no}: p_chosen {p} is outside [0, 1]"
                )));
            }
        }
        let pair = validate_record(&space, &record).map_err(|message| Error::Validation {
            line: line_no,
            message,
        })?;
        records.push(record);
        pairs.push(pair);
    }
    Ok(PreferenceDataset {
        space,
        records,
        pairs,
    })
}
