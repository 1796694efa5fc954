//! Count-based n-gram language model used as an in-repo source of
//! computational predictability.
//!
//! Every text starts with a single `<s>` marker. The history of a token is
//! `<s>` followed by the preceding tokens of the same text, so no n-gram
//! crosses a text boundary. Counts are kept for every context length from 0
//! (unigram) up to `order - 1`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Word;
use crate::error::{Error, Result};
use crate::predictors::{MatchConfig, PredictorColumn, SmoothingConfig};
use crate::tsv;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
const DUMP_MAGIC: &str = "#readpred-ngram\tv1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    Mle,
    AddK(f64),
    /// Jelinek-Mercer interpolation; `lambdas[k - 1]` weights the maximum
    /// likelihood estimate for context length `k`. The unigram floor is add-one.
    Interpolated(Vec<f64>),
}

impl Smoothing {
    pub fn default_for(order: usize) -> Smoothing {
        Smoothing::Interpolated(vec![0.7; order.saturating_sub(1)])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    pub matcher: MatchConfig,
    /// Split leading and trailing punctuation into tokens of their own.
    pub split_punctuation: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            matcher: MatchConfig {
                strip_punctuation: false,
                ..MatchConfig::default()
            },
            split_punctuation: true,
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            self.push_word(raw, &mut out);
        }
        out
    }

    fn push_word(&self, raw: &str, out: &mut Vec<String>) {
        let norm = self.matcher.normalize(raw);
        if norm.is_empty() {
            return;
        }
        if !self.split_punctuation {
            out.push(norm);
            return;
        }
        let is_p = |c: char| c.is_ascii_punctuation() || "¡¿«»…“”‘’—–".contains(c);
        let core = norm.trim_matches(is_p);
        if core.is_empty() {
            out.extend(norm.chars().map(String::from));
            return;
        }
        let start = norm.find(core).unwrap_or(0);
        out.extend(norm[..start].chars().map(String::from));
        out.push(core.to_string());
        out.extend(norm[start + core.len()..].chars().map(String::from));
    }

    /// Tokens for one corpus word, plus the index of the token that is
    /// scored as the word itself (the first non-punctuation token).
    pub fn word_tokens(&self, surface: &str) -> (Vec<String>, usize) {
        let toks = self.tokenize(surface);
        let is_p = |t: &str| {
            t.chars()
                .all(|c| c.is_ascii_punctuation() || "¡¿«»…“”‘’—–".contains(c))
        };
        let head = toks.iter().position(|t| !is_p(t)).unwrap_or(0);
        (toks, head)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    smoothing: Smoothing,
    /// id 0 is `<unk>`, id 1 is `<s>`; `<s>` is never predicted.
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

fn check_smoothing(order: usize, smoothing: &Smoothing) -> Result<()> {
    match smoothing {
        Smoothing::Mle => Ok(()),
        Smoothing::AddK(k) if *k > 0.0 && k.is_finite() => Ok(()),
        Smoothing::AddK(k) => Err(Error::Invalid(format!(
            "add-k constant must be positive, got {k}"
        ))),
        Smoothing::Interpolated(l) => {
            if l.len() != order - 1 {
                return Err(Error::Invalid(format!(
                    "interpolation needs {} weights for order {order}, got {}",
                    order - 1,
                    l.len()
                )));
            }
            if l.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Invalid(
                    "interpolation weights must lie in [0, 1]".into(),
                ));
            }
            Ok(())
        }
    }
}

impl NgramModel {
    fn empty(order: usize, smoothing: Smoothing) -> Result<Self> {
        if order == 0 {
            return Err(Error::Invalid("n-gram order must be >= 1".into()));
        }
        check_smoothing(order, &smoothing)?;
        let mut m = NgramModel {
            order,
            smoothing,
            vocab: Vec::new(),
            index: HashMap::new(),
            counts: HashMap::new(),
        };
        m.intern(UNK);
        m.intern(BOS);
        Ok(m)
    }

    fn intern(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    fn id(&self, tok: &str) -> u32 {
        self.index
            .get(tok)
            .copied()
            .filter(|&i| i != 1)
            .unwrap_or(0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    /// Prediction vocabulary: every training word plus `<unk>`.
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1)
            .map(|(_, s)| s.as_str())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() - 1
    }

    /// Raw count of `word` following exactly `context`.
    pub fn count(&self, context: &[&str], word: &str) -> u64 {
        let Some(ctx) = self.context_ids(context) else {
            return 0;
        };
        let Some(&w) = self.index.get(word) else {
            return 0;
        };
        self.counts
            .get(&ctx)
            .and_then(|c| c.next.get(&w))
            .copied()
            .unwrap_or(0)
    }

    /// Total count of tokens observed after exactly `context`.
    pub fn context_total(&self, context: &[&str]) -> u64 {
        self.context_ids(context)
            .and_then(|ctx| self.counts.get(&ctx))
            .map_or(0, |c| c.total)
    }

    fn context_ids(&self, context: &[&str]) -> Option<Vec<u32>> {
        context
            .iter()
            .map(|t| self.index.get(*t).copied())
            .collect()
    }

    /// Every stored (context, word, count) triple.
    pub fn entries(&self) -> Vec<(Vec<String>, String, u64)> {
        let mut out = Vec::new();
        for (ctx, c) in &self.counts {
            let ctx_s: Vec<String> = ctx
                .iter()
                .map(|&i| self.vocab[i as usize].clone())
                .collect();
            for (&w, &n) in &c.next {
                out.push((ctx_s.clone(), self.vocab[w as usize].clone(), n));
            }
        }
        out.sort();
        out
    }

    fn add(&mut self, ctx: &[u32], w: u32, n: u64) {
        let entry = self.counts.entry(ctx.to_vec()).or_default();
        entry.total += n;
        *entry.next.entry(w).or_default() += n;
    }

    /// Probability of `word` after `context`; only the last `order - 1`
    /// tokens of the context are used. Unknown tokens map to `<unk>`.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let ids: Vec<u32> = context
            .iter()
            .map(|t| if *t == BOS { 1 } else { self.id(t) })
            .collect();
        self.prob_ids(&ids, self.id(word))
    }

    fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let max_len = (self.order - 1).min(history.len());
        let v = self.vocab_size() as f64;
        let ml = |c: &ContextCounts| c.next.get(&w).copied().unwrap_or(0) as f64 / c.total as f64;
        match &self.smoothing {
            Smoothing::Mle | Smoothing::AddK(_) => {
                let (_, counts) = (0..=max_len)
                    .rev()
                    .find_map(|k| {
                        let ctx = &history[history.len() - k..];
                        self.counts.get(ctx).map(|c| (k, c))
                    })
                    .expect("unigram counts exist for a trained model");
                match self.smoothing {
                    Smoothing::AddK(k) => {
                        let c = counts.next.get(&w).copied().unwrap_or(0) as f64;
                        (c + k) / (counts.total as f64 + k * v)
                    }
                    _ => ml(counts),
                }
            }
            Smoothing::Interpolated(lambdas) => {
                let uni = &self.counts[&Vec::new()];
                let c = uni.next.get(&w).copied().unwrap_or(0) as f64;
                let mut p = (c + 1.0) / (uni.total as f64 + v);
                for k in 1..=max_len {
                    let ctx = &history[history.len() - k..];
                    if let Some(counts) = self.counts.get(ctx) {
                        let l = lambdas[k - 1];
                        p = l * ml(counts) + (1.0 - l) * p;
                    }
                }
                p
            }
        }
    }

    /// One probability per word, each conditioned on the preceding words of
    /// the same text. Words are taken in (text_id, pos_in_text) order and
    /// probabilities are clamped per `smoothing`.
    pub fn score_corpus(
        &self,
        words: &[Word],
        tokenizer: &Tokenizer,
        source_name: &str,
        smoothing: &SmoothingConfig,
    ) -> Result<PredictorColumn> {
        let mut by_text: BTreeMap<u32, Vec<&Word>> = BTreeMap::new();
        for w in words {
            by_text.entry(w.text_id).or_default().push(w);
        }
        let mut values = BTreeMap::new();
        for text in by_text.values_mut() {
            text.sort_by_key(|w| w.pos_in_text);
            let mut history: Vec<u32> = vec![1];
            for w in text.iter() {
                let (toks, head) = tokenizer.word_tokens(&w.surface);
                let ids: Vec<u32> = toks.iter().map(|t| self.id(t)).collect();
                let p = match ids.get(head) {
                    Some(&target) => {
                        let mut h = history.clone();
                        h.extend(&ids[..head]);
                        self.prob_ids(&h, target)
                    }
                    None => self.prob_ids(&history, 0),
                };
                // MLE can give exactly 0 (or 1).
                values.insert(w.word_id, smoothing.clamp(p));
                history.extend(ids);
            }
        }
        PredictorColumn::from_probs(source_name, values, words.len())
    }

    /// Writes the `context\tword\tcount` dump, preceded by `#` metadata lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = tsv::create(path)?;
        writeln!(out, "{DUMP_MAGIC}")?;
        writeln!(out, "#order\t{}", self.order)?;
        match &self.smoothing {
            Smoothing::Mle => writeln!(out, "#smoothing\tmle")?,
            Smoothing::AddK(k) => writeln!(out, "#smoothing\tadd_k\t{k}")?,
            Smoothing::Interpolated(l) => {
                let l: Vec<String> = l.iter().map(|x| x.to_string()).collect();
                writeln!(out, "#smoothing\tinterpolated\t{}", l.join(","))?
            }
        }
        writeln!(out, "context\tword\tcount")?;
        for (ctx, w, n) in self.entries() {
            writeln!(out, "{}\t{}\t{}", ctx.join(" "), w, n)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NgramModel> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut order = None;
        let mut smoothing = None;
        let mut model: Option<NgramModel> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i as u64 + 1;
            let bad = |m: &str| Error::parse(path, lineno, m.to_string());
            if i == 0 {
                if line != DUMP_MAGIC {
                    return Err(bad("not a readpred n-gram dump"));
                }
                continue;
            }
            if model.is_none() {
                if let Some(meta) = line.strip_prefix('#') {
                    let f: Vec<&str> = meta.split('\t').collect();
                    match f.as_slice() {
                        ["order", n] => {
                            order = Some(n.parse::<usize>().map_err(|_| bad("bad order"))?)
                        }
                        ["smoothing", "mle"] => smoothing = Some(Smoothing::Mle),
                        ["smoothing", "add_k", k] => {
                            smoothing = Some(Smoothing::AddK(k.parse().map_err(|_| bad("bad k"))?))
                        }
                        ["smoothing", "interpolated", l] => {
                            let l = if l.is_empty() {
                                Vec::new()
                            } else {
                                l.split(',')
                                    .map(|x| x.parse().map_err(|_| bad("bad lambda")))
                                    .collect::<Result<_>>()?
                            };
                            smoothing = Some(Smoothing::Interpolated(l))
                        }
                        _ => return Err(bad("unknown metadata line")),
                    }
                    continue;
                }
                if line != "context\tword\tcount" {
                    return Err(bad("expected the context/word/count header"));
                }
                let (Some(o), Some(s)) = (order, smoothing.clone()) else {
                    return Err(bad("missing #order or #smoothing before the header"));
                };
                model = Some(NgramModel::empty(o, s)?);
                continue;
            }
            let m = model
                .as_mut()
                .ok_or_else(|| bad("count row before header"))?;
            let f: Vec<&str> = line.split('\t').collect();
            let [ctx, w, n] = f.as_slice() else {
                return Err(bad("expected context, word, count"));
            };
            let n: u64 = n.parse().map_err(|_| bad("bad count"))?;
            if n == 0 {
                return Err(bad("zero count"));
            }
            let ctx: Vec<u32> = ctx
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|t| m.intern(t))
                .collect();
            if ctx.len() >= m.order {
                return Err(bad("context longer than order - 1"));
            }
            let w = m.intern(w);
            m.add(&ctx, w, n);
        }
        let m = model.ok_or_else(|| Error::parse(path, 0, "empty n-gram dump"))?;
        if !m.counts.contains_key(&Vec::new()) {
            return Err(Error::parse(path, 0, "dump has no unigram counts"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Replace training words seen exactly once with `<unk>`.
    pub singletons_to_unk: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            order: 5,
            smoothing: Smoothing::default_for(5),
            singletons_to_unk: false,
        }
    }
}

/// Counts n-grams over already tokenized texts.
pub fn train_ngram(texts: &[Vec<String>], config: &TrainConfig) -> Result<NgramModel> {
    if texts.iter().all(|t| t.is_empty()) {
        return Err(Error::Invalid(
            "cannot train an n-gram model on an empty corpus".into(),
        ));
    }
    let mut model = NgramModel::empty(config.order, config.smoothing.clone())?;
    let mut freq: HashMap<&str, u64> = HashMap::new();
    if config.singletons_to_unk {
        for t in texts.iter().flatten() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    for text in texts {
        let mut history: Vec<u32> = vec![1];
        for tok in text {
            let w = if config.singletons_to_unk && freq[tok.as_str()] == 1 {
                0
            } else {
                model.intern(tok)
            };
            for k in 0..config.order.min(history.len() + 1) {
                let ctx = history[history.len() - k..].to_vec();
                model.add(&ctx, w, 1);
            }
            history.push(w);
        }
    }
    Ok(model)
}

/// Reads a plain-text training corpus; blank lines separate texts.
pub fn read_corpus(path: &Path, tokenizer: &Tokenizer) -> Result<Vec<Vec<String>>> {
    let content = std::fs::read_to_string(path)?;
    let mut texts = vec![Vec::new()];
    for line in content.lines() {
        if line.trim().is_empty() {
            if !texts.last().unwrap().is_empty() {
                texts.push(Vec::new());
            }
            continue;
        }
        texts.last_mut().unwrap().extend(tokenizer.tokenize(line));
    }
    texts.retain(|t| !t.is_empty());
    Ok(texts)
}
