//! Predictability columns: cloze proportions from human responses and
//! imported language-model probabilities, both carried on the logit scale.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{ClozeTable, Word};
use crate::error::{Error, Result};
use crate::tsv::{self, TsvReader};

pub const PREDS_COLUMNS: [&str; 2] = ["word_id", "prob"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    /// Cloze counts become (k + 0.5) / (n + 1).
    #[default]
    EmpiricalLogit,
    /// Proportions are clamped into [eps, 1 - eps].
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub mode: SmoothingMode,
    pub clamp_eps: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            mode: SmoothingMode::EmpiricalLogit,
            clamp_eps: 1e-8,
        }
    }
}

impl SmoothingConfig {
    pub fn new(mode: SmoothingMode, clamp_eps: f64) -> Result<Self> {
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::Invalid(format!(
                "clamp_eps must lie in (0, 0.5), got {clamp_eps}"
            )));
        }
        Ok(SmoothingConfig { mode, clamp_eps })
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clamp_eps, 1.0 - self.clamp_eps)
    }
}

/// Log-odds of `p` after clamping into `[eps, 1 - eps]`. The clamp applies in
/// both smoothing modes so the result is always finite; empirical-logit
/// smoothing already keeps cloze proportions away from the ends.
pub fn logit(p: f64, smoothing: &SmoothingConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(raw_logit(smoothing.clamp(p)))
}

fn raw_logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorColumn {
    pub source_name: String,
    pub values: BTreeMap<u32, f64>,
    pub logits: BTreeMap<u32, f64>,
    /// Fraction of corpus words that have a value.
    pub coverage: f64,
}

impl PredictorColumn {
    /// Builds a column from probabilities already inside (0, 1).
    pub fn from_probs(
        source_name: impl Into<String>,
        values: BTreeMap<u32, f64>,
        corpus_size: usize,
    ) -> Result<Self> {
        for (&id, &p) in &values {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Invalid(format!(
                    "word {id}: stored probability {p} must lie strictly inside (0, 1)"
                )));
            }
        }
        let logits = values.iter().map(|(&id, &p)| (id, raw_logit(p))).collect();
        let coverage = if corpus_size == 0 {
            0.0
        } else {
            values.len() as f64 / corpus_size as f64
        };
        Ok(PredictorColumn {
            source_name: source_name.into(),
            values,
            logits,
            coverage,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes the stored probabilities as a preds.tsv file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = tsv::create(path)?;
        tsv::write_header(&mut out, &PREDS_COLUMNS)?;
        for (id, p) in &self.values {
            writeln!(out, "{id}\t{p}")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub trim: bool,
    pub nfc: bool,
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            trim: true,
            nfc: true,
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || "¡¿«»…“”‘’—–".contains(c)
}

impl MatchConfig {
    /// Applies the enabled normalization steps in order.
    pub fn normalize(&self, s: &str) -> String {
        let mut out: String = if self.trim {
            s.trim().to_string()
        } else {
            s.to_string()
        };
        if self.nfc {
            out = out.nfc().collect();
        }
        if self.lowercase {
            out = out.to_lowercase();
        }
        if self.strip_punctuation {
            out = out.trim_matches(is_punct).to_string();
            if self.trim {
                out = out.trim().to_string();
            }
        }
        out
    }
}

pub fn match_response(response: &str, target: &str, matcher: &MatchConfig) -> bool {
    matcher.normalize(response) == matcher.normalize(target)
}

pub fn compute_cloze_pred(
    cloze: &ClozeTable,
    words: &[Word],
    matcher: &MatchConfig,
    smoothing: &SmoothingConfig,
) -> Result<PredictorColumn> {
    let mut values = BTreeMap::new();
    let by_word = cloze.responses_by_word();
    let known: HashSet<u32> = words.iter().map(|w| w.word_id).collect();
    if let Some(&id) = by_word.keys().find(|id| !known.contains(id)) {
        return Err(Error::UnknownWord(id));
    }
    let mut uncovered = 0usize;
    for w in words {
        let Some(responses) = by_word.get(&w.word_id) else {
            uncovered += 1;
            continue;
        };
        let n = responses.len() as f64;
        let k = responses
            .iter()
            .filter(|r| match_response(r, &w.surface, matcher))
            .count() as f64;
        let p = match smoothing.mode {
            SmoothingMode::EmpiricalLogit => (k + 0.5) / (n + 1.0),
            SmoothingMode::Clamp => smoothing.clamp(k / n),
        };
        values.insert(w.word_id, p);
    }
    if uncovered > 0 {
        log::info!("cloze: {uncovered} word(s) have no responses and are left out");
    }
    PredictorColumn::from_probs("cloze", values, words.len())
}

/// Reads a preds.tsv file of language-model probabilities. Words missing from
/// the file get no entry.
pub fn import_lm_probs(
    path: &Path,
    source_name: &str,
    words: &[Word],
    smoothing: &SmoothingConfig,
    lenient: bool,
) -> Result<PredictorColumn> {
    let known: HashSet<u32> = words.iter().map(|w| w.word_id).collect();
    let mut reader = TsvReader::open(path, &PREDS_COLUMNS, lenient)?;
    let mut values = BTreeMap::new();
    reader.for_each(|row| {
        let id: u32 = row.get(0, "word_id")?;
        let p: f64 = row.get(1, "prob")?;
        if !known.contains(&id) {
            return Err(row.error(format!("unknown word_id {id}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(row.error(format!("word_id {id}: probability {p} outside [0, 1]")));
        }
        if values.insert(id, smoothing.clamp(p)).is_some() {
            return Err(row.error(format!("duplicate word_id {id}")));
        }
        Ok(())
    })?;
    PredictorColumn::from_probs(source_name, values, words.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(surfaces: &[&str]) -> Vec<Word> {
        surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| Word::new(i as u32, 1, 0, 0, i as u32, i as u32, i as u32, s, 1.0))
            .collect()
    }

    fn table(rows: &[(u32, &str)]) -> ClozeTable {
        ClozeTable {
            rows: rows.iter().map(|(i, s)| (*i, s.to_string())).collect(),
        }
    }

    #[test]
    fn matching_defaults() {
        let m = MatchConfig::default();
        assert!(match_response("Casa ", "casa", &m));
        assert!(!match_response("casas", "casa", &m));
        assert!(!match_response("árbol", "arbol", &m));
        assert!(match_response("¿Casa?", "casa", &m));
        let strict = MatchConfig {
            lowercase: false,
            ..m
        };
        assert!(!match_response("Casa", "casa", &strict));
    }

    #[test]
    fn five_of_thirteen() {
        let w = words(&["casa"]);
        let mut rows = vec![(0, "casa"); 5];
        rows.extend(vec![(0, "perro"); 8]);
        let col = compute_cloze_pred(
            &table(&rows),
            &w,
            &MatchConfig::default(),
            &SmoothingConfig::default(),
        )
        .unwrap();
        assert!((col.values[&0] - 5.5 / 14.0).abs() < 1e-15);
        assert!((col.values[&0] - 0.392857).abs() < 1e-6);
    }

    #[test]
    fn zero_and_all_matches_stay_inside() {
        let w = words(&["a", "b"]);
        let mut rows = vec![(0, "x"); 10];
        rows.extend(vec![(1, "b"); 10]);
        let col = compute_cloze_pred(
            &table(&rows),
            &w,
            &MatchConfig::default(),
            &SmoothingConfig::default(),
        )
        .unwrap();
        assert!((col.values[&0] - 0.5 / 11.0).abs() < 1e-15);
        assert!((col.values[&0] - 0.04545).abs() < 1e-5);
        assert!(col.logits[&0].is_finite());
        assert!(col.values[&1] < 1.0);
    }

    #[test]
    fn uncovered_words_left_out() {
        let w = words(&["a", "b"]);
        let col = compute_cloze_pred(
            &table(&[(0, "a")]),
            &w,
            &MatchConfig::default(),
            &SmoothingConfig::default(),
        )
        .unwrap();
        assert_eq!(col.len(), 1);
        assert_eq!(col.coverage, 0.5);
    }

    #[test]
    fn clamp_mode_counts() {
        let w = words(&["a"]);
        let s = SmoothingConfig::new(SmoothingMode::Clamp, 1e-3).unwrap();
        let col = compute_cloze_pred(
            &table(&[(0, "a"), (0, "a")]),
            &w,
            &MatchConfig::default(),
            &s,
        )
        .unwrap();
        assert_eq!(col.values[&0], 1.0 - 1e-3);
    }

    #[test]
    fn logit_values() {
        let s = SmoothingConfig::default();
        assert_eq!(logit(0.5, &s).unwrap(), 0.0);
        // ln(0.392857 / 0.607143)
        assert!((logit(0.392857, &s).unwrap() - (-0.435318)).abs() < 1e-5);
        assert!((logit(0.3, &s).unwrap() + logit(0.7, &s).unwrap()).abs() < 1e-15);
        assert!(logit(1.2, &s).is_err());
        assert!(logit(-0.1, &s).is_err());
        assert!(logit(0.0, &s).unwrap().is_finite());
    }

    #[test]
    fn eps_bounds() {
        assert!(SmoothingConfig::new(SmoothingMode::Clamp, 0.0).is_err());
        assert!(SmoothingConfig::new(SmoothingMode::Clamp, 0.5).is_err());
    }
}
