//! Word corpus, fixation reports and cloze responses, plus the joined
//! per-fixation analysis dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::predictors::PredictorColumn;
use crate::tsv::{self, TsvReader};

pub const WORD_COLUMNS: [&str; 9] = [
    "word_id",
    "text_id",
    "sentence_idx",
    "line_idx",
    "pos_in_sentence",
    "pos_in_line",
    "pos_in_text",
    "surface",
    "freq_per_million",
];

pub const FIXATION_COLUMNS: [&str; 4] =
    ["participant_id", "word_id", "fprt_ms", "saccade_distance"];

pub const CLOZE_COLUMNS: [&str; 2] = ["word_id", "response"];

/// Covariates every dataset carries, in the order they appear in reports.
pub const COVARIATES: [&str; 7] = [
    "saccade_distance",
    "inv_length",
    "log_freq",
    "rel_pos_line",
    "rel_pos_text",
    "rel_pos_sentence",
    "len_freq",
];

pub const RESPONSE: &str = "log_fprt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub word_id: u32,
    pub text_id: u32,
    pub sentence_idx: u32,
    pub line_idx: u32,
    pub pos_in_sentence: u32,
    pub pos_in_line: u32,
    pub pos_in_text: u32,
    pub surface: String,
    pub length: u32,
    pub freq_per_million: f64,
}

impl Word {
    /// Builds a word, NFC-normalizing the surface and deriving its length.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        word_id: u32,
        text_id: u32,
        sentence_idx: u32,
        line_idx: u32,
        pos_in_sentence: u32,
        pos_in_line: u32,
        pos_in_text: u32,
        surface: &str,
        freq_per_million: f64,
    ) -> Self {
        let surface: String = surface.nfc().collect();
        let length = surface.chars().count() as u32;
        Word {
            word_id,
            text_id,
            sentence_idx,
            line_idx,
            pos_in_sentence,
            pos_in_line,
            pos_in_text,
            surface,
            length,
            freq_per_million,
        }
    }
}

/// Checks the table-level invariants: unique ids, unique text positions,
/// positive lengths, non-negative frequencies, and positions that run
/// `0..count` inside every text, sentence and line.
pub fn validate_words(words: &[Word]) -> Result<()> {
    let mut ids = HashSet::with_capacity(words.len());
    let mut text_pos = HashSet::with_capacity(words.len());
    for w in words {
        if !ids.insert(w.word_id) {
            return Err(Error::Duplicate {
                what: "word_id",
                id: w.word_id.to_string(),
            });
        }
        if !text_pos.insert((w.text_id, w.pos_in_text)) {
            return Err(Error::Duplicate {
                what: "(text_id, pos_in_text)",
                id: format!("({}, {})", w.text_id, w.pos_in_text),
            });
        }
        if w.length == 0 || w.length as usize != w.surface.chars().count() {
            return Err(Error::Invalid(format!(
                "word {} has length {} for surface `{}`",
                w.word_id, w.length, w.surface
            )));
        }
        if !(w.freq_per_million >= 0.0 && w.freq_per_million.is_finite()) {
            return Err(Error::Invalid(format!(
                "word {} has frequency {}",
                w.word_id, w.freq_per_million
            )));
        }
    }
    for unit in [Unit::Text, Unit::Sentence, Unit::Line] {
        let mut groups: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for w in words {
            groups.entry(unit.key(w)).or_default().push(unit.pos(w));
        }
        for (key, mut positions) in groups {
            positions.sort_unstable();
            if positions.iter().enumerate().any(|(i, &p)| p as usize != i) {
                return Err(Error::Invalid(format!(
                    "{} {:?} of text {}: positions are not 0..{}",
                    unit.name(),
                    key.1,
                    key.0,
                    positions.len()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Unit {
    Text,
    Sentence,
    Line,
}

impl Unit {
    fn key(self, w: &Word) -> (u32, u32) {
        match self {
            Unit::Text => (w.text_id, 0),
            Unit::Sentence => (w.text_id, w.sentence_idx),
            Unit::Line => (w.text_id, w.line_idx),
        }
    }

    fn pos(self, w: &Word) -> u32 {
        match self {
            Unit::Text => w.pos_in_text,
            Unit::Sentence => w.pos_in_sentence,
            Unit::Line => w.pos_in_line,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unit::Text => "text",
            Unit::Sentence => "sentence",
            Unit::Line => "line",
        }
    }
}

pub fn load_words(path: &Path, lenient: bool) -> Result<Vec<Word>> {
    let mut reader = TsvReader::open(path, &WORD_COLUMNS, lenient)?;
    let mut words = Vec::new();
    let mut seen = HashSet::new();
    reader.for_each(|row| {
        let surface = row.str(7);
        if surface.is_empty() {
            return Err(row.error("empty surface (length must be >= 1)"));
        }
        let word = Word::new(
            row.get(0, "word_id")?,
            row.get(1, "text_id")?,
            row.get(2, "sentence_idx")?,
            row.get(3, "line_idx")?,
            row.get(4, "pos_in_sentence")?,
            row.get(5, "pos_in_line")?,
            row.get(6, "pos_in_text")?,
            surface,
            row.get(8, "freq_per_million")?,
        );
        if !seen.insert(word.word_id) {
            return Err(row.error(format!("duplicate word_id {}", word.word_id)));
        }
        if !(word.freq_per_million.is_finite() && word.freq_per_million >= 0.0) {
            return Err(row.error("freq_per_million must be >= 0"));
        }
        words.push(word);
        Ok(())
    })?;
    validate_words(&words)?;
    Ok(words)
}

pub fn write_words(path: &Path, words: &[Word]) -> Result<()> {
    let mut out = tsv::create(path)?;
    tsv::write_header(&mut out, &WORD_COLUMNS)?;
    for w in words {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            w.word_id,
            w.text_id,
            w.sentence_idx,
            w.line_idx,
            w.pos_in_sentence,
            w.pos_in_line,
            w.pos_in_text,
            w.surface,
            w.freq_per_million
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub participant_id: u32,
    pub word_id: u32,
    pub fprt_ms: f64,
    pub saccade_distance: f64,
}

/// Fixation rows that survived validation, plus the rows rejected for a
/// non-positive reading time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixationTable {
    pub records: Vec<FixationRecord>,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

impl FixationTable {
    pub fn from_records(records: Vec<FixationRecord>, words: &[Word]) -> Result<Self> {
        let known: HashSet<u32> = words.iter().map(|w| w.word_id).collect();
        let mut keys = HashSet::with_capacity(records.len());
        for r in &records {
            if !known.contains(&r.word_id) {
                return Err(Error::UnknownWord(r.word_id));
            }
            if !(r.fprt_ms > 0.0 && r.fprt_ms.is_finite()) {
                return Err(Error::Invalid(format!(
                    "fprt_ms {} for participant {} word {}",
                    r.fprt_ms, r.participant_id, r.word_id
                )));
            }
            if !keys.insert((r.participant_id, r.word_id)) {
                return Err(Error::Duplicate {
                    what: "(participant_id, word_id)",
                    id: format!("({}, {})", r.participant_id, r.word_id),
                });
            }
        }
        Ok(FixationTable {
            records,
            rejected: Vec::new(),
        })
    }

    pub fn participants(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.participant_id)
            .collect::<HashSet<_>>()
            .len()
    }
}

pub fn load_fixations(path: &Path, words: &[Word], lenient: bool) -> Result<FixationTable> {
    let known: HashSet<u32> = words.iter().map(|w| w.word_id).collect();
    let mut reader = TsvReader::open(path, &FIXATION_COLUMNS, lenient)?;
    let mut table = FixationTable::default();
    let mut keys = HashSet::new();
    reader.for_each(|row| {
        let rec = FixationRecord {
            participant_id: row.get(0, "participant_id")?,
            word_id: row.get(1, "word_id")?,
            fprt_ms: row.get(2, "fprt_ms")?,
            saccade_distance: row.get(3, "saccade_distance")?,
        };
        if !known.contains(&rec.word_id) {
            return Err(row.error(format!("unknown word_id {}", rec.word_id)));
        }
        if !rec.saccade_distance.is_finite() {
            return Err(row.error("saccade_distance is not finite"));
        }
        if !(rec.fprt_ms > 0.0 && rec.fprt_ms.is_finite()) {
            let reason = format!("fprt_ms = {} is not a positive duration", rec.fprt_ms);
            log::warn!("{}:{}: rejected row: {reason}", path.display(), row.line());
            table.rejected.push(RejectedRow {
                line: row.line(),
                reason,
            });
            return Ok(());
        }
        if !keys.insert((rec.participant_id, rec.word_id)) {
            return Err(row.error(format!(
                "duplicate (participant_id, word_id) = ({}, {})",
                rec.participant_id, rec.word_id
            )));
        }
        table.records.push(rec);
        Ok(())
    })?;
    if table.records.is_empty() && table.rejected.is_empty() {
        log::warn!("{}: no fixation rows", path.display());
    }
    Ok(table)
}

pub fn write_fixations(path: &Path, records: &[FixationRecord]) -> Result<()> {
    let mut out = tsv::create(path)?;
    tsv::write_header(&mut out, &FIXATION_COLUMNS)?;
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.participant_id, r.word_id, r.fprt_ms, r.saccade_distance
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClozeTable {
    pub rows: Vec<(u32, String)>,
}

impl ClozeTable {
    pub fn responses_by_word(&self) -> BTreeMap<u32, Vec<&str>> {
        let mut by_word: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for (id, resp) in &self.rows {
            by_word.entry(*id).or_default().push(resp.as_str());
        }
        by_word
    }
}

pub fn load_cloze(path: &Path, words: &[Word], lenient: bool) -> Result<ClozeTable> {
    let known: HashSet<u32> = words.iter().map(|w| w.word_id).collect();
    let mut reader = TsvReader::open(path, &CLOZE_COLUMNS, lenient)?;
    let mut table = ClozeTable::default();
    reader.for_each(|row| {
        let id: u32 = row.get(0, "word_id")?;
        if !known.contains(&id) {
            return Err(row.error(format!("unknown word_id {id}")));
        }
        table.rows.push((id, row.str(1).to_string()));
        Ok(())
    })?;
    Ok(table)
}

pub fn write_cloze(path: &Path, table: &ClozeTable) -> Result<()> {
    let mut out = tsv::create(path)?;
    tsv::write_header(&mut out, &CLOZE_COLUMNS)?;
    for (id, resp) in &table.rows {
        writeln!(out, "{id}\t{resp}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedWord {
    pub word: Word,
    pub inv_length: f64,
    pub log_freq: f64,
    pub rel_pos_line: f64,
    pub rel_pos_sentence: f64,
    pub rel_pos_text: f64,
    pub len_freq_interaction: f64,
}

/// Decimal log of the per-million frequency, shifted by one so that unseen
/// words map to zero.
pub fn log_frequency(freq_per_million: f64) -> f64 {
    (freq_per_million + 1.0).log10()
}

fn relative_position(pos: u32, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        pos as f64 / (count - 1) as f64
    }
}

pub fn annotate_covariates(words: &[Word]) -> Vec<AnnotatedWord> {
    let mut counts: [HashMap<(u32, u32), usize>; 3] = Default::default();
    let units = [Unit::Line, Unit::Sentence, Unit::Text];
    for w in words {
        for (map, unit) in counts.iter_mut().zip(units) {
            *map.entry(unit.key(w)).or_default() += 1;
        }
    }
    words
        .iter()
        .map(|w| {
            let rel = |i: usize| relative_position(units[i].pos(w), counts[i][&units[i].key(w)]);
            let inv_length = 1.0 / w.length as f64;
            let log_freq = log_frequency(w.freq_per_million);
            AnnotatedWord {
                word: w.clone(),
                inv_length,
                log_freq,
                rel_pos_line: rel(0),
                rel_pos_sentence: rel(1),
                rel_pos_text: rel(2),
                len_freq_interaction: inv_length * log_freq,
            }
        })
        .collect()
}

pub const ANNOTATED_COLUMNS: [&str; 15] = [
    "word_id",
    "text_id",
    "sentence_idx",
    "line_idx",
    "pos_in_sentence",
    "pos_in_line",
    "pos_in_text",
    "surface",
    "freq_per_million",
    "inv_length",
    "log_freq",
    "rel_pos_line",
    "rel_pos_sentence",
    "rel_pos_text",
    "len_freq",
];

pub fn write_annotated(path: &Path, annotated: &[AnnotatedWord]) -> Result<()> {
    let mut out = tsv::create(path)?;
    tsv::write_header(&mut out, &ANNOTATED_COLUMNS)?;
    for a in annotated {
        let w = &a.word;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            w.word_id,
            w.text_id,
            w.sentence_idx,
            w.line_idx,
            w.pos_in_sentence,
            w.pos_in_line,
            w.pos_in_text,
            w.surface,
            w.freq_per_million,
            a.inv_length,
            a.log_freq,
            a.rel_pos_line,
            a.rel_pos_sentence,
            a.rel_pos_text,
            a.len_freq_interaction
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionPolicy {
    /// Drop fixations on the first and last word of each line.
    pub drop_line_edges: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLog {
    pub input_rows: usize,
    pub not_fixated: usize,
    pub line_edge: usize,
    pub missing_predictor: usize,
}

impl ExclusionLog {
    pub fn dropped(&self) -> usize {
        self.not_fixated + self.line_edge + self.missing_predictor
    }
}

/// Per-fixation rows in columnar form, sorted by (participant_id, word_id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDataset {
    pub keys: Vec<(u32, u32)>,
    /// Response, covariates, then one logit column per attached predictor.
    pub columns: Vec<(String, Vec<f64>)>,
    pub predictors: Vec<String>,
    pub exclusion_log: ExclusionLog,
}

pub fn assemble_dataset(
    annotated: &[AnnotatedWord],
    fixations: &FixationTable,
    predictors: &[PredictorColumn],
    policy: ExclusionPolicy,
) -> Result<AnalysisDataset> {
    let by_id: HashMap<u32, &AnnotatedWord> =
        annotated.iter().map(|a| (a.word.word_id, a)).collect();
    let mut names = HashSet::new();
    for p in predictors {
        if COVARIATES.contains(&p.source_name.as_str())
            || p.source_name == RESPONSE
            || !names.insert(p.source_name.as_str())
        {
            return Err(Error::Invalid(format!(
                "predictor name `{}` is reserved or repeated",
                p.source_name
            )));
        }
    }

    let mut log = ExclusionLog {
        input_rows: fixations.records.len() + fixations.rejected.len(),
        not_fixated: fixations.rejected.len(),
        ..Default::default()
    };
    let mut rows: Vec<&FixationRecord> = Vec::with_capacity(fixations.records.len());
    for rec in &fixations.records {
        let word = by_id
            .get(&rec.word_id)
            .ok_or(Error::UnknownWord(rec.word_id))?;
        if policy.drop_line_edges && (word.rel_pos_line == 0.0 || word.rel_pos_line == 1.0) {
            log.line_edge += 1;
            continue;
        }
        if predictors
            .iter()
            .any(|p| !p.logits.contains_key(&rec.word_id))
        {
            log.missing_predictor += 1;
            continue;
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rows.sort_by_key(|r| (r.participant_id, r.word_id));

    let word = |r: &FixationRecord| by_id[&r.word_id];
    type Extract<'a> = Box<dyn Fn(&FixationRecord) -> f64 + 'a>;
    let base: [(&str, Extract); 8] = [
        (RESPONSE, Box::new(|r| r.fprt_ms.ln())),
        ("saccade_distance", Box::new(|r| r.saccade_distance)),
        ("inv_length", Box::new(|r| word(r).inv_length)),
        ("log_freq", Box::new(|r| word(r).log_freq)),
        ("rel_pos_line", Box::new(|r| word(r).rel_pos_line)),
        ("rel_pos_text", Box::new(|r| word(r).rel_pos_text)),
        ("rel_pos_sentence", Box::new(|r| word(r).rel_pos_sentence)),
        ("len_freq", Box::new(|r| word(r).len_freq_interaction)),
    ];
    let mut columns: Vec<(String, Vec<f64>)> = base
        .iter()
        .map(|(name, f)| (name.to_string(), rows.iter().map(|r| f(r)).collect()))
        .collect();
    for p in predictors {
        columns.push((
            p.source_name.clone(),
            rows.iter().map(|r| p.logits[&r.word_id]).collect(),
        ));
    }
    Ok(AnalysisDataset {
        keys: rows.iter().map(|r| (r.participant_id, r.word_id)).collect(),
        columns,
        predictors: predictors.iter().map(|p| p.source_name.clone()).collect(),
        exclusion_log: log,
    })
}

impl AnalysisDataset {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Numeric column by name; the key columns are exposed as numbers too.
    pub fn column(&self, name: &str) -> Option<std::borrow::Cow<'_, [f64]>> {
        use std::borrow::Cow;
        match name {
            "participant_id" => Some(Cow::Owned(self.keys.iter().map(|k| k.0 as f64).collect())),
            "word_id" => Some(Cow::Owned(self.keys.iter().map(|k| k.1 as f64).collect())),
            _ => self
                .columns
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| Cow::Borrowed(v.as_slice())),
        }
    }

    /// Integer labels for a grouping factor (`participant_id` or `word_id`).
    pub fn grouping(&self, name: &str) -> Option<Vec<u32>> {
        match name {
            "participant_id" => Some(self.keys.iter().map(|k| k.0).collect()),
            "word_id" => Some(self.keys.iter().map(|k| k.1).collect()),
            _ => None,
        }
    }

    /// Digest of the sorted row keys and the covariate names. Two fits are
    /// comparable only if their datasets share this hash.
    pub fn spec_hash(&self) -> String {
        let mut keys = self.keys.clone();
        keys.sort_unstable();
        let mut h = Sha256::new();
        for (p, w) in &keys {
            h.update(p.to_le_bytes());
            h.update(w.to_le_bytes());
        }
        for name in COVARIATES {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// Keeps only rows whose keys satisfy `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(u32, u32) -> bool) -> AnalysisDataset {
        let mask: Vec<bool> = self.keys.iter().map(|&(p, w)| keep(p, w)).collect();
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(x, _)| *x)
                .collect()
        };
        AnalysisDataset {
            keys: self
                .keys
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(k, _)| *k)
                .collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), pick(v)))
                .collect(),
            predictors: self.predictors.clone(),
            exclusion_log: self.exclusion_log.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = tsv::create(path)?;
        let mut header = vec!["participant_id", "word_id"];
        header.extend(self.columns.iter().map(|(n, _)| n.as_str()));
        tsv::write_header(&mut out, &header)?;
        for (i, (p, w)) in self.keys.iter().enumerate() {
            write!(out, "{p}\t{w}")?;
            for (_, col) in &self.columns {
                write!(out, "\t{}", col[i])?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`AnalysisDataset::write`]. Columns beyond
    /// the response and the covariates are taken as predictor logits. The
    /// exclusion log is not stored in the file and comes back empty.
    pub fn load(path: &Path) -> Result<AnalysisDataset> {
        let header_line = std::fs::read_to_string(path)?
            .lines()
            .next()
            .unwrap_or("")
            .to_string();
        let names: Vec<String> = header_line
            .split('\t')
            .map(|s| s.trim().to_string())
            .collect();
        let required: Vec<&str> = ["participant_id", "word_id", RESPONSE]
            .into_iter()
            .chain(COVARIATES)
            .collect();
        for r in &required {
            if !names.iter().any(|n| n == r) {
                return Err(Error::MissingHeader {
                    path: path.to_path_buf(),
                    column: r.to_string(),
                });
            }
        }
        let value_names: Vec<&str> = names[..]
            .iter()
            .map(String::as_str)
            .filter(|n| *n != "participant_id" && *n != "word_id")
            .collect();
        let mut all: Vec<&str> = vec!["participant_id", "word_id"];
        all.extend(&value_names);
        let mut reader = TsvReader::open(path, &all, false)?;
        let mut keys = Vec::new();
        let mut columns: Vec<(String, Vec<f64>)> = value_names
            .iter()
            .map(|n| (n.to_string(), Vec::new()))
            .collect();
        reader.for_each(|row| {
            keys.push((row.get(0, "participant_id")?, row.get(1, "word_id")?));
            for (j, (name, col)) in columns.iter_mut().enumerate() {
                let v: f64 = row.get(j + 2, name)?;
                if !v.is_finite() {
                    return Err(row.error(format!("non-finite value in `{name}`")));
                }
                col.push(v);
            }
            Ok(())
        })?;
        if keys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let predictors = value_names
            .iter()
            .filter(|n| **n != RESPONSE && !COVARIATES.contains(n))
            .map(|n| n.to_string())
            .collect();
        Ok(AnalysisDataset {
            keys,
            columns,
            predictors,
            exclusion_log: ExclusionLog::default(),
        })
    }
}
