//! Synthetic reading studies: a word corpus, crossed participant x word
//! fixations with known effects, and simulated cloze responses.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::corpus::{
    annotate_covariates, assemble_dataset, AnalysisDataset, ClozeTable, ExclusionPolicy,
    FixationRecord, FixationTable, Word,
};
use crate::error::Result;
use crate::predictors::{
    compute_cloze_pred, logistic, MatchConfig, PredictorColumn, SmoothingConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub participants: usize,
    pub words: usize,
    /// Words each participant fixates in first pass.
    pub words_per_participant: usize,
    pub texts: usize,
    pub words_per_line: usize,
    pub intercept: f64,
    /// Effects on log FPRT, in `corpus::COVARIATES` order.
    pub covariate_effects: [f64; 7],
    /// Effect of one unit of cloze logit on log FPRT.
    pub cloze_effect: f64,
    pub sd_participant: f64,
    pub sd_word: f64,
    pub sd_residual: f64,
    pub cloze_responses: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            participants: 50,
            words: 200,
            words_per_participant: 100,
            texts: 4,
            words_per_line: 10,
            intercept: 5.4,
            covariate_effects: [0.01, -0.25, -0.04, 0.03, -0.03, -0.04, 0.1],
            cloze_effect: -0.04,
            sd_participant: 0.12,
            sd_word: 0.05,
            sd_residual: 0.3,
            cloze_responses: 13,
        }
    }
}

impl SimConfig {
    /// Random intercepts and noise only; no fixed effect besides the intercept.
    pub fn null() -> Self {
        SimConfig {
            covariate_effects: [0.0; 7],
            cloze_effect: 0.0,
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    pub words: Vec<Word>,
    pub fixations: FixationTable,
    pub cloze_table: ClozeTable,
    pub cloze: PredictorColumn,
}

const LETTERS: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's', 't',
    'u', 'v', 'y', 'z', 'á', 'é', 'í', 'ñ', 'ó', 'ú',
];

fn synth_words(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Word> {
    let noise = Normal::new(0.0, 0.7).unwrap();
    let per_text = cfg.words.div_ceil(cfg.texts.max(1));
    let mut words = Vec::with_capacity(cfg.words);
    let mut id = 0u32;
    for text in 0..cfg.texts.max(1) {
        let count = per_text.min(cfg.words - words.len());
        let mut sentence = 0u32;
        let mut pos_in_sentence = 0u32;
        let mut sentence_len = rng.random_range(4..=14);
        for pos in 0..count {
            let len: usize = (1 + rng.random_range(0..5) + rng.random_range(0..6)).min(12);
            let surface: String = (0..len)
                .map(|_| LETTERS[rng.random_range(0..LETTERS.len())])
                .collect();
            let log_freq = (4.0 - 0.3 * len as f64 + noise.sample(rng)).max(0.0);
            let freq = 10f64.powf(log_freq) - 1.0;
            let line = pos / cfg.words_per_line;
            words.push(Word::new(
                id,
                text as u32 + 1,
                sentence,
                line as u32,
                pos_in_sentence,
                (pos % cfg.words_per_line) as u32,
                pos as u32,
                &surface,
                freq.max(0.0),
            ));
            id += 1;
            pos_in_sentence += 1;
            if pos_in_sentence == sentence_len {
                sentence += 1;
                pos_in_sentence = 0;
                sentence_len = rng.random_range(4..=14);
            }
        }
    }
    words
}

/// Draws a complete study from `cfg` with a fixed seed.
pub fn simulate_study(cfg: &SimConfig, seed: u64) -> Result<SimulatedStudy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = synth_words(cfg, &mut rng);
    let annotated = annotate_covariates(&words);

    // Latent predictability, loosely tied to frequency; responses are
    // binomial draws of the target word.
    let latent_noise = Normal::new(0.0, 1.2).unwrap();
    let mut cloze_table = ClozeTable::default();
    for a in &annotated {
        let p = logistic(-1.8 + 0.35 * a.log_freq + latent_noise.sample(&mut rng));
        let k = Binomial::new(cfg.cloze_responses as u64, p)
            .unwrap()
            .sample(&mut rng) as usize;
        for i in 0..cfg.cloze_responses {
            let resp = if i < k {
                a.word.surface.clone()
            } else {
                format!("{}x", a.word.surface)
            };
            cloze_table.rows.push((a.word.word_id, resp));
        }
    }
    let cloze = compute_cloze_pred(
        &cloze_table,
        &words,
        &MatchConfig::default(),
        &SmoothingConfig::default(),
    )?;

    let z = Normal::new(0.0, 1.0).unwrap();
    let word_re: Vec<f64> = (0..words.len())
        .map(|_| cfg.sd_word * z.sample(&mut rng))
        .collect();
    let part_re: Vec<f64> = (0..cfg.participants)
        .map(|_| cfg.sd_participant * z.sample(&mut rng))
        .collect();
    let mut records = Vec::with_capacity(cfg.participants * cfg.words_per_participant);
    for (pid, &b_p) in part_re.iter().enumerate() {
        let mut chosen = sample(
            &mut rng,
            words.len(),
            cfg.words_per_participant.min(words.len()),
        )
        .into_vec();
        chosen.sort_unstable();
        for wi in chosen {
            let a = &annotated[wi];
            let saccade = (7.0 + 3.0 * z.sample(&mut rng)).clamp(1.0, 25.0);
            let x = [
                saccade,
                a.inv_length,
                a.log_freq,
                a.rel_pos_line,
                a.rel_pos_text,
                a.rel_pos_sentence,
                a.len_freq_interaction,
            ];
            let fixed: f64 = cfg.intercept
                + x.iter()
                    .zip(&cfg.covariate_effects)
                    .map(|(v, b)| v * b)
                    .sum::<f64>()
                + cfg.cloze_effect * cloze.logits[&a.word.word_id];
            let log_fprt = fixed + b_p + word_re[wi] + cfg.sd_residual * z.sample(&mut rng);
            records.push(FixationRecord {
                participant_id: pid as u32 + 1,
                word_id: a.word.word_id,
                fprt_ms: log_fprt.exp(),
                saccade_distance: saccade,
            });
        }
    }
    let fixations = FixationTable::from_records(records, &words)?;
    Ok(SimulatedStudy {
        words,
        fixations,
        cloze_table,
        cloze,
    })
}

impl SimulatedStudy {
    pub fn dataset(&self, predictors: &[PredictorColumn]) -> Result<AnalysisDataset> {
        let annotated = annotate_covariates(&self.words);
        let mut all = vec![self.cloze.clone()];
        all.extend(predictors.iter().cloned());
        assemble_dataset(
            &annotated,
            &self.fixations,
            &all,
            ExclusionPolicy::default(),
        )
    }
}

/// A predictor whose logit is `column`'s logit plus independent N(0, sd) noise.
pub fn noisy_copy(
    column: &PredictorColumn,
    sd: f64,
    seed: u64,
    name: &str,
) -> Result<PredictorColumn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, sd).unwrap();
    let values: BTreeMap<u32, f64> = column
        .logits
        .iter()
        .map(|(&id, &l)| (id, logistic(l + z.sample(&mut rng)).clamp(1e-8, 1.0 - 1e-8)))
        .collect();
    let corpus =
        (column.values.len() as f64 / column.coverage.max(f64::MIN_POSITIVE)).round() as usize;
    PredictorColumn::from_probs(name, values, corpus)
}

/// A predictor unrelated to anything in the study.
pub fn noise_column(words: &[Word], seed: u64, name: &str) -> Result<PredictorColumn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.5).unwrap();
    let values = words
        .iter()
        .map(|w| (w.word_id, logistic(z.sample(&mut rng))))
        .collect();
    PredictorColumn::from_probs(name, values, words.len())
}
