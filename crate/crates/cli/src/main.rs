use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use readpred::corpus::{
    annotate_covariates, assemble_dataset, load_cloze, load_fixations, load_words, write_annotated,
    write_cloze, write_fixations, write_words, AnalysisDataset, ExclusionPolicy, Word, RESPONSE,
};
use readpred::lmm::{FitResult, ModelSpec, OptimizerConfig};
use readpred::ngram::{read_corpus, train_ngram, NgramModel, Smoothing, Tokenizer, TrainConfig};
use readpred::pipeline::{
    compare, fit_model, remef_cloze, render_report, ComparisonReport, ReportTable,
};
use readpred::predictors::{
    compute_cloze_pred, import_lm_probs, MatchConfig, PredictorColumn, SmoothingConfig,
    SmoothingMode,
};
use readpred::sim::{simulate_study, SimConfig};
use readpred::Execution;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "readpred",
    version,
    about = "Word predictability and first-pass reading times"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for the simulation utilities.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Drop fixations on the first and last word of each line.
    #[arg(long, global = true)]
    exclude_line_edges: bool,
    /// How cloze proportions of 0 or 1 are kept finite.
    #[arg(long, global = true, value_enum, default_value_t = SmoothingArg::EmpiricalLogit)]
    smoothing: SmoothingArg,
    /// Probabilities are clamped into [eps, 1 - eps] before the logit.
    #[arg(long, global = true, default_value_t = 1e-8)]
    clamp_eps: f64,
    /// Ignore unknown columns in input tables.
    #[arg(long, global = true)]
    lenient: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothingArg {
    EmpiricalLogit,
    Clamp,
}

impl Global {
    fn smoothing(&self) -> Result<SmoothingConfig> {
        let mode = match self.smoothing {
            SmoothingArg::EmpiricalLogit => SmoothingMode::EmpiricalLogit,
            SmoothingArg::Clamp => SmoothingMode::Clamp,
        };
        Ok(SmoothingConfig::new(mode, self.clamp_eps)?)
    }

    fn policy(&self) -> ExclusionPolicy {
        ExclusionPolicy {
            drop_line_edges: self.exclude_line_edges,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Add the word-level covariates to a words table.
    Annotate {
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn cloze responses into a predictability file.
    Cloze {
        #[arg(long)]
        words: PathBuf,
        /// word_id, response table.
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare responses case-sensitively.
        #[arg(long)]
        keep_case: bool,
        /// Keep leading and trailing punctuation when matching.
        #[arg(long)]
        keep_punctuation: bool,
    },
    /// Train or apply an n-gram model.
    Ngram {
        #[command(subcommand)]
        command: NgramCommand,
    },
    /// Validate and clamp an external preds.tsv.
    ImportProbs {
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join words, fixations and predictors into an analysis dataset.
    Assemble {
        #[command(flatten)]
        inputs: StudyInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one mixed model on an assembled dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// Model spec as JSON; defaults to the covariate baseline.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Predictor column added to the baseline (repeatable).
        #[arg(long = "predictor")]
        predictors: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
    },
    /// Baseline against one model per predictor; writes <out>.json/.tsv/.md.
    Compare {
        #[command(flatten)]
        inputs: StudyInputs,
        #[arg(long)]
        out: PathBuf,
        /// Fit the models one after another.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        optimizer: OptimizerArgs,
    },
    /// Cloze t-value on the residuals of a saved fit.
    Remef {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "cloze")]
        cloze_column: String,
    },
    /// Render a saved report as markdown or TSV.
    Report {
        /// A report .json or table .tsv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic study (words, fixations, cloze responses).
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        participants: usize,
        #[arg(long, default_value_t = 200)]
        words: usize,
        #[arg(long, default_value_t = 100)]
        words_per_participant: usize,
    },
}

#[derive(Subcommand)]
enum NgramCommand {
    /// Count n-grams in a plain-text corpus (blank lines separate texts).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, value_enum, default_value_t = Method::Interpolated)]
        method: Method,
        /// Constant for add-k.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Interpolation weight, one for every order above 1 or a single value for all.
        #[arg(long = "lambda", value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Map training words seen once to <unk>.
        #[arg(long)]
        unk_singletons: bool,
        /// Keep punctuation attached to words.
        #[arg(long)]
        no_split_punctuation: bool,
    },
    /// Score every word of a words table.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_split_punctuation: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mle,
    AddK,
    Interpolated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Tsv,
}

#[derive(Args)]
struct OptimizerArgs {
    /// Deviance evaluations per simplex run.
    #[arg(long, default_value_t = 500)]
    max_evals: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_evals: self.max_evals,
            restarts: self.restarts,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Args)]
struct StudyInputs {
    #[arg(long)]
    words: PathBuf,
    #[arg(long)]
    fixations: PathBuf,
    /// Cloze responses (word_id, response).
    #[arg(long)]
    cloze: PathBuf,
    /// Extra predictor as NAME=preds.tsv (repeatable).
    #[arg(long = "pred", value_parser = parse_pred)]
    preds: Vec<(String, PathBuf)>,
}

fn parse_pred(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

impl StudyInputs {
    fn load(&self, g: &Global) -> Result<(Vec<Word>, AnalysisDataset)> {
        let smoothing = g.smoothing()?;
        let words = load_words(&self.words, g.lenient)?;
        let fixations = load_fixations(&self.fixations, &words, g.lenient)?;
        let responses = load_cloze(&self.cloze, &words, g.lenient)?;
        let mut columns = vec![compute_cloze_pred(
            &responses,
            &words,
            &MatchConfig::default(),
            &smoothing,
        )?];
        for (name, path) in &self.preds {
            columns.push(import_lm_probs(path, name, &words, &smoothing, g.lenient)?);
        }
        let ds = assemble_dataset(
            &annotate_covariates(&words),
            &fixations,
            &columns,
            g.policy(),
        )?;
        let log = &ds.exclusion_log;
        info!(
            "{} rows kept of {} ({} not fixated, {} line edges, {} missing predictor)",
            ds.len(),
            log.input_rows,
            log.not_fixated,
            log.line_edge,
            log.missing_predictor
        );
        Ok((words, ds))
    }
}

fn write_preds(col: &PredictorColumn, out: &Path) -> Result<()> {
    col.write(out)?;
    eprintln!(
        "{}: {} words, coverage {:.3}",
        col.source_name,
        col.len(),
        col.coverage
    );
    Ok(())
}

fn print_fit(fit: &FitResult) {
    println!(
        "{:<20} {:>12} {:>12} {:>9}",
        "term", "estimate", "std.error", "t"
    );
    for c in &fit.coefficients {
        println!(
            "{:<20} {:>12.6} {:>12.6} {:>9.2}",
            c.name, c.estimate, c.std_error, c.t_value
        );
    }
    for r in &fit.random_effects {
        println!(
            "{:<20} levels {:>6}  variance {:.6}",
            r.name, r.levels, r.variance
        );
    }
    println!(
        "residual variance {:.6}; deviance {:.3}; AIC {:.3}; n {}",
        fit.sigma2, fit.deviance, fit.aic, fit.n
    );
}

fn tokenizer(no_split_punctuation: bool) -> Tokenizer {
    Tokenizer {
        split_punctuation: !no_split_punctuation,
        ..Tokenizer::default()
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match cli.command {
        Command::Annotate { words, out } => {
            let words = load_words(&words, g.lenient)?;
            write_annotated(&out, &annotate_covariates(&words))?;
        }
        Command::Cloze {
            words,
            responses,
            out,
            keep_case,
            keep_punctuation,
        } => {
            let words = load_words(&words, g.lenient)?;
            let table = load_cloze(&responses, &words, g.lenient)?;
            let matcher = MatchConfig {
                lowercase: !keep_case,
                strip_punctuation: !keep_punctuation,
                ..MatchConfig::default()
            };
            write_preds(
                &compute_cloze_pred(&table, &words, &matcher, &g.smoothing()?)?,
                &out,
            )?;
        }
        Command::Ngram { command } => match command {
            NgramCommand::Train {
                corpus,
                out,
                order,
                method,
                k,
                lambdas,
                unk_singletons,
                no_split_punctuation,
            } => {
                let smoothing = match method {
                    Method::Mle => Smoothing::Mle,
                    Method::AddK => Smoothing::AddK(k),
                    Method::Interpolated => match lambdas.as_slice() {
                        [] => Smoothing::default_for(order),
                        [l] => Smoothing::Interpolated(vec![*l; order.saturating_sub(1)]),
                        many => Smoothing::Interpolated(many.to_vec()),
                    },
                };
                let texts = read_corpus(&corpus, &tokenizer(no_split_punctuation))?;
                let model = train_ngram(
                    &texts,
                    &TrainConfig {
                        order,
                        smoothing,
                        singletons_to_unk: unk_singletons,
                    },
                )?;
                model.save(&out)?;
                eprintln!(
                    "{} texts, {} tokens, vocabulary {}",
                    texts.len(),
                    texts.iter().map(Vec::len).sum::<usize>(),
                    model.vocab_size()
                );
            }
            NgramCommand::Score {
                model,
                words,
                out,
                no_split_punctuation,
            } => {
                let model = NgramModel::load(&model)?;
                let words = load_words(&words, g.lenient)?;
                let name = format!("ngram-{}", model.order());
                let col = model.score_corpus(
                    &words,
                    &tokenizer(no_split_punctuation),
                    &name,
                    &g.smoothing()?,
                )?;
                write_preds(&col, &out)?;
            }
        },
        Command::ImportProbs {
            words,
            preds,
            name,
            out,
        } => {
            let words = load_words(&words, g.lenient)?;
            write_preds(
                &import_lm_probs(&preds, &name, &words, &g.smoothing()?, g.lenient)?,
                &out,
            )?;
        }
        Command::Assemble { inputs, out } => {
            let (_, ds) = inputs.load(g)?;
            ds.write(&out)?;
            eprintln!(
                "{} rows; predictors: {}",
                ds.len(),
                ds.predictors.join(", ")
            );
        }
        Command::Fit {
            dataset,
            spec,
            predictors,
            out,
            optimizer,
        } => {
            let ds = AnalysisDataset::load(&dataset)?;
            let mut spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(readpred::Error::from)?
                }
                None => ModelSpec::baseline(),
            };
            for p in &predictors {
                spec = spec.with_term(p);
            }
            let (fit, _) = fit_model(&ds, &spec, &optimizer.config())?;
            std::fs::write(&out, fit.to_json()?)?;
            print_fit(&fit);
            if !fit.converged {
                warn!(
                    "optimizer did not converge; results written to {}",
                    out.display()
                );
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
        Command::Compare {
            inputs,
            out,
            sequential,
            optimizer,
        } => {
            let (_, ds) = inputs.load(g)?;
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let report = compare(&ds, &ds.predictors, "cloze", &optimizer.config(), exec)?;
            render_report(&report, &out)?;
            print!("{}", report.table()?.to_markdown());
            if !report.all_converged() {
                warn!("at least one model did not converge");
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
        Command::Remef {
            fit,
            dataset,
            cloze_column,
        } => {
            let saved = FitResult::from_json(&std::fs::read_to_string(&fit)?)?;
            let ds = AnalysisDataset::load(&dataset)?;
            let hash = ds.spec_hash();
            if saved.dataset_hash.as_deref().is_some_and(|h| h != hash) {
                return Err(readpred::Error::DatasetMismatch(
                    saved.dataset_hash.clone().unwrap_or_default(),
                    hash,
                )
                .into());
            }
            let spec = ModelSpec {
                response: RESPONSE.to_string(),
                fixed_terms: saved
                    .coefficients
                    .iter()
                    .skip(1)
                    .map(|c| c.name.clone())
                    .collect(),
                random_intercepts: saved
                    .random_effects
                    .iter()
                    .map(|r| r.name.clone())
                    .collect(),
            };
            let design = readpred::lmm::build_design(&ds, &spec)?;
            let cloze = ds
                .column(&cloze_column)
                .ok_or_else(|| readpred::Error::MissingColumn(cloze_column.clone()))?;
            println!(
                "{:.4}",
                remef_cloze(&saved, &design, &cloze, &OptimizerConfig::default())?
            );
        }
        Command::Report { input, format, out } => {
            let text = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let table = if input.extension().is_some_and(|e| e == "json") {
                let report: ComparisonReport =
                    serde_json::from_str(&text).map_err(readpred::Error::from)?;
                report.table()?
            } else {
                ReportTable::from_tsv(&text)?
            };
            let rendered = match format {
                Format::Markdown => table.to_markdown(),
                Format::Tsv => table.to_tsv(),
            };
            match out {
                Some(p) => std::fs::write(p, rendered)?,
                None => print!("{rendered}"),
            }
        }
        Command::Simulate {
            out_dir,
            participants,
            words,
            words_per_participant,
        } => {
            if words_per_participant > words {
                bail!(readpred::Error::Invalid(format!(
                    "words per participant ({words_per_participant}) exceeds corpus size ({words})"
                )));
            }
            let cfg = SimConfig {
                participants,
                words,
                words_per_participant,
                ..SimConfig::default()
            };
            let study = simulate_study(&cfg, g.seed)?;
            std::fs::create_dir_all(&out_dir)?;
            write_words(&out_dir.join("words.tsv"), &study.words)?;
            write_fixations(&out_dir.join("fixations.tsv"), &study.fixations.records)?;
            write_cloze(&out_dir.join("cloze.tsv"), &study.cloze_table)?;
            eprintln!(
                "{} fixations over {} words in {}",
                study.fixations.records.len(),
                study.words.len(),
                out_dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<readpred::Error>()
                .is_some_and(|e| e.is_validation());
            ExitCode::from(if validation { EXIT_VALIDATION } else { 1 })
        }
    }
}
