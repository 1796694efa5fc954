//! The model-comparison experiment: a covariate baseline, one model per
//! predictability source, AIC differences against the baseline, and the
//! cloze-on-residuals ("remef") check of how much cloze variance each
//! model leaves unexplained.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnalysisDataset, ExclusionLog, COVARIATES};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lmm::{
    build_design, fit_lmm, remove_fixed_effects, DesignMatrices, FitResult, ModelSpec,
    OptimizerConfig,
};

pub const BASELINE_LABEL: &str = "baseline";

/// Row labels used in rendered tables, aligned with [`COVARIATES`].
pub const COVARIATE_LABELS: [&str; 7] = [
    "Saccadic Dist.",
    "Length (inv)",
    "Frequency (log)",
    "Rel pos line",
    "Rel pos text",
    "Rel pos sntc",
    "Len:Freq",
];
pub const PRED_LABEL: &str = "Pred (logit)";
pub const DELTA_AIC_LABEL: &str = "ΔAIC";
pub const REMEF_LABEL: &str = "Cloze-Remef";

/// Fits `spec` on `dataset` and stamps the result with the dataset hash.
pub fn fit_model(
    dataset: &AnalysisDataset,
    spec: &ModelSpec,
    config: &OptimizerConfig,
) -> Result<(FitResult, DesignMatrices)> {
    let design = build_design(dataset, spec)?;
    let mut fit = fit_lmm(&design, config)?;
    fit.dataset_hash = Some(dataset.spec_hash());
    Ok((fit, design))
}

pub fn run_baseline(dataset: &AnalysisDataset, config: &OptimizerConfig) -> Result<FitResult> {
    Ok(fit_model(dataset, &ModelSpec::baseline(), config)?.0)
}

/// Baseline plus the logit column `predictor`.
pub fn run_with_predictor(
    dataset: &AnalysisDataset,
    predictor: &str,
    config: &OptimizerConfig,
) -> Result<FitResult> {
    Ok(fit_model(dataset, &ModelSpec::baseline().with_term(predictor), config)?.0)
}

pub fn delta_aic(fit: &FitResult, baseline: &FitResult) -> Result<f64> {
    match (&fit.dataset_hash, &baseline.dataset_hash) {
        (Some(a), Some(b)) if a == b => Ok(fit.aic - baseline.aic),
        (a, b) => Err(Error::DatasetMismatch(
            a.clone().unwrap_or_else(|| "unknown".into()),
            b.clone().unwrap_or_else(|| "unknown".into()),
        )),
    }
}

/// Removes the fitted fixed effects from the response and refits it on an
/// intercept plus `cloze_logits` under the same random intercepts. Returns
/// the cloze t-value.
pub fn remef_cloze(
    fit: &FitResult,
    design: &DesignMatrices,
    cloze_logits: &[f64],
    config: &OptimizerConfig,
) -> Result<f64> {
    if cloze_logits.len() != design.n() {
        return Err(Error::Invalid(format!(
            "cloze column has {} rows, design has {}",
            cloze_logits.len(),
            design.n()
        )));
    }
    let residual = remove_fixed_effects(fit, design)?;
    let mut x = DMatrix::from_element(design.n(), 2, 1.0);
    x.column_mut(1).copy_from_slice(cloze_logits);
    let remef = DesignMatrices::new(
        residual,
        x,
        vec!["(Intercept)".into(), "cloze".into()],
        design.groupings.clone(),
    )?;
    let refit = fit_lmm(&remef, config)?;
    Ok(refit.coefficients[1].t_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub label: String,
    pub predictor: Option<String>,
    /// t-values aligned with [`ComparisonReport::covariates`].
    pub covariate_t: Vec<f64>,
    pub pred_t: Option<f64>,
    pub delta_aic: f64,
    pub cloze_remef_t: f64,
    pub aic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub n_rows: usize,
    pub participants: usize,
    pub words: usize,
    pub exclusion_log: ExclusionLog,
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub covariates: Vec<String>,
    pub models: Vec<ModelColumn>,
    pub metadata: ReportMetadata,
}

/// Fits the baseline and one model per predictor column (all on the same
/// rows), then computes AIC differences and the cloze remef t for each.
pub fn compare(
    dataset: &AnalysisDataset,
    predictors: &[String],
    cloze: &str,
    config: &OptimizerConfig,
    exec: Execution,
) -> Result<ComparisonReport> {
    let cloze_logits = dataset
        .column(cloze)
        .ok_or_else(|| Error::MissingColumn(cloze.to_string()))?
        .into_owned();
    let mut specs: Vec<(String, Option<String>)> = vec![(BASELINE_LABEL.to_string(), None)];
    specs.extend(predictors.iter().map(|p| (p.clone(), Some(p.clone()))));

    let fitted = exec.map(&specs, |(_, pred)| -> Result<(FitResult, f64)> {
        let spec = match pred {
            Some(p) => ModelSpec::baseline().with_term(p),
            None => ModelSpec::baseline(),
        };
        let (fit, design) = fit_model(dataset, &spec, config)?;
        let remef = remef_cloze(&fit, &design, &cloze_logits, config)?;
        Ok((fit, remef))
    });
    let fitted = fitted.into_iter().collect::<Result<Vec<_>>>()?;

    let baseline = &fitted[0].0;
    let mut models = Vec::with_capacity(fitted.len());
    for ((label, pred), (fit, remef)) in specs.into_iter().zip(&fitted) {
        let covariate_t = COVARIATES
            .iter()
            .map(|c| {
                fit.coefficient(c)
                    .map(|k| k.t_value)
                    .ok_or_else(|| Error::MissingColumn(c.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let pred_t = pred
            .as_deref()
            .and_then(|p| fit.coefficient(p))
            .map(|c| c.t_value);
        models.push(ModelColumn {
            label,
            predictor: pred,
            covariate_t,
            pred_t,
            delta_aic: delta_aic(fit, baseline)?,
            cloze_remef_t: *remef,
            aic: fit.aic,
            converged: fit.converged,
        });
    }
    let distinct = |f: fn(&(u32, u32)) -> u32| {
        dataset
            .keys
            .iter()
            .map(f)
            .collect::<std::collections::HashSet<_>>()
            .len()
    };
    Ok(ComparisonReport {
        covariates: COVARIATES.iter().map(|s| s.to_string()).collect(),
        models,
        metadata: ReportMetadata {
            n_rows: dataset.len(),
            participants: distinct(|k| k.0),
            words: distinct(|k| k.1),
            exclusion_log: dataset.exclusion_log.clone(),
            spec_hash: dataset.spec_hash(),
        },
    })
}

impl ComparisonReport {
    pub fn all_converged(&self) -> bool {
        self.models.iter().all(|m| m.converged)
    }

    /// The display table: t-values at two decimals, ΔAIC as an integer.
    pub fn table(&self) -> Result<ReportTable> {
        if self.models.is_empty() {
            return Err(Error::Invalid("a report needs at least one model".into()));
        }
        let t2 = |x: f64| round_to(x, 2);
        let mut rows = Vec::new();
        for (i, label) in COVARIATE_LABELS.iter().enumerate() {
            rows.push((
                label.to_string(),
                self.models
                    .iter()
                    .map(|m| Some(t2(m.covariate_t[i])))
                    .collect(),
            ));
        }
        rows.push((
            PRED_LABEL.into(),
            self.models.iter().map(|m| m.pred_t.map(t2)).collect(),
        ));
        rows.push((
            DELTA_AIC_LABEL.into(),
            self.models
                .iter()
                .map(|m| Some(round_to(m.delta_aic, 0)))
                .collect(),
        ));
        rows.push((
            REMEF_LABEL.into(),
            self.models
                .iter()
                .map(|m| Some(t2(m.cloze_remef_t)))
                .collect(),
        ));
        Ok(ReportTable {
            models: self.models.iter().map(|m| m.label.clone()).collect(),
            rows,
        })
    }
}

fn round_to(x: f64, decimals: usize) -> f64 {
    format!("{x:.decimals$}").parse().unwrap_or(x)
}

fn decimals_for(row: &str) -> usize {
    if row == DELTA_AIC_LABEL {
        0
    } else {
        2
    }
}

/// The rendered form of a report: one row per covariate plus the predictor,
/// ΔAIC and remef rows; `None` marks a cell that does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub models: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ReportTable {
    fn cell(row: &str, v: Option<f64>) -> String {
        match v {
            Some(x) => format!("{x:.prec$}", prec = decimals_for(row)),
            None => "--".to_string(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "covariate\t{}", self.models.join("\t"));
        for (label, values) in &self.rows {
            let cells: Vec<String> = values.iter().map(|v| Self::cell(label, *v)).collect();
            let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Co-variable | {} |", self.models.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(self.models.len()));
        for (label, values) in &self.rows {
            let cells: Vec<String> = values.iter().map(|v| Self::cell(label, *v)).collect();
            let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty report".into()))?;
        let mut head = header.split('\t');
        if head.next() != Some("covariate") {
            return Err(Error::Invalid(
                "report header must start with `covariate`".into(),
            ));
        }
        let models: Vec<String> = head.map(String::from).collect();
        if models.is_empty() {
            return Err(Error::Invalid("a report needs at least one model".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let mut f = line.split('\t');
            let label = f.next().unwrap_or_default().to_string();
            let values = f
                .map(|c| match c.trim() {
                    "--" => Ok(None),
                    s => s.parse::<f64>().map(Some).map_err(|_| {
                        Error::Invalid(format!("bad report cell `{s}` in row `{label}`"))
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != models.len() {
                return Err(Error::Invalid(format!(
                    "row `{label}` has {} cells",
                    values.len()
                )));
            }
            rows.push((label, values));
        }
        Ok(ReportTable { models, rows })
    }
}

/// Writes `<stem>.json`, `<stem>.tsv` and `<stem>.md`.
pub fn render_report(report: &ComparisonReport, stem: &Path) -> Result<()> {
    let table = report.table()?;
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(stem.with_extension("tsv"), table.to_tsv())?;
    std::fs::write(stem.with_extension("md"), table.to_markdown())?;
    Ok(())
}
