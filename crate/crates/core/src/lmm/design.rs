use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnalysisDataset, COVARIATES, RESPONSE};
use crate::error::{Error, Result};

/// Relative residual norm below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    /// Fixed-effect columns in order; the intercept is always added first.
    pub fixed_terms: Vec<String>,
    pub random_intercepts: Vec<String>,
}

impl ModelSpec {
    /// The covariate-only baseline model.
    pub fn baseline() -> Self {
        ModelSpec {
            response: RESPONSE.to_string(),
            fixed_terms: COVARIATES.iter().map(|s| s.to_string()).collect(),
            random_intercepts: vec!["participant_id".into(), "word_id".into()],
        }
    }

    pub fn with_term(mut self, term: &str) -> Self {
        self.fixed_terms.push(term.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub name: String,
    /// Level index of every row.
    pub levels: Vec<usize>,
    /// Original label of each level, sorted ascending.
    pub labels: Vec<u32>,
}

impl Grouping {
    pub fn from_labels(name: &str, row_labels: &[u32]) -> Self {
        let mut index: BTreeMap<u32, usize> = row_labels.iter().map(|&l| (l, 0)).collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        Grouping {
            name: name.to_string(),
            levels: row_labels.iter().map(|l| index[l]).collect(),
            labels: index.into_keys().collect(),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub groupings: Vec<Grouping>,
}

impl DesignMatrices {
    /// Validates shapes, levels and rank, then wraps the pieces.
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        column_names: Vec<String>,
        groupings: Vec<Grouping>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.nrows() != n || x.ncols() != column_names.len() || x.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "design has {} rows x {} columns for {} responses and {} names",
                x.nrows(),
                x.ncols(),
                n,
                column_names.len()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("design contains non-finite values".into()));
        }
        for g in &groupings {
            if g.levels.len() != n {
                return Err(Error::Invalid(format!(
                    "grouping `{}` has the wrong length",
                    g.name
                )));
            }
            if g.n_levels() < 2 {
                return Err(Error::TooFewLevels {
                    name: g.name.clone(),
                    levels: g.n_levels(),
                });
            }
        }
        check_rank(&x, &column_names)?;
        Ok(DesignMatrices {
            y,
            x,
            column_names,
            groupings,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.groupings.iter().map(Grouping::n_levels).sum()
    }

    /// Same random structure and fixed effects, different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        DesignMatrices::new(
            y,
            self.x.clone(),
            self.column_names.clone(),
            self.groupings.clone(),
        )
    }
}

/// Gram-Schmidt in declared column order (with one reorthogonalization pass);
/// the first column whose remainder is negligible relative to its own norm is
/// reported as dependent.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(x.ncols());
    for (j, name) in names.iter().enumerate() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::RankDeficient(name.clone()));
        }
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let rem = v.norm();
        if rem <= RANK_TOL * norm {
            return Err(Error::RankDeficient(name.clone()));
        }
        basis.push(v / rem);
    }
    Ok(())
}

pub fn build_design(dataset: &AnalysisDataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    let y = dataset
        .column(&spec.response)
        .ok_or_else(|| Error::MissingColumn(spec.response.clone()))?
        .into_owned();
    let n = y.len();
    let p = spec.fixed_terms.len() + 1;
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut names = vec!["(Intercept)".to_string()];
    for (j, term) in spec.fixed_terms.iter().enumerate() {
        let col = dataset
            .column(term)
            .ok_or_else(|| Error::MissingColumn(term.clone()))?;
        x.column_mut(j + 1).copy_from_slice(&col);
        names.push(term.clone());
    }
    let groupings = spec
        .random_intercepts
        .iter()
        .map(|g| {
            let labels = dataset
                .grouping(g)
                .ok_or_else(|| Error::MissingColumn(g.clone()))?;
            Ok(Grouping::from_labels(g, &labels))
        })
        .collect::<Result<Vec<_>>>()?;
    DesignMatrices::new(y, x, names, groupings)
}
