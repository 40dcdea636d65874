//! Gaussian additive models: intercept plus centered smooth terms, fitted
//! by penalized least squares with GCV or REML smoothing-parameter
//! selection.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, DesignBlock};
use crate::data::Dataset;

pub mod pls;
pub mod search;

pub use pls::{criterion_score, edf_per_term, gcv_from_parts, penalized_solve, PenalizedLs, Penalty};
pub use search::{golden_section, search_lambdas, LambdaSearch, SearchConfig};

pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FitError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("column '{0}' contains a non-finite value")]
    NonFinite(String),
    #[error("at least {MIN_OBSERVATIONS} observations required, got {0}")]
    TooFewObservations(usize),
    #[error("model needs at least one smooth term")]
    NoTerms,
    #[error("covariate '{0}' is used by more than one term")]
    DuplicateCovariate(String),
    #[error("unidentifiable model")]
    Unidentifiable,
    #[error("effective degrees of freedom exhausts data")]
    EdfExhaustsData,
    #[error("invalid smoothing parameter {0}")]
    InvalidLambda(f64),
    #[error("criterion is non-finite at every grid point")]
    NoFiniteCriterion,
    #[error("term index {0} out of range")]
    NoSuchTerm(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Gcv,
    Reml,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Gcv => "gcv",
            Criterion::Reml => "reml",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcv" => Ok(Criterion::Gcv),
            "reml" => Ok(Criterion::Reml),
            other => Err(format!("unknown criterion '{other}' (expected gcv or reml)")),
        }
    }
}

/// `y = intercept + sum_j f_j(x_j) + e`, Gaussian errors, identity link.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<BasisSpec>,
    pub criterion: Criterion,
}

impl ModelSpec {
    pub fn new(response: impl Into<String>, terms: Vec<BasisSpec>, criterion: Criterion) -> Self {
        Self {
            response: response.into(),
            terms,
            criterion,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.terms.is_empty() {
            return Err(FitError::NoTerms);
        }
        let mut seen: Vec<&str> = Vec::new();
        for term in &self.terms {
            term.validate()?;
            for c in &term.covariates {
                if seen.contains(&c.as_str()) {
                    return Err(FitError::DuplicateCovariate(c.clone()));
                }
                seen.push(c);
            }
        }
        Ok(())
    }

    /// Copy with each term's `k` replaced.
    pub fn with_ks(&self, ks: &[usize]) -> Self {
        let terms = self
            .terms
            .iter()
            .zip(ks)
            .map(|(t, &k)| t.with_k(k))
            .collect();
        Self {
            terms,
            ..self.clone()
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.k).collect()
    }
}

/// Full model matrix with its penalties.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub penalties: Vec<Penalty>,
    pub blocks: Vec<DesignBlock>,
    /// Column range of each term in `x`.
    pub ranges: Vec<Range<usize>>,
}

fn column<'a>(data: &'a Dataset, name: &str) -> Result<&'a [f64], FitError> {
    let col = data
        .column(name)
        .ok_or_else(|| FitError::MissingColumn(name.to_string()))?;
    if col.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite(name.to_string()));
    }
    Ok(col)
}

fn term_columns<'a>(data: &'a Dataset, term: &BasisSpec) -> Result<Vec<&'a [f64]>, FitError> {
    term.covariates.iter().map(|c| column(data, c)).collect()
}

/// Intercept column followed by each centered term block.
pub fn assemble_design(spec: &ModelSpec, data: &Dataset) -> Result<Design, FitError> {
    spec.validate()?;
    let n = data.n_rows();
    if n < MIN_OBSERVATIONS {
        return Err(FitError::TooFewObservations(n));
    }
    let blocks = spec
        .terms
        .iter()
        .map(|t| Ok(DesignBlock::build(t, &term_columns(data, t)?)?))
        .collect::<Result<Vec<_>, FitError>>()?;

    let p = 1 + blocks.iter().map(DesignBlock::ncols).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut ranges = Vec::with_capacity(blocks.len());
    let mut penalties = Vec::with_capacity(blocks.len());
    let mut at = 1;
    for b in &blocks {
        let w = b.ncols();
        x.columns_mut(at, w).copy_from(&b.x);
        penalties.push(Penalty::with_null_dim(at, b.s.clone(), b.null_dim));
        ranges.push(at..at + w);
        at += w;
    }
    Ok(Design {
        x,
        penalties,
        blocks,
        ranges,
    })
}

fn response(spec: &ModelSpec, data: &Dataset) -> Result<DVector<f64>, FitError> {
    Ok(DVector::from_column_slice(column(data, &spec.response)?))
}

/// Criterion-minimizing smoothing parameters for `spec` on `data`.
pub fn optimize_lambdas(spec: &ModelSpec, data: &Dataset, kind: Criterion) -> Result<Vec<f64>, FitError> {
    let design = assemble_design(spec, data)?;
    let pls = PenalizedLs::new(&design.x, &design.penalties, &response(spec, data)?)?;
    Ok(search_lambdas(&pls, kind, &SearchConfig::default())?.lambdas)
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Intercept followed by the term blocks.
    pub beta: DVector<f64>,
    pub lambda: Vec<f64>,
    pub edf_per_term: Vec<f64>,
    /// Total EDF including the intercept.
    pub trace_a: f64,
    pub mu: DVector<f64>,
    pub residuals: DVector<f64>,
    pub phi_hat: f64,
    pub criterion_value: f64,
    pub blocks: Vec<DesignBlock>,
    pub ranges: Vec<Range<usize>>,
    /// The data the model was fitted to, kept for diagnostics.
    pub data: Dataset,
    pub search: Option<LambdaSearch>,
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn n_terms(&self) -> usize {
        self.blocks.len()
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }

    /// The covariate columns of one term, in the term's covariate order.
    pub fn term_covariates(&self, term: usize) -> Result<Vec<&[f64]>, FitError> {
        let spec = self.spec.terms.get(term).ok_or(FitError::NoSuchTerm(term))?;
        term_columns(&self.data, spec)
    }

    pub fn term_coefficients(&self, term: usize) -> Result<DVector<f64>, FitError> {
        let range = self.ranges.get(term).ok_or(FitError::NoSuchTerm(term))?;
        Ok(self.beta.rows(range.start, range.len()).into_owned())
    }
}

fn finish_fit(
    spec: &ModelSpec,
    data: &Dataset,
    design: Design,
    pls: &PenalizedLs,
    lambdas: Vec<f64>,
    search: Option<LambdaSearch>,
) -> Result<FittedModel, FitError> {
    let sol = pls.solve(&lambdas)?;
    let criterion_value = pls.score(spec.criterion, &sol, &lambdas)?;
    let diag = pls.edf_diagonal(&sol)?;
    let edf_per_term = design
        .ranges
        .iter()
        .map(|r| diag.rows(r.start, r.len()).sum())
        .collect();
    let y = response(spec, data)?;
    let mu = &design.x * &sol.beta;
    let residuals = &y - &mu;
    let n = y.len();
    let dof = n as f64 - sol.trace;
    if dof <= 0.0 {
        return Err(FitError::EdfExhaustsData);
    }
    let phi_hat = residuals.norm_squared() / dof;
    Ok(FittedModel {
        spec: spec.clone(),
        beta: sol.beta,
        lambda: lambdas,
        edf_per_term,
        trace_a: sol.trace,
        mu,
        residuals,
        phi_hat,
        criterion_value,
        blocks: design.blocks,
        ranges: design.ranges,
        data: data.clone(),
        search,
    })
}

/// Fits `spec` to `data`, choosing smoothing parameters by `spec.criterion`.
pub fn fit(spec: &ModelSpec, data: &Dataset) -> Result<FittedModel, FitError> {
    fit_with_config(spec, data, &SearchConfig::default())
}

pub fn fit_with_config(spec: &ModelSpec, data: &Dataset, config: &SearchConfig) -> Result<FittedModel, FitError> {
    let design = assemble_design(spec, data)?;
    let pls = PenalizedLs::new(&design.x, &design.penalties, &response(spec, data)?)?;
    let search = search_lambdas(&pls, spec.criterion, config)?;
    let lambdas = search.lambdas.clone();
    finish_fit(spec, data, design, &pls, lambdas, Some(search))
}

/// Fits with the smoothing parameters held at `lambdas`.
pub fn fit_with_lambdas(spec: &ModelSpec, data: &Dataset, lambdas: &[f64]) -> Result<FittedModel, FitError> {
    let design = assemble_design(spec, data)?;
    let pls = PenalizedLs::new(&design.x, &design.penalties, &response(spec, data)?)?;
    finish_fit(spec, data, design, &pls, lambdas.to_vec(), None)
}

/// `f_j` at new covariate values. Single-term models include the intercept
/// so the result is on the response scale.
pub fn evaluate_term(model: &FittedModel, term: usize, points: &[&[f64]]) -> Result<Vec<f64>, FitError> {
    let block = model.blocks.get(term).ok_or(FitError::NoSuchTerm(term))?;
    let xp = block.predict_matrix(points)?;
    let coef = model.term_coefficients(term)?;
    let offset = if model.n_terms() == 1 { model.beta[0] } else { 0.0 };
    Ok((xp * coef).iter().map(|v| v + offset).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn sine_data(n: usize, seed: u64) -> Dataset {
        let x = grid(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let y = x
            .iter()
            .map(|v| (2.0 * std::f64::consts::PI * v).sin() + noise.sample(&mut rng))
            .collect();
        Dataset::new()
            .with_column("x", x)
            .unwrap()
            .with_column("y", y)
            .unwrap()
    }

    #[test]
    fn design_column_counts() {
        let d = sine_data(100, 1)
            .with_column("z", grid(100).iter().map(|v| v * v).collect())
            .unwrap();
        let one = ModelSpec::new("y", vec![BasisSpec::univariate("x", 10)], Criterion::Gcv);
        assert_eq!(assemble_design(&one, &d).unwrap().x.ncols(), 10);
        let two = ModelSpec::new(
            "y",
            vec![BasisSpec::univariate("x", 10), BasisSpec::univariate("z", 10)],
            Criterion::Gcv,
        );
        let design = assemble_design(&two, &d).unwrap();
        assert_eq!(design.x.ncols(), 19);
        assert_eq!(design.ranges, vec![1..10, 10..19]);
    }

    #[test]
    fn tensor_design_column_count() {
        let a: Vec<f64> = (0..400).map(|i| (i / 20) as f64 / 19.0 * 4.0 - 1.0).collect();
        let b: Vec<f64> = (0..400).map(|i| (i % 20) as f64 / 19.0).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
        let d = Dataset::new()
            .with_column("x1", a)
            .unwrap()
            .with_column("x2", b)
            .unwrap()
            .with_column("y", y)
            .unwrap();
        let spec = ModelSpec::new("y", vec![BasisSpec::tensor("x1", "x2", 15)], Criterion::Reml);
        assert_eq!(assemble_design(&spec, &d).unwrap().x.ncols(), 15);
    }

    #[test]
    fn input_errors() {
        let d = sine_data(100, 1);
        let spec = ModelSpec::new("y", vec![BasisSpec::univariate("w", 10)], Criterion::Gcv);
        assert_eq!(assemble_design(&spec, &d).unwrap_err(), FitError::MissingColumn("w".into()));
        let small = sine_data(9, 1);
        let spec = ModelSpec::new("y", vec![BasisSpec::univariate("x", 5)], Criterion::Gcv);
        assert_eq!(assemble_design(&spec, &small).unwrap_err(), FitError::TooFewObservations(9));
        let dup = ModelSpec::new(
            "y",
            vec![BasisSpec::univariate("x", 5), BasisSpec::univariate("x", 6)],
            Criterion::Gcv,
        );
        assert!(matches!(dup.validate(), Err(FitError::DuplicateCovariate(_))));
        assert_eq!(
            ModelSpec::new("y", vec![], Criterion::Gcv).validate(),
            Err(FitError::NoTerms)
        );
    }

    #[test]
    fn linear_data_is_reproduced_and_smoothest() {
        let x = grid(50);
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let d = Dataset::new()
            .with_column("x", x)
            .unwrap()
            .with_column("y", y)
            .unwrap();
        for criterion in [Criterion::Gcv, Criterion::Reml] {
            let spec = ModelSpec::new("y", vec![BasisSpec::univariate("x", 12)], criterion);
            let m = fit(&spec, &d).unwrap();
            assert!(m.residuals.amax() < 1e-6, "{criterion}");
            assert!((m.lambda[0].log10() - 8.0).abs() < 0.5, "{criterion}: {:?}", m.lambda);
            assert!((m.edf_per_term[0] - 1.0).abs() < 0.05, "{:?}", m.edf_per_term);
            for lambda in [1e-4, 1.0, 1e4] {
                let m = fit_with_lambdas(&spec, &d, &[lambda]).unwrap();
                assert!(m.residuals.amax() < 1e-8);
            }
        }
    }

    #[test]
    fn fitted_model_invariants() {
        let d = sine_data(120, 7);
        for criterion in [Criterion::Gcv, Criterion::Reml] {
            let spec = ModelSpec::new("y", vec![BasisSpec::univariate("x", 15)], criterion);
            let m = fit(&spec, &d).unwrap();
            let total: f64 = 1.0 + m.edf_per_term.iter().sum::<f64>();
            assert!((m.trace_a - total).abs() < 1e-8);
            assert!(m.edf_per_term[0] >= 1.0 - 1e-8 && m.edf_per_term[0] <= 14.0 + 1e-8);
            assert!((m.phi_hat - m.rss() / (120.0 - m.trace_a)).abs() < 1e-10);
            let f = evaluate_term(&m, 0, &[d.column("x").unwrap()]).unwrap();
            for (a, b) in f.iter().zip(m.mu.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn large_lambda_leaves_a_line() {
        let d = sine_data(100, 3);
        let spec = ModelSpec::new("y", vec![BasisSpec::univariate("x", 20)], Criterion::Gcv);
        let design = assemble_design(&spec, &d).unwrap();
        let (edf, trace) = edf_per_term(&design.x, &design.penalties, &[1e10]).unwrap();
        assert!((edf[0] - 1.0).abs() < 0.01);
        assert!((trace - 2.0).abs() < 0.01);
        let (edf0, trace0) = edf_per_term(&design.x, &design.penalties, &[0.0]).unwrap();
        assert!((trace0 - 20.0).abs() < 1e-8);
        assert!((edf0[0] - 19.0).abs() < 1e-8);
    }

    #[test]
    fn multi_term_estimates_are_centered() {
        let n = 150;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = rand_distr::Uniform::new(0.0, 1.0);
        let x1: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let y: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .map(|(a, b)| a * a + (6.0 * b).sin() + 0.1 * u.sample(&mut rng))
            .collect();
        let d = Dataset::new()
            .with_column("x1", x1.clone())
            .unwrap()
            .with_column("x2", x2.clone())
            .unwrap()
            .with_column("y", y)
            .unwrap();
        let spec = ModelSpec::new(
            "y",
            vec![BasisSpec::univariate("x1", 10), BasisSpec::univariate("x2", 10)],
            Criterion::Reml,
        );
        let m = fit(&spec, &d).unwrap();
        let f1 = evaluate_term(&m, 0, &[&x1]).unwrap();
        let f2 = evaluate_term(&m, 1, &[&x2]).unwrap();
        assert!(f1.iter().sum::<f64>().abs() < 1e-10);
        assert!(f2.iter().sum::<f64>().abs() < 1e-10);
        // Explicit product of basis rows and coefficients.
        let xb = m.blocks[1].predict_matrix(&[&x2]).unwrap();
        let coef = m.term_coefficients(1).unwrap();
        for i in 0..n {
            let direct: f64 = (0..coef.len()).map(|j| xb[(i, j)] * coef[j]).sum();
            assert!((direct - f2[i]).abs() < 1e-12);
        }
        assert!(evaluate_term(&m, 2, &[&x2]).is_err());
        assert!(evaluate_term(&m, 0, &[&[2.0]]).is_err());
    }

    #[test]
    fn permuted_response_keeps_design_bitwise() {
        let d = sine_data(80, 5);
        let spec = ModelSpec::new("y", vec![BasisSpec::univariate("x", 10)], Criterion::Reml);
        let before = assemble_design(&spec, &d).unwrap();
        let mut permuted = d.clone();
        let mut y = d.column("y").unwrap().to_vec();
        y.reverse();
        permuted.set_column("y", y).unwrap();
        let after = assemble_design(&spec, &permuted).unwrap();
        assert_eq!(before.x, after.x);
        assert_eq!(before.penalties[0].matrix, after.penalties[0].matrix);
        let m1 = fit(&spec, &d).unwrap();
        let m2 = fit(&spec, &permuted).unwrap();
        assert_ne!(m1.beta, m2.beta);
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("GCV".parse::<Criterion>().unwrap(), Criterion::Gcv);
        assert_eq!("reml".parse::<Criterion>().unwrap(), Criterion::Reml);
        assert!("aic".parse::<Criterion>().is_err());
    }
}
