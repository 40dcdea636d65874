//! Basis-dimension selection.
//!
//! Two doubling drivers wrap the per-term checks: fit, check every term,
//! double `k` for the flagged ones, refit once, repeat. A grid search refits
//! the whole model for every combination of candidate dimensions and keeps
//! the criterion minimizer.

use rayon::prelude::*;
use thiserror::Error;

use crate::basis::DesignBlock;
use crate::data::Dataset;
use crate::diagnostics::{
    kappa_test, resmooth_check, DiagnosticsError, KappaConfig, KappaResult, ResmoothConfig,
    ResmoothResult, DEFAULT_ALPHA,
};
use crate::fit::{fit, Criterion, FitError, FittedModel, ModelSpec};
use crate::seed::derive_seed;

pub const DEFAULT_MAX_DOUBLINGS: usize = 3;
/// A refit that improves the criterion by no more than this fraction of its
/// previous value stops further doubling.
pub const DEFAULT_STALL_FRACTION: f64 = 0.02;
pub const DEFAULT_UNIVARIATE_K: usize = 10;
pub const DEFAULT_TENSOR_K: usize = 15;
pub const UNIVARIATE_GRID: [usize; 4] = [10, 20, 40, 80];
pub const TENSOR_GRID: [usize; 4] = [15, 30, 60, 120];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KSelectError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("grid for term {0} is empty")]
    EmptyGrid(usize),
    #[error("expected {expected} grids, got {found}")]
    GridCount { expected: usize, found: usize },
    #[error("every grid point failed to fit")]
    AllInfeasible,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Kappa,
    Resmooth,
    GcvGrid,
    RemlGrid,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kappa, Method::Resmooth, Method::GcvGrid, Method::RemlGrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kappa => "kappa",
            Method::Resmooth => "resmooth",
            Method::GcvGrid => "gcv-grid",
            Method::RemlGrid => "reml-grid",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kappa" => Ok(Method::Kappa),
            "resmooth" => Ok(Method::Resmooth),
            "gcv" | "gcv-grid" => Ok(Method::GcvGrid),
            "reml" | "reml-grid" => Ok(Method::RemlGrid),
            other => Err(format!(
                "unknown method '{other}' (expected kappa, resmooth, gcv or reml)"
            )),
        }
    }
}

/// Per-term check run by a doubling driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Kappa,
    Resmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    Kappa(KappaResult),
    Resmooth(ResmoothResult),
}

impl CheckOutcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            CheckOutcome::Kappa(k) => Some(k.p_value),
            CheckOutcome::Resmooth(_) => None,
        }
    }

    pub fn edf_star(&self) -> Option<f64> {
        match self {
            CheckOutcome::Kappa(_) => None,
            CheckOutcome::Resmooth(r) => Some(r.edf_star),
        }
    }
}

/// Why a term stopped changing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    CheckPassed,
    /// The refit after doubling improved the criterion by 2% or less.
    CriterionStalled,
    MaxDoublings,
    /// The doubled basis could not be built on the data.
    BasisInfeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Pass,
    Double,
    Stop(StopRule),
    /// Term already stopped in an earlier round.
    Settled,
    /// Grid point fitted.
    Feasible,
    /// Grid point failed to fit.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KStep {
    pub ks: Vec<usize>,
    /// Criterion of the fit at `ks`; `None` for infeasible grid points.
    pub criterion: Option<f64>,
    pub checks: Vec<Option<CheckOutcome>>,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone)]
pub struct KSearchTrace {
    pub method: Method,
    pub steps: Vec<KStep>,
    pub final_k: Vec<usize>,
    pub final_model: FittedModel,
    pub refit_count: usize,
    /// Doubling drivers only.
    pub stop_rules: Vec<Option<StopRule>>,
    /// Most recent check of each term (doubling drivers only).
    pub final_checks: Vec<Option<CheckOutcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingConfig {
    pub check: Check,
    pub alpha: f64,
    pub max_doublings: usize,
    pub seed: u64,
    pub perms: usize,
    pub neighbours: usize,
    pub resmooth: ResmoothConfig,
    pub stall_fraction: f64,
}

impl DoublingConfig {
    pub fn new(check: Check) -> Self {
        let kappa = KappaConfig::default();
        Self {
            check,
            alpha: DEFAULT_ALPHA,
            max_doublings: DEFAULT_MAX_DOUBLINGS,
            seed: 0,
            perms: kappa.perms,
            neighbours: kappa.neighbours,
            resmooth: ResmoothConfig::default(),
            stall_fraction: DEFAULT_STALL_FRACTION,
        }
    }
}

fn run_check(
    model: &FittedModel,
    term: usize,
    round: usize,
    config: &DoublingConfig,
) -> Result<(CheckOutcome, bool), KSelectError> {
    Ok(match config.check {
        Check::Kappa => {
            let kc = KappaConfig {
                perms: config.perms,
                neighbours: config.neighbours,
                seed: derive_seed(config.seed, &[round as u64, term as u64]),
            };
            let res = kappa_test(model, term, &kc)?;
            let flagged = res.p_value < config.alpha;
            (CheckOutcome::Kappa(res), flagged)
        }
        Check::Resmooth => {
            let res = resmooth_check(model, term, &config.resmooth)?;
            let flagged = res.flagged;
            (CheckOutcome::Resmooth(res), flagged)
        }
    })
}

fn basis_feasible(spec: &ModelSpec, data: &Dataset, term: usize, k: usize) -> bool {
    let t = spec.terms[term].with_k(k);
    let cols: Option<Vec<&[f64]>> = t.covariates.iter().map(|c| data.column(c)).collect();
    cols.is_some_and(|cols| DesignBlock::build(&t, &cols).is_ok())
}

/// Whether the criterion moved from `before` to `after` by too little to
/// justify further doubling.
fn stalled(before: f64, after: f64, fraction: f64) -> bool {
    after >= before || before - after <= fraction * before.abs()
}

/// Fit at the initial dimensions, then double flagged terms round by round.
pub fn doubling_driver(
    spec: &ModelSpec,
    data: &Dataset,
    config: &DoublingConfig,
) -> Result<KSearchTrace, KSelectError> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(KSelectError::InvalidAlpha(config.alpha));
    }
    let method = match config.check {
        Check::Kappa => Method::Kappa,
        Check::Resmooth => Method::Resmooth,
    };
    let n_terms = spec.terms.len();
    let mut current = spec.clone();
    let mut model = fit(&current, data)?;
    let mut refit_count = 1;
    let mut doublings = vec![0usize; n_terms];
    let mut stop_rules: Vec<Option<StopRule>> = vec![None; n_terms];
    let mut final_checks: Vec<Option<CheckOutcome>> = vec![None; n_terms];
    let mut steps = Vec::new();

    for round in 0.. {
        let mut checks = vec![None; n_terms];
        let mut decisions = vec![Decision::Settled; n_terms];
        let mut to_double = Vec::new();
        for j in 0..n_terms {
            if stop_rules[j].is_some() {
                continue;
            }
            let (outcome, flagged) = run_check(&model, j, round, config)?;
            checks[j] = Some(outcome.clone());
            final_checks[j] = Some(outcome);
            decisions[j] = if !flagged {
                stop_rules[j] = Some(StopRule::CheckPassed);
                Decision::Pass
            } else if doublings[j] >= config.max_doublings {
                stop_rules[j] = Some(StopRule::MaxDoublings);
                Decision::Stop(StopRule::MaxDoublings)
            } else if !basis_feasible(&current, data, j, current.terms[j].k * 2) {
                stop_rules[j] = Some(StopRule::BasisInfeasible);
                Decision::Stop(StopRule::BasisInfeasible)
            } else {
                to_double.push(j);
                Decision::Double
            };
        }
        let criterion_before = model.criterion_value;
        let ks = current.ks();
        if to_double.is_empty() {
            steps.push(KStep {
                ks,
                criterion: Some(criterion_before),
                checks,
                decisions,
            });
            break;
        }

        for &j in &to_double {
            current.terms[j].k *= 2;
            doublings[j] += 1;
        }
        let refit = fit(&current, data)?;
        refit_count += 1;
        let after = refit.criterion_value;
        if stalled(criterion_before, after, config.stall_fraction) {
            for &j in &to_double {
                stop_rules[j] = Some(StopRule::CriterionStalled);
            }
        }
        for check in checks.iter_mut().flatten() {
            if let CheckOutcome::Resmooth(r) = check {
                r.criterion_after = Some(after);
                r.criterion_drop_fraction = Some((criterion_before - after) / criterion_before.abs());
            }
        }
        steps.push(KStep {
            ks,
            criterion: Some(criterion_before),
            checks,
            decisions,
        });
        model = refit;
    }

    Ok(KSearchTrace {
        method,
        steps,
        final_k: current.ks(),
        final_model: model,
        refit_count,
        stop_rules,
        final_checks,
    })
}

fn cartesian(grids: &[Vec<usize>]) -> Vec<Vec<usize>> {
    grids.iter().fold(vec![Vec::new()], |acc, grid| {
        acc.into_iter()
            .flat_map(|prefix| {
                grid.iter().map(move |&k| {
                    let mut next = prefix.clone();
                    next.push(k);
                    next
                })
            })
            .collect()
    })
}

/// Refit at every combination of per-term dimensions and keep the one with
/// the lowest criterion; exact ties go to the smallest total `k`.
pub fn grid_search(
    spec: &ModelSpec,
    data: &Dataset,
    grids: &[Vec<usize>],
    kind: Criterion,
) -> Result<KSearchTrace, KSelectError> {
    if grids.len() != spec.terms.len() {
        return Err(KSelectError::GridCount {
            expected: spec.terms.len(),
            found: grids.len(),
        });
    }
    if let Some(j) = grids.iter().position(Vec::is_empty) {
        return Err(KSelectError::EmptyGrid(j));
    }
    let base = ModelSpec {
        criterion: kind,
        ..spec.clone()
    };
    let combos = cartesian(grids);
    let fits: Vec<Result<FittedModel, FitError>> = combos
        .par_iter()
        .map(|ks| fit(&base.with_ks(ks), data))
        .collect();

    let mut best: Option<usize> = None;
    let mut steps = Vec::with_capacity(combos.len());
    for (i, (ks, result)) in combos.iter().zip(&fits).enumerate() {
        let criterion = result.as_ref().ok().map(|m| m.criterion_value);
        let decision = if criterion.is_some() {
            Decision::Feasible
        } else {
            Decision::Infeasible
        };
        steps.push(KStep {
            ks: ks.clone(),
            criterion,
            checks: vec![None; ks.len()],
            decisions: vec![decision; ks.len()],
        });
        if let Some(c) = criterion {
            let better = match best {
                None => true,
                Some(b) => {
                    let cb = steps[b].criterion.unwrap_or(f64::INFINITY);
                    let total = |v: &[usize]| v.iter().sum::<usize>();
                    c < cb || (c == cb && total(ks) < total(&combos[b]))
                }
            };
            if better {
                best = Some(i);
            }
        }
    }
    let best = best.ok_or(KSelectError::AllInfeasible)?;
    let final_model = fits
        .into_iter()
        .nth(best)
        .and_then(Result::ok)
        .ok_or(KSelectError::AllInfeasible)?;
    Ok(KSearchTrace {
        method: match kind {
            Criterion::Gcv => Method::GcvGrid,
            Criterion::Reml => Method::RemlGrid,
        },
        steps,
        final_k: combos[best].clone(),
        final_model,
        refit_count: combos.len(),
        stop_rules: vec![None; spec.terms.len()],
        final_checks: vec![None; spec.terms.len()],
    })
}
