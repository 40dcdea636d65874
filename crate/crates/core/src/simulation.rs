//! Simulation scenarios for comparing the basis-dimension selection methods:
//! three univariate test functions, a bivariate surface and a two-term
//! additive model, all with Gaussian noise.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::diagnostics::{ResmoothConfig, DEFAULT_ALPHA, DEFAULT_NEIGHBOURS, DEFAULT_PERMUTATIONS};
use crate::fit::{Criterion, FittedModel, ModelSpec};
use crate::kselect::{
    doubling_driver, grid_search, Check, DoublingConfig, KSearchTrace, KSelectError, Method,
    DEFAULT_MAX_DOUBLINGS, DEFAULT_STALL_FRACTION, DEFAULT_TENSOR_K, DEFAULT_UNIVARIATE_K,
    TENSOR_GRID, UNIVARIATE_GRID,
};
use crate::seed::derive_seed;

pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_REPLICATES: usize = 50;
/// Fraction of failed rows above which an experiment is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimulationError {
    #[error("unknown scenario '{0}' (expected uni-f1, uni-f2, uni-f3, bivariate or additive)")]
    UnknownScenario(String),
    #[error("point {point:?} outside the domain of scenario {scenario}")]
    OutOfDomain { scenario: ScenarioId, point: Vec<f64> },
    #[error("{scenario} expects {expected} coordinates, got {found}")]
    Arity {
        scenario: ScenarioId,
        expected: usize,
        found: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{failed} of {total} replicate runs failed")]
    TooManyFailures { failed: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    UniF1,
    UniF2,
    UniF3,
    Bivariate,
    Additive,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::UniF1,
        ScenarioId::UniF2,
        ScenarioId::UniF3,
        ScenarioId::Bivariate,
        ScenarioId::Additive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::UniF1 => "uni-f1",
            ScenarioId::UniF2 => "uni-f2",
            ScenarioId::UniF3 => "uni-f3",
            ScenarioId::Bivariate => "bivariate",
            ScenarioId::Additive => "additive",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            ScenarioId::UniF1 | ScenarioId::UniF2 | ScenarioId::UniF3 => 1,
            ScenarioId::Bivariate | ScenarioId::Additive => 2,
        }
    }

    fn domain(self) -> &'static [(f64, f64)] {
        match self {
            ScenarioId::UniF1 | ScenarioId::UniF2 | ScenarioId::UniF3 => &[(0.0, 1.0)],
            ScenarioId::Bivariate => &[(-1.0, 3.0), (0.0, 1.0)],
            ScenarioId::Additive => &[(0.0, 1.0), (0.0, 1.0)],
        }
    }

    pub fn n_terms(self) -> usize {
        match self {
            ScenarioId::Additive => 2,
            _ => 1,
        }
    }

    /// Sample sizes used by the reference study.
    pub fn reference_sizes(self) -> [usize; 2] {
        match self {
            ScenarioId::UniF1 | ScenarioId::UniF2 | ScenarioId::UniF3 => [100, 200],
            ScenarioId::Bivariate => [400, 900],
            ScenarioId::Additive => [200, 400],
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SimulationError::UnknownScenario(s.to_string()))
    }
}

/// Monotone sigmoid.
pub fn f1(x: f64) -> f64 {
    1.0 / (1.0 + (-20.0 * (x - 0.5)).exp())
}

/// Line plus a narrow bump.
pub fn f2(x: f64) -> f64 {
    x + 2.0 * (-64.0 * (x - 0.5).powi(2)).exp()
}

/// Six full sine cycles on [0, 1].
pub fn f3(x: f64) -> f64 {
    (12.0 * PI * x).sin()
}

pub fn bivariate_surface(x1: f64, x2: f64) -> f64 {
    0.5 * x1 + (PI * x2).sin() * (-(x1 - 1.0).powi(2)).exp()
}

/// One sine cycle on [0, 1].
pub fn single_cycle(x: f64) -> f64 {
    (2.0 * PI * x).sin()
}

/// True mean function of a scenario at one covariate point.
pub fn test_function(id: ScenarioId, point: &[f64]) -> Result<f64, SimulationError> {
    if point.len() != id.arity() {
        return Err(SimulationError::Arity {
            scenario: id,
            expected: id.arity(),
            found: point.len(),
        });
    }
    let inside = point
        .iter()
        .zip(id.domain())
        .all(|(&v, &(lo, hi))| v >= lo && v <= hi);
    if !inside {
        return Err(SimulationError::OutOfDomain {
            scenario: id,
            point: point.to_vec(),
        });
    }
    Ok(match id {
        ScenarioId::UniF1 => f1(point[0]),
        ScenarioId::UniF2 => f2(point[0]),
        ScenarioId::UniF3 => f3(point[0]),
        ScenarioId::Bivariate => bivariate_surface(point[0], point[1]),
        ScenarioId::Additive => f1(point[0]) + single_cycle(point[1]),
    })
}

/// How each selection method is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct KPolicy {
    /// Starting dimension for the doubling drivers; scenario default if `None`.
    pub initial_k: Option<usize>,
    /// Grid for the grid searches; scenario default if `None`.
    pub grid: Option<Vec<usize>>,
    pub max_doublings: usize,
    pub alpha: f64,
    pub perms: usize,
    pub neighbours: usize,
    pub resmooth_threshold: f64,
    pub stall_fraction: f64,
    /// Smoothing criterion of the doubling drivers' fits.
    pub criterion: Criterion,
}

impl Default for KPolicy {
    fn default() -> Self {
        Self {
            initial_k: None,
            grid: None,
            max_doublings: DEFAULT_MAX_DOUBLINGS,
            alpha: DEFAULT_ALPHA,
            perms: DEFAULT_PERMUTATIONS,
            neighbours: DEFAULT_NEIGHBOURS,
            resmooth_threshold: ResmoothConfig::default().threshold,
            stall_fraction: DEFAULT_STALL_FRACTION,
            criterion: Criterion::Gcv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub n: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub policy: KPolicy,
    pub base_seed: u64,
}

impl Scenario {
    pub fn new(id: ScenarioId, n: usize) -> Self {
        Self {
            id,
            n,
            sigma: DEFAULT_SIGMA,
            replicates: DEFAULT_REPLICATES,
            methods: Method::ALL.to_vec(),
            policy: KPolicy::default(),
            base_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n < 10 {
            return Err(SimulationError::InvalidScenario(format!(
                "n = {} is below the minimum of 10",
                self.n
            )));
        }
        if self.id == ScenarioId::Bivariate {
            let side = (self.n as f64).sqrt().round() as usize;
            if side * side != self.n {
                return Err(SimulationError::InvalidScenario(format!(
                    "bivariate n must be a perfect square, got {}",
                    self.n
                )));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SimulationError::InvalidScenario(format!("sigma = {}", self.sigma)));
        }
        if self.methods.is_empty() {
            return Err(SimulationError::InvalidScenario("no methods selected".into()));
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.base_seed, &[replicate as u64])
    }

    pub fn initial_k(&self) -> usize {
        self.policy.initial_k.unwrap_or(match self.id {
            ScenarioId::Bivariate => DEFAULT_TENSOR_K,
            _ => DEFAULT_UNIVARIATE_K,
        })
    }

    pub fn grid(&self) -> Vec<usize> {
        self.policy.grid.clone().unwrap_or_else(|| match self.id {
            ScenarioId::Bivariate => TENSOR_GRID.to_vec(),
            _ => UNIVARIATE_GRID.to_vec(),
        })
    }

    /// Model specification at the initial dimension.
    pub fn model_spec(&self, criterion: Criterion) -> ModelSpec {
        let k = self.initial_k();
        let terms = match self.id {
            ScenarioId::UniF1 | ScenarioId::UniF2 | ScenarioId::UniF3 => {
                vec![BasisSpec::univariate("x", k)]
            }
            ScenarioId::Bivariate => vec![BasisSpec::tensor("x1", "x2", k)],
            ScenarioId::Additive => vec![BasisSpec::univariate("x1", k), BasisSpec::univariate("x2", k)],
        };
        ModelSpec::new("y", terms, criterion)
    }
}

/// One simulated dataset with the noise-free truth alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub data: Dataset,
    pub truth: Vec<f64>,
    pub seed: u64,
}

/// Data for one replicate; a pure function of `(base_seed, replicate)`.
pub fn gen_data(scenario: &Scenario, replicate: usize) -> Result<SimData, SimulationError> {
    scenario.validate()?;
    let n = scenario.n;
    let seed = scenario.replicate_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = |m: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    };
    let covariates: Vec<(&str, Vec<f64>)> = match scenario.id {
        ScenarioId::UniF1 | ScenarioId::UniF2 | ScenarioId::UniF3 => vec![("x", grid(n, 0.0, 1.0))],
        ScenarioId::Bivariate => {
            let side = (n as f64).sqrt().round() as usize;
            let g1 = grid(side, -1.0, 3.0);
            let g2 = grid(side, 0.0, 1.0);
            let x1 = (0..n).map(|i| g1[i / side]).collect();
            let x2 = (0..n).map(|i| g2[i % side]).collect();
            vec![("x1", x1), ("x2", x2)]
        }
        ScenarioId::Additive => {
            let x1 = (0..n).map(|_| rng.gen::<f64>()).collect();
            let x2 = (0..n).map(|_| rng.gen::<f64>()).collect();
            vec![("x1", x1), ("x2", x2)]
        }
    };
    let truth = (0..n)
        .map(|i| {
            let point: Vec<f64> = covariates.iter().map(|(_, c)| c[i]).collect();
            test_function(scenario.id, &point)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let y = truth
        .iter()
        .map(|f| {
            let z: f64 = rng.sample(StandardNormal);
            f + scenario.sigma * z
        })
        .collect();

    let mut data = Dataset::new();
    for (name, col) in covariates {
        data.push_column(name, col)
            .map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
    }
    data.push_column("y", y)
        .map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
    Ok(SimData { data, truth, seed })
}

/// Mean squared difference between fitted values and truth. For the additive
/// scenario the mean difference is removed first, so an offset in the
/// intercept does not count.
pub fn mse_from_fitted(id: ScenarioId, fitted: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let diff: Vec<f64> = fitted.iter().zip(truth).map(|(a, b)| a - b).collect();
    let shift = match id {
        ScenarioId::Additive => diff.iter().sum::<f64>() / n,
        _ => 0.0,
    };
    diff.iter().map(|d| (d - shift).powi(2)).sum::<f64>() / n
}

pub fn mse(model: &FittedModel, scenario: &Scenario, sim: &SimData) -> f64 {
    mse_from_fitted(scenario.id, model.mu.as_slice(), &sim.truth)
}

/// One `(replicate, method)` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRow {
    pub scenario: ScenarioId,
    pub n: usize,
    pub replicate: usize,
    pub method: Method,
    pub k_selected: Vec<usize>,
    pub mse: Option<f64>,
    /// Final κ p-value per term (kappa method only).
    pub p_values: Vec<Option<f64>>,
    /// Final re-smoothing EDF per term (resmooth method only).
    pub edf_star: Vec<Option<f64>>,
    pub refits: usize,
    pub seed: u64,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub rows: Vec<ScenarioRow>,
}

impl ScenarioResult {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ScenarioRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Runs one selection method on one dataset.
pub fn run_method(
    scenario: &Scenario,
    method: Method,
    data: &Dataset,
    seed: u64,
) -> Result<KSearchTrace, KSelectError> {
    let policy = &scenario.policy;
    match method {
        Method::Kappa | Method::Resmooth => {
            let check = if method == Method::Kappa {
                Check::Kappa
            } else {
                Check::Resmooth
            };
            let config = DoublingConfig {
                check,
                alpha: policy.alpha,
                max_doublings: policy.max_doublings,
                seed,
                perms: policy.perms,
                neighbours: policy.neighbours,
                resmooth: ResmoothConfig {
                    threshold: policy.resmooth_threshold,
                },
                stall_fraction: policy.stall_fraction,
            };
            doubling_driver(&scenario.model_spec(policy.criterion), data, &config)
        }
        Method::GcvGrid | Method::RemlGrid => {
            let kind = if method == Method::GcvGrid {
                Criterion::Gcv
            } else {
                Criterion::Reml
            };
            let grids = vec![scenario.grid(); scenario.id.n_terms()];
            grid_search(&scenario.model_spec(kind), data, &grids, kind)
        }
    }
}

fn run_replicate(scenario: &Scenario, replicate: usize) -> Vec<ScenarioRow> {
    let seed = scenario.replicate_seed(replicate);
    let n_terms = scenario.id.n_terms();
    let failed = |method: Method, error: String| ScenarioRow {
        scenario: scenario.id,
        n: scenario.n,
        replicate,
        method,
        k_selected: vec![],
        mse: None,
        p_values: vec![None; n_terms],
        edf_star: vec![None; n_terms],
        refits: 0,
        seed,
        elapsed_ms: 0.0,
        error: Some(error),
    };
    let sim = match gen_data(scenario, replicate) {
        Ok(sim) => sim,
        Err(e) => {
            return scenario
                .methods
                .iter()
                .map(|&m| failed(m, e.to_string()))
                .collect()
        }
    };
    scenario
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            match run_method(scenario, method, &sim.data, seed) {
                Ok(trace) => ScenarioRow {
                    scenario: scenario.id,
                    n: scenario.n,
                    replicate,
                    method,
                    k_selected: trace.final_k.clone(),
                    mse: Some(mse(&trace.final_model, scenario, &sim)),
                    p_values: trace
                        .final_checks
                        .iter()
                        .map(|c| c.as_ref().and_then(|c| c.p_value()))
                        .collect(),
                    edf_star: trace
                        .final_checks
                        .iter()
                        .map(|c| c.as_ref().and_then(|c| c.edf_star()))
                        .collect(),
                    refits: trace.refit_count,
                    seed,
                    elapsed_ms: start.elapsed().as_micros() as f64 / 1e3,
                    error: None,
                },
                Err(e) => failed(method, e.to_string()),
            }
        })
        .collect()
}

/// Every method on every replicate. Failed runs are recorded as error rows;
/// more than 5% failures abandons the experiment.
pub fn run_experiment(scenario: &Scenario) -> Result<ScenarioResult, SimulationError> {
    scenario.validate()?;
    let rows: Vec<ScenarioRow> = (0..scenario.replicates)
        .into_par_iter()
        .flat_map_iter(|r| run_replicate(scenario, r))
        .collect();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * rows.len() as f64 {
        return Err(SimulationError::TooManyFailures {
            failed,
            total: rows.len(),
        });
    }
    Ok(ScenarioResult {
        scenario: scenario.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_values() {
        assert!(test_function(ScenarioId::UniF3, &[0.25]).unwrap().abs() < 1e-12);
        assert_eq!(test_function(ScenarioId::UniF1, &[0.5]).unwrap(), 0.5);
        assert_eq!(test_function(ScenarioId::UniF2, &[0.5]).unwrap(), 2.5);
        assert!(matches!(
            test_function(ScenarioId::UniF1, &[1.5]),
            Err(SimulationError::OutOfDomain { .. })
        ));
        assert!(test_function(ScenarioId::Bivariate, &[-1.0, 1.0]).is_ok());
        assert!(test_function(ScenarioId::Bivariate, &[-1.1, 0.5]).is_err());
        assert!(matches!(
            test_function(ScenarioId::Additive, &[0.5]),
            Err(SimulationError::Arity { .. })
        ));
        let v = test_function(ScenarioId::Additive, &[0.5, 0.25]).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn noise_free_data_equals_truth() {
        for id in ScenarioId::ALL {
            let n = if id == ScenarioId::Bivariate { 400 } else { 100 };
            let mut s = Scenario::new(id, n);
            s.sigma = 0.0;
            let sim = gen_data(&s, 3).unwrap();
            assert_eq!(sim.data.column("y").unwrap(), sim.truth.as_slice());
            assert_eq!(sim.data.n_rows(), n);
        }
    }

    #[test]
    fn covariate_layouts() {
        let s = Scenario::new(ScenarioId::Bivariate, 400);
        let sim = gen_data(&s, 0).unwrap();
        let x1 = sim.data.column("x1").unwrap();
        let x2 = sim.data.column("x2").unwrap();
        assert_eq!((x1[0], x1[399]), (-1.0, 3.0));
        assert_eq!((x2[0], x2[19]), (0.0, 1.0));
        let mut u1 = x1.to_vec();
        u1.sort_by(f64::total_cmp);
        u1.dedup();
        assert_eq!(u1.len(), 20);

        let uni = gen_data(&Scenario::new(ScenarioId::UniF1, 101), 0).unwrap();
        assert_eq!(uni.data.column("x").unwrap()[50], 0.5);

        let add = gen_data(&Scenario::new(ScenarioId::Additive, 200), 0).unwrap();
        assert!(add.data.column("x1").unwrap().iter().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(add.data.column("x1"), add.data.column("x2"));
        assert!(Scenario::new(ScenarioId::Bivariate, 401).validate().is_err());
    }

    #[test]
    fn data_is_deterministic_per_replicate() {
        let s = Scenario::new(ScenarioId::Additive, 150);
        assert_eq!(gen_data(&s, 4).unwrap(), gen_data(&s, 4).unwrap());
        assert_ne!(gen_data(&s, 4).unwrap().data, gen_data(&s, 5).unwrap().data);
    }

    #[test]
    fn mse_cases() {
        let truth = [0.1, 0.5, -0.3, 2.0];
        assert_eq!(mse_from_fitted(ScenarioId::UniF1, &truth, &truth), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        assert!(mse_from_fitted(ScenarioId::Additive, &shifted, &truth) < 1e-30);
        let fitted = [0.0, 0.7, -0.1, 1.5];
        let expected = (0.01 + 0.04 + 0.04 + 0.25) / 4.0;
        assert!((mse_from_fitted(ScenarioId::UniF2, &fitted, &truth) - expected).abs() < 1e-15);
    }

    #[test]
    fn scenario_ids_parse() {
        for id in ScenarioId::ALL {
            assert_eq!(id.as_str().parse::<ScenarioId>().unwrap(), id);
        }
        assert!("uni-f4".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn row_counts() {
        let mut s = Scenario::new(ScenarioId::UniF3, 100);
        s.replicates = 3;
        let res = run_experiment(&s).unwrap();
        assert_eq!(res.rows.len(), 12);
        assert!(res.rows.iter().all(|r| r.error.is_none() && r.mse.unwrap() >= 0.0));
        let kappa: Vec<_> = res.rows_for(Method::Kappa).collect();
        assert_eq!(kappa.len(), 3);
        assert!(kappa.iter().all(|r| r.p_values[0].is_some() && r.edf_star[0].is_none()));
        assert!(res.rows_for(Method::GcvGrid).all(|r| r.refits == 4));
    }
}
