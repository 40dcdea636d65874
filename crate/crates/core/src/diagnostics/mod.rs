//! Basis-dimension checks on a fitted model.
//!
//! The κ test compares the model scale estimate with one built from
//! differences of residuals that are neighbours in the term's covariates.
//! Leftover pattern makes neighbouring residuals similar, so κ drops below
//! one; the null distribution comes from shuffling the residuals.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fit::{FitError, FittedModel};

mod knn;
mod resmooth;

pub use knn::knn_indices;
pub use resmooth::{resmooth_check, ResmoothConfig, ResmoothResult, DEFAULT_EDF_THRESHOLD};

pub const DEFAULT_PERMUTATIONS: usize = 199;
pub const MIN_PERMUTATIONS: usize = 99;
pub const DEFAULT_NEIGHBOURS: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("at least 3 observations required, got {0}")]
    TooFewObservations(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("neighbour count {m} must satisfy 1 <= M < n (n = {n})")]
    InvalidNeighbourCount { m: usize, n: usize },
    #[error("covariate column {0} has zero variance")]
    ZeroVariance(usize),
    #[error("no covariates supplied")]
    NoCovariates,
    #[error("neighbour index {index} out of range for {n} residuals")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("at least {MIN_PERMUTATIONS} permutations required, got {0}")]
    TooFewPermutations(usize),
    #[error("model scale estimate must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// `sum (r~_{i+1} - r~_i)^2 / (2n - 2)` with `r~` the residuals ordered by
/// `x` (stable; ties keep their original order).
pub fn phi_delta_univariate(r: &[f64], x: &[f64]) -> Result<f64, DiagnosticsError> {
    if r.len() != x.len() {
        return Err(DiagnosticsError::LengthMismatch {
            expected: x.len(),
            found: r.len(),
        });
    }
    let order = sort_order(x)?;
    Ok(phi_delta_sorted(r, &order))
}

fn sort_order(x: &[f64]) -> Result<Vec<usize>, DiagnosticsError> {
    if x.len() < 3 {
        return Err(DiagnosticsError::TooFewObservations(x.len()));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    Ok(order)
}

fn phi_delta_sorted(r: &[f64], order: &[usize]) -> f64 {
    let n = order.len();
    let ss: f64 = order
        .windows(2)
        .map(|w| (r[w[1]] - r[w[0]]).powi(2))
        .sum();
    ss / (2 * n - 2) as f64
}

/// `sum_ij (r_i - r_{m_ij})^2 / (2 M n)` for a neighbour table `nn`.
pub fn phi_delta_multivariate(r: &[f64], nn: &[Vec<usize>]) -> Result<f64, DiagnosticsError> {
    let n = r.len();
    if nn.len() != n {
        return Err(DiagnosticsError::LengthMismatch {
            expected: n,
            found: nn.len(),
        });
    }
    let m = nn.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(DiagnosticsError::InvalidNeighbourCount { m, n });
    }
    let mut ss = 0.0;
    for (i, row) in nn.iter().enumerate() {
        if row.len() != m {
            return Err(DiagnosticsError::LengthMismatch {
                expected: m,
                found: row.len(),
            });
        }
        for &j in row {
            if j >= n {
                return Err(DiagnosticsError::IndexOutOfRange { index: j, n });
            }
            ss += (r[i] - r[j]).powi(2);
        }
    }
    Ok(ss / (2 * m * n) as f64)
}

/// Which residuals count as neighbours.
#[derive(Debug, Clone, PartialEq)]
pub enum Neighbourhood {
    /// Consecutive residuals after ordering by a single covariate.
    Sorted(Vec<usize>),
    /// `M` nearest neighbours in covariate space.
    Nearest(Vec<Vec<usize>>),
}

impl Neighbourhood {
    /// Sorting for one covariate, `m` nearest neighbours otherwise.
    pub fn for_covariates(columns: &[&[f64]], m: usize) -> Result<Self, DiagnosticsError> {
        match columns {
            [] => Err(DiagnosticsError::NoCovariates),
            [x] => Ok(Self::Sorted(sort_order(x)?)),
            _ => Ok(Self::Nearest(knn_indices(columns, m)?)),
        }
    }

    /// Neighbour count reported in [`KappaResult::neighbours`] (0 for sorting).
    pub fn neighbour_count(&self) -> usize {
        match self {
            Self::Sorted(_) => 0,
            Self::Nearest(nn) => nn.first().map_or(0, Vec::len),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Sorted(o) => o.len(),
            Self::Nearest(nn) => nn.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi_delta(&self, r: &[f64]) -> Result<f64, DiagnosticsError> {
        if r.len() != self.len() {
            return Err(DiagnosticsError::LengthMismatch {
                expected: self.len(),
                found: r.len(),
            });
        }
        match self {
            Self::Sorted(order) => Ok(phi_delta_sorted(r, order)),
            Self::Nearest(nn) => phi_delta_multivariate(r, nn),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaConfig {
    /// Number of permutations `B`.
    pub perms: usize,
    /// `M` for terms with more than one covariate.
    pub neighbours: usize,
    pub seed: u64,
}

impl Default for KappaConfig {
    fn default() -> Self {
        Self {
            perms: DEFAULT_PERMUTATIONS,
            neighbours: DEFAULT_NEIGHBOURS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaResult {
    pub kappa: f64,
    pub phi_delta: f64,
    pub phi_hat: f64,
    /// `(1 + #{kappa* <= kappa}) / (B + 1)`.
    pub p_value: f64,
    pub n_perm: usize,
    /// 0 when neighbours come from sorting a single covariate.
    pub neighbours: usize,
    pub seed: u64,
}

/// Generator for permutation `b`: one ChaCha stream per permutation, so the
/// result does not depend on evaluation order.
fn permutation_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// κ and its permutation p-value for given residuals and scale estimate.
/// The scale estimate is held fixed; shuffling only moves the residuals.
pub fn kappa_permutation(
    residuals: &[f64],
    neighbourhood: &Neighbourhood,
    phi_hat: f64,
    perms: usize,
    seed: u64,
) -> Result<KappaResult, DiagnosticsError> {
    if perms < MIN_PERMUTATIONS {
        return Err(DiagnosticsError::TooFewPermutations(perms));
    }
    if !(phi_hat > 0.0 && phi_hat.is_finite()) {
        return Err(DiagnosticsError::NonPositiveScale(phi_hat));
    }
    let phi_delta = neighbourhood.phi_delta(residuals)?;
    let kappa = phi_delta / phi_hat;
    let at_or_below = (0..perms)
        .into_par_iter()
        .map(|b| {
            let mut shuffled = residuals.to_vec();
            shuffled.shuffle(&mut permutation_rng(seed, b));
            let k = neighbourhood.phi_delta(&shuffled).map(|p| p / phi_hat)?;
            Ok(usize::from(k <= kappa))
        })
        .collect::<Result<Vec<usize>, DiagnosticsError>>()?
        .into_iter()
        .sum::<usize>();
    Ok(KappaResult {
        kappa,
        phi_delta,
        phi_hat,
        p_value: (1 + at_or_below) as f64 / (perms + 1) as f64,
        n_perm: perms,
        neighbours: neighbourhood.neighbour_count(),
        seed,
    })
}

/// κ permutation test for one term of a fitted model, using the full-model
/// residuals and the model's scale estimate.
pub fn kappa_test(model: &FittedModel, term: usize, config: &KappaConfig) -> Result<KappaResult, DiagnosticsError> {
    let covariates = model.term_covariates(term)?;
    let hood = Neighbourhood::for_covariates(&covariates, config.neighbours)?;
    kappa_permutation(
        model.residuals.as_slice(),
        &hood,
        model.phi_hat,
        config.perms,
        config.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn univariate_hand_value() {
        let r = [0.0, 1.0, 0.0, 1.0];
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(phi_delta_univariate(&r, &x).unwrap(), 0.5);
        // Same pairs presented out of order.
        let r2 = [1.0, 0.0, 1.0, 0.0];
        let x2 = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(phi_delta_univariate(&r2, &x2).unwrap(), 0.5);
        assert_eq!(phi_delta_univariate(&[2.0; 5], &[1., 2., 3., 4., 5.]).unwrap(), 0.0);
        assert!(phi_delta_univariate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_keep_original_order() {
        // x ties between rows 0 and 2: order (0, 2, 1).
        let r = [0.0, 5.0, 1.0];
        let x = [0.0, 1.0, 0.0];
        assert_eq!(phi_delta_univariate(&r, &x).unwrap(), (1.0 + 16.0) / 4.0);
    }

    #[test]
    fn multivariate_hand_value() {
        let nn = vec![vec![1], vec![0]];
        assert_eq!(phi_delta_multivariate(&[1.0, 3.0], &nn).unwrap(), 2.0);
        assert_eq!(phi_delta_multivariate(&[4.0, 4.0], &nn).unwrap(), 0.0);
        assert!(matches!(
            phi_delta_multivariate(&[1.0, 3.0], &[vec![2], vec![0]]),
            Err(DiagnosticsError::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn large_sample_estimates_the_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let r: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let uni = phi_delta_univariate(&r, &x).unwrap();
        assert!((0.95..=1.05).contains(&uni), "{uni}");

        let phi: f64 = 0.04;
        let scaled: Vec<f64> = r.iter().map(|v| v * phi.sqrt()).collect();
        let nn: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut row = Vec::with_capacity(3);
                while row.len() < 3 {
                    let j = rng.gen_range(0..n);
                    if j != i && !row.contains(&j) {
                        row.push(j);
                    }
                }
                row
            })
            .collect();
        let multi = phi_delta_multivariate(&scaled, &nn).unwrap();
        assert!((multi / phi - 1.0).abs() < 0.05, "{multi}");
    }

    #[test]
    fn strong_pattern_gets_smallest_p_value() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let r: Vec<f64> = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (12.0 * std::f64::consts::PI * v).sin() + 0.01 * z
            })
            .collect();
        let hood = Neighbourhood::for_covariates(&[&x], 3).unwrap();
        let phi_hat = r.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let res = kappa_permutation(&r, &hood, phi_hat, 199, 1).unwrap();
        assert!(res.kappa < 0.1, "{}", res.kappa);
        assert_eq!(res.p_value, 1.0 / 200.0);
        assert_eq!(res.neighbours, 0);
    }

    #[test]
    fn p_value_floor_with_99_permutations() {
        // Perfectly ordered residuals: no shuffle can beat the sorted sequence.
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let hood = Neighbourhood::for_covariates(&[&x], 3).unwrap();
        let res = kappa_permutation(&x, &hood, 1.0, 99, 7).unwrap();
        assert_eq!(res.p_value, 0.01);
        assert!(matches!(
            kappa_permutation(&x, &hood, 1.0, 98, 7),
            Err(DiagnosticsError::TooFewPermutations(98))
        ));
    }

    #[test]
    fn rescaling_residuals_scales_phi_delta_and_keeps_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 120;
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let r: Vec<f64> = (0..n).map(|i| (4.0 * x[i]).sin() * 0.2 + rng.gen::<f64>() - 0.5).collect();
        for hood in [
            Neighbourhood::for_covariates(&[&x], 3).unwrap(),
            Neighbourhood::for_covariates(&[&x, &z], 3).unwrap(),
        ] {
            let base = kappa_permutation(&r, &hood, 0.1, 199, 5).unwrap();
            for c in [0.5, 4.0] {
                let rs: Vec<f64> = r.iter().map(|v| v * c).collect();
                let scaled = kappa_permutation(&rs, &hood, 0.1 * c * c, 199, 5).unwrap();
                assert_eq!(scaled.phi_delta, base.phi_delta * c * c);
                assert_eq!(scaled.p_value, base.p_value);
            }
            let again = kappa_permutation(&r, &hood, 0.1, 199, 5).unwrap();
            assert_eq!(again, base);
        }
    }
}
