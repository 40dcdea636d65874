//! Penalized least squares on a fixed design.
//!
//! The design is QR-factorized once (`X = QR`). For each trial set of
//! smoothing parameters the augmented system `[R; sqrt(lambda_j) E_j]`, with
//! `E_j^T E_j = S_j`, is factorized again, which gives the coefficients, the
//! influence-matrix trace and `log|X^T X + S_lambda|` without ever forming the
//! normal equations.

use nalgebra::{DMatrix, DVector};

use super::{Criterion, FitError};

/// Relative tolerance on the diagonal of the augmented `R` below which the
/// penalized problem is declared unidentifiable.
pub const RANK_TOL: f64 = 1e-10;

const PENALTY_EIGEN_TOL: f64 = 1e-11;

/// A square penalty acting on columns `offset..offset + dim` of the design.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub offset: usize,
    pub matrix: DMatrix<f64>,
    pub null_dim: usize,
}

impl Penalty {
    /// Null dimension found numerically from the eigenvalues of `matrix`.
    pub fn new(offset: usize, matrix: DMatrix<f64>) -> Self {
        let null_dim = crate::basis::null_space_dim(&matrix);
        Self {
            offset,
            matrix,
            null_dim,
        }
    }

    /// Null dimension known analytically.
    pub fn with_null_dim(offset: usize, matrix: DMatrix<f64>, null_dim: usize) -> Self {
        Self {
            offset,
            matrix,
            null_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.dim() - self.null_dim
    }
}

/// Square root of one penalty restricted to its range space.
#[derive(Debug, Clone)]
struct PenaltyRoot {
    offset: usize,
    /// `rank x dim`, `root^T root = S`.
    root: DMatrix<f64>,
    /// Sum of logs of the non-zero eigenvalues.
    log_det: f64,
}

impl PenaltyRoot {
    fn from_penalty(p: &Penalty) -> Result<Self, FitError> {
        if !p.matrix.is_square() {
            return Err(FitError::Shape(format!(
                "penalty is {}x{}",
                p.matrix.nrows(),
                p.matrix.ncols()
            )));
        }
        let dim = p.dim();
        let sym = (&p.matrix + p.matrix.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let rank = p.rank();
        let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
        let mut root = DMatrix::zeros(rank, dim);
        let mut log_det = 0.0;
        for (r, &idx) in order.iter().take(rank).enumerate() {
            let ev = eig.eigenvalues[idx];
            if ev <= PENALTY_EIGEN_TOL * max {
                return Err(FitError::Shape(format!(
                    "penalty at offset {} has fewer than {rank} positive eigenvalues",
                    p.offset
                )));
            }
            log_det += ev.ln();
            let scale = ev.sqrt();
            for c in 0..dim {
                root[(r, c)] = scale * eig.eigenvectors[(c, idx)];
            }
        }
        Ok(Self {
            offset: p.offset,
            root,
            log_det,
        })
    }
}

/// Everything computed at one trial set of smoothing parameters.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: DVector<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    /// `sum_j lambda_j beta^T S_j beta`.
    pub penalty: f64,
    /// `tr(X (X^T X + S_lambda)^-1 X^T)`.
    pub trace: f64,
    /// `log|X^T X + S_lambda|`.
    pub log_det: f64,
    r_aug: DMatrix<f64>,
    /// `R_aug^-T R^T`.
    influence_root: DMatrix<f64>,
}

/// A design, its penalties and a response, factorized for repeated solves.
#[derive(Debug, Clone)]
pub struct PenalizedLs {
    n: usize,
    p: usize,
    r: DMatrix<f64>,
    qty: DVector<f64>,
    rss_outside: f64,
    y_norm2: f64,
    roots: Vec<PenaltyRoot>,
    penalties: Vec<Penalty>,
}

impl PenalizedLs {
    pub fn new(x: &DMatrix<f64>, penalties: &[Penalty], y: &DVector<f64>) -> Result<Self, FitError> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(FitError::Shape(format!("design has {n} rows, response has {}", y.len())));
        }
        for pen in penalties {
            if pen.offset + pen.dim() > p {
                return Err(FitError::Shape(format!(
                    "penalty block {}..{} exceeds {p} columns",
                    pen.offset,
                    pen.offset + pen.dim()
                )));
            }
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let mut qty_full = y.clone();
        qr.q_tr_mul(&mut qty_full);
        let m = r.nrows();
        let qty = qty_full.rows(0, m).into_owned();
        let rss_outside = qty_full.rows(m, n - m).norm_squared();
        let roots = penalties
            .iter()
            .map(PenaltyRoot::from_penalty)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n,
            p,
            r,
            qty,
            rss_outside,
            y_norm2: y.norm_squared(),
            roots,
            penalties: penalties.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_coef(&self) -> usize {
        self.p
    }

    pub fn n_penalties(&self) -> usize {
        self.roots.len()
    }

    pub fn penalties(&self) -> &[Penalty] {
        &self.penalties
    }

    /// Dimension of the null space of the total embedded penalty, i.e. the
    /// number of unpenalized coefficient directions.
    pub fn total_null_dim(&self) -> usize {
        self.p - self.penalties.iter().map(Penalty::rank).sum::<usize>()
    }

    pub fn solve(&self, lambdas: &[f64]) -> Result<Solution, FitError> {
        if lambdas.len() != self.roots.len() {
            return Err(FitError::Shape(format!(
                "{} smoothing parameters for {} penalties",
                lambdas.len(),
                self.roots.len()
            )));
        }
        if let Some(&bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(FitError::InvalidLambda(bad));
        }
        let m = self.r.nrows();
        let pen_rows: usize = self.roots.iter().map(|r| r.root.nrows()).sum();
        let rows = m + pen_rows;
        if rows < self.p {
            return Err(FitError::Unidentifiable);
        }
        let mut aug = DMatrix::zeros(rows, self.p);
        aug.rows_mut(0, m).copy_from(&self.r);
        let mut at = m;
        for (root, &lambda) in self.roots.iter().zip(lambdas) {
            let scale = lambda.sqrt();
            let (rr, rc) = root.root.shape();
            aug.view_mut((at, root.offset), (rr, rc))
                .copy_from(&(&root.root * scale));
            at += rr;
        }
        let qr = aug.qr();
        let r_full = qr.r();
        let r_aug = r_full.rows(0, self.p).into_owned();
        let diag_max = (0..self.p).fold(0.0_f64, |acc, i| acc.max(r_aug[(i, i)].abs()));
        if diag_max == 0.0 || (0..self.p).any(|i| r_aug[(i, i)].abs() <= RANK_TOL * diag_max) {
            return Err(FitError::Unidentifiable);
        }
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(0, m).copy_from(&self.qty);
        qr.q_tr_mul(&mut rhs);
        let c = rhs.rows(0, self.p).into_owned();
        let beta = r_aug
            .solve_upper_triangular(&c)
            .ok_or(FitError::Unidentifiable)?;

        let fitted_part = &self.r * &beta;
        let rss = self.rss_outside + (&self.qty - fitted_part).norm_squared();
        let penalty = self
            .roots
            .iter()
            .zip(lambdas)
            .map(|(root, &lambda)| {
                let block = beta.rows(root.offset, root.root.ncols());
                lambda * (&root.root * block).norm_squared()
            })
            .sum();
        let influence_root = r_aug
            .tr_solve_upper_triangular(&self.r.transpose())
            .ok_or(FitError::Unidentifiable)?;
        let trace = influence_root.norm_squared();
        let log_det = 2.0 * (0..self.p).map(|i| r_aug[(i, i)].abs().ln()).sum::<f64>();
        Ok(Solution {
            beta,
            rss,
            penalty,
            trace,
            log_det,
            r_aug,
            influence_root,
        })
    }

    /// Diagonal of `F = (X^T X + S_lambda)^-1 X^T X`.
    pub fn edf_diagonal(&self, sol: &Solution) -> Result<DVector<f64>, FitError> {
        let g = sol
            .r_aug
            .solve_upper_triangular(&sol.influence_root)
            .ok_or(FitError::Unidentifiable)?;
        Ok(DVector::from_fn(self.p, |i, _| {
            (0..self.r.nrows()).map(|l| g[(i, l)] * self.r[(l, i)]).sum()
        }))
    }

    /// Deviance floor that keeps criteria finite on exactly interpolable
    /// data; far below any achievable residual sum of squares otherwise.
    fn deviance_floor(&self) -> f64 {
        1e-20 * self.y_norm2 + f64::MIN_POSITIVE
    }

    pub fn gcv(&self, sol: &Solution) -> Result<f64, FitError> {
        gcv_from_parts(self.n, sol.rss.max(self.deviance_floor()), sol.trace)
    }

    /// Restricted negative log likelihood with the scale profiled out.
    pub fn reml(&self, sol: &Solution, lambdas: &[f64]) -> Result<f64, FitError> {
        let mp = self.total_null_dim();
        if mp >= self.n {
            return Err(FitError::EdfExhaustsData);
        }
        let dof = (self.n - mp) as f64;
        let mut log_det_penalty = 0.0;
        for (root, &lambda) in self.roots.iter().zip(lambdas) {
            let rank = root.root.nrows();
            if rank == 0 {
                continue;
            }
            if lambda <= 0.0 {
                return Err(FitError::InvalidLambda(lambda));
            }
            log_det_penalty += rank as f64 * lambda.ln() + root.log_det;
        }
        let deviance = (sol.rss + sol.penalty).max(self.deviance_floor());
        let phi = deviance / dof;
        Ok(0.5
            * (dof * (2.0 * std::f64::consts::PI * phi).ln() + dof + sol.log_det
                - log_det_penalty))
    }

    pub fn score(&self, kind: Criterion, sol: &Solution, lambdas: &[f64]) -> Result<f64, FitError> {
        match kind {
            Criterion::Gcv => self.gcv(sol),
            Criterion::Reml => self.reml(sol, lambdas),
        }
    }

    /// Solve and score in one step.
    pub fn evaluate(&self, kind: Criterion, lambdas: &[f64]) -> Result<f64, FitError> {
        let sol = self.solve(lambdas)?;
        self.score(kind, &sol, lambdas)
    }
}

/// `n * rss / (n - trace)^2`.
pub fn gcv_from_parts(n: usize, rss: f64, trace: f64) -> Result<f64, FitError> {
    let dof = n as f64 - trace;
    // Anything within rounding of a saturated fit counts as exhausted.
    if dof <= 1e-8 * n as f64 {
        return Err(FitError::EdfExhaustsData);
    }
    Ok(n as f64 * rss / (dof * dof))
}

/// Minimizer of `||y - X beta||^2 + sum_j lambda_j beta^T S_j beta`.
pub fn penalized_solve(
    x: &DMatrix<f64>,
    penalties: &[Penalty],
    lambdas: &[f64],
    y: &DVector<f64>,
) -> Result<DVector<f64>, FitError> {
    Ok(PenalizedLs::new(x, penalties, y)?.solve(lambdas)?.beta)
}

/// Per-penalty EDF (diagonal-block sums of `F`) and the total trace.
pub fn edf_per_term(
    x: &DMatrix<f64>,
    penalties: &[Penalty],
    lambdas: &[f64],
) -> Result<(Vec<f64>, f64), FitError> {
    let y = DVector::zeros(x.nrows());
    let pls = PenalizedLs::new(x, penalties, &y)?;
    let sol = pls.solve(lambdas)?;
    let diag = pls.edf_diagonal(&sol)?;
    let per_term = penalties
        .iter()
        .map(|p| diag.rows(p.offset, p.dim()).sum())
        .collect();
    Ok((per_term, sol.trace))
}

pub fn criterion_score(
    kind: Criterion,
    x: &DMatrix<f64>,
    penalties: &[Penalty],
    lambdas: &[f64],
    y: &DVector<f64>,
) -> Result<f64, FitError> {
    PenalizedLs::new(x, penalties, y)?.evaluate(kind, lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::difference_penalty;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<Penalty>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let pen = Penalty::new(1, difference_penalty(p - 1, 2).unwrap());
        (x, vec![pen], y)
    }

    fn embedded(pens: &[Penalty], lambdas: &[f64], p: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(p, p);
        for (pen, l) in pens.iter().zip(lambdas) {
            let d = pen.dim();
            let mut view = s.view_mut((pen.offset, pen.offset), (d, d));
            view += &pen.matrix * *l;
        }
        s
    }

    #[test]
    fn gcv_plug_in_and_guard() {
        assert_eq!(gcv_from_parts(4, 2.0, 2.0).unwrap(), 2.0);
        assert!(matches!(gcv_from_parts(4, 0.0, 4.0), Err(FitError::EdfExhaustsData)));
        let err = gcv_from_parts(4, 1.0, 4.0).unwrap_err();
        assert_eq!(err.to_string(), "effective degrees of freedom exhausts data");
    }

    #[test]
    fn unpenalized_limit_is_ols() {
        let (x, pens, y) = random_problem(1, 40, 6);
        let beta = penalized_solve(&x, &pens, &[0.0], &y).unwrap();
        let ols = (x.transpose() * &x)
            .lu()
            .solve(&(x.transpose() * &y))
            .unwrap();
        assert!((&beta - &ols).norm() / ols.norm() < 1e-10);
        // Residuals orthogonal to the design.
        let r = &y - &x * &beta;
        assert!((x.transpose() * r).amax() < 1e-8);
    }

    #[test]
    fn matches_normal_equations() {
        let (x, pens, y) = random_problem(2, 30, 8);
        for lambda in [1e-3, 0.7, 50.0] {
            let beta = penalized_solve(&x, &pens, &[lambda], &y).unwrap();
            let a = x.transpose() * &x + embedded(&pens, &[lambda], 8);
            let direct = a.lu().solve(&(x.transpose() * &y)).unwrap();
            assert!((&beta - &direct).norm() / direct.norm() < 1e-8);
        }
    }

    #[test]
    fn trace_matches_explicit_influence_matrix() {
        let (x, pens, y) = random_problem(4, 25, 7);
        let lambdas = [2.5];
        let pls = PenalizedLs::new(&x, &pens, &y).unwrap();
        let sol = pls.solve(&lambdas).unwrap();
        let a = x.transpose() * &x + embedded(&pens, &lambdas, 7);
        let hat = &x * a.clone().try_inverse().unwrap() * x.transpose();
        assert!((sol.trace - hat.trace()).abs() < 1e-8);
        let diag = pls.edf_diagonal(&sol).unwrap();
        assert!((diag.sum() - hat.trace()).abs() < 1e-8);
        let f = a.try_inverse().unwrap() * x.transpose() * &x;
        for i in 0..7 {
            assert!((diag[i] - f[(i, i)]).abs() < 1e-8);
        }
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let (x, pens, y) = random_problem(9, 20, 5);
        let pls = PenalizedLs::new(&x, &pens, &y).unwrap();
        let sol = pls.solve(&[0.3]).unwrap();
        let a = x.transpose() * &x + embedded(&pens, &[0.3], 5);
        assert!((sol.log_det - a.determinant().ln()).abs() < 1e-10);
    }

    #[test]
    fn unidentifiable_design_is_rejected() {
        let mut x = DMatrix::from_fn(12, 3, |i, j| (i * (j + 1)) as f64);
        x.set_column(2, &x.column(1).clone_owned());
        let y = DVector::from_element(12, 1.0);
        let err = penalized_solve(&x, &[], &[], &y).unwrap_err();
        assert!(matches!(err, FitError::Unidentifiable));
        assert_eq!(err.to_string(), "unidentifiable model");
    }

    #[test]
    fn saturated_gcv_errors() {
        let x = DMatrix::<f64>::identity(5, 5);
        let y = DVector::from_fn(5, |i, _| i as f64);
        let pens = vec![Penalty::new(0, difference_penalty(5, 2).unwrap())];
        let err = criterion_score(Criterion::Gcv, &x, &pens, &[0.0], &y).unwrap_err();
        assert!(matches!(err, FitError::EdfExhaustsData));
    }
}
