//! B-spline bases, difference penalties, tensor products and the sum-to-zero
//! identifiability constraint.
//!
//! A smooth term is described by a [`BasisSpec`] and realized on data as a
//! [`DesignBlock`]: the constrained model-matrix columns, the matching
//! penalty, and everything needed to evaluate the term at new points.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("insufficient unique covariate values for requested k (k = {k}, unique values = {unique})")]
    InsufficientUniqueValues { k: usize, unique: usize },

    #[error("covariate outside basis domain: {x} is not in [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("basis dimension {k} is too small for a degree {degree} spline (need at least {})", degree + 2)]
    DimensionTooSmall { k: usize, degree: usize },

    #[error("penalty order {order} must satisfy 0 < order < k (k = {k})")]
    InvalidPenaltyOrder { order: usize, k: usize },

    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },

    #[error("penalty matrices must be square, got {rows}x{cols}")]
    NonSquarePenalty { rows: usize, cols: usize },

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("non-finite covariate value")]
    NonFinite,

    #[error("{kind:?} term expects {expected} covariate(s), got {found}")]
    CovariateCount {
        kind: BasisKind,
        expected: usize,
        found: usize,
    },

    #[error("tensor marginals {k1} x {k2} do not multiply to k = {k}")]
    MarginalMismatch { k1: usize, k2: usize, k: usize },

    #[error("design has no columns to constrain")]
    EmptyDesign,
}

pub type Result<T> = std::result::Result<T, BasisError>;

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_PENALTY_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Univariate,
    TensorProduct,
}

/// Definition of one smooth term.
///
/// `k` is the total basis dimension before the sum-to-zero constraint is
/// absorbed. Tensor-product terms split `k` into two marginal dimensions,
/// see [`BasisSpec::marginal_dims`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub k: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub covariates: Vec<String>,
    /// Explicit tensor marginal dimensions; overrides the split of `k`.
    pub marginals: Option<(usize, usize)>,
}

impl BasisSpec {
    /// Cubic B-spline with a second-order difference penalty.
    pub fn univariate(covariate: impl Into<String>, k: usize) -> Self {
        Self {
            kind: BasisKind::Univariate,
            k,
            degree: DEFAULT_DEGREE,
            penalty_order: DEFAULT_PENALTY_ORDER,
            covariates: vec![covariate.into()],
            marginals: None,
        }
    }

    /// Isotropic tensor product of two cubic B-spline marginals.
    pub fn tensor(first: impl Into<String>, second: impl Into<String>, k: usize) -> Self {
        Self {
            kind: BasisKind::TensorProduct,
            k,
            degree: DEFAULT_DEGREE,
            penalty_order: DEFAULT_PENALTY_ORDER,
            covariates: vec![first.into(), second.into()],
            marginals: None,
        }
    }

    /// Tensor product with marginal dimensions fixed to `k1` and `k2`.
    pub fn tensor_with_marginals(
        first: impl Into<String>,
        second: impl Into<String>,
        k1: usize,
        k2: usize,
    ) -> Self {
        Self {
            marginals: Some((k1, k2)),
            ..Self::tensor(first, second, k1 * k2)
        }
    }

    /// Same term with total dimension `k`; explicit marginals are dropped
    /// unless they still multiply to `k`.
    pub fn with_k(&self, k: usize) -> Self {
        let marginals = self.marginals.filter(|(a, b)| a * b == k);
        Self {
            k,
            marginals,
            ..self.clone()
        }
    }

    /// Marginal dimensions `(k1, k2)` of a tensor term.
    ///
    /// Uses the factor pair of `k` closest to square. When `k` has no usable
    /// factor pair (both factors must be at least 3), falls back to
    /// `round(sqrt(k))` squared, so the realized dimension can differ from `k`.
    pub fn marginal_dims(&self) -> (usize, usize) {
        match self.kind {
            BasisKind::Univariate => (self.k, 1),
            BasisKind::TensorProduct => {
                if let Some(m) = self.marginals {
                    return m;
                }
                let root = (self.k as f64).sqrt();
                let mut a = root.floor() as usize;
                while a >= 3 {
                    if self.k % a == 0 {
                        return (a, self.k / a);
                    }
                    a -= 1;
                }
                let side = (root.round() as usize).max(3);
                (side, side)
            }
        }
    }

    /// Total basis dimension actually built, before centering.
    pub fn realized_k(&self) -> usize {
        let (a, b) = self.marginal_dims();
        a * b
    }

    /// Degree used for a marginal of dimension `k_marginal`. Small tensor
    /// marginals (e.g. the 3 in 15 = 3 x 5) cannot carry a cubic spline, so
    /// the degree drops to `k_marginal - 2`.
    fn marginal_degree(&self, k_marginal: usize) -> usize {
        match self.kind {
            BasisKind::Univariate => self.degree,
            BasisKind::TensorProduct => self.degree.min(k_marginal.saturating_sub(2)),
        }
    }

    /// Dimension of the penalty null space once the centering constraint
    /// has removed the constant direction.
    pub fn constrained_null_dim(&self) -> usize {
        match self.kind {
            BasisKind::Univariate => self.penalty_order - 1,
            BasisKind::TensorProduct => self.penalty_order * self.penalty_order - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            BasisKind::Univariate => 1,
            BasisKind::TensorProduct => 2,
        };
        if self.covariates.len() != expected {
            return Err(BasisError::CovariateCount {
                kind: self.kind,
                expected,
                found: self.covariates.len(),
            });
        }
        match self.kind {
            BasisKind::Univariate => {
                if self.k < self.degree + 2 {
                    return Err(BasisError::DimensionTooSmall {
                        k: self.k,
                        degree: self.degree,
                    });
                }
                if self.penalty_order == 0 || self.penalty_order >= self.k {
                    return Err(BasisError::InvalidPenaltyOrder {
                        order: self.penalty_order,
                        k: self.k,
                    });
                }
            }
            BasisKind::TensorProduct => {
                let (a, b) = self.marginal_dims();
                if self.marginals.is_some() && a * b != self.k {
                    return Err(BasisError::MarginalMismatch {
                        k1: a,
                        k2: b,
                        k: self.k,
                    });
                }
                for m in [a, b] {
                    if self.penalty_order == 0 || self.penalty_order >= m {
                        return Err(BasisError::InvalidPenaltyOrder {
                            order: self.penalty_order,
                            k: m,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clamped knot vector: the first and last `degree + 1` knots sit on the
/// domain boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(BasisError::InvalidKnots(format!(
                "need at least {} knots for degree {degree}, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(BasisError::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(BasisError::InvalidKnots("knots must be non-decreasing".into()));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if lo >= hi {
            return Err(BasisError::InvalidKnots("empty domain".into()));
        }
        let clamped_lo = knots[..=degree].iter().all(|&t| t == lo);
        let clamped_hi = knots[knots.len() - degree - 1..].iter().all(|&t| t == hi);
        if !(clamped_lo && clamped_hi) {
            return Err(BasisError::InvalidKnots(
                "boundary knots must be repeated degree + 1 times".into(),
            ));
        }
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Greville abscissae: the coefficient vector `greville()` reproduces
    /// the identity function, `sum_j xi_j B_j(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.dim())
            .map(|j| {
                if p == 0 {
                    0.5 * (self.knots[j] + self.knots[j + 1])
                } else {
                    self.knots[j + 1..=j + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Index `s` with `knots[s] <= x < knots[s + 1]`; the right boundary maps
    /// to the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let upper = self.knots.partition_point(|&t| t <= x);
        upper.saturating_sub(1).clamp(self.degree, self.dim() - 1)
    }

    /// Non-zero basis values at `x` (Cox-de Boor, triangular scheme).
    /// `out[r]` is the value of basis function `span - degree + r`.
    fn nonzero_basis(&self, span: usize, x: f64, out: &mut [f64]) {
        let p = self.degree;
        let t = &self.knots;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BasisError::NonFinite)
    }
}

fn sorted_unique(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Clamped knots for a `k`-dimensional basis with interior knots at evenly
/// spaced quantiles of the distinct values of `x`.
pub fn place_knots(x: &[f64], k: usize, degree: usize) -> Result<KnotVector> {
    if k < degree + 2 {
        return Err(BasisError::DimensionTooSmall { k, degree });
    }
    check_finite(x)?;
    let u = sorted_unique(x);
    if u.len() < k {
        return Err(BasisError::InsufficientUniqueValues { k, unique: u.len() });
    }
    let lo = u[0];
    let hi = u[u.len() - 1];
    let interior = k - degree - 1;
    let last = (u.len() - 1) as f64;

    let mut knots = Vec::with_capacity(k + degree + 1);
    knots.extend(std::iter::repeat(lo).take(degree + 1));
    for j in 1..=interior {
        let h = last * j as f64 / (interior + 1) as f64;
        let i = h.floor() as usize;
        let frac = h - i as f64;
        let t = if i + 1 < u.len() {
            u[i] + frac * (u[i + 1] - u[i])
        } else {
            u[i]
        };
        knots.push(t);
    }
    knots.extend(std::iter::repeat(hi).take(degree + 1));
    KnotVector::new(knots, degree)
}

/// `n x k` matrix of B-spline values; row `i` holds `B_1(x_i), ..., B_k(x_i)`.
pub fn eval_bspline_basis(x: &[f64], knots: &KnotVector) -> Result<DMatrix<f64>> {
    check_finite(x)?;
    let (lo, hi) = knots.domain();
    let p = knots.degree();
    let mut basis = DMatrix::zeros(x.len(), knots.dim());
    let mut local = vec![0.0; p + 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi < lo || xi > hi {
            return Err(BasisError::OutsideDomain { x: xi, lo, hi });
        }
        let span = knots.span(xi);
        knots.nonzero_basis(span, xi, &mut local);
        for (r, &v) in local.iter().enumerate() {
            basis[(i, span - p + r)] = v;
        }
    }
    Ok(basis)
}

/// The `(k - order) x k` matrix of `order`-th differences.
pub fn difference_matrix(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 || order >= k {
        return Err(BasisError::InvalidPenaltyOrder { order, k });
    }
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    Ok(d)
}

/// `S = D^T D` for the `order`-th difference operator `D`.
pub fn difference_penalty(k: usize, order: usize) -> Result<DMatrix<f64>> {
    let d = difference_matrix(k, order)?;
    Ok(d.transpose() * d)
}

/// `order`-th divided differences over strictly increasing `points`, scaled
/// by `order! * h^order` with `h` the mean spacing, so that evenly spaced
/// points give exactly [`difference_matrix`]. The null space is the
/// polynomials of degree `< order` in `points`.
pub fn divided_difference_matrix(points: &[f64], order: usize) -> Result<DMatrix<f64>> {
    let k = points.len();
    if order == 0 || order >= k {
        return Err(BasisError::InvalidPenaltyOrder { order, k });
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BasisError::InvalidKnots(
            "divided differences need strictly increasing points".into(),
        ));
    }
    let h = (points[k - 1] - points[0]) / (k - 1) as f64;
    let mut d = DMatrix::<f64>::identity(k, k);
    for m in 1..=order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| {
            (d[(i + 1, j)] - d[(i, j)]) / (points[i + m] - points[i]) * (m as f64 * h)
        });
    }
    Ok(d)
}

/// Penalty for a spline on `knots`: squared scaled divided differences of
/// the coefficients over the Greville abscissae. On a clamped or unevenly
/// spaced knot vector this keeps low-order polynomials in the covariate
/// (not merely in the coefficient index) unpenalized.
pub fn spline_penalty(knots: &KnotVector, order: usize) -> Result<DMatrix<f64>> {
    let d = divided_difference_matrix(&knots.greville(), order)?;
    Ok(d.transpose() * d)
}

/// Row-wise Kronecker product of two marginal bases.
pub fn tensor_basis(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b1.nrows() != b2.nrows() {
        return Err(BasisError::RowMismatch {
            left: b1.nrows(),
            right: b2.nrows(),
        });
    }
    let (k1, k2) = (b1.ncols(), b2.ncols());
    let mut out = DMatrix::zeros(b1.nrows(), k1 * k2);
    for i in 0..b1.nrows() {
        for a in 0..k1 {
            let v = b1[(i, a)];
            if v == 0.0 {
                continue;
            }
            for b in 0..k2 {
                out[(i, a * k2 + b)] = v * b2[(i, b)];
            }
        }
    }
    Ok(out)
}

/// Isotropic tensor penalty `S1 (x) I + I (x) S2`.
pub fn tensor_penalty(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for s in [s1, s2] {
        if !s.is_square() {
            return Err(BasisError::NonSquarePenalty {
                rows: s.nrows(),
                cols: s.ncols(),
            });
        }
    }
    let i1 = DMatrix::<f64>::identity(s1.nrows(), s1.nrows());
    let i2 = DMatrix::<f64>::identity(s2.nrows(), s2.nrows());
    Ok(s1.kronecker(&i2) + i1.kronecker(s2))
}

/// Result of absorbing a sum-to-zero constraint into a basis.
#[derive(Debug, Clone)]
pub struct Centered {
    /// Constrained design `X Z`.
    pub x: DMatrix<f64>,
    /// Congruently transformed penalty `Z^T S Z`.
    pub s: DMatrix<f64>,
    /// `k x (k - 1)` reparameterization with orthonormal columns.
    pub z: DMatrix<f64>,
    /// Penalty null-space dimension of the constrained block.
    pub null_dim: usize,
}

/// Eigenvalues at or below this fraction of the largest are treated as zero
/// when a null dimension has to be found numerically.
const NULL_EIGEN_TOL: f64 = 1e-11;

/// Number of numerically zero eigenvalues of a symmetric PSD matrix.
pub fn null_space_dim(s: &DMatrix<f64>) -> usize {
    if s.is_empty() {
        return 0;
    }
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return s.nrows();
    }
    eig.iter().filter(|v| v.abs() <= NULL_EIGEN_TOL * max).count()
}

/// Absorb `1^T X beta = 0` into the basis.
///
/// `Z` is the trailing `k - 1` columns of the Householder reflection that
/// maps the column-sum vector of `X` onto the first axis, so `1^T X Z = 0`.
pub fn apply_centering_constraint(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Centered> {
    let k = x.ncols();
    if k < 2 {
        return Err(BasisError::EmptyDesign);
    }
    if !s.is_square() || s.nrows() != k {
        return Err(BasisError::NonSquarePenalty {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    let c: DVector<f64> = x.row_sum().transpose();
    let norm = c.norm();
    let mut v = c.clone();
    // Reflect onto -sign(c0) e1 to avoid cancellation.
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    v[0] -= alpha;
    let vnorm2 = v.norm_squared();
    let h = if vnorm2 == 0.0 {
        DMatrix::identity(k, k)
    } else {
        DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vnorm2)
    };
    let z = h.columns(1, k - 1).into_owned();
    let xc = x * &z;
    let mut sc = z.transpose() * s * &z;
    sc = (&sc + sc.transpose()) * 0.5;
    let null_dim = null_space_dim(&sc);
    Ok(Centered {
        x: xc,
        s: sc,
        z,
        null_dim,
    })
}

/// A smooth term realized on a dataset.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    /// `n x (k - 1)` constrained model-matrix columns.
    pub x: DMatrix<f64>,
    /// `(k - 1) x (k - 1)` penalty.
    pub s: DMatrix<f64>,
    pub null_dim: usize,
    pub spec: BasisSpec,
    /// Sum-to-zero reparameterization applied to the raw basis.
    pub constraint: DMatrix<f64>,
    /// One knot vector per covariate.
    pub knots: Vec<KnotVector>,
}

impl DesignBlock {
    /// Builds the block from one covariate column per entry of
    /// `spec.covariates`.
    pub fn build(spec: &BasisSpec, covariates: &[&[f64]]) -> Result<Self> {
        spec.validate()?;
        if covariates.len() != spec.covariates.len() {
            return Err(BasisError::CovariateCount {
                kind: spec.kind,
                expected: spec.covariates.len(),
                found: covariates.len(),
            });
        }
        let (raw, penalty, knots) = match spec.kind {
            BasisKind::Univariate => {
                let knots = place_knots(covariates[0], spec.k, spec.degree)?;
                let b = eval_bspline_basis(covariates[0], &knots)?;
                let s = spline_penalty(&knots, spec.penalty_order)?;
                (b, s, vec![knots])
            }
            BasisKind::TensorProduct => {
                if covariates[0].len() != covariates[1].len() {
                    return Err(BasisError::RowMismatch {
                        left: covariates[0].len(),
                        right: covariates[1].len(),
                    });
                }
                let (k1, k2) = spec.marginal_dims();
                let kn1 = place_knots(covariates[0], k1, spec.marginal_degree(k1))?;
                let kn2 = place_knots(covariates[1], k2, spec.marginal_degree(k2))?;
                let b = tensor_basis(
                    &eval_bspline_basis(covariates[0], &kn1)?,
                    &eval_bspline_basis(covariates[1], &kn2)?,
                )?;
                let s = tensor_penalty(
                    &spline_penalty(&kn1, spec.penalty_order)?,
                    &spline_penalty(&kn2, spec.penalty_order)?,
                )?;
                (b, s, vec![kn1, kn2])
            }
        };
        let centered = apply_centering_constraint(&raw, &penalty)?;
        Ok(Self {
            x: centered.x,
            s: centered.s,
            null_dim: spec.constrained_null_dim(),
            spec: spec.clone(),
            constraint: centered.z,
            knots,
        })
    }

    /// Constrained basis evaluated at new covariate values.
    pub fn predict_matrix(&self, covariates: &[&[f64]]) -> Result<DMatrix<f64>> {
        if covariates.len() != self.knots.len() {
            return Err(BasisError::CovariateCount {
                kind: self.spec.kind,
                expected: self.knots.len(),
                found: covariates.len(),
            });
        }
        let raw = match self.spec.kind {
            BasisKind::Univariate => eval_bspline_basis(covariates[0], &self.knots[0])?,
            BasisKind::TensorProduct => tensor_basis(
                &eval_bspline_basis(covariates[0], &self.knots[0])?,
                &eval_bspline_basis(covariates[1], &self.knots[1])?,
            )?,
        };
        Ok(raw * &self.constraint)
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn realized_k(&self) -> usize {
        self.constraint.nrows()
    }
}
