//! Smoothing-parameter search: a log10-lambda grid swept by coordinate
//! descent over terms, then golden-section refinement of each coordinate.

use super::pls::PenalizedLs;
use super::{Criterion, FitError};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub log10_min: f64,
    pub log10_max: f64,
    pub grid_points: usize,
    pub max_sweeps: usize,
    /// Relative criterion change that ends coordinate descent.
    pub sweep_tol: f64,
    /// Golden section stops when the bracket has shrunk to this fraction of
    /// its starting width.
    pub refine_rel_width: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            log10_min: -6.0,
            log10_max: 8.0,
            grid_points: 31,
            max_sweeps: 10,
            sweep_tol: 1e-7,
            refine_rel_width: 1e-3,
        }
    }
}

impl SearchConfig {
    pub fn grid(&self) -> Vec<f64> {
        let steps = (self.grid_points - 1).max(1) as f64;
        (0..self.grid_points)
            .map(|i| self.log10_min + (self.log10_max - self.log10_min) * i as f64 / steps)
            .collect()
    }

    fn step(&self) -> f64 {
        (self.log10_max - self.log10_min) / (self.grid_points - 1).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub lambdas: Vec<f64>,
    pub criterion: f64,
    /// Coordinate-descent sweeps performed.
    pub sweeps: usize,
    pub converged: bool,
    pub evaluations: usize,
}

/// Minimizes a unimodal `f` on `[lo, hi]`; returns `(argmin, min)`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, rel_width: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let target = (hi - lo).abs() * rel_width;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > target {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Smoothing parameters minimizing `kind` for a factorized problem.
pub fn search_lambdas(
    pls: &PenalizedLs,
    kind: Criterion,
    config: &SearchConfig,
) -> Result<LambdaSearch, FitError> {
    let m = pls.n_penalties();
    let mut evaluations = 0usize;
    let mut eval = |rho: &[f64]| -> f64 {
        evaluations += 1;
        let lambdas: Vec<f64> = rho.iter().map(|r| 10f64.powf(*r)).collect();
        match pls.evaluate(kind, &lambdas) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    if m == 0 {
        let v = eval(&[]);
        if !v.is_finite() {
            return Err(FitError::NoFiniteCriterion);
        }
        return Ok(LambdaSearch {
            lambdas: vec![],
            criterion: v,
            sweeps: 0,
            converged: true,
            evaluations: 1,
        });
    }

    let grid = config.grid();
    let mid = grid[grid.len() / 2];
    let mut rho = vec![mid; m];
    let mut best = eval(&rho);
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let before = best;
        for j in 0..m {
            let mut trial = rho.clone();
            for &g in &grid {
                trial[j] = g;
                let v = if g == rho[j] { best } else { eval(&trial) };
                if v < best {
                    best = v;
                    rho[j] = g;
                }
            }
        }
        if !best.is_finite() {
            return Err(FitError::NoFiniteCriterion);
        }
        // A lone coordinate is already at its grid optimum after one pass.
        if m == 1 || (before - best).abs() <= config.sweep_tol * before.abs() {
            converged = true;
            break;
        }
    }

    let h = config.step();
    for j in 0..m {
        let lo = (rho[j] - h).max(config.log10_min);
        let hi = (rho[j] + h).min(config.log10_max);
        let mut trial = rho.clone();
        let (arg, val) = golden_section(
            |t| {
                trial[j] = t;
                eval(&trial)
            },
            lo,
            hi,
            config.refine_rel_width,
        );
        if val < best {
            best = val;
            rho[j] = arg;
        }
    }

    Ok(LambdaSearch {
        lambdas: rho.iter().map(|r| 10f64.powf(*r)).collect(),
        criterion: best,
        sweeps,
        converged,
        evaluations,
    })
}
