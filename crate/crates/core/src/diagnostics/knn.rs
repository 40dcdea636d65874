use super::DiagnosticsError;

/// For each row of the covariate matrix (given column-wise), the indices of
/// its `m` nearest other rows by Euclidean distance after scaling each column
/// to unit sample standard deviation. Ties go to the lower index.
///
/// Exhaustive scan, `O(n^2 d)`.
pub fn knn_indices(columns: &[&[f64]], m: usize) -> Result<Vec<Vec<usize>>, DiagnosticsError> {
    let d = columns.len();
    if d == 0 {
        return Err(DiagnosticsError::NoCovariates);
    }
    let n = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(DiagnosticsError::LengthMismatch {
            expected: n,
            found: c.len(),
        });
    }
    if m == 0 || m >= n {
        return Err(DiagnosticsError::InvalidNeighbourCount { m, n });
    }
    let scaled: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var <= 0.0 {
                return Err(DiagnosticsError::ZeroVariance(j));
            }
            let sd = var.sqrt();
            Ok(c.iter().map(|v| v / sd).collect())
        })
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let dist2: f64 = scaled.iter().map(|c| (c[i] - c[j]).powi(2)).sum();
            cand.push((dist2, j));
        }
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if m < cand.len() {
            cand.select_nth_unstable_by(m - 1, order);
            cand.truncate(m);
        }
        cand.sort_by(order);
        out.push(cand.iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}
