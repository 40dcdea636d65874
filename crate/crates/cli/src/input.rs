//! Headered CSV input and `--term` parsing.

use std::path::Path;

use kcheck::{BasisSpec, Dataset};

use crate::CliError;

/// Raw CSV contents; columns are parsed to numbers only when requested, so
/// unrelated text columns do not get in the way.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let records = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(Self { headers, records })
    }

    fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("column '{name}' not found in input")))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let idx = self.column_index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(row, rec)| {
                let field = rec.get(idx).unwrap_or("");
                if field.is_empty() {
                    return Err(CliError::Input(format!(
                        "missing value in column '{name}', data row {}",
                        row + 1
                    )));
                }
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::Input(format!(
                        "non-numeric value '{field}' in column '{name}', data row {}",
                        row + 1
                    ))),
                }
            })
            .collect()
    }

    /// Dataset holding the named columns, in the given order, without repeats.
    pub fn dataset(&self, names: &[&str]) -> Result<Dataset, CliError> {
        let mut data = Dataset::new();
        for name in names {
            if data.column(name).is_some() {
                continue;
            }
            let col = self.numeric_column(name)?;
            data.push_column(*name, col)
                .map_err(|e| CliError::Input(e.to_string()))?;
        }
        Ok(data)
    }
}

/// Parses `name:k`, `a,b:k` (tensor with total dimension `k`) or
/// `a,b:k1:k2` (tensor with explicit marginal dimensions).
pub fn parse_term(text: &str) -> Result<BasisSpec, String> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("invalid basis dimension '{s}' in term '{text}'"))
    };
    let covariates: Vec<&str> = parts[0].split(',').map(str::trim).collect();
    if covariates.iter().any(|c| c.is_empty()) {
        return Err(format!("empty covariate name in term '{text}'"));
    }
    match (covariates.as_slice(), &parts[1..]) {
        ([x], [k]) => Ok(BasisSpec::univariate(*x, dim(k)?)),
        ([a, b], [k]) => Ok(BasisSpec::tensor(*a, *b, dim(k)?)),
        ([a, b], [k1, k2]) => Ok(BasisSpec::tensor_with_marginals(*a, *b, dim(k1)?, dim(k2)?)),
        ([_], [_, _]) => Err(format!(
            "term '{text}': a second dimension is only allowed for two-covariate terms"
        )),
        (_, []) => Err(format!("term '{text}' needs a basis dimension, e.g. x:10")),
        _ => Err(format!(
            "cannot parse term '{text}' (expected name:k, a,b:k or a,b:k1:k2)"
        )),
    }
}

/// Label used in reports, e.g. `s(x)` or `te(x1,x2)`.
pub fn term_label(spec: &BasisSpec) -> String {
    match spec.covariates.as_slice() {
        [x] => format!("s({x})"),
        cs => format!("te({})", cs.join(",")),
    }
}
