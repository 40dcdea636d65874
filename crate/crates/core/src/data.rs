use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("column '{name}' has {found} rows, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column '{0}'")]
    DuplicateColumn(String),
    #[error("column '{0}' contains a non-finite value")]
    NonFinite(String),
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self, DataError> {
        self.push_column(name, values)?;
        Ok(self)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), DataError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(DataError::DuplicateColumn(name));
        }
        if let Some(first) = self.columns.first() {
            if first.len() != values.len() {
                return Err(DataError::LengthMismatch {
                    name,
                    expected: first.len(),
                    found: values.len(),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(name));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Replaces an existing column or appends a new one.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<(), DataError> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => {
                if values.len() != self.columns[i].len() {
                    return Err(DataError::LengthMismatch {
                        name: name.to_string(),
                        expected: self.columns[i].len(),
                        found: values.len(),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::NonFinite(name.to_string()));
                }
                self.columns[i] = values;
                Ok(())
            }
            None => self.push_column(name, values),
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` here.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| order.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_bookkeeping() {
        let mut d = Dataset::new()
            .with_column("x", vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_column("y", vec![0.0, 0.5, 1.0])
            .unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.column("y"), Some(&[0.0, 0.5, 1.0][..]));
        assert!(d.column("z").is_none());
        assert!(matches!(
            d.push_column("z", vec![1.0]),
            Err(DataError::LengthMismatch { .. })
        ));
        assert!(matches!(
            d.push_column("x", vec![1.0, 1.0, 1.0]),
            Err(DataError::DuplicateColumn(_))
        ));
        assert!(matches!(
            d.push_column("w", vec![1.0, f64::NAN, 1.0]),
            Err(DataError::NonFinite(_))
        ));
        d.set_column("y", vec![9.0, 8.0, 7.0]).unwrap();
        let p = d.permute_rows(&[2, 0, 1]);
        assert_eq!(p.column("y"), Some(&[7.0, 9.0, 8.0][..]));
    }
}
