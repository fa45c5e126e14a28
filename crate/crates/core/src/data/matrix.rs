use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell of a user × service matrix: `(user, service)`.
pub type Cell = (usize, usize);

/// Dense user × service QoS log. A zero entry means the pair was never
/// observed; every stored value is non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosMatrix {
    n_users: usize,
    n_services: usize,
    values: Vec<f64>,
}

impl QosMatrix {
    pub fn zeros(n_users: usize, n_services: usize) -> Self {
        Self {
            n_users,
            n_services,
            values: vec![0.0; n_users * n_services],
        }
    }

    /// Builds a matrix from row-major values.
    pub fn from_row_major(n_users: usize, n_services: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_users * n_services {
            return Err(Error::Dimension(format!(
                "expected {} values for a {}x{} matrix, got {}",
                n_users * n_services,
                n_users,
                n_services,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "QoS values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            n_users,
            n_services,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_services = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_services) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_row_major(rows.len(), n_services, rows.concat())
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_services(&self) -> usize {
        self.n_services
    }

    #[inline]
    pub fn get(&self, user: usize, service: usize) -> f64 {
        self.values[user * self.n_services + service]
    }

    /// Sets a cell. Negative values are stored as 0 (unobserved).
    #[inline]
    pub fn set(&mut self, user: usize, service: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.values[user * self.n_services + service] = value.max(0.0);
    }

    #[inline]
    pub fn is_observed(&self, user: usize, service: usize) -> bool {
        self.get(user, service) > 0.0
    }

    pub fn row(&self, user: usize) -> &[f64] {
        let start = user * self.n_services;
        &self.values[start..start + self.n_services]
    }

    pub fn column(&self, service: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_users).map(move |u| self.get(u, service))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_services.max(1)).take(self.n_users)
    }

    /// Observed cells in row-major order.
    pub fn observed_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for u in 0..self.n_users {
            for (s, v) in self.row(u).iter().enumerate() {
                if *v > 0.0 {
                    cells.push((u, s));
                }
            }
        }
        cells
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn density(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.observed_count() as f64 / self.values.len() as f64
        }
    }

    pub fn observed_mean(&self) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .filter(|v| **v > 0.0)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Minimum and maximum over observed entries.
    pub fn observed_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .filter(|v| **v > 0.0)
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Rows `users` and columns `services`, in the given order.
    pub fn submatrix(&self, users: &[usize], services: &[usize]) -> QosMatrix {
        let mut values = Vec::with_capacity(users.len() * services.len());
        for &u in users {
            let row = self.row(u);
            values.extend(services.iter().map(|&s| row[s]));
        }
        QosMatrix {
            n_users: users.len(),
            n_services: services.len(),
            values,
        }
    }

    pub fn transpose(&self) -> QosMatrix {
        let mut values = vec![0.0; self.values.len()];
        for u in 0..self.n_users {
            for s in 0..self.n_services {
                values[s * self.n_users + u] = self.get(u, s);
            }
        }
        QosMatrix {
            n_users: self.n_services,
            n_services: self.n_users,
            values,
        }
    }

    /// Copy with the listed cells zeroed.
    pub fn masked(&self, cells: &[Cell]) -> QosMatrix {
        let mut out = self.clone();
        for &(u, s) in cells {
            out.set(u, s, 0.0);
        }
        out
    }
}
