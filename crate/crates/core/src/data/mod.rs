//! QoS invocation logs, entity contexts and experiment splits.

mod load;
mod matrix;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use load::{load_dataset, write_ws1, write_ws2};
pub use matrix::{Cell, QosMatrix};
pub use split::{make_split, sample_test_instances, Split};

use crate::error::{Error, Result};

/// Latitude / longitude of a user or service, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoContext {
    latitude: f64,
    longitude: f64,
}

impl GeoContext {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::InvalidArgument(format!(
                "coordinates out of range: ({latitude}, {longitude})"
            )));
        }
        Ok(Self {
            latitude,
            longitude,
        })
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn longitude(&self) -> f64 {
        self.longitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub context: Option<GeoContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// One user × service matrix with user/service locations.
    Ws1,
    /// 64 time-slice matrices, no locations.
    Ws2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QosKind {
    /// Response time.
    Rt,
    /// Throughput.
    Tp,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ws1" | "ws-dream-1" => Ok(Self::Ws1),
            "ws2" | "ws-dream-2" => Ok(Self::Ws2),
            other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

impl FromStr for QosKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rt" => Ok(Self::Rt),
            "tp" => Ok(Self::Tp),
            other => Err(Error::InvalidArgument(format!("unknown QoS parameter `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ws1 => "ws1",
            Self::Ws2 => "ws2",
        })
    }
}

impl fmt::Display for QosKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rt => "rt",
            Self::Tp => "tp",
        })
    }
}

/// Users, services and one QoS matrix per time slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub qos: QosKind,
    pub users: Vec<Entity>,
    pub services: Vec<Entity>,
    pub matrices: Vec<QosMatrix>,
}

impl Dataset {
    pub fn new(
        kind: DatasetKind,
        qos: QosKind,
        users: Vec<Entity>,
        services: Vec<Entity>,
        matrices: Vec<QosMatrix>,
    ) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidArgument("dataset has no matrices".into()));
        }
        for m in &matrices {
            if m.n_users() != users.len() || m.n_services() != services.len() {
                return Err(Error::Dimension(format!(
                    "matrix is {}x{} but the registries hold {} users and {} services",
                    m.n_users(),
                    m.n_services(),
                    users.len(),
                    services.len()
                )));
            }
        }
        Ok(Self {
            kind,
            qos,
            users,
            services,
            matrices,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_services(&self) -> usize {
        self.services.len()
    }

    /// True when any user or service lacks a location. Context-aware filtering
    /// is bypassed for such datasets.
    pub fn is_context_free(&self) -> bool {
        self.users
            .iter()
            .chain(&self.services)
            .any(|e| e.context.is_none())
    }

    pub fn user_contexts(&self) -> Option<Vec<GeoContext>> {
        self.users.iter().map(|e| e.context).collect()
    }

    pub fn service_contexts(&self) -> Option<Vec<GeoContext>> {
        self.services.iter().map(|e| e.context).collect()
    }

    /// Restriction to the given users and services (every slice).
    pub fn sub_block(&self, users: &[usize], services: &[usize]) -> Result<Dataset> {
        if users.iter().any(|&u| u >= self.n_users()) || services.iter().any(|&s| s >= self.n_services()) {
            return Err(Error::InvalidArgument("sub-block index out of range".into()));
        }
        Dataset::new(
            self.kind,
            self.qos,
            users.iter().map(|&u| self.users[u].clone()).collect(),
            services.iter().map(|&s| self.services[s].clone()).collect(),
            self.matrices
                .iter()
                .map(|m| m.submatrix(users, services))
                .collect(),
        )
    }

    /// A random `n_users × n_services` sub-block chosen under `seed`; indices
    /// are kept in ascending order.
    pub fn random_sub_block(&self, n_users: usize, n_services: usize, seed: u64) -> Result<Dataset> {
        if n_users > self.n_users() || n_services > self.n_services() {
            return Err(Error::InvalidArgument(format!(
                "sub-block {n_users}x{n_services} exceeds dataset {}x{}",
                self.n_users(),
                self.n_services()
            )));
        }
        let mut rng = crate::seed::rng(seed);
        let mut users = rand::seq::index::sample(&mut rng, self.n_users(), n_users).into_vec();
        let mut services = rand::seq::index::sample(&mut rng, self.n_services(), n_services).into_vec();
        users.sort_unstable();
        services.sort_unstable();
        self.sub_block(&users, &services)
    }
}
