//! Seeded generator of WS-DREAM-like datasets for tests, demos and smoke runs.
//!
//! Users and services are scattered around a few geographic regions. Each
//! region has a latent QoS profile, so entities that are close on the map
//! also tend to have correlated QoS histories, and values grow with the
//! great-circle distance between the user and the service.

use rand::Rng;

use crate::data::{Dataset, DatasetKind, Entity, GeoContext, QosKind, QosMatrix};
use crate::similarity::haversine;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_services: usize,
    pub kind: DatasetKind,
    pub qos: QosKind,
    /// Number of time slices; only used for [`DatasetKind::Ws2`].
    pub n_slices: usize,
    pub n_regions: usize,
    pub rank: usize,
    /// Fraction of cells that carry a value.
    pub observed_fraction: f64,
    /// Relative amplitude of the multiplicative noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 40,
            n_services: 60,
            kind: DatasetKind::Ws1,
            qos: QosKind::Rt,
            n_slices: 4,
            n_regions: 4,
            rank: 3,
            observed_fraction: 0.9,
            noise: 0.05,
        }
    }
}

struct Region {
    lat: f64,
    lon: f64,
    profile: Vec<f64>,
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Dataset {
        let mut rng = crate::seed::rng(seed);
        let n_regions = self.n_regions.max(1);
        let rank = self.rank.max(1);
        let regions: Vec<Region> = (0..n_regions)
            .map(|_| Region {
                lat: rng.gen_range(-50.0..60.0),
                lon: rng.gen_range(-170.0..170.0),
                profile: (0..rank).map(|_| rng.gen_range(0.1..1.0)).collect(),
            })
            .collect();

        let place = |rng: &mut rand_chacha::ChaCha8Rng| {
            let r = rng.gen_range(0..n_regions);
            let lat = (regions[r].lat + rng.gen_range(-4.0..4.0)).clamp(-90.0, 90.0);
            let lon = (regions[r].lon + rng.gen_range(-4.0..4.0)).clamp(-180.0, 180.0);
            let factors: Vec<f64> = regions[r]
                .profile
                .iter()
                .map(|p| p * rng.gen_range(0.8..1.2))
                .collect();
            (GeoContext::new(lat, lon).expect("clamped coordinates"), factors)
        };
        let users: Vec<_> = (0..self.n_users).map(|_| place(&mut rng)).collect();
        let services: Vec<_> = (0..self.n_services).map(|_| place(&mut rng)).collect();

        let scale = match self.qos {
            QosKind::Rt => 1.0,
            QosKind::Tp => 40.0,
        };
        let n_matrices = match self.kind {
            DatasetKind::Ws1 => 1,
            DatasetKind::Ws2 => self.n_slices.max(1),
        };
        let matrices = (0..n_matrices)
            .map(|_| {
                let mut m = QosMatrix::zeros(self.n_users, self.n_services);
                for (u, (ug, uf)) in users.iter().enumerate() {
                    for (s, (sg, sf)) in services.iter().enumerate() {
                        if !rng.gen_bool(self.observed_fraction.clamp(0.0, 1.0)) {
                            continue;
                        }
                        let affinity: f64 = uf.iter().zip(sf).map(|(a, b)| a * b).sum();
                        let distance = haversine(*ug, *sg) / 20_000.0;
                        let base = match self.qos {
                            QosKind::Rt => 0.1 + affinity * (1.0 + 2.0 * distance),
                            QosKind::Tp => (0.2 + affinity) / (1.0 + 2.0 * distance),
                        };
                        let jitter = 1.0 + self.noise * rng.gen_range(-1.0..1.0);
                        // three decimals, like the published logs
                        let v = (scale * base * jitter * 1000.0).round() / 1000.0;
                        m.set(u, s, v.max(0.001));
                    }
                }
                m
            })
            .collect();

        let with_context = self.kind == DatasetKind::Ws1;
        let entities = |list: &[(GeoContext, Vec<f64>)]| {
            list.iter()
                .enumerate()
                .map(|(i, (g, _))| Entity {
                    id: i.to_string(),
                    context: with_context.then_some(*g),
                })
                .collect::<Vec<_>>()
        };
        Dataset::new(
            self.kind,
            self.qos,
            entities(&users),
            entities(&services),
            matrices,
        )
        .expect("generator keeps dimensions consistent")
    }
}
