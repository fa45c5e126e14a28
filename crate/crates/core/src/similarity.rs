//! Distance and similarity kernels used by the filters.

use crate::data::{GeoContext, QosMatrix};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in kilometres.
pub fn haversine(a: GeoContext, b: GeoContext) -> f64 {
    let (phi1, phi2) = (a.latitude().to_radians(), b.latitude().to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.longitude() - a.longitude()).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Which way a matrix is read: rows are users, columns are services.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    User,
    Service,
}

/// Cosine similarity between users `i` and `j`.
///
/// The numerator sums over services both users invoked; each norm runs over
/// that user's own invoked services. Empty overlap or a zero norm gives 0.
pub fn cosine_users(i: usize, j: usize, q: &QosMatrix) -> f64 {
    cosine_slices(q.row(i), q.row(j))
}

/// Column-wise mirror of [`cosine_users`].
pub fn cosine_services(i: usize, j: usize, q: &QosMatrix) -> f64 {
    let a: Vec<f64> = q.column(i).collect();
    let b: Vec<f64> = q.column(j).collect();
    cosine_slices(&a, &b)
}

fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x > 0.0 {
            na += x * x;
        }
        if y > 0.0 {
            nb += y * y;
        }
        if x > 0.0 && y > 0.0 {
            dot += x * y;
        }
    }
    finish(dot, na, nb)
}

#[inline]
fn finish(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    if dot == 0.0 || sq_norm_a == 0.0 || sq_norm_b == 0.0 {
        return 0.0;
    }
    (dot / (sq_norm_a.sqrt() * sq_norm_b.sqrt())).clamp(0.0, 1.0)
}

/// Sparse observed profiles of every user (or service) of a matrix, for
/// repeated pairwise cosine evaluations.
#[derive(Debug, Clone)]
pub struct Profiles {
    entries: Vec<Vec<(u32, f64)>>,
    sq_norms: Vec<f64>,
}

impl Profiles {
    pub fn new(q: &QosMatrix, axis: Axis) -> Self {
        let n = match axis {
            Axis::User => q.n_users(),
            Axis::Service => q.n_services(),
        };
        let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for u in 0..q.n_users() {
            for (s, &v) in q.row(u).iter().enumerate() {
                if v > 0.0 {
                    match axis {
                        Axis::User => entries[u].push((s as u32, v)),
                        Axis::Service => entries[s].push((u as u32, v)),
                    }
                }
            }
        }
        let sq_norms = entries
            .iter()
            .map(|e| e.iter().map(|(_, v)| v * v).sum())
            .collect();
        Self { entries, sq_norms }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of observed entries of entity `i`.
    pub fn support(&self, i: usize) -> usize {
        self.entries[i].len()
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.entries[i], &self.entries[j]);
        let (mut x, mut y, mut dot) = (0, 0, 0.0);
        while x < a.len() && y < b.len() {
            match a[x].0.cmp(&b[y].0) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    dot += a[x].1 * b[y].1;
                    x += 1;
                    y += 1;
                }
            }
        }
        finish(dot, self.sq_norms[i], self.sq_norms[j])
    }

    /// Full symmetric similarity matrix, row-major `len × len`, with ones on
    /// the diagonal for entities that have any observation.
    pub fn pairwise(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = if self.sq_norms[i] > 0.0 { 1.0 } else { 0.0 };
            for j in i + 1..n {
                let c = self.cosine(i, j);
                out[i * n + j] = c;
                out[j * n + i] = c;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geo(lat: f64, lon: f64) -> GeoContext {
        GeoContext::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_fixed_points() {
        assert_eq!(haversine(geo(48.85, 2.35), geo(48.85, 2.35)), 0.0);
        assert_abs_diff_eq!(
            haversine(geo(0.0, 0.0), geo(0.0, 180.0)),
            std::f64::consts::PI * EARTH_RADIUS_KM,
            epsilon = 1e-9
        );
        // Berlin - Paris evaluated by hand:
        // dphi = -3.6634 deg, dlambda = -11.0528 deg
        // h = sin^2(-0.031968) + cos(0.916458) cos(0.852708) sin^2(-0.096453) = 0.004735
        // d = 2 * 6371 * asin(sqrt(h)) = 877.46 km
        let d = haversine(geo(52.5200, 13.4050), geo(48.8566, 2.3522));
        assert!((d - 877.5).abs() < 0.1, "{d}");
    }

    #[test]
    fn cosine_hand_values() {
        let q = QosMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(cosine_users(0, 1, &q), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosine_users(0, 0, &q), 1.0, epsilon = 1e-12);

        let q = QosMatrix::from_rows(&[vec![3.0, 0.0, 4.0], vec![0.0, 5.0, 0.0]]).unwrap();
        assert_eq!(cosine_users(0, 1, &q), 0.0);

        // columns over 3 users: s0 = (1, 1, 0), s1 = (1, 0, 2)
        // common user 0 only: 1*1 / (sqrt(2) * sqrt(5)) = 0.316227766
        let q = QosMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(cosine_services(0, 1, &q), 1.0 / 10f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(cosine_services(0, 0, &q), 1.0, epsilon = 1e-12);

        // disjoint user supports
        let q = QosMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(cosine_services(0, 1, &q), 0.0);
    }

    #[test]
    fn norms_use_full_support() {
        // overlap only on service 0; norms include the unshared entries
        let q = QosMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(cosine_users(0, 1, &q), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn profiles_match_direct() {
        let q = QosMatrix::from_rows(&[
            vec![1.0, 0.0, 2.0, 0.5],
            vec![0.0, 3.0, 1.0, 0.0],
            vec![2.0, 1.0, 0.0, 4.0],
        ])
        .unwrap();
        let users = Profiles::new(&q, Axis::User);
        let services = Profiles::new(&q, Axis::Service);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(users.cosine(i, j), cosine_users(i, j, &q), epsilon = 1e-14);
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(services.cosine(i, j), cosine_services(i, j, &q), epsilon = 1e-14);
            }
        }
    }

    fn arb_geo() -> impl Strategy<Value = GeoContext> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| geo(a, b))
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_bounded(a in arb_geo(), b in arb_geo()) {
            let d = haversine(a, b);
            prop_assert_eq!(d, haversine(b, a));
            prop_assert!(d >= 0.0 && d <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
            prop_assert_eq!(haversine(a, a), 0.0);
        }

        #[test]
        fn cosine_symmetric_in_unit_interval(
            rows in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..10.0], 6), 2..5)
        ) {
            let q = QosMatrix::from_rows(&rows).unwrap();
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let c = cosine_users(i, j, &q);
                    prop_assert!((0.0..=1.0).contains(&c));
                    prop_assert_eq!(c, cosine_users(j, i, &q));
                }
            }
        }

        #[test]
        fn scaling_with_identical_support(
            row in prop::collection::vec(0.01f64..10.0, 1..8),
            scale in 0.1f64..10.0,
        ) {
            let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
            let q = QosMatrix::from_rows(&[row, scaled]).unwrap();
            prop_assert!((cosine_users(0, 1, &q) - 1.0).abs() < 1e-12);
        }
    }
}
