use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cell, QosMatrix};
use crate::error::{Error, Result};

/// Train / validation / test partition of the observed cells of one matrix.
///
/// A `density` fraction of observed cells is kept for training; the rest is
/// divided 1:2 between validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    n_users: usize,
    n_services: usize,
    train_mask: Vec<bool>,
    train: Vec<Cell>,
    validation: Vec<Cell>,
    test: Vec<Cell>,
    density: f64,
    seed: u64,
}

pub fn make_split(matrix: &QosMatrix, density: f64, seed: u64) -> Result<Split> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1), got {density}"
        )));
    }
    let mut observed = matrix.observed_cells();
    if observed.is_empty() {
        return Err(Error::InvalidArgument("matrix has no observed entries".into()));
    }
    let mut rng = crate::seed::rng(seed);
    observed.shuffle(&mut rng);

    let n_train = (density * observed.len() as f64).round() as usize;
    let rest = observed.len() - n_train;
    let n_validation = (rest as f64 / 3.0).round() as usize;

    let mut train = observed[..n_train].to_vec();
    let mut validation = observed[n_train..n_train + n_validation].to_vec();
    let test = observed[n_train + n_validation..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();

    Split::from_parts(
        matrix.n_users(),
        matrix.n_services(),
        train,
        validation,
        test,
        density,
        seed,
    )
}

/// `k` distinct test cells drawn uniformly without replacement.
pub fn sample_test_instances(split: &Split, k: usize, seed: u64) -> Result<Vec<Cell>> {
    if k > split.test.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {k} test instances but the test set holds {}",
            split.test.len()
        )));
    }
    let mut rng = crate::seed::rng(seed);
    Ok(rand::seq::index::sample(&mut rng, split.test.len(), k)
        .into_iter()
        .map(|i| split.test[i])
        .collect())
}

impl Split {
    fn from_parts(
        n_users: usize,
        n_services: usize,
        train: Vec<Cell>,
        validation: Vec<Cell>,
        test: Vec<Cell>,
        density: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut train_mask = vec![false; n_users * n_services];
        let mut seen = vec![0u8; n_users * n_services];
        for (tag, cells) in [(1u8, &train), (2, &validation), (3, &test)] {
            for &(u, s) in cells.iter() {
                if u >= n_users || s >= n_services {
                    return Err(Error::InvalidArgument(format!("cell ({u}, {s}) out of range")));
                }
                let idx = u * n_services + s;
                if seen[idx] != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "cell ({u}, {s}) appears in more than one partition"
                    )));
                }
                seen[idx] = tag;
                if tag == 1 {
                    train_mask[idx] = true;
                }
            }
        }
        Ok(Self {
            n_users,
            n_services,
            train_mask,
            train,
            validation,
            test,
            density,
            seed,
        })
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_users, self.n_services)
    }

    pub fn train_cells(&self) -> &[Cell] {
        &self.train
    }

    pub fn validation_cells(&self) -> &[Cell] {
        &self.validation
    }

    pub fn test_cells(&self) -> &[Cell] {
        &self.test
    }

    pub fn is_train(&self, user: usize, service: usize) -> bool {
        self.train_mask[user * self.n_services + service]
    }

    /// The matrix with everything except training cells zeroed.
    pub fn training_matrix(&self, matrix: &QosMatrix) -> Result<QosMatrix> {
        if (matrix.n_users(), matrix.n_services()) != self.dims() {
            return Err(Error::Dimension(format!(
                "split is {}x{} but matrix is {}x{}",
                self.n_users,
                self.n_services,
                matrix.n_users(),
                matrix.n_services()
            )));
        }
        let mut out = QosMatrix::zeros(self.n_users, self.n_services);
        for &(u, s) in &self.train {
            out.set(u, s, matrix.get(u, s));
        }
        Ok(out)
    }

    /// SHA-256 over the text serialization, hex encoded. Paired runs compare
    /// fingerprints to confirm they saw identical partitions.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Line-oriented export:
    ///
    /// ```text
    /// qos-split 1
    /// dims <users> <services>
    /// density <x>
    /// seed <n>
    /// train <count>
    /// <user> <service>
    /// ...
    /// validation <count>
    /// ...
    /// test <count>
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "qos-split 1");
        let _ = writeln!(out, "dims {} {}", self.n_users, self.n_services);
        let _ = writeln!(out, "density {}", self.density);
        let _ = writeln!(out, "seed {}", self.seed);
        for (name, cells) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let _ = writeln!(out, "{name} {}", cells.len());
            for (u, s) in cells.iter() {
                let _ = writeln!(out, "{u} {s}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
        let mut pos = 0;
        let bad = |line: usize, message: &str| Error::Parse {
            path: "<split>".into(),
            line: line + 1,
            message: message.to_string(),
        };
        let field = |pos: &mut usize, key: &str| -> Result<(usize, Vec<String>)> {
            let &(no, line) = lines.get(*pos).ok_or_else(|| bad(0, &format!("missing `{key}` line")))?;
            *pos += 1;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(no, &format!("expected `{key}`")));
            }
            Ok((no, parts.map(str::to_string).collect()))
        };
        let (no, version) = field(&mut pos, "qos-split")?;
        if version != ["1"] {
            return Err(bad(no, "unsupported split version"));
        }
        let num = |no: usize, s: Option<&String>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| bad(no, "expected an integer"))
        };
        let (no, dims) = field(&mut pos, "dims")?;
        let (n_users, n_services) = (num(no, dims.first())?, num(no, dims.get(1))?);
        let (no, density) = field(&mut pos, "density")?;
        let density: f64 = density
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(no, "expected a number"))?;
        let (no, seed) = field(&mut pos, "seed")?;
        let seed: u64 = seed.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad(no, "expected a seed"))?;

        let mut parts: Vec<Vec<Cell>> = Vec::new();
        for key in ["train", "validation", "test"] {
            let (no, count) = field(&mut pos, key)?;
            let count = num(no, count.first())?;
            let mut cells = Vec::with_capacity(count);
            for _ in 0..count {
                let &(no, line) = lines.get(pos).ok_or_else(|| bad(no, "truncated cell list"))?;
                pos += 1;
                let mut it = line.split_whitespace().map(|t| t.parse::<usize>());
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(u)), Some(Ok(s)), None) => cells.push((u, s)),
                    _ => return Err(bad(no, "expected `<user> <service>`")),
                }
            }
            parts.push(cells);
        }
        let test = parts.pop().unwrap_or_default();
        let validation = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Self::from_parts(n_users, n_services, train, validation, test, density, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix_with_observed(n: usize) -> QosMatrix {
        // 50 x 40 grid, first n cells observed
        let mut m = QosMatrix::zeros(50, 40);
        for i in 0..n {
            m.set(i / 40, i % 40, 1.0 + i as f64);
        }
        m
    }

    #[test]
    fn thousand_cells_at_ten_percent() {
        let m = matrix_with_observed(1000);
        let split = make_split(&m, 0.10, 7).unwrap();
        assert_eq!(split.train_cells().len(), 100);
        assert_eq!(split.validation_cells().len(), 300);
        assert_eq!(split.test_cells().len(), 600);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = matrix_with_observed(1000);
        let a = make_split(&m, 0.10, 11).unwrap();
        let b = make_split(&m, 0.10, 11).unwrap();
        assert_eq!(a, b);
        let c = make_split(&m, 0.10, 12).unwrap();
        assert_ne!(a.train_cells(), c.train_cells());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn invalid_arguments() {
        let m = matrix_with_observed(10);
        assert!(make_split(&m, 0.0, 1).is_err());
        assert!(make_split(&m, 1.0, 1).is_err());
        assert!(make_split(&QosMatrix::zeros(3, 3), 0.5, 1).is_err());
    }

    #[test]
    fn sampling_test_instances() {
        let m = matrix_with_observed(1000);
        let split = make_split(&m, 0.10, 3).unwrap();
        let sample = sample_test_instances(&split, 200, 9).unwrap();
        let mut uniq = sample.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 200);
        assert!(sample.iter().all(|c| split.test_cells().contains(c)));
        assert_eq!(sample, sample_test_instances(&split, 200, 9).unwrap());

        let mut all = sample_test_instances(&split, 600, 1).unwrap();
        all.sort_unstable();
        let mut test = split.test_cells().to_vec();
        test.sort_unstable();
        assert_eq!(all, test);

        assert!(sample_test_instances(&split, 601, 1).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let m = matrix_with_observed(77);
        let split = make_split(&m, 0.3, 5).unwrap();
        let back = Split::from_text(&split.to_text()).unwrap();
        assert_eq!(split, back);
        assert!(Split::from_text("qos-split 2\n").is_err());
    }

    #[test]
    fn training_matrix_keeps_only_train_cells() {
        let m = matrix_with_observed(300);
        let split = make_split(&m, 0.2, 1).unwrap();
        let t = split.training_matrix(&m).unwrap();
        assert_eq!(t.observed_count(), split.train_cells().len());
        for (u, s) in m.observed_cells() {
            assert_eq!(t.is_observed(u, s), split.is_train(u, s));
        }
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_observed(
            n in 1usize..400,
            density in 0.01f64..0.99,
            seed in any::<u64>(),
        ) {
            let m = matrix_with_observed(n);
            let split = make_split(&m, density, seed).unwrap();
            let mut all: Vec<Cell> = split.train_cells().iter()
                .chain(split.validation_cells())
                .chain(split.test_cells())
                .copied()
                .collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            prop_assert!(all.iter().all(|&(u, s)| m.is_observed(u, s)));
            let rest = n - split.train_cells().len();
            prop_assert_eq!(split.validation_cells().len(), (rest as f64 / 3.0).round() as usize);
        }
    }
}
