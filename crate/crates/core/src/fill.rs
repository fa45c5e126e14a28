//! Sparsity filling of filtered submatrices.
//!
//! [`cf_fill`] predicts every missing cell from a similarity-weighted average
//! of the neighbours' values, corrected by the weighted mean deviation the
//! same average shows on the cells the entity did observe. [`mf_fill`] fits
//! a regularized low-rank factorization with SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, QosMatrix};
use crate::error::{Error, Result};
use crate::filtering::{FilterMode, FilterResult};
use crate::similarity::{Axis, Profiles};

/// How the deviation correction combines per-cell deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    /// Weighted mean of signed deviations added to the average.
    #[default]
    SignedMean,
    /// Reserved; not implemented.
    MajoritySign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfFill {
    pub matrix: QosMatrix,
    /// Missing cells no neighbour could inform, filled with the observed mean.
    pub fallback_cells: usize,
}

/// Collaborative fill of a filter result. User-intensive results average over
/// similar users and correct with service similarities; service-intensive
/// results do the reverse.
pub fn cf_fill(result: &FilterResult, mode: DeviationMode) -> Result<CfFill> {
    cf_fill_matrix(&result.submatrix, result.mode, mode)
}

pub fn cf_fill_matrix(q: &QosMatrix, filter: FilterMode, mode: DeviationMode) -> Result<CfFill> {
    if mode == DeviationMode::MajoritySign {
        return Err(Error::Unsupported("deviation_mode `majority_sign` is reserved".into()));
    }
    match filter {
        FilterMode::UserIntensive => fill_by_rows(q),
        FilterMode::ServiceIntensive => {
            let out = fill_by_rows(&q.transpose())?;
            Ok(CfFill {
                matrix: out.matrix.transpose(),
                fallback_cells: out.fallback_cells,
            })
        }
    }
}

/// Row-neighbour fill: averages over other rows, deviation over columns.
fn fill_by_rows(q: &QosMatrix) -> Result<CfFill> {
    let (n, m) = (q.n_users(), q.n_services());
    let mean = q
        .observed_mean()
        .ok_or_else(|| Error::Degenerate("cannot fill a matrix with no observed entries".into()))?;
    if q.observed_count() == n * m {
        return Ok(CfFill {
            matrix: q.clone(),
            fallback_cells: 0,
        });
    }
    let row_sim = Profiles::new(q, Axis::User).pairwise();
    let col_sim = Profiles::new(q, Axis::Service).pairwise();

    let avg = row_averages(q, &row_sim);

    let mut out = q.clone();
    let mut fallback_cells = 0;
    for i in 0..n {
        let row = q.row(i);
        for j in 0..m {
            if row[j] > 0.0 {
                continue;
            }
            let a = avg[i * m + j];
            if a.is_nan() {
                out.set(i, j, mean);
                fallback_cells += 1;
                continue;
            }
            let w = &col_sim[j * m..(j + 1) * m];
            let (mut num, mut den) = (0.0, 0.0);
            for l in 0..m {
                let al = avg[i * m + l];
                if row[l] > 0.0 && !al.is_nan() {
                    num += w[l] * (row[l] - al);
                    den += w[l];
                }
            }
            let d = if den > 0.0 { num / den } else { 0.0 };
            out.set(i, j, (a + d).max(0.0));
        }
    }
    Ok(CfFill {
        matrix: out,
        fallback_cells,
    })
}

/// `avg[i·m + j]`: similarity-weighted average of column `j` over the rows
/// `k != i` that observed it; NaN when those weights sum to zero.
fn row_averages(q: &QosMatrix, row_sim: &[f64]) -> Vec<f64> {
    let (n, m) = (q.n_users(), q.n_services());
    let mut avg = vec![f64::NAN; n * m];
    for i in 0..n {
        let w = &row_sim[i * n..(i + 1) * n];
        for j in 0..m {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..n {
                let v = q.get(k, j);
                if k != i && v > 0.0 {
                    num += w[k] * v;
                    den += w[k];
                }
            }
            if den > 0.0 {
                avg[i * m + j] = num / den;
            }
        }
    }
    avg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            learning_rate: 0.005,
            regularization: 0.02,
            epochs: 500,
            seed: 0,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.epochs == 0 {
            return Err(Error::Config("mf rank and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.regularization >= 0.0) {
            return Err(Error::Config("mf learning_rate must be > 0 and regularization >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfFill {
    pub matrix: QosMatrix,
    /// Regularized squared error before the first and after the kept epoch.
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn mf_fill(result: &FilterResult, config: &MfConfig) -> Result<MfFill> {
    mf_fill_matrix(&result.submatrix, config)
}

/// Factorizes the observed entries of `q` as `P·Qᵀ` and fills the missing
/// cells with the reconstruction. Values are divided by the observed mean
/// during training so one learning rate suits every QoS scale.
pub fn mf_fill_matrix(q: &QosMatrix, config: &MfConfig) -> Result<MfFill> {
    config.validate()?;
    let (n, m) = (q.n_users(), q.n_services());
    let mean = q
        .observed_mean()
        .ok_or_else(|| Error::Degenerate("cannot factorize a matrix with no observed entries".into()))?;
    let mut cells: Vec<Cell> = q.observed_cells();
    if cells.len() == n * m {
        return Ok(MfFill {
            matrix: q.clone(),
            initial_loss: 0.0,
            final_loss: 0.0,
        });
    }
    let r = config.rank;
    let mut rng = crate::seed::rng(config.seed);
    let hi = 0.1; // 0.1·sqrt(mean) in units of the mean
    let mut p: Vec<f64> = (0..n * r).map(|_| rng.gen_range(0.0..hi)).collect();
    let mut f: Vec<f64> = (0..m * r).map(|_| rng.gen_range(0.0..hi)).collect();
    let target = |u: usize, s: usize| q.get(u, s) / mean;

    let loss = |cells: &[Cell], p: &[f64], f: &[f64]| -> f64 {
        let mut l = 0.0;
        for &(u, s) in cells {
            let e = target(u, s) - dot(&p[u * r..(u + 1) * r], &f[s * r..(s + 1) * r]);
            l += e * e;
        }
        let reg: f64 = p.iter().chain(f.iter()).map(|x| x * x).sum();
        l + config.regularization * reg
    };

    let initial_loss = loss(&cells, &p, &f);
    let (mut best_p, mut best_f, mut best_loss) = (p.clone(), f.clone(), initial_loss);
    let (lr, lambda) = (config.learning_rate, config.regularization);
    for _ in 0..config.epochs {
        cells.shuffle(&mut rng);
        for &(u, s) in &cells {
            let (pu, fs) = (&mut p[u * r..(u + 1) * r], &mut f[s * r..(s + 1) * r]);
            let e = target(u, s) - dot(pu, fs);
            for x in 0..r {
                let (a, b) = (pu[x], fs[x]);
                pu[x] += lr * (e * b - lambda * a);
                fs[x] += lr * (e * a - lambda * b);
            }
        }
        let l = loss(&cells, &p, &f);
        if !l.is_finite() {
            break;
        }
        if l < best_loss {
            best_loss = l;
            best_p.copy_from_slice(&p);
            best_f.copy_from_slice(&f);
        }
    }

    let mut out = q.clone();
    for u in 0..n {
        for s in 0..m {
            if !q.is_observed(u, s) {
                let v = mean * dot(&best_p[u * r..(u + 1) * r], &best_f[s * r..(s + 1) * r]);
                out.set(u, s, v.max(0.0));
            }
        }
    }
    Ok(MfFill {
        matrix: out,
        // losses reported in the original units
        initial_loss: initial_loss * mean * mean,
        final_loss: best_loss * mean * mean,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The four dense matrices that feed the level-1 regressors, in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledMatrices {
    pub cf_ui: QosMatrix,
    pub mf_ui: QosMatrix,
    pub cf_si: QosMatrix,
    pub mf_si: QosMatrix,
    pub cf_fallback_cells: usize,
}

impl FilledMatrices {
    pub fn blocks(&self) -> [&QosMatrix; 4] {
        [&self.cf_ui, &self.mf_ui, &self.cf_si, &self.mf_si]
    }
}

/// Fills both filter results with both methods; the two factorizations run in
/// parallel with seeds derived from `mf.seed`.
pub fn fill_all(ui: &FilterResult, si: &FilterResult, deviation: DeviationMode, mf: &MfConfig) -> Result<FilledMatrices> {
    let mf_ui_cfg = MfConfig {
        seed: crate::seed::mix(mf.seed, 1),
        ..*mf
    };
    let mf_si_cfg = MfConfig {
        seed: crate::seed::mix(mf.seed, 3),
        ..*mf
    };
    let ((cf_ui, cf_si), (mf_ui, mf_si)) = rayon::join(
        || (cf_fill(ui, deviation), cf_fill(si, deviation)),
        || rayon::join(|| mf_fill(ui, &mf_ui_cfg), || mf_fill(si, &mf_si_cfg)),
    );
    let (cf_ui, cf_si) = (cf_ui?, cf_si?);
    Ok(FilledMatrices {
        cf_fallback_cells: cf_ui.fallback_cells + cf_si.fallback_cells,
        cf_ui: cf_ui.matrix,
        mf_ui: mf_ui?.matrix,
        cf_si: cf_si.matrix,
        mf_si: mf_si?.matrix,
    })
}
