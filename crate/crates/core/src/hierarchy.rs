//! Two-level hierarchical prediction.
//!
//! Four level-1 regressors, one per filled block (`cf_ui`, `mf_ui`, `cf_si`,
//! `mf_si`), each predict the target cell. A controller then either trains a
//! level-2 regressor on held-out level-1 outputs, when the two filtered
//! sub-matrices share at least `t_d` observed cells, or returns the level-1
//! output of the block with the lowest held-out MAE (MAE-Ag).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Aggregator, ControllerMode, Level1, PipelineConfig};
use crate::data::{Cell, QosMatrix};
use crate::error::{Error, Result};
use crate::fill::{cf_fill_matrix, fill_all, mf_fill_matrix, FilledMatrices, MfConfig};
use crate::filtering::{filter, FilterInput, FilterMode, FilterResult};
use crate::neural::{train_masked, Mlp, MlpConfig};
use crate::seed::{mix, mix_all};

pub const BLOCK_NAMES: [&str; 4] = ["cf_ui", "mf_ui", "cf_si", "mf_si"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Nrl2,
    MaeAg,
}

pub fn select_branch(common_cells: usize, t_d: usize) -> Branch {
    if common_cells >= t_d {
        Branch::Nrl2
    } else {
        Branch::MaeAg
    }
}

/// The filled blocks together with the filter results they were built from.
#[derive(Debug, Clone, Copy)]
pub struct Blocks<'a> {
    pub filled: &'a FilledMatrices,
    pub ui: &'a FilterResult,
    pub si: &'a FilterResult,
}

impl<'a> Blocks<'a> {
    pub fn matrix(&self, b: usize) -> &'a QosMatrix {
        self.filled.blocks()[b]
    }

    pub fn filter(&self, b: usize) -> &'a FilterResult {
        if b < 2 {
            self.ui
        } else {
            self.si
        }
    }

    /// Local coordinates of the target inside block `b`.
    pub fn target(&self, b: usize) -> Cell {
        let f = self.filter(b);
        (f.target_row, f.target_col)
    }

    /// Local coordinates of a global cell inside block `b`, if present.
    pub fn local(&self, b: usize, (u, s): Cell) -> Option<Cell> {
        let f = self.filter(b);
        Some((f.users.binary_search(&u).ok()?, f.services.binary_search(&s).ok()?))
    }

    fn cf_value(&self, b: usize) -> f64 {
        let (r, c) = self.target(b);
        if b < 2 {
            self.filled.cf_ui.get(r, c)
        } else {
            self.filled.cf_si.get(r, c)
        }
    }
}

struct ColumnNet {
    net: Mlp,
    inputs: Vec<usize>,
}

impl ColumnNet {
    fn predict(&self, m: &QosMatrix, row: usize) -> Result<Vec<f64>> {
        let r = m.row(row);
        let x: Vec<f64> = self.inputs.iter().map(|&c| r[c]).collect();
        self.net.predict_all(&x)
    }
}

/// Fits a network that maps the columns outside `excluded` and `labels` to
/// `labels`, trained on rows outside `skip_rows`. Cells in `held` are left out
/// of the cost, as are unobserved labels when `observed_only` is set. `None`
/// means fewer than two usable rows, no input column, or divergence.
fn fit_columns(
    m: &QosMatrix,
    skip_rows: &[usize],
    excluded: &[usize],
    labels: &[usize],
    held: &[Cell],
    observed_only: bool,
    config: &MlpConfig,
) -> Result<Option<ColumnNet>> {
    let inputs: Vec<usize> = (0..m.n_services())
        .filter(|c| !excluded.contains(c) && !labels.contains(c))
        .collect();
    if inputs.is_empty() {
        return Ok(None);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut masks = Vec::new();
    for r in (0..m.n_users()).filter(|r| !skip_rows.contains(r)) {
        let mask: Vec<bool> = labels
            .iter()
            .map(|&c| !held.contains(&(r, c)) && (!observed_only || m.is_observed(r, c)))
            .collect();
        if !mask.iter().any(|&k| k) {
            continue;
        }
        let row = m.row(r);
        xs.push(inputs.iter().map(|&c| row[c]).collect::<Vec<_>>());
        ys.push(labels.iter().map(|&c| row[c]).collect::<Vec<_>>());
        masks.push(mask);
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    match train_masked(config, &xs, &ys, &masks) {
        Ok(net) => Ok(Some(ColumnNet { net, inputs })),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Predicts `matrix[row][col]` with a network trained on every other row,
/// using every other column as input. With `observed_only`, rows whose label
/// is unobserved are not used for training. `None` when fewer than two rows
/// are usable or training diverges.
pub fn level1_predict(matrix: &QosMatrix, row: usize, col: usize, config: &MlpConfig, observed_only: bool) -> Result<Option<f64>> {
    if row >= matrix.n_users() || col >= matrix.n_services() {
        return Err(Error::InvalidArgument(format!("target ({row}, {col}) is outside the block")));
    }
    Ok(fit_columns(matrix, &[row], &[], &[col], &[], observed_only, config)?
        .map(|net| net.predict(matrix, row).map(|v| v[0]))
        .transpose()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nrl1Output {
    /// One prediction per block, in block order.
    pub phi: [f64; 4],
    /// Blocks whose network could not be trained and report the CF value instead.
    pub fallback: [bool; 4],
}

/// Level-1 predictions for the target. All four networks share `config.seed`,
/// so identical blocks give identical outputs.
pub fn run_nrl1(blocks: &Blocks<'_>, config: &MlpConfig) -> Result<Nrl1Output> {
    let outs: Vec<Option<f64>> = (0..4)
        .into_par_iter()
        .map(|b| {
            let (r, c) = blocks.target(b);
            level1_predict(blocks.matrix(b), r, c, config, false)
        })
        .collect::<Result<_>>()?;
    let mut phi = [0.0; 4];
    let mut fallback = [false; 4];
    for (b, o) in outs.into_iter().enumerate() {
        match o {
            Some(v) => phi[b] = v,
            None => {
                phi[b] = blocks.cf_value(b);
                fallback[b] = true;
            }
        }
    }
    Ok(Nrl1Output { phi, fallback })
}

/// Observed training cells, in global coordinates, whose user and service
/// belong to both filter results.
pub fn common_observed_cells(ui: &FilterResult, si: &FilterResult) -> Vec<Cell> {
    let users: Vec<(usize, usize)> = ui
        .users
        .iter()
        .enumerate()
        .filter(|(_, u)| si.users.binary_search(u).is_ok())
        .map(|(r, &u)| (r, u))
        .collect();
    let services: Vec<(usize, usize)> = ui
        .services
        .iter()
        .enumerate()
        .filter(|(_, s)| si.services.binary_search(s).is_ok())
        .map(|(c, &s)| (c, s))
        .collect();
    let target = (ui.users[ui.target_row], ui.services[ui.target_col]);
    let mut cells = Vec::new();
    for &(r, u) in &users {
        for &(c, s) in &services {
            if ui.submatrix.is_observed(r, c) && (u, s) != target {
                cells.push((u, s));
            }
        }
    }
    cells
}

/// Training data gathered by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerData {
    pub branch: Branch,
    pub common_cells: usize,
    /// Level-2 samples: the four held-out level-1 outputs and the observed value.
    pub samples: Vec<([f64; 4], f64)>,
    /// Per-block `(predicted, observed)` pairs for MAE-Ag.
    pub per_block: [Vec<(f64, f64)>; 4],
    pub diagnostics: Vec<String>,
}

/// Held-out level-1 outputs for `cells` (local to block `b`).
fn held_out(blocks: &Blocks<'_>, b: usize, cells: &[Cell], config: &PipelineConfig, seed: u64, diagnostics: &mut Vec<String>) -> Result<Vec<f64>> {
    let m = blocks.matrix(b);
    let (t_row, t_col) = blocks.target(b);
    match config.level1 {
        Level1::FillValues => {
            let f = blocks.filter(b);
            let observed = f.submatrix.observed_count();
            // when every observed cell is held out, refill in halves
            let fold = if cells.len() < observed { cells.len() } else { (observed / 2).max(1) };
            let mut out = Vec::with_capacity(cells.len());
            for part in cells.chunks(fold.max(1)) {
                let masked = f.submatrix.masked(part);
                if masked.observed_count() == 0 {
                    diagnostics.push(format!("{}: nothing left to refill from; using the observed mean", BLOCK_NAMES[b]));
                    let mean = f.submatrix.observed_mean().unwrap_or(0.0);
                    out.extend(part.iter().map(|_| mean));
                    continue;
                }
                let refilled = if b % 2 == 0 {
                    cf_fill_matrix(&masked, f.mode, config.deviation_mode)?.matrix
                } else {
                    let mf = MfConfig {
                        seed: mix(mix(seed, 10), b as u64),
                        ..config.mf
                    };
                    mf_fill_matrix(&masked, &mf)?.matrix
                };
                out.extend(part.iter().map(|&(r, c)| refilled.get(r, c)));
            }
            Ok(out)
        }
        Level1::Neural => {
            let nrl1 = MlpConfig {
                seed: mix(seed, 40),
                ..config.nrl1.clone()
            };
            let column_mean = |c: usize, skip: &[Cell]| {
                let vals: Vec<f64> = (0..m.n_users())
                    .filter(|&r| r != t_row && !skip.contains(&(r, c)))
                    .map(|r| m.get(r, c))
                    .collect();
                if vals.is_empty() {
                    m.observed_mean().unwrap_or(0.0)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            let mut out = vec![0.0; cells.len()];
            match config.controller_mode {
                ControllerMode::Exact => {
                    for (i, &(r, c)) in cells.iter().enumerate() {
                        let cfg = MlpConfig {
                            seed: mix(nrl1.seed, i as u64),
                            ..nrl1.clone()
                        };
                        out[i] = match fit_columns(m, &[t_row, r], &[t_col], &[c], &[], false, &cfg)? {
                            Some(net) => net.predict(m, r)?[0],
                            None => {
                                diagnostics.push(format!("{}: held-out cell ({r}, {c}) uses the column mean", BLOCK_NAMES[b]));
                                column_mean(c, &[(r, c)])
                            }
                        };
                    }
                }
                ControllerMode::Fast => {
                    let mut by_col: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                    for (i, &(_, c)) in cells.iter().enumerate() {
                        by_col.entry(c).or_default().push(i);
                    }
                    let cols: Vec<usize> = by_col.keys().copied().collect();
                    let chunk = ((m.n_services().saturating_sub(1)) / 2).max(1);
                    for (k, labels) in cols.chunks(chunk).enumerate() {
                        let cfg = MlpConfig {
                            seed: mix(nrl1.seed, k as u64),
                            ..nrl1.clone()
                        };
                        let held: Vec<Cell> = labels.iter().flat_map(|c| by_col[c].iter().map(|&i| cells[i])).collect();
                        let net = fit_columns(m, &[t_row], &[t_col], labels, &held, false, &cfg)?;
                        if net.is_none() {
                            diagnostics.push(format!("{}: {} held-out cells use column means", BLOCK_NAMES[b], held.len()));
                        }
                        for (o, c) in labels.iter().enumerate() {
                            for &i in &by_col[c] {
                                let (r, _) = cells[i];
                                out[i] = match &net {
                                    Some(n) => n.predict(m, r)?[o],
                                    None => column_mean(*c, &held),
                                };
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Picks the branch and gathers held-out level-1 outputs for it.
pub fn build_controller(blocks: &Blocks<'_>, config: &PipelineConfig, seed: u64) -> Result<ControllerData> {
    let common = common_observed_cells(blocks.ui, blocks.si);
    let lambda = config.lambda_size();
    let mut diagnostics = Vec::new();
    let branch = match config.aggregator {
        Aggregator::Controller => select_branch(common.len(), config.t_d),
        Aggregator::MaeAgOnly => Branch::MaeAg,
        Aggregator::Nrl2Only if common.len() >= 2 => Branch::Nrl2,
        Aggregator::Nrl2Only => {
            diagnostics.push(format!("only {} common cells; using MAE-Ag", common.len()));
            Branch::MaeAg
        }
    };
    let mut data = ControllerData {
        branch,
        common_cells: common.len(),
        samples: Vec::new(),
        per_block: Default::default(),
        diagnostics: Vec::new(),
    };

    match branch {
        Branch::Nrl2 => {
            let mut cells = common;
            cells.shuffle(&mut crate::seed::rng(mix(seed, 30)));
            if cells.len() < lambda {
                diagnostics.push(format!("{} common cells available, {lambda} requested", cells.len()));
            }
            cells.truncate(lambda);
            cells.sort_unstable();
            let mut phis = vec![[0.0; 4]; cells.len()];
            for b in 0..4 {
                let local: Vec<Cell> = cells
                    .iter()
                    .map(|&g| blocks.local(b, g).expect("common cells lie in both filters"))
                    .collect();
                let preds = held_out(blocks, b, &local, config, seed, &mut diagnostics)?;
                for (p, v) in phis.iter_mut().zip(preds) {
                    p[b] = v;
                }
            }
            let ui = blocks.ui;
            data.samples = cells
                .iter()
                .zip(phis)
                .map(|(&g, phi)| {
                    let (r, c) = blocks.local(0, g).expect("common cell");
                    (phi, ui.submatrix.get(r, c))
                })
                .collect();
            for (phi, y) in &data.samples {
                for b in 0..4 {
                    data.per_block[b].push((phi[b], *y));
                }
            }
        }
        Branch::MaeAg => {
            for b in 0..4 {
                let f = blocks.filter(b);
                let target = blocks.target(b);
                let mut cells: Vec<Cell> = f.submatrix.observed_cells().into_iter().filter(|&c| c != target).collect();
                cells.shuffle(&mut crate::seed::rng(mix_all(seed, &[31, b as u64])));
                if cells.len() < lambda {
                    diagnostics.push(format!("{}: {} observed cells available, {lambda} requested", BLOCK_NAMES[b], cells.len()));
                }
                cells.truncate(lambda);
                cells.sort_unstable();
                let preds = held_out(blocks, b, &cells, config, seed, &mut diagnostics)?;
                data.per_block[b] = cells.iter().zip(preds).map(|(&(r, c), p)| (p, f.submatrix.get(r, c))).collect();
            }
        }
    }
    data.diagnostics = diagnostics;
    Ok(data)
}

/// Trains the level-2 network on `samples` and applies it to `phi`; the
/// output is clamped at zero.
pub fn run_nrl2(samples: &[([f64; 4], f64)], phi: [f64; 4], config: &MlpConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("level-2 training set is empty".into()));
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|(p, _)| p.to_vec()).collect();
    let ys: Vec<Vec<f64>> = samples.iter().map(|(_, y)| vec![*y]).collect();
    let mask = vec![vec![true]; samples.len()];
    let net = train_masked(config, &xs, &ys, &mask)?;
    Ok(net.predict(&phi)?.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeAgOutcome {
    pub value: f64,
    pub block: usize,
    /// Held-out MAE per block; infinite for blocks without held-out cells.
    pub maes: [f64; 4],
}

/// Returns the level-1 output of the block with the lowest held-out MAE; ties
/// go to the lower block index.
pub fn mae_aggregate(per_block: &[Vec<(f64, f64)>; 4], phi: [f64; 4]) -> Result<MaeAgOutcome> {
    let mut maes = [f64::INFINITY; 4];
    for (b, pairs) in per_block.iter().enumerate() {
        if !pairs.is_empty() {
            maes[b] = pairs.iter().map(|(p, y)| (p - y).abs()).sum::<f64>() / pairs.len() as f64;
        }
    }
    let mut block = 0;
    for b in 1..4 {
        if maes[b] < maes[block] {
            block = b;
        }
    }
    if !maes[block].is_finite() {
        return Err(Error::InvalidArgument("no block has held-out cells".into()));
    }
    Ok(MaeAgOutcome {
        value: phi[block],
        block,
        maes,
    })
}

/// Everything recorded about one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub user: usize,
    pub service: usize,
    pub value: f64,
    pub nrl1: Nrl1Output,
    pub branch: Branch,
    pub common_cells: usize,
    /// Number of held-out cells the aggregator was trained or scored on.
    pub lambda_used: usize,
    pub block_maes: Option<[f64; 4]>,
    pub chosen_block: Option<usize>,
    /// `(users, services)` kept by the user-intensive filter.
    pub ui_shape: (usize, usize),
    pub si_shape: (usize, usize),
    /// Whether each side of each filter fell back to nearest neighbours:
    /// ui users, ui services, si users, si services.
    pub filter_fallbacks: [bool; 4],
    pub cf_fallback_cells: usize,
    pub diagnostics: Vec<String>,
}

/// Trace for a target whose filtered neighbourhood holds no training value:
/// the prediction is the training mean.
fn empty_neighbourhood_trace(train: &QosMatrix, user: usize, service: usize, ui: &FilterResult, si: &FilterResult) -> Result<PredictionTrace> {
    let mean = train
        .observed_mean()
        .ok_or_else(|| Error::Degenerate("training matrix has no observed entries".into()))?;
    Ok(PredictionTrace {
        user,
        service,
        value: mean,
        nrl1: Nrl1Output {
            phi: [mean; 4],
            fallback: [true; 4],
        },
        branch: Branch::MaeAg,
        common_cells: 0,
        lambda_used: 0,
        block_maes: None,
        chosen_block: None,
        ui_shape: (ui.users.len(), ui.services.len()),
        si_shape: (si.users.len(), si.services.len()),
        filter_fallbacks: [ui.user_fallback, ui.service_fallback, si.user_fallback, si.service_fallback],
        cf_fallback_cells: 0,
        diagnostics: vec!["filtered sub-matrix has no observed values; predicting the training mean".into()],
    })
}

/// Predicts the unobserved training cell `(user, service)`.
pub fn predict_one(input: &FilterInput<'_>, user: usize, service: usize, config: &PipelineConfig, seed: u64) -> Result<PredictionTrace> {
    config.validate()?;
    let train = input.train;
    if user >= train.n_users() || service >= train.n_services() {
        return Err(Error::InvalidArgument(format!(
            "target ({user}, {service}) is outside the {}x{} matrix",
            train.n_users(),
            train.n_services()
        )));
    }
    if train.is_observed(user, service) {
        return Err(Error::InvalidArgument(format!("target ({user}, {service}) is observed in training")));
    }
    let options = config.filter_options();
    let (ui, si) = rayon::join(
        || filter(input, user, service, &options, FilterMode::UserIntensive),
        || filter(input, user, service, &options, FilterMode::ServiceIntensive),
    );
    let (ui, si) = (ui?, si?);
    if ui.submatrix.observed_count() == 0 || si.submatrix.observed_count() == 0 {
        return empty_neighbourhood_trace(train, user, service, &ui, &si);
    }
    let mf = MfConfig {
        seed: mix(seed, 10),
        ..config.mf
    };
    let filled = fill_all(&ui, &si, config.deviation_mode, &mf)?;
    let blocks = Blocks {
        filled: &filled,
        ui: &ui,
        si: &si,
    };

    let nrl1 = match config.level1 {
        Level1::Neural => run_nrl1(
            &blocks,
            &MlpConfig {
                seed: mix(seed, 20),
                ..config.nrl1.clone()
            },
        )?,
        Level1::FillValues => Nrl1Output {
            phi: std::array::from_fn(|b| {
                let (r, c) = blocks.target(b);
                blocks.matrix(b).get(r, c)
            }),
            fallback: [false; 4],
        },
    };

    let mut data = build_controller(&blocks, config, seed)?;
    let mut block_maes = None;
    let mut chosen_block = None;
    let (value, lambda_used) = match data.branch {
        Branch::Nrl2 => {
            let nrl2 = MlpConfig {
                seed: mix(seed, 50),
                ..config.nrl2.clone()
            };
            match run_nrl2(&data.samples, nrl1.phi, &nrl2) {
                Ok(v) => (v, data.samples.len()),
                Err(Error::Degenerate(m)) => {
                    data.diagnostics.push(format!("level-2 training failed ({m}); using MAE-Ag"));
                    let out = mae_aggregate(&data.per_block, nrl1.phi)?;
                    block_maes = Some(out.maes);
                    chosen_block = Some(out.block);
                    (out.value, data.samples.len())
                }
                Err(e) => return Err(e),
            }
        }
        Branch::MaeAg => {
            let out = mae_aggregate(&data.per_block, nrl1.phi)?;
            block_maes = Some(out.maes);
            chosen_block = Some(out.block);
            (out.value, data.per_block.iter().map(Vec::len).max().unwrap_or(0))
        }
    };

    Ok(PredictionTrace {
        user,
        service,
        value,
        nrl1,
        branch: data.branch,
        common_cells: data.common_cells,
        lambda_used,
        block_maes,
        chosen_block,
        ui_shape: (ui.users.len(), ui.services.len()),
        si_shape: (si.users.len(), si.services.len()),
        filter_fallbacks: [ui.user_fallback, ui.service_fallback, si.user_fallback, si.service_fallback],
        cf_fallback_cells: filled.cf_fallback_cells,
        diagnostics: data.diagnostics,
    })
}
