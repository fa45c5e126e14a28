//! Hybrid filtering: narrow the users and services down to those relevant for
//! one target (user, service) pair.
//!
//! Each side is clustered twice, by geographic distance and by QoS cosine
//! similarity. Both clusterings are transitive closures grown from the target.
//! The two clusters are merged according to how much they overlap. The
//! user-intensive filter clusters users on the whole training matrix first and
//! then clusters services on the rows of the chosen users. The
//! service-intensive filter does the same with the roles swapped.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GeoContext, QosMatrix};
use crate::error::{Error, Result};
use crate::similarity::{haversine, Axis, Profiles};

/// Minimum size of a filtered user or service set before the top-similarity
/// fallback kicks in.
pub const MIN_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Distance thresholds (km) for users and services.
    pub t_uc: f64,
    pub t_sc: f64,
    /// Cosine-similarity thresholds.
    pub t_us: f64,
    pub t_ss: f64,
    /// Minimum overlap (count) for the context-sensitive intersection.
    pub t_ucs: f64,
    pub t_scs: f64,
    pub k: f64,
}

/// How the filters obtain their thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ThresholdPolicy {
    /// Data-driven: each clustering step derives its threshold from the
    /// matrix and candidates it is applied to, governed by `k`.
    Adaptive { k: f64 },
    Fixed(FilterThresholds),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::Adaptive { k: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    UserIntensive,
    ServiceIntensive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub policy: ThresholdPolicy,
    /// Use geographic clustering when contexts are available.
    pub use_context: bool,
    pub min_neighbors: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            policy: ThresholdPolicy::default(),
            use_context: true,
            min_neighbors: MIN_NEIGHBORS,
        }
    }
}

/// Inputs shared by every filter call of one split: the training-only matrix
/// and the entity locations, if the dataset has them.
#[derive(Debug, Clone, Copy)]
pub struct FilterInput<'a> {
    pub train: &'a QosMatrix,
    pub user_contexts: Option<&'a [GeoContext]>,
    pub service_contexts: Option<&'a [GeoContext]>,
}

impl<'a> FilterInput<'a> {
    pub fn new(train: &'a QosMatrix) -> Self {
        Self {
            train,
            user_contexts: None,
            service_contexts: None,
        }
    }

    pub fn with_contexts(mut self, users: &'a [GeoContext], services: &'a [GeoContext]) -> Result<Self> {
        if users.len() != self.train.n_users() || services.len() != self.train.n_services() {
            return Err(Error::Dimension("context lists do not match the matrix".into()));
        }
        self.user_contexts = Some(users);
        self.service_contexts = Some(services);
        Ok(self)
    }
}

/// Output of one filter: ascending original indices and the induced submatrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub mode: FilterMode,
    pub users: Vec<usize>,
    pub services: Vec<usize>,
    pub submatrix: QosMatrix,
    /// Position of the target user / service inside `users` / `services`.
    pub target_row: usize,
    pub target_col: usize,
    /// Thresholds actually applied (second-stage values when adaptive).
    pub thresholds: FilterThresholds,
    pub user_fallback: bool,
    pub service_fallback: bool,
}

/// Distance threshold: the `⌈n·k⌉`-th distance in descending order, `n` the
/// number of candidates other than the target.
pub fn distance_threshold(distances: &[f64], k: f64) -> Option<f64> {
    let mut d = distances.to_vec();
    d.sort_unstable_by(|a, b| b.total_cmp(a));
    kth(&d, k)
}

/// Similarity threshold: `max(λ_k, k·λ_max)` where `λ_k` is the `⌈n·k⌉`-th
/// similarity in ascending order.
pub fn similarity_threshold(similarities: &[f64], k: f64) -> Option<f64> {
    let mut s = similarities.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let lambda_k = kth(&s, k)?;
    let lambda_max = *s.last()?;
    Some(lambda_k.max(k * lambda_max))
}

fn kth(sorted: &[f64], k: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let pos = ((n as f64 * k).ceil() as usize).clamp(1, n);
    Some(sorted[pos - 1])
}

/// Thresholds for a target pair, all computed on the full training matrix.
/// The filters recompute second-stage thresholds on the reduced matrix.
pub fn compute_thresholds(input: &FilterInput<'_>, target_user: usize, target_service: usize, k: f64) -> Result<FilterThresholds> {
    check_k(k)?;
    let q = input.train;
    check_target(q, target_user, target_service)?;
    if q.n_users() < 2 || q.n_services() < 2 {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    let users = Profiles::new(q, Axis::User);
    let services = Profiles::new(q, Axis::Service);
    let all_users: Vec<usize> = (0..q.n_users()).collect();
    let all_services: Vec<usize> = (0..q.n_services()).collect();

    let t_uc = context_threshold(input.user_contexts, &all_users, target_user, k).unwrap_or(0.0);
    let t_sc = context_threshold(input.service_contexts, &all_services, target_service, k).unwrap_or(0.0);
    let t_us = profile_threshold(&users, &all_users, target_user, k).unwrap_or(0.0);
    let t_ss = profile_threshold(&services, &all_services, target_service, k).unwrap_or(0.0);
    let us = cluster_by_profiles(&all_users, target_user, &users, t_us);
    let ss = cluster_by_profiles(&all_services, target_service, &services, t_ss);
    Ok(FilterThresholds {
        t_uc,
        t_sc,
        t_us,
        t_ss,
        t_ucs: k * us.len() as f64,
        t_scs: k * ss.len() as f64,
        k,
    })
}

fn check_k(k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must lie in [0, 1], got {k}")));
    }
    Ok(())
}

fn check_target(q: &QosMatrix, u: usize, s: usize) -> Result<()> {
    if u >= q.n_users() || s >= q.n_services() {
        return Err(Error::InvalidArgument(format!(
            "target ({u}, {s}) outside a {}x{} matrix",
            q.n_users(),
            q.n_services()
        )));
    }
    Ok(())
}

fn context_threshold(contexts: Option<&[GeoContext]>, candidates: &[usize], target: usize, k: f64) -> Option<f64> {
    let ctx = contexts?;
    let d: Vec<f64> = candidates
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| haversine(ctx[target], ctx[c]))
        .collect();
    distance_threshold(&d, k)
}

fn profile_threshold(profiles: &Profiles, candidates: &[usize], target: usize, k: f64) -> Option<f64> {
    let s: Vec<f64> = candidates
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| profiles.cosine(target, c))
        .collect();
    similarity_threshold(&s, k)
}

/// Transitive closure from `target` over `candidates` under `linked`.
fn closure(candidates: &[usize], target: usize, mut linked: impl FnMut(usize, usize) -> bool) -> Vec<usize> {
    let mut members = vec![target];
    let mut rest: Vec<usize> = candidates.iter().copied().filter(|&c| c != target).collect();
    let mut next = 0;
    while next < members.len() && !rest.is_empty() {
        let m = members[next];
        next += 1;
        let mut i = 0;
        while i < rest.len() {
            if linked(m, rest[i]) {
                members.push(rest.swap_remove(i));
            } else {
                i += 1;
            }
        }
    }
    members.sort_unstable();
    members
}

/// Everything reachable from `target` through hops of at most `threshold` km.
pub fn cluster_by_context(candidates: &[usize], target: usize, contexts: &[GeoContext], threshold: f64) -> Vec<usize> {
    closure(candidates, target, |a, b| haversine(contexts[a], contexts[b]) <= threshold)
}

/// Everything reachable from `target` through hops of cosine similarity at
/// least `threshold`, with rows (`Axis::User`) or columns compared.
pub fn cluster_by_similarity(candidates: &[usize], target: usize, matrix: &QosMatrix, axis: Axis, threshold: f64) -> Vec<usize> {
    cluster_by_profiles(candidates, target, &Profiles::new(matrix, axis), threshold)
}

fn cluster_by_profiles(candidates: &[usize], target: usize, profiles: &Profiles, threshold: f64) -> Vec<usize> {
    closure(candidates, target, |a, b| profiles.cosine(a, b) >= threshold)
}

/// Intersection when the two clusters overlap in at least `threshold_count`
/// members (target included), the similarity cluster otherwise.
pub fn context_sensitive_merge(context_set: &[usize], similarity_set: &[usize], threshold_count: f64) -> Vec<usize> {
    let c: BTreeSet<usize> = context_set.iter().copied().collect();
    let both: Vec<usize> = similarity_set
        .iter()
        .copied()
        .filter(|x| c.contains(x))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if both.len() as f64 >= threshold_count {
        both
    } else {
        let mut s = similarity_set.to_vec();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Target plus its `n - 1` most similar candidates; ties go to the lower index.
fn top_similar(candidates: &[usize], target: usize, profiles: &Profiles, n: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| (profiles.cosine(target, c), c))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = std::iter::once(target)
        .chain(scored.into_iter().take(n.saturating_sub(1)).map(|(_, c)| c))
        .collect();
    out.sort_unstable();
    out
}

struct SideOutcome {
    members: Vec<usize>,
    t_c: f64,
    t_s: f64,
    t_cs: f64,
    fallback: bool,
}

/// One side (users or services) of a filter: context cluster, similarity
/// cluster on `profiles`, merge, and the small-set fallback.
fn filter_side(
    candidates: &[usize],
    target: usize,
    profiles: &Profiles,
    contexts: Option<&[GeoContext]>,
    options: &FilterOptions,
    fixed: Option<(f64, f64, f64)>,
) -> SideOutcome {
    let contexts = contexts.filter(|_| options.use_context);
    let (t_c, t_s) = match (fixed, options.policy) {
        (Some((t_c, t_s, _)), _) => (t_c, t_s),
        (None, ThresholdPolicy::Adaptive { k }) => (
            context_threshold(contexts, candidates, target, k).unwrap_or(0.0),
            profile_threshold(profiles, candidates, target, k).unwrap_or(0.0),
        ),
        (None, ThresholdPolicy::Fixed(_)) => unreachable!("fixed thresholds are passed in"),
    };
    // a target with no positive similarity to anyone has no QoS neighbourhood
    let isolated = candidates.iter().all(|&c| c == target || profiles.cosine(target, c) == 0.0);
    let similar = if isolated {
        vec![target]
    } else {
        cluster_by_profiles(candidates, target, profiles, t_s)
    };
    let t_cs = match (fixed, options.policy) {
        (Some((_, _, t_cs)), _) => t_cs,
        (None, ThresholdPolicy::Adaptive { k }) => k * similar.len() as f64,
        (None, ThresholdPolicy::Fixed(_)) => unreachable!(),
    };
    let merged = match contexts {
        Some(ctx) => {
            let near = cluster_by_context(candidates, target, ctx, t_c);
            context_sensitive_merge(&near, &similar, t_cs)
        }
        None => similar,
    };
    let needed = options.min_neighbors.min(candidates.len());
    if merged.len() < needed {
        SideOutcome {
            members: top_similar(candidates, target, profiles, needed),
            t_c,
            t_s,
            t_cs,
            fallback: true,
        }
    } else {
        SideOutcome {
            members: merged,
            t_c,
            t_s,
            t_cs,
            fallback: false,
        }
    }
}

pub fn user_intensive_filter(input: &FilterInput<'_>, target_user: usize, target_service: usize, options: &FilterOptions) -> Result<FilterResult> {
    run_filter(input, target_user, target_service, options, FilterMode::UserIntensive)
}

pub fn service_intensive_filter(input: &FilterInput<'_>, target_user: usize, target_service: usize, options: &FilterOptions) -> Result<FilterResult> {
    run_filter(input, target_user, target_service, options, FilterMode::ServiceIntensive)
}

pub fn filter(input: &FilterInput<'_>, target_user: usize, target_service: usize, options: &FilterOptions, mode: FilterMode) -> Result<FilterResult> {
    run_filter(input, target_user, target_service, options, mode)
}

fn run_filter(input: &FilterInput<'_>, t1: usize, t2: usize, options: &FilterOptions, mode: FilterMode) -> Result<FilterResult> {
    let q = input.train;
    check_target(q, t1, t2)?;
    let k = match options.policy {
        ThresholdPolicy::Adaptive { k } => {
            check_k(k)?;
            k
        }
        ThresholdPolicy::Fixed(t) => t.k,
    };
    let fixed = match options.policy {
        ThresholdPolicy::Fixed(t) => Some(t),
        ThresholdPolicy::Adaptive { .. } => None,
    };
    let all_users: Vec<usize> = (0..q.n_users()).collect();
    let all_services: Vec<usize> = (0..q.n_services()).collect();

    let (user_side, service_side) = match mode {
        FilterMode::UserIntensive => {
            let users = filter_side(
                &all_users,
                t1,
                &Profiles::new(q, Axis::User),
                input.user_contexts,
                options,
                fixed.map(|t| (t.t_uc, t.t_us, t.t_ucs)),
            );
            let rows = q.submatrix(&users.members, &all_services);
            let services = filter_side(
                &all_services,
                t2,
                &Profiles::new(&rows, Axis::Service),
                input.service_contexts,
                options,
                fixed.map(|t| (t.t_sc, t.t_ss, t.t_scs)),
            );
            (users, services)
        }
        FilterMode::ServiceIntensive => {
            let services = filter_side(
                &all_services,
                t2,
                &Profiles::new(q, Axis::Service),
                input.service_contexts,
                options,
                fixed.map(|t| (t.t_sc, t.t_ss, t.t_scs)),
            );
            let cols = q.submatrix(&all_users, &services.members);
            let users = filter_side(
                &all_users,
                t1,
                &Profiles::new(&cols, Axis::User),
                input.user_contexts,
                options,
                fixed.map(|t| (t.t_uc, t.t_us, t.t_ucs)),
            );
            (users, services)
        }
    };

    let submatrix = q.submatrix(&user_side.members, &service_side.members);
    let target_row = user_side.members.binary_search(&t1).expect("target kept");
    let target_col = service_side.members.binary_search(&t2).expect("target kept");
    Ok(FilterResult {
        mode,
        thresholds: FilterThresholds {
            t_uc: user_side.t_c,
            t_sc: service_side.t_c,
            t_us: user_side.t_s,
            t_ss: service_side.t_s,
            t_ucs: user_side.t_cs,
            t_scs: service_side.t_cs,
            k,
        },
        user_fallback: user_side.fallback,
        service_fallback: service_side.fallback,
        users: user_side.members,
        services: service_side.members,
        submatrix,
        target_row,
        target_col,
    })
}

impl<'a> FilterInput<'a> {
    /// Input for `dataset` with training values `train`; contexts are attached
    /// only when every entity has one.
    pub fn from_dataset(dataset: &Dataset, train: &'a QosMatrix, contexts: &'a Option<(Vec<GeoContext>, Vec<GeoContext>)>) -> Result<Self> {
        if train.n_users() != dataset.n_users() || train.n_services() != dataset.n_services() {
            return Err(Error::Dimension("training matrix does not match the dataset".into()));
        }
        match contexts {
            Some((u, s)) => FilterInput::new(train).with_contexts(u, s),
            None => Ok(FilterInput::new(train)),
        }
    }
}

/// Both context lists of a dataset, or `None` when it is context-free.
pub fn dataset_contexts(dataset: &Dataset) -> Option<(Vec<GeoContext>, Vec<GeoContext>)> {
    Some((dataset.user_contexts()?, dataset.service_contexts()?))
}
