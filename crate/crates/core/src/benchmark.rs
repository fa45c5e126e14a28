//! Metrics, the experiment protocol and the ablation variants.
//!
//! For every density and episode a fresh split is drawn with seed
//! `seed + episode`, `test_k` held-out targets are sampled from its test
//! partition, each target is predicted from the training values only, and the
//! episode MAE is recorded. All variants derive their per-target seeds the same
//! way, so runs over the same settings are paired.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Aggregator, ExperimentConfig, Level1, PipelineConfig};
use crate::data::{make_split, sample_test_instances, DatasetKind, QosKind};
use crate::data::{Cell, Dataset, GeoContext};
use crate::error::{Error, Result};
use crate::fill::{cf_fill, mf_fill, MfConfig};
use crate::filtering::{dataset_contexts, filter, FilterInput, FilterMode, FilterResult};
use crate::hierarchy::{level1_predict, predict_one};
use crate::neural::MlpConfig;
use crate::seed::{mix, mix_all};

/// Mean absolute error over `(predicted, actual)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("MAE of an empty prediction set".into()));
    }
    Ok(pairs.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Relative improvement of `mae1` over `mae2`, in percent.
pub fn improvement(mae1: f64, mae2: f64) -> Result<f64> {
    if mae2 == 0.0 {
        return Err(Error::InvalidArgument("improvement over a zero MAE is undefined".into()));
    }
    Ok((mae2 - mae1) / mae2 * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Filtering {
    UserIntensive,
    ServiceIntensive,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillKind {
    None,
    Cf,
    Mf,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predictor {
    CfValue,
    MfValue,
    Nr,
    Hierarchical,
    /// Hierarchical, with the fill values standing in for the level-1 networks.
    HierarchicalFillValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorTag {
    Controller,
    Nrl2Only,
    MaeAgOnly,
    NotApplicable,
}

/// One method as a combination of pipeline toggles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub filtering: Filtering,
    pub context_filter: bool,
    pub fill: FillKind,
    pub predictor: Predictor,
    pub aggregator: AggregatorTag,
}

impl VariantSpec {
    fn single(name: &str, filtering: Filtering, context_filter: bool, fill: FillKind, predictor: Predictor) -> Self {
        Self {
            name: name.into(),
            filtering,
            context_filter,
            fill,
            predictor,
            aggregator: AggregatorTag::NotApplicable,
        }
    }

    fn hierarchical(name: &str, context_filter: bool, predictor: Predictor, aggregator: AggregatorTag) -> Self {
        Self {
            name: name.into(),
            filtering: Filtering::Hybrid,
            context_filter,
            fill: FillKind::Both,
            predictor,
            aggregator,
        }
    }

    pub fn cahphf() -> Self {
        Self::hierarchical("CAHPHF", true, Predictor::Hierarchical, AggregatorTag::Controller)
    }

    /// The seventeen intermediate variants followed by the full method.
    pub fn all() -> Vec<Self> {
        use FillKind as F;
        use Filtering::{ServiceIntensive as S, UserIntensive as U};
        use Predictor as P;
        vec![
            Self::single("UMF", U, true, F::Mf, P::MfValue),
            Self::single("SMF", S, true, F::Mf, P::MfValue),
            Self::single("UCF", U, true, F::Cf, P::CfValue),
            Self::single("SCF", S, true, F::Cf, P::CfValue),
            Self::single("UNR", U, true, F::None, P::Nr),
            Self::single("SNR", S, true, F::None, P::Nr),
            Self::single("UMNR", U, true, F::Mf, P::Nr),
            Self::single("SMNR", S, true, F::Mf, P::Nr),
            Self::single("UCNR", U, true, F::Cf, P::Nr),
            Self::single("SCNR", S, true, F::Cf, P::Nr),
            Self::hierarchical("CAHPHFWoNN", true, P::HierarchicalFillValues, AggregatorTag::Controller),
            Self::hierarchical("CAHPHF-MAE", true, P::Hierarchical, AggregatorTag::MaeAgOnly),
            Self::single("UCNRWoCF", U, false, F::Cf, P::Nr),
            Self::single("SCNRWoCF", S, false, F::Cf, P::Nr),
            Self::single("UMNRWoCF", U, false, F::Mf, P::Nr),
            Self::single("SMNRWoCF", S, false, F::Mf, P::Nr),
            Self::hierarchical("CAHPHFWoCF", false, P::Hierarchical, AggregatorTag::Controller),
            Self::cahphf(),
        ]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|v| v.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let names: Vec<String> = Self::all().into_iter().map(|v| v.name).collect();
                Error::InvalidArgument(format!("unknown variant `{name}`; expected one of {}", names.join(", ")))
            })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("variant {}: {m}", self.name)));
        let hierarchical = matches!(self.predictor, Predictor::Hierarchical | Predictor::HierarchicalFillValues);
        if hierarchical {
            if self.fill != FillKind::Both || self.filtering != Filtering::Hybrid {
                return bad("hierarchical prediction needs both fills and hybrid filtering");
            }
            if self.aggregator == AggregatorTag::NotApplicable {
                return bad("hierarchical prediction needs an aggregator");
            }
            return Ok(());
        }
        if self.filtering == Filtering::Hybrid || self.fill == FillKind::Both {
            return bad("single-model predictors use one filter and at most one fill");
        }
        match (self.predictor, self.fill) {
            (Predictor::CfValue, FillKind::Cf) | (Predictor::MfValue, FillKind::Mf) | (Predictor::Nr, _) => Ok(()),
            _ => bad("fill-value predictors need the matching fill"),
        }
    }

    /// The pipeline configuration this variant runs with.
    pub fn pipeline(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut config = base.clone();
        config.use_context = self.context_filter;
        config.aggregator = match self.aggregator {
            AggregatorTag::Nrl2Only => Aggregator::Nrl2Only,
            AggregatorTag::MaeAgOnly => Aggregator::MaeAgOnly,
            AggregatorTag::Controller | AggregatorTag::NotApplicable => Aggregator::Controller,
        };
        config.level1 = match self.predictor {
            Predictor::HierarchicalFillValues => Level1::FillValues,
            _ => Level1::Neural,
        };
        config
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Predicts one target with `variant`. `seed` should depend only on the
/// split and the target so that different variants stay paired.
pub fn predict_variant(variant: &VariantSpec, input: &FilterInput<'_>, user: usize, service: usize, base: &PipelineConfig, seed: u64) -> Result<f64> {
    variant.validate()?;
    let config = variant.pipeline(base);
    if matches!(variant.predictor, Predictor::Hierarchical | Predictor::HierarchicalFillValues) {
        return Ok(predict_one(input, user, service, &config, seed)?.value);
    }
    config.validate()?;
    if input.train.is_observed(user, service) {
        return Err(Error::InvalidArgument(format!("target ({user}, {service}) is observed in training")));
    }
    let mode = match variant.filtering {
        Filtering::ServiceIntensive => FilterMode::ServiceIntensive,
        _ => FilterMode::UserIntensive,
    };
    let f = filter(input, user, service, &config.filter_options(), mode)?;
    if f.submatrix.observed_count() == 0 {
        return input
            .train
            .observed_mean()
            .ok_or_else(|| Error::Degenerate("training matrix has no observed entries".into()));
    }
    let (r, c) = (f.target_row, f.target_col);
    let mf = MfConfig {
        seed: mix(seed, 10),
        ..config.mf
    };
    let cf_value = |f: &FilterResult| -> Result<f64> { Ok(cf_fill(f, config.deviation_mode)?.matrix.get(r, c)) };
    let nrl1 = MlpConfig {
        seed: mix(seed, 20),
        ..config.nrl1.clone()
    };
    match (variant.predictor, variant.fill) {
        (Predictor::CfValue, _) => cf_value(&f),
        (Predictor::MfValue, _) => Ok(mf_fill(&f, &mf)?.matrix.get(r, c)),
        (Predictor::Nr, fill) => {
            let (block, observed_only) = match fill {
                FillKind::None => (f.submatrix.clone(), true),
                FillKind::Cf => (cf_fill(&f, config.deviation_mode)?.matrix, false),
                _ => (mf_fill(&f, &mf)?.matrix, false),
            };
            match level1_predict(&block, r, c, &nrl1, observed_only)? {
                Some(v) => Ok(v),
                None => cf_value(&f),
            }
        }
        _ => unreachable!("validated above"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub split_seed: u64,
    /// Digest of the split(s) this episode used.
    pub split_fingerprint: String,
    /// Digest of the sampled targets.
    pub targets_fingerprint: String,
    pub n_targets: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityResult {
    pub density: f64,
    pub episodes: Vec<EpisodeResult>,
    pub mean_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: String,
    pub dataset: DatasetKind,
    pub qos: QosKind,
    pub episodes: usize,
    pub test_k: usize,
    pub seed: u64,
    pub results: Vec<DensityResult>,
    pub wall_time_secs: f64,
    pub config: PipelineConfig,
}

impl ExperimentReport {
    pub fn mean_mae(&self, density: f64) -> Option<f64> {
        self.results.iter().find(|r| r.density == density).map(|r| r.mean_mae)
    }

    /// `(density, episode, split fingerprint, targets fingerprint)` for
    /// every episode, used to check pairing.
    pub fn pairing_keys(&self) -> Vec<(f64, usize, String, String)> {
        self.results
            .iter()
            .flat_map(|d| {
                d.episodes
                    .iter()
                    .map(move |e| (d.density, e.episode, e.split_fingerprint.clone(), e.targets_fingerprint.clone()))
            })
            .collect()
    }
}

fn hex_digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn slice_indices(dataset: &Dataset, plan: &ExperimentConfig) -> Result<Vec<usize>> {
    if plan.slices.is_empty() {
        return Ok((0..dataset.matrices.len()).collect());
    }
    if let Some(bad) = plan.slices.iter().find(|&&s| s >= dataset.matrices.len()) {
        return Err(Error::InvalidArgument(format!(
            "slice {bad} requested but the dataset has {} matrices",
            dataset.matrices.len()
        )));
    }
    Ok(plan.slices.clone())
}

/// One episode on one matrix: `(mae, split fingerprint, targets)`.
fn run_episode_on(
    dataset: &Dataset,
    contexts: &Option<(Vec<GeoContext>, Vec<GeoContext>)>,
    matrix: usize,
    variant: &VariantSpec,
    density: f64,
    split_seed: u64,
    test_k: usize,
    config: &PipelineConfig,
) -> Result<(f64, String, Vec<Cell>)> {
    let m = &dataset.matrices[matrix];
    let split = make_split(m, density, split_seed)?;
    let train = split.training_matrix(m)?;
    let targets = sample_test_instances(&split, test_k, mix(split_seed, 7))?;
    let input = FilterInput::from_dataset(dataset, &train, contexts)?;
    let pairs: Vec<(f64, f64)> = targets
        .par_iter()
        .map(|&(u, s)| {
            let seed = mix_all(split_seed, &[matrix as u64, u as u64, s as u64]);
            predict_variant(variant, &input, u, s, config, seed).map(|p| (p, m.get(u, s)))
        })
        .collect::<Result<_>>()?;
    Ok((mae(&pairs)?, split.fingerprint(), targets))
}

/// Runs `variant` over every density and episode in `plan`. With several
/// matrices (time slices) each episode MAE is the mean over slices.
pub fn run_experiment(dataset: &Dataset, variant: &VariantSpec, plan: &ExperimentConfig, config: &PipelineConfig) -> Result<ExperimentReport> {
    variant.validate()?;
    plan.validate()?;
    variant.pipeline(config).validate()?;
    let started = Instant::now();
    let contexts = dataset_contexts(dataset);
    let slices = slice_indices(dataset, plan)?;
    let mut results = Vec::new();
    for &density in &plan.densities {
        let episodes = (0..plan.episodes)
            .into_par_iter()
            .map(|episode| {
                let split_seed = plan.seed.wrapping_add(episode as u64);
                let mut maes = Vec::new();
                let mut splits = Vec::new();
                let mut targets = Vec::new();
                for &slice in &slices {
                    let (m, fp, t) = run_episode_on(dataset, &contexts, slice, variant, density, split_seed, plan.test_k, config)?;
                    maes.push(m);
                    splits.push(fp);
                    targets.push(t.iter().map(|(u, s)| format!("{slice} {u} {s}")).collect::<Vec<_>>().join(","));
                }
                Ok(EpisodeResult {
                    episode,
                    split_seed,
                    split_fingerprint: if splits.len() == 1 { splits.remove(0) } else { hex_digest(&splits) },
                    targets_fingerprint: hex_digest(&targets),
                    n_targets: plan.test_k * slices.len(),
                    mae: maes.iter().sum::<f64>() / maes.len() as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_mae = episodes.iter().map(|e| e.mae).sum::<f64>() / episodes.len() as f64;
        results.push(DensityResult {
            density,
            episodes,
            mean_mae,
        });
    }
    Ok(ExperimentReport {
        variant: variant.name.clone(),
        dataset: dataset.kind,
        qos: dataset.qos,
        episodes: plan.episodes,
        test_k: plan.test_k,
        seed: plan.seed,
        results,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: variant.pipeline(config),
    })
}

/// All eighteen variants on identical splits and targets; fails if any
/// report saw a different partition.
pub fn run_ablation_suite(dataset: &Dataset, plan: &ExperimentConfig, config: &PipelineConfig) -> Result<Vec<ExperimentReport>> {
    let reports = VariantSpec::all()
        .iter()
        .map(|v| run_experiment(dataset, v, plan, config))
        .collect::<Result<Vec<_>>>()?;
    let keys = reports[0].pairing_keys();
    if let Some(r) = reports.iter().find(|r| r.pairing_keys() != keys) {
        return Err(Error::Degenerate(format!("variant {} ran on different splits", r.variant)));
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    TD,
    Nrl1Epochs,
    Nrl2Epochs,
    Nrl1HiddenLayers,
    LambdaSize,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        Self::K,
        Self::TD,
        Self::Nrl1Epochs,
        Self::Nrl2Epochs,
        Self::Nrl1HiddenLayers,
        Self::LambdaSize,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Self::K => "k",
            Self::TD => "t_d",
            Self::Nrl1Epochs => "nrl1_epochs",
            Self::Nrl2Epochs => "nrl2_epochs",
            Self::Nrl1HiddenLayers => "nrl1_hidden_layers",
            Self::LambdaSize => "lambda_size",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut c = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidArgument(format!("{} takes positive integers, got {value}", self.key())))
            }
        };
        match self {
            Self::K => c.k = value,
            Self::TD => c.t_d = count()?,
            Self::Nrl1Epochs => c.nrl1.max_epochs = count()?,
            Self::Nrl2Epochs => c.nrl2.max_epochs = count()?,
            Self::Nrl1HiddenLayers => c.nrl1.hidden_sizes = PipelineConfig::nrl1_hidden_for_layers(count()?),
            Self::LambdaSize => c.lambda_size = Some(count()?),
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|p| p.key() == key).ok_or_else(|| {
            let keys: Vec<&str> = Self::ALL.iter().map(|p| p.key()).collect();
            Error::InvalidArgument(format!("unknown sweep parameter `{s}`; expected one of {}", keys.join(", ")))
        })
    }
}

/// Parses `param=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>)> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("sweep `{spec}` is not of the form param=v1,v2,...")))?;
    let param: SweepParam = key.parse()?;
    let values = list
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("sweep value `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep list is empty".into()));
    }
    Ok((param, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub report: ExperimentReport,
}

/// Runs `variant` once per value, changing only `param`.
pub fn run_sweep(dataset: &Dataset, variant: &VariantSpec, param: SweepParam, values: &[f64], plan: &ExperimentConfig, config: &PipelineConfig) -> Result<Vec<SweepPoint>> {
    let configs = values.iter().map(|&v| param.apply(config, v)).collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(configs)
        .map(|(&value, c)| {
            Ok(SweepPoint {
                param,
                value,
                report: run_experiment(dataset, variant, plan, &c)?,
            })
        })
        .collect()
}

/// One row per report and density. No timing columns, so identical runs give
/// identical bytes.
pub fn summary_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("variant,dataset,qos,density,episodes,test_k,mean_mae,episode_maes\n");
    for r in reports {
        for d in &r.results {
            let maes: Vec<String> = d.episodes.iter().map(|e| e.mae.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.dataset,
                r.qos,
                d.density,
                r.episodes,
                r.test_k,
                d.mean_mae,
                maes.join(";")
            );
        }
    }
    out
}

/// Plot-ready table with one row per episode.
pub fn long_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("variant,density,episode,mae\n");
    for r in reports {
        for d in &r.results {
            for e in &d.episodes {
                let _ = writeln!(out, "{},{},{},{}", r.variant, d.density, e.episode, e.mae);
            }
        }
    }
    out
}

/// Per variant and density, the improvement of `reference` over it.
pub fn improvement_csv(reports: &[ExperimentReport], reference: &str) -> Result<String> {
    let reference = reports
        .iter()
        .find(|r| r.variant == reference)
        .ok_or_else(|| Error::InvalidArgument(format!("no report for `{reference}`")))?;
    let mut out = format!("variant,density,mean_mae,improvement_of_{}_pct\n", reference.variant);
    for r in reports {
        for d in &r.results {
            let Some(ref_mae) = reference.mean_mae(d.density) else { continue };
            let imp = improvement(ref_mae, d.mean_mae).map(|v| v.to_string()).unwrap_or_else(|_| "nan".into());
            let _ = writeln!(out, "{},{},{},{imp}", r.variant, d.density, d.mean_mae);
        }
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("param,value,variant,density,mean_mae\n");
    for p in points {
        for d in &p.report.results {
            let _ = writeln!(out, "{},{},{},{},{}", p.param, p.value, p.report.variant, d.density, d.mean_mae);
        }
    }
    out
}

fn write_file(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `<stem>.csv`, `<stem>_long.csv` and `<stem>.json` into `dir`.
pub fn write_reports(dir: &Path, stem: &str, reports: &[ExperimentReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(vec![
        write_file(dir.join(format!("{stem}.csv")), &summary_csv(reports))?,
        write_file(dir.join(format!("{stem}_long.csv")), &long_csv(reports))?,
        write_file(dir.join(format!("{stem}.json")), &json)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[(1.0, 2.0), (3.0, 1.0)]).unwrap(), 1.5);
        assert_eq!(mae(&[(0.3, 0.3), (2.0, 2.0)]).unwrap(), 0.0);
        assert!(mae(&[]).is_err());
    }

    #[test]
    fn improvement_examples() {
        assert!((improvement(0.059, 0.2597).unwrap() - 77.28).abs() < 0.005);
        assert_eq!(improvement(0.3, 0.3).unwrap(), 0.0);
        assert_eq!(improvement(0.0, 0.3).unwrap(), 100.0);
        assert!(improvement(0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn mae_matches_summation(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..50)) {
            let mut total = 0.0;
            for (p, a) in &pairs {
                total += if p > a { p - a } else { a - p };
            }
            let expected = total / pairs.len() as f64;
            prop_assert!((mae(&pairs).unwrap() - expected).abs() < 1e-12);
        }

        #[test]
        fn improvement_is_antitone(a in 0.0f64..5.0, b in 0.0f64..5.0, base in 0.01f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(improvement(lo, base).unwrap() >= improvement(hi, base).unwrap());
            prop_assert_eq!(improvement(base, base).unwrap(), 0.0);
        }
    }

    #[test]
    fn eighteen_valid_variants() {
        let all = VariantSpec::all();
        assert_eq!(all.len(), 18);
        assert_eq!(all.last().unwrap().name, "CAHPHF");
        let mut names: Vec<&str> = all.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 18);
        for v in &all {
            v.validate().unwrap();
        }
        assert_eq!(VariantSpec::by_name("ucnrwocf").unwrap().name, "UCNRWoCF");
        assert!(VariantSpec::by_name("nope").is_err());
    }

    #[test]
    fn invalid_variants_are_rejected() {
        let mut v = VariantSpec::cahphf();
        v.fill = FillKind::Cf;
        assert!(v.validate().is_err());
        let mut v = VariantSpec::by_name("UCF").unwrap();
        v.predictor = Predictor::MfValue;
        assert!(v.validate().is_err());
    }

    #[test]
    fn sweep_parsing_and_application() {
        let (p, vals) = parse_sweep("k=0.2,0.5,0.9").unwrap();
        assert_eq!((p, vals.as_slice()), (SweepParam::K, &[0.2, 0.5, 0.9][..]));
        assert!(parse_sweep("kk=1").is_err());
        assert!(parse_sweep("k").is_err());
        let base = PipelineConfig::default();
        let c = SweepParam::Nrl1HiddenLayers.apply(&base, 3.0).unwrap();
        assert_eq!(c.nrl1.hidden_sizes, vec![256, 128, 64]);
        let c = SweepParam::LambdaSize.apply(&base, 50.0).unwrap();
        assert_eq!((c.lambda_size(), c.t_d), (50, 200));
        let c = SweepParam::TD.apply(&base, 100.0).unwrap();
        assert_eq!((c.lambda_size(), c.t_d), (100, 100));
        assert!(SweepParam::Nrl1Epochs.apply(&base, 2.5).is_err());
        assert!(SweepParam::K.apply(&base, 1.5).is_err());
    }

    fn small_plan() -> ExperimentConfig {
        ExperimentConfig {
            densities: vec![0.3],
            episodes: 2,
            test_k: 4,
            seed: 5,
            ..ExperimentConfig::default()
        }
    }

    fn light() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.nrl1.hidden_sizes = vec![8];
        c.nrl1.max_epochs = 10;
        c.nrl2.max_epochs = 50;
        c.mf.epochs = 50;
        c.t_d = 20;
        c
    }

    #[test]
    fn context_free_wocf_matches() {
        let ds = SyntheticSpec {
            n_users: 16,
            n_services: 20,
            kind: DatasetKind::Ws2,
            n_slices: 1,
            ..SyntheticSpec::default()
        }
        .generate(2);
        let plan = small_plan();
        let a = run_experiment(&ds, &VariantSpec::by_name("UCNR").unwrap(), &plan, &light()).unwrap();
        let b = run_experiment(&ds, &VariantSpec::by_name("UCNRWoCF").unwrap(), &plan, &light()).unwrap();
        assert_eq!(long_csv(&[a]).replace("UCNR,", ""), long_csv(&[b]).replace("UCNRWoCF,", ""));
    }

    #[test]
    fn report_shape_and_csv() {
        let ds = SyntheticSpec {
            n_users: 16,
            n_services: 20,
            ..SyntheticSpec::default()
        }
        .generate(3);
        let plan = ExperimentConfig {
            densities: vec![0.1, 0.2, 0.3],
            ..small_plan()
        };
        let r = run_experiment(&ds, &VariantSpec::by_name("UMF").unwrap(), &plan, &light()).unwrap();
        assert_eq!(r.results.len(), 3);
        for d in &r.results {
            assert_eq!(d.episodes.len(), 2);
            let mean = d.episodes.iter().map(|e| e.mae).sum::<f64>() / 2.0;
            assert_eq!(d.mean_mae, mean);
        }
        let csv = summary_csv(std::slice::from_ref(&r));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(long_csv(std::slice::from_ref(&r)).lines().count(), 7);
        let imp = improvement_csv(std::slice::from_ref(&r), "UMF").unwrap();
        assert!(imp.lines().nth(1).unwrap().ends_with(",0"), "{imp}");
    }

    #[test]
    fn ws2_averages_slices() {
        let ds = SyntheticSpec {
            n_users: 14,
            n_services: 18,
            kind: DatasetKind::Ws2,
            n_slices: 2,
            ..SyntheticSpec::default()
        }
        .generate(4);
        let plan = small_plan();
        let v = VariantSpec::by_name("SCF").unwrap();
        let both = run_experiment(&ds, &v, &plan, &light()).unwrap();
        let per_slice: Vec<ExperimentReport> = (0..2)
            .map(|s| run_experiment(&ds, &v, &ExperimentConfig { slices: vec![s], ..plan.clone() }, &light()).unwrap())
            .collect();
        for e in 0..2 {
            let expected = (per_slice[0].results[0].episodes[e].mae + per_slice[1].results[0].episodes[e].mae) / 2.0;
            assert!((both.results[0].episodes[e].mae - expected).abs() < 1e-12);
        }
        assert!(run_experiment(&ds, &v, &ExperimentConfig { slices: vec![2], ..plan }, &light()).is_err());
    }
}
