//! Desk-scale debiasing simulation.
//!
//! Three training methods over the synthetic datasets:
//!
//! * `ERM` — one model, plain cross entropy.
//! * `DBAM` — a biased auxiliary model chases whatever is easiest (optionally
//!   with a generalized cross entropy that amplifies that appetite), while the
//!   debiased model trains on cross entropy reweighted per sample by how much
//!   the biased model struggles relative to the debiased one.
//! * `DBAM_DID` — identical, except every update of the biased model consumes
//!   inputs whose target-feature block has been destroyed, so the auxiliary
//!   model can only ever learn the spurious block.
//!
//! Both models update simultaneously each mini-batch from gradients taken at
//! the pre-step parameters. Metrics track the per-epoch mean weight of each
//! sample category and final accuracies on a freshly sampled unbiased test
//! split (the independence product of the generating marginals).

pub mod destroy;
pub mod model;

pub use destroy::{destroy, Payload, Transform};
pub use model::{ce_loss, gce_loss, grad_check, Loss, Model, ModelKind, DEFAULT_HIDDEN};

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::synth::{self, BiasConfig, FeatureLayout, LabeledDataset, Tag};

use model::Gradients;

/// Size of the held-out unbiased test split.
pub const TEST_SPLIT_SIZE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "DBAM")]
    Dbam,
    #[serde(rename = "DBAM_DID")]
    DbamDid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Loss the biased auxiliary model trains on.
    pub biased_loss: Loss,
    /// Transform fed to the biased model's updates when the method destroys
    /// features; must be a block permutation that fits the feature width.
    pub destruction: Transform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Dbam,
            model: ModelKind::Linear,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.5,
            seed: 0,
            biased_loss: Loss::Gce { q: 0.7 },
            destruction: Transform::BlockPermute { start: 0, len: 10 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidParams { reason });
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return fail(format!(
                "learning rate {} must be positive and finite",
                self.learning_rate
            ));
        }
        self.biased_loss.validate()?;
        if self.method == Method::DbamDid {
            match self.destruction {
                Transform::BlockPermute { start, len } => {
                    if len == 0 || start + len > input_dim {
                        return fail(format!(
                            "destruction block [{start}, {}) does not fit feature width {input_dim}",
                            start + len
                        ));
                    }
                }
                other => {
                    return fail(format!(
                        "vector training destroys features by block permutation, not {other:?}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Mean per-sample weight each category received during one epoch; `None`
/// when no sample of that category was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochWeights {
    pub epoch: usize,
    pub w_ba: Option<f64>,
    pub w_bc: Option<f64>,
    pub w_bn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Accuracy over bias-conflicting samples; `None` when the test split
    /// has none (nothing is biased).
    pub bc_acc: Option<f64>,
    /// Mean of per-class accuracies on the unbiased split.
    pub avg_acc: f64,
    /// Minimum accuracy over the (target, spurious) cells present.
    pub worst_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_epoch: Vec<EpochWeights>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    /// True when some (target, spurious) cell had no test samples and was
    /// skipped by the worst-group minimum.
    pub empty_groups_skipped: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The biased auxiliary model; absent under plain ERM.
    pub biased: Option<Model>,
    pub debiased: Model,
    pub metrics: RunMetrics,
}

/// Per-sample weight for the debiased update: how much of the combined
/// cross entropy the biased model owns, `b / (b + d)`. Both losses zero —
/// both models already perfect — yields the neutral 0.5.
pub fn weight_fn(loss_biased: f64, loss_debiased: f64) -> Result<f64> {
    for loss in [loss_biased, loss_debiased] {
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::InvalidParams {
                reason: format!("losses must be finite and nonnegative, got {loss}"),
            });
        }
    }
    if loss_biased == 0.0 && loss_debiased == 0.0 {
        return Ok(0.5);
    }
    Ok(loss_biased / (loss_biased + loss_debiased))
}

#[derive(Default)]
struct WeightSums {
    by_tag: BTreeMap<Tag, (f64, u64)>,
}

impl WeightSums {
    fn record(&mut self, tag: Tag, weight: f64) {
        let entry = self.by_tag.entry(tag).or_insert((0.0, 0));
        entry.0 += weight;
        entry.1 += 1;
    }

    fn mean(&self, tag: Tag) -> Option<f64> {
        self.by_tag.get(&tag).map(|(sum, n)| sum / *n as f64)
    }
}

fn finite_or_abort(p_y: f64, step: u64) -> Result<f64> {
    if p_y.is_finite() {
        Ok(p_y)
    } else {
        Err(Error::NonFiniteLoss { step })
    }
}

/// Trains per `cfg` on `dataset` and evaluates the debiased model on a
/// fresh 10,000-sample split drawn from the independence product of
/// `origin`'s marginals (same feature layout, dedicated seed substream).
/// Bit-reproducible for fixed (dataset, origin, cfg).
///
/// # Errors
///
/// `InvalidParams` for an empty dataset or invalid config,
/// `DimensionMismatch` for inconsistent feature widths, `NonFiniteLoss`
/// with the global step index if training diverges.
pub fn train(dataset: &LabeledDataset, origin: &BiasConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    origin.validate()?;
    let n = dataset.records.len();
    if n == 0 {
        return Err(Error::InvalidParams {
            reason: "cannot train on an empty dataset".into(),
        });
    }
    let input_dim = dataset.layout.dim();
    cfg.validate(input_dim)?;
    let classes = origin.n_target;
    for record in &dataset.records {
        if record.features.len() != input_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                found: record.features.len(),
            });
        }
        if record.target >= classes || record.spurious >= origin.n_spurious {
            return Err(Error::InvalidParams {
                reason: format!(
                    "record labels ({}, {}) exceed the {}x{} label space",
                    record.target, record.spurious, classes, origin.n_spurious
                ),
            });
        }
    }

    let mut debiased = init_model(cfg, input_dim, classes, rng::stream::INIT_DEBIASED);
    let mut biased = (cfg.method != Method::Erm)
        .then(|| init_model(cfg, input_dim, classes, rng::stream::INIT_BIASED));

    let mut shuffle_rng = Rng::from_seed(cfg.seed, rng::stream::SHUFFLE);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut indices);
        let mut sums = WeightSums::default();
        for chunk in indices.chunks(cfg.batch_size) {
            step += 1;
            match biased.as_mut() {
                None => erm_batch(&mut debiased, dataset, chunk, cfg, step, &mut sums)?,
                Some(biased) => {
                    dbam_batch(biased, &mut debiased, dataset, chunk, cfg, step, &mut sums)?
                }
            }
        }
        per_epoch.push(EpochWeights {
            epoch,
            w_ba: sums.mean(Tag::Ba),
            w_bc: sums.mean(Tag::Bc),
            w_bn: sums.mean(Tag::Bn),
        });
    }

    let product = synth::independence_joint(origin)?;
    let test_seed = rng::mix(cfg.seed, rng::stream::TEST_SPLIT, 0);
    let labels = synth::sample_labels(&product, TEST_SPLIT_SIZE, test_seed);
    let test = synth::generate_features(&labels, &dataset.layout, origin, test_seed)?;
    let eval = evaluate(&debiased, &test, classes, origin.n_spurious)?;

    Ok(TrainOutcome {
        biased,
        debiased,
        metrics: RunMetrics {
            per_epoch,
            final_metrics: FinalMetrics {
                bc_acc: eval.bc_acc,
                avg_acc: eval.avg_acc,
                worst_acc: eval.worst_acc,
            },
            empty_groups_skipped: eval.empty_groups_skipped,
        },
    })
}

fn init_model(cfg: &TrainConfig, input: usize, classes: usize, stream: u64) -> Model {
    match cfg.model {
        ModelKind::Linear => Model::linear(input, classes),
        ModelKind::OneHiddenLayer => {
            let mut rng = Rng::from_seed(cfg.seed, stream);
            Model::one_hidden_layer(input, DEFAULT_HIDDEN, classes, &mut rng)
        }
    }
}

fn erm_batch(
    model: &mut Model,
    dataset: &LabeledDataset,
    chunk: &[usize],
    cfg: &TrainConfig,
    step: u64,
    sums: &mut WeightSums,
) -> Result<()> {
    let inv = 1.0 / chunk.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    for &i in chunk {
        let record = &dataset.records[i];
        let cache = model.forward_cached(&record.features)?;
        finite_or_abort(cache.probs[record.target], step)?;
        grads.accumulate(model, &record.features, &cache, &Loss::Ce, record.target, inv);
        sums.record(record.tag, 1.0);
    }
    model.sgd_step(&grads, cfg.learning_rate);
    Ok(())
}

fn dbam_batch(
    biased: &mut Model,
    debiased: &mut Model,
    dataset: &LabeledDataset,
    chunk: &[usize],
    cfg: &TrainConfig,
    step: u64,
    sums: &mut WeightSums,
) -> Result<()> {
    // Under DiD only the biased model's training inputs are destroyed; the
    // reweighting below always reads the raw features.
    let destroyed = if cfg.method == Method::DbamDid {
        let batch: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&i| dataset.records[i].features.clone())
            .collect();
        let seed = rng::mix(cfg.seed, rng::stream::DESTROY, step);
        match destroy(Payload::Batch(batch), &cfg.destruction, seed)? {
            Payload::Batch(rows) => Some(rows),
            _ => unreachable!("batch in, batch out"),
        }
    } else {
        None
    };

    let inv = 1.0 / chunk.len() as f64;
    let mut grads_biased = Gradients::zeros_like(biased);
    let mut grads_debiased = Gradients::zeros_like(debiased);
    for (pos, &i) in chunk.iter().enumerate() {
        let record = &dataset.records[i];
        let raw = record.features.as_slice();
        let train_input = destroyed.as_ref().map_or(raw, |rows| rows[pos].as_slice());

        let cache_biased = biased.forward_cached(train_input)?;
        finite_or_abort(cache_biased.probs[record.target], step)?;
        grads_biased.accumulate(
            biased,
            train_input,
            &cache_biased,
            &cfg.biased_loss,
            record.target,
            inv,
        );

        let ce_biased = if destroyed.is_some() {
            let probs = biased.forward(raw)?;
            ce_loss(&probs, finite_label(&probs, record.target, step)?)
        } else {
            ce_loss(&cache_biased.probs, record.target)
        };
        let cache_debiased = debiased.forward_cached(raw)?;
        finite_or_abort(cache_debiased.probs[record.target], step)?;
        let ce_debiased = ce_loss(&cache_debiased.probs, record.target);

        let weight = weight_fn(ce_biased, ce_debiased)?;
        grads_debiased.accumulate(
            debiased,
            raw,
            &cache_debiased,
            &Loss::Ce,
            record.target,
            weight * inv,
        );
        sums.record(record.tag, weight);
    }
    biased.sgd_step(&grads_biased, cfg.learning_rate);
    debiased.sgd_step(&grads_debiased, cfg.learning_rate);
    Ok(())
}

fn finite_label(probs: &[f64], label: usize, step: u64) -> Result<usize> {
    finite_or_abort(probs[label], step)?;
    Ok(label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bc_acc: Option<f64>,
    pub avg_acc: f64,
    pub worst_acc: f64,
    pub empty_groups_skipped: bool,
}

/// Accuracy of `model` on a tagged dataset: over bias-conflicting samples,
/// as the mean of per-class accuracies, and as the minimum over nonempty
/// (target, spurious) cells. `n_target * n_spurious` bounds the cell count
/// so missing cells can be flagged.
pub fn evaluate(
    model: &Model,
    dataset: &LabeledDataset,
    n_target: usize,
    n_spurious: usize,
) -> Result<EvalReport> {
    if dataset.records.is_empty() {
        return Err(Error::InvalidParams {
            reason: "cannot evaluate on an empty dataset".into(),
        });
    }
    let mut per_class = vec![(0u64, 0u64); n_target];
    let mut per_cell: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
    let mut bc = (0u64, 0u64);
    for record in &dataset.records {
        if record.target >= n_target || record.spurious >= n_spurious {
            return Err(Error::InvalidParams {
                reason: format!(
                    "record labels ({}, {}) exceed the {n_target}x{n_spurious} label space",
                    record.target, record.spurious
                ),
            });
        }
        let hit = u64::from(model.predict(&record.features)? == record.target);
        per_class[record.target].0 += hit;
        per_class[record.target].1 += 1;
        let cell = per_cell.entry((record.target, record.spurious)).or_insert((0, 0));
        cell.0 += hit;
        cell.1 += 1;
        if record.tag == Tag::Bc {
            bc.0 += hit;
            bc.1 += 1;
        }
    }

    let class_accs: Vec<f64> = per_class
        .iter()
        .filter(|(_, total)| *total > 0)
        .map(|(hits, total)| *hits as f64 / *total as f64)
        .collect();
    let avg_acc = class_accs.iter().sum::<f64>() / class_accs.len() as f64;
    let worst_acc = per_cell
        .values()
        .map(|(hits, total)| *hits as f64 / *total as f64)
        .fold(f64::INFINITY, f64::min);

    Ok(EvalReport {
        bc_acc: (bc.1 > 0).then(|| bc.0 as f64 / bc.1 as f64),
        avg_acc,
        worst_acc,
        empty_groups_skipped: per_cell.len() < n_target * n_spurious,
    })
}

/// Mean cross entropy of `model` per sample category.
pub fn mean_ce_by_tag(model: &Model, dataset: &LabeledDataset) -> Result<BTreeMap<Tag, f64>> {
    let mut sums: BTreeMap<Tag, (f64, u64)> = BTreeMap::new();
    for record in &dataset.records {
        let probs = model.forward(&record.features)?;
        let entry = sums.entry(record.tag).or_insert((0.0, 0));
        entry.0 += ce_loss(&probs, record.target);
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(tag, (sum, n))| (tag, sum / n as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Vary the conditional strength of every biased feature.
    Magnitude,
    /// Vary how many features are biased.
    Prevalence,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Magnitude => "magnitude",
            SweepAxis::Prevalence => "prevalence",
        })
    }
}

/// One full sweep: for each (value, seed) pair, synthesize a dataset from
/// the axis-adjusted configuration and train once.
#[derive(Debug, Clone)]
pub struct SweepRequest {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: BiasConfig,
    /// Conditional strength applied to biased features on the prevalence
    /// axis (the magnitude axis carries the strength in `values`).
    pub corr: f64,
    pub layout: FeatureLayout,
    pub n_train: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// The configuration a sweep runs at one axis value.
pub fn point_config(
    axis: SweepAxis,
    base: &BiasConfig,
    value: f64,
    corr: f64,
) -> Result<BiasConfig> {
    match axis {
        SweepAxis::Magnitude => {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParams {
                    reason: format!("conditional strength {value} must lie in [0, 1]"),
                });
            }
            if base.biased_set.is_empty() {
                return Err(Error::InvalidParams {
                    reason: "magnitude sweep needs a base with a nonempty biased set".into(),
                });
            }
            let mut cfg = base.clone();
            for strength in cfg.corr.values_mut() {
                *strength = value;
            }
            cfg.validate()?;
            Ok(cfg)
        }
        SweepAxis::Prevalence => {
            if !value.is_finite() || value < 0.0 || value.fract() != 0.0 {
                return Err(Error::InvalidParams {
                    reason: format!("biased-feature counts must be whole, got {value}"),
                });
            }
            let k = value as usize;
            let cfg = BiasConfig {
                n_target: base.n_target,
                n_spurious: base.n_spurious,
                target_marginal: base.target_marginal.clone(),
                spurious_marginal: base.spurious_marginal.clone(),
                biased_set: (0..k).collect(),
                g: (0..k).map(|i| (i, i)).collect(),
                corr: (0..k).map(|i| (i, corr)).collect(),
            };
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

/// Runs every (value, seed) combination; rows come back sorted by value
/// then seed regardless of execution order. Infeasible axis values fail
/// before any training starts.
pub fn sweep(request: &SweepRequest) -> Result<SweepTable> {
    request.base.validate()?;
    request.layout.validate()?;
    if request.values.is_empty() || request.seeds.is_empty() {
        return Err(Error::InvalidParams {
            reason: "sweep needs at least one value and one seed".into(),
        });
    }
    if request.n_train == 0 {
        return Err(Error::InvalidParams {
            reason: "sweep needs a nonempty training set".into(),
        });
    }

    let mut jobs = Vec::with_capacity(request.values.len() * request.seeds.len());
    for &value in &request.values {
        let cfg = point_config(request.axis, &request.base, value, request.corr)?;
        synth::build_joint(&cfg)?; // surface InfeasibleConfig up front
        for &seed in &request.seeds {
            jobs.push((value, seed, cfg.clone()));
        }
    }

    let mut points = jobs
        .into_par_iter()
        .map(|(value, seed, cfg)| {
            let (_, dataset) = synth::synthesize(&cfg, &request.layout, request.n_train, seed)?;
            let run_cfg = TrainConfig {
                seed,
                ..request.train.clone()
            };
            let outcome = train(&dataset, &cfg, &run_cfg)?;
            Ok(SweepPoint {
                value,
                seed,
                metrics: outcome.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
    Ok(SweepTable {
        axis: request.axis,
        points,
    })
}
