//! Synthesis of joint distributions with controlled bias, and of labeled
//! datasets sampled from them.
//!
//! A [`BiasConfig`] names a set of biased spurious values, maps each to a
//! correlated target class, and fixes the conditional strength `corr_i`;
//! [`build_joint`] realizes it as an exact joint table whose residual
//! columns absorb whatever probability is left of each target class.
//! [`sample_labels`] and [`generate_features`] then produce labeled records
//! with one-hot-plus-noise feature vectors, tagged by whether the spurious
//! value is biased and agrees with its correlated class (BA), disagrees
//! (BC), or is not biased at all (BN).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::{CategoricalDist, JointDist};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Recipe for one biased joint distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasConfig {
    pub n_target: usize,
    pub n_spurious: usize,
    pub target_marginal: CategoricalDist,
    pub spurious_marginal: CategoricalDist,
    /// Biased spurious values, strictly increasing.
    pub biased_set: Vec<usize>,
    /// Injective map from biased spurious value to its correlated target class.
    pub g: BTreeMap<usize, usize>,
    /// Per biased value, the conditional probability of the correlated class.
    pub corr: BTreeMap<usize, f64>,
}

impl BiasConfig {
    /// # Errors
    ///
    /// `InvalidConfig` describing the first violated structural rule:
    /// marginal arities, biased-set ordering and range, `g` injective and
    /// keyed exactly by the biased set, every `corr_i` in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        if self.n_target < 2 || self.n_spurious < 2 {
            return fail(format!(
                "need at least 2 target and 2 spurious values, got {}x{}",
                self.n_target, self.n_spurious
            ));
        }
        if self.target_marginal.len() != self.n_target {
            return fail(format!(
                "target marginal has {} entries for {} classes",
                self.target_marginal.len(),
                self.n_target
            ));
        }
        if self.spurious_marginal.len() != self.n_spurious {
            return fail(format!(
                "spurious marginal has {} entries for {} values",
                self.spurious_marginal.len(),
                self.n_spurious
            ));
        }
        if self.biased_set.len() > self.n_target {
            return fail(format!(
                "{} biased values cannot map injectively into {} target classes",
                self.biased_set.len(),
                self.n_target
            ));
        }
        if !self.biased_set.windows(2).all(|w| w[0] < w[1]) {
            return fail("biased_set must be strictly increasing".into());
        }
        if self.biased_set.iter().any(|&s| s >= self.n_spurious) {
            return fail("biased_set index out of range".into());
        }
        let keys: Vec<usize> = self.g.keys().copied().collect();
        if keys != self.biased_set {
            return fail("g must be keyed by exactly the biased set".into());
        }
        if self.g.values().any(|&t| t >= self.n_target) {
            return fail("g maps to a target class out of range".into());
        }
        let distinct: BTreeSet<usize> = self.g.values().copied().collect();
        if distinct.len() != self.g.len() {
            return fail("g must be injective".into());
        }
        let corr_keys: Vec<usize> = self.corr.keys().copied().collect();
        if corr_keys != self.biased_set {
            return fail("corr must be keyed by exactly the biased set".into());
        }
        if self
            .corr
            .values()
            .any(|&c| !c.is_finite() || !(0.0..=1.0).contains(&c))
        {
            return fail("every corr_i must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Uniform-marginal configuration over `n_target` x `n_spurious` in which
/// the first `k` spurious values are biased toward their own index at
/// strength `corr` — the shape every preset and sweep point uses.
pub fn identity_config(
    n_target: usize,
    n_spurious: usize,
    k: usize,
    corr: f64,
) -> Result<BiasConfig> {
    let cfg = BiasConfig {
        n_target,
        n_spurious,
        target_marginal: CategoricalDist::uniform(n_target)?,
        spurious_marginal: CategoricalDist::uniform(n_spurious)?,
        biased_set: (0..k).collect(),
        g: (0..k).map(|i| (i, i)).collect(),
        corr: (0..k).map(|i| (i, corr)).collect(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The five named configurations: 10 uniform classes on both axes, identity
/// correlation map, and (|B|, corr) of lmlp (10, 0.5), lmlp' (5, 0.5),
/// hmlp (1, 0.98), hmhp (10, 0.98), unbiased (0, -).
pub fn preset(name: &str) -> Result<BiasConfig> {
    let (k, corr) = match name.trim().to_ascii_lowercase().as_str() {
        "lmlp" => (10, 0.5),
        "lmlp'" | "lmlp-prime" | "lmlp_prime" => (5, 0.5),
        "hmlp" => (1, 0.98),
        "hmhp" => (10, 0.98),
        "unbiased" => (0, 0.1),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
            })
        }
    };
    identity_config(10, 10, k, corr)
}

pub const PRESET_NAMES: [&str; 5] = ["lmlp", "lmlp'", "hmlp", "hmhp", "unbiased"];

/// Builds the exact joint table for a configuration.
///
/// Biased column `s` holds `P(s) * corr_s` on row `g(s)` and spreads
/// `P(s) * (1 - corr_s)` evenly over the other rows. The remaining columns
/// split whatever each target row still needs evenly among themselves. When
/// every column is biased there is nothing left to adjust, so the row sums
/// must already reproduce the target marginal.
///
/// # Errors
///
/// `InfeasibleConfig` with the offending (target, spurious) pair when a
/// residual cell would be negative, or when a fully-biased configuration
/// cannot meet the target marginal.
pub fn build_joint(cfg: &BiasConfig) -> Result<JointDist> {
    cfg.validate()?;
    let (nt, ns) = (cfg.n_target, cfg.n_spurious);
    let pt = cfg.target_marginal.probs();
    let ps = cfg.spurious_marginal.probs();
    let mut biased = vec![false; ns];
    for &s in &cfg.biased_set {
        biased[s] = true;
    }

    let mut table = vec![vec![0.0; ns]; nt];
    for &s in &cfg.biased_set {
        let g = cfg.g[&s];
        let corr = cfg.corr[&s];
        for (t, row) in table.iter_mut().enumerate() {
            row[s] = if t == g {
                ps[s] * corr
            } else {
                ps[s] * (1.0 - corr) / (nt as f64 - 1.0)
            };
        }
    }

    let free = ns - cfg.biased_set.len();
    if free > 0 {
        for t in 0..nt {
            let used: f64 = cfg.biased_set.iter().map(|&s| table[t][s]).sum();
            let mut residual = (pt[t] - used) / free as f64;
            if residual < 0.0 {
                if residual * (free as f64) < -1e-12 {
                    let s = biased.iter().position(|&b| !b).expect("free column");
                    return Err(Error::InfeasibleConfig {
                        target: t,
                        spurious: s,
                    });
                }
                residual = 0.0; // rounding dust from the subtraction
            }
            for s in 0..ns {
                if !biased[s] {
                    table[t][s] = residual;
                }
            }
        }
    } else {
        for (t, row) in table.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - pt[t]).abs() > 1e-12 {
                return Err(Error::InfeasibleConfig {
                    target: t,
                    spurious: cfg.biased_set[0],
                });
            }
        }
    }
    JointDist::from_table(table)
}

/// The independence product of the configured marginals — the joint a
/// bias-free dataset with the same class balance would have.
pub fn independence_joint(cfg: &BiasConfig) -> Result<JointDist> {
    let pt = cfg.target_marginal.probs();
    let ps = cfg.spurious_marginal.probs();
    JointDist::from_table(
        pt.iter()
            .map(|&t| ps.iter().map(|&s| t * s).collect())
            .collect(),
    )
}

/// `n` i.i.d. draws of (target, spurious) pairs. Bit-reproducible from
/// (joint, n, seed).
pub fn sample_labels(joint: &JointDist, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let ns = joint.n_spurious();
    let mut cumulative = Vec::with_capacity(joint.n_target() * ns);
    let mut acc = 0.0;
    for row in joint.table() {
        for &cell in row {
            acc += cell;
            cumulative.push(acc);
        }
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    let mut rng = Rng::from_seed(seed, rng::stream::LABELS);
    (0..n)
        .map(|_| {
            let flat = rng.categorical(&cumulative);
            (flat / ns, flat % ns)
        })
        .collect()
}

/// Sample category: biased spurious value agreeing with its correlated
/// class (BA), disagreeing (BC), or no biased value at all (BN).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "BA")]
    Ba,
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "BN")]
    Bn,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Ba => "BA",
            Tag::Bc => "BC",
            Tag::Bn => "BN",
        }
    }
    pub const ALL: [Tag; 3] = [Tag::Ba, Tag::Bc, Tag::Bn];
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Tag> {
        match s {
            "BA" => Ok(Tag::Ba),
            "BC" => Ok(Tag::Bc),
            "BN" => Ok(Tag::Bn),
            other => Err(Error::ParseFailure {
                detail: format!("unknown tag {other:?}"),
            }),
        }
    }
}

pub fn categorize(
    target: usize,
    spurious: usize,
    biased_set: &[usize],
    g: &BTreeMap<usize, usize>,
) -> Tag {
    if !biased_set.contains(&spurious) {
        Tag::Bn
    } else if g.get(&spurious) == Some(&target) {
        Tag::Ba
    } else {
        Tag::Bc
    }
}

/// Shape of the synthetic feature vectors: a one-hot target block and a
/// one-hot spurious block, each perturbed by isotropic gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub target_dim: usize,
    pub spurious_dim: usize,
    pub noise_target: f64,
    pub noise_spurious: f64,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout {
            target_dim: 10,
            spurious_dim: 10,
            noise_target: 1.0,
            noise_spurious: 0.2,
        }
    }
}

impl FeatureLayout {
    /// The spurious block must be strictly less noisy than the target block
    /// — that ordering is what makes the spurious feature the easy one. The
    /// one exception is the fully noise-free layout (both scales zero),
    /// where the blocks are exact one-hots.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidLayout { reason });
        if self.target_dim == 0 || self.spurious_dim == 0 {
            return fail("feature blocks need at least one dimension".into());
        }
        for noise in [self.noise_target, self.noise_spurious] {
            if !noise.is_finite() || noise < 0.0 {
                return fail(format!("noise scale {noise} must be finite and >= 0"));
            }
        }
        let noise_free = self.noise_target == 0.0 && self.noise_spurious == 0.0;
        if !noise_free && self.noise_spurious >= self.noise_target {
            return fail(format!(
                "spurious noise {} must be below target noise {} to keep the spurious feature easier",
                self.noise_spurious, self.noise_target
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.target_dim + self.spurious_dim
    }
}

#[derive(Debug, Clone)]
pub struct Record {
    pub target: usize,
    pub spurious: usize,
    pub tag: Tag,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    pub layout: FeatureLayout,
    pub seed: u64,
}

/// Realizes label pairs as feature vectors and tags them. Labels beyond the
/// block width wrap around (label mod dim). Deterministic under `seed`.
pub fn generate_features(
    labels: &[(usize, usize)],
    layout: &FeatureLayout,
    cfg: &BiasConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    layout.validate()?;
    let mut rng = Rng::from_seed(seed, rng::stream::FEATURES);
    let records = labels
        .iter()
        .map(|&(target, spurious)| {
            let mut features = Vec::with_capacity(layout.dim());
            for i in 0..layout.target_dim {
                let hot = (i == target % layout.target_dim) as u8 as f64;
                features.push(hot + layout.noise_target * rng.gaussian());
            }
            for i in 0..layout.spurious_dim {
                let hot = (i == spurious % layout.spurious_dim) as u8 as f64;
                features.push(hot + layout.noise_spurious * rng.gaussian());
            }
            Record {
                target,
                spurious,
                tag: categorize(target, spurious, &cfg.biased_set, &cfg.g),
                features,
            }
        })
        .collect();
    Ok(LabeledDataset {
        records,
        layout: layout.clone(),
        seed,
    })
}

/// One-call pipeline: exact joint, sampled labels, tagged feature records.
pub fn synthesize(
    cfg: &BiasConfig,
    layout: &FeatureLayout,
    n: usize,
    seed: u64,
) -> Result<(JointDist, LabeledDataset)> {
    if n == 0 {
        return Err(Error::InvalidParams {
            reason: "dataset size must be at least 1".into(),
        });
    }
    let joint = build_joint(cfg)?;
    let labels = sample_labels(&joint, n, seed);
    let dataset = generate_features(&labels, layout, cfg, seed)?;
    Ok((joint, dataset))
}
