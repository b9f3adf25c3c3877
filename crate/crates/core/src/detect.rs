//! Proxy-use detection: measure every decomposition and keep those at or
//! above both thresholds.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::expr::{enumerate_decompositions, Decomposition, EnumerationCaps, Expr, ExprError, Site, Value};
use crate::measures::{
    association, discrete_codes, influence_exact, influence_sampled, outputs,
    permutation_p_value, AssociationResult, InfluenceMode, InfluenceResult, MeasureError,
    DEFAULT_MAX_BINS, PERMUTATIONS,
};

/// Exact influence is affordable when the analysis subset has at most this
/// many ordered pairs.
pub const EXACT_PAIR_BUDGET: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the program reads the protected column `{0}`; pass allow-explicit-use to audit it")]
    ProtectedInput(String),
    #[error("the program reads `{0}`, which is not a feature column of the dataset")]
    UnknownFeature(String),
    #[error(transparent)]
    Program(#[from] ExprError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default = "default_bound")]
    pub alpha: f64,
    #[serde(default = "default_bound")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub influence: InfluenceMode,
    #[serde(default = "default_bins")]
    pub max_bins: usize,
    #[serde(default)]
    pub caps: EnumerationCaps,
    #[serde(default)]
    pub permutation_test: bool,
    #[serde(default = "yes")]
    pub reach_conditioning: bool,
    /// Thread cap; results do not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

fn default_bound() -> f64 {
    0.05
}

fn default_bins() -> usize {
    DEFAULT_MAX_BINS
}

fn yes() -> bool {
    true
}

impl AuditConfig {
    pub fn new(epsilon: f64, delta: f64) -> AuditConfig {
        AuditConfig {
            epsilon,
            delta,
            alpha: default_bound(),
            beta: default_bound(),
            seed: 0,
            influence: InfluenceMode::Exact,
            max_bins: DEFAULT_MAX_BINS,
            caps: EnumerationCaps::default(),
            permutation_test: false,
            reach_conditioning: true,
            workers: None,
        }
    }

    /// Thresholds above 1 are accepted (nothing can reach them); negative
    /// or NaN thresholds are not.
    pub fn validate(&self) -> Result<(), DetectError> {
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if v.is_nan() || v < 0.0 {
                return Err(DetectError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DetectError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_bins < 2 {
            return Err(DetectError::Config("max_bins must be at least 2".into()));
        }
        if self.workers == Some(0) {
            return Err(DetectError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Runs `f` on a pool capped at `workers` threads, if set.
    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, DetectError> {
        match self.workers {
            None => Ok(f()),
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| DetectError::Workers(e.to_string())),
        }
    }
}

/// A measured decomposition. Detection returns those that pass both
/// thresholds; the scatter table lists all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub id: String,
    pub sites: Vec<Site>,
    pub hole_var: String,
    pub subprogram: Expr,
    pub subprogram_text: String,
    pub size: usize,
    pub mentions: Vec<String>,
    pub epsilon_hat: f64,
    pub delta_hat: f64,
    pub association: AssociationResult,
    pub influence: InfluenceResult,
}

impl Witness {
    pub fn site_key(&self) -> String {
        self.sites
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// The decomposition this witness was measured on.
    pub fn decomposition(&self, p: &Expr) -> Result<Decomposition, ExprError> {
        Decomposition::at_sites(p, self.sites.clone())
    }

    pub fn passes(&self, cfg: &AuditConfig) -> bool {
        self.epsilon_hat >= cfg.epsilon && self.delta_hat >= cfg.delta
    }
}

pub fn witness_id(p: &Expr, sites: &[Site]) -> String {
    let mut h = Sha256::new();
    h.update(p.to_json().as_bytes());
    for s in sites {
        h.update(b"\n");
        h.update(s.to_string().as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub fn program_digest(p: &Expr) -> String {
    hex::encode(Sha256::digest(p.to_json().as_bytes()))
}

/// Sampling seed for one decomposition, derived from the run seed.
pub fn decomposition_seed(seed: u64, site_key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(site_key.as_bytes());
    let b = h.finalize();
    u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
}

/// Every decomposition with its measures, in enumeration order.
#[derive(Debug, Clone)]
pub struct Audit {
    pub measured: Vec<Witness>,
    pub truncated: bool,
}

impl Audit {
    /// The measured decompositions passing both thresholds, ordered by
    /// descending influence, then descending association, then position.
    pub fn witnesses(&self, cfg: &AuditConfig) -> Vec<Witness> {
        let mut w: Vec<Witness> = self.measured.iter().filter(|w| w.passes(cfg)).cloned().collect();
        w.sort_by(witness_order);
        w
    }
}

pub fn witness_order(a: &Witness, b: &Witness) -> Ordering {
    b.delta_hat
        .total_cmp(&a.delta_hat)
        .then(b.epsilon_hat.total_cmp(&a.epsilon_hat))
        .then_with(|| a.sites.cmp(&b.sites))
}

pub(crate) fn check_inputs(p: &Expr, data: &Dataset) -> Result<(), DetectError> {
    p.check()?;
    let features = data.feature_columns();
    for v in p.free_vars() {
        if !features.contains(&v.as_str()) {
            if v == data.protected() {
                return Err(DetectError::ProtectedInput(v));
            }
            return Err(DetectError::UnknownFeature(v));
        }
    }
    Ok(())
}

/// Discrete codes of the protected column over the analysis subset.
pub(crate) fn protected_codes(data: &Dataset, cfg: &AuditConfig) -> Result<Vec<usize>, DetectError> {
    let z: Vec<Value> = data
        .column_at(data.protected(), data.analysis())
        .map_err(|_| MeasureError::MissingColumn(data.protected().to_string()))?
        .into_iter()
        .map(Value::Num)
        .collect();
    Ok(discrete_codes(&z, cfg.max_bins)?)
}

/// Association of `p1`'s outputs with the protected codes `z`.
pub(crate) fn subprogram_association(
    p1: &Expr,
    data: &Dataset,
    z: &[usize],
    cfg: &AuditConfig,
) -> Result<AssociationResult, MeasureError> {
    let xs = discrete_codes(&outputs(p1, data, data.analysis())?, cfg.max_bins)?;
    let mut a = association(&xs, z)?;
    if cfg.permutation_test {
        a.p_value = Some(permutation_p_value(&xs, z, PERMUTATIONS, cfg.seed)?);
    }
    Ok(a)
}

/// Influence per the configured mode. Sampled estimates within `beta` of
/// the threshold are redone exactly when that is affordable.
pub(crate) fn measure_influence(
    d: &Decomposition,
    data: &Dataset,
    cfg: &AuditConfig,
) -> Result<InfluenceResult, MeasureError> {
    let n = data.analysis().len();
    let affordable = n.saturating_mul(n) <= EXACT_PAIR_BUDGET;
    match cfg.influence {
        InfluenceMode::Exact => influence_exact(d, data, cfg.reach_conditioning),
        InfluenceMode::Sampled => {
            let seed = decomposition_seed(cfg.seed, &d.site_key());
            let r = influence_sampled(d, data, cfg.alpha, cfg.beta, seed, cfg.reach_conditioning)?;
            if affordable && (r.iota - cfg.delta).abs() <= cfg.beta {
                influence_exact(d, data, cfg.reach_conditioning)
            } else {
                Ok(r)
            }
        }
    }
}

pub(crate) fn measure_decomposition(
    p: &Expr,
    d: &Decomposition,
    data: &Dataset,
    cfg: &AuditConfig,
    association: AssociationResult,
) -> Result<Witness, MeasureError> {
    let influence = measure_influence(d, data, cfg)?;
    Ok(Witness {
        id: witness_id(p, &d.sites),
        sites: d.sites.clone(),
        hole_var: d.hole_var.clone(),
        subprogram_text: d.subprogram.to_string(),
        size: d.subprogram.size(),
        mentions: d.subprogram.free_vars().into_iter().collect(),
        subprogram: d.subprogram.clone(),
        epsilon_hat: association.d,
        delta_hat: influence.iota,
        association,
        influence,
    })
}

/// Measures every enumerated decomposition of `p`.
pub fn audit(p: &Expr, data: &Dataset, cfg: &AuditConfig) -> Result<Audit, DetectError> {
    cfg.validate()?;
    check_inputs(p, data)?;
    let z = protected_codes(data, cfg)?;
    let en = enumerate_decompositions(p, &cfg.caps);
    let measured = cfg.install(|| -> Result<Vec<Witness>, MeasureError> {
        // association depends only on the subprogram
        let mut keys: Vec<Expr> = Vec::new();
        let mut slot: HashMap<Expr, usize> = HashMap::new();
        for d in &en.decompositions {
            let k = d.subprogram.canonical();
            if !slot.contains_key(&k) {
                slot.insert(k.clone(), keys.len());
                keys.push(k);
            }
        }
        let firsts: Vec<&Decomposition> = keys
            .iter()
            .map(|k| {
                en.decompositions
                    .iter()
                    .find(|d| d.subprogram.canonical() == *k)
                    .expect("key came from a decomposition")
            })
            .collect();
        let assoc: Vec<AssociationResult> = firsts
            .par_iter()
            .map(|d| subprogram_association(&d.subprogram, data, &z, cfg))
            .collect::<Result<_, _>>()?;
        en.decompositions
            .par_iter()
            .map(|d| {
                let a = assoc[slot[&d.subprogram.canonical()]].clone();
                measure_decomposition(p, d, data, cfg, a)
            })
            .collect()
    })??;
    Ok(Audit {
        measured,
        truncated: en.truncated,
    })
}

/// Decompositions of `p` that are (ε,δ)-proxy uses of the protected column.
pub fn proxy_detect(p: &Expr, data: &Dataset, cfg: &AuditConfig) -> Result<Vec<Witness>, DetectError> {
    Ok(audit(p, data, cfg)?.witnesses(cfg))
}

/// Detection output with enough context to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: AuditConfig,
    pub protected: String,
    pub dataset_digest: String,
    pub program_digest: String,
    pub analysis_rows: usize,
    pub decompositions: usize,
    pub truncated: bool,
    pub witnesses: Vec<Witness>,
}

impl Report {
    pub fn new(p: &Expr, data: &Dataset, cfg: &AuditConfig, audit: &Audit) -> Report {
        Report {
            config: cfg.clone(),
            protected: data.protected().to_string(),
            dataset_digest: data.digest(),
            program_digest: program_digest(p),
            analysis_rows: data.analysis().len(),
            decompositions: audit.measured.len(),
            truncated: audit.truncated,
            witnesses: audit.witnesses(cfg),
        }
    }
}

pub const SCATTER_HEADER: &str = "node_path\tsize\tepsilon\tdelta\tparent_path\tphase";

/// One point of the association/influence scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub node_path: String,
    pub size: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Site of the closest enclosing node, `-` for the whole program.
    pub parent_path: String,
    pub phase: String,
}

impl ScatterRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.node_path, self.size, self.epsilon, self.delta, self.parent_path, self.phase
        )
    }

    /// Inside the region where both thresholds are met.
    pub fn prohibited(&self, cfg: &AuditConfig) -> bool {
        self.epsilon >= cfg.epsilon && self.delta >= cfg.delta
    }
}

fn parent_of(sites: &[Site]) -> String {
    let s = &sites[0];
    let parent = if s.is_node() { s.node.parent() } else { Some(s.node.clone()) };
    parent.map_or_else(|| "-".to_string(), |p| p.to_string())
}

pub fn scatter_rows(audit: &Audit, phase: &str) -> Vec<ScatterRow> {
    audit
        .measured
        .iter()
        .map(|w| ScatterRow {
            node_path: w.site_key(),
            size: w.size,
            epsilon: w.epsilon_hat,
            delta: w.delta_hat,
            parent_path: parent_of(&w.sites),
            phase: phase.to_string(),
        })
        .collect()
}

/// One scatter row per enumerated decomposition of `p`.
pub fn emit_scatter(
    p: &Expr,
    data: &Dataset,
    cfg: &AuditConfig,
    phase: &str,
) -> Result<Vec<ScatterRow>, DetectError> {
    Ok(scatter_rows(&audit(p, data, cfg)?, phase))
}

pub fn scatter_tsv(rows: &[ScatterRow]) -> String {
    let mut s = String::from(SCATTER_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_tsv());
        s.push('\n');
    }
    s
}
