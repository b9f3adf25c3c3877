use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MeasureError;
use crate::data::Dataset;
use crate::expr::{evaluate, Decomposition, HoleEnv, Value};

/// Pairs drawn from one random sub-stream. Fixed so the estimate does not
/// depend on how chunks are spread over workers.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InfluenceMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceResult {
    pub iota: f64,
    pub mode: InfluenceMode,
    /// Analysis rows, and how many of them reach the subprogram.
    pub population: usize,
    pub reached: usize,
    pub reach_conditioned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Hoeffding sample size: with `n` pairs the estimate is within `beta` of
/// the exact value except with probability `alpha`.
pub fn hoeffding_samples(alpha: f64, beta: f64) -> Result<usize, MeasureError> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(MeasureError::BadParameter(format!(
                "{name} must lie in (0, 1), got {v}"
            )));
        }
    }
    Ok(((2.0 / alpha).ln() / (2.0 * beta * beta)).ceil() as usize)
}

/// Per-row values shared by both estimators.
struct Prepared<'a> {
    d: &'a Decomposition,
    data: &'a Dataset,
    rows: &'a [usize],
    inner: Vec<Value>,
    outer: Vec<Value>,
    reached: Vec<bool>,
}

impl<'a> Prepared<'a> {
    fn new(d: &'a Decomposition, data: &'a Dataset) -> Result<Prepared<'a>, MeasureError> {
        let rows = data.analysis();
        if rows.is_empty() {
            return Err(MeasureError::Empty);
        }
        let per_row: Vec<(Value, Value, bool)> = rows
            .par_iter()
            .map(|&r| {
                let env = data.row_env(r);
                let v = evaluate(&d.subprogram, &env).map_err(|e| MeasureError::eval(d, r, None, e))?;
                let hole = HoleEnv::new(&env, &d.hole_var, v);
                let out = evaluate(&d.context, &hole).map_err(|e| MeasureError::eval(d, r, None, e))?;
                Ok((v, out, hole.touched()))
            })
            .collect::<Result<_, MeasureError>>()?;
        let mut inner = Vec::with_capacity(rows.len());
        let mut outer = Vec::with_capacity(rows.len());
        let mut reached = Vec::with_capacity(rows.len());
        for (v, o, t) in per_row {
            inner.push(v);
            outer.push(o);
            reached.push(t);
        }
        Ok(Prepared {
            d,
            data,
            rows,
            inner,
            outer,
            reached,
        })
    }

    /// Whether substituting `v` for the subprogram's value on row `i`
    /// changes the output.
    fn differs(&self, i: usize, v: Value) -> Result<bool, MeasureError> {
        if v == self.inner[i] {
            return Ok(false);
        }
        let r = self.rows[i];
        let env = self.data.row_env(r);
        let out = evaluate(&self.d.context, &HoleEnv::new(&env, &self.d.hole_var, v))
            .map_err(|e| MeasureError::eval(self.d, r, Some(v), e))?;
        Ok(out != self.outer[i])
    }

    fn reach_count(&self) -> usize {
        self.reached.iter().filter(|&&t| t).count()
    }
}

/// Exact double sum over all analysis pairs,
/// `(1/N²) Σ_x Σ_x' 1(p2(x, p1(x)) ≠ p2(x, p1(x')))`.
///
/// With `reach_conditioned`, rows on which evaluation never reads the hole
/// are skipped: they contribute nothing, so the value is identical.
pub fn influence_exact(
    d: &Decomposition,
    data: &Dataset,
    reach_conditioned: bool,
) -> Result<InfluenceResult, MeasureError> {
    let prep = Prepared::new(d, data)?;
    let n = prep.rows.len();
    let mut counts: BTreeMap<Value, u64> = BTreeMap::new();
    for v in &prep.inner {
        *counts.entry(*v).or_insert(0) += 1;
    }
    let counts: Vec<(Value, u64)> = counts.into_iter().collect();
    let total: u64 = (0..n)
        .into_par_iter()
        .map(|i| {
            if reach_conditioned && !prep.reached[i] {
                return Ok(0);
            }
            let mut s = 0;
            for &(v, c) in &counts {
                if prep.differs(i, v)? {
                    s += c;
                }
            }
            Ok(s)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(InfluenceResult {
        iota: total as f64 / (n as f64 * n as f64),
        mode: InfluenceMode::Exact,
        population: n,
        reached: prep.reach_count(),
        reach_conditioned,
        samples: None,
        alpha: None,
        beta: None,
        seed: None,
    })
}

/// Monte-Carlo estimate from `hoeffding_samples(alpha, beta)` pairs drawn
/// with replacement. With `reach_conditioned`, the first row of each pair
/// is drawn among rows reaching the subprogram and the mean is scaled by
/// the reached fraction.
pub fn influence_sampled(
    d: &Decomposition,
    data: &Dataset,
    alpha: f64,
    beta: f64,
    seed: u64,
    reach_conditioned: bool,
) -> Result<InfluenceResult, MeasureError> {
    let samples = hoeffding_samples(alpha, beta)?;
    let prep = Prepared::new(d, data)?;
    let n = prep.rows.len();
    let first: Vec<usize> = if reach_conditioned {
        (0..n).filter(|&i| prep.reached[i]).collect()
    } else {
        (0..n).collect()
    };
    let result = |iota| InfluenceResult {
        iota,
        mode: InfluenceMode::Sampled,
        population: n,
        reached: prep.reach_count(),
        reach_conditioned,
        samples: Some(samples),
        alpha: Some(alpha),
        beta: Some(beta),
        seed: Some(seed),
    };
    if first.is_empty() {
        return Ok(result(0.0));
    }
    let chunks = samples.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let len = CHUNK.min(samples - k * CHUNK);
            let mut h = 0;
            for _ in 0..len {
                let x = first[rng.gen_range(0..first.len())];
                let x2 = rng.gen_range(0..n);
                if prep.differs(x, prep.inner[x2])? {
                    h += 1;
                }
            }
            Ok(h)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let mean = hits as f64 / samples as f64;
    Ok(result(first.len() as f64 / n as f64 * mean))
}
