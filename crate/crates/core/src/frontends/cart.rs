//! CART trees: the indented text dump produced by common tree libraries, and
//! a small Gini learner.

use std::collections::BTreeMap;

use super::{FrontendError, TreeSpec};
use crate::data::Dataset;
use crate::expr::Value;

struct Line<'a> {
    depth: usize,
    body: &'a str,
    number: usize,
}

/// Parses a text dump such as
///
/// ```text
/// |--- age <= 30.50
/// |   |--- class: 1
/// |--- age >  30.50
/// |   |--- class: 0
/// ```
///
/// Leaves may read `class: L` or `value: [v]`. Thresholds are taken as
/// printed, so the dump's rounding carries over into the program.
pub fn parse_cart_text(text: &str) -> Result<TreeSpec, FrontendError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut rest = raw.trim_end();
        let mut depth = 0;
        while let Some(r) = rest.strip_prefix("|   ") {
            depth += 1;
            rest = r;
        }
        let body = rest.strip_prefix("|---").ok_or_else(|| {
            FrontendError::Schema(format!("line {}: expected `|---`", i + 1))
        })?;
        lines.push(Line {
            depth,
            body: body.trim(),
            number: i + 1,
        });
    }
    let mut pos = 0;
    let tree = parse_node(&lines, &mut pos, 0)?;
    if pos != lines.len() {
        return Err(FrontendError::Schema(format!(
            "line {}: unexpected trailing node",
            lines[pos].number
        )));
    }
    Ok(tree)
}

fn parse_node(lines: &[Line<'_>], pos: &mut usize, depth: usize) -> Result<TreeSpec, FrontendError> {
    let line = lines
        .get(*pos)
        .ok_or_else(|| FrontendError::Schema("tree dump ends early".into()))?;
    if line.depth != depth {
        return Err(FrontendError::Schema(format!(
            "line {}: expected depth {depth}, found {}",
            line.number, line.depth
        )));
    }
    *pos += 1;
    if let Some(leaf) = parse_leaf(line.body) {
        return leaf.map(TreeSpec::leaf).map_err(|m| schema(line, &m));
    }
    let (feature, threshold) = parse_condition(line.body, "<=").ok_or_else(|| {
        schema(line, "expected `feature <= threshold` or a leaf")
    })?;
    let left = parse_node(lines, pos, depth + 1)?;
    let other = lines
        .get(*pos)
        .ok_or_else(|| FrontendError::Schema("tree dump ends before a right branch".into()))?;
    match parse_condition(other.body, ">") {
        Some((f, t)) if other.depth == depth && f == feature && t == threshold => {}
        _ => return Err(schema(other, &format!("expected `{feature} >  {threshold}`"))),
    }
    *pos += 1;
    let right = parse_node(lines, pos, depth + 1)?;
    Ok(TreeSpec::split(feature, threshold, left, right))
}

fn schema(line: &Line<'_>, msg: &str) -> FrontendError {
    FrontendError::Schema(format!("line {}: {msg}", line.number))
}

fn parse_condition<'a>(body: &'a str, op: &str) -> Option<(&'a str, f64)> {
    let (f, t) = body.split_once(&format!(" {op} "))?;
    let t: f64 = t.trim().parse().ok()?;
    Some((f.trim(), t))
}

fn parse_leaf(body: &str) -> Option<Result<Value, String>> {
    let label = if let Some(idx) = body.find("class:") {
        body[idx + "class:".len()..].trim()
    } else if let Some(v) = body.strip_prefix("value:") {
        v.trim().trim_start_matches('[').trim_end_matches(']').trim()
    } else if body.starts_with("truncated branch") {
        return Some(Err("truncated branches cannot be imported".into()));
    } else {
        return None;
    };
    Some(match label {
        "True" | "true" => Ok(Value::Bool(true)),
        "False" | "false" => Ok(Value::Bool(false)),
        l => l
            .parse::<f64>()
            .map(Value::Num)
            .map_err(|_| format!("leaf label `{l}` is not numeric or boolean")),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 5,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

/// Fits a classification tree with Gini impurity on `rows` of `data`.
///
/// Deterministic: candidate thresholds are midpoints between consecutive
/// distinct values, and ties go to the earlier feature, then the smaller
/// threshold. Leaves predict the majority label (smaller label on ties).
pub fn train_cart(
    data: &Dataset,
    rows: &[usize],
    features: &[&str],
    label: &str,
    params: &CartParams,
) -> Result<TreeSpec, FrontendError> {
    let col = |name: &str| {
        data.column_index(name)
            .ok_or_else(|| FrontendError::Schema(format!("no column `{name}`")))
    };
    let label_col = col(label)?;
    let feature_cols = features.iter().map(|f| col(f)).collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(FrontendError::Schema("no training rows".into()));
    }
    let mut classes: Vec<f64> = rows.iter().map(|&r| data.rows()[r][label_col]).collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let class_of: BTreeMap<u64, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.to_bits(), i))
        .collect();
    let learner = Learner {
        data,
        features,
        feature_cols,
        classes: &classes,
        labels: (0..data.len())
            .map(|r| class_of.get(&data.rows()[r][label_col].to_bits()).copied().unwrap_or(0))
            .collect(),
        params,
    };
    Ok(learner.grow(rows.to_vec(), 0))
}

struct Learner<'a> {
    data: &'a Dataset,
    features: &'a [&'a str],
    feature_cols: Vec<usize>,
    classes: &'a [f64],
    labels: Vec<usize>,
    params: &'a CartParams,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

impl Learner<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &r in rows {
            c[self.labels[r]] += 1;
        }
        c
    }

    fn majority(&self, counts: &[usize]) -> TreeSpec {
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        TreeSpec::leaf(self.classes[best])
    }

    fn grow(&self, rows: Vec<usize>, depth: usize) -> TreeSpec {
        let counts = self.counts(&rows);
        let n = rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < self.params.min_samples_split {
            return self.majority(&counts);
        }
        let parent = gini(&counts, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for (fi, &c) in self.feature_cols.iter().enumerate() {
            let mut sorted: Vec<(f64, usize)> =
                rows.iter().map(|&r| (self.data.rows()[r][c], self.labels[r])).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0; self.classes.len()];
            for i in 0..n - 1 {
                left[sorted[i].1] += 1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                if nl < self.params.min_samples_leaf || nr < self.params.min_samples_leaf {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
                let impurity =
                    (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    let t = sorted[i].0 + (sorted[i + 1].0 - sorted[i].0) / 2.0;
                    best = Some((impurity, fi, t));
                }
            }
        }
        match best {
            Some((impurity, fi, t)) if parent - impurity > 1e-12 => {
                let c = self.feature_cols[fi];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| self.data.rows()[r][c] <= t);
                TreeSpec::split(
                    self.features[fi],
                    t,
                    self.grow(l, depth + 1),
                    self.grow(r, depth + 1),
                )
            }
            _ => self.majority(&counts),
        }
    }
}
