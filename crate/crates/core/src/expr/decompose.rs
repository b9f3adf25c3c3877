//! Program decomposition: cutting a subprogram out of a program and leaving
//! a fresh variable in its place.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Expr, ExprError, Path, Site};

/// Above this many structurally identical occurrences only the
/// all-occurrences set and the singletons are enumerated.
pub const MAX_OCCURRENCES: usize = 12;

/// Chains longer than this only contribute contiguous operand pairs.
pub const MAX_CHAIN_SUBSETS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCaps {
    pub max_occurrences: usize,
    pub max_chain_len: usize,
}

impl Default for EnumerationCaps {
    fn default() -> Self {
        EnumerationCaps {
            max_occurrences: MAX_OCCURRENCES,
            max_chain_len: MAX_CHAIN_SUBSETS,
        }
    }
}

/// `(subprogram, hole_var, context)` such that substituting the subprogram
/// for `hole_var` in `context` gives back the program, up to
/// [`Expr::structurally_eq`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub subprogram: Expr,
    pub hole_var: String,
    pub context: Expr,
    /// Where the subprogram was cut out of the program, sorted.
    pub sites: Vec<Site>,
}

impl Decomposition {
    /// Decomposition of `p` at the given occurrence set.
    pub fn at_sites(p: &Expr, mut sites: Vec<Site>) -> Result<Decomposition, ExprError> {
        sites.sort();
        sites.dedup();
        let first = sites
            .first()
            .ok_or_else(|| ExprError::InvalidPosition("<empty hole set>".into()))?;
        let subprogram = site_expr(p, first)?;
        let canon = subprogram.canonical();
        for (i, s) in sites.iter().enumerate() {
            let e = site_expr(p, s)?;
            if i > 0 && e.canonical() != canon {
                return Err(ExprError::InvalidPosition(format!(
                    "{s} does not hold a copy of the subprogram at {first}"
                )));
            }
            if sites[..i].iter().any(|o| o.overlaps(s)) {
                return Err(ExprError::InvalidPosition(format!("{s} overlaps another hole")));
            }
        }
        let hole_var = fresh_var(p);
        let context = build_context(p, &mut Vec::new(), &sites, &hole_var);
        Ok(Decomposition {
            subprogram,
            hole_var,
            context,
            sites,
        })
    }

    /// The program this decomposition was taken from (up to operand order of
    /// commutative chains).
    pub fn recompose(&self) -> Result<Expr, ExprError> {
        substitute(&self.subprogram, &self.hole_var, &self.context)
    }

    /// Comma-joined site list, e.g. `"0/1,2/1"`.
    pub fn site_key(&self) -> String {
        self.sites
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn is_whole_program(&self) -> bool {
        self.sites.len() == 1 && self.sites[0].is_node() && self.sites[0].node.is_root()
    }
}

/// Smallest name of the form `u`, `u1`, `u2`, .. not free in `p`.
pub fn fresh_var(p: &Expr) -> String {
    let used = p.free_vars();
    if !used.contains("u") {
        return "u".into();
    }
    (1..)
        .map(|i| format!("u{i}"))
        .find(|n| !used.contains(n))
        .expect("unbounded name supply")
}

/// `[p1/var]p2`: every occurrence of `var` in `p2` replaced by `p1`, with
/// n-ary chains re-flattened. Fails if the result is ill-typed.
pub fn substitute(p1: &Expr, var: &str, p2: &Expr) -> Result<Expr, ExprError> {
    let out = p2.replace_var(var, p1);
    out.check()?;
    Ok(out)
}

/// The expression a site denotes in `p`.
pub fn site_expr(p: &Expr, site: &Site) -> Result<Expr, ExprError> {
    let node = p
        .at(&site.node)
        .ok_or_else(|| ExprError::InvalidPosition(site.to_string()))?;
    match &site.operands {
        None => Ok(node.clone()),
        Some(ops) => match node {
            Expr::Arith { op, operands }
                if op.is_nary()
                    && ops.len() >= 2
                    && ops.len() < operands.len()
                    && ops.iter().all(|&i| i < operands.len()) =>
            {
                Expr::arith(*op, ops.iter().map(|&i| operands[i].clone()).collect())
            }
            _ => Err(ExprError::InvalidPosition(site.to_string())),
        },
    }
}

fn build_context(e: &Expr, path: &mut Vec<usize>, sites: &[Site], hole: &str) -> Expr {
    let here = Path::new(path.clone());
    if sites.iter().any(|s| s.is_node() && s.node == here) {
        return Expr::var(hole);
    }
    if !sites.iter().any(|s| here.is_prefix_of(&s.node)) {
        return e.clone();
    }
    let mut children = Vec::new();
    for (i, c) in e.children().into_iter().enumerate() {
        path.push(i);
        children.push(build_context(c, path, sites, hole));
        path.pop();
    }
    let subsets: Vec<&Vec<usize>> = sites
        .iter()
        .filter(|s| s.node == here)
        .filter_map(|s| s.operands.as_ref())
        .collect();
    if !subsets.is_empty() {
        let mut kept = Vec::new();
        for (i, c) in children.into_iter().enumerate() {
            match subsets.iter().find(|ops| ops.contains(&i)) {
                None => kept.push(c),
                Some(ops) if ops[0] == i => kept.push(Expr::var(hole)),
                Some(_) => {}
            }
        }
        children = kept;
    }
    e.with_children(children)
}

/// Output of [`enumerate_decompositions`].
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub decompositions: Vec<Decomposition>,
    /// Set when a cap replaced an exhaustive family by a partial one.
    pub truncated: bool,
}

/// Every decomposition of `p` whose subprogram is not a constant.
///
/// Candidate subprograms are the non-constant nodes of `p`, plus every
/// proper operand subset (size two or more) of each flattened `+`/`*` chain.
/// Structurally identical candidates are grouped, and every non-empty,
/// non-overlapping subset of a group is a hole set. Output is sorted by the
/// hole-site list.
pub fn enumerate_decompositions(p: &Expr, caps: &EnumerationCaps) -> Enumeration {
    let mut truncated = false;
    let mut groups: Vec<(Expr, Vec<Site>)> = Vec::new();
    let mut index: HashMap<Expr, usize> = HashMap::new();
    let mut add = |key: Expr, site: Site| match index.get(&key) {
        Some(&g) => groups[g].1.push(site),
        None => {
            index.insert(key.clone(), groups.len());
            groups.push((key, vec![site]));
        }
    };

    for pos in p.positions() {
        let node = p.at(&pos).expect("enumerated position");
        if node.is_const() {
            continue;
        }
        add(node.canonical(), Site::node(pos.clone()));
        if let Expr::Arith { op, operands } = node {
            if !op.is_nary() || operands.len() < 3 {
                continue;
            }
            for subset in chain_subsets(operands.len(), caps.max_chain_len, &mut truncated) {
                let e = Expr::arith(*op, subset.iter().map(|&i| operands[i].clone()).collect())
                    .expect("subset has two or more operands");
                add(e.canonical(), Site::chain_subset(pos.clone(), subset));
            }
        }
    }

    let hole = fresh_var(p);
    let mut out = Vec::new();
    for (_, sites) in groups {
        for set in occurrence_sets(&sites, caps.max_occurrences, &mut truncated) {
            let subprogram = site_expr(p, &set[0]).expect("site collected from p");
            let context = build_context(p, &mut Vec::new(), &set, &hole);
            out.push(Decomposition {
                subprogram,
                hole_var: hole.clone(),
                context,
                sites: set,
            });
        }
    }
    out.sort_by(|a, b| a.sites.cmp(&b.sites));
    Enumeration {
        decompositions: out,
        truncated,
    }
}

fn chain_subsets(n: usize, max_len: usize, truncated: &mut bool) -> Vec<Vec<usize>> {
    if n > max_len {
        *truncated = true;
        return (0..n - 1).map(|i| vec![i, i + 1]).collect();
    }
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << n) - 1 {
        if mask.count_ones() >= 2 {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

fn occurrence_sets(sites: &[Site], max_occ: usize, truncated: &mut bool) -> Vec<Vec<Site>> {
    let mut sorted = sites.to_vec();
    sorted.sort();
    let disjoint = |set: &[Site]| {
        set.iter()
            .enumerate()
            .all(|(i, a)| set[i + 1..].iter().all(|b| !a.overlaps(b)))
    };
    let n = sorted.len();
    if n > max_occ {
        *truncated = true;
        let mut out: Vec<Vec<Site>> = sorted.iter().map(|s| vec![s.clone()]).collect();
        if disjoint(&sorted) {
            out.push(sorted);
        }
        return out;
    }
    let mut out = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let set: Vec<Site> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| sorted[i].clone())
            .collect();
        if disjoint(&set) {
            out.push(set);
        }
    }
    out
}

/// Decompositions local to `d`: one for each non-constant node of the
/// subprogram (cut at every occurrence), and, when an occurrence is the
/// guard of an if-then-else, one for each non-constant node of that node's
/// branches that does not overlap a hole.
pub fn local_expressions(p: &Expr, d: &Decomposition) -> Vec<Decomposition> {
    let mut out: Vec<Decomposition> = Vec::new();
    let mut seen: Vec<Vec<Site>> = Vec::new();
    let mut push = |dec: Decomposition, out: &mut Vec<Decomposition>| {
        if !seen.contains(&dec.sites) {
            seen.push(dec.sites.clone());
            out.push(dec);
        }
    };

    for rel in d.subprogram.positions() {
        let inner = d.subprogram.at(&rel).expect("own position");
        if inner.is_const() {
            continue;
        }
        let sites: Vec<Site> = d
            .sites
            .iter()
            .map(|s| s.descend(&rel))
            .filter(|s| {
                site_expr(p, s)
                    .map(|e| e.structurally_eq(inner))
                    .unwrap_or(false)
            })
            .collect();
        if let Ok(dec) = Decomposition::at_sites(p, sites) {
            push(dec, &mut out);
        }
    }

    for s in &d.sites {
        if !s.is_node() || s.node.last() != Some(0) {
            continue;
        }
        let parent = s.node.parent().expect("non-root");
        if !matches!(p.at(&parent), Some(Expr::Ite { .. })) {
            continue;
        }
        for branch in [1, 2] {
            let root = parent.child(branch);
            let sub = p.at(&root).expect("ite branch");
            for rel in sub.positions() {
                if sub.at(&rel).expect("own position").is_const() {
                    continue;
                }
                let site = Site::node(root.join(&rel));
                if d.sites.iter().any(|h| h.overlaps(&site)) {
                    continue;
                }
                if let Ok(dec) = Decomposition::at_sites(p, vec![site]) {
                    push(dec, &mut out);
                }
            }
        }
    }
    out
}

impl Decomposition {
    /// The program with every hole filled by `with` (no type check).
    pub fn fill(&self, with: &Expr) -> Expr {
        self.context.replace_var(&self.hole_var, with)
    }
}
