//! A deliberately naive reimplementation of detection, used as a reference.
//! It shares nothing with the library beyond the `Expr` and `Dataset` types.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proxy_audit::data::Dataset;
use proxy_audit::expr::{ArithOp, BoolOp, Expr, RelOp, Value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum V {
    B(bool),
    N(f64),
}

impl V {
    fn key(self) -> String {
        match self {
            V::B(b) => format!("b{b}"),
            V::N(x) if x == 0.0 => "n0".into(),
            V::N(x) => format!("n{:016x}", x.to_bits()),
        }
    }

    fn num(self) -> f64 {
        match self {
            V::N(x) => x,
            V::B(_) => panic!("expected a number"),
        }
    }

    fn truth(self) -> bool {
        match self {
            V::B(b) => b,
            V::N(_) => panic!("expected a boolean"),
        }
    }
}

fn from_value(v: Value) -> V {
    match v {
        Value::Bool(b) => V::B(b),
        Value::Num(x) => V::N(x),
    }
}

/// A hole: a node path, or a node path plus operand indices of its chain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hole {
    pub path: Vec<usize>,
    pub ops: Option<Vec<usize>>,
}

impl Hole {
    pub fn render(&self) -> String {
        let p: Vec<String> = self.path.iter().map(|i| i.to_string()).collect();
        let mut s = p.join("/");
        if let Some(ops) = &self.ops {
            let o: Vec<String> = ops.iter().map(|i| i.to_string()).collect();
            s.push_str(&format!("[{}]", o.join(",")));
        }
        s
    }

    /// Subtree roots this hole replaces.
    fn covers(&self) -> Vec<Vec<usize>> {
        match &self.ops {
            None => vec![self.path.clone()],
            Some(ops) => ops
                .iter()
                .map(|&i| {
                    let mut p = self.path.clone();
                    p.push(i);
                    p
                })
                .collect(),
        }
    }
}

fn prefix(a: &[usize], b: &[usize]) -> bool {
    a.len() <= b.len() && a == &b[..a.len()]
}

fn clash(a: &Hole, b: &Hole) -> bool {
    if a.ops.is_some() && a.path == b.path && b.ops.is_none() {
        return true;
    }
    if b.ops.is_some() && a.path == b.path && a.ops.is_none() {
        return true;
    }
    for x in a.covers() {
        for y in b.covers() {
            if prefix(&x, &y) || prefix(&y, &x) {
                return true;
            }
        }
    }
    false
}

fn kids(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Const { .. } | Expr::Var { .. } => vec![],
        Expr::Arith { operands, .. } | Expr::Bool { operands, .. } => operands.iter().collect(),
        Expr::Rel { left, right, .. } => vec![left, right],
        Expr::Ite { guard, then, otherwise } => vec![guard, then, otherwise],
    }
}

fn node<'a>(e: &'a Expr, path: &[usize]) -> &'a Expr {
    path.iter().fold(e, |n, &i| kids(n)[i])
}

/// Printed form with `+`/`*` operands sorted; equal strings mean the same
/// subprogram.
pub fn print(e: &Expr) -> String {
    match e {
        Expr::Const { value } => format!("#{}", from_value(*value).key()),
        Expr::Var { name } => name.clone(),
        Expr::Arith { op, operands } => {
            let mut parts: Vec<String> = operands.iter().map(print).collect();
            if matches!(op, ArithOp::Add | ArithOp::Mul) {
                parts.sort();
            }
            format!("({} {})", op.symbol(), parts.join(" "))
        }
        Expr::Rel { op, left, right } => format!("({} {} {})", op.symbol(), print(left), print(right)),
        Expr::Bool { op, operands } => {
            let parts: Vec<String> = operands.iter().map(print).collect();
            format!("({:?} {})", op, parts.join(" "))
        }
        Expr::Ite { guard, then, otherwise } => {
            format!("(if {} {} {})", print(guard), print(then), print(otherwise))
        }
    }
}

/// Evaluation with every hole in `holes` replaced by `fill` (when given).
fn eval_at(
    e: &Expr,
    path: &mut Vec<usize>,
    row: &dyn Fn(&str) -> f64,
    holes: &[Hole],
    fill: Option<V>,
) -> V {
    if let Some(v) = fill {
        if holes.iter().any(|h| h.ops.is_none() && h.path == *path) {
            return v;
        }
    }
    let sub = |i: usize, c: &Expr, path: &mut Vec<usize>| {
        path.push(i);
        let v = eval_at(c, path, row, holes, fill);
        path.pop();
        v
    };
    match e {
        Expr::Const { value } => from_value(*value),
        Expr::Var { name } => V::N(row(name)),
        Expr::Arith { op, operands } => {
            let subsets: Vec<Vec<usize>> = match fill {
                None => vec![],
                Some(_) => holes
                    .iter()
                    .filter(|h| h.path == *path)
                    .filter_map(|h| h.ops.clone())
                    .collect(),
            };
            let mut vals = Vec::new();
            for (i, c) in operands.iter().enumerate() {
                match subsets.iter().find(|ops| ops.contains(&i)) {
                    Some(ops) => {
                        if ops[0] == i {
                            vals.push(fill.unwrap().num());
                        }
                    }
                    None => vals.push(sub(i, c, path).num()),
                }
            }
            let mut acc = vals[0];
            for v in &vals[1..] {
                acc = match op {
                    ArithOp::Add => acc + v,
                    ArithOp::Sub => acc - v,
                    ArithOp::Mul => acc * v,
                    ArithOp::Div => acc / v,
                };
            }
            V::N(acc)
        }
        Expr::Rel { op, left, right } => {
            let a = sub(0, left, path).num();
            let b = sub(1, right, path).num();
            V::B(match op {
                RelOp::Le => a <= b,
                RelOp::Lt => a < b,
                RelOp::Eq => a == b,
                RelOp::Ge => a >= b,
                RelOp::Gt => a > b,
            })
        }
        Expr::Bool { op, operands } => {
            let vals: Vec<bool> = operands
                .iter()
                .enumerate()
                .map(|(i, c)| sub(i, c, path).truth())
                .collect();
            V::B(match op {
                BoolOp::And => vals.iter().all(|&b| b),
                BoolOp::Or => vals.iter().any(|&b| b),
                BoolOp::Not => !vals[0],
            })
        }
        Expr::Ite { guard, then, otherwise } => {
            if sub(0, guard, path).truth() {
                sub(1, then, path)
            } else {
                sub(2, otherwise, path)
            }
        }
    }
}

pub fn eval(e: &Expr, row: &dyn Fn(&str) -> f64) -> V {
    eval_at(e, &mut Vec::new(), row, &[], None)
}

fn hole_value(p: &Expr, h: &Hole, row: &dyn Fn(&str) -> f64) -> V {
    let n = node(p, &h.path);
    match (&h.ops, n) {
        (None, _) => eval(n, row),
        (Some(ops), Expr::Arith { op, operands }) => {
            let vals: Vec<f64> = ops.iter().map(|&i| eval(&operands[i], row).num()).collect();
            let mut acc = vals[0];
            for v in &vals[1..] {
                acc = if *op == ArithOp::Add { acc + v } else { acc * v };
            }
            V::N(acc)
        }
        _ => unreachable!(),
    }
}

fn all_paths(e: &Expr, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(path.clone());
    for (i, c) in kids(e).into_iter().enumerate() {
        path.push(i);
        all_paths(c, path, out);
        path.pop();
    }
}

fn hole_expr_key(p: &Expr, h: &Hole) -> String {
    match &h.ops {
        None => print(node(p, &h.path)),
        Some(ops) => match node(p, &h.path) {
            Expr::Arith { op, operands } => {
                let mut parts: Vec<String> = ops.iter().map(|&i| print(&operands[i])).collect();
                parts.sort();
                format!("({} {})", op.symbol(), parts.join(" "))
            }
            _ => unreachable!(),
        },
    }
}

/// Every non-overlapping set of copies of a non-constant subprogram.
pub fn hole_sets(p: &Expr) -> Vec<Vec<Hole>> {
    let mut paths = Vec::new();
    all_paths(p, &mut Vec::new(), &mut paths);
    let mut groups: BTreeMap<String, Vec<Hole>> = BTreeMap::new();
    for path in paths {
        let n = node(p, &path);
        if matches!(n, Expr::Const { .. }) {
            continue;
        }
        let h = Hole { path: path.clone(), ops: None };
        groups.entry(hole_expr_key(p, &h)).or_default().push(h);
        if let Expr::Arith { op: ArithOp::Add | ArithOp::Mul, operands } = n {
            let k = operands.len();
            if k >= 3 {
                for mask in 0u32..(1 << k) {
                    let c = mask.count_ones() as usize;
                    if c >= 2 && c < k {
                        let ops = (0..k).filter(|i| mask >> i & 1 == 1).collect();
                        let h = Hole { path: path.clone(), ops: Some(ops) };
                        groups.entry(hole_expr_key(p, &h)).or_default().push(h);
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for members in groups.values() {
        let m = members.len();
        for mask in 1u64..(1 << m) {
            let set: Vec<Hole> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| members[i].clone()).collect();
            let ok = (0..set.len()).all(|i| (i + 1..set.len()).all(|j| !clash(&set[i], &set[j])));
            if ok {
                out.push(set);
            }
        }
    }
    out
}

pub fn set_key(set: &[Hole]) -> BTreeSet<String> {
    set.iter().map(Hole::render).collect()
}

fn codes(vals: &[V], max_bins: usize) -> Vec<String> {
    let nums: Vec<f64> = match vals.iter().map(|v| if let V::N(x) = v { Some(*x) } else { None }).collect::<Option<Vec<_>>>() {
        Some(n) => n,
        None => return vals.iter().map(|v| v.key()).collect(),
    };
    let mut sorted = nums.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() <= max_bins {
        return vals.iter().map(|v| v.key()).collect();
    }
    let mut all = nums.clone();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    nums.iter()
        .map(|x| {
            let first = all.iter().position(|y| y == x).unwrap();
            (first * max_bins / n).to_string()
        })
        .collect()
}

/// Normalized mutual information, computed with natural logarithms.
pub fn assoc(xs: &[String], zs: &[String]) -> f64 {
    let n = xs.len() as f64;
    let h = |counts: HashMap<String, usize>| -> f64 {
        counts.values().map(|&c| {
            let q = c as f64 / n;
            -q * q.ln()
        }).sum()
    };
    let mut cx = HashMap::new();
    let mut cz = HashMap::new();
    let mut cxz = HashMap::new();
    for (x, z) in xs.iter().zip(zs) {
        *cx.entry(x.clone()).or_insert(0) += 1;
        *cz.entry(z.clone()).or_insert(0) += 1;
        *cxz.entry(format!("{x}|{z}")).or_insert(0) += 1;
    }
    let (hx, hz, hxz) = (h(cx), h(cz), h(cxz));
    if hxz <= 1e-15 {
        0.0
    } else {
        ((hx + hz - hxz) / hxz).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Measured {
    pub holes: Vec<Hole>,
    pub epsilon: f64,
    pub delta: f64,
}

/// Association and unconditioned pairwise influence of one hole set over
/// the analysis rows.
pub fn measure(p: &Expr, holes: &[Hole], data: &Dataset, max_bins: usize) -> Measured {
    let rows = data.analysis();
    let getter = |r: usize| move |name: &str| data.value(r, name).unwrap();
    let inner: Vec<V> = rows.iter().map(|&r| hole_value(p, &holes[0], &getter(r))).collect();
    let z: Vec<String> = rows
        .iter()
        .map(|&r| V::N(data.value(r, data.protected()).unwrap()).key())
        .collect();
    let epsilon = assoc(&codes(&inner, max_bins), &z);

    let mut count: u64 = 0;
    for (i, &r) in rows.iter().enumerate() {
        let env = getter(r);
        let base = eval_at(p, &mut Vec::new(), &env, holes, Some(inner[i]));
        let mut memo: HashMap<String, bool> = HashMap::new();
        for v in &inner {
            let k = v.key();
            if let Some(&d) = memo.get(&k) {
                count += d as u64;
                continue;
            }
            let d = eval_at(p, &mut Vec::new(), &env, holes, Some(*v)) != base;
            memo.insert(k, d);
            count += d as u64;
        }
    }
    let n = rows.len() as f64;
    Measured {
        holes: holes.to_vec(),
        epsilon,
        delta: count as f64 / (n * n),
    }
}

pub fn measure_all(p: &Expr, data: &Dataset, max_bins: usize) -> Vec<Measured> {
    hole_sets(p).iter().map(|s| measure(p, s, data, max_bins)).collect()
}

pub fn hole_of(s: &proxy_audit::expr::Site) -> Hole {
    Hole {
        path: s.node.indices().to_vec(),
        ops: s.operands.clone(),
    }
}
