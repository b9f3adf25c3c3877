#![allow(dead_code)]

pub mod brute;

use std::path::PathBuf;

use proxy_audit::data::{Dataset, LoadOptions};
use proxy_audit::expr::{ArithOp, BoolOp, Expr, RelOp};
use proxy_audit::frontends::load_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARS: [&str; 4] = ["x0", "x1", "x2", "x3"];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Random well-typed programs over `x0..x3`: no division, constants 0, 1
/// and 2, at most `max_size` nodes.
pub struct ProgramGen {
    rng: ChaCha8Rng,
    pub max_size: usize,
}

impl ProgramGen {
    pub fn new(seed: u64) -> ProgramGen {
        ProgramGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_size: 25,
        }
    }

    fn leaf(&mut self) -> Expr {
        if self.rng.gen_bool(0.7) {
            Expr::var(VARS[self.rng.gen_range(0..VARS.len())])
        } else {
            Expr::num(self.rng.gen_range(0..3) as f64)
        }
    }

    fn num(&mut self, depth: u32) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.leaf();
        }
        match self.rng.gen_range(0..5) {
            0 | 1 => {
                let k = self.rng.gen_range(2..=4);
                Expr::add((0..k).map(|_| self.num(depth - 1)).collect())
            }
            2 => Expr::mul(vec![self.num(depth - 1), self.num(depth - 1)]),
            3 => Expr::sub(self.num(depth - 1), self.num(depth - 1)),
            _ => Expr::ite(self.boolean(depth - 1), self.num(depth - 1), self.num(depth - 1)),
        }
    }

    fn boolean(&mut self, depth: u32) -> Expr {
        let ops = [RelOp::Le, RelOp::Lt, RelOp::Eq, RelOp::Ge, RelOp::Gt];
        if depth <= 1 || self.rng.gen_bool(0.6) {
            let op = ops[self.rng.gen_range(0..ops.len())];
            let d = depth.saturating_sub(1);
            return Expr::rel(op, self.num(d), self.num(d));
        }
        match self.rng.gen_range(0..3) {
            0 => Expr::and(vec![self.boolean(depth - 1), self.boolean(depth - 1)]),
            1 => Expr::or(vec![self.boolean(depth - 1), self.boolean(depth - 1)]),
            _ => Expr::not(self.boolean(depth - 1)),
        }
    }

    /// One program with 3..=max_size nodes that mentions some variable.
    pub fn program(&mut self) -> Expr {
        loop {
            let p = match self.rng.gen_range(0..4) {
                0 | 1 => Expr::ite(self.boolean(3), self.num(3), self.num(3)),
                2 => self.boolean(4),
                _ => self.num(4),
            };
            if (3..=self.max_size).contains(&p.size()) && !p.free_vars().is_empty() {
                return p;
            }
        }
    }
}

/// `rows` rows over `x0..x3` (small integers) plus a protected column `z`
/// that mostly tracks `x0 >= 2`.
pub fn synthetic(rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<String> = VARS.iter().map(|s| s.to_string()).collect();
    cols.push("z".into());
    let data = (0..rows)
        .map(|_| {
            let mut r: Vec<f64> = (0..4).map(|_| rng.gen_range(0..4) as f64).collect();
            let z = if rng.gen_bool(0.85) {
                (r[0] >= 2.0) as u8
            } else {
                rng.gen_range(0..2)
            };
            r.push(z as f64);
            r
        })
        .collect();
    Dataset::new(cols, data, "z").unwrap()
}

/// The redlining example: zip codes b1,b2 are all race B, w1,w2 all race W,
/// and interest is independent of both. Every row is in the analysis subset.
pub fn masked() -> (Expr, Dataset) {
    masked_split(1.0)
}

pub fn masked_split(split: f64) -> (Expr, Dataset) {
    let mut opts = LoadOptions::new("race");
    opts.split = split;
    let data = Dataset::load(fixture("masked.csv"), &opts).unwrap();
    let text = std::fs::read_to_string(fixture("masked_tree.json")).unwrap();
    let p = load_model(&text, data.codebook()).unwrap();
    (p, data)
}

/// The zip-code guard of the masked model.
pub fn masked_guard(data: &Dataset) -> Expr {
    let code = |l: &str| Expr::num(data.codebook().code("zip", l).unwrap());
    Expr::or(vec![
        Expr::eq(Expr::var("zip"), code("b1")),
        Expr::eq(Expr::var("zip"), code("b2")),
    ])
}

pub fn ricci(protected: &str) -> Dataset {
    let mut opts = LoadOptions::new(protected);
    opts.split = 1.0;
    Dataset::load(data_file("ricci.csv"), &opts).unwrap()
}

pub fn bool_ops() -> [BoolOp; 2] {
    [BoolOp::And, BoolOp::Or]
}

pub fn arith_ops() -> [ArithOp; 2] {
    [ArithOp::Add, ArithOp::Mul]
}
