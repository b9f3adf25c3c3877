use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MeasureError;

/// Number of permutations used by the spurious-association check.
pub const PERMUTATIONS: usize = 100;

/// Normalized mutual information between two discrete sequences, with the
/// entropies it was computed from (bits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub d: f64,
    pub h_x: f64,
    pub h_z: f64,
    pub h_xz: f64,
    pub h_x_given_z: f64,
    pub h_z_given_x: f64,
    pub x_levels: usize,
    pub z_levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

fn dense<T: Hash + Eq>(vals: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let coded = vals
        .iter()
        .map(|v| {
            let next = ids.len();
            *ids.entry(v).or_insert(next)
        })
        .collect();
    (coded, ids.len())
}

// Summing over sorted counts makes the result independent of how values are
// labelled, so identical partitions give bit-identical entropies.
fn entropy(mut counts: Vec<usize>, n: usize) -> f64 {
    counts.retain(|&c| c > 0);
    if counts.len() <= 1 {
        return 0.0;
    }
    counts.sort_unstable();
    let n = n as f64;
    let s: f64 = counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            c * c.log2()
        })
        .sum();
    (n.log2() - s / n).max(0.0)
}

/// `d = 1 - (H(X|Z) + H(Z|X)) / H(X,Z)`, and 0 when both sequences are
/// constant. One pass over a contingency table.
pub fn association<A: Hash + Eq, B: Hash + Eq>(
    xs: &[A],
    zs: &[B],
) -> Result<AssociationResult, MeasureError> {
    if xs.len() != zs.len() {
        return Err(MeasureError::LengthMismatch(xs.len(), zs.len()));
    }
    if xs.is_empty() {
        return Err(MeasureError::Empty);
    }
    let (xc, kx) = dense(xs);
    let (zc, kz) = dense(zs);
    Ok(from_codes(&xc, kx, &zc, kz))
}

pub(crate) fn from_codes(xc: &[usize], kx: usize, zc: &[usize], kz: usize) -> AssociationResult {
    let n = xc.len();
    let mut table = vec![0usize; kx * kz];
    for (x, z) in xc.iter().zip(zc) {
        table[x * kz + z] += 1;
    }
    let mut cx = vec![0usize; kx];
    let mut cz = vec![0usize; kz];
    for x in 0..kx {
        for z in 0..kz {
            cx[x] += table[x * kz + z];
            cz[z] += table[x * kz + z];
        }
    }
    let h_x = entropy(cx, n);
    let h_z = entropy(cz, n);
    let h_xz = entropy(table, n);
    let d = if h_xz > 0.0 {
        ((h_x + h_z - h_xz) / h_xz).clamp(0.0, 1.0)
    } else {
        0.0
    };
    AssociationResult {
        d,
        h_x,
        h_z,
        h_xz,
        h_x_given_z: (h_xz - h_z).max(0.0),
        h_z_given_x: (h_xz - h_x).max(0.0),
        x_levels: kx,
        z_levels: kz,
        p_value: None,
    }
}

/// Fraction of `m` seeded permutations of `zs` whose association with `xs`
/// is at least the observed one.
pub fn permutation_p_value<A: Hash + Eq, B: Hash + Eq>(
    xs: &[A],
    zs: &[B],
    m: usize,
    seed: u64,
) -> Result<f64, MeasureError> {
    let observed = association(xs, zs)?;
    let (xc, kx) = dense(xs);
    let (mut zc, kz) = dense(zs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..m {
        zc.shuffle(&mut rng);
        if from_codes(&xc, kx, &zc, kz).d >= observed.d {
            hits += 1;
        }
    }
    Ok(hits as f64 / m.max(1) as f64)
}
