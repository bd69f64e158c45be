//! Syndrome-constrained sum-product decoding over a binary symmetric channel.

use bitvec::prelude::*;

use super::{syndrome, ParityCheckMatrix, ReconError};
use crate::protocol::Bits;

pub const DEFAULT_MAX_ITER: usize = 60;

const PHI_MIN: f64 = 1e-12;
const PHI_MAX: f64 = 40.0;

/// Successful decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub bits: Bits,
    /// Message-passing rounds used; 0 when the input already matched.
    pub iterations: usize,
}

/// `phi(x) = -ln tanh(x / 2)`, its own inverse on `(0, inf)`.
fn phi(x: f64) -> f64 {
    let x = x.clamp(PHI_MIN, PHI_MAX);
    -(x * 0.5).tanh().ln()
}

/// Corrects `bob_bits` toward the block whose syndrome is `alice_syndrome`.
///
/// Belief propagation in the log-likelihood domain: each check's parity is
/// constrained to the received syndrome bit instead of zero.
pub fn decode(
    matrix: &ParityCheckMatrix,
    bob_bits: &BitSlice<u8, Msb0>,
    alice_syndrome: &BitSlice<u8, Msb0>,
    crossover_p: f64,
    max_iter: usize,
) -> Result<DecodeOutcome, ReconError> {
    if !(crossover_p > 0.0 && crossover_p < 0.5) {
        return Err(ReconError::Domain(format!("crossover probability {crossover_p} outside (0, 0.5)")));
    }
    if max_iter == 0 {
        return Err(ReconError::Domain("max_iter must be at least 1".into()));
    }
    if alice_syndrome.len() != matrix.m() {
        return Err(ReconError::LengthMismatch {
            expected: matrix.m(),
            actual: alice_syndrome.len(),
        });
    }
    if syndrome(matrix, bob_bits)? == alice_syndrome {
        return Ok(DecodeOutcome {
            bits: bob_bits.to_bitvec(),
            iterations: 0,
        });
    }

    let n = matrix.n();
    let rows = matrix.rows();
    let row_start: Vec<usize> = std::iter::once(0)
        .chain(rows.iter().scan(0, |acc, r| {
            *acc += r.len();
            Some(*acc)
        }))
        .collect();
    let edge_var: Vec<usize> = rows.iter().flatten().map(|&c| c as usize).collect();
    let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[v].push(e);
    }

    let l0 = ((1.0 - crossover_p) / crossover_p).ln();
    let channel: Vec<f64> = bob_bits.iter().by_vals().map(|b| if b { -l0 } else { l0 }).collect();
    let mut v2c: Vec<f64> = edge_var.iter().map(|&v| channel[v]).collect();
    let mut c2v = vec![0.0; edge_var.len()];
    let mut hard = bob_bits.to_bitvec();

    for iter in 1..=max_iter {
        for (c, target) in alice_syndrome.iter().by_vals().enumerate() {
            let edges = row_start[c]..row_start[c + 1];
            let mut negative = target;
            let mut total = 0.0;
            for e in edges.clone() {
                negative ^= v2c[e] < 0.0;
                total += phi(v2c[e].abs());
            }
            for e in edges {
                let sign_flip = negative ^ (v2c[e] < 0.0);
                let mag = phi((total - phi(v2c[e].abs())).max(0.0));
                c2v[e] = if sign_flip { -mag } else { mag };
            }
        }
        for v in 0..n {
            let total: f64 = channel[v] + var_edges[v].iter().map(|&e| c2v[e]).sum::<f64>();
            hard.set(v, total < 0.0);
            for &e in &var_edges[v] {
                v2c[e] = total - c2v[e];
            }
        }
        if syndrome(matrix, &hard)? == alice_syndrome {
            return Ok(DecodeOutcome { bits: hard, iterations: iter });
        }
    }
    Err(ReconError::NoConvergence { iterations: max_iter })
}
