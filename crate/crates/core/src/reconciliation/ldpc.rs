//! Regular LDPC parity-check matrices.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rand::Rng;

use super::{CodeRate, ReconError};
use crate::rng;

pub const SUPPORTED_LENGTHS: [usize; 3] = [1024, 4096, 16384];
pub const COLUMN_WEIGHT: usize = 3;

/// Sparse parity-check matrix with every column of weight
/// [`COLUMN_WEIGHT`] and row weights balanced to within one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    n: usize,
    rate: CodeRate,
    seed: u64,
    rows: Vec<Vec<u32>>,
    cols: Vec<Vec<u32>>,
}

impl ParityCheckMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rate(&self) -> CodeRate {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column indices of each check.
    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Check indices touching variable `j`.
    pub fn column(&self, j: usize) -> &[u32] {
        &self.cols[j]
    }

    pub fn edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Number of pairs of columns sharing two or more checks.
    pub fn four_cycles(&self) -> usize {
        let mut seen = HashSet::new();
        let mut count = 0;
        for row in &self.rows {
            for (i, &a) in row.iter().enumerate() {
                for &b in &row[i + 1..] {
                    if !seen.insert((a.min(b), a.max(b))) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// One `row: col col ...` line per check.
    pub fn write_sparse<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            write!(w, "{r}:")?;
            for c in row {
                write!(w, " {c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the export format; `n`, `rate` and `seed` come from the caller.
    pub fn read_sparse<R: BufRead>(r: R, n: usize, rate: CodeRate, seed: u64) -> Result<Self, ReconError> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let bad = |reason: String| ReconError::Format { line: i + 1, reason };
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (idx, cols) = line.split_once(':').ok_or_else(|| bad("missing `:`".into()))?;
            let idx: usize = idx.trim().parse().map_err(|e| bad(format!("{e}")))?;
            if idx != rows.len() {
                return Err(bad(format!("expected row {}, found {idx}", rows.len())));
            }
            let row = cols
                .split_whitespace()
                .map(|c| match c.parse::<u32>() {
                    Ok(c) if (c as usize) < n => Ok(c),
                    Ok(c) => Err(bad(format!("column {c} out of range"))),
                    Err(e) => Err(bad(format!("{e}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let mut cols = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &c in row {
                cols[c as usize].push(r as u32);
            }
        }
        Ok(Self { n, rate, seed, rows, cols })
    }
}

/// Deterministic regular construction: each column draws
/// [`COLUMN_WEIGHT`] distinct checks among the least loaded ones, avoiding
/// length-4 cycles whenever possible.
pub fn ldpc_generate(n: usize, rate: CodeRate, seed: u64) -> Result<ParityCheckMatrix, ReconError> {
    if !SUPPORTED_LENGTHS.contains(&n) {
        return Err(ReconError::Unsupported {
            n,
            rate: rate.to_string(),
        });
    }
    let m = rate.checks(n);
    let cap = (n * COLUMN_WEIGHT).div_ceil(m);
    let mut rng = rng::from_seed(rng::substream(seed, "ldpc", n as u64 * 8 + rate as u64));
    let mut rows: Vec<Vec<u32>> = vec![Vec::with_capacity(cap); m];
    let mut cols: Vec<Vec<u32>> = vec![Vec::with_capacity(COLUMN_WEIGHT); n];
    let mut forbidden = vec![false; m];
    let mut candidates = Vec::with_capacity(m);

    for j in 0..n {
        for _ in 0..COLUMN_WEIGHT {
            // rows sharing a column with an already chosen row would close a 4-cycle
            for &r in &cols[j] {
                forbidden[r as usize] = true;
                for &c in &rows[r as usize] {
                    for &r2 in &cols[c as usize] {
                        forbidden[r2 as usize] = true;
                    }
                }
            }
            let pick = |strict: bool, candidates: &mut Vec<u32>| {
                candidates.clear();
                let mut best = usize::MAX;
                for (r, row) in rows.iter().enumerate() {
                    let taken = cols[j].contains(&(r as u32));
                    if taken || row.len() >= cap || (strict && forbidden[r]) {
                        continue;
                    }
                    if row.len() < best {
                        best = row.len();
                        candidates.clear();
                    }
                    if row.len() == best {
                        candidates.push(r as u32);
                    }
                }
            };
            pick(true, &mut candidates);
            if candidates.is_empty() {
                pick(false, &mut candidates);
            }
            let r = candidates[rng.random_range(0..candidates.len())];
            forbidden.iter_mut().for_each(|f| *f = false);
            rows[r as usize].push(j as u32);
            cols[j].push(r);
        }
    }
    for row in &mut rows {
        row.sort_unstable();
    }
    for col in &mut cols {
        col.sort_unstable();
    }
    Ok(ParityCheckMatrix { n, rate, seed, rows, cols })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_counts() {
        assert_eq!(ldpc_generate(1024, CodeRate::ThreeQuarters, 1).unwrap().m(), 256);
        assert_eq!(ldpc_generate(1024, CodeRate::Half, 1).unwrap().m(), 512);
        assert!(ldpc_generate(1000, CodeRate::Half, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = ldpc_generate(1024, CodeRate::Half, 42).unwrap();
        assert_eq!(a, ldpc_generate(1024, CodeRate::Half, 42).unwrap());
        assert_ne!(a, ldpc_generate(1024, CodeRate::Half, 43).unwrap());
    }

    #[test]
    fn structure_is_regular_without_duplicates() {
        for &n in &SUPPORTED_LENGTHS {
            for rate in CodeRate::ALL {
                let h = ldpc_generate(n, rate, 7).unwrap();
                let target = (n * COLUMN_WEIGHT) as f64 / h.m() as f64;
                for j in 0..n {
                    let col = h.column(j);
                    assert_eq!(col.len(), COLUMN_WEIGHT);
                    assert!(col.windows(2).all(|w| w[0] < w[1]));
                }
                for row in h.rows() {
                    assert!((row.len() as f64 - target).abs() <= 1.0, "{n} {rate}: {}", row.len());
                    assert!(row.windows(2).all(|w| w[0] < w[1]));
                }
                assert_eq!(h.edges(), n * COLUMN_WEIGHT);
            }
        }
    }

    #[test]
    fn large_codes_are_free_of_four_cycles() {
        assert_eq!(ldpc_generate(4096, CodeRate::Half, 3).unwrap().four_cycles(), 0);
        assert_eq!(ldpc_generate(16384, CodeRate::ThreeQuarters, 3).unwrap().four_cycles(), 0);
    }

    #[test]
    fn sparse_export_round_trips() {
        let h = ldpc_generate(1024, CodeRate::FiveSixths, 9).unwrap();
        let mut buf = Vec::new();
        h.write_sparse(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("0: "));
        let back = ParityCheckMatrix::read_sparse(&buf[..], 1024, CodeRate::FiveSixths, 9).unwrap();
        assert_eq!(back, h);
        assert!(ParityCheckMatrix::read_sparse(&b"0: 5000\n"[..], 1024, CodeRate::Half, 0).is_err());
    }
}
