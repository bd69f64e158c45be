//! Privacy amplification by Toeplitz hashing.
//!
//! A Toeplitz matrix `T` (`n_out x n_in`) is fixed by its first column and
//! first row, stored together as `diag` (first column, then the first row
//! without `T[0][0]`). The output is `y = T x` over GF(2).
//!
//! [`hash_fft`] embeds `T` in a circulant of power-of-two length and
//! evaluates the integer product by FFT convolution before reducing mod 2.
//! [`hash_naive`] is the word-parallel matrix-vector product it is checked
//! against.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bitvec::prelude::*;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::protocol::Bits;
use crate::rng;

/// Exactness bound of double-precision integer convolution.
pub const MAX_INPUT_BITS: usize = 1 << 52;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("input has {actual} bits, descriptor expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("fft coefficient {index} is {residue} away from an integer")]
    Numerical { index: usize, residue: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Round-half-up output length `n_in (1 - cr)`.
pub fn output_length(n_in: usize, cr: f64) -> usize {
    let cr = cr.clamp(0.0, 1.0);
    (n_in as f64 * (1.0 - cr) + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzDescriptor {
    pub n_in: usize,
    pub n_out: usize,
    pub seed: u64,
    pub diag: Bits,
}

impl ToeplitzDescriptor {
    /// Draws `diag` from the seeded generator.
    pub fn new(seed: u64, n_in: usize, n_out: usize) -> Result<Self, PrivacyError> {
        Self::check_dims(n_in, n_out)?;
        let mut rng = rng::from_seed(rng::substream(seed, "toeplitz", n_in as u64));
        let diag = (0..Self::diag_len(n_in, n_out)).map(|_| rng.random::<bool>()).collect();
        Ok(Self { n_in, n_out, seed, diag })
    }

    pub fn from_diag(diag: Bits, n_in: usize, n_out: usize) -> Result<Self, PrivacyError> {
        Self::check_dims(n_in, n_out)?;
        if diag.len() != Self::diag_len(n_in, n_out) {
            return Err(PrivacyError::Descriptor(format!(
                "diag has {} bits, expected {}",
                diag.len(),
                Self::diag_len(n_in, n_out)
            )));
        }
        Ok(Self { n_in, n_out, seed: 0, diag })
    }

    fn diag_len(n_in: usize, n_out: usize) -> usize {
        if n_out == 0 {
            0
        } else {
            n_in + n_out - 1
        }
    }

    fn check_dims(n_in: usize, n_out: usize) -> Result<(), PrivacyError> {
        if n_out > n_in {
            return Err(PrivacyError::Descriptor(format!("n_out {n_out} exceeds n_in {n_in}")));
        }
        if n_in >= MAX_INPUT_BITS {
            return Err(PrivacyError::Descriptor(format!(
                "n_in {n_in} too large for exact double-precision convolution"
            )));
        }
        Ok(())
    }

    /// Entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        if i >= j {
            self.diag[i - j]
        } else {
            self.diag[self.n_out - 1 + (j - i)]
        }
    }

    /// `t(k) = T[i][j]` for `k = i - j`, `k` in `-(n_in - 1)..n_out`.
    fn by_offset(&self, k: isize) -> bool {
        if k >= 0 {
            self.diag[k as usize]
        } else {
            self.diag[self.n_out - 1 + (-k) as usize]
        }
    }

    fn check_input(&self, bits: &BitSlice<u8, Msb0>) -> Result<(), PrivacyError> {
        if bits.len() != self.n_in {
            return Err(PrivacyError::LengthMismatch {
                expected: self.n_in,
                actual: bits.len(),
            });
        }
        Ok(())
    }
}

fn pack_words(bits: impl Iterator<Item = bool>, len: usize, pad_words: usize) -> Vec<u64> {
    let mut words = vec![0u64; len.div_ceil(64) + pad_words];
    for (i, b) in bits.enumerate() {
        if b {
            words[i / 64] |= 1 << (63 - i % 64);
        }
    }
    words
}

fn window(words: &[u64], offset: usize) -> u64 {
    let (q, r) = (offset / 64, offset % 64);
    if r == 0 {
        words[q]
    } else {
        (words[q] << r) | (words[q + 1] >> (64 - r))
    }
}

/// `y = T x` as `n_out` parities of 64-bit word products.
pub fn hash_naive(desc: &ToeplitzDescriptor, bits: &BitSlice<u8, Msb0>) -> Result<Bits, PrivacyError> {
    desc.check_input(bits)?;
    if desc.n_out == 0 {
        return Ok(Bits::new());
    }
    let n_in = desc.n_in;
    // s[m] = t(m - (n_in - 1)); row i against reversed x is s[i .. i + n_in]
    let s_len = n_in + desc.n_out - 1;
    let s = pack_words(
        (0..s_len).map(|m| desc.by_offset(m as isize - (n_in as isize - 1))),
        s_len,
        2,
    );
    let xr = pack_words(bits.iter().by_vals().rev(), n_in, 0);
    Ok((0..desc.n_out)
        .map(|i| {
            let acc = xr
                .iter()
                .enumerate()
                .fold(0u64, |acc, (w, &x)| acc ^ (window(&s, i + 64 * w) & x));
            acc.count_ones() % 2 == 1
        })
        .collect())
}

/// Same result as [`hash_naive`], via circulant embedding and FFT.
pub fn hash_fft(desc: &ToeplitzDescriptor, bits: &BitSlice<u8, Msb0>) -> Result<Bits, PrivacyError> {
    desc.check_input(bits)?;
    if desc.n_out == 0 {
        return Ok(Bits::new());
    }
    let len = (desc.n_in + desc.n_out - 1).next_power_of_two();
    let mut a = vec![Complex::new(0.0, 0.0); len];
    for k in -(desc.n_in as isize - 1)..desc.n_out as isize {
        if desc.by_offset(k) {
            a[k.rem_euclid(len as isize) as usize].re = 1.0;
        }
    }
    let mut x = vec![Complex::new(0.0, 0.0); len];
    for j in bits.iter_ones() {
        x[j].re = 1.0;
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    forward.process(&mut a);
    forward.process(&mut x);
    for (u, v) in a.iter_mut().zip(&x) {
        *u *= v;
    }
    inverse.process(&mut a);
    let scale = 1.0 / len as f64;
    a.iter()
        .take(desc.n_out)
        .enumerate()
        .map(|(i, c)| {
            let value = c.re * scale;
            let rounded = value.round();
            let residue = (value - rounded).abs();
            if residue > 0.25 {
                Err(PrivacyError::Numerical { index: i, residue })
            } else {
                Ok(rounded as i64 % 2 == 1)
            }
        })
        .collect()
}

/// Per-block entry of a final-key manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEntry {
    pub block_id: u64,
    pub n_in: usize,
    pub n_out: usize,
}

/// Sidecar description of a final-key file.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyManifest {
    pub seed: u64,
    pub cr: f64,
    pub blocks: Vec<BlockEntry>,
}

impl KeyManifest {
    pub fn total_bits(&self) -> usize {
        self.blocks.iter().map(|b| b.n_out).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let n_in: usize = self.blocks.iter().map(|b| b.n_in).sum();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "cr = {}", self.cr);
        let _ = writeln!(out, "n_in = {n_in}");
        let _ = writeln!(out, "n_out = {}", self.total_bits());
        let ids: Vec<String> = self.blocks.iter().map(|b| b.block_id.to_string()).collect();
        let _ = writeln!(out, "block_ids = {}", ids.join(" "));
        for b in &self.blocks {
            let _ = writeln!(out, "block {} n_in = {} n_out = {}", b.block_id, b.n_in, b.n_out);
        }
        out
    }
}

/// Writes the key as raw MSB-first bytes to `path` and the manifest to
/// `path` with `.manifest` appended. Returns the manifest path.
pub fn write_final_key(path: &Path, key: &BitSlice<u8, Msb0>, manifest: &KeyManifest) -> Result<PathBuf, PrivacyError> {
    let mut bytes = vec![0u8; key.len().div_ceil(8)];
    bytes.view_bits_mut::<Msb0>()[..key.len()].copy_from_bitslice(key);
    fs::write(path, &bytes).map_err(|source| PrivacyError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".manifest");
    let sidecar = PathBuf::from(sidecar);
    fs::write(&sidecar, manifest.render()).map_err(|source| PrivacyError::Io {
        path: sidecar.clone(),
        source,
    })?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_bits(n: usize, seed: u64) -> Bits {
        let mut rng = rng::from_seed(seed);
        (0..n).map(|_| rng.random::<bool>()).collect()
    }

    /// Definition-level product, bit by bit.
    fn hash_reference(desc: &ToeplitzDescriptor, x: &Bits) -> Bits {
        (0..desc.n_out)
            .map(|i| (0..desc.n_in).fold(false, |acc, j| acc ^ (desc.entry(i, j) & x[j])))
            .collect()
    }

    #[test]
    fn output_length_examples() {
        assert_eq!(output_length(1024, 0.9), 102);
        assert_eq!(output_length(1024, 0.0), 1024);
        assert_eq!(output_length(1024, 1.0), 0);
        assert_eq!(output_length(3, 0.5), 2);
    }

    #[test]
    fn descriptor_is_determined_by_its_inputs() {
        let a = ToeplitzDescriptor::new(7, 1000, 100).unwrap();
        assert_eq!(a.diag.len(), 1099);
        assert_eq!(a, ToeplitzDescriptor::new(7, 1000, 100).unwrap());
        assert_ne!(a.diag, ToeplitzDescriptor::new(8, 1000, 100).unwrap().diag);
        assert!(ToeplitzDescriptor::new(7, 10, 11).is_err());
    }

    #[test]
    fn entries_follow_the_toeplitz_layout() {
        let d = ToeplitzDescriptor::new(3, 7, 4).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                if i > 0 && j > 0 {
                    assert_eq!(d.entry(i, j), d.entry(i - 1, j - 1));
                }
            }
            assert_eq!(d.entry(i, 0), d.diag[i]);
        }
        for j in 1..7 {
            assert_eq!(d.entry(0, j), d.diag[3 + j]);
        }
    }

    #[test]
    fn word_product_matches_definition() {
        for (n_in, n_out, seed) in [(1, 1, 1), (63, 10, 2), (64, 64, 3), (65, 7, 4), (300, 129, 5)] {
            let d = ToeplitzDescriptor::new(seed, n_in, n_out).unwrap();
            let x = random_bits(n_in, seed + 100);
            assert_eq!(hash_naive(&d, &x).unwrap(), hash_reference(&d, &x), "{n_in}x{n_out}");
        }
    }

    #[test]
    fn trivial_inputs() {
        let d = ToeplitzDescriptor::new(1, 1024, 102).unwrap();
        let zero = Bits::repeat(false, 1024);
        assert!(hash_naive(&d, &zero).unwrap().not_any());
        assert!(hash_fft(&d, &zero).unwrap().not_any());
        assert!(hash_naive(&d, &zero[..5]).is_err());
        assert!(hash_fft(&d, &zero[..5]).is_err());

        let mut diag = Bits::repeat(false, 1024 + 102 - 1);
        diag.set(0, true);
        let identity = ToeplitzDescriptor::from_diag(diag, 1024, 102).unwrap();
        let x = random_bits(1024, 9);
        assert_eq!(hash_naive(&identity, &x).unwrap(), x[..102]);
        assert_eq!(hash_fft(&identity, &x).unwrap(), x[..102]);
    }

    #[test]
    fn unit_vector_selects_a_column() {
        let d = ToeplitzDescriptor::new(11, 500, 60).unwrap();
        for j in [0, 1, 250, 499] {
            let mut e = Bits::repeat(false, 500);
            e.set(j, true);
            let col: Bits = (0..60).map(|i| d.entry(i, j)).collect();
            assert_eq!(hash_fft(&d, &e).unwrap(), col);
        }
    }

    #[test]
    fn hashing_is_linear() {
        let d = ToeplitzDescriptor::new(5, 2048, 300).unwrap();
        for seed in 0..100 {
            let x = random_bits(2048, 2 * seed);
            let y = random_bits(2048, 2 * seed + 1);
            let lhs = hash_naive(&d, &x).unwrap() ^ &hash_naive(&d, &y).unwrap();
            assert_eq!(lhs, hash_naive(&d, &(x.clone() ^ &y)).unwrap());
        }
    }

    #[test]
    fn fft_matches_naive_at_4096() {
        for seed in 0..100 {
            let d = ToeplitzDescriptor::new(seed, 4096, 410).unwrap();
            let x = random_bits(4096, seed ^ 0xABCD);
            assert_eq!(hash_fft(&d, &x).unwrap(), hash_naive(&d, &x).unwrap());
        }
    }

    #[test]
    fn fft_matches_naive_at_a_million_bits() {
        let n = 1 << 20;
        let d = ToeplitzDescriptor::new(1, n, 512).unwrap();
        let x = random_bits(n, 2);
        assert_eq!(hash_fft(&d, &x).unwrap(), hash_naive(&d, &x).unwrap());
    }

    #[test]
    fn two_universal_smoke() {
        // the bound is 2 * 2^-16; 10^6 seeds give about 15 expected collisions
        let x = random_bits(256, 1);
        let mut y = x.clone();
        let flipped = !y[100];
        y.set(100, flipped);
        let trials = 1_000_000u64;
        let collisions = (0..trials)
            .filter(|&s| {
                let d = ToeplitzDescriptor::new(s, 256, 16).unwrap();
                hash_naive(&d, &x).unwrap() == hash_naive(&d, &y).unwrap()
            })
            .count();
        assert!(collisions as f64 / trials as f64 <= 2.0 * 2f64.powi(-16), "{collisions}");
        let d = ToeplitzDescriptor::new(3, 256, 16).unwrap();
        assert_eq!(hash_fft(&d, &x).unwrap(), hash_naive(&d, &x).unwrap());
    }

    #[test]
    fn final_key_file_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.bin");
        let key: Bits = (0..12).map(|i| i % 2 == 0).collect();
        let manifest = KeyManifest {
            seed: 9,
            cr: 0.5,
            blocks: vec![
                BlockEntry { block_id: 0, n_in: 16, n_out: 8 },
                BlockEntry { block_id: 1, n_in: 8, n_out: 4 },
            ],
        };
        let sidecar = write_final_key(&path, &key, &manifest).unwrap();
        assert_eq!(fs::read(&path).unwrap(), vec![0b1010_1010, 0b1010_0000]);
        let text = fs::read_to_string(sidecar).unwrap();
        assert!(text.contains("seed = 9\n"));
        assert!(text.contains("n_out = 12\n"));
        assert!(text.contains("block_ids = 0 1\n"));
    }
}
