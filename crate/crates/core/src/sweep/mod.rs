//! Parameter sweeps, filtering calibration and stability runs.
//!
//! A [`SweepSpec`] names value lists for distance, extra attenuation, dead
//! time, bias, DR and CR. [`run_sweep`] evaluates every grid point in a
//! worker pool and returns the rows in grid order (distance outermost, CR
//! innermost), in one of three modes:
//!
//! * `Analytic` - closed-form budget, modeled QBER;
//! * `MonteCarlo` - simulated frame, detector and sifting, with DR and CR
//!   applied as realized integer bit counts;
//! * `EndToEnd` - a full in-process Alice/Bob session per point.

mod config;
mod csv;
mod preset;
mod stability;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    apply_dead_time, apply_intrinsic_errors, qber_model, simulate_transmission, time_window_filter,
    DetectionError, DetectorParams, SlotClock,
};
use crate::link::{loopback, AbortReason, RatePolicy, SessionConfig};
use crate::optics::{KeyRateReport, OpticalBudget, OpticsError, RowStatus};
use crate::privacy::output_length;
use crate::protocol::{disclosed_count, encode_sequence, sift, ProtocolError};
use crate::reconciliation::{estimate_qber, DEFAULT_MAX_ITER};
use crate::rng;

pub use config::{ConfigFile, PresetSection};
pub use csv::{emit_csv, fmt_sig6, render_csv, CSV_HEADER};
pub use preset::{
    fit_filtering, presets, preset, CalibrationTarget, FilteringEntry, FilteringTable, FitObjective, FitResult,
    Preset,
};
pub use stability::{stability_run, StabilitySeries, Trend, STABILITY_POINT};

/// The disclose rates the hardware supports.
pub const DYADIC_DR: [f64; 5] = [0.03125, 0.0625, 0.125, 0.25, 0.5];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("session failed: {0}")]
    Session(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    #[default]
    Analytic,
    MonteCarlo,
    EndToEnd,
}

impl FromStr for SweepMode {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "monte-carlo" | "mc" => Ok(Self::MonteCarlo),
            "end-to-end" | "e2e" => Ok(Self::EndToEnd),
            _ => Err(SweepError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// Value lists of the swept parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub distance_km: Vec<f64>,
    pub extra_db: Vec<f64>,
    pub dead_time_us: Vec<f64>,
    pub bias_v: Vec<f64>,
    pub dr: Vec<f64>,
    pub cr: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            distance_km: vec![80.0],
            extra_db: vec![0.0],
            dead_time_us: vec![50.0],
            bias_v: vec![2.0],
            dr: DYADIC_DR.to_vec(),
            cr: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
        }
    }
}

impl Grids {
    pub fn len(&self) -> usize {
        self.distance_km.len()
            * self.extra_db.len()
            * self.dead_time_us.len()
            * self.bias_v.len()
            * self.dr.len()
            * self.cr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points in emission order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &distance_km in &self.distance_km {
            for &extra_db in &self.extra_db {
                for &dead_time_us in &self.dead_time_us {
                    for &bias_v in &self.bias_v {
                        for &dr in &self.dr {
                            for &cr in &self.cr {
                                out.push(GridPoint {
                                    distance_km,
                                    extra_db,
                                    dead_time_us,
                                    bias_v,
                                    dr,
                                    cr,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One operating point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub distance_km: f64,
    pub extra_db: f64,
    pub dead_time_us: f64,
    pub bias_v: f64,
    pub dr: f64,
    pub cr: f64,
}

/// Full description of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub grids: Grids,
    pub seed: u64,
    /// Pulse pairs simulated per point in the Monte Carlo and end-to-end modes.
    pub pairs: usize,
    /// Fixed link parameters; distance, attenuation and dead time come from the grid.
    pub budget: OpticalBudget,
    pub detector: DetectorParams,
    pub filtering: FilteringTable,
    /// Adds the dark count rate to the analytic click rate.
    pub include_dark_counts: bool,
    pub qber_ceiling: f64,
    pub decoy_prob: f64,
    /// Accept disclose rates off the dyadic ladder.
    pub arbitrary_dr: bool,
    /// Block length for end-to-end sessions.
    pub block_len: usize,
    pub output: Option<PathBuf>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            filtering: FilteringTable::calibrated(),
            ..Self::uncalibrated()
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |msg: String| Err(SweepError::Config(msg));
        let g = &self.grids;
        for (name, values) in [
            ("distance_km", &g.distance_km),
            ("extra_db", &g.extra_db),
            ("dead_time_us", &g.dead_time_us),
            ("bias_v", &g.bias_v),
            ("dr", &g.dr),
            ("cr", &g.cr),
        ] {
            if values.is_empty() {
                return bad(format!("grid {name} is empty"));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return bad(format!("grid {name} contains {v}"));
            }
        }
        if let Some(v) = g.dr.iter().chain(&g.cr).find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("DR/CR value {v} outside [0, 1]"));
        }
        if !self.arbitrary_dr {
            if let Some(v) = g.dr.iter().find(|v| !DYADIC_DR.contains(v)) {
                return bad(format!("DR {v} is not one of {DYADIC_DR:?}; enable arbitrary_dr to allow it"));
            }
        }
        if let Some(v) = g.dead_time_us.iter().find(|v| **v < 0.0) {
            return bad(format!("dead time {v} us is negative"));
        }
        if self.mode != SweepMode::Analytic && self.pairs == 0 {
            return bad("pairs must be positive".into());
        }
        if !(self.qber_ceiling > 0.0 && self.qber_ceiling < 0.5) {
            return bad(format!("qber_ceiling {} outside (0, 0.5)", self.qber_ceiling));
        }
        if !(0.0..1.0).contains(&self.decoy_prob) {
            return bad(format!("decoy_prob {} outside [0, 1)", self.decoy_prob));
        }
        self.filtering.validate()?;
        self.detector.validate()?;
        self.budget.validate()?;
        Ok(())
    }

    /// Budget and detector of one grid point, with the detector's
    /// efficiency and dark count rate and the calibrated filtering folded
    /// into the budget.
    pub fn resolve(&self, p: &GridPoint) -> Result<(OpticalBudget, DetectorParams), SweepError> {
        let dead_time_s = p.dead_time_us / 1e6;
        let detector = self.detector.clone().with_dead_time(dead_time_s).with_bias(p.bias_v);
        let budget = OpticalBudget {
            distance_km: p.distance_km,
            extra_loss_db: p.extra_db,
            dead_time_s,
            ..self.budget
        };
        let mut resolved = detector.apply_to(&budget)?;
        resolved.filtering_pct = self.filtering.lookup(resolved.effective_distance_km());
        resolved.validate()?;
        Ok((resolved, detector))
    }
}

/// Provenance of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub build_id: String,
    pub mode: SweepMode,
    pub seed: u64,
    pub points: usize,
    pub wall_time_s: f64,
}

/// Rows of a sweep in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<KeyRateReport>,
    pub metadata: RunMetadata,
}

/// Version plus the commit hash baked in at build time, if any.
pub fn build_id() -> String {
    match option_env!("COWQKD_BUILD_COMMIT") {
        Some(commit) => format!("{}+{commit}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn flag(budget: &OpticalBudget, qber: f64, ceiling: f64) -> RowStatus {
    if budget.dead_time_s < budget.breakdown().gap_s {
        RowStatus::DeadTimeBelowGap
    } else if qber > ceiling {
        RowStatus::QberExceeded
    } else {
        RowStatus::Ok
    }
}

/// One analytic row.
pub fn analytic_row(spec: &SweepSpec, p: &GridPoint) -> Result<KeyRateReport, SweepError> {
    let (budget, detector) = spec.resolve(p)?;
    let qber = qber_model(&budget, &detector);
    let mut row = KeyRateReport::analytic(&budget, p.dr, p.cr, spec.include_dark_counts, qber).with_bias(p.bias_v);
    row.status = flag(&budget, qber, spec.qber_ceiling);
    Ok(row)
}

/// One simulated row: detector Monte Carlo, sifting and intrinsic errors,
/// then DR and CR applied as the integer bit counts the protocol would use.
pub fn monte_carlo_row(spec: &SweepSpec, p: &GridPoint, seed: u64) -> Result<KeyRateReport, SweepError> {
    let (budget, detector) = spec.resolve(p)?;
    let frame = encode_sequence(rng::substream(seed, "frame", 0), spec.pairs, spec.decoy_prob, budget.mu)?;
    let raw = simulate_transmission(&frame, &budget, &detector, rng::substream(seed, "detect", 0))?;
    let live = apply_dead_time(&raw, budget.dead_time_s)?;
    let clock = SlotClock::from_pulse_rate(budget.pulse_rate_hz);
    let (accepted, _) = time_window_filter(
        &live,
        &clock,
        detector.window_s,
        detector.jitter_sigma_s,
        rng::substream(seed, "jitter", 0),
    );
    let sifted = sift(&frame, &accepted)?;
    let mut bob = sifted.bob.into_bits();
    apply_intrinsic_errors(&mut bob, detector.intrinsic_error, rng::substream(seed, "intrinsic", 0));

    let n = bob.len();
    let qber = if n == 0 {
        0.0
    } else {
        estimate_qber(sifted.alice.bits(), &bob).map_err(|e| SweepError::Config(e.to_string()))?
    };
    let duration = spec.pairs as f64 * clock.pair_period_s();
    let total = live.len() as f64 / duration;
    let effective = accepted.len() as f64 / duration * budget.filtering_pct;
    let kept = n - disclosed_count(n, p.dr);
    let secret = if n == 0 {
        0.0
    } else {
        effective * output_length(kept, p.cr) as f64 / n as f64
    };
    let status = flag(&budget, qber, spec.qber_ceiling);
    Ok(KeyRateReport::measured(&budget, p.dr, p.cr, total, effective, qber, secret, status).with_bias(p.bias_v))
}

/// One row from a complete loopback session.
pub fn end_to_end_row(spec: &SweepSpec, p: &GridPoint, seed: u64) -> Result<KeyRateReport, SweepError> {
    let (budget, detector) = spec.resolve(p)?;
    let config = SessionConfig {
        budget,
        detector,
        pairs: spec.pairs,
        decoy_prob: spec.decoy_prob,
        dr: p.dr,
        cr: p.cr,
        qber_ceiling: spec.qber_ceiling,
        block_len: spec.block_len,
        code_rate: RatePolicy::Auto,
        max_iter: DEFAULT_MAX_ITER,
    };
    config.validate().map_err(|e| SweepError::Config(e.to_string()))?;
    let run = loopback(&config, rng::substream(seed, "alice", 0), rng::substream(seed, "bob", 0));
    match run.alice {
        Ok(outcome) => {
            let mut row = outcome.report;
            row.budget = budget;
            row.status = flag(&budget, row.qber, spec.qber_ceiling);
            Ok(row)
        }
        Err(e) if e.abort_reason() == Some(AbortReason::QberExceeded) => {
            let qber = qber_model(&budget, &config.detector);
            Ok(
                KeyRateReport::measured(&budget, p.dr, p.cr, 0.0, 0.0, qber, 0.0, RowStatus::QberExceeded)
                    .with_bias(p.bias_v),
            )
        }
        Err(e) => Err(SweepError::Session(e.to_string())),
    }
}

/// Evaluates every grid point; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let start = Instant::now();
    let points = spec.grids.points();
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = rng::substream(spec.seed, "point", i as u64);
            match spec.mode {
                SweepMode::Analytic => analytic_row(spec, p),
                SweepMode::MonteCarlo => monte_carlo_row(spec, p, seed),
                SweepMode::EndToEnd => end_to_end_row(spec, p, seed),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult {
        rows,
        metadata: RunMetadata {
            build_id: build_id(),
            mode: spec.mode,
            seed: spec.seed,
            points: points.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}
