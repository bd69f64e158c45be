//! Key rate over time at a fixed operating point.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{analytic_row, Preset, SweepError, SweepMode, SweepSpec};
use crate::detection::{ClickProcess, Slot};
use crate::rng;

/// Operating point of a stability run: DR 3.125 %, CR 90 %, DT 50 us, 2 V.
pub const STABILITY_POINT: super::CalibrationTarget = super::CalibrationTarget {
    kr_bps: 0.0,
    dr: 0.03125,
    cr: 0.9,
    dead_time_us: 50.0,
    bias_v: 2.0,
};

/// Key rate and QBER per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub interval_s: f64,
    pub kr_bps: Vec<f64>,
    pub qber: Vec<f64>,
}

/// Ordinary least-squares line through a series against interval index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_err: f64,
    /// `slope / slope_std_err`; zero for a perfectly flat series.
    pub t_stat: f64,
    pub dof: usize,
}

impl StabilitySeries {
    pub fn mean(&self) -> f64 {
        self.kr_bps.iter().sum::<f64>() / self.kr_bps.len() as f64
    }

    /// Sample standard deviation, exactly zero for a constant series.
    pub fn std_dev(&self) -> f64 {
        let n = self.kr_bps.len() as f64;
        let x0 = self.kr_bps[0];
        let (s, ss) = self
            .kr_bps
            .iter()
            .fold((0.0, 0.0), |(s, ss), x| (s + (x - x0), ss + (x - x0).powi(2)));
        ((ss - s * s / n) / (n - 1.0)).max(0.0).sqrt()
    }

    pub fn rel_std(&self) -> f64 {
        self.std_dev() / self.mean()
    }

    pub fn trend(&self) -> Trend {
        let n = self.kr_bps.len();
        let xm = (n as f64 - 1.0) / 2.0;
        let ym = self.mean();
        let sxx: f64 = (0..n).map(|i| (i as f64 - xm).powi(2)).sum();
        let sxy: f64 = self.kr_bps.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
        let slope = sxy / sxx;
        let intercept = ym - slope * xm;
        let ss_res: f64 = self
            .kr_bps
            .iter()
            .enumerate()
            .map(|(i, y)| (y - intercept - slope * i as f64).powi(2))
            .sum();
        let dof = n - 2;
        let slope_std_err = (ss_res / dof as f64 / sxx).sqrt();
        let t_stat = if slope_std_err > 0.0 { slope / slope_std_err } else { 0.0 };
        Trend {
            slope,
            intercept,
            slope_std_err,
            t_stat,
            dof,
        }
    }
}

/// Samples the key rate of `preset` every `interval_s` for `duration_s`.
///
/// Analytic mode repeats the closed-form rate. Monte Carlo mode runs an
/// independent event-driven detector per interval and counts in-window
/// clicks, sifted bits and their errors.
pub fn stability_run(
    preset: &Preset,
    model: &SweepSpec,
    mode: SweepMode,
    duration_s: f64,
    interval_s: f64,
    seed: u64,
) -> Result<StabilitySeries, SweepError> {
    if !(interval_s > 0.0 && duration_s >= 2.0 * interval_s) {
        return Err(SweepError::Config(format!(
            "duration {duration_s} s must cover at least two intervals of {interval_s} s"
        )));
    }
    let n = (duration_s / interval_s).floor() as usize;
    let point = preset.point(&STABILITY_POINT);
    let (budget, detector) = model.resolve(&point)?;
    match mode {
        SweepMode::Analytic => {
            let row = analytic_row(model, &point)?;
            Ok(StabilitySeries {
                interval_s,
                kr_bps: vec![row.secret_kr_bps; n],
                qber: vec![row.qber; n],
            })
        }
        SweepMode::MonteCarlo => {
            let keep = (1.0 - point.dr) * (1.0 - point.cr) * budget.filtering_pct;
            let samples = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut process = ClickProcess::new(
                        &budget,
                        &detector,
                        model.decoy_prob,
                        rng::substream(seed, "interval", i as u64),
                    )?;
                    let mut flips = rng::from_seed(rng::substream(seed, "flip", i as u64));
                    let (mut sifted, mut errors) = (0u64, 0u64);
                    let tally = process.run_until(interval_s, |c| {
                        let read = match c.record.slot {
                            Slot::Early => false,
                            Slot::Late => true,
                            _ => return,
                        };
                        if let Some(bit) = c.symbol.bit() {
                            sifted += 1;
                            let flipped = !c.dark && flips.random_bool(detector.intrinsic_error);
                            errors += u64::from((read != bit) ^ flipped);
                        }
                    });
                    let qber = if sifted > 0 { errors as f64 / sifted as f64 } else { 0.0 };
                    Ok((tally.in_window as f64 / interval_s * keep, qber))
                })
                .collect::<Result<Vec<_>, SweepError>>()?;
            Ok(StabilitySeries {
                interval_s,
                kr_bps: samples.iter().map(|s| s.0).collect(),
                qber: samples.iter().map(|s| s.1).collect(),
            })
        }
        SweepMode::EndToEnd => Err(SweepError::Config(
            "stability runs support the analytic and monte-carlo modes".into(),
        )),
    }
}
