//! Distance presets, published key-rate targets and the filtering fit.

use serde::{Deserialize, Serialize};

use super::{analytic_row, GridPoint, SweepError, SweepSpec};
use crate::detection::DetectorParams;
use crate::optics::OpticalBudget;

/// A measured key rate at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub kr_bps: f64,
    pub dr: f64,
    pub cr: f64,
    pub dead_time_us: f64,
    #[serde(default = "default_bias")]
    pub bias_v: f64,
}

fn default_bias() -> f64 {
    2.0
}

impl CalibrationTarget {
    pub fn new(kr_bps: f64, dr: f64, cr: f64, dead_time_us: f64) -> Self {
        Self {
            kr_bps,
            dr,
            cr,
            dead_time_us,
            bias_v: default_bias(),
        }
    }
}

/// A link length with its reference key rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub distance_km: f64,
    #[serde(default)]
    pub extra_db: f64,
    pub targets: Vec<CalibrationTarget>,
    /// Fitted filtering, once calibrated.
    #[serde(default)]
    pub filtering_pct: Option<f64>,
}

impl Preset {
    pub fn point(&self, t: &CalibrationTarget) -> GridPoint {
        GridPoint {
            distance_km: self.distance_km,
            extra_db: self.extra_db,
            dead_time_us: t.dead_time_us,
            bias_v: t.bias_v,
            dr: t.dr,
            cr: t.cr,
        }
    }

    pub fn effective_distance_km(&self, loss_per_km: f64) -> f64 {
        OpticalBudget {
            distance_km: self.distance_km,
            extra_loss_db: self.extra_db,
            loss_per_km,
            ..OpticalBudget::default()
        }
        .effective_distance_km()
    }
}

/// The four reference links. The 120 km and 145 km targets are the upper
/// and lower ends of the reported ranges: DR 3.125 %, CR 50 % for the top
/// and DR 50 %, CR 90 % for the bottom, both at 50 us.
pub fn presets() -> Vec<Preset> {
    let t = CalibrationTarget::new;
    let p = |name: &str, distance_km, extra_db, targets| Preset {
        name: name.to_string(),
        distance_km,
        extra_db,
        targets,
        filtering_pct: None,
    };
    vec![
        p("40km", 40.0, 0.0, vec![t(14562.0, 0.03125, 0.5, 20.0), t(5923.0, 0.03125, 0.5, 50.0)]),
        p(
            "80km",
            80.0,
            0.0,
            vec![t(934.0, 0.03125, 0.9, 45.0), t(6853.0, 0.03125, 0.5, 30.0), t(5637.0, 0.03125, 0.5, 45.0)],
        ),
        p("120km", 120.0, 0.0, vec![t(2410.0, 0.03125, 0.5, 50.0), t(241.0, 0.5, 0.9, 50.0)]),
        p("145km", 120.0, 5.0, vec![t(1184.0, 0.03125, 0.5, 50.0), t(154.0, 0.5, 0.9, 50.0)]),
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

/// How the single filtering scalar is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitObjective {
    /// Minimise the largest relative error.
    #[default]
    Minimax,
    /// Minimise the sum of squared relative errors.
    LeastSquares,
}

impl std::str::FromStr for FitObjective {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "least-squares" | "lsq" => Ok(Self::LeastSquares),
            _ => Err(SweepError::Config(format!("unknown fit objective {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub filtering_pct: f64,
    pub objective: FitObjective,
    /// (target, modeled key rate at the fitted filtering).
    pub fitted: Vec<(CalibrationTarget, f64)>,
    pub max_rel_error: f64,
}

/// Fits the filtering scalar of `preset` to its targets.
///
/// The analytic key rate is proportional to the filtering, so each target
/// alone pins `f_i = target_i / KR_i(1)`. Minimax takes the harmonic mean
/// of the extreme `f_i`; least squares on relative errors gives
/// `sum(r_i) / sum(r_i^2)` with `r_i = 1 / f_i`.
pub fn fit_filtering(preset: &Preset, model: &SweepSpec, objective: FitObjective) -> Result<FitResult, SweepError> {
    if preset.targets.is_empty() {
        return Err(SweepError::Calibration(format!("preset {} has no targets", preset.name)));
    }
    let unit = SweepSpec {
        filtering: FilteringTable::uniform(1.0),
        ..model.clone()
    };
    let mut ratios = Vec::with_capacity(preset.targets.len());
    let mut unit_rates = Vec::with_capacity(preset.targets.len());
    for t in &preset.targets {
        if !(t.kr_bps > 0.0) {
            return Err(SweepError::Calibration(format!("target rate {} must be positive", t.kr_bps)));
        }
        let kr1 = analytic_row(&unit, &preset.point(t))?.secret_kr_bps;
        if kr1 <= 0.0 {
            return Err(SweepError::Calibration(format!(
                "model gives no key at DR {} CR {} DT {} us",
                t.dr, t.cr, t.dead_time_us
            )));
        }
        ratios.push(t.kr_bps / kr1);
        unit_rates.push(kr1);
    }
    let f = match objective {
        FitObjective::Minimax => {
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            2.0 / (1.0 / lo + 1.0 / hi)
        }
        FitObjective::LeastSquares => {
            let r: Vec<f64> = ratios.iter().map(|f| 1.0 / f).collect();
            r.iter().sum::<f64>() / r.iter().map(|x| x * x).sum::<f64>()
        }
    };
    if f > 1.0 {
        return Err(SweepError::Calibration(format!(
            "preset {} needs filtering {f:.4} > 1",
            preset.name
        )));
    }
    let fitted: Vec<_> = preset.targets.iter().zip(&unit_rates).map(|(t, kr1)| (*t, f * kr1)).collect();
    let max_rel_error = fitted
        .iter()
        .map(|(t, kr)| (kr - t.kr_bps).abs() / t.kr_bps)
        .fold(0.0, f64::max);
    Ok(FitResult {
        filtering_pct: f,
        objective,
        fitted,
        max_rel_error,
    })
}

/// Filtering at one effective distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteringEntry {
    pub distance_km: f64,
    pub filtering_pct: f64,
}

/// Filtering as a function of effective distance: linear between entries,
/// constant beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringTable {
    pub entries: Vec<FilteringEntry>,
}

impl Default for FilteringTable {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl FilteringTable {
    pub fn uniform(filtering_pct: f64) -> Self {
        Self {
            entries: vec![FilteringEntry {
                distance_km: 0.0,
                filtering_pct,
            }],
        }
    }

    /// Minimax fits of every preset under the default model.
    pub fn calibrated() -> Self {
        let model = SweepSpec::uncalibrated();
        let mut entries: Vec<_> = presets()
            .iter()
            .map(|p| FilteringEntry {
                distance_km: p.effective_distance_km(model.budget.loss_per_km),
                filtering_pct: fit_filtering(p, &model, FitObjective::Minimax)
                    .expect("built-in presets are feasible")
                    .filtering_pct,
            })
            .collect();
        entries.sort_by(|a, b| a.distance_km.total_cmp(&b.distance_km));
        Self { entries }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.entries.is_empty() {
            return Err(SweepError::Config("filtering table is empty".into()));
        }
        for w in self.entries.windows(2) {
            if !(w[0].distance_km < w[1].distance_km) {
                return Err(SweepError::Config("filtering entries must have increasing distance".into()));
            }
        }
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| !(e.filtering_pct > 0.0 && e.filtering_pct <= 1.0) || !e.distance_km.is_finite())
        {
            return Err(SweepError::Config(format!(
                "filtering {} at {} km outside (0, 1]",
                e.filtering_pct, e.distance_km
            )));
        }
        Ok(())
    }

    pub fn lookup(&self, distance_km: f64) -> f64 {
        let e = &self.entries;
        match e.iter().position(|x| x.distance_km >= distance_km) {
            None => e.last().map_or(1.0, |x| x.filtering_pct),
            Some(0) => e[0].filtering_pct,
            Some(i) => {
                let (a, b) = (e[i - 1], e[i]);
                if b.distance_km == distance_km {
                    return b.filtering_pct;
                }
                let w = (distance_km - a.distance_km) / (b.distance_km - a.distance_km);
                a.filtering_pct + w * (b.filtering_pct - a.filtering_pct)
            }
        }
    }

    /// Replaces or inserts the entry at `distance_km`.
    pub fn set(&mut self, distance_km: f64, filtering_pct: f64) {
        match self.entries.iter_mut().find(|e| e.distance_km == distance_km) {
            Some(e) => e.filtering_pct = filtering_pct,
            None => {
                self.entries.push(FilteringEntry {
                    distance_km,
                    filtering_pct,
                });
                self.entries.sort_by(|a, b| a.distance_km.total_cmp(&b.distance_km));
            }
        }
    }
}

impl SweepSpec {
    /// Default spec with unit filtering everywhere.
    pub fn uncalibrated() -> Self {
        Self {
            mode: super::SweepMode::Analytic,
            grids: super::Grids::default(),
            seed: 1,
            pairs: 10_000_000,
            budget: OpticalBudget::default(),
            detector: DetectorParams::default(),
            filtering: FilteringTable::uniform(1.0),
            include_dark_counts: false,
            qber_ceiling: 0.06,
            decoy_prob: 0.5,
            arbitrary_dr: false,
            block_len: 1024,
            output: None,
        }
    }
}
