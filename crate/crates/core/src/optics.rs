//! Closed-form link budget and key-rate arithmetic.
//!
//! The chain is: fiber (plus attenuator) loss, Poisson mean after the fiber,
//! the data-line share of the 90:10 coupler, detector efficiency, pulse rate,
//! then a non-paralyzable dead time and a filtering factor. The secret key
//! rate is the effective click rate scaled by `(1 - DR)(1 - CR)`.
//!
//! Everything here is a pure function over value types and doubles as the
//! oracle for the Monte Carlo in [`crate::detection`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{name} must be {requirement}, got {value}")]
    Domain {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

fn require(ok: bool, name: &'static str, requirement: &'static str, value: f64) -> Result<(), OpticsError> {
    if ok {
        Ok(())
    } else {
        Err(OpticsError::Domain {
            name,
            requirement,
            value,
        })
    }
}

fn is_fraction(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Physical-layer operating point of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalBudget {
    pub distance_km: f64,
    /// Fiber attenuation in dB/km.
    pub loss_per_km: f64,
    /// Attenuators, connectors and macrobending, in dB.
    pub extra_loss_db: f64,
    /// Mean photon number of a non-empty pulse.
    pub mu: f64,
    pub pulse_rate_hz: f64,
    /// Share of the photons sent to the data line by Bob's coupler.
    pub coupler_data_fraction: f64,
    pub detector_efficiency: f64,
    pub dead_time_s: f64,
    pub dcr_hz: f64,
    /// System-dependent share of clicks that survive time filtering.
    pub filtering_pct: f64,
}

impl Default for OpticalBudget {
    fn default() -> Self {
        Self {
            distance_km: 80.0,
            loss_per_km: 0.2,
            extra_loss_db: 0.0,
            mu: 0.5,
            pulse_rate_hz: 5.0e8,
            coupler_data_fraction: 0.9,
            detector_efficiency: 0.1,
            dead_time_s: 50.0e-6,
            dcr_hz: 0.0,
            filtering_pct: 1.0,
        }
    }
}

impl OpticalBudget {
    pub fn at_distance(distance_km: f64) -> Self {
        Self {
            distance_km,
            ..Self::default()
        }
    }

    pub fn with_dead_time(mut self, dead_time_s: f64) -> Self {
        self.dead_time_s = dead_time_s;
        self
    }

    pub fn with_extra_loss(mut self, extra_loss_db: f64) -> Self {
        self.extra_loss_db = extra_loss_db;
        self
    }

    pub fn with_filtering(mut self, filtering_pct: f64) -> Self {
        self.filtering_pct = filtering_pct;
        self
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        require(self.distance_km >= 0.0, "distance_km", ">= 0", self.distance_km)?;
        require(self.loss_per_km >= 0.0, "loss_per_km", ">= 0", self.loss_per_km)?;
        require(self.extra_loss_db >= 0.0, "extra_loss_db", ">= 0", self.extra_loss_db)?;
        require(self.mu > 0.0, "mu", "> 0", self.mu)?;
        require(self.pulse_rate_hz > 0.0, "pulse_rate_hz", "> 0", self.pulse_rate_hz)?;
        require(
            is_fraction(self.coupler_data_fraction),
            "coupler_data_fraction",
            "in [0, 1]",
            self.coupler_data_fraction,
        )?;
        require(
            is_fraction(self.detector_efficiency),
            "detector_efficiency",
            "in [0, 1]",
            self.detector_efficiency,
        )?;
        require(self.dead_time_s >= 0.0, "dead_time_s", ">= 0", self.dead_time_s)?;
        require(self.dcr_hz >= 0.0, "dcr_hz", ">= 0", self.dcr_hz)?;
        require(is_fraction(self.filtering_pct), "filtering_pct", "in [0, 1]", self.filtering_pct)
    }

    /// Fiber length that would produce the same total loss as this budget.
    pub fn effective_distance_km(&self) -> f64 {
        if self.loss_per_km > 0.0 {
            self.distance_km + self.extra_loss_db / self.loss_per_km
        } else {
            self.distance_km
        }
    }

    pub fn total_loss_db(&self) -> f64 {
        // validated budgets never hit the error branch
        fiber_loss_db(self.distance_km, self.loss_per_km, self.extra_loss_db).unwrap_or(f64::NAN)
    }

    /// Mean photons per non-empty pulse arriving at Bob's coupler.
    pub fn mu_at_receiver(&self) -> f64 {
        attenuate_mean_photon(self.mu, self.total_loss_db())
    }

    /// Mean photons per non-empty pulse that the detector converts into a click.
    pub fn mu_detected(&self) -> f64 {
        self.mu_at_receiver() * self.coupler_data_fraction * self.detector_efficiency
    }

    /// Step-by-step intermediates of the link budget.
    pub fn breakdown(&self) -> BudgetBreakdown {
        let loss_db = self.total_loss_db();
        let photons_after_fiber = attenuate_mean_photon(self.mu, loss_db);
        let photons_data_line = photons_after_fiber * self.coupler_data_fraction;
        let photons_detected = photons_data_line * self.detector_efficiency;
        let count_rate_hz = self.pulse_rate_hz * photons_detected;
        let gap_s = if count_rate_hz > 0.0 { 1.0 / count_rate_hz } else { f64::INFINITY };
        let total_time_s = gap_s + self.dead_time_s;
        BudgetBreakdown {
            loss_db,
            photons_after_fiber,
            photons_data_line,
            photons_detected,
            count_rate_hz,
            gap_s,
            total_time_s,
            total_clicks_hz: click_rate_dead_time(count_rate_hz, self.dead_time_s),
        }
    }
}

/// Intermediate values of the budget, in the order they are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetBreakdown {
    pub loss_db: f64,
    pub photons_after_fiber: f64,
    pub photons_data_line: f64,
    pub photons_detected: f64,
    pub count_rate_hz: f64,
    /// Mean spacing of detectable photons, `1 / count_rate_hz`.
    pub gap_s: f64,
    /// Gap plus dead time: the mean spacing of registered clicks.
    pub total_time_s: f64,
    pub total_clicks_hz: f64,
}

/// Total loss in dB of `distance_km` of fiber plus `extra_loss_db` of attenuation.
///
/// Evaluated as `(distance + extra / loss_per_km) * loss_per_km` so that an
/// attenuator and the equivalent length of fiber give bit-identical budgets.
pub fn fiber_loss_db(distance_km: f64, loss_per_km: f64, extra_loss_db: f64) -> Result<f64, OpticsError> {
    require(distance_km >= 0.0, "distance_km", ">= 0", distance_km)?;
    require(loss_per_km >= 0.0, "loss_per_km", ">= 0", loss_per_km)?;
    require(extra_loss_db >= 0.0, "extra_loss_db", ">= 0", extra_loss_db)?;
    if loss_per_km > 0.0 {
        Ok((distance_km + extra_loss_db / loss_per_km) * loss_per_km)
    } else {
        Ok(extra_loss_db)
    }
}

/// Mean photon number after `loss_db` of attenuation.
pub fn attenuate_mean_photon(mu_in: f64, loss_db: f64) -> f64 {
    mu_in * 10f64.powf(-loss_db / 10.0)
}

/// Rate of photons reaching the detector and being converted into counts.
pub fn detected_photon_rate(budget: &OpticalBudget) -> f64 {
    budget.pulse_rate_hz * budget.mu_detected()
}

/// Non-paralyzable dead-time throughput `1 / (1/rate + dead_time)`.
pub fn click_rate_dead_time(count_rate_hz: f64, dead_time_s: f64) -> f64 {
    if count_rate_hz <= 0.0 {
        return 0.0;
    }
    count_rate_hz / (1.0 + count_rate_hz * dead_time_s)
}

pub fn effective_clicks(total_clicks_hz: f64, filtering_pct: f64) -> f64 {
    total_clicks_hz * filtering_pct
}

/// Secret key rate after disclosing `dr` and compressing by `cr`.
pub fn secret_key_rate(effective_clicks_hz: f64, dr: f64, cr: f64) -> f64 {
    effective_clicks_hz * (1.0 - dr) * (1.0 - cr)
}

/// Length of fiber whose loss equals an attenuator of `extra_loss_db`.
pub fn equivalent_distance_km(extra_loss_db: f64, loss_per_km: f64) -> Result<f64, OpticsError> {
    require(loss_per_km > 0.0, "loss_per_km", "> 0", loss_per_km)?;
    require(extra_loss_db >= 0.0, "extra_loss_db", ">= 0", extra_loss_db)?;
    Ok(extra_loss_db / loss_per_km)
}

/// Validity of a computed key-rate row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    Ok,
    /// Dead time shorter than the mean photon gap; the hardware cannot run there.
    DeadTimeBelowGap,
    /// Modeled or measured QBER above the abort ceiling.
    QberExceeded,
}

/// One key-rate data point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub budget: OpticalBudget,
    pub bias_v: f64,
    pub dr: f64,
    pub cr: f64,
    pub total_clicks_hz: f64,
    pub effective_clicks_hz: f64,
    pub qber: f64,
    /// Distillable key rate before QBER gating; for analytic rows
    /// `effective_clicks_hz * (1 - dr) * (1 - cr)`.
    pub secret_kr_bps: f64,
    pub status: RowStatus,
}

impl KeyRateReport {
    /// Analytic row. Dark counts only enter the click rate when
    /// `include_dark_counts` is set; `qber` is supplied by the caller.
    pub fn analytic(
        budget: &OpticalBudget,
        dr: f64,
        cr: f64,
        include_dark_counts: bool,
        qber: f64,
    ) -> Self {
        let mut count_rate = detected_photon_rate(budget);
        if include_dark_counts {
            count_rate += budget.dcr_hz;
        }
        let total = click_rate_dead_time(count_rate, budget.dead_time_s);
        let effective = effective_clicks(total, budget.filtering_pct);
        Self {
            budget: *budget,
            bias_v: 0.0,
            dr,
            cr,
            total_clicks_hz: total,
            effective_clicks_hz: effective,
            qber,
            secret_kr_bps: secret_key_rate(effective, dr, cr),
            status: RowStatus::Ok,
        }
    }

    /// Row built from counted quantities of a simulated or live run.
    #[allow(clippy::too_many_arguments)]
    pub fn measured(
        budget: &OpticalBudget,
        dr: f64,
        cr: f64,
        total_clicks_hz: f64,
        effective_clicks_hz: f64,
        qber: f64,
        secret_kr_bps: f64,
        status: RowStatus,
    ) -> Self {
        Self {
            budget: *budget,
            bias_v: 0.0,
            dr,
            cr,
            total_clicks_hz,
            effective_clicks_hz,
            qber,
            secret_kr_bps,
            status,
        }
    }

    pub fn with_bias(mut self, bias_v: f64) -> Self {
        self.bias_v = bias_v;
        self
    }

    /// Key rate that can actually be distilled: zero for flagged rows.
    pub fn usable_kr_bps(&self) -> f64 {
        match self.status {
            RowStatus::Ok => self.secret_kr_bps,
            _ => 0.0,
        }
    }
}
