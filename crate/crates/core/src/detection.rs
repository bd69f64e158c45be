//! Monte Carlo model of Bob's single-photon detector.
//!
//! Two simulators share the same physics:
//!
//! * [`simulate_transmission`] walks an explicit [`SymbolFrame`] pulse by
//!   pulse and returns every pre-dead-time click, to be passed through
//!   [`apply_dead_time`] and [`time_window_filter`].
//! * [`ClickProcess`] is event driven: it only draws the clicks the
//!   detector can register (skipping dead periods) and samples Alice's
//!   symbols lazily where a click lands. It is exact for dead times longer
//!   than one pulse pair and makes hour-long runs cheap.
//!
//! A non-empty pulse of mean `mu` clicks with probability
//! `1 - exp(-mu * T * c * eta)` (Poissonian source), dark counts form a
//! homogeneous Poisson process, and the dead time is non-paralyzable.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{attenuate_mean_photon, OpticalBudget};
use crate::protocol::{Bits, LogicalSymbol, PulseTrain, SymbolFrame};
use crate::rng::{self, SimRng};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("events are not time-sorted at index {index}")]
    Unsorted { index: usize },
    #[error("invalid detector parameter: {0}")]
    Param(String),
    #[error("dcr table has no entry for dead time {dead_time_s} s, bias {bias_v} V")]
    MissingDcr { dead_time_s: f64, bias_v: f64 },
    #[error("malformed event dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Early,
    Late,
    OutOfWindow,
    /// Dark count not yet classified against the slot clock.
    Dark,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::Early => "early",
            Slot::Late => "late",
            Slot::OutOfWindow => "out",
            Slot::Dark => "dark",
        })
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "early" => Ok(Slot::Early),
            "late" => Ok(Slot::Late),
            "out" => Ok(Slot::OutOfWindow),
            "dark" => Ok(Slot::Dark),
            other => Err(format!("unknown slot `{other}`")),
        }
    }
}

/// A click at Bob's data-line detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub time_s: f64,
    pub pair_index: u64,
    pub slot: Slot,
}

/// Slot timing: slot `n` is centred at `offset_s + n * period_s`, slots
/// `2k` and `2k + 1` form pair `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotClock {
    pub period_s: f64,
    pub offset_s: f64,
}

impl SlotClock {
    pub fn from_pulse_rate(pulse_rate_hz: f64) -> Self {
        Self {
            period_s: 1.0 / pulse_rate_hz,
            offset_s: 0.0,
        }
    }

    pub fn pair_period_s(&self) -> f64 {
        2.0 * self.period_s
    }

    pub fn slot_time(&self, slot_index: u64) -> f64 {
        self.offset_s + slot_index as f64 * self.period_s
    }

    /// Nearest slot to `t` and the signed distance to its centre.
    pub fn nearest_slot(&self, t: f64) -> (u64, f64) {
        let n = ((t - self.offset_s) / self.period_s).round().max(0.0);
        let n = n as u64;
        (n, t - self.slot_time(n))
    }

    pub fn pair_of(&self, t: f64) -> u64 {
        ((t - self.offset_s) / self.pair_period_s()).floor().max(0.0) as u64
    }
}

/// One row of the dark-count table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrEntry {
    pub dead_time_s: f64,
    pub bias_v: f64,
    pub dcr_hz: f64,
}

/// Dark count rate as a function of (dead time, excess bias).
///
/// Lookup is piecewise constant: the entry with the largest dead time not
/// above the requested one (the smallest entry below the grid), at the
/// nearest tabulated bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrTable {
    pub entries: Vec<DcrEntry>,
}

/// Shape of the generated default table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcrCurve {
    /// Dark count rate at 50 us dead time and 2 V excess bias.
    pub reference_hz: f64,
    /// Power-law growth `(50 us / DT)^exponent` as dead time shrinks.
    pub exponent: f64,
    /// Dead time below which the step multiplier applies.
    pub step_below_s: f64,
    pub step_multiplier: f64,
    /// Fractional DCR change per volt of excess bias above 2 V.
    pub bias_slope_per_v: f64,
}

impl Default for DcrCurve {
    fn default() -> Self {
        Self {
            reference_hz: 2_000.0,
            exponent: 2.0,
            step_below_s: 45.0e-6,
            step_multiplier: 20.0,
            bias_slope_per_v: 0.25,
        }
    }
}

impl DcrCurve {
    pub fn dcr_hz(&self, dead_time_s: f64, bias_v: f64) -> f64 {
        let base = self.reference_hz * (50.0e-6 / dead_time_s).powf(self.exponent);
        let step = if dead_time_s < self.step_below_s - 1e-12 {
            self.step_multiplier
        } else {
            1.0
        };
        base * step * (1.0 + self.bias_slope_per_v * (bias_v - 2.0)).max(0.0)
    }
}

impl DcrTable {
    /// Dead times 20..=50 us in 5 us steps, bias 1..=4 V in 0.5 V steps.
    pub fn from_curve(curve: &DcrCurve) -> Self {
        let mut entries = Vec::new();
        for dt_us in (20..=50).step_by(5) {
            for half_volts in 2..=8 {
                let dead_time_s = dt_us as f64 * 1e-6;
                let bias_v = half_volts as f64 * 0.5;
                entries.push(DcrEntry {
                    dead_time_s,
                    bias_v,
                    dcr_hz: curve.dcr_hz(dead_time_s, bias_v),
                });
            }
        }
        Self { entries }
    }

    pub fn constant(dcr_hz: f64) -> Self {
        Self {
            entries: vec![DcrEntry {
                dead_time_s: 0.0,
                bias_v: 2.0,
                dcr_hz,
            }],
        }
    }

    pub fn lookup(&self, dead_time_s: f64, bias_v: f64) -> Result<f64, DetectionError> {
        let bias = self
            .entries
            .iter()
            .map(|e| e.bias_v)
            .min_by(|a, b| (a - bias_v).abs().total_cmp(&(b - bias_v).abs()))
            .ok_or(DetectionError::MissingDcr { dead_time_s, bias_v })?;
        let at_bias = || self.entries.iter().filter(move |e| e.bias_v == bias);
        at_bias()
            .filter(|e| e.dead_time_s <= dead_time_s * (1.0 + 1e-9))
            .max_by(|a, b| a.dead_time_s.total_cmp(&b.dead_time_s))
            .or_else(|| at_bias().min_by(|a, b| a.dead_time_s.total_cmp(&b.dead_time_s)))
            .map(|e| e.dcr_hz)
            .ok_or(DetectionError::MissingDcr { dead_time_s, bias_v })
    }

    /// Checks that DCR never increases with dead time at any bias.
    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.entries.is_empty() {
            return Err(DetectionError::Param("dcr table is empty".into()));
        }
        for e in &self.entries {
            if !(e.dcr_hz >= 0.0) || !(e.dead_time_s >= 0.0) {
                return Err(DetectionError::Param(format!("bad dcr entry {e:?}")));
            }
            let rising = self
                .entries
                .iter()
                .any(|o| o.bias_v == e.bias_v && o.dead_time_s > e.dead_time_s && o.dcr_hz > e.dcr_hz);
            if rising {
                return Err(DetectionError::Param(format!(
                    "dcr rises with dead time above {} s at {} V",
                    e.dead_time_s, e.bias_v
                )));
            }
        }
        Ok(())
    }
}

impl Default for DcrTable {
    fn default() -> Self {
        Self::from_curve(&DcrCurve::default())
    }
}

/// Detector hardware description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dead_time_s: f64,
    pub dcr_table: DcrTable,
    pub bias_v: f64,
    pub jitter_sigma_s: f64,
    /// Half-width of the acceptance window around each slot centre.
    pub window_s: f64,
    /// Probability that a correctly timed signal click is read as the wrong bit.
    pub intrinsic_error: f64,
    /// Fractional efficiency change per volt of excess bias above 2 V.
    pub bias_efficiency_slope: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.1,
            dead_time_s: 50.0e-6,
            dcr_table: DcrTable::default(),
            bias_v: 2.0,
            jitter_sigma_s: 50.0e-12,
            window_s: 0.5e-9,
            intrinsic_error: 0.02,
            bias_efficiency_slope: 0.0,
        }
    }
}

impl DetectorParams {
    /// Ideal detector: no dead time, dark counts, jitter or intrinsic errors.
    pub fn ideal(efficiency: f64) -> Self {
        Self {
            efficiency,
            dead_time_s: 0.0,
            dcr_table: DcrTable::constant(0.0),
            jitter_sigma_s: 0.0,
            intrinsic_error: 0.0,
            ..Self::default()
        }
    }

    pub fn with_dead_time(mut self, dead_time_s: f64) -> Self {
        self.dead_time_s = dead_time_s;
        self
    }

    pub fn with_bias(mut self, bias_v: f64) -> Self {
        self.bias_v = bias_v;
        self
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.efficiency) || !frac(self.intrinsic_error) {
            return Err(DetectionError::Param("efficiency and intrinsic_error must lie in [0, 1]".into()));
        }
        if !(self.dead_time_s >= 0.0) || !(self.jitter_sigma_s >= 0.0) || !(self.window_s >= 0.0) {
            return Err(DetectionError::Param("times must be non-negative".into()));
        }
        self.dcr_table.validate()
    }

    pub fn dcr_hz(&self) -> Result<f64, DetectionError> {
        self.dcr_table.lookup(self.dead_time_s, self.bias_v)
    }

    pub fn effective_efficiency(&self) -> f64 {
        (self.efficiency * (1.0 + self.bias_efficiency_slope * (self.bias_v - 2.0))).clamp(0.0, 1.0)
    }

    /// The budget with this detector's efficiency, dead time and DCR.
    pub fn apply_to(&self, budget: &OpticalBudget) -> Result<OpticalBudget, DetectionError> {
        Ok(OpticalBudget {
            detector_efficiency: self.effective_efficiency(),
            dead_time_s: self.dead_time_s,
            dcr_hz: self.dcr_hz()?,
            ..*budget
        })
    }
}

fn click_probability(mean_detected: f64) -> f64 {
    -(-mean_detected).exp_m1()
}

/// Per-non-empty-slot click probability after loss, coupler and efficiency.
pub fn signal_click_probability(budget: &OpticalBudget, mu: f64) -> f64 {
    let arriving = attenuate_mean_photon(mu, budget.total_loss_db());
    click_probability(arriving * budget.coupler_data_fraction * budget.detector_efficiency)
}

/// Every click of the detector before dead time and time filtering,
/// time-sorted. Signal clicks sit on their slot centres; dark counts are
/// tagged [`Slot::Dark`].
pub fn simulate_transmission(
    frame: &SymbolFrame,
    budget: &OpticalBudget,
    detector: &DetectorParams,
    seed: u64,
) -> Result<Vec<DetectionRecord>, DetectionError> {
    simulate_pulse_train(&frame.pulse_train(), budget, detector, seed)
}

/// [`simulate_transmission`] from slot occupancy alone, as seen at the
/// receiving end of the quantum channel.
pub fn simulate_pulse_train(
    train: &PulseTrain,
    budget: &OpticalBudget,
    detector: &DetectorParams,
    seed: u64,
) -> Result<Vec<DetectionRecord>, DetectionError> {
    detector.validate()?;
    let budget = detector.apply_to(budget)?;
    let clock = SlotClock::from_pulse_rate(budget.pulse_rate_hz);
    let p = signal_click_probability(&budget, train.mu);

    let mut signal = Vec::new();
    if p > 0.0 {
        let mut rng = rng::from_seed(rng::substream(seed, "signal", 0));
        let geometric = Geometric::new(p).map_err(|e| DetectionError::Param(e.to_string()))?;
        let mut skip = geometric.sample(&mut rng);
        for n in train.occupied.iter_ones() {
            if skip == 0 {
                signal.push(DetectionRecord {
                    time_s: clock.slot_time(n as u64),
                    pair_index: n as u64 / 2,
                    slot: if n % 2 == 0 { Slot::Early } else { Slot::Late },
                });
                skip = geometric.sample(&mut rng);
            } else {
                skip -= 1;
            }
        }
    }

    let duration = train.pairs() as f64 * clock.pair_period_s();
    let dark = dark_count_events(budget.dcr_hz, duration, rng::substream(seed, "dark", 0))
        .into_iter()
        .map(|t| DetectionRecord {
            time_s: t,
            pair_index: clock.pair_of(t),
            slot: Slot::Dark,
        })
        .collect();
    Ok(merge_sorted(signal, dark))
}

/// Merges two time-sorted streams.
pub fn merge_sorted(a: Vec<DetectionRecord>, b: Vec<DetectionRecord>) -> Vec<DetectionRecord> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut a, mut b) = (a.into_iter().peekable(), b.into_iter().peekable());
    loop {
        let take_a = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.time_s <= y.time_s,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.extend(if take_a { a.next() } else { b.next() });
    }
    out
}

/// Non-paralyzable dead time: keep an event iff it is at least
/// `dead_time_s` after the last kept event.
pub fn apply_dead_time(events: &[DetectionRecord], dead_time_s: f64) -> Result<Vec<DetectionRecord>, DetectionError> {
    if let Some(i) = events.windows(2).position(|w| w[1].time_s < w[0].time_s) {
        return Err(DetectionError::Unsorted { index: i + 1 });
    }
    let mut out = Vec::with_capacity(events.len());
    let mut last: Option<f64> = None;
    for e in events {
        if last.is_none_or(|t| e.time_s - t >= dead_time_s) {
            out.push(*e);
            last = Some(e.time_s);
        }
    }
    Ok(out)
}

/// Arrival times of a homogeneous Poisson process on `[0, duration_s)`.
pub fn dark_count_events(dcr_hz: f64, duration_s: f64, seed: u64) -> Vec<f64> {
    if !(dcr_hz > 0.0) || !(duration_s > 0.0) {
        return Vec::new();
    }
    let mut rng = rng::from_seed(seed);
    let gap = Exp::new(dcr_hz).expect("positive rate");
    let mut out = Vec::with_capacity((dcr_hz * duration_s * 1.1) as usize + 16);
    let mut t = gap.sample(&mut rng);
    while t < duration_s {
        out.push(t);
        t += gap.sample(&mut rng);
    }
    out
}

/// Adds Gaussian timing jitter, then classifies every event by the nearest
/// slot centre: within `window_s` it becomes an early or late click of that
/// pair, otherwise it is dropped as out of window. Returns the accepted
/// events (time-sorted) and the accepted fraction.
pub fn time_window_filter(
    events: &[DetectionRecord],
    clock: &SlotClock,
    window_s: f64,
    jitter_sigma_s: f64,
    seed: u64,
) -> (Vec<DetectionRecord>, f64) {
    if events.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mut rng = rng::from_seed(seed);
    let jitter = (jitter_sigma_s > 0.0).then(|| Normal::new(0.0, jitter_sigma_s).expect("finite sigma"));
    let mut accepted: Vec<DetectionRecord> = events
        .iter()
        .filter_map(|e| {
            let t = e.time_s + jitter.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            classify(clock, t, window_s)
        })
        .collect();
    accepted.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let fraction = accepted.len() as f64 / events.len() as f64;
    (accepted, fraction)
}

fn classify(clock: &SlotClock, t: f64, window_s: f64) -> Option<DetectionRecord> {
    let (n, offset) = clock.nearest_slot(t);
    (offset.abs() < window_s).then(|| DetectionRecord {
        time_s: t,
        pair_index: n / 2,
        slot: if n % 2 == 0 { Slot::Early } else { Slot::Late },
    })
}

/// Probability that a dark count lands inside the acceptance windows of one
/// pulse pair.
pub fn dark_click_probability_per_pair(budget: &OpticalBudget, window_s: f64) -> f64 {
    let clock = SlotClock::from_pulse_rate(budget.pulse_rate_hz);
    let open = (4.0 * window_s).min(clock.pair_period_s());
    click_probability(budget.dcr_hz * open)
}

/// Expected sifted-key error fraction.
///
/// With `s` the probability that a bit pair yields an in-window signal
/// click and `d` the probability of an in-window dark count in the pair,
/// `p = (d / 2 + e * s) / (s + d)`: dark counts land in either slot with
/// equal odds, signal clicks are misread with the intrinsic probability `e`.
pub fn qber_model(budget: &OpticalBudget, detector: &DetectorParams) -> f64 {
    let in_window = if detector.jitter_sigma_s > 0.0 {
        libm::erf(detector.window_s / (detector.jitter_sigma_s * std::f64::consts::SQRT_2))
    } else if detector.window_s > 0.0 {
        1.0
    } else {
        0.0
    };
    let s = signal_click_probability(budget, budget.mu) * in_window;
    let d = dark_click_probability_per_pair(budget, detector.window_s);
    if s + d == 0.0 {
        return 0.0;
    }
    (0.5 * d + detector.intrinsic_error * s) / (s + d)
}

/// Intrinsic error probability that makes [`qber_model`] equal `target`.
pub fn intrinsic_error_for_qber(budget: &OpticalBudget, detector: &DetectorParams, target: f64) -> f64 {
    let at = |e: f64| {
        qber_model(
            budget,
            &DetectorParams {
                intrinsic_error: e,
                ..detector.clone()
            },
        )
    };
    // the model is affine in e
    let (q0, q1) = (at(0.0), at(1.0));
    ((target - q0) / (q1 - q0)).clamp(0.0, 1.0)
}

/// Flips each bit independently with probability `p`.
pub fn apply_intrinsic_errors(bits: &mut Bits, p: f64, seed: u64) {
    if p <= 0.0 {
        return;
    }
    let mut rng = rng::from_seed(seed);
    for mut bit in bits.iter_mut() {
        if rng.random_bool(p) {
            *bit = !*bit;
        }
    }
}

/// A click produced by [`ClickProcess`], with the symbol Alice sent in
/// that pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LazyClick {
    /// Jittered time and window classification; `OutOfWindow` when rejected.
    pub record: DetectionRecord,
    pub symbol: LogicalSymbol,
    pub dark: bool,
}

/// Running totals of a [`ClickProcess`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClickTally {
    pub duration_s: f64,
    /// Clicks registered after dead time.
    pub clicks: u64,
    /// Clicks inside the acceptance window.
    pub in_window: u64,
    pub dark: u64,
}

/// Event-driven detector simulation over a virtual, lazily sampled frame.
pub struct ClickProcess {
    clock: SlotClock,
    dead_time_s: f64,
    window_s: f64,
    decoy_prob: f64,
    p: f64,
    pair_click: f64,
    geometric: Option<Geometric>,
    dark: Option<Exp<f64>>,
    jitter: Option<Normal<f64>>,
    rng: SimRng,
    t_live: f64,
}

impl ClickProcess {
    pub fn new(
        budget: &OpticalBudget,
        detector: &DetectorParams,
        decoy_prob: f64,
        seed: u64,
    ) -> Result<Self, DetectionError> {
        detector.validate()?;
        let budget = detector.apply_to(budget)?;
        let clock = SlotClock::from_pulse_rate(budget.pulse_rate_hz);
        if budget.dead_time_s < clock.pair_period_s() {
            return Err(DetectionError::Param(format!(
                "event-driven simulation needs dead time >= one pulse pair ({} s)",
                clock.pair_period_s()
            )));
        }
        if !(0.0..=1.0).contains(&decoy_prob) {
            return Err(DetectionError::Param(format!("decoy probability {decoy_prob}")));
        }
        let p = signal_click_probability(&budget, budget.mu);
        let f = decoy_prob;
        let pair_click = f * (1.0 - (1.0 - p) * (1.0 - p)) + (1.0 - f) * p;
        let geometric = if pair_click > 0.0 {
            Some(Geometric::new(pair_click).map_err(|e| DetectionError::Param(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            clock,
            dead_time_s: budget.dead_time_s,
            window_s: detector.window_s,
            decoy_prob,
            p,
            pair_click,
            geometric,
            dark: (budget.dcr_hz > 0.0).then(|| Exp::new(budget.dcr_hz).expect("positive rate")),
            jitter: (detector.jitter_sigma_s > 0.0).then(|| Normal::new(0.0, detector.jitter_sigma_s).expect("finite")),
            rng: rng::from_seed(seed),
            t_live: 0.0,
        })
    }

    pub fn clock(&self) -> &SlotClock {
        &self.clock
    }

    fn prior_symbol(&mut self) -> LogicalSymbol {
        if self.rng.random_bool(self.decoy_prob) {
            LogicalSymbol::Decoy
        } else if self.rng.random::<bool>() {
            LogicalSymbol::Bit1
        } else {
            LogicalSymbol::Bit0
        }
    }

    /// Next signal click at or after `t_live`: (slot index, symbol).
    fn next_signal(&mut self) -> Option<(u64, LogicalSymbol)> {
        let geometric = self.geometric?;
        let f = self.decoy_prob;
        let p = self.p;
        let pair_period = self.clock.pair_period_s();
        let rel = (self.t_live - self.clock.offset_s) / pair_period;
        let mut first_full = rel.ceil().max(0.0) as u64;
        let current = rel.floor().max(0.0) as u64;
        // live before the late slot of the current pair but after its early slot
        if current < first_full && self.clock.slot_time(2 * current + 1) >= self.t_live {
            let late_occupied = (1.0 + f) / 2.0;
            if self.rng.random_bool((late_occupied * p).min(1.0)) {
                let symbol = if self.rng.random_bool(f / late_occupied) {
                    LogicalSymbol::Decoy
                } else {
                    LogicalSymbol::Bit1
                };
                return Some((2 * current + 1, symbol));
            }
            first_full = current + 1;
        }
        let pair = first_full.saturating_add(geometric.sample(&mut self.rng));
        let early_weight = p * (f + (1.0 - f) / 2.0);
        if self.rng.random_bool((early_weight / self.pair_click).min(1.0)) {
            let symbol = if self.rng.random_bool(f / (f + (1.0 - f) / 2.0)) {
                LogicalSymbol::Decoy
            } else {
                LogicalSymbol::Bit0
            };
            Some((2 * pair, symbol))
        } else {
            let decoy_late = f * (1.0 - p);
            let symbol = if self.rng.random_bool(decoy_late / (decoy_late + (1.0 - f) / 2.0)) {
                LogicalSymbol::Decoy
            } else {
                LogicalSymbol::Bit1
            };
            Some((2 * pair + 1, symbol))
        }
    }

    /// Runs until `end_s`, handing each registered click to `sink`.
    pub fn run_until<F: FnMut(&LazyClick)>(&mut self, end_s: f64, mut sink: F) -> ClickTally {
        let mut tally = ClickTally {
            duration_s: end_s - self.t_live,
            ..Default::default()
        };
        loop {
            let signal = self.next_signal().map(|(n, s)| (self.clock.slot_time(n), s));
            let dark_at = self.dark.map(|d| self.t_live + d.sample(&mut self.rng));
            let (t, symbol, dark) = match (signal, dark_at) {
                (Some((ts, _)), Some(td)) if td < ts => (td, self.prior_symbol(), true),
                (Some((ts, s)), _) => (ts, s, false),
                (None, Some(td)) => (td, self.prior_symbol(), true),
                (None, None) => break,
            };
            if t >= end_s {
                break;
            }
            let observed = t + self.jitter.map_or(0.0, |j| j.sample(&mut self.rng));
            let record = classify(&self.clock, observed, self.window_s).unwrap_or(DetectionRecord {
                time_s: observed,
                pair_index: self.clock.pair_of(observed),
                slot: Slot::OutOfWindow,
            });
            tally.clicks += 1;
            tally.dark += u64::from(dark);
            tally.in_window += u64::from(record.slot != Slot::OutOfWindow);
            sink(&LazyClick { record, symbol, dark });
            self.t_live = t + self.dead_time_s;
        }
        self.t_live = self.t_live.max(end_s);
        tally
    }
}

/// Writes one `time_s pair_index slot` line per event.
pub fn write_event_dump<W: Write>(mut w: W, events: &[DetectionRecord]) -> io::Result<()> {
    for e in events {
        writeln!(w, "{:e} {} {}", e.time_s, e.pair_index, e.slot)?;
    }
    Ok(())
}

pub fn read_event_dump<R: BufRead>(r: R) -> Result<Vec<DetectionRecord>, DetectionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DetectionError::Dump { line: i + 1, reason };
        let mut fields = line.split_whitespace();
        let (Some(t), Some(p), Some(s), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected three fields".into()));
        };
        out.push(DetectionRecord {
            time_s: t.parse().map_err(|e| bad(format!("{e}")))?,
            pair_index: p.parse().map_err(|e| bad(format!("{e}")))?,
            slot: s.parse().map_err(bad)?,
        });
    }
    Ok(out)
}
