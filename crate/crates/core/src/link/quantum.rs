//! The simulated quantum channel.
//!
//! Alice writes her pulse train (slot occupancy and mean photon number) to
//! a dedicated stream standing in for the fiber; Bob reads it and runs the
//! detector model locally. Key bits therefore never travel on the classical
//! channel, and what Bob learns is limited to his own clicks.

use std::io::{Read, Write};

use crate::detection::{
    apply_dead_time, simulate_pulse_train, time_window_filter, DetectionError, DetectionRecord, DetectorParams,
    SlotClock,
};
use crate::optics::OpticalBudget;
use crate::protocol::{ProtocolError, PulseTrain};
use crate::rng;

pub fn transmit<W: Write>(train: &PulseTrain, mut fiber: W) -> Result<(), ProtocolError> {
    train.write_to(&mut fiber)?;
    fiber.flush()?;
    Ok(())
}

pub fn receive<R: Read>(fiber: R) -> Result<PulseTrain, ProtocolError> {
    PulseTrain::read_from(fiber)
}

/// Bob's classified, dead-time-limited clicks for a received train.
pub fn detect(
    train: &PulseTrain,
    budget: &OpticalBudget,
    detector: &DetectorParams,
    seed: u64,
) -> Result<Vec<DetectionRecord>, DetectionError> {
    let raw = simulate_pulse_train(train, budget, detector, rng::substream(seed, "detect", 0))?;
    let live = apply_dead_time(&raw, detector.dead_time_s)?;
    let clock = SlotClock::from_pulse_rate(budget.pulse_rate_hz);
    let (accepted, _) = time_window_filter(
        &live,
        &clock,
        detector.window_s,
        detector.jitter_sigma_s,
        rng::substream(seed, "jitter", 0),
    );
    Ok(accepted)
}
