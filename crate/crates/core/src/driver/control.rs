//! Stop-line constraints from signals and stop signs.
//!
//! Control devices are presented to the longitudinal laws as stationary
//! perceived objects at the stop line; this module decides when such an
//! object exists. Signal timing itself lives with the network.

use super::{ObjectKind, PerceivedObject};

/// Current indication of a signal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Green,
    Amber,
    Red,
}

/// Speed below which a vehicle counts as stopped for the dwell timer.
const DWELL_SPEED: f64 = 0.1;
/// The dwell only accrues this close to the stop line.
const DWELL_WINDOW_M: f64 = 2.0;
/// A stop sign releases after this much accumulated standstill.
const REQUIRED_DWELL_S: f64 = 1.0;
/// The virtual wall sits this far beyond the line. Drivers keep their
/// standstill distance from the wall, which puts their bumper short of the
/// line but inside the dwell window; with the wall exactly on the line the
/// default human standstill distance equals the window and the approach only
/// reaches it asymptotically.
pub const STOP_TARGET_SETBACK_M: f64 = 1.0;

/// Stop-line object for a signal, if the indication requires a reaction.
///
/// Red always holds the line. Amber holds it only for drivers who can still
/// stop within their comfortable deceleration; everyone else is committed
/// and proceeds. A vehicle already past the line (negative gap) is never
/// constrained.
pub fn signal_constraint(
    state: SignalState,
    gap: f64,
    v: f64,
    b_comf: f64,
) -> Option<PerceivedObject> {
    if gap < 0.0 {
        return None;
    }
    let hold = match state {
        SignalState::Green => false,
        SignalState::Red => true,
        SignalState::Amber => v * v / (2.0 * gap.max(1e-6)) <= b_comf,
    };
    hold.then_some(PerceivedObject { kind: ObjectKind::SignalStopLine, gap, speed: 0.0 })
}

/// Per-vehicle progress through a stop-sign maneuver.
///
/// The sign is modeled as a wall until the vehicle has been essentially
/// stationary just short of the line for a full second; a rolling stop never
/// satisfies it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopSignProgress {
    dwell_s: f64,
    satisfied: bool,
}

impl StopSignProgress {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn satisfied(&self) -> bool {
        self.satisfied
    }
}

/// Advance the dwell timer and return the stop-line object while the sign
/// still binds.
pub fn stop_sign_constraint(
    progress: &mut StopSignProgress,
    gap: f64,
    v: f64,
    dt: f64,
) -> Option<PerceivedObject> {
    if progress.satisfied || gap < 0.0 {
        return None;
    }
    if gap <= DWELL_WINDOW_M && v < DWELL_SPEED {
        progress.dwell_s += dt;
        // Tolerance so summed time steps (0.1 + ... + 0.1) release on the
        // intended step.
        if progress.dwell_s >= REQUIRED_DWELL_S - 1e-9 {
            progress.satisfied = true;
            return None;
        }
    }
    Some(PerceivedObject {
        kind: ObjectKind::StopSignLine,
        gap: gap + STOP_TARGET_SETBACK_M,
        speed: 0.0,
    })
}
