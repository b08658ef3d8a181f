//! Lane selection: routine overtaking moves and route-forced merges.
//!
//! A change happens when it is motivated (meaningfully faster lane, or the
//! route demands it) and safe (enough space ahead, and the new follower is
//! not forced to brake beyond what it tolerates). Forced merges scale both
//! demands down as the forcing point nears, so a vehicle boxed out of a
//! closing lane accepts progressively tighter insertions instead of
//! stopping dead.

use super::following::{av_object_cmd, hard_stop_gap, human_object_cmd, required_decel};
use super::DriverParams;

/// Speed advantage (m/s) a lane must offer before a routine change is worth
/// it.
const ROUTINE_GAIN: f64 = 0.5;
/// A leader further than this many equilibrium gaps away does not limit the
/// achievable speed of a lane.
const ACHIEVABLE_RANGE_FACTOR: f64 = 2.0;
/// A distant leader still limits a lane when avoiding it already takes more
/// than this much braking (a red-light queue seen from far away).
const ACHIEVABLE_DECEL_LIMIT: f64 = 1.0;
/// Forced merges reach full desperation (half gaps) at the forcing point and
/// full caution this far from it.
const URGENCY_RANGE_M: f64 = 200.0;

/// A vehicle seen sideways: gap to it if the subject moved over now.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Bumper-to-bumper distance, negative when the bodies would overlap.
    pub gap: f64,
    pub speed: f64,
}

/// The would-be follower in the target lane, with enough of its driver to
/// ask how hard the insertion makes it brake.
#[derive(Clone, Debug, PartialEq)]
pub struct Follower {
    /// Its front bumper to the subject's rear bumper after the move.
    pub gap: f64,
    pub speed: f64,
    pub params: DriverParams,
    /// True when this follower runs cooperative automation.
    pub coop_av: bool,
}

/// One adjacent lane. The engine only populates sides the route allows;
/// absent leader/follower means none within perception range.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideContext {
    pub leader: Option<Neighbor>,
    pub follower: Option<Follower>,
}

/// Route pressure on the current lane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mandatory {
    None,
    /// Must move left before `distance_m` runs out.
    Left { distance_m: f64 },
    /// Must move right before `distance_m` runs out.
    Right { distance_m: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaneChangeInput<'a> {
    pub v: f64,
    pub desired_speed: f64,
    pub params: &'a DriverParams,
    /// Leader in the current lane, if any within perception range.
    pub own_leader: Option<Neighbor>,
    pub left: Option<SideContext>,
    pub right: Option<SideContext>,
    pub mandatory: Mandatory,
    /// False while the routine-change cooldown is running; forced merges
    /// ignore it.
    pub cooldown_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcDecision {
    Stay,
    /// `coop_follower`: the new follower should hold back for a step to
    /// smooth the insertion (both parties run cooperative automation).
    MoveLeft { coop_follower: bool },
    MoveRight { coop_follower: bool },
}

/// Speed a lane supports: the driver's desired speed, throttled to the
/// leader's if one sits close enough to matter or already forces real
/// braking from here.
fn achievable_speed(
    v: f64,
    desired: f64,
    params: &DriverParams,
    leader: Option<&Neighbor>,
) -> f64 {
    match leader {
        Some(l)
            if l.gap <= ACHIEVABLE_RANGE_FACTOR * params.equilibrium_gap(v)
                || required_decel(v, l.speed, l.gap, params.standstill_gap())
                    > ACHIEVABLE_DECEL_LIMIT =>
        {
            desired.min(l.speed)
        }
        _ => desired,
    }
}

/// How hard a driver would brake against an object `gap` ahead moving at
/// `obj_speed`, by that driver's own law. Positive ceiling does not matter
/// here.
fn reaction(params: &DriverParams, v: f64, gap: f64, obj_speed: f64) -> f64 {
    let cmd = match params {
        DriverParams::Human(p) => human_object_cmd(v, gap, obj_speed, p, f64::INFINITY),
        DriverParams::Av(p) => av_object_cmd(v, gap, obj_speed, p, f64::INFINITY),
    };
    cmd.unwrap_or(0.0)
}

/// Space demands scale with urgency: `lambda` = 1 for routine moves,
/// shrinking to 0.5 at a forcing point. Two demands never relax: neither
/// the mover nor the new follower may end up closer than their worst-case
/// stopping gap, because no braking recovers from inside it.
fn side_is_safe(input: &LaneChangeInput, side: &SideContext, lambda: f64, routine: bool) -> bool {
    if let Some(leader) = &side.leader {
        if leader.gap < lambda * input.params.equilibrium_gap(input.v) {
            return false;
        }
        if routine {
            // A routine move must not cost the mover more braking than it
            // would tolerate from anyone else.
            if reaction(input.params, input.v, leader.gap, leader.speed)
                < -input.params.b_accept()
            {
                return false;
            }
        } else if leader.gap <= hard_stop_gap(input.v, leader.speed, input.params.b_max()) {
            return false;
        }
    }
    if let Some(f) = &side.follower {
        if f.gap < lambda * f.params.standstill_gap() {
            return false;
        }
        if f.gap <= hard_stop_gap(f.speed, input.v, f.params.b_max()) {
            return false;
        }
        if reaction(&f.params, f.speed, f.gap / lambda, input.v) < -f.params.b_accept() {
            return false;
        }
    }
    true
}

fn mover_is_coop(params: &DriverParams) -> bool {
    matches!(params, DriverParams::Av(p) if p.coop_lane_change)
}

fn coop_request(input: &LaneChangeInput, side: &SideContext) -> bool {
    mover_is_coop(input.params)
        && side.follower.as_ref().map_or(false, |f| f.coop_av)
}

fn urgency_lambda(distance_m: f64) -> f64 {
    0.5 + 0.5 * (distance_m.max(0.0) / URGENCY_RANGE_M).min(1.0)
}

/// Decide whether to change lanes this step.
///
/// A forced merge considers only its required direction and ignores the
/// cooldown. Routine moves need the cooldown clear, a real speed gain, and
/// full-size gaps; when both sides qualify the faster one wins, with ties
/// going right.
pub fn lane_change_decision(input: &LaneChangeInput) -> LcDecision {
    match input.mandatory {
        Mandatory::Left { distance_m } => {
            let lambda = urgency_lambda(distance_m);
            return match &input.left {
                Some(side) if side_is_safe(input, side, lambda, false) => LcDecision::MoveLeft {
                    coop_follower: coop_request(input, side),
                },
                _ => LcDecision::Stay,
            };
        }
        Mandatory::Right { distance_m } => {
            let lambda = urgency_lambda(distance_m);
            return match &input.right {
                Some(side) if side_is_safe(input, side, lambda, false) => LcDecision::MoveRight {
                    coop_follower: coop_request(input, side),
                },
                _ => LcDecision::Stay,
            };
        }
        Mandatory::None => {}
    }

    if !input.cooldown_ok {
        return LcDecision::Stay;
    }
    let own = achievable_speed(
        input.v,
        input.desired_speed,
        input.params,
        input.own_leader.as_ref(),
    );

    let mut best: Option<(bool, f64, &SideContext)> = None; // (is_left, speed, side)
    for (is_left, side) in [(false, &input.right), (true, &input.left)] {
        let Some(side) = side else { continue };
        let speed =
            achievable_speed(input.v, input.desired_speed, input.params, side.leader.as_ref());
        if speed < own + ROUTINE_GAIN || !side_is_safe(input, side, 1.0, true) {
            continue;
        }
        // Right was evaluated first, so a left move needs a strict win.
        if best.map_or(true, |(_, s, _)| speed > s) {
            best = Some((is_left, speed, side));
        }
    }
    match best {
        Some((true, _, side)) => LcDecision::MoveLeft {
            coop_follower: coop_request(input, side),
        },
        Some((false, _, side)) => LcDecision::MoveRight {
            coop_follower: coop_request(input, side),
        },
        None => LcDecision::Stay,
    }
}
