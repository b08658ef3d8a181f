//! Longitudinal control laws.
//!
//! Humans follow a three-regime law built on the Wiedemann-74 gap structure;
//! automated vehicles a constant-time-gap gap/speed controller. A kinematic
//! approach guard envelopes both at every range: whenever matching the
//! object's speed would take more than a threshold deceleration, the guard's
//! braking command competes with the regime law and the harsher one wins.
//! The regime laws alone react to gap and speed errors linearly, which is
//! too late both far out (red light or queue tail ahead at road speed) and
//! in close (leader braking hard while the gap error is still small).

use super::{AccelCurve, AvParams, ObjectKind, Perception, W74Params};

/// Guard braking ramps in once the kinematically required deceleration
/// exceeds ENGAGE, reaching full b_max at ENGAGE + b_max/GAIN = 3.0 m/s^2.
/// The steady approach to a standing object settles near
/// engage*gain/(gain-1) = 2.8 m/s^2.
const APPROACH_ENGAGE: f64 = 2.0;
const APPROACH_GAIN: f64 = 3.5;
/// Floor for gap denominators; below this the answer is "brake as hard as
/// allowed" regardless.
const MIN_GAP_DENOM: f64 = 0.25;
/// Worst-case delay before a braking command takes effect: one decision
/// interval of the engine.
const REACTION_LAG_S: f64 = 0.1;
/// Extra spacing the hard-stop criterion keeps beyond the bare kinematic
/// minimum, absorbing one step of discretization error.
const HARD_STOP_MARGIN_M: f64 = 0.5;

/// Wiedemann-74 standstill-plus-speed-term safety distance.
pub fn w74_safety_distance(v: f64, p: &W74Params) -> f64 {
    p.ax + (p.bx_add + p.bx_mult * p.z) * v.max(0.0).sqrt()
}

/// Steady-state gap the automated controller regulates to.
pub fn av_desired_gap(v: f64, p: &AvParams) -> f64 {
    p.s0 + p.t_gap * v
}

/// Constant deceleration needed to match the object's speed before the gap
/// shrinks to `buffer`. Zero when not closing.
pub(super) fn required_decel(v: f64, v_obj: f64, gap: f64, buffer: f64) -> f64 {
    if v <= v_obj {
        return 0.0;
    }
    (v * v - v_obj * v_obj) / (2.0 * (gap - buffer).max(MIN_GAP_DENOM))
}

/// Gap below which only immediate full braking still stops this driver
/// behind the object, even if the object brakes at `b_max` to rest right
/// now and the driver's own command lands one interval late.
pub(crate) fn hard_stop_gap(v: f64, v_obj: f64, b_max: f64) -> f64 {
    let stopping_diff = (v * v - v_obj * v_obj).max(0.0) / (2.0 * b_max);
    stopping_diff + v * REACTION_LAG_S + HARD_STOP_MARGIN_M
}

/// Largest speed whose hard-stop criterion still fits inside `gap`: the
/// inverse of `hard_stop_gap` in its first argument. Zero when the gap
/// cannot even hold a standing vehicle's margin.
pub(crate) fn max_speed_for_gap(gap: f64, v_obj: f64, b_max: f64) -> f64 {
    let margin = gap - HARD_STOP_MARGIN_M;
    if margin <= 0.0 {
        return 0.0;
    }
    if REACTION_LAG_S * v_obj >= margin {
        // Solution sits at or below the object's speed, where the
        // stopping-distance difference contributes nothing.
        return margin / REACTION_LAG_S;
    }
    let a = 1.0 / (2.0 * b_max);
    let c = margin + v_obj * v_obj / (2.0 * b_max);
    ((REACTION_LAG_S * REACTION_LAG_S + 4.0 * a * c).sqrt() - REACTION_LAG_S) / (2.0 * a)
}

/// Kinematic guard: smooth braking command, or None while no reaction is
/// needed yet.
///
/// Two layers: a comfort ramp that starts braking once matching the object's
/// speed needs more than an engage threshold, and a hard backstop that slams
/// full braking when the gap undercuts the worst-case stopping criterion.
/// The ramp does nearly all the work; the backstop only fires when an
/// unusually tight follower is whipsawed by a leader that keeps braking all
/// the way to rest.
fn approach_brake(v: f64, v_obj: f64, gap: f64, buffer: f64, b_max: f64) -> Option<f64> {
    let req = required_decel(v, v_obj, gap, buffer);
    let ramp = if req > APPROACH_ENGAGE {
        Some(-((req - APPROACH_ENGAGE) * APPROACH_GAIN).min(b_max))
    } else {
        None
    };
    let backstop = if gap < hard_stop_gap(v, v_obj, b_max) {
        Some(-b_max)
    } else {
        None
    };
    opt_min(ramp, backstop)
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn constrains(kind: ObjectKind) -> bool {
    !matches!(kind, ObjectKind::RouteEnd)
}

/// Free-driving command: accelerate along the curve toward the desired
/// speed, hold it exactly, ease off comfortably when above it.
fn free_flow(v: f64, desired: f64, ceiling: f64, b_comf: f64, dt: f64) -> f64 {
    ((desired - v) / dt).clamp(-b_comf, ceiling)
}

fn clamp_non_reversing(a: f64, v: f64, dt: f64) -> f64 {
    a.max(-v / dt)
}

/// Human reaction to one object, or None while it needs no reaction.
///
/// Emergency full braking below the standstill distance; the linear
/// following law inside SDX; the kinematic guard competes at any range, so
/// a hard-braking leader triggers more than the gentle linear response even
/// while the gap error is still small.
pub(super) fn human_object_cmd(
    v: f64,
    gap: f64,
    obj_speed: f64,
    p: &W74Params,
    ceiling: f64,
) -> Option<f64> {
    if gap < p.ax {
        return Some(-p.b_max);
    }
    let guard = approach_brake(v, obj_speed, gap, p.ax, p.b_max);
    let d = w74_safety_distance(v, p);
    if gap <= p.sdx_factor * d {
        let raw = p.gain_speed * (obj_speed - v) + p.gain_gap * (gap - d);
        // Comfort limits the brake unless physics needs more; never beyond
        // b_max.
        let floor = -required_decel(v, obj_speed, gap, p.ax)
            .max(p.b_comf)
            .min(p.b_max);
        return opt_min(Some(raw.clamp(floor, ceiling)), guard);
    }
    guard
}

/// Automated reaction to one object: proportional control on gap error and
/// speed difference within range, enveloped by the same kinematic guard.
pub(super) fn av_object_cmd(
    v: f64,
    gap: f64,
    obj_speed: f64,
    p: &AvParams,
    ceiling: f64,
) -> Option<f64> {
    let guard = approach_brake(v, obj_speed, gap, p.s0, p.b_max);
    let dstar = av_desired_gap(v, p);
    if gap <= 2.0 * dstar {
        let pd = p.k_speed * (obj_speed - v) + p.k_gap * (gap - dstar);
        return opt_min(Some(pd.clamp(-p.b_max, ceiling)), guard);
    }
    guard
}

/// Human longitudinal command against everything currently perceived. The
/// most constraining object wins and the free-driving command caps the
/// result, so nobody chases a leader past their own desired speed.
pub fn human_accel(
    v: f64,
    desired: f64,
    perception: &Perception,
    p: &W74Params,
    curve: &AccelCurve,
    dt: f64,
) -> f64 {
    let ceiling = curve.sample(v, p.accel_percentile);
    let mut a = free_flow(v, desired, ceiling, p.b_comf, dt);
    for obj in &perception.objects {
        if !constrains(obj.kind) {
            continue;
        }
        if let Some(cmd) = human_object_cmd(v, obj.gap, obj.speed, p, ceiling) {
            a = a.min(cmd);
        }
    }
    clamp_non_reversing(a, v, dt)
}

/// Automated longitudinal command, shaped like the human one.
pub fn av_accel(
    v: f64,
    desired: f64,
    perception: &Perception,
    p: &AvParams,
    curve: &AccelCurve,
    dt: f64,
) -> f64 {
    let ceiling = curve.median(v);
    let mut a = free_flow(v, desired, ceiling, p.b_comf, dt);
    for obj in &perception.objects {
        if !constrains(obj.kind) {
            continue;
        }
        if let Some(cmd) = av_object_cmd(v, obj.gap, obj.speed, p, ceiling) {
            a = a.min(cmd);
        }
    }
    clamp_non_reversing(a, v, dt)
}
