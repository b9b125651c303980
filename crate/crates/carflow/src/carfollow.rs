//! Pure car-following acceleration laws.
//!
//! Gipps, IIDM, and Helly are the base laws; CAH and the CACC composite
//! implement the cooperative-following behavior. All functions are stateless:
//! the result depends only on the follower state, the leader view, and (for
//! Gipps and Helly) the simulation time step.

use thiserror::Error;

use crate::params::{defaults, CarFollowModel, VehicleClass, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    /// Gipps safe-speed radicand went negative: no braking rate at the
    /// assumed deceleration avoids a collision from this state.
    #[error("unavoidable collision: safe-braking radicand {radicand} < 0")]
    UnavoidableCollision { radicand: f64 },
    /// Bumper-to-bumper gap is zero or negative.
    #[error("non-positive gap {gap} m")]
    NonPositiveGap { gap: f64 },
}

/// What the follower knows about the vehicle ahead.
///
/// `front_pos` is the leader's front bumper; the follower's gap is
/// `front_pos - follower.pos - length`. `accel` is the leader's realized
/// acceleration from the previous completed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderView {
    pub front_pos: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub class: VehicleClass,
}

impl LeaderView {
    /// Effective leader for a free road: far enough ahead that every
    /// gap-dependent term saturates, moving at the road speed limit.
    pub fn free_road(follower_front: f64, v_max: f64) -> Self {
        LeaderView {
            front_pos: follower_front + defaults::FREE_ROAD_GAP + defaults::LENGTH,
            speed: v_max,
            accel: 0.0,
            length: defaults::LENGTH,
            class: VehicleClass::Ordinary,
        }
    }

    /// Virtual standstill leader (red signals, scripted obstacles).
    pub fn blocking(front_pos: f64, length: f64) -> Self {
        LeaderView {
            front_pos,
            speed: 0.0,
            accel: 0.0,
            length,
            class: VehicleClass::Ordinary,
        }
    }

    pub fn gap_to(&self, follower_front: f64) -> f64 {
        self.front_pos - follower_front - self.length
    }
}

/// Gipps acceleration: min of free acceleration, the speed-limit cap, and the
/// safe-braking term. After one Euler step the speed equals the Gipps safe
/// speed, so the whole law is expressed as an acceleration.
pub fn gipps_accel(state: &VehicleState, leader: &LeaderView, dt: f64) -> Result<f64, LawError> {
    let p = &state.params;
    let gap = leader.gap_to(state.pos);
    let bt = p.b * p.tau;
    let radicand = bt * bt + leader.speed * leader.speed + 2.0 * p.b * (gap - p.g_min);
    if radicand < 0.0 {
        return Err(LawError::UnavoidableCollision { radicand });
    }
    let safe = (-state.speed - bt + radicand.sqrt()) / dt;
    Ok(p.a_max.min((p.v_max - state.speed) / dt).min(safe))
}

/// IIDM free-flow acceleration a*(t).
pub fn iidm_free_accel(speed: f64, a_max: f64, v_max: f64, delta2: f64) -> f64 {
    a_max * (1.0 - (speed / v_max).powf(delta2))
}

/// IIDM desired gap: minimal gap plus the dynamic headway/approach term.
pub fn iidm_desired_gap(state: &VehicleState, leader: &LeaderView) -> f64 {
    let p = &state.params;
    let v = state.speed;
    let dynamic = v * p.tau + v * (v - leader.speed) / (2.0 * (p.a_max * p.b).sqrt());
    p.g_min + dynamic.max(0.0)
}

/// IIDM acceleration. Below `A_FREE_FLOOR` the free acceleration is treated
/// as zero to keep the second-branch exponent finite near v = v_max.
pub fn iidm_accel(state: &VehicleState, leader: &LeaderView) -> Result<f64, LawError> {
    const A_FREE_FLOOR: f64 = 1e-12;
    let p = &state.params;
    let gap = leader.gap_to(state.pos);
    if gap <= 0.0 {
        return Err(LawError::NonPositiveGap { gap });
    }
    let ratio = iidm_desired_gap(state, leader) / gap;
    if ratio > 1.0 {
        Ok(p.a_max * (1.0 - ratio.powf(p.delta1)))
    } else {
        let a_free = iidm_free_accel(state.speed, p.a_max, p.v_max, p.delta2);
        if a_free < A_FREE_FLOOR {
            return Ok(a_free);
        }
        Ok(a_free * (1.0 - ratio.powf(p.delta1 * p.a_max / a_free)))
    }
}

/// Helly acceleration: linear feedback on speed difference and gap error,
/// capped by the maximal acceleration and the speed limit.
pub fn helly_accel(state: &VehicleState, leader: &LeaderView, dt: f64) -> f64 {
    let p = &state.params;
    let gap = leader.gap_to(state.pos);
    let feedback =
        p.alpha1 * (leader.speed - state.speed) + p.alpha2 * (gap - p.g_min - state.speed * p.tau);
    p.a_max.min((p.v_max - state.speed) / dt).min(feedback)
}

/// Constant-acceleration heuristic: the maximal safe acceleration assuming
/// the leader holds its current acceleration (capped at a_max).
///
/// When the first branch's denominator vanishes (stopped, non-accelerating
/// leader) the two branches agree in the limit; the second branch's formula
/// is returned there.
pub fn cah_accel(state: &VehicleState, leader: &LeaderView) -> Result<f64, LawError> {
    const SINGULAR_EPS: f64 = 1e-9;
    let p = &state.params;
    let gap = leader.gap_to(state.pos);
    if gap <= 0.0 {
        return Err(LawError::NonPositiveGap { gap });
    }
    let v = state.speed;
    let v_l = leader.speed;
    let a_bar = leader.accel.min(p.a_max);
    let denominator = v_l * v_l - 2.0 * gap * a_bar;
    let second_branch = || {
        let step = if v - v_l >= 0.0 { 1.0 } else { 0.0 };
        a_bar - (v - v_l) * (v - v_l) * step / (2.0 * gap)
    };
    if v_l * (v - v_l) <= -2.0 * gap * a_bar {
        if denominator.abs() < SINGULAR_EPS {
            return Ok(second_branch());
        }
        Ok(v * v * a_bar / denominator)
    } else {
        Ok(second_branch())
    }
}

/// CACC acceleration: IIDM when the constant-acceleration heuristic agrees it
/// is safe enough, otherwise CAH softened toward IIDM through a tanh blend.
/// The caller is responsible for engaging this law only behind a CACC leader.
pub fn cacc_accel(state: &VehicleState, leader: &LeaderView) -> Result<f64, LawError> {
    let a_iidm = iidm_accel(state, leader)?;
    let a_cah = cah_accel(state, leader)?;
    if a_cah <= a_iidm {
        Ok(a_iidm)
    } else {
        let b = state.params.b;
        Ok(a_cah + b * ((a_iidm - a_cah) / b).tanh())
    }
}

impl CarFollowModel {
    /// Dispatches to the base law.
    pub fn accel(
        self,
        state: &VehicleState,
        leader: &LeaderView,
        dt: f64,
    ) -> Result<f64, LawError> {
        match self {
            CarFollowModel::Gipps => gipps_accel(state, leader, dt),
            CarFollowModel::Iidm => iidm_accel(state, leader),
            CarFollowModel::Helly => Ok(helly_accel(state, leader, dt)),
        }
    }
}
