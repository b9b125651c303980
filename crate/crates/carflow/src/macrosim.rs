//! Macroscopic density/speed model derived from the car-following laws.
//!
//! The road is a chain of links. Density follows the conservation law with
//! upwind fluxes f_i = rho_i * V_i; speed follows the advection equation with
//! a per-model acceleration closure. The closure is anticipatory: both the
//! leader speed and the interaction gap are read from the downstream link,
//! since the representative vehicle's leader lives there. A masked link
//! passes zero outflow (red light at its downstream boundary) and its
//! closure faces a standing jam wall, mirroring the virtual blocking vehicle
//! of the microscopic engine.

use thiserror::Error;

use crate::params::{defaults, CarFollowModel, DriverParams};

#[derive(Debug, Error)]
pub enum MacroError {
    #[error("advection stability violated: dt*v_max = {lhs} m exceeds min link length {rhs} m")]
    Cfl { lhs: f64, rhs: f64 },
    #[error("invalid macro grid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct MacroState {
    /// Link lengths (m).
    pub link_length: Vec<f64>,
    /// Vehicle densities (veh/m).
    pub density: Vec<f64>,
    /// Average speeds (m/s).
    pub speed: Vec<f64>,
    /// Jam density (veh/m).
    pub rho_jam: f64,
    /// Inflow into link 1 (veh/s).
    pub inflow: f64,
    /// Links whose outflow is forced to zero (red light at their downstream
    /// boundary).
    pub masked: Vec<bool>,
    dt: f64,
    steps: usize,
    cumulative_inflow: f64,
    cumulative_outflow: f64,
}

impl MacroState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        link_length: Vec<f64>,
        density: Vec<f64>,
        speed: Vec<f64>,
        rho_jam: f64,
        inflow: f64,
        masked: Vec<bool>,
        dt: f64,
        v_max: f64,
    ) -> Result<Self, MacroError> {
        let n = link_length.len();
        if n == 0 {
            return Err(MacroError::Invalid("no links".into()));
        }
        if density.len() != n || speed.len() != n || masked.len() != n {
            return Err(MacroError::Invalid(format!(
                "field lengths disagree: {} links, {} densities, {} speeds, {} masks",
                n,
                density.len(),
                speed.len(),
                masked.len()
            )));
        }
        let min_dx = link_length.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_dx.is_nan() || min_dx <= 0.0 {
            return Err(MacroError::Invalid("link lengths must be positive".into()));
        }
        if let Some(rho) = density
            .iter()
            .find(|&&rho| rho.is_nan() || !(0.0..=rho_jam).contains(&rho))
        {
            return Err(MacroError::Invalid(format!(
                "density {rho} outside [0, jam density {rho_jam}]"
            )));
        }
        if let Some(v) = speed
            .iter()
            .find(|&&v| v.is_nan() || !(0.0..=v_max).contains(&v))
        {
            return Err(MacroError::Invalid(format!(
                "speed {v} outside [0, {v_max}]"
            )));
        }
        if dt * v_max > min_dx {
            return Err(MacroError::Cfl {
                lhs: dt * v_max,
                rhs: min_dx,
            });
        }
        Ok(MacroState {
            link_length,
            density,
            speed,
            rho_jam,
            inflow,
            masked,
            dt,
            steps: 0,
            cumulative_inflow: 0.0,
            cumulative_outflow: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.link_length.len()
    }

    pub fn is_empty(&self) -> bool {
        self.link_length.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Total vehicles on the road.
    pub fn total_vehicles(&self) -> f64 {
        self.density
            .iter()
            .zip(&self.link_length)
            .map(|(rho, dx)| rho * dx)
            .sum()
    }

    /// |mass(t) - mass(0) - (inflow - outflow)|, the conservation defect.
    pub fn conservation_error(&self, initial_mass: f64) -> f64 {
        (self.total_vehicles() - initial_mass - (self.cumulative_inflow - self.cumulative_outflow))
            .abs()
    }

    /// Outflow of link `i` from the current snapshot.
    pub fn outflow(&self, i: usize) -> f64 {
        if self.masked[i] {
            0.0
        } else {
            self.density[i] * self.speed[i]
        }
    }

    /// Gap implied by a density value, saturated for (near-)empty road.
    fn gap_of_density(rho: f64, length: f64) -> f64 {
        if rho <= 0.0 {
            defaults::FREE_ROAD_GAP
        } else {
            (1.0 / rho - length).min(defaults::FREE_ROAD_GAP)
        }
    }

    /// Interaction gap seen by link `i`'s closure. Like the anticipation
    /// speed, it looks downstream: the representative vehicle's leader lives
    /// in the next link. A masked link faces a standing jam (the red light's
    /// blocking wall), and the road past the last link is free.
    fn anticipated_gap(&self, i: usize, length: f64) -> f64 {
        if self.masked[i] {
            1.0 / self.rho_jam - length
        } else if i + 1 < self.len() {
            Self::gap_of_density(self.density[i + 1], length)
        } else {
            defaults::FREE_ROAD_GAP
        }
    }

    /// Anticipation speed seen by link `i`'s closure: the downstream link's
    /// speed, v_max past the last link, and a standstill at a red boundary.
    fn anticipated_speed(&self, i: usize, v_max: f64) -> f64 {
        if self.masked[i] {
            0.0
        } else if i + 1 < self.len() {
            self.speed[i + 1]
        } else {
            v_max
        }
    }
}

fn closure_accel(state: &MacroState, i: usize, model: CarFollowModel, p: &DriverParams) -> f64 {
    const A_FREE_FLOOR: f64 = 1e-12;
    let v = state.speed[i];
    let v_next = state.anticipated_speed(i, p.v_max);
    let gap = state.anticipated_gap(i, p.length);
    let g_min = 1.0 / state.rho_jam - p.length;
    let dt = state.dt;
    match model {
        CarFollowModel::Gipps => {
            let bt = p.b * p.tau;
            let radicand = (bt * bt + v_next * v_next + 2.0 * p.b * (gap - g_min)).max(0.0);
            let safe = (-v - bt + radicand.sqrt()) / dt;
            p.a_max.min((p.v_max - v) / dt).min(safe)
        }
        CarFollowModel::Iidm => {
            let dynamic = v * p.tau + v * (v - v_next) / (2.0 * (p.a_max * p.b).sqrt());
            let desired = g_min + dynamic.max(0.0);
            let ratio = desired / gap;
            if ratio >= 1.0 {
                p.a_max * (1.0 - ratio)
            } else {
                let a_free = p.a_max * (1.0 - (v / p.v_max).powf(p.delta2));
                if a_free < A_FREE_FLOOR {
                    a_free
                } else {
                    a_free * (1.0 - ratio.powf(p.delta1 * p.a_max / a_free))
                }
            }
        }
        CarFollowModel::Helly => {
            let feedback = p.alpha1 * (v_next - v) + p.alpha2 * (gap - g_min - v * p.tau);
            p.a_max.min((p.v_max - v) / dt).min(feedback)
        }
    }
}

/// Advances the state one step: conservation update for density, advection
/// plus model closure for speed, everything evaluated on the time-t snapshot.
///
/// Fluxes carry a supply cap: a link never accepts more than its remaining
/// storage (rho_jam - rho) * dx / dt, so density cannot exceed jam density
/// and queues pack at exactly rho_jam behind a blockage. The cap only binds
/// where traffic piles into a near-jammed link; free flow is untouched.
pub fn macro_step(state: &mut MacroState, model: CarFollowModel, p: &DriverParams) {
    let n = state.len();
    let dt = state.dt;
    let supply = |i: usize| (state.rho_jam - state.density[i]).max(0.0) * state.link_length[i] / dt;
    let flow: Vec<f64> = (0..n)
        .map(|i| {
            let demand = state.outflow(i);
            if i + 1 < n {
                demand.min(supply(i + 1))
            } else {
                demand
            }
        })
        .collect();
    let inflow = state.inflow.min(supply(0));
    let accel: Vec<f64> = (0..n).map(|i| closure_accel(state, i, model, p)).collect();

    for i in 0..n {
        let upstream = if i == 0 { inflow } else { flow[i - 1] };
        state.density[i] += dt / state.link_length[i] * (upstream - flow[i]);
    }
    let old_speed = state.speed.clone();
    for i in 0..n {
        let upwind = if i == 0 {
            old_speed[0]
        } else {
            old_speed[i - 1]
        };
        let advection = old_speed[i] * (old_speed[i] - upwind) / state.link_length[i];
        state.speed[i] = (old_speed[i] + (accel[i] - advection) * dt).clamp(0.0, p.v_max);
    }
    state.cumulative_inflow += inflow * dt;
    state.cumulative_outflow += flow[n - 1] * dt;
    state.steps += 1;
}

/// Number of links in the red-light corridor.
pub const RED_LIGHT_LINKS: usize = 240;
/// Links initially packed at jam density.
pub const RED_LIGHT_QUEUE_LINKS: usize = 49;
/// 1-indexed link whose outflow the red light blocks.
pub const RED_LIGHT_MASKED_LINK: usize = 110;

/// Initial state of the red-light corridor under explicit parameters: 240
/// vehicle-length links, the first 49 at jam density, everything at rest, no
/// inflow, and a permanent red at the downstream boundary of link 110. The
/// release signal at link 50 opens at t = 0, so it never masks anything
/// during the run.
pub fn init_red_light_scenario_with(p: &DriverParams, dt: f64) -> Result<MacroState, MacroError> {
    let rho_jam = p.jam_density();
    let n = RED_LIGHT_LINKS;
    let mut density = vec![0.0; n];
    for d in density.iter_mut().take(RED_LIGHT_QUEUE_LINKS) {
        *d = rho_jam;
    }
    let mut masked = vec![false; n];
    masked[RED_LIGHT_MASKED_LINK - 1] = true;
    MacroState::new(
        vec![p.length; n],
        density,
        vec![0.0; n],
        rho_jam,
        0.0,
        masked,
        dt,
        p.v_max,
    )
}

/// Red-light corridor with default parameters.
pub fn init_red_light_scenario() -> MacroState {
    init_red_light_scenario_with(&DriverParams::default(), defaults::DT)
        .expect("red-light grid satisfies the stability bound")
}

/// A macro run bundle: grid state plus the law driving it.
#[derive(Debug, Clone)]
pub struct MacroScenario {
    pub state: MacroState,
    pub model: CarFollowModel,
    pub params: DriverParams,
}

/// The red-light corridor driven by `model` at the given maximal
/// acceleration.
pub fn red_light_scenario(model: CarFollowModel, a_max: f64) -> MacroScenario {
    let mut params = DriverParams::default();
    params.a_max = a_max;
    MacroScenario {
        state: init_red_light_scenario(),
        model,
        params,
    }
}

/// Time-by-space sample grids of flow and speed.
#[derive(Debug, Clone)]
pub struct ContourGrid {
    pub times: Vec<f64>,
    /// Link center positions (m).
    pub positions: Vec<f64>,
    pub flow: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
}

/// Runs a macro scenario for `horizon` seconds, sampling every `stride`
/// steps. A zero-step run yields a single row holding the initial state.
pub fn run_macro(scenario: &mut MacroScenario, horizon: f64, stride: usize) -> ContourGrid {
    let stride = stride.max(1);
    let state = &mut scenario.state;
    let n_steps = (horizon / state.dt()).round() as usize;
    let mut positions = Vec::with_capacity(state.len());
    let mut edge = 0.0;
    for &dx in &state.link_length {
        positions.push(edge + 0.5 * dx);
        edge += dx;
    }
    let mut grid = ContourGrid {
        times: Vec::new(),
        positions,
        flow: Vec::new(),
        speed: Vec::new(),
    };
    let sample = |state: &MacroState, grid: &mut ContourGrid| {
        grid.times.push(state.time());
        grid.flow
            .push((0..state.len()).map(|i| state.outflow(i)).collect());
        grid.speed.push(state.speed.clone());
    };
    if n_steps == 0 {
        sample(state, &mut grid);
        return grid;
    }
    for step in 1..=n_steps {
        macro_step(state, scenario.model, &scenario.params);
        if step % stride == 0 {
            sample(state, &mut grid);
        }
    }
    grid
}
