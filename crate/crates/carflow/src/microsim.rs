//! Single-lane corridor time-stepping engine.
//!
//! Vehicles are stored front to back and advanced synchronously: every
//! acceleration is computed from the previous step's snapshot, then all
//! states move. Red signals act as virtual standstill leaders placed so that
//! the equilibrium stop puts the follower's front bumper exactly at the stop
//! bar. Detectors record front-bumper crossings with the crossing time
//! interpolated inside the step.

use thiserror::Error;

use crate::carfollow::{cacc_accel, LawError, LeaderView};
use crate::experiments::compose_queue;
use crate::params::{CarFollowModel, DriverParams, VehicleClass, VehicleState};
use crate::platoon::{PlatoonEvent, PlatoonRegistry};
use crate::scenario::{rng_from_seed, ConfigError, ScenarioConfig, SignalColor, SignalSpec};

/// Deceleration (m/s²) a platoon follower adopts the moment its leader starts
/// braking for a broadcast obstacle.
const ALERT_DECEL: f64 = -0.02;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("collision at t={time}s: vehicle {follower} into {leader}, gap {gap} m\n{dump}")]
    Collision {
        time: f64,
        follower: usize,
        leader: usize,
        gap: f64,
        dump: String,
    },
    #[error("law failure at t={time}s for vehicle {vehicle}: {source}")]
    Law {
        time: f64,
        vehicle: usize,
        source: LawError,
    },
    #[error("queue composition is empty")]
    EmptyComposition,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One stop-bar crossing. `flow_vph` is 3600 over the time since the previous
/// crossing at the same detector; absent for the first crossing. `gap` is the
/// bumper-to-bumper distance to the real leader at the crossing instant,
/// absent for the head vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub detector: usize,
    pub position: f64,
    pub vehicle: usize,
    pub time: f64,
    pub speed: f64,
    pub accel: f64,
    pub gap: Option<f64>,
    pub flow_vph: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub vehicle: usize,
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Places the queue behind the stop bar: the head vehicle's front bumper at
/// the bar, every follower its own minimal gap behind its leader's tail.
pub fn init_queue(
    composition: &[VehicleClass],
    stop_bar: f64,
    params_for: impl Fn(VehicleClass) -> DriverParams,
) -> Result<Vec<VehicleState>, SimError> {
    if composition.is_empty() {
        return Err(SimError::EmptyComposition);
    }
    let mut vehicles = Vec::with_capacity(composition.len());
    let mut front = stop_bar;
    for (id, &class) in composition.iter().enumerate() {
        let params = params_for(class);
        if id > 0 {
            let leader: &VehicleState = &vehicles[id - 1];
            front = leader.pos - leader.params.length - params.g_min;
        }
        vehicles.push(VehicleState {
            id,
            pos: front,
            speed: 0.0,
            accel: 0.0,
            class,
            params,
        });
    }
    Ok(vehicles)
}

/// Virtual blocking vehicle for a red signal, sized so a follower at its
/// minimal gap stands with its front exactly at the stop bar. Green: none.
pub fn virtual_leader_for(
    signal: &SignalSpec,
    t: f64,
    params: &DriverParams,
) -> Option<LeaderView> {
    match signal.color_at(t) {
        SignalColor::Green => None,
        SignalColor::Red => Some(LeaderView::blocking(
            signal.position + params.g_min + params.length,
            params.length,
        )),
    }
}

pub struct Corridor {
    /// Front to back; `vehicles[i].id == i` throughout a run.
    pub vehicles: Vec<VehicleState>,
    pub signals: Vec<SignalSpec>,
    pub detectors: Vec<f64>,
    pub model: CarFollowModel,
    pub dt: f64,
    steps_done: usize,
    records: Vec<DetectorRecord>,
    last_crossing: Vec<Option<f64>>,
    /// Resolved ACC parameters for CACC vehicles behaving as ACC.
    acc_params: DriverParams,
}

impl Corridor {
    pub fn new(
        vehicles: Vec<VehicleState>,
        signals: Vec<SignalSpec>,
        detectors: Vec<f64>,
        model: CarFollowModel,
        dt: f64,
        acc_params: DriverParams,
    ) -> Self {
        let n_detectors = detectors.len();
        Corridor {
            vehicles,
            signals,
            detectors,
            model,
            dt,
            steps_done: 0,
            records: Vec::new(),
            last_crossing: vec![None; n_detectors],
            acc_params,
        }
    }

    pub fn time(&self) -> f64 {
        self.steps_done as f64 * self.dt
    }

    pub fn records(&self) -> &[DetectorRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DetectorRecord> {
        self.records
    }

    /// Effective leader: the real predecessor or the nearest red-signal
    /// virtual leader downstream of the own front, whichever leaves the
    /// smaller gap. Returns the governing signal index when virtual.
    fn effective_leader(&self, i: usize, t: f64) -> (LeaderView, Option<usize>) {
        let me = &self.vehicles[i];
        let mut best: (LeaderView, Option<usize>) = if i > 0 {
            (Self::view_of(&self.vehicles[i - 1]), None)
        } else {
            (LeaderView::free_road(me.pos, me.params.v_max), None)
        };
        for (s_idx, signal) in self.signals.iter().enumerate() {
            if signal.position < me.pos {
                continue;
            }
            if let Some(view) = virtual_leader_for(signal, t, &me.params) {
                if view.gap_to(me.pos) < best.0.gap_to(me.pos) {
                    best = (view, Some(s_idx));
                }
            }
        }
        best
    }

    fn view_of(v: &VehicleState) -> LeaderView {
        LeaderView {
            front_pos: v.pos,
            speed: v.speed,
            accel: v.accel,
            length: v.params.length,
            class: v.class,
        }
    }

    fn with_acc_params(&self, i: usize) -> VehicleState {
        VehicleState {
            params: self.acc_params,
            ..self.vehicles[i]
        }
    }

    /// Base-law dispatch for a vehicle that is not a platoon follower.
    /// CACC vehicles run the cooperative law only behind a real CACC leader
    /// and only when platoons are unmanaged; platoon leaders carry ACC
    /// parameters, and everything else falls back to the base model with ACC
    /// behavior.
    fn pass_a_accel(
        &self,
        i: usize,
        view: &LeaderView,
        is_virtual: bool,
        registry: Option<&PlatoonRegistry>,
    ) -> Result<f64, LawError> {
        let me = &self.vehicles[i];
        if me.class != VehicleClass::Cacc {
            return self.model.accel(me, view, self.dt);
        }
        match registry {
            Some(reg) => {
                if reg.is_member(i) {
                    // A platoon leader; the registry keeps ACC params applied.
                    self.model.accel(me, view, self.dt)
                } else {
                    // Opted out after a leave event: drives as ACC.
                    self.model.accel(&self.with_acc_params(i), view, self.dt)
                }
            }
            None => {
                if !is_virtual && view.class == VehicleClass::Cacc {
                    cacc_accel(me, view)
                } else {
                    self.model.accel(&self.with_acc_params(i), view, self.dt)
                }
            }
        }
    }

    /// Advances the corridor by one step. `registry` enables platoon
    /// management: followers are computed in a second pass so leader events
    /// (green-go, obstacle-brake) reach them within the step.
    pub fn step(&mut self, mut registry: Option<&mut PlatoonRegistry>) -> Result<(), SimError> {
        let t = self.time();
        let n = self.vehicles.len();
        let mut accel = vec![0.0_f64; n];
        let mut eff_virtual: Vec<Option<usize>> = vec![None; n];

        // Pass A: everything except platoon followers.
        {
            let reg = registry.as_deref();
            for i in 0..n {
                if reg.is_some_and(|r| r.is_follower(i)) {
                    continue;
                }
                let (view, virt) = self.effective_leader(i, t);
                eff_virtual[i] = virt;
                accel[i] = self
                    .pass_a_accel(i, &view, virt.is_some(), reg)
                    .map_err(|source| SimError::Law {
                        time: t,
                        vehicle: i,
                        source,
                    })?;
            }
        }

        if let Some(reg) = registry.as_deref_mut() {
            reg.update_leader_state(&self.vehicles, &eff_virtual, t);

            // Pass B: followers, with the leader's current-step acceleration
            // available through the broadcast channel.
            for i in 0..n {
                if !reg.is_follower(i) {
                    continue;
                }
                let (view, virt) = self.effective_leader(i, t);
                eff_virtual[i] = virt;
                let me = self.vehicles[i];
                let a = if virt.is_some() {
                    // A red signal sits between the follower and its
                    // predecessor; approach it as ACC (the split happens in
                    // maintenance).
                    self.model
                        .accel(&self.with_acc_params(i), &view, self.dt)
                        .map_err(|source| SimError::Law {
                            time: t,
                            vehicle: i,
                            source,
                        })?
                } else {
                    let leader_idx = reg.platoon_leader_of(i).expect("follower has a leader");
                    let mut pred = view;
                    if reg.broadcast_enabled() && reg.is_launching(i) && me.speed == 0.0 {
                        pred.accel = pred.accel.max(accel[leader_idx]);
                    }
                    let mut a = cacc_accel(&me, &pred).map_err(|source| SimError::Law {
                        time: t,
                        vehicle: i,
                        source,
                    })?;
                    if reg.broadcast_enabled() {
                        if let Some(s_idx) = reg.leader_obstacle_of(i) {
                            if let Some(obstacle) =
                                virtual_leader_for(&self.signals[s_idx], t, &me.params)
                            {
                                if obstacle.gap_to(me.pos) > 0.0 {
                                    let a_obs = cacc_accel(&me, &obstacle).map_err(|source| {
                                        SimError::Law {
                                            time: t,
                                            vehicle: i,
                                            source,
                                        }
                                    })?;
                                    a = a.min(a_obs);
                                }
                            }
                            // Braking alert: the step the leader brakes for
                            // the obstacle, rolling followers lift off and
                            // begin a gentle deceleration; the stop itself is
                            // shaped by their own obstacle-aware law. The
                            // -0.01 threshold ignores the tiny oscillations
                            // of a leader settling at the bar, and launching
                            // or slow-moving followers are left alone.
                            if accel[leader_idx] < -0.01 && me.speed > 0.5 * me.params.v_max {
                                a = a.min(ALERT_DECEL);
                            }
                        }
                    }
                    a
                };
                accel[i] = a;
            }
        }

        // Advance synchronously; the speed clamp enforces no reversal and the
        // trapezoidal position update uses the clamped speed change.
        let old_pos: Vec<f64> = self.vehicles.iter().map(|v| v.pos).collect();
        let old_speed: Vec<f64> = self.vehicles.iter().map(|v| v.speed).collect();
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            let v0 = v.speed;
            let v1 = (v0 + accel[i] * self.dt).max(0.0);
            v.speed = v1;
            v.pos += 0.5 * (v0 + v1) * self.dt;
            v.accel = (v1 - v0) / self.dt;
        }
        self.steps_done += 1;
        let t_end = self.time();

        for i in 1..n {
            let leader = &self.vehicles[i - 1];
            let follower = &self.vehicles[i];
            let gap = leader.pos - follower.pos - leader.params.length;
            if gap < 0.0 {
                let dump = format!("leader: {leader:?}\nfollower: {follower:?}");
                return Err(SimError::Collision {
                    time: t_end,
                    follower: follower.id,
                    leader: leader.id,
                    gap,
                    dump,
                });
            }
        }

        if let Some(reg) = registry {
            // A vehicle counts as signal-separated when a red light leaves a
            // smaller gap than its predecessor does; splits and join vetoes
            // both key off this.
            let mut separated: Vec<Option<usize>> = vec![None; n];
            for (i, slot) in separated.iter_mut().enumerate().take(n).skip(1) {
                if reg.is_member(i) {
                    *slot = self.effective_leader(i, t_end).1;
                }
            }
            reg.maintain(&mut self.vehicles, &separated, t_end);
        }

        // Detector crossings, interpolated within the step. Spacing exceeds
        // one step of travel, so each detector sees at most one crossing.
        for d_idx in 0..self.detectors.len() {
            let d_pos = self.detectors[d_idx];
            for i in 0..n {
                let (old, new) = (old_pos[i], self.vehicles[i].pos);
                if !(old <= d_pos && d_pos < new) {
                    continue;
                }
                let theta = if new > old {
                    (d_pos - old) / (new - old)
                } else {
                    0.0
                };
                let t_cross = t + theta * self.dt;
                let speed = old_speed[i] + self.vehicles[i].accel * theta * self.dt;
                let gap = (i > 0).then(|| {
                    let leader_front =
                        old_pos[i - 1] + (self.vehicles[i - 1].pos - old_pos[i - 1]) * theta;
                    leader_front - d_pos - self.vehicles[i - 1].params.length
                });
                let flow_vph = self.last_crossing[d_idx].map(|prev| 3600.0 / (t_cross - prev));
                self.last_crossing[d_idx] = Some(t_cross);
                self.records.push(DetectorRecord {
                    detector: d_idx,
                    position: d_pos,
                    vehicle: self.vehicles[i].id,
                    time: t_cross,
                    speed,
                    accel: self.vehicles[i].accel,
                    gap,
                    flow_vph,
                });
            }
        }
        Ok(())
    }
}

/// Full output of one scenario run.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<DetectorRecord>,
    pub trajectories: Vec<TrajectorySample>,
    pub platoon_events: Vec<PlatoonEvent>,
    pub composition: Vec<VehicleClass>,
    pub seed: u64,
}

/// Runs a scenario to its horizon. Deterministic given the scenario seed.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let composition = compose_queue(
        config.queue.size,
        config.queue.penetration,
        config.queue.tech,
        &mut rng,
    );
    run_with_composition(config, composition)
}

/// Runs a scenario with an explicit initial-queue composition (the seed is
/// not consulted; useful for scripted fleets).
pub fn run_with_composition(
    config: &ScenarioConfig,
    composition: Vec<VehicleClass>,
) -> Result<RunOutput, SimError> {
    config.validate()?;
    let vehicles = init_queue(&composition, config.stop_bar, |class| {
        config.params_for(class)
    })?;
    let mut corridor = Corridor::new(
        vehicles,
        config.signals.clone(),
        config.detectors.clone(),
        config.model,
        config.dt,
        config.params_for(VehicleClass::Acc),
    );
    let mut registry = config
        .platooning
        .enabled
        .then(|| PlatoonRegistry::new(&config.platooning, config, &mut corridor.vehicles));
    if let Some(reg) = registry.as_mut() {
        // Blocking state just before the run starts, so a release at exactly
        // t = 0 still reads as a green edge.
        let pre_start: Vec<Option<usize>> = (0..corridor.vehicles.len())
            .map(|i| corridor.effective_leader(i, -corridor.dt).1)
            .collect();
        reg.prime_blocking(&pre_start);
    }

    let n_steps = (config.horizon / config.dt).round() as usize;
    let stride = config.trajectory_stride;
    let mut trajectories = Vec::new();
    let sample = |corridor: &Corridor, out: &mut Vec<TrajectorySample>| {
        let t = corridor.time();
        for v in &corridor.vehicles {
            out.push(TrajectorySample {
                time: t,
                vehicle: v.id,
                pos: v.pos,
                speed: v.speed,
                accel: v.accel,
            });
        }
    };

    for step_idx in 0..n_steps {
        if stride > 0 && step_idx % stride == 0 {
            sample(&corridor, &mut trajectories);
        }
        corridor.step(registry.as_mut())?;
    }
    if stride > 0 {
        sample(&corridor, &mut trajectories);
    }

    Ok(RunOutput {
        records: corridor.records,
        trajectories,
        platoon_events: registry.map(|r| r.into_events()).unwrap_or_default(),
        composition,
        seed: config.seed,
    })
}

/// Counts detector crossings inside `[0, window]` seconds.
pub fn throughput(records: &[DetectorRecord], window: f64) -> usize {
    records
        .iter()
        .filter(|r| r.time >= 0.0 && r.time <= window)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::preset_params;
    use crate::scenario::ScenarioConfig;

    fn default_params(class: VehicleClass) -> DriverParams {
        preset_params(class)
    }

    #[test]
    fn queue_positions_ordinary() {
        let fleet = init_queue(&[VehicleClass::Ordinary; 3], 0.0, default_params).unwrap();
        let fronts: Vec<f64> = fleet.iter().map(|v| v.pos).collect();
        assert_eq!(fronts, vec![0.0, -9.0, -18.0]);
        assert!(fleet.iter().all(|v| v.speed == 0.0));
    }

    #[test]
    fn queue_positions_mixed_gap() {
        let fleet = init_queue(
            &[VehicleClass::Ordinary, VehicleClass::Acc],
            0.0,
            default_params,
        )
        .unwrap();
        let fronts: Vec<f64> = fleet.iter().map(|v| v.pos).collect();
        assert_eq!(fronts, vec![0.0, -8.0]);
    }

    #[test]
    fn empty_queue_is_error() {
        assert!(matches!(
            init_queue(&[], 0.0, default_params),
            Err(SimError::EmptyComposition)
        ));
    }

    #[test]
    fn virtual_leader_placement() {
        let signal = SignalSpec::always_red(300.0);
        let ord =
            virtual_leader_for(&signal, 10.0, &preset_params(VehicleClass::Ordinary)).unwrap();
        assert_eq!(ord.front_pos, 309.0);
        assert_eq!(ord.speed, 0.0);
        let acc = virtual_leader_for(&signal, 10.0, &preset_params(VehicleClass::Acc)).unwrap();
        assert_eq!(acc.front_pos, 308.0);

        let released = SignalSpec::released_at_zero(0.0);
        assert!(
            virtual_leader_for(&released, 0.0, &preset_params(VehicleClass::Ordinary)).is_none()
        );
    }

    #[test]
    fn free_vehicle_at_v_max_cruises() {
        for model in CarFollowModel::ALL {
            let v = VehicleState {
                id: 0,
                pos: 0.0,
                speed: 20.0,
                accel: 0.0,
                class: VehicleClass::Ordinary,
                params: preset_params(VehicleClass::Ordinary),
            };
            let mut corridor = Corridor::new(
                vec![v],
                vec![],
                vec![],
                model,
                0.05,
                preset_params(VehicleClass::Acc),
            );
            corridor.step(None).unwrap();
            let moved = corridor.vehicles[0].pos;
            assert!((moved - 1.0).abs() < 1e-12, "{model:?}: {moved}");
            assert!(corridor.vehicles[0].accel.abs() < 1e-12);
        }
    }

    #[test]
    fn standstill_behind_red_is_stationary_for_all_models() {
        for model in CarFollowModel::ALL {
            let mut corridor = Corridor::new(
                init_queue(&[VehicleClass::Ordinary], 300.0, default_params).unwrap(),
                vec![SignalSpec::always_red(300.0)],
                vec![],
                model,
                0.05,
                preset_params(VehicleClass::Acc),
            );
            for _ in 0..200 {
                corridor.step(None).unwrap();
            }
            let v = &corridor.vehicles[0];
            assert!(
                (v.pos - 300.0).abs() < 1e-9,
                "{model:?}: drifted to {}",
                v.pos
            );
            assert!(v.speed < 1e-9);
        }
    }

    #[test]
    fn gipps_head_vehicle_hits_a_max_then_zero() {
        let mut config = ScenarioConfig::default();
        config.model = CarFollowModel::Gipps;
        config.queue.size = 1;
        config.trajectory_stride = 1;
        config.horizon = 20.0;
        let out = run(&config).unwrap();
        let own: Vec<&TrajectorySample> =
            out.trajectories.iter().filter(|s| s.vehicle == 0).collect();
        // Early: realized acceleration equals a_max.
        assert!((own[5].accel - 1.5).abs() < 1e-12);
        // After reaching v_max: zero acceleration, full speed.
        let last = own.last().unwrap();
        assert_eq!(last.speed, 20.0);
        assert!(last.accel.abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_zero_records() {
        let mut config = ScenarioConfig::default();
        config.horizon = 0.0;
        let out = run(&config).unwrap();
        assert!(out.records.is_empty());
    }

    #[test]
    fn throughput_window_and_empty() {
        assert_eq!(throughput(&[], 60.0), 0);
        let record = DetectorRecord {
            detector: 0,
            position: 0.0,
            vehicle: 0,
            time: 59.9,
            speed: 10.0,
            accel: 0.0,
            gap: None,
            flow_vph: None,
        };
        let late = DetectorRecord {
            time: 60.1,
            ..record.clone()
        };
        assert_eq!(throughput(&[record, late], 60.0), 1);
    }

    #[test]
    fn crossing_order_matches_queue_order() {
        let mut config = ScenarioConfig::default();
        config.queue.size = 12;
        let out = run(&config).unwrap();
        let order: Vec<usize> = out.records.iter().map(|r| r.vehicle).collect();
        let sorted: Vec<usize> = (0..order.len()).collect();
        assert_eq!(order, sorted);
        // Crossing times strictly increase.
        for pair in out.records.windows(2) {
            assert!(pair[0].time < pair[1].time);
        }
    }

    #[test]
    fn prewarmed_platoon_measures_equilibrium_flow() {
        // Vehicles at v_max with equilibrium gaps rolling over a detector:
        // flow settles at 3600/2.5 = 1440 veh/h.
        let params = preset_params(VehicleClass::Ordinary);
        let spacing = params.g_min + params.v_max * params.tau + params.length;
        let vehicles: Vec<VehicleState> = (0..10)
            .map(|i| VehicleState {
                id: i,
                pos: -10.0 - spacing * i as f64,
                speed: params.v_max,
                accel: 0.0,
                class: VehicleClass::Ordinary,
                params,
            })
            .collect();
        for model in CarFollowModel::ALL {
            let mut corridor = Corridor::new(
                vehicles.clone(),
                vec![],
                vec![0.0],
                model,
                0.05,
                preset_params(VehicleClass::Acc),
            );
            for _ in 0..(30.0_f64 / 0.05) as usize {
                corridor.step(None).unwrap();
            }
            let flows: Vec<f64> = corridor
                .records()
                .iter()
                .filter_map(|r| r.flow_vph)
                .collect();
            assert!(!flows.is_empty());
            for flow in flows {
                assert!((flow - 1440.0).abs() / 1440.0 < 1e-3, "{model:?}: {flow}");
            }
        }
    }
}
