//! Platoon lifecycle management layered over the corridor.
//!
//! Every CACC vehicle in a platoon-managed run belongs to exactly one
//! platoon; an isolated CACC vehicle is a platoon of size one. Platoon
//! leaders drive with ACC parameters and the base law; followers drive with
//! CACC parameters and the cooperative law. Membership maintenance runs once
//! per step after the state update: scripted leaves first, then separation
//! splits (a red signal or an excessive gap between a follower and its
//! predecessor), then range joins. A vehicle that leaves through a scripted
//! event has its original parameters restored bitwise and stays out of the
//! platoon system for the rest of the run, driving as ACC.
//!
//! The behavior rules here are derived from corridor-scale platoon
//! semantics: join on range, split on separation, leader-to-follower
//! broadcast of launch and braking events.

use thiserror::Error;

use crate::params::{DriverParams, VehicleClass, VehicleState};
use crate::scenario::{LeaveEvent, PlatoonSpec, ScenarioConfig};

#[derive(Debug, Error)]
pub enum PlatoonError {
    #[error("vehicle {0} is not a platoon member")]
    NotAMember(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberRole {
    StandaloneLeader,
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlatoonEventKind {
    Join,
    Split,
    Leave,
    GreenGo,
    ObstacleBrake,
}

impl PlatoonEventKind {
    pub fn name(self) -> &'static str {
        match self {
            PlatoonEventKind::Join => "join",
            PlatoonEventKind::Split => "split",
            PlatoonEventKind::Leave => "leave",
            PlatoonEventKind::GreenGo => "green_go",
            PlatoonEventKind::ObstacleBrake => "obstacle_brake",
        }
    }
}

/// One entry of the platoon event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatoonEvent {
    pub time: f64,
    pub kind: PlatoonEventKind,
    pub vehicle: usize,
    pub leader: usize,
}

#[derive(Debug, Clone)]
struct Platoon {
    leader: usize,
    followers: Vec<usize>,
    /// Signal index currently blocking the leader, if any.
    blocked_by: Option<usize>,
    /// Green-go launch in progress: followers may anticipate the leader's
    /// acceleration until everyone is moving.
    launching: bool,
}

impl Platoon {
    fn size(&self) -> usize {
        1 + self.followers.len()
    }
}

/// Vehicle ids equal corridor indices (single lane, no spawning), so the
/// registry addresses vehicles by index.
pub struct PlatoonRegistry {
    platoons: Vec<Platoon>,
    /// vehicle id -> platoon slot.
    member: Vec<Option<usize>>,
    saved: Vec<Option<DriverParams>>,
    opted_out: Vec<bool>,
    spec: PlatoonSpec,
    acc_params: DriverParams,
    cacc_params: DriverParams,
    join_range: f64,
    leave_schedule: Vec<LeaveEvent>,
    next_leave: usize,
    events: Vec<PlatoonEvent>,
}

impl PlatoonRegistry {
    /// Registers every CACC vehicle as a standalone leader: original
    /// parameters saved, ACC leader parameters applied.
    pub fn new(spec: &PlatoonSpec, config: &ScenarioConfig, vehicles: &mut [VehicleState]) -> Self {
        let n = vehicles.len();
        let mut registry = PlatoonRegistry {
            platoons: Vec::new(),
            member: vec![None; n],
            saved: vec![None; n],
            opted_out: vec![false; n],
            spec: spec.clone(),
            acc_params: config.params_for(VehicleClass::Acc),
            cacc_params: config.params_for(VehicleClass::Cacc),
            join_range: spec.effective_join_range(),
            leave_schedule: {
                let mut schedule = spec.leave_events.clone();
                schedule.sort_by(|a, b| a.time.total_cmp(&b.time));
                schedule
            },
            next_leave: 0,
            events: Vec::new(),
        };
        for (i, vehicle) in vehicles.iter_mut().enumerate() {
            if vehicle.class == VehicleClass::Cacc {
                registry.saved[i] = Some(vehicle.params);
                vehicle.params = registry.acc_params;
                registry.member[i] = Some(registry.platoons.len());
                registry.platoons.push(Platoon {
                    leader: i,
                    followers: Vec::new(),
                    blocked_by: None,
                    launching: false,
                });
            }
        }
        registry
    }

    pub fn broadcast_enabled(&self) -> bool {
        self.spec.broadcast
    }

    pub fn role_of(&self, vehicle: usize) -> Option<MemberRole> {
        let slot = self.member.get(vehicle).copied().flatten()?;
        let platoon = &self.platoons[slot];
        Some(if platoon.leader == vehicle {
            if platoon.followers.is_empty() {
                MemberRole::StandaloneLeader
            } else {
                MemberRole::Leader
            }
        } else {
            MemberRole::Follower
        })
    }

    pub fn is_member(&self, vehicle: usize) -> bool {
        self.member.get(vehicle).copied().flatten().is_some()
    }

    pub fn is_follower(&self, vehicle: usize) -> bool {
        matches!(self.role_of(vehicle), Some(MemberRole::Follower))
    }

    pub fn platoon_leader_of(&self, vehicle: usize) -> Option<usize> {
        let slot = self.member.get(vehicle).copied().flatten()?;
        Some(self.platoons[slot].leader)
    }

    pub fn is_launching(&self, vehicle: usize) -> bool {
        self.member
            .get(vehicle)
            .copied()
            .flatten()
            .is_some_and(|slot| self.platoons[slot].launching)
    }

    /// Signal blocking the platoon leader of `vehicle`, if any.
    pub fn leader_obstacle_of(&self, vehicle: usize) -> Option<usize> {
        let slot = self.member.get(vehicle).copied().flatten()?;
        self.platoons[slot].blocked_by
    }

    /// Ordered (leader, followers) view for logging and tests.
    pub fn platoons(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.platoons
            .iter()
            .map(|p| (p.leader, p.followers.as_slice()))
    }

    pub fn saved_params(&self, vehicle: usize) -> Option<&DriverParams> {
        self.saved.get(vehicle).and_then(|s| s.as_ref())
    }

    pub fn events(&self) -> &[PlatoonEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<PlatoonEvent> {
        self.events
    }

    /// Seeds each platoon's blocking state from the pre-start signal
    /// situation, so a light that turns green exactly at t = 0 still
    /// produces a launch edge on the first step. No events are logged.
    pub fn prime_blocking(&mut self, effective_virtual: &[Option<usize>]) {
        for platoon in &mut self.platoons {
            platoon.blocked_by = effective_virtual[platoon.leader];
        }
    }

    /// Called between the leader and follower acceleration passes: records
    /// which leaders are held by red signals, fires green-go on the red-to-
    /// green edge of a queued leader, and retires launches once every
    /// follower is moving.
    pub fn update_leader_state(
        &mut self,
        vehicles: &[VehicleState],
        effective_virtual: &[Option<usize>],
        time: f64,
    ) {
        for platoon in &mut self.platoons {
            let leader = platoon.leader;
            let now = effective_virtual[leader];
            let was = platoon.blocked_by;
            match (was, now) {
                // Release: the blocking signal went away or handed over to a
                // farther one (its red turned green while another red waits
                // downstream). A queued leader launches either way.
                (Some(s), other) if other != Some(s) && vehicles[leader].speed == 0.0 => {
                    platoon.launching = true;
                    if !platoon.followers.is_empty() {
                        self.events.push(PlatoonEvent {
                            time,
                            kind: PlatoonEventKind::GreenGo,
                            vehicle: leader,
                            leader,
                        });
                    }
                }
                (None, Some(_)) if !platoon.followers.is_empty() => {
                    self.events.push(PlatoonEvent {
                        time,
                        kind: PlatoonEventKind::ObstacleBrake,
                        vehicle: leader,
                        leader,
                    });
                }
                _ => {}
            }
            platoon.blocked_by = now;
            if platoon.launching && platoon.followers.iter().all(|&f| vehicles[f].speed > 0.0) {
                platoon.launching = false;
            }
        }
    }

    /// Per-step maintenance after the state update: scripted leaves, then
    /// separation splits, then range joins.
    pub fn maintain(
        &mut self,
        vehicles: &mut [VehicleState],
        separated_by_signal: &[Option<usize>],
        time: f64,
    ) {
        while self.next_leave < self.leave_schedule.len()
            && self.leave_schedule[self.next_leave].time <= time + 1e-9
        {
            let vehicle = self.leave_schedule[self.next_leave].vehicle;
            self.next_leave += 1;
            if self.is_member(vehicle) {
                self.leave(vehicle, vehicles, time);
            }
        }

        // Separation splits: first offending follower per sweep, repeated
        // until stable (rear parts are re-checked after each split).
        loop {
            let mut split_at = None;
            'outer: for platoon in &self.platoons {
                for &f in &platoon.followers {
                    if separated_by_signal[f].is_some() || self.gap_exceeds_separation(vehicles, f)
                    {
                        split_at = Some(f);
                        break 'outer;
                    }
                }
            }
            match split_at {
                Some(f) => {
                    self.split(f, vehicles, time)
                        .expect("split target is a member");
                }
                None => break,
            }
        }

        // Range joins, front to back; chained merges may happen in one pass.
        // No joining across a red signal.
        for i in 1..vehicles.len() {
            if !matches!(
                self.role_of(i),
                Some(MemberRole::Leader) | Some(MemberRole::StandaloneLeader)
            ) {
                continue;
            }
            if separated_by_signal[i].is_some() {
                continue;
            }
            if !self.spec.enabled_at(vehicles[i].pos) {
                continue;
            }
            let ahead = i - 1;
            if vehicles[ahead].class != VehicleClass::Cacc || !self.is_member(ahead) {
                continue;
            }
            let gap = vehicles[ahead].pos - vehicles[i].pos - vehicles[ahead].params.length;
            if gap > self.join_range {
                continue;
            }
            let front_slot = self.member[ahead].unwrap();
            let rear_slot = self.member[i].unwrap();
            if let Some(cap) = self.spec.max_size {
                if self.platoons[front_slot].size() + self.platoons[rear_slot].size() > cap {
                    continue;
                }
            }
            let rear = self.platoons[rear_slot].clone();
            let front = &mut self.platoons[front_slot];
            front.followers.push(i);
            front.followers.extend(&rear.followers);
            let front_leader = front.leader;
            self.member[i] = Some(front_slot);
            for &f in &rear.followers {
                self.member[f] = Some(front_slot);
            }
            self.make_follower(i, vehicles);
            self.remove_platoon(rear_slot);
            self.events.push(PlatoonEvent {
                time,
                kind: PlatoonEventKind::Join,
                vehicle: i,
                leader: front_leader,
            });
        }
    }

    fn gap_exceeds_separation(&self, vehicles: &[VehicleState], follower: usize) -> bool {
        let me = &vehicles[follower];
        let ahead = &vehicles[follower - 1];
        let gap = ahead.pos - me.pos - ahead.params.length;
        let desired = me.params.g_min + me.speed * me.params.tau;
        // Floor at the join range so a distance split cannot be undone by the
        // join pass of the same step.
        gap > (self.spec.separation_gap_factor * desired).max(self.join_range)
    }

    /// Splits the platoon containing `member` into the vehicles ahead of it
    /// and a new platoon led by `member` (parameters restored, then the ACC
    /// leader set applied).
    pub fn split(
        &mut self,
        member: usize,
        vehicles: &mut [VehicleState],
        time: f64,
    ) -> Result<(), PlatoonError> {
        let slot = self
            .member
            .get(member)
            .copied()
            .flatten()
            .ok_or(PlatoonError::NotAMember(member))?;
        if self.platoons[slot].leader == member {
            return Ok(()); // already leads its platoon
        }
        let old_leader = self.platoons[slot].leader;
        let k = self.platoons[slot]
            .followers
            .iter()
            .position(|&f| f == member)
            .unwrap();
        let rear_followers = self.platoons[slot].followers.split_off(k + 1);
        self.platoons[slot].followers.pop(); // member itself
        self.restore(member, vehicles);
        self.make_leader(member, vehicles);
        let rear_slot = self.platoons.len();
        for &f in &rear_followers {
            self.member[f] = Some(rear_slot);
        }
        self.member[member] = Some(rear_slot);
        self.platoons.push(Platoon {
            leader: member,
            followers: rear_followers,
            blocked_by: None,
            launching: false,
        });
        self.events.push(PlatoonEvent {
            time,
            kind: PlatoonEventKind::Split,
            vehicle: member,
            leader: old_leader,
        });
        Ok(())
    }

    /// Removes `member` from the platoon system (route change): parameters
    /// restored bitwise, vehicles behind it form their own platoon, and the
    /// vehicle drives as ACC for the rest of the run.
    pub fn leave(&mut self, member: usize, vehicles: &mut [VehicleState], time: f64) {
        let Some(slot) = self.member.get(member).copied().flatten() else {
            return;
        };
        let old_leader = self.platoons[slot].leader;
        if self.platoons[slot].leader == member {
            let followers = std::mem::take(&mut self.platoons[slot].followers);
            self.remove_platoon(slot);
            if let Some((&new_leader, rest)) = followers.split_first() {
                self.restore(new_leader, vehicles);
                self.make_leader(new_leader, vehicles);
                let new_slot = self.platoons.len();
                self.member[new_leader] = Some(new_slot);
                for &f in rest {
                    self.member[f] = Some(new_slot);
                }
                self.platoons.push(Platoon {
                    leader: new_leader,
                    followers: rest.to_vec(),
                    blocked_by: None,
                    launching: false,
                });
            }
        } else {
            let k = self.platoons[slot]
                .followers
                .iter()
                .position(|&f| f == member)
                .unwrap();
            let rear = self.platoons[slot].followers.split_off(k + 1);
            self.platoons[slot].followers.pop();
            if let Some((&new_leader, rest)) = rear.split_first() {
                self.restore(new_leader, vehicles);
                self.make_leader(new_leader, vehicles);
                let new_slot = self.platoons.len();
                self.member[new_leader] = Some(new_slot);
                for &f in rest {
                    self.member[f] = Some(new_slot);
                }
                self.platoons.push(Platoon {
                    leader: new_leader,
                    followers: rest.to_vec(),
                    blocked_by: None,
                    launching: false,
                });
            }
        }
        self.restore_and_take(member, vehicles);
        self.member[member] = None;
        self.opted_out[member] = true;
        self.events.push(PlatoonEvent {
            time,
            kind: PlatoonEventKind::Leave,
            vehicle: member,
            leader: old_leader,
        });
    }

    fn make_follower(&mut self, vehicle: usize, vehicles: &mut [VehicleState]) {
        if self.saved[vehicle].is_none() {
            self.saved[vehicle] = Some(vehicles[vehicle].params);
        }
        vehicles[vehicle].params = self.cacc_params;
    }

    fn make_leader(&mut self, vehicle: usize, vehicles: &mut [VehicleState]) {
        if self.saved[vehicle].is_none() {
            self.saved[vehicle] = Some(vehicles[vehicle].params);
        }
        vehicles[vehicle].params = self.acc_params;
    }

    fn restore(&mut self, vehicle: usize, vehicles: &mut [VehicleState]) {
        if let Some(original) = self.saved[vehicle] {
            vehicles[vehicle].params = original;
        }
    }

    fn restore_and_take(&mut self, vehicle: usize, vehicles: &mut [VehicleState]) {
        if let Some(original) = self.saved[vehicle].take() {
            vehicles[vehicle].params = original;
        }
    }

    fn remove_platoon(&mut self, slot: usize) {
        self.platoons.swap_remove(slot);
        if slot < self.platoons.len() {
            // The platoon moved from the tail into `slot`; remap its members.
            let moved: Vec<usize> = std::iter::once(self.platoons[slot].leader)
                .chain(self.platoons[slot].followers.iter().copied())
                .collect();
            for vehicle in moved {
                self.member[vehicle] = Some(slot);
            }
        }
    }

    /// Structural invariants: members are CACC, platoons are contiguous in
    /// lane order with the leader in front, membership is exclusive, every
    /// non-opted CACC vehicle is registered, and parameters match roles.
    pub fn validate(&self, vehicles: &[VehicleState]) -> Result<(), String> {
        let mut seen = vec![false; vehicles.len()];
        for (slot, platoon) in self.platoons.iter().enumerate() {
            let mut expected = platoon.leader;
            for &v in std::iter::once(&platoon.leader).chain(&platoon.followers) {
                if vehicles[v].class != VehicleClass::Cacc {
                    return Err(format!("platoon {slot}: member {v} is not CACC"));
                }
                if seen[v] {
                    return Err(format!("vehicle {v} appears in more than one platoon"));
                }
                seen[v] = true;
                if v != expected {
                    return Err(format!(
                        "platoon {slot} is not contiguous: expected vehicle {expected}, found {v}"
                    ));
                }
                if self.member[v] != Some(slot) {
                    return Err(format!("membership map out of date for vehicle {v}"));
                }
                expected = v + 1;
            }
            if vehicles[platoon.leader].params != self.acc_params {
                return Err(format!(
                    "leader {} does not carry ACC parameters",
                    platoon.leader
                ));
            }
            for &f in &platoon.followers {
                if vehicles[f].params != self.cacc_params {
                    return Err(format!("follower {f} does not carry CACC parameters"));
                }
            }
        }
        for (v, state) in vehicles.iter().enumerate() {
            if state.class == VehicleClass::Cacc && !self.opted_out[v] && !seen[v] {
                return Err(format!("CACC vehicle {v} is not registered in any platoon"));
            }
        }
        Ok(())
    }
}
