//! Scenario configuration: schema, defaults, validation, and seeding.
//!
//! Scenarios are TOML documents. Every field has a default taken from
//! [`crate::params::defaults`], so an empty document is a valid scenario
//! (the standard 40-vehicle queue discharge). Unknown keys are rejected.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{defaults, preset_params, CarFollowModel, DriverParams, VehicleClass};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalColor {
    Red,
    Green,
}

/// A fixed-position signal with a switch schedule. The color at time `t` is
/// `initial` before the first switch, otherwise the color of the last switch
/// at or before `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub position: f64,
    #[serde(default = "default_red")]
    pub initial: SignalColor,
    #[serde(default)]
    pub switches: Vec<(f64, SignalColor)>,
}

fn default_red() -> SignalColor {
    SignalColor::Red
}

impl SignalSpec {
    /// Signal that turns green at t = 0 (queue release).
    pub fn released_at_zero(position: f64) -> Self {
        SignalSpec {
            position,
            initial: SignalColor::Red,
            switches: vec![(0.0, SignalColor::Green)],
        }
    }

    /// Signal that stays red for the whole run.
    pub fn always_red(position: f64) -> Self {
        SignalSpec {
            position,
            initial: SignalColor::Red,
            switches: Vec::new(),
        }
    }

    pub fn color_at(&self, t: f64) -> SignalColor {
        let mut color = self.initial;
        for &(switch_time, switch_color) in &self.switches {
            if switch_time <= t {
                color = switch_color;
            } else {
                break;
            }
        }
        color
    }
}

/// Initial-queue composition: `size` vehicles, a `penetration` fraction of
/// which are `tech`-class, placed uniformly at random (seeded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueSpec {
    pub size: usize,
    pub penetration: f64,
    pub tech: VehicleClass,
}

impl Default for QueueSpec {
    /// 60 vehicles stands in for the infinite queue: even a pure-CACC fleet
    /// (up to ~45 crossings/min) cannot drain it within the one-minute
    /// counting window.
    fn default() -> Self {
        QueueSpec {
            size: 60,
            penetration: 0.0,
            tech: VehicleClass::Acc,
        }
    }
}

/// Optional overrides of the shared driving parameters. Class-specific
/// reaction time and minimal gap always come from the class presets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamOverrides {
    pub a_max: Option<f64>,
    pub b: Option<f64>,
    pub v_max: Option<f64>,
    pub length: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: DriverParams) -> DriverParams {
        if let Some(v) = self.a_max {
            p.a_max = v;
        }
        if let Some(v) = self.b {
            p.b = v;
        }
        if let Some(v) = self.v_max {
            p.v_max = v;
        }
        if let Some(v) = self.length {
            p.length = v;
        }
        if let Some(v) = self.delta1 {
            p.delta1 = v;
        }
        if let Some(v) = self.delta2 {
            p.delta2 = v;
        }
        if let Some(v) = self.alpha1 {
            p.alpha1 = v;
        }
        if let Some(v) = self.alpha2 {
            p.alpha2 = v;
        }
        p
    }
}

/// A scripted platoon-leave event (stands in for a route change).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaveEvent {
    pub time: f64,
    pub vehicle: usize,
}

/// Platoon management settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatoonSpec {
    pub enabled: bool,
    /// Gap (m) within which a platoon leader joins a CACC vehicle ahead.
    /// `None` uses 1.5 x (g_min + v_max * tau) with CACC parameters.
    pub join_range: Option<f64>,
    /// Position ranges where platoons may form; `None` enables the whole road.
    pub segments: Option<Vec<(f64, f64)>>,
    /// Maximum platoon size; `None` is unlimited.
    pub max_size: Option<usize>,
    /// A follower whose gap exceeds this multiple of its desired gap splits off.
    pub separation_gap_factor: f64,
    /// Leader-to-follower event broadcast (green-go / obstacle-brake).
    pub broadcast: bool,
    pub leave_events: Vec<LeaveEvent>,
}

impl Default for PlatoonSpec {
    fn default() -> Self {
        PlatoonSpec {
            enabled: false,
            join_range: None,
            segments: None,
            max_size: None,
            separation_gap_factor: 3.0,
            broadcast: true,
            leave_events: Vec::new(),
        }
    }
}

impl PlatoonSpec {
    pub fn effective_join_range(&self) -> f64 {
        self.join_range.unwrap_or_else(|| {
            let p = preset_params(VehicleClass::Cacc);
            1.5 * (p.g_min + p.v_max * p.tau)
        })
    }

    pub fn enabled_at(&self, position: f64) -> bool {
        match &self.segments {
            None => true,
            Some(segments) => segments
                .iter()
                .any(|&(a, b)| position >= a && position <= b),
        }
    }
}

/// A fully resolved simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub model: CarFollowModel,
    /// Time step (s).
    pub dt: f64,
    /// Simulated duration (s).
    pub horizon: f64,
    pub seed: u64,
    /// Stop bar of the release signal; the queue head starts here.
    pub stop_bar: f64,
    pub detectors: Vec<f64>,
    pub signals: Vec<SignalSpec>,
    pub queue: QueueSpec,
    pub params: ParamOverrides,
    /// Trajectory sampling stride in steps; 0 disables the trajectory log.
    pub trajectory_stride: usize,
    pub platooning: PlatoonSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            model: CarFollowModel::Iidm,
            dt: defaults::DT,
            horizon: 60.0,
            seed: 0,
            stop_bar: 0.0,
            detectors: vec![0.0],
            signals: vec![SignalSpec::released_at_zero(0.0)],
            queue: QueueSpec::default(),
            params: ParamOverrides::default(),
            trajectory_stride: 0,
            platooning: PlatoonSpec::default(),
        }
    }
}

impl ScenarioConfig {
    /// Resolved driving parameters for a vehicle class under this scenario's
    /// overrides.
    pub fn params_for(&self, class: VehicleClass) -> DriverParams {
        self.params.apply(preset_params(class))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.horizon.is_nan() || self.horizon < 0.0 {
            return Err(invalid(
                "horizon",
                format!("must be non-negative, got {}", self.horizon),
            ));
        }
        if !(0.0..=1.0).contains(&self.queue.penetration) {
            return Err(invalid(
                "queue.penetration",
                format!("must be within [0, 1], got {}", self.queue.penetration),
            ));
        }
        if self.queue.size == 0 {
            return Err(invalid(
                "queue.size",
                "queue must hold at least one vehicle",
            ));
        }
        for class in [
            VehicleClass::Ordinary,
            VehicleClass::Acc,
            VehicleClass::Cacc,
        ] {
            let p = self.params_for(class);
            p.validate().map_err(|message| invalid("params", message))?;
            if p.tau < self.dt {
                return Err(invalid(
                    "dt",
                    format!(
                        "reaction time {} s of {class:?} is below dt {} s",
                        p.tau, self.dt
                    ),
                ));
            }
        }
        for signal in &self.signals {
            let mut previous = f64::NEG_INFINITY;
            for &(time, _) in &signal.switches {
                if time <= previous {
                    return Err(invalid(
                        "signals",
                        format!(
                            "switch times must be strictly increasing, got {time} after {previous}"
                        ),
                    ));
                }
                previous = time;
            }
        }
        let separation = self.platooning.separation_gap_factor;
        if separation.is_nan() || separation <= 0.0 {
            return Err(invalid(
                "platooning.separation_gap_factor",
                "must be positive",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// The project-wide seedable generator. ChaCha8 keeps streams stable across
/// platforms and releases.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a per-task seed from a master seed and two indices (splitmix64
/// finalizer chain); used to give ensemble runs independent, reproducible
/// streams regardless of execution order.
pub fn mix_seed(master: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(master ^ splitmix(a)) ^ splitmix(b.wrapping_add(0x1234_5678_9abc_def0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let config = parse_scenario("").unwrap();
        assert_eq!(config, ScenarioConfig::default());
        assert_eq!(config.params_for(VehicleClass::Ordinary).a_max, 1.5);
        assert_eq!(config.dt, 0.05);
    }

    #[test]
    fn a_max_override_leaves_rest_default() {
        let config = parse_scenario("[params]\na_max = 2.5\n").unwrap();
        let p = config.params_for(VehicleClass::Ordinary);
        assert_eq!(p.a_max, 2.5);
        assert_eq!(p.b, 2.0);
        assert_eq!(p.tau, 2.05);
        assert_eq!(config.horizon, 60.0);
    }

    #[test]
    fn out_of_range_penetration_rejected() {
        let err = parse_scenario("[queue]\npenetration = 1.3\n").unwrap_err();
        assert!(err.to_string().contains("penetration"), "{err}");
    }

    #[test]
    fn unknown_key_named_in_error() {
        let err = parse_scenario("warp_speed = 9\n").unwrap_err();
        assert!(err.to_string().contains("warp_speed"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let mut config = ScenarioConfig::default();
        config.params.a_max = Some(2.5);
        config.queue.penetration = 0.25;
        config.queue.tech = VehicleClass::Cacc;
        config.signals.push(SignalSpec::always_red(300.0));
        config.platooning.enabled = true;
        config.platooning.leave_events.push(LeaveEvent {
            time: 12.5,
            vehicle: 3,
        });
        let text = config.to_toml();
        let parsed = parse_scenario(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn signal_schedule_lookup() {
        let signal = SignalSpec::released_at_zero(0.0);
        assert_eq!(signal.color_at(-0.1), SignalColor::Red);
        assert_eq!(signal.color_at(0.0), SignalColor::Green);
        assert_eq!(signal.color_at(100.0), SignalColor::Green);
        assert_eq!(
            SignalSpec::always_red(300.0).color_at(59.0),
            SignalColor::Red
        );
    }

    #[test]
    fn decreasing_switch_times_rejected() {
        let mut config = ScenarioConfig::default();
        config.signals[0].switches = vec![(5.0, SignalColor::Green), (5.0, SignalColor::Red)];
        assert!(config.validate().is_err());
    }

    #[test]
    fn mixed_seeds_are_order_free_and_distinct() {
        let a = mix_seed(7, 1, 2);
        assert_eq!(a, mix_seed(7, 1, 2));
        assert_ne!(a, mix_seed(7, 2, 1));
        assert_ne!(a, mix_seed(8, 1, 2));
    }
}
