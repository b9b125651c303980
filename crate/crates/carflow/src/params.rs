//! Driver/vehicle parameter sets and their defaults.
//!
//! All default values live in [`defaults`]; scenario presets and experiments
//! pull from here instead of hard-coding numbers.

use serde::{Deserialize, Serialize};

/// Default parameter values shared by every scenario unless overridden.
pub mod defaults {
    /// Vehicle length (m).
    pub const LENGTH: f64 = 5.0;
    /// Simulation time step (s).
    pub const DT: f64 = 0.05;
    /// Maximal admissible speed (m/s).
    pub const V_MAX: f64 = 20.0;
    /// Maximal vehicle acceleration (m/s²).
    pub const A_MAX: f64 = 1.5;
    /// Desired deceleration (m/s², positive).
    pub const B: f64 = 2.0;
    /// Minimal gap to the leader (m), ordinary vehicles.
    pub const G_MIN: f64 = 4.0;
    /// Reaction time (s), ordinary vehicles.
    pub const TAU: f64 = 2.05;
    /// IIDM interaction exponent.
    pub const DELTA1: f64 = 8.0;
    /// IIDM free-flow exponent.
    pub const DELTA2: f64 = 4.0;
    /// Helly speed-difference gain (1/s).
    pub const ALPHA1: f64 = 0.5;
    /// Helly gap-error gain (1/s²).
    pub const ALPHA2: f64 = 0.25;

    /// Reaction time (s) / minimal gap (m) for ACC-enabled vehicles.
    pub const TAU_ACC: f64 = 1.1;
    pub const G_MIN_ACC: f64 = 3.0;
    /// Reaction time (s) / minimal gap (m) for CACC-enabled vehicles.
    pub const TAU_CACC: f64 = 0.8;
    pub const G_MIN_CACC: f64 = 3.0;

    /// Gap substituted for an absent leader; large enough that every
    /// gap-dependent term in the laws saturates.
    pub const FREE_ROAD_GAP: f64 = 1.0e7;
}

/// Vehicle automation class. The class decides which parameter preset applies
/// and, for CACC, whether the cooperative law may engage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Ordinary,
    Acc,
    Cacc,
}

/// The three base car-following laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarFollowModel {
    Gipps,
    Iidm,
    Helly,
}

impl CarFollowModel {
    pub const ALL: [CarFollowModel; 3] = [
        CarFollowModel::Gipps,
        CarFollowModel::Iidm,
        CarFollowModel::Helly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CarFollowModel::Gipps => "gipps",
            CarFollowModel::Iidm => "iidm",
            CarFollowModel::Helly => "helly",
        }
    }
}

/// Per-vehicle driving parameters.
///
/// Units: `a_max`, `b` in m/s²; `tau` in s; `g_min`, `length` in m;
/// `v_max` in m/s; `alpha1` in 1/s; `alpha2` in 1/s²; `delta1`, `delta2`
/// dimensionless. `b` is a positive magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    pub a_max: f64,
    pub b: f64,
    pub tau: f64,
    pub g_min: f64,
    pub v_max: f64,
    pub length: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl DriverParams {
    /// Checks the positivity invariants. `tau >= dt` is checked where the
    /// time step is known (scenario validation).
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("a_max", self.a_max),
            ("b", self.b),
            ("tau", self.tau),
            ("g_min", self.g_min),
            ("v_max", self.v_max),
            ("length", self.length),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        for (name, value) in fields {
            if value.is_nan() || value <= 0.0 {
                return Err(format!(
                    "driver parameter {name} must be positive, got {value}"
                ));
            }
        }
        Ok(())
    }

    /// Jam density 1/(g_min + length), veh/m.
    pub fn jam_density(&self) -> f64 {
        1.0 / (self.g_min + self.length)
    }
}

impl Default for DriverParams {
    fn default() -> Self {
        preset_params(VehicleClass::Ordinary)
    }
}

/// Returns the parameter preset for a vehicle class: shared defaults with
/// the class-specific reaction time and minimal gap.
pub fn preset_params(class: VehicleClass) -> DriverParams {
    let (tau, g_min) = match class {
        VehicleClass::Ordinary => (defaults::TAU, defaults::G_MIN),
        VehicleClass::Acc => (defaults::TAU_ACC, defaults::G_MIN_ACC),
        VehicleClass::Cacc => (defaults::TAU_CACC, defaults::G_MIN_CACC),
    };
    DriverParams {
        a_max: defaults::A_MAX,
        b: defaults::B,
        tau,
        g_min,
        v_max: defaults::V_MAX,
        length: defaults::LENGTH,
        delta1: defaults::DELTA1,
        delta2: defaults::DELTA2,
        alpha1: defaults::ALPHA1,
        alpha2: defaults::ALPHA2,
    }
}

/// Kinematic state of one simulated vehicle. `pos` is the front-bumper
/// position (m); `accel` is the realized acceleration of the previous
/// completed step (m/s²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
    pub class: VehicleClass,
    pub params: DriverParams,
}

impl VehicleState {
    pub fn stopped(id: usize, pos: f64, class: VehicleClass) -> Self {
        VehicleState {
            id,
            pos,
            speed: 0.0,
            accel: 0.0,
            class,
            params: preset_params(class),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_class_table() {
        let ord = preset_params(VehicleClass::Ordinary);
        assert_eq!((ord.tau, ord.g_min), (2.05, 4.0));
        let acc = preset_params(VehicleClass::Acc);
        assert_eq!((acc.tau, acc.g_min), (1.1, 3.0));
        let cacc = preset_params(VehicleClass::Cacc);
        assert_eq!((cacc.tau, cacc.g_min), (0.8, 3.0));
        // Shared columns are identical across classes.
        for p in [ord, acc, cacc] {
            assert_eq!(p.a_max, 1.5);
            assert_eq!(p.b, 2.0);
            assert_eq!(p.v_max, 20.0);
            assert_eq!(p.length, 5.0);
            assert_eq!((p.delta1, p.delta2), (8.0, 4.0));
            assert_eq!((p.alpha1, p.alpha2), (0.5, 0.25));
        }
    }

    #[test]
    fn presets_are_pure() {
        assert_eq!(
            preset_params(VehicleClass::Cacc),
            preset_params(VehicleClass::Cacc)
        );
    }

    #[test]
    fn validate_rejects_nonpositive() {
        let mut p = DriverParams::default();
        p.b = 0.0;
        let err = p.validate().unwrap_err();
        assert!(err.contains('b'), "{err}");
        p.b = -2.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn jam_density_ordinary() {
        let p = preset_params(VehicleClass::Ordinary);
        assert!((p.jam_density() - 1.0 / 9.0).abs() < 1e-15);
    }
}
