//! Scenario presets, equilibrium analytics, and the ACC/CACC penetration
//! sweep with ensemble medians.

use rand::Rng;
use rayon::prelude::*;

use crate::microsim::{run, throughput};
use crate::params::{CarFollowModel, DriverParams, VehicleClass};
use crate::scenario::{mix_seed, ScenarioConfig, SignalSpec};

/// Distance from the release signal to the downstream red light (m).
pub const RED_LIGHT_OFFSET: f64 = 300.0;

/// Penetration grid for the sweep, including the pure-ordinary baseline.
pub const PENETRATIONS: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

/// Counting window for throughput (s); all reported counts are per minute.
pub const COUNT_WINDOW: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    FreeRoad,
    RedLightDownstream,
}

impl Experiment {
    pub const ALL: [Experiment; 2] = [Experiment::FreeRoad, Experiment::RedLightDownstream];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FreeRoad => "free_road",
            Experiment::RedLightDownstream => "red_light",
        }
    }
}

/// Standard queue-discharge scenario: release signal at the stop bar with the
/// detector on it, optionally an always-red light 300 m downstream.
pub fn discharge_scenario(
    experiment: Experiment,
    model: CarFollowModel,
    a_max: Option<f64>,
) -> ScenarioConfig {
    let mut config = ScenarioConfig::default();
    config.model = model;
    config.params.a_max = a_max;
    if experiment == Experiment::RedLightDownstream {
        config
            .signals
            .push(SignalSpec::always_red(config.stop_bar + RED_LIGHT_OFFSET));
    }
    config
}

/// Equilibrium headway: reaction time plus the time to cover one standstill
/// spacing at full speed.
pub fn equilibrium_headway(p: &DriverParams) -> f64 {
    p.tau + (p.g_min + p.length) / p.v_max
}

/// Equilibrium flow in vehicles per hour.
pub fn equilibrium_flow_vph(p: &DriverParams) -> f64 {
    3600.0 / equilibrium_headway(p)
}

/// Average equilibrium headway of a mixed fleet with a `penetration` fraction
/// of tech vehicles.
pub fn mixed_equilibrium_headway(
    penetration: f64,
    tech: &DriverParams,
    ordinary: &DriverParams,
) -> f64 {
    penetration * tech.tau
        + (1.0 - penetration) * ordinary.tau
        + (penetration * tech.g_min + (1.0 - penetration) * ordinary.g_min + ordinary.length)
            / ordinary.v_max
}

/// Storage restriction of the link between two intersections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRestriction {
    /// Link length (m).
    pub length: f64,
    /// Lane count.
    pub lanes: f64,
}

/// Mixed-fleet equilibrium flow in vehicles per minute; with a link
/// restriction the flow is capped by how many vehicles the link can store.
pub fn mixed_equilibrium_flow(
    penetration: f64,
    tech: &DriverParams,
    ordinary: &DriverParams,
    link: Option<LinkRestriction>,
) -> f64 {
    let flow = 60.0 / mixed_equilibrium_headway(penetration, tech, ordinary);
    match link {
        None => flow,
        Some(l) => {
            let spacing =
                penetration * tech.g_min + (1.0 - penetration) * ordinary.g_min + ordinary.length;
            flow.min(l.lanes * l.length / spacing)
        }
    }
}

/// Draws a queue composition: exactly `round(penetration * n)` tech-class
/// vehicles placed uniformly at random, the rest ordinary.
pub fn compose_queue(
    n: usize,
    penetration: f64,
    tech: VehicleClass,
    rng: &mut impl Rng,
) -> Vec<VehicleClass> {
    let k = ((penetration * n as f64).round() as usize).min(n);
    let mut positions: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.gen_range(i..n);
        positions.swap(i, j);
    }
    let mut fleet = vec![VehicleClass::Ordinary; n];
    for &p in &positions[..k] {
        fleet[p] = tech;
    }
    fleet
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCase {
    pub experiment: Experiment,
    pub model: CarFollowModel,
    pub tech: VehicleClass,
    pub penetration: f64,
}

impl SweepCase {
    /// Content-derived key for seed mixing, so a case gets the same run
    /// seeds regardless of which case list it appears in.
    fn seed_key(&self) -> u64 {
        let experiment = match self.experiment {
            Experiment::FreeRoad => 0u64,
            Experiment::RedLightDownstream => 1,
        };
        let model = match self.model {
            CarFollowModel::Gipps => 0u64,
            CarFollowModel::Iidm => 1,
            CarFollowModel::Helly => 2,
        };
        let tech = match self.tech {
            VehicleClass::Ordinary => 0u64,
            VehicleClass::Acc => 1,
            VehicleClass::Cacc => 2,
        };
        let milli = (self.penetration * 1000.0).round() as u64;
        experiment | model << 1 | tech << 3 | milli << 5
    }
}

/// The full sweep grid: 72 penetration cases plus the pure-ordinary baseline
/// of every (experiment, model, tech) curve.
pub fn full_sweep_cases() -> Vec<SweepCase> {
    let mut cases = Vec::new();
    for experiment in Experiment::ALL {
        for model in CarFollowModel::ALL {
            for tech in [VehicleClass::Acc, VehicleClass::Cacc] {
                for &penetration in &PENETRATIONS {
                    cases.push(SweepCase {
                        experiment,
                        model,
                        tech,
                        penetration,
                    });
                }
            }
        }
    }
    cases
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub case: SweepCase,
    /// Master seed the per-run seeds were derived from.
    pub seed: u64,
    /// One-minute vehicle counts of the successful runs, in run order.
    pub counts: Vec<usize>,
    /// (run index, error) for aborted runs.
    pub failures: Vec<(usize, String)>,
    pub median: f64,
}

/// Median with the even-count convention (mean of the two middle order
/// statistics).
pub fn median_count(counts: &[usize]) -> f64 {
    assert!(!counts.is_empty());
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Runs the ensemble for each case: one run for pure fleets, `runs` seeded
/// random compositions otherwise. Runs execute in parallel; results are
/// reduced in case order, so output is independent of scheduling.
pub fn run_sweep(cases: &[SweepCase], runs: usize, master_seed: u64) -> Vec<EnsembleResult> {
    let jobs: Vec<(usize, usize)> = cases
        .iter()
        .enumerate()
        .flat_map(|(case_idx, case)| {
            let n_runs = if case.penetration == 0.0 || case.penetration == 1.0 {
                1
            } else {
                runs
            };
            (0..n_runs).map(move |run_idx| (case_idx, run_idx))
        })
        .collect();

    let outcomes: Vec<(usize, usize, Result<usize, String>)> = jobs
        .par_iter()
        .map(|&(case_idx, run_idx)| {
            let case = &cases[case_idx];
            let mut config = discharge_scenario(case.experiment, case.model, None);
            config.queue.penetration = case.penetration;
            config.queue.tech = case.tech;
            config.seed = mix_seed(master_seed, case.seed_key(), run_idx as u64);
            let result = run(&config)
                .map(|out| throughput(&out.records, COUNT_WINDOW))
                .map_err(|e| e.to_string());
            (case_idx, run_idx, result)
        })
        .collect();

    let mut results: Vec<EnsembleResult> = cases
        .iter()
        .map(|&case| EnsembleResult {
            case,
            seed: master_seed,
            counts: Vec::new(),
            failures: Vec::new(),
            median: f64::NAN,
        })
        .collect();
    for (case_idx, run_idx, outcome) in outcomes {
        match outcome {
            Ok(count) => results[case_idx].counts.push(count),
            Err(message) => results[case_idx].failures.push((run_idx, message)),
        }
    }
    for result in &mut results {
        if !result.counts.is_empty() {
            result.median = median_count(&result.counts);
        }
    }
    results
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputCell {
    pub model: CarFollowModel,
    pub a_max: f64,
    pub experiment: Experiment,
    pub count: usize,
}

/// Pure-ordinary throughput for each (model, a_max, experiment) combination.
pub fn acceleration_sweep(
    a_max_values: &[f64],
) -> Result<Vec<ThroughputCell>, crate::microsim::SimError> {
    let mut cells = Vec::new();
    for &a_max in a_max_values {
        for experiment in Experiment::ALL {
            for model in CarFollowModel::ALL {
                let config = discharge_scenario(experiment, model, Some(a_max));
                let out = run(&config)?;
                cells.push(ThroughputCell {
                    model,
                    a_max,
                    experiment,
                    count: throughput(&out.records, COUNT_WINDOW),
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::preset_params;
    use crate::scenario::rng_from_seed;

    #[test]
    fn equilibrium_headways_per_class() {
        let cases = [
            (VehicleClass::Ordinary, 2.5, 1440.0),
            (VehicleClass::Acc, 1.5, 2400.0),
            (VehicleClass::Cacc, 1.2, 3000.0),
        ];
        for (class, headway, vph) in cases {
            let p = preset_params(class);
            assert!(
                (equilibrium_headway(&p) - headway).abs() < 1e-12,
                "{class:?}"
            );
            assert!((equilibrium_flow_vph(&p) - vph).abs() < 1e-9, "{class:?}");
        }
    }

    #[test]
    fn mixed_flow_endpoints_and_midpoint() {
        let ord = preset_params(VehicleClass::Ordinary);
        let acc = preset_params(VehicleClass::Acc);
        let cacc = preset_params(VehicleClass::Cacc);
        assert!((mixed_equilibrium_flow(0.0, &acc, &ord, None) - 24.0).abs() < 1e-12);
        assert!((mixed_equilibrium_flow(1.0, &acc, &ord, None) - 40.0).abs() < 1e-12);
        assert!((mixed_equilibrium_flow(1.0, &cacc, &ord, None) - 50.0).abs() < 1e-9);
        // 50% ACC: average headway 2.0 s.
        assert!((mixed_equilibrium_flow(0.5, &acc, &ord, None) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn link_capacity_caps_cacc_flow() {
        let ord = preset_params(VehicleClass::Ordinary);
        let cacc = preset_params(VehicleClass::Cacc);
        let link = Some(LinkRestriction {
            length: RED_LIGHT_OFFSET,
            lanes: 1.0,
        });
        let flow = mixed_equilibrium_flow(1.0, &cacc, &ord, link);
        assert!((flow - 37.5).abs() < 1e-12, "{flow}");
        // Ordinary fleet is not link-limited on a 300 m link.
        let base = mixed_equilibrium_flow(0.0, &cacc, &ord, link);
        assert!((base - 24.0).abs() < 1e-12, "{base}");
    }

    #[test]
    fn composition_counts_and_determinism() {
        let mut rng = rng_from_seed(42);
        let fleet = compose_queue(40, 0.5, VehicleClass::Cacc, &mut rng);
        assert_eq!(fleet.len(), 40);
        assert_eq!(
            fleet.iter().filter(|&&c| c == VehicleClass::Cacc).count(),
            20
        );

        let mut rng2 = rng_from_seed(42);
        assert_eq!(fleet, compose_queue(40, 0.5, VehicleClass::Cacc, &mut rng2));

        let mut rng3 = rng_from_seed(42);
        assert!(compose_queue(40, 0.0, VehicleClass::Acc, &mut rng3)
            .iter()
            .all(|&c| c == VehicleClass::Ordinary));
        let mut rng4 = rng_from_seed(42);
        assert!(compose_queue(40, 1.0, VehicleClass::Acc, &mut rng4)
            .iter()
            .all(|&c| c == VehicleClass::Acc));
    }

    #[test]
    fn sweep_grid_is_72_cases_plus_baselines() {
        let cases = full_sweep_cases();
        assert_eq!(cases.len(), 84);
        assert_eq!(cases.iter().filter(|c| c.penetration > 0.0).count(), 72);
    }

    #[test]
    fn median_even_count_convention() {
        assert_eq!(median_count(&[3]), 3.0);
        assert_eq!(median_count(&[1, 2]), 1.5);
        assert_eq!(median_count(&[5, 1, 3, 2]), 2.5);
    }
}
