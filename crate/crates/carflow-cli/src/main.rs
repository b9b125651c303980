//! Command-line harness: micro/macro/sweep/platoon runs and equilibrium
//! analytics, exported as plot-ready CSV with a checksummed run manifest.
//!
//! Exit codes: 0 ok, 2 input error, 3 numerical/stability error, 4 collision.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use carflow::experiments::{
    full_sweep_cases, mixed_equilibrium_flow, mixed_equilibrium_headway, run_sweep, Experiment,
    LinkRestriction, SweepCase, PENETRATIONS, RED_LIGHT_OFFSET,
};
use carflow::macrosim::{init_red_light_scenario_with, run_macro, MacroError, MacroScenario};
use carflow::microsim::{run, throughput, RunOutput, SimError};
use carflow::params::{preset_params, CarFollowModel, VehicleClass};
use carflow::scenario::{parse_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "carflow", version, about = "Car-following simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a corridor scenario; writes trajectories.csv, detector.csv, throughput.txt
    Micro(RunArgs),
    /// Run the macroscopic red-light corridor; writes flow/speed contour matrices
    Macro(MacroArgs),
    /// Run the ACC/CACC penetration sweep; writes per-run and median tables
    Sweep(SweepArgs),
    /// Run a corridor scenario with platoon management; adds platoon_events.csv
    Platoon(RunArgs),
    /// Export equilibrium headway and flow analytics
    Equilibria(EquilibriaArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Gipps,
    Iidm,
    Helly,
}

impl From<ModelArg> for CarFollowModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gipps => CarFollowModel::Gipps,
            ModelArg::Iidm => CarFollowModel::Iidm,
            ModelArg::Helly => CarFollowModel::Helly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TechArg {
    Acc,
    Cacc,
}

impl From<TechArg> for VehicleClass {
    fn from(t: TechArg) -> Self {
        match t {
            TechArg::Acc => VehicleClass::Acc,
            TechArg::Cacc => VehicleClass::Cacc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML); defaults apply when omitted
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory sampling stride in steps (0 disables the trajectory log)
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Throughput counting window in seconds
    #[arg(long, default_value_t = 60.0)]
    window: f64,
    #[arg(long)]
    model: Option<ModelArg>,
    /// Maximal acceleration override (m/s²)
    #[arg(long)]
    amax: Option<f64>,
    /// Fraction of tech vehicles in the initial queue
    #[arg(long)]
    penetration: Option<f64>,
    #[arg(long)]
    tech: Option<TechArg>,
    #[arg(long)]
    platooning: Option<Toggle>,
}

#[derive(Args)]
struct MacroArgs {
    /// Scenario file (TOML) supplying model, a_max, dt, and horizon
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Contour sampling stride in steps
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    model: Option<ModelArg>,
    #[arg(long)]
    amax: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ensemble size for 0 < penetration < 1 (pure fleets always run once)
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated penetration grid; defaults to the full sweep grid
    #[arg(long, value_delimiter = ',')]
    penetrations: Option<Vec<f64>>,
}

#[derive(Args)]
struct EquilibriaArgs {
    #[arg(long)]
    out: PathBuf,
    /// Length (m) of the link between the two intersections
    #[arg(long, default_value_t = RED_LIGHT_OFFSET)]
    link_length: f64,
    #[arg(long, default_value_t = 1.0)]
    lanes: f64,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numeric(String),
    Collision(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Collision(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numeric(m) | CliError::Collision(m) => m,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::Collision { .. } | SimError::Law { .. } => CliError::Collision(e.to_string()),
            SimError::EmptyComposition | SimError::Config(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<MacroError> for CliError {
    fn from(e: MacroError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

/// Collects output files and writes the checksum manifest last.
struct OutputDir {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(&format!("creating {}", dir.display()), e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
        let digest = Sha256::digest(content.as_bytes());
        self.files.push((name.to_string(), hex::encode(digest)));
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        scenario: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<(), CliError> {
        let manifest = serde_json::json!({
            "command": command,
            "scenario": scenario.map(|p| p.display().to_string()),
            "seed": seed,
            "out_dir": self.dir.display().to_string(),
            "files": self.files.iter().map(|(name, sha256)| {
                serde_json::json!({ "name": name, "sha256": sha256 })
            }).collect::<Vec<_>>(),
        });
        let path = self.dir.join("manifest.json");
        fs::write(&path, format!("{:#}\n", manifest))
            .map_err(|e| io_err(&format!("writing {}", path.display()), e))
    }
}

/// RFC-4180-style field quoting; numeric fields pass through untouched.
fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| io_err(&format!("reading scenario {}", p.display()), e))?;
            parse_scenario(&text).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

fn apply_run_overrides(config: &mut ScenarioConfig, args: &RunArgs) {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(model) = args.model {
        config.model = model.into();
    }
    if let Some(amax) = args.amax {
        config.params.a_max = Some(amax);
    }
    if let Some(penetration) = args.penetration {
        config.queue.penetration = penetration;
    }
    if let Some(tech) = args.tech {
        config.queue.tech = tech.into();
    }
    if let Some(toggle) = args.platooning {
        config.platooning.enabled = matches!(toggle, Toggle::On);
    }
    config.trajectory_stride = args.stride;
}

fn write_micro_outputs(
    out: &mut OutputDir,
    result: &RunOutput,
    window: f64,
) -> Result<(), CliError> {
    let mut trajectories = String::from("time,vehicle,x,v,a\n");
    for s in &result.trajectories {
        writeln!(
            trajectories,
            "{},{},{},{},{}",
            s.time, s.vehicle, s.pos, s.speed, s.accel
        )
        .unwrap();
    }
    out.write("trajectories.csv", &trajectories)?;

    let mut detector = String::from("detector_position,vehicle,time,speed,accel,gap,flow_vph\n");
    for r in &result.records {
        writeln!(
            detector,
            "{},{},{},{},{},{},{}",
            r.position,
            r.vehicle,
            r.time,
            r.speed,
            r.accel,
            r.gap.map(|g| g.to_string()).unwrap_or_default(),
            r.flow_vph.map(|f| f.to_string()).unwrap_or_default(),
        )
        .unwrap();
    }
    out.write("detector.csv", &detector)?;

    let count = throughput(&result.records, window);
    out.write("throughput.txt", &format!("{count}\n"))?;
    Ok(())
}

fn cmd_micro(args: &RunArgs, force_platooning: bool) -> Result<(), CliError> {
    let mut config = load_scenario(args.scenario.as_deref())?;
    apply_run_overrides(&mut config, args);
    if force_platooning {
        config.platooning.enabled = true;
    }
    config
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let result = run(&config)?;
    let mut out = OutputDir::create(&args.out)?;
    write_micro_outputs(&mut out, &result, args.window)?;
    if config.platooning.enabled {
        let mut events = String::from("time,event,vehicle,leader\n");
        for e in &result.platoon_events {
            writeln!(
                events,
                "{},{},{},{}",
                e.time,
                e.kind.name(),
                e.vehicle,
                e.leader
            )
            .unwrap();
        }
        out.write("platoon_events.csv", &events)?;
    }
    let command = if force_platooning { "platoon" } else { "micro" };
    out.finish(command, args.scenario.as_deref(), Some(result.seed))
}

fn cmd_macro(args: &MacroArgs) -> Result<(), CliError> {
    let mut config = load_scenario(args.scenario.as_deref())?;
    if let Some(model) = args.model {
        config.model = model.into();
    }
    if let Some(amax) = args.amax {
        config.params.a_max = Some(amax);
    }
    config
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let params = config.params_for(VehicleClass::Ordinary);
    let state = init_red_light_scenario_with(&params, config.dt)?;
    let mut scenario = MacroScenario {
        state,
        model: config.model,
        params,
    };
    let initial_mass = scenario.state.total_vehicles();
    let grid = run_macro(&mut scenario, config.horizon, args.stride);

    let mut out = OutputDir::create(&args.out)?;
    let header: String = std::iter::once("time".to_string())
        .chain(grid.positions.iter().map(|p| p.to_string()))
        .collect::<Vec<_>>()
        .join(",");
    for (name, matrix) in [
        ("flow_contour.csv", &grid.flow),
        ("speed_contour.csv", &grid.speed),
    ] {
        let mut text = header.clone();
        text.push('\n');
        for (t, row) in grid.times.iter().zip(matrix.iter()) {
            let line: String = std::iter::once(t.to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect::<Vec<_>>()
                .join(",");
            text.push_str(&line);
            text.push('\n');
        }
        out.write(name, &text)?;
    }
    let defect = scenario.state.conservation_error(initial_mass);
    println!(
        "conservation: initial {:.6} veh, final {:.6} veh, relative error {:.3e}",
        initial_mass,
        scenario.state.total_vehicles(),
        defect / initial_mass
    );
    out.finish("macro", args.scenario.as_deref(), None)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let config = load_scenario(args.scenario.as_deref())?;
    let seed = args.seed.unwrap_or(config.seed);
    let cases: Vec<SweepCase> = match &args.penetrations {
        None => full_sweep_cases(),
        Some(grid) => {
            for &p in grid {
                if !(0.0..=1.0).contains(&p) {
                    return Err(CliError::Input(format!("penetration {p} outside [0, 1]")));
                }
            }
            let mut cases = Vec::new();
            for experiment in Experiment::ALL {
                for model in CarFollowModel::ALL {
                    for tech in [VehicleClass::Acc, VehicleClass::Cacc] {
                        for &penetration in grid {
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
    };
    let results = run_sweep(&cases, args.runs, seed);

    let mut out = OutputDir::create(&args.out)?;
    let mut runs_csv =
        String::from("experiment,model,tech,penetration,run,seed,throughput,error\n");
    let mut medians_csv = String::from(
        "experiment,model,tech,penetration,runs,failures,median,equilibrium_veh_per_min\n",
    );
    let ordinary = preset_params(VehicleClass::Ordinary);
    let mut warnings = 0usize;
    for r in &results {
        let case = &r.case;
        let tech = match case.tech {
            VehicleClass::Acc => "acc",
            VehicleClass::Cacc => "cacc",
            VehicleClass::Ordinary => "ordinary",
        };
        let mut failure_iter = r.failures.iter().peekable();
        let total_runs = r.counts.len() + r.failures.len();
        let mut count_iter = r.counts.iter();
        for run_idx in 0..total_runs {
            let (throughput_field, error_field) =
                if failure_iter.peek().is_some_and(|(idx, _)| *idx == run_idx) {
                    let (_, message) = failure_iter.next().unwrap();
                    warnings += 1;
                    (String::new(), csv_field(message))
                } else {
                    (count_iter.next().unwrap().to_string(), String::new())
                };
            writeln!(
                runs_csv,
                "{},{},{},{},{},{},{},{}",
                case.experiment.name(),
                case.model.name(),
                tech,
                case.penetration,
                run_idx,
                seed,
                throughput_field,
                error_field,
            )
            .unwrap();
        }
        let median_field = if r.median.is_nan() {
            String::new()
        } else {
            r.median.to_string()
        };
        // The matching point of the theoretical curve, link-capped when the
        // downstream red restricts storage, for direct overlay plotting.
        let link = (case.experiment == Experiment::RedLightDownstream).then_some(LinkRestriction {
            length: RED_LIGHT_OFFSET,
            lanes: 1.0,
        });
        let equilibrium =
            mixed_equilibrium_flow(case.penetration, &preset_params(case.tech), &ordinary, link);
        writeln!(
            medians_csv,
            "{},{},{},{},{},{},{},{}",
            case.experiment.name(),
            case.model.name(),
            tech,
            case.penetration,
            total_runs,
            r.failures.len(),
            median_field,
            equilibrium,
        )
        .unwrap();
    }
    out.write("sweep_runs.csv", &runs_csv)?;
    out.write("sweep_medians.csv", &medians_csv)?;
    out.write(
        "equilibrium_curves.csv",
        &equilibrium_curves_csv(RED_LIGHT_OFFSET, 1.0),
    )?;
    if warnings > 0 {
        eprintln!("warning: {warnings} runs aborted (collisions); see sweep_runs.csv");
    }
    out.finish("sweep", args.scenario.as_deref(), Some(seed))
}

fn equilibrium_curves_csv(link_length: f64, lanes: f64) -> String {
    let ordinary = preset_params(VehicleClass::Ordinary);
    let link = LinkRestriction {
        length: link_length,
        lanes,
    };
    let mut text =
        String::from("tech,penetration,headway_s,flow_veh_per_min,link_capped_veh_per_min\n");
    for (name, class) in [("acc", VehicleClass::Acc), ("cacc", VehicleClass::Cacc)] {
        let tech = preset_params(class);
        let mut grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for &p in &PENETRATIONS {
            if !grid.contains(&p) {
                grid.push(p);
            }
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &penetration in &grid {
            let headway = mixed_equilibrium_headway(penetration, &tech, &ordinary);
            let flow = mixed_equilibrium_flow(penetration, &tech, &ordinary, None);
            let capped = mixed_equilibrium_flow(penetration, &tech, &ordinary, Some(link));
            writeln!(text, "{name},{penetration},{headway},{flow},{capped}").unwrap();
        }
    }
    text
}

fn cmd_equilibria(args: &EquilibriaArgs) -> Result<(), CliError> {
    let mut out = OutputDir::create(&args.out)?;
    out.write(
        "equilibrium_curves.csv",
        &equilibrium_curves_csv(args.link_length, args.lanes),
    )?;
    for class in [
        VehicleClass::Ordinary,
        VehicleClass::Acc,
        VehicleClass::Cacc,
    ] {
        let p = preset_params(class);
        println!(
            "{:?}: headway {:.3} s, flow {:.1} veh/h",
            class,
            carflow::experiments::equilibrium_headway(&p),
            carflow::experiments::equilibrium_flow_vph(&p)
        );
    }
    out.finish("equilibria", None, None)
}

fn real_main() -> Result<(), CliError> {
    if let Ok(threads) = std::env::var("CARFLOW_THREADS") {
        let threads: usize = threads.parse().map_err(|_| {
            CliError::Input(format!("CARFLOW_THREADS must be a count, got {threads}"))
        })?;
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cli = Cli::parse();
    match &cli.command {
        Command::Micro(args) => cmd_micro(args, false),
        Command::Platoon(args) => cmd_micro(args, true),
        Command::Macro(args) => cmd_macro(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Equilibria(args) => cmd_equilibria(args),
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}
