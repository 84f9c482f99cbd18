//! `cycloid`: runs the dynamometer procedures, robot comparison, bus
//! analysis, control loop and teleop replay, writing CSV outputs and a run
//! manifest under the output directory.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

mod output;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cycloid_core::benchmark::{self, RobotSpec, WeightMode};
use cycloid_core::control::{self, MlpPolicy, Robot};
use cycloid_core::dyno::{self, Sampling, UnitVariation, DEFAULT_SEED};
use cycloid_core::fieldbus::{self, BusConfig};
use cycloid_core::kinematics::KinematicChain;
use cycloid_core::teleop::{self, FrameAlignment, PoseStream, ReplayConfig, TeleopMode};
use cycloid_core::{config, ActuatorSpec, Error};
use nalgebra::UnitQuaternion;
use serde_json::json;

pub use output::{check_relative, sha256_hex, RunManifest, MANIFEST_NAME};
use output::Run;

pub const OUT_DIR_ENV: &str = "CYCLOID_OUT_DIR";

/// A failed invocation with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

/// Errors while running a procedure: bad parameters are validation errors,
/// everything else is a runtime failure.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::usage(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

/// Errors while loading inputs are always validation errors.
fn load<T>(r: cycloid_core::Result<T>, what: &str) -> Result<T, Failure> {
    r.map_err(|e| Failure::usage(format!("{what}: {e}")))
}

#[derive(Debug, Parser)]
#[command(name = "cycloid", version, about = "Cycloidal actuator and robot evaluation toolkit")]
pub struct Cli {
    /// Directory that receives all outputs.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    pub out_dir: PathBuf,
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Subdirectory of the output directory for this run (default: the subcommand name).
    #[arg(long, global = true)]
    pub run_name: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Virtual dynamometer procedures.
    #[command(subcommand)]
    Dyno(DynoCmd),
    /// Cross-platform robot comparison.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// CAN bus load analysis.
    #[command(subcommand)]
    Bus(BusCmd),
    /// Two-rate control loop with a policy.
    #[command(subcommand)]
    Ctrl(CtrlCmd),
    /// Teleoperation replay.
    #[command(subcommand)]
    Teleop(TeleopCmd),
    /// Check config files against their schemas without running anything.
    Validate {
        #[arg(required = true)]
        paths: Vec<String>,
    },
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ActuatorArg {
    /// Preset name (6512, 5010) or path to an actuator TOML.
    #[arg(long, default_value = "6512")]
    pub actuator: String,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct VariationArgs {
    #[arg(long, default_value_t = 0.0042)]
    pub backlash_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub stiffness_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub friction_sigma: f64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Stratified)]
    pub sampling: SamplingArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
pub enum SamplingArg {
    Stratified,
    Independent,
}

impl VariationArgs {
    fn variation(&self) -> UnitVariation {
        UnitVariation {
            backlash_sigma: self.backlash_sigma,
            stiffness_sigma: self.stiffness_sigma,
            friction_sigma: self.friction_sigma,
            sampling: match self.sampling {
                SamplingArg::Stratified => Sampling::Stratified,
                SamplingArg::Independent => Sampling::Independent,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum DynoCmd {
    /// Efficiency map over a torque/speed grid.
    Efficiency {
        #[command(flatten)]
        act: ActuatorArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])]
        torques: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.5, 3.0])]
        speeds: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        settle: f64,
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        #[arg(long, default_value_t = dyno::DEFAULT_LOAD_CELL_SIGMA)]
        load_cell_sigma: f64,
    },
    /// Locked-output torque ramp and stiffness fit.
    Stiffness {
        #[command(flatten)]
        act: ActuatorArg,
        #[arg(long, default_value_t = 20.0)]
        max_torque: f64,
        #[arg(long, default_value_t = 0.25)]
        step: f64,
        #[arg(long, default_value_t = 0.2)]
        hold: f64,
        #[arg(long, default_value_t = 4.0)]
        fit_min: f64,
        #[arg(long, default_value_t = 10.0)]
        fit_max: f64,
        #[arg(long, default_value_t = dyno::DEFAULT_LOAD_CELL_SIGMA)]
        load_cell_sigma: f64,
    },
    /// Backlash of a freshly drawn batch of units.
    Backlash {
        #[command(flatten)]
        act: ActuatorArg,
        #[arg(long, default_value_t = 6)]
        units: usize,
        #[arg(long, default_value_t = 0.2)]
        probe: f64,
        #[arg(long, default_value_t = 0.5)]
        hold: f64,
        #[command(flatten)]
        variation: VariationArgs,
    },
    /// Accelerated pendulum-lifting durability campaign.
    Durability {
        #[command(flatten)]
        act: ActuatorArg,
        #[arg(long, default_value_t = 60.0)]
        hours: f64,
        #[arg(long, default_value_t = 0.5)]
        frequency: f64,
        #[arg(long, default_value_t = 0.5)]
        mass: f64,
        #[arg(long, default_value_t = 0.5)]
        length: f64,
    },
    /// Torque tracking and efficiency across a printed batch.
    Consistency {
        #[command(flatten)]
        act: ActuatorArg,
        #[arg(long, default_value_t = 6)]
        units: usize,
        #[arg(long, default_value_t = 2)]
        printers: usize,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0])]
        torques: Vec<f64>,
        #[command(flatten)]
        variation: VariationArgs,
    },
    /// End-effector repeatability of an arm built from one actuator type.
    Reach {
        #[command(flatten)]
        act: ActuatorArg,
        /// Arm morphology JSON.
        #[arg(long)]
        arm: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Override the actuator's backlash (rad).
        #[arg(long)]
        backlash: Option<f64>,
        /// Also run each of these backlash values (rad).
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Treat encoders as exact.
        #[arg(long)]
        infinite_resolution: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
pub enum WeightArg {
    Weight,
    Mass,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Rank robot specs by performance per cost.
    Compare {
        #[arg(required = true)]
        specs: Vec<String>,
        /// Denominator of the performance factor.
        #[arg(long, value_enum, default_value_t = WeightArg::Weight)]
        mode: WeightArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum BusCmd {
    /// Worst-case utilization for the given device counts.
    Analyze {
        #[arg(long, value_delimiter = ',', default_values_t = [6usize])]
        devices: Vec<usize>,
        #[arg(long, default_value_t = fieldbus::DEFAULT_CYCLE_RATE)]
        rate: f64,
        #[arg(long, default_value_t = fieldbus::DEFAULT_BITRATE)]
        bitrate: f64,
        #[arg(long, default_value_t = fieldbus::DEFAULT_FRAMES_PER_DEVICE)]
        frames_per_device: u32,
    },
}

#[derive(Debug, Subcommand)]
pub enum CtrlCmd {
    /// Run the control loop for a fixed duration.
    Run {
        /// Robot control config (TOML).
        #[arg(long)]
        robot: String,
        /// Policy file.
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Velocity command (vx, vy, yaw rate).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.0, 0.0])]
        command: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
pub enum ModeArg {
    Headless,
    Vr,
}

#[derive(Debug, Subcommand)]
pub enum TeleopCmd {
    /// Replay a recorded controller pose stream on an arm.
    Replay {
        #[arg(long)]
        stream: String,
        /// Arm morphology JSON.
        #[arg(long)]
        arm: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Headless)]
        mode: ModeArg,
        /// VR mode: yaw of the user's frame relative to the robot base (deg).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw_deg: f64,
        #[arg(long, default_value_t = 250.0)]
        rate: f64,
        /// Initial joint angles; zeros when omitted.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        q0: Vec<f64>,
    },
}

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let args = reproducible_args(&argv);
    match execute(&cli, args) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Arguments after the program name, without output-location flags.
fn reproducible_args(argv: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        let a = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if a == "--out-dir" || a == "--run-name" {
            skip = true;
            continue;
        }
        if a.starts_with("--out-dir=") || a.starts_with("--run-name=") {
            continue;
        }
        out.push(a);
    }
    out
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Dyno(DynoCmd::Efficiency { .. }) => "dyno efficiency",
        Command::Dyno(DynoCmd::Stiffness { .. }) => "dyno stiffness",
        Command::Dyno(DynoCmd::Backlash { .. }) => "dyno backlash",
        Command::Dyno(DynoCmd::Durability { .. }) => "dyno durability",
        Command::Dyno(DynoCmd::Consistency { .. }) => "dyno consistency",
        Command::Dyno(DynoCmd::Reach { .. }) => "dyno reach",
        Command::Bench(BenchCmd::Compare { .. }) => "bench compare",
        Command::Bus(BusCmd::Analyze { .. }) => "bus analyze",
        Command::Ctrl(CtrlCmd::Run { .. }) => "ctrl run",
        Command::Teleop(TeleopCmd::Replay { .. }) => "teleop replay",
        Command::Validate { .. } => "validate",
    }
}

pub fn execute(cli: &Cli, args: Vec<String>) -> Result<(), Failure> {
    let name = command_name(&cli.command);
    if let Command::Validate { paths } = &cli.command {
        return validate(paths);
    }
    let run_name = cli.run_name.clone().unwrap_or_else(|| name.replace(' ', "-"));
    let mut run = Run::new(&cli.out_dir, &run_name, name, args, cli.seed)?;
    let summary = match &cli.command {
        Command::Dyno(cmd) => dyno_cmd(cmd, cli.seed, &mut run)?,
        Command::Bench(cmd) => bench_cmd(cmd, &mut run)?,
        Command::Bus(cmd) => bus_cmd(cmd, &mut run)?,
        Command::Ctrl(cmd) => ctrl_cmd(cmd, &mut run)?,
        Command::Teleop(cmd) => teleop_cmd(cmd, &mut run)?,
        Command::Validate { .. } => unreachable!(),
    };
    let dir = run.finish()?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn validate(paths: &[String]) -> Result<(), Failure> {
    let mut bad = 0;
    for p in paths {
        match config::validate_file(p) {
            Ok(kind) => println!("ok      {kind:<12} {p}"),
            Err(e) => {
                bad += 1;
                println!("invalid {:<12} {p}: {e}", "-");
            }
        }
    }
    if bad > 0 {
        return Err(Failure::usage(format!("{bad} of {} config files failed validation", paths.len())));
    }
    Ok(())
}

fn actuator(run: &mut Run, act: &ActuatorArg) -> Result<ActuatorSpec, Failure> {
    run.input_if_file(&act.actuator)?;
    load(ActuatorSpec::resolve(&act.actuator), &format!("actuator `{}`", act.actuator))
}

fn dyno_cmd(cmd: &DynoCmd, seed: u64, run: &mut Run) -> Result<String, Failure> {
    let mut s = String::new();
    match cmd {
        DynoCmd::Efficiency { act, torques, speeds, settle, window, load_cell_sigma } => {
            let spec = actuator(run, act)?;
            let cfg = dyno::EfficiencyConfig {
                torques: torques.clone(),
                speeds: speeds.clone(),
                settle_s: *settle,
                window_s: *window,
                load_cell_sigma: *load_cell_sigma,
            };
            run.config(json!({ "actuator": spec, "efficiency": cfg }));
            let map = dyno::run_efficiency_map(&spec, &cfg, seed)?;
            let valid = map.cells.iter().filter(|c| c.is_valid()).count();
            writeln!(s, "efficiency map: {valid} of {} cells valid", map.cells.len()).unwrap();
            run.add("efficiency.csv", map.to_csv());
        }
        DynoCmd::Stiffness { act, max_torque, step, hold, fit_min, fit_max, load_cell_sigma } => {
            let spec = actuator(run, act)?;
            let cfg = dyno::StiffnessConfig {
                max_torque: *max_torque,
                step: *step,
                hold_s: *hold,
                fit_range: [*fit_min, *fit_max],
                load_cell_sigma: *load_cell_sigma,
            };
            run.config(json!({ "actuator": spec, "stiffness": cfg }));
            let r = dyno::run_stiffness_test(&spec, &cfg, seed)?;
            writeln!(s, "stiffness: {:.2} Nm/rad from {} samples", r.fit.stiffness, r.fit.samples_used).unwrap();
            run.add("stiffness.csv", r.to_csv());
        }
        DynoCmd::Backlash { act, units, probe, hold, variation } => {
            let spec = actuator(run, act)?;
            let cfg = dyno::BacklashConfig { probe_torque: *probe, hold_s: *hold, nominal_stiffness: None };
            let v = variation.variation();
            run.config(json!({ "actuator": spec, "backlash": cfg, "variation": v, "units": units }));
            let b = dyno::backlash_batch(&spec, &v, *units, seed, &cfg)?;
            writeln!(s, "backlash: mean {:.5} rad, std {:.5} rad, max {:.5} rad", b.mean, b.std, b.max).unwrap();
            run.add("backlash.csv", b.to_csv());
        }
        DynoCmd::Durability { act, hours, frequency, mass, length } => {
            let spec = actuator(run, act)?;
            let mut cfg = dyno::DurabilityConfig { duration_h: *hours, frequency_hz: *frequency, ..Default::default() };
            cfg.pendulum.mass = *mass;
            cfg.pendulum.length = *length;
            run.config(json!({ "actuator": spec, "durability": cfg }));
            let log = dyno::run_durability(&spec, &cfg, seed)?;
            if let (Some(first), Some(last)) = (log.rows.first(), log.rows.last()) {
                writeln!(
                    s,
                    "durability: {} checkpoints, backlash {:.5} -> {:.5} rad, total efficiency {:.4} -> {:.4}",
                    log.rows.len(),
                    first.backlash,
                    last.backlash,
                    first.total_efficiency,
                    last.total_efficiency
                )
                .unwrap();
            }
            run.add("durability.csv", log.to_csv());
        }
        DynoCmd::Consistency { act, units, printers, speed, torques, variation } => {
            let spec = actuator(run, act)?;
            let cfg = dyno::ConsistencyConfig {
                units: *units,
                printers: *printers,
                variation: variation.variation(),
                speed: *speed,
                torques: torques.clone(),
                ..Default::default()
            };
            run.config(json!({ "actuator": spec, "consistency": cfg }));
            let r = dyno::run_consistency(&spec, &cfg, seed)?;
            writeln!(
                s,
                "consistency: max |torque error| {:.4} Nm, mechanical efficiency spread {:.4}",
                r.max_abs_torque_error(),
                r.efficiency_spread(false)
            )
            .unwrap();
            run.add("consistency.csv", r.to_csv());
        }
        DynoCmd::Reach { act, arm, reps, backlash, sweep, infinite_resolution } => {
            let mut spec = actuator(run, act)?;
            if let Some(b) = backlash {
                spec.transmission.backlash = *b;
            }
            run.input(arm)?;
            let chain = load(KinematicChain::load(arm), &format!("arm `{arm}`"))?;
            let cfg = dyno::ReachConfig { reps: *reps, infinite_resolution: *infinite_resolution, ..Default::default() };
            run.config(json!({ "actuator": spec, "reach": cfg, "sweep": sweep }));
            let r = dyno::run_reach_repeatability(&chain, &spec, &cfg, seed)?;
            writeln!(s, "reach: pooled sigma {:.3} mm at backlash {} rad", r.pooled_sigma * 1e3, r.backlash).unwrap();
            run.add("reach.csv", r.summary_csv());
            run.add("reach_positions.csv", r.to_csv());
            if !sweep.is_empty() {
                let mut csv = String::from("backlash_rad,pooled_sigma_m\n");
                for r in dyno::reach_backlash_sweep(&chain, &spec, &cfg, sweep, seed)? {
                    writeln!(csv, "{:?},{:?}", r.backlash, r.pooled_sigma).unwrap();
                }
                run.add("reach_sweep.csv", csv);
            }
        }
    }
    Ok(s)
}

fn bench_cmd(cmd: &BenchCmd, run: &mut Run) -> Result<String, Failure> {
    let BenchCmd::Compare { specs, mode } = cmd;
    let mut loaded = Vec::with_capacity(specs.len());
    for p in specs {
        let text = run.input(p)?;
        loaded.push(load(RobotSpec::from_toml(&text), &format!("robot spec `{p}`"))?);
    }
    let mode = match mode {
        WeightArg::Weight => WeightMode::Weight,
        WeightArg::Mass => WeightMode::Mass,
    };
    run.config(json!({ "specs": loaded, "mode": mode }));
    let rows = benchmark::compare(&loaded, mode)?;
    run.add("comparison.csv", benchmark::comparison_csv(&rows, mode));
    Ok(benchmark::comparison_table(&rows))
}

fn bus_cmd(cmd: &BusCmd, run: &mut Run) -> Result<String, Failure> {
    let BusCmd::Analyze { devices, rate, bitrate, frames_per_device } = cmd;
    let mut csv = format!(
        "# frames_per_device={frames_per_device}; every frame counted as an 8-byte data frame with worst-case stuffing\n\
         devices,cycle_rate_hz,bitrate,bits_per_cycle,utilization,feasible,slack_s\n"
    );
    let mut s = String::new();
    let mut configs = Vec::new();
    for &n in devices {
        let mut bus = BusConfig::with_device_count(n)?;
        bus.cycle_rate_hz = *rate;
        bus.bitrate = *bitrate;
        bus.frames_per_device = *frames_per_device;
        bus.validate()?;
        let f = fieldbus::cycle_feasibility(&bus);
        writeln!(
            csv,
            "{n},{:?},{:?},{},{:?},{},{:?}",
            rate, bitrate, f.bits_per_cycle, f.utilization, f.feasible as u8, f.slack_s
        )
        .unwrap();
        writeln!(
            s,
            "{n:>3} devices: utilization {:.4} ({})",
            f.utilization,
            if f.feasible { "feasible" } else { "infeasible" }
        )
        .unwrap();
        configs.push(bus);
    }
    run.config(json!({ "buses": configs }));
    run.add("bus.csv", csv);
    Ok(s)
}

fn ctrl_cmd(cmd: &CtrlCmd, run: &mut Run) -> Result<String, Failure> {
    let CtrlCmd::Run { robot, policy, duration, command } = cmd;
    run.input(robot)?;
    let policy_text = run.input(policy)?;
    let bot = load(Robot::load(robot), &format!("robot `{robot}`"))?;
    let pol = load(MlpPolicy::from_text(&policy_text), &format!("policy `{policy}`"))?;
    run.config(json!({
        "robot": bot.name,
        "timing": bot.timing,
        "joints": bot.joints.iter().map(|j| &j.name).collect::<Vec<_>>(),
        "duration_s": duration,
        "command": command,
    }));
    let log = control::run_loop(&bot, &pol, command, *duration)?;
    let summary = json!({
        "low_level_ticks": log.low_level_ticks(),
        "policy_ticks": log.policy_ticks(),
        "decimation": log.decimation,
        "layout_hash": log.layout_hash,
        "max_torque_ratio": log.max_torque_ratio(),
        "within_torque_headroom": log.within_torque_headroom(),
        "torque_headroom": control::TORQUE_HEADROOM,
        "clamp_events": log.clamp_events,
        "buses": log.buses,
    });
    run.add("trajectory.csv", log.trajectory_csv());
    run.add("policy.csv", log.policy_csv());
    run.add("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n");
    Ok(format!(
        "ctrl: {} low-level ticks, {} policy ticks, max torque ratio {:.3}\n",
        log.low_level_ticks(),
        log.policy_ticks(),
        log.max_torque_ratio()
    ))
}

fn teleop_cmd(cmd: &TeleopCmd, run: &mut Run) -> Result<String, Failure> {
    let TeleopCmd::Replay { stream, arm, mode, yaw_deg, rate, q0 } = cmd;
    let stream_text = run.input(stream)?;
    run.input(arm)?;
    let poses = load(PoseStream::from_csv_reader(stream_text.as_bytes()), &format!("stream `{stream}`"))?;
    let chain = load(KinematicChain::load(arm), &format!("arm `{arm}`"))?;
    let q0 = if q0.is_empty() { vec![0.0; chain.dof()] } else { q0.clone() };
    let mode = match mode {
        ModeArg::Headless => TeleopMode::Headless,
        ModeArg::Vr => TeleopMode::Vr,
    };
    let cfg = ReplayConfig {
        rate_hz: *rate,
        alignment: FrameAlignment::from_rotation(UnitQuaternion::from_euler_angles(0.0, 0.0, yaw_deg.to_radians())),
        ..Default::default()
    };
    run.config(json!({ "mode": format!("{mode:?}").to_lowercase(), "replay": cfg, "q0": q0 }));
    let log = teleop::replay(&poses, mode, &chain, &q0, &cfg)?;
    let summary = json!({
        "ticks": log.ticks.len(),
        "tracking_rms_m": log.tracking_rms(),
        "max_engage_jump_m": log.max_engage_jump(),
        "singular_ticks": log.ticks.iter().filter(|t| t.singular).count(),
    });
    run.add("replay.csv", log.to_csv());
    run.add("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n");
    let singular = log.ticks.iter().filter(|t| t.singular).count();
    if singular * 2 > log.ticks.len() {
        eprintln!("note: {singular} of {} ticks near a singularity; pass --q0 with a bent start pose", log.ticks.len());
    }
    Ok(format!(
        "teleop: {} ticks, tracking rms {:.3} mm\n",
        log.ticks.len(),
        log.tracking_rms() * 1e3
    ))
}
