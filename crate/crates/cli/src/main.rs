use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fiberlink::cascade::{plan_cascade, predict_cascade_adev, CascadePlan, StationFunction};
use fiberlink::metrology::{allan_deviation, pi_counter, tracking_filter, welch_psd, WelchConfig};
use fiberlink::scenario::{
    load_config, parse_series_csv, render_report, run_to_dir, segment_scenario_text,
    validate_config, write_adev, write_adev_csv, write_psd, ConfigError, ConfigFile, RouteConfig,
    Scenario,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_SIMULATION: u8 = 2;
const EXIT_IO: u8 = 3;

/// Simulate and analyse optical frequency transfer over compensated fiber links.
#[derive(Parser)]
#[command(name = "fiberlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario or route file and list every problem found.
    Validate { config: PathBuf },
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Plan a cascaded route and predict its stability.
    Plan {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compute ADEV or PSD of a `t_s,phase_rad` CSV series.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (default: the file's [outputs] directory, else out/<name>).
    #[arg(long, env = "FIBERLINK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "mode")]
struct Mode {
    /// Overlapping Allan deviation.
    #[arg(long)]
    adev: bool,
    /// Welch phase PSD.
    #[arg(long)]
    psd: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    series: PathBuf,
    #[command(flatten)]
    mode: Mode,
    /// Counter gate in seconds.
    #[arg(long, default_value_t = 0.01)]
    gate_s: f64,
    /// Carrier frequency used to normalise the phase.
    #[arg(long, default_value_t = fiberlink::link::DEFAULT_CARRIER_HZ)]
    nu0_hz: f64,
    /// Averaging times, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
    taus_s: Vec<f64>,
    /// Optional tracking filter bandwidth before counting.
    #[arg(long)]
    filter_hz: Option<f64>,
    /// Welch segment length in samples.
    #[arg(long)]
    segment: Option<usize>,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("fiberlink: {msg}");
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ConfigFile, ExitCode> {
    load_config(path).map_err(|e| match e {
        ConfigError::Io(_) => fail(EXIT_IO, e),
        ConfigError::Invalid(_) => fail(EXIT_CONFIG, e),
    })
}

fn out_dir(flag: Option<PathBuf>, from_file: Option<&PathBuf>, name: &str) -> PathBuf {
    flag.or_else(|| from_file.cloned())
        .unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn cmd_validate(path: &Path) -> ExitCode {
    match validate_config(path) {
        Err(e) => fail(EXIT_IO, format!("cannot read {}: {e}", path.display())),
        Ok(d) => {
            print!("{d}");
            if d.is_valid() {
                println!(
                    "{}: ok ({} warning{})",
                    path.display(),
                    d.warnings.len(),
                    if d.warnings.len() == 1 { "" } else { "s" }
                );
                ExitCode::SUCCESS
            } else {
                println!("{}: {} error(s)", path.display(), d.errors.len());
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}

fn cmd_run(path: &Path, out: OutArgs) -> ExitCode {
    let scenario: Scenario = match load(path) {
        Ok(ConfigFile::Scenario(s)) => s,
        Ok(ConfigFile::Route(_)) => {
            return fail(EXIT_CONFIG, "this is a route file; use `fiberlink plan`")
        }
        Err(code) => return code,
    };
    let dir = out_dir(out.out, scenario.output_dir.as_ref(), &scenario.name);
    match run_to_dir(&scenario, &dir) {
        Ok(outcome) => {
            print!("{}", render_report(&outcome.report));
            println!("artifacts written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code() as u8, e),
    }
}

fn write_plan(cfg: &RouteConfig, plan: &CascadePlan, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = String::from("segment_id,length_km,loss_db,tau_s,bw_hz\n");
    for (i, s) in plan.segments.iter().enumerate() {
        w.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            i + 1,
            s.length_km,
            s.loss_db,
            s.tau_oneway_s,
            s.loop_bandwidth_cap_hz
        ));
    }
    std::fs::write(dir.join("plan.csv"), w)?;

    let mut st = String::from("station_id,position_km,functions,note\n");
    for (i, s) in plan.stations.iter().enumerate() {
        let f: Vec<&str> = s
            .functions
            .iter()
            .map(|f| match f {
                StationFunction::SendBack => "send_back",
                StationFunction::AmplifyFilter => "amplify_filter",
                StationFunction::CompensateNext => "compensate_next",
            })
            .collect();
        st.push_str(&format!(
            "{},{:.8e},{},\"{}\"\n",
            i,
            s.position_km,
            f.join("+"),
            s.note
        ));
    }
    std::fs::write(dir.join("stations.csv"), st)?;

    if let Some(seg) = plan.segments.first() {
        std::fs::write(
            dir.join("segment.cfg"),
            segment_scenario_text(&cfg.name, &cfg.route, seg.length_km, seg.loss_db, 1),
        )?;
    }
    Ok(())
}

fn cmd_plan(path: &Path, out: OutArgs) -> ExitCode {
    let cfg = match load(path) {
        Ok(ConfigFile::Route(r)) => r,
        Ok(ConfigFile::Scenario(_)) => {
            return fail(EXIT_CONFIG, "this is a scenario file; use `fiberlink run`")
        }
        Err(code) => return code,
    };
    let plan = match plan_cascade(&cfg.route) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let adev = match predict_cascade_adev(
        &plan,
        &cfg.route.lineic_noise,
        &cfg.taus_s,
        &cfg.measurement,
    ) {
        Ok(a) => a,
        Err(e) => return fail(EXIT_SIMULATION, e),
    };
    let dir = out_dir(out.out, cfg.output_dir.as_ref(), &cfg.name);
    let written = write_plan(&cfg, &plan, &dir)
        .and_then(|_| write_adev_csv(&dir.join("predicted_adev.csv"), &adev));
    if let Err(e) = written {
        return fail(EXIT_IO, format!("cannot write artifacts: {e}"));
    }
    println!(
        "{}: {} segment(s), {} repeater station(s)",
        cfg.name,
        plan.segments.len(),
        plan.interior_stations().len()
    );
    for (i, s) in plan.segments.iter().enumerate() {
        println!(
            "  segment {}: {:.1} km, {:.2} dB, delay cap {:.1} Hz",
            i + 1,
            s.length_km,
            s.loss_db,
            s.loop_bandwidth_cap_hz
        );
    }
    for p in &adev.points {
        println!("  predicted ADEV at {} s: {:.3e}", p.tau_s, p.adev);
    }
    println!("artifacts written to {}", dir.display());
    ExitCode::SUCCESS
}

fn cmd_analyze(a: AnalyzeArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&a.series) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_IO, format!("cannot read {}: {e}", a.series.display())),
    };
    let series = match parse_series_csv(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let mut sink: Box<dyn std::io::Write> = match &a.out {
        Some(p) => match std::fs::File::create(p) {
            Ok(f) => Box::new(f),
            Err(e) => return fail(EXIT_IO, format!("cannot create {}: {e}", p.display())),
        },
        None => Box::new(std::io::stdout().lock()),
    };
    let result = if a.mode.adev {
        let filtered = match a.filter_hz {
            Some(b) => tracking_filter(&series, b),
            None => Ok(series.clone()),
        };
        filtered
            .and_then(|s| pi_counter(&s, a.gate_s, a.nu0_hz))
            .and_then(|y| allan_deviation(&y, &a.taus_s))
            .map(|adev| write_adev(&mut sink, &adev))
    } else {
        let cfg = a
            .segment
            .map(WelchConfig::new)
            .unwrap_or_else(|| WelchConfig::for_length(series.len(), 8));
        welch_psd(&series, &cfg).map(|psd| write_psd(&mut sink, &psd))
    };
    match result {
        Err(e) => fail(EXIT_SIMULATION, e),
        Ok(Err(e)) => fail(EXIT_IO, e),
        Ok(Ok(())) => ExitCode::SUCCESS,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Plan { config, out } => cmd_plan(&config, out),
        Command::Analyze(a) => cmd_analyze(a),
    }
}
