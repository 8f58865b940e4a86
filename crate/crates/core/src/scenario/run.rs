//! Scenario orchestration: synthesis, servo, analysis and artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Scenario;
use super::csv::{
    fmt_f64, write_adev_csv, write_budget_csv, write_psd_csv, write_rejection_csv, write_series_csv,
};
use crate::error::{Error, Result};
use crate::link::{link_budget, BudgetReport};
use crate::metrology::{
    allan_deviation, fit_adev_floor, integrated_rms_phase, pi_counter, rejection_spectrum,
    tracking_filter, welch_psd, AdevSeries, FloorFit, PsdEstimate, RejectionSpectrum, WelchConfig,
};
use crate::noise::{derive_seed, synth_stream, PhaseSeries, PowerLawNoiseModel};
use crate::servo::{
    compensated_from_drive, loop_bandwidth_limit, residual_transfer_ratio, rule_of_thumb_ratio,
    LinkDrive, NoiseDistribution, ServoConfig, SimConfig,
};

/// Relative half-width of the band averaged around the rejection frequency.
const REJECTION_BAND: f64 = 0.1;
/// Analytic conventions further apart than this are flagged in the report.
const DISCREPANCY_FLAG_DB: f64 = 3.0;

#[derive(Debug)]
pub enum RunError {
    Simulation(Error),
    Io(std::io::Error),
}

impl RunError {
    /// Process exit code: 2 for simulation failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Simulation(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Simulation(e) => write!(f, "simulation failed: {e}"),
            Self::Io(e) => write!(f, "cannot write artifacts: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        Self::Simulation(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionSummary {
    pub frequency_hz: f64,
    pub simulated_db: f64,
    /// Ideal loop, noise spread uniformly in delay.
    pub uniform_db: f64,
    /// Ideal loop, noise weighted by each span's own model.
    pub profile_db: f64,
    /// `(f * t_trip)^2`, the order-of-magnitude estimate.
    pub rule_of_thumb_db: f64,
    pub convention_gap_db: f64,
    pub convention_gap_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdevRow {
    pub tau_s: f64,
    pub filtered: f64,
    pub unfiltered: f64,
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub realizations: usize,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub analysed_duration_s: f64,
    pub one_way_delay_s: f64,
    pub oneway_delay_samples: usize,
    pub delay_cap_hz: f64,
    pub servo_enabled: bool,
    pub loop_bandwidth_hz: f64,
    pub kp: f64,
    pub ki: f64,
    pub lock_time_s: f64,
    pub saturated_samples: usize,
    pub free_psd_at_rejection_frequency: Option<f64>,
    pub rejection: RejectionSummary,
    pub integrated_phase_band_hz: (f64, f64),
    pub integrated_phase_rad: f64,
    pub free_integrated_phase_rad: f64,
    pub tracking_filter_hz: f64,
    pub unfiltered_bandwidth_hz: f64,
    pub adev: Vec<AdevRow>,
    pub unfiltered_to_filtered_ratio: Option<f64>,
    pub floor_fit: Option<FloorFit>,
    pub budget: BudgetReport,
    pub warnings: Vec<String>,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub psd_free: PsdEstimate,
    pub psd_compensated: PsdEstimate,
    pub psd_correction: PsdEstimate,
    pub rejection: RejectionSpectrum,
    pub adev_filtered: AdevSeries,
    pub adev_unfiltered: AdevSeries,
    pub adev_correction: AdevSeries,
    /// Residual of the first realization, when `export_series` is set.
    pub residual_series: Option<PhaseSeries>,
}

struct Realization {
    free: PsdEstimate,
    comp: PsdEstimate,
    corr: PsdEstimate,
    adev_f: AdevSeries,
    adev_u: AdevSeries,
    adev_c: AdevSeries,
    saturated: usize,
    residual: Option<PhaseSeries>,
}

fn servo_config(s: &Scenario) -> Result<ServoConfig> {
    let tau = s.link.one_way_delay_s();
    let bw = s.servo.bandwidth_for(tau);
    let mut cfg = ServoConfig::for_bandwidth(bw, s.servo.integrator_ratio);
    cfg.actuator_range_hz = s.servo.actuator_range_hz;
    cfg.enabled = s.servo.enabled;
    cfg.detection_noise = PowerLawNoiseModel::power_law(0.0, s.servo.detection_noise_rad2_per_hz)?;
    Ok(cfg)
}

fn measure_adev(series: &PhaseSeries, bw: f64, s: &Scenario) -> Result<AdevSeries> {
    let filtered = tracking_filter(series, bw)?;
    let y = pi_counter(
        &filtered,
        s.analysis.counter_gate_s,
        s.link.carrier_frequency_hz,
    )?;
    allan_deviation(&y, &s.analysis.taus_s)
}

fn run_one(s: &Scenario, servo: &ServoConfig, r: usize, lock_index: usize) -> Result<Realization> {
    let seed = derive_seed(s.sim.seed, "realization", r as u64);
    let sim = SimConfig {
        fs_hz: s.sim.fs_hz,
        n_samples: s.sim.n_samples(),
        seed,
    };
    let drive = LinkDrive::synthesize(&s.link, s.sim.cells_per_span, &sim)?;
    let tail_len = sim.n_samples - lock_index;
    let welch = WelchConfig {
        overlap: s.analysis.welch_overlap,
        ..WelchConfig::new(
            s.analysis
                .welch_segment_samples
                .unwrap_or_else(|| WelchConfig::for_length(tail_len, 8).segment_len),
        )
    };
    let free_tail = PhaseSeries::new(drive.forward()[lock_index..].to_vec(), sim.fs_hz, 0.0)?;
    let free = welch_psd(&free_tail, &welch)?;
    drop(free_tail);

    let result = compensated_from_drive(&drive, servo, seed)?;
    drop(drive);
    let meas = PowerLawNoiseModel::power_law(0.0, s.servo.detection_noise_rad2_per_hz)?;
    let beat_noise = synth_stream(&meas, sim.fs_hz, tail_len, seed, "measurement", 0)?;
    let residual = result.residual_phase.tail(lock_index).add(&beat_noise)?;
    drop(beat_noise);
    let correction = result.correction_phase.tail(lock_index);
    let saturated = result.saturated_samples;
    drop(result);

    let comp = welch_psd(&residual, &welch)?;
    let corr = welch_psd(&correction, &welch)?;
    let adev_f = measure_adev(&residual, s.analysis.tracking_filter_hz, s)?;
    let adev_u = measure_adev(&residual, s.analysis.unfiltered_bandwidth_hz, s)?;
    let adev_c = measure_adev(&correction, s.analysis.tracking_filter_hz, s)?;
    Ok(Realization {
        free,
        comp,
        corr,
        adev_f,
        adev_u,
        adev_c,
        saturated,
        residual: (r == 0 && s.analysis.export_series).then_some(residual),
    })
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Run every realization and analyse the pooled results.
pub fn run_scenario(s: &Scenario) -> Result<RunOutcome> {
    let servo = servo_config(s)?;
    let tau = s.link.one_way_delay_s();
    let cap = loop_bandwidth_limit(tau)?;
    let lock_time = if servo.enabled {
        servo.lock_time_s()
    } else {
        0.0
    };
    let n = s.sim.n_samples();
    let lock_index = ((lock_time * s.sim.fs_hz).ceil() as usize).min(n);
    if n - lock_index < 2 {
        return Err(Error::DurationTooShort {
            duration_s: s.sim.duration_s,
            min_s: lock_time,
        });
    }

    let mut runs = Vec::with_capacity(s.sim.realizations);
    for r in 0..s.sim.realizations {
        runs.push(run_one(s, &servo, r, lock_index)?);
    }
    let collect = |f: fn(&Realization) -> &PsdEstimate| -> Vec<PsdEstimate> {
        runs.iter().map(|r| f(r).clone()).collect()
    };
    let psd_free = PsdEstimate::average(&collect(|r| &r.free))?;
    let psd_compensated = PsdEstimate::average(&collect(|r| &r.comp))?;
    let psd_correction = PsdEstimate::average(&collect(|r| &r.corr))?;
    let pool = |f: fn(&Realization) -> &AdevSeries| -> Result<AdevSeries> {
        AdevSeries::pool(&runs.iter().map(|r| f(r).clone()).collect::<Vec<_>>())
    };
    let adev_filtered = pool(|r| &r.adev_f)?;
    let adev_unfiltered = pool(|r| &r.adev_u)?;
    let adev_correction = pool(|r| &r.adev_c)?;
    let saturated = runs.iter().map(|r| r.saturated).sum();
    let residual_series = runs.first_mut().and_then(|r| r.residual.take());
    let rejection = rejection_spectrum(&psd_free, &psd_compensated)?;

    let f_rej = s.analysis.rejection_frequency_hz;
    let band = |p: &PsdEstimate| p.band_mean(f_rej, REJECTION_BAND);
    let simulated_db = match (band(&psd_free), band(&psd_compensated)) {
        (Some(fr), Some(c)) if fr > 0.0 && c > 0.0 => db(c / fr),
        _ => f64::NAN,
    };
    let uniform_db = db(residual_transfer_ratio(
        f_rej,
        tau,
        &NoiseDistribution::Uniform,
    )?);
    let profile_db = db(residual_transfer_ratio(
        f_rej,
        tau,
        &NoiseDistribution::from_link(&s.link, f_rej),
    )?);
    let rule_of_thumb_db = db(rule_of_thumb_ratio(f_rej, tau));
    let gap = (uniform_db - rule_of_thumb_db).abs();

    let (f1, f2) = s.analysis.integration_band_hz;
    let mut warnings = Vec::new();
    let budget = link_budget(&s.link);
    warnings.extend(budget.warnings.iter().map(|w| format!("budget: {w}")));
    if saturated > 0 {
        warnings.push(format!("actuator saturated on {saturated} samples"));
    }
    if gap > DISCREPANCY_FLAG_DB {
        warnings.push(format!(
            "rule-of-thumb rejection differs from the ideal-loop value by {gap:.1} dB"
        ));
    }
    for &t in &s.analysis.taus_s {
        if t > s.sim.duration_s / 10.0 {
            warnings.push(format!(
                "ADEV at tau = {t} s exceeds duration/10 and is unreliable"
            ));
        }
    }

    let ratio_tau = s
        .analysis
        .taus_s
        .iter()
        .copied()
        .find(|&t| (t - 1.0).abs() < 1e-9)
        .or(s.analysis.taus_s.first().copied());
    let unfiltered_to_filtered_ratio =
        ratio_tau.and_then(|t| Some(adev_unfiltered.at(t)? / adev_filtered.at(t)?));
    let adev = adev_filtered
        .points
        .iter()
        .zip(&adev_unfiltered.points)
        .zip(&adev_correction.points)
        .map(|((a, b), c)| AdevRow {
            tau_s: a.tau_s,
            filtered: a.adev,
            unfiltered: b.adev,
            correction: c.adev,
        })
        .collect();

    let report = RunReport {
        name: s.name.clone(),
        seed: s.sim.seed,
        realizations: s.sim.realizations,
        fs_hz: s.sim.fs_hz,
        duration_s: s.sim.duration_s,
        analysed_duration_s: (n - lock_index) as f64 / s.sim.fs_hz,
        one_way_delay_s: tau,
        oneway_delay_samples: (tau * s.sim.fs_hz).round() as usize,
        delay_cap_hz: cap,
        servo_enabled: servo.enabled,
        loop_bandwidth_hz: servo.target_loop_bandwidth_hz,
        kp: servo.kp,
        ki: servo.ki,
        lock_time_s: lock_time,
        saturated_samples: saturated,
        free_psd_at_rejection_frequency: band(&psd_free),
        rejection: RejectionSummary {
            frequency_hz: f_rej,
            simulated_db,
            uniform_db,
            profile_db,
            rule_of_thumb_db,
            convention_gap_db: gap,
            convention_gap_flagged: gap > DISCREPANCY_FLAG_DB,
        },
        integrated_phase_band_hz: (f1, f2),
        integrated_phase_rad: integrated_rms_phase(&psd_compensated, f1, f2)?,
        free_integrated_phase_rad: integrated_rms_phase(&psd_free, f1, f2)?,
        tracking_filter_hz: s.analysis.tracking_filter_hz,
        unfiltered_bandwidth_hz: s.analysis.unfiltered_bandwidth_hz,
        adev,
        unfiltered_to_filtered_ratio,
        floor_fit: fit_adev_floor(&adev_filtered),
        budget,
        warnings,
    };
    Ok(RunOutcome {
        report,
        psd_free,
        psd_compensated,
        psd_correction,
        rejection,
        adev_filtered,
        adev_unfiltered,
        adev_correction,
        residual_series,
    })
}

/// Write all artifacts into `dir`, creating it if needed. Returns the paths
/// written, in a fixed order.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_budget_csv(&out("budget.csv"), &outcome.report.budget)?;
    write_psd_csv(&out("psd_free.csv"), &outcome.psd_free)?;
    write_psd_csv(&out("psd_compensated.csv"), &outcome.psd_compensated)?;
    write_psd_csv(&out("psd_correction.csv"), &outcome.psd_correction)?;
    write_rejection_csv(&out("rejection.csv"), &outcome.rejection)?;
    write_adev_csv(&out("adev_residual_filtered.csv"), &outcome.adev_filtered)?;
    write_adev_csv(
        &out("adev_residual_unfiltered.csv"),
        &outcome.adev_unfiltered,
    )?;
    write_adev_csv(&out("adev_correction.csv"), &outcome.adev_correction)?;
    if let Some(series) = &outcome.residual_series {
        write_series_csv(&out("residual_series.csv"), series)?;
    }
    std::fs::write(out("report.txt"), render_report(&outcome.report))?;
    let json = serde_json::to_string_pretty(&outcome.report).map_err(std::io::Error::other)?;
    std::fs::write(out("report.json"), json + "\n")?;
    Ok(written)
}

/// Run a scenario and write its artifacts.
pub fn run_to_dir(s: &Scenario, dir: &Path) -> std::result::Result<RunOutcome, RunError> {
    let outcome = run_scenario(s)?;
    write_artifacts(&outcome, dir)?;
    Ok(outcome)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "n/a".into())
}

/// Plain-text summary.
pub fn render_report(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario        {}", r.name);
    let _ = writeln!(
        s,
        "seed            {} ({} realizations)",
        r.seed, r.realizations
    );
    let _ = writeln!(
        s,
        "sampling        {} Hz for {} s, {} s analysed after lock",
        r.fs_hz, r.duration_s, r.analysed_duration_s
    );
    let _ = writeln!(
        s,
        "one-way delay   {} s ({} samples), delay cap {} Hz",
        fmt_f64(r.one_way_delay_s),
        r.oneway_delay_samples,
        fmt_f64(r.delay_cap_hz)
    );
    if r.servo_enabled {
        let _ = writeln!(
            s,
            "servo           bandwidth {} Hz, kp {}, ki {}, lock after {} s",
            fmt_f64(r.loop_bandwidth_hz),
            fmt_f64(r.kp),
            fmt_f64(r.ki),
            fmt_f64(r.lock_time_s)
        );
    } else {
        let _ = writeln!(s, "servo           disabled");
    }
    let j = &r.rejection;
    let _ = writeln!(s);
    let _ = writeln!(s, "rejection at {} Hz", j.frequency_hz);
    let _ = writeln!(s, "  simulated          {:8.2} dB", j.simulated_db);
    let _ = writeln!(s, "  ideal, uniform     {:8.2} dB", j.uniform_db);
    let _ = writeln!(s, "  ideal, per span    {:8.2} dB", j.profile_db);
    let _ = writeln!(s, "  rule of thumb      {:8.2} dB", j.rule_of_thumb_db);
    if j.convention_gap_flagged {
        let _ = writeln!(
            s,
            "  note: the rule of thumb and the ideal-loop value differ by {:.1} dB",
            j.convention_gap_db
        );
    }
    let _ = writeln!(
        s,
        "  free-running PSD   {} rad^2/Hz",
        opt(r.free_psd_at_rejection_frequency)
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "integrated phase [{}, {}] Hz: {} rad compensated, {} rad free-running",
        r.integrated_phase_band_hz.0,
        r.integrated_phase_band_hz.1,
        fmt_f64(r.integrated_phase_rad),
        fmt_f64(r.free_integrated_phase_rad)
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "ADEV (tracking {} Hz / unfiltered {} Hz / correction)",
        r.tracking_filter_hz, r.unfiltered_bandwidth_hz
    );
    for a in &r.adev {
        let _ = writeln!(
            s,
            "  tau {:>10} s  {}  {}  {}",
            a.tau_s,
            fmt_f64(a.filtered),
            fmt_f64(a.unfiltered),
            fmt_f64(a.correction)
        );
    }
    let _ = writeln!(
        s,
        "unfiltered/filtered ratio: {}",
        opt(r.unfiltered_to_filtered_ratio)
    );
    if let Some(f) = &r.floor_fit {
        let _ = writeln!(
            s,
            "floor fit: {} / tau + floor {}",
            fmt_f64(f.white_pm_at_1s),
            fmt_f64(f.floor)
        );
    }
    let b = &r.budget;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "budget: one-way loss {:.2} dB, gain {:.2} dB, round-trip loss {:.2} dB",
        b.total_one_way_loss_db, b.total_gain_db, b.total_round_trip_loss_db
    );
    let _ = writeln!(
        s,
        "        output {} W, return {} W",
        fmt_f64(b.output_power_w),
        fmt_f64(b.return_power_w)
    );
    if r.saturated_samples > 0 {
        let _ = writeln!(s, "actuator saturated on {} samples", r.saturated_samples);
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
