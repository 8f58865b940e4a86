//! Round-trip phase-noise cancellation loop, simulated in discrete time.
//!
//! Geometry: the actuator sits at the link input (z = 0) and the remote end
//! is at z = L with one-way delay `tau`. A fiber cell at z (delay `tau_z`)
//! imprints its phase on the forward light, which reaches the output
//! `tau - tau_z` later. The round-trip beat at the input sees every cell
//! twice, once on the way out (delay `2 tau - tau_z`) and once on the way
//! back (delay `tau_z`), and sees the actuator twice (delay `2 tau` and 0).
//!
//! The controller acts on half the round-trip beat phase and outputs an
//! angular frequency, so with the integrator the loop is type 2.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkTopology;
use crate::noise::{synth_stream, NoiseField, PhaseSeries, PowerLawNoiseModel, PowerLawTerm};

/// Default loop bandwidth as a fraction of the delay cap.
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.3;
/// Integrator corner relative to the proportional crossover.
pub const DEFAULT_INTEGRATOR_RATIO: f64 = 0.125;
/// Default white-PM floor at each beat detector, rad²/Hz (-80 dB).
pub const DEFAULT_DETECTION_NOISE: f64 = 1e-8;
/// Default peak frequency excursion of the actuator, Hz.
pub const DEFAULT_ACTUATOR_RANGE_HZ: f64 = 1e6;
/// Lock transients last this many loop time constants.
pub const LOCK_TIME_CONSTANTS: f64 = 10.0;

/// Highest usable loop bandwidth for a one-way delay: `1 / (4 tau)`.
///
/// At this frequency the two passes through the actuator cancel in the
/// round-trip beat and the loop loses all gain.
pub fn loop_bandwidth_limit(tau_oneway: f64) -> Result<f64> {
    if !(tau_oneway.is_finite() && tau_oneway > 0.0) {
        return Err(Error::NonPositiveDelay(tau_oneway));
    }
    Ok(1.0 / (4.0 * tau_oneway))
}

/// How the link noise is laid out along the fiber, in fractions of the
/// one-way delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseDistribution {
    Uniform,
    /// All noise at one point, `0` = input, `1` = remote end.
    LumpedAt(f64),
    /// Piecewise-uniform: `(start, end, weight)` with weight the PSD per
    /// unit delay fraction.
    Profile(Vec<(f64, f64, f64)>),
}

impl NoiseDistribution {
    /// Profile for a link whose spans carry their own lineic models,
    /// weighted by each span's PSD at `f`.
    pub fn from_link(link: &LinkTopology, f: f64) -> Self {
        let tau = link.one_way_delay_s();
        let pieces = link
            .span_offsets()
            .into_iter()
            .map(|(span, _, t0)| {
                let t1 = t0 + span.delay_s();
                // Weight per unit delay: lineic PSD times km per second.
                let w = span.lineic_noise.psd(f) * span.group_velocity_m_per_s / 1000.0;
                (t0 / tau, t1 / tau, w)
            })
            .collect();
        Self::Profile(pieces)
    }

    /// Mean of `g(x)` over the distribution.
    fn mean_of(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        match self {
            Self::Uniform => Ok(integrate_unit(&g, 0.0, 1.0)),
            Self::LumpedAt(x) => {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::Analysis(format!(
                        "lumped position {x} outside [0, 1]"
                    )));
                }
                Ok(g(*x))
            }
            Self::Profile(pieces) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(a, b, w) in pieces {
                    if !(0.0..=1.0).contains(&a) || !(a..=1.0).contains(&b) || w < 0.0 {
                        return Err(Error::Analysis(format!(
                            "bad profile piece ({a}, {b}, {w})"
                        )));
                    }
                    num += w * (b - a) * integrate_unit(&g, a, b);
                    den += w * (b - a);
                }
                if den <= 0.0 {
                    return Err(Error::Analysis("profile carries no noise".into()));
                }
                Ok(num / den)
            }
        }
    }
}

/// Mean of `g` over `[a, b]` by Simpson's rule.
fn integrate_unit(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return g(a);
    }
    let n = 256;
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(x);
    }
    s * h / 3.0 / (b - a)
}

fn check_ratio_args(f: f64, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::NonPositiveDelay(tau));
    }
    let limit = loop_bandwidth_limit(tau)?;
    if !(f.is_finite() && f >= 0.0 && f < limit) {
        return Err(Error::FrequencyOutOfRange {
            f_hz: f,
            limit_hz: limit,
        });
    }
    Ok(())
}

/// Low-frequency residual/free-running PSD ratio of an ideal loop.
///
/// A cell at delay fraction `x` leaks through as `(2 pi f tau x)^2`, so the
/// uniform case is `(2 pi f tau)^2 / 3`.
pub fn residual_transfer_ratio(
    f: f64,
    tau_oneway: f64,
    distribution: &NoiseDistribution,
) -> Result<f64> {
    check_ratio_args(f, tau_oneway)?;
    let w = 2.0 * PI * f * tau_oneway;
    Ok(w * w * distribution.mean_of(|x| x * x)?)
}

/// Same ratio without the small-frequency expansion:
/// `sin^2(2 pi f tau x) / cos^2(2 pi f tau)` averaged over the distribution.
pub fn residual_transfer_ratio_exact(
    f: f64,
    tau_oneway: f64,
    distribution: &NoiseDistribution,
) -> Result<f64> {
    check_ratio_args(f, tau_oneway)?;
    let w = 2.0 * PI * f * tau_oneway;
    let c = w.cos();
    Ok(distribution.mean_of(|x| (w * x).sin().powi(2))? / (c * c))
}

/// The empirical `(f t_trip)^2` rule, no 2 pi.
pub fn rule_of_thumb_ratio(f: f64, t_trip: f64) -> f64 {
    (f * t_trip).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Proportional gain, rad/s per rad of phase error.
    pub kp: f64,
    /// Integrator gain, rad/s² per rad of phase error.
    pub ki: f64,
    pub target_loop_bandwidth_hz: f64,
    pub actuator_range_hz: f64,
    /// Additive noise at the round-trip beat detector.
    pub detection_noise: PowerLawNoiseModel,
    pub enabled: bool,
}

impl ServoConfig {
    /// PI loop crossing over near `bandwidth_hz`, integrator corner at
    /// `integrator_ratio` times that.
    pub fn for_bandwidth(bandwidth_hz: f64, integrator_ratio: f64) -> Self {
        let kp = 2.0 * PI * bandwidth_hz;
        Self {
            kp,
            ki: kp * kp * integrator_ratio,
            target_loop_bandwidth_hz: bandwidth_hz,
            actuator_range_hz: DEFAULT_ACTUATOR_RANGE_HZ,
            detection_noise: PowerLawNoiseModel::power_law(0.0, DEFAULT_DETECTION_NOISE)
                .expect("constant model is valid"),
            enabled: true,
        }
    }

    /// Default loop for a link at the default fraction of the delay cap.
    pub fn default_for_link(link: &LinkTopology) -> Result<Self> {
        let cap = loop_bandwidth_limit(link.one_way_delay_s())?;
        Ok(Self::for_bandwidth(
            DEFAULT_BANDWIDTH_FRACTION * cap,
            DEFAULT_INTEGRATOR_RATIO,
        ))
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::for_bandwidth(1.0, DEFAULT_INTEGRATOR_RATIO)
        }
    }

    pub fn with_detection_noise(mut self, model: PowerLawNoiseModel) -> Self {
        self.detection_noise = model;
        self
    }

    /// Time allowed for lock acquisition: ten time constants of the
    /// slowest (integrator) pole.
    pub fn lock_time_s(&self) -> f64 {
        let corner = if self.ki > 0.0 && self.kp > 0.0 {
            self.ki / self.kp
        } else {
            self.kp
        };
        if corner > 0.0 {
            LOCK_TIME_CONSTANTS / corner
        } else {
            0.0
        }
    }

    fn validate(&self, tau: f64) -> Result<()> {
        for (name, v) in [
            ("kp", self.kp),
            ("ki", self.ki),
            ("actuator_range_hz", self.actuator_range_hz),
            ("target_loop_bandwidth_hz", self.target_loop_bandwidth_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Servo(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.detection_noise.is_lineic() {
            return Err(Error::LineicModel);
        }
        if tau > 0.0 {
            let cap = loop_bandwidth_limit(tau)?;
            let bw = self.target_loop_bandwidth_hz.max(self.kp / (2.0 * PI));
            if bw > cap {
                return Err(Error::UnstableServo {
                    bandwidth_hz: bw,
                    cap_hz: cap,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fs_hz: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.fs_hz
    }

    fn validate(&self, link: &LinkTopology) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::SamplingMismatch(format!(
                "sample rate must be > 0, got {}",
                self.fs_hz
            )));
        }
        let min_s = 100.0 * link.one_way_delay_s();
        if self.duration_s() < min_s {
            return Err(Error::DurationTooShort {
                duration_s: self.duration_s(),
                min_s,
            });
        }
        Ok(())
    }
}

/// Open-loop noise as seen at the output and at the round-trip detector.
///
/// Sources are indexed circularly, which matches the periodic series the
/// synthesizer produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDrive {
    fs: f64,
    oneway_samples: usize,
    forward: Vec<f64>,
    roundtrip: Vec<f64>,
}

impl LinkDrive {
    pub fn new(fs: f64, n: usize, oneway_samples: usize) -> Self {
        Self {
            fs,
            oneway_samples,
            forward: vec![0.0; n],
            roundtrip: vec![0.0; n],
        }
    }

    /// Empty drive sized for `link` at `sim`.
    pub fn for_link(link: &LinkTopology, sim: &SimConfig) -> Self {
        let d = (link.one_way_delay_s() * sim.fs_hz).round() as usize;
        Self::new(sim.fs_hz, sim.n_samples, d)
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn oneway_samples(&self) -> usize {
        self.oneway_samples
    }

    pub fn forward(&self) -> &[f64] {
        &self.forward
    }

    pub fn roundtrip(&self) -> &[f64] {
        &self.roundtrip
    }

    /// Quantized delay of a point `delay_s` from the input.
    pub fn delay_samples(&self, delay_s: f64) -> usize {
        ((delay_s * self.fs).round() as usize).min(self.oneway_samples)
    }

    /// Add a noise source located `delay` samples from the input.
    pub fn add_source(&mut self, delay: usize, phase: &[f64]) -> Result<()> {
        let n = self.forward.len();
        if phase.len() != n {
            return Err(Error::SamplingMismatch(format!(
                "source has {} samples, drive has {n}",
                phase.len()
            )));
        }
        if delay > self.oneway_samples {
            return Err(Error::Link(format!(
                "source delay {delay} beyond link delay {}",
                self.oneway_samples
            )));
        }
        if n == 0 {
            return Ok(());
        }
        let d = self.oneway_samples;
        let to_output = (d - delay) % n;
        let outbound = (2 * d - delay) % n;
        let back = delay % n;
        for t in 0..n {
            self.forward[t] += phase[(t + n - to_output) % n];
            self.roundtrip[t] += phase[(t + n - outbound) % n] + phase[(t + n - back) % n];
        }
        Ok(())
    }

    /// Drive from explicit per-span noise fields (one per span, in link order).
    pub fn from_fields(
        link: &LinkTopology,
        fields: &[NoiseField],
        sim: &SimConfig,
    ) -> Result<Self> {
        let spans = link.span_offsets();
        if fields.len() != spans.len() {
            return Err(Error::SamplingMismatch(format!(
                "{} fields for {} spans",
                fields.len(),
                spans.len()
            )));
        }
        let mut drive = Self::for_link(link, sim);
        for ((span, _, t0), field) in spans.iter().zip(fields) {
            if field.span_id() != span.id {
                return Err(Error::SamplingMismatch(format!(
                    "field for span '{}' supplied where '{}' expected",
                    field.span_id(),
                    span.id
                )));
            }
            if field.fs() != sim.fs_hz || field.len() != sim.n_samples {
                return Err(Error::SamplingMismatch(format!(
                    "field '{}' sampled at {} Hz x {} does not match the simulation ({} Hz x {})",
                    field.span_id(),
                    field.fs(),
                    field.len(),
                    sim.fs_hz,
                    sim.n_samples
                )));
            }
            for cell in field.cells() {
                let delay_s = t0 + cell.position_km * 1000.0 / span.group_velocity_m_per_s;
                let d = drive.delay_samples(delay_s);
                drive.add_source(d, cell.series.samples())?;
            }
        }
        Ok(drive)
    }

    /// Drive synthesized directly, `cells_per_span` cells per span.
    ///
    /// Cells that quantize to the same sample delay are statistically
    /// interchangeable, so each delay group is synthesized once with the
    /// group's summed PSD. The result has the same distribution as
    /// [`LinkDrive::from_fields`] at a fraction of the memory and time.
    pub fn synthesize(link: &LinkTopology, cells_per_span: usize, sim: &SimConfig) -> Result<Self> {
        if cells_per_span == 0 {
            return Err(Error::NoCells);
        }
        let mut drive = Self::for_link(link, sim);
        // (delay samples, model) in first-seen order; models scale per group.
        let mut groups: Vec<(usize, Vec<PowerLawNoiseModel>)> = Vec::new();
        for (span, _, t0) in link.span_offsets() {
            if !span.lineic_noise.is_lineic() {
                return Err(Error::NotLineic(span.id.clone()));
            }
            let cell_km = span.length_km / cells_per_span as f64;
            let cell_model = span.lineic_noise.over_length(cell_km);
            for k in 0..cells_per_span {
                let pos = (k as f64 + 0.5) * cell_km;
                let d = drive.delay_samples(t0 + pos * 1000.0 / span.group_velocity_m_per_s);
                match groups.iter_mut().find(|(gd, _)| *gd == d) {
                    Some((_, models)) => models.push(cell_model.clone()),
                    None => groups.push((d, vec![cell_model.clone()])),
                }
            }
        }
        groups.sort_by_key(|(d, _)| *d);
        for (d, models) in groups {
            let mut terms: Vec<PowerLawTerm> = Vec::new();
            for t in models.iter().flat_map(|m| m.terms().iter().copied()) {
                match terms.iter_mut().find(|u| u.alpha == t.alpha) {
                    Some(u) => u.coeff += t.coeff,
                    None => terms.push(t),
                }
            }
            let model = PowerLawNoiseModel::new(terms, false)?;
            if model.is_silent() {
                continue;
            }
            let series = synth_stream(
                &model,
                sim.fs_hz,
                sim.n_samples,
                sim.seed,
                "delay-group",
                d as u64,
            )?;
            drive.add_source(d, series.samples())?;
        }
        Ok(drive)
    }
}

/// Outcome of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    /// Remote output minus reference.
    pub residual_phase: PhaseSeries,
    /// Actuator phase.
    pub correction_phase: PhaseSeries,
    /// Round-trip beat phase at the input detector.
    pub roundtrip_beat_phase: PhaseSeries,
    pub lock_acquired_at_s: f64,
    /// Samples where the actuator hit its excursion limit.
    pub saturated_samples: usize,
    pub oneway_delay_samples: usize,
    pub servo: Option<ServoConfig>,
}

impl TransferResult {
    /// First sample index after lock.
    pub fn lock_index(&self) -> usize {
        (self.lock_acquired_at_s * self.residual_phase.fs()).ceil() as usize
    }
}

/// Raw controller state; one call to [`ServoLoop::step`] per sample.
///
/// No stability checks are made here.
#[derive(Debug, Clone)]
pub struct ServoLoop {
    kp: f64,
    ki: f64,
    dt: f64,
    omega_limit: f64,
    oneway: usize,
    integrator: f64,
    /// Actuator phase history, newest last; holds 2 * oneway + 1 samples.
    history: Vec<f64>,
    head: usize,
    phase: f64,
    pub saturated: usize,
}

/// Per-sample outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSample {
    pub residual: f64,
    pub correction: f64,
    pub beat: f64,
}

impl ServoLoop {
    pub fn new(kp: f64, ki: f64, fs: f64, oneway_samples: usize, actuator_range_hz: f64) -> Self {
        Self {
            kp,
            ki,
            dt: 1.0 / fs,
            omega_limit: 2.0 * PI * actuator_range_hz,
            oneway: oneway_samples,
            integrator: 0.0,
            history: vec![0.0; 2 * oneway_samples + 1],
            head: 0,
            phase: 0.0,
            saturated: 0,
        }
    }

    /// Start as if the actuator had held `phase` forever.
    pub fn preset(&mut self, phase: f64) {
        self.history.iter_mut().for_each(|h| *h = phase);
        self.phase = phase;
    }

    fn past(&self, k: usize) -> f64 {
        let len = self.history.len();
        self.history[(self.head + len - k) % len]
    }

    /// Advance one sample given the open-loop forward and round-trip noise
    /// and the detector noise at this instant.
    pub fn step(&mut self, forward: f64, roundtrip: f64, detector: f64) -> LoopSample {
        let len = self.history.len();
        self.head = (self.head + 1) % len;
        self.history[self.head] = self.phase;
        let now = self.phase;
        let residual = forward + self.past(self.oneway);
        let beat = now + self.past(2 * self.oneway) + roundtrip + detector;
        let error = 0.5 * beat;
        self.integrator += self.ki * error * self.dt;
        let mut omega = -(self.kp * error + self.integrator);
        if omega.abs() > self.omega_limit {
            omega = omega.clamp(-self.omega_limit, self.omega_limit);
            self.saturated += 1;
        }
        self.phase += omega * self.dt;
        LoopSample {
            residual,
            correction: now,
            beat,
        }
    }
}

/// Free-running transfer: output phase is the delayed sum of all cells.
pub fn simulate_free_running(
    link: &LinkTopology,
    fields: &[NoiseField],
    sim: &SimConfig,
) -> Result<TransferResult> {
    sim.validate(link)?;
    let drive = LinkDrive::from_fields(link, fields, sim)?;
    Ok(free_running_from_drive(&drive))
}

pub fn free_running_from_drive(drive: &LinkDrive) -> TransferResult {
    let fs = drive.fs;
    TransferResult {
        residual_phase: PhaseSeries::from_parts(drive.forward.clone(), fs, 0.0),
        correction_phase: PhaseSeries::from_parts(vec![0.0; drive.len()], fs, 0.0),
        roundtrip_beat_phase: PhaseSeries::from_parts(drive.roundtrip.clone(), fs, 0.0),
        lock_acquired_at_s: 0.0,
        saturated_samples: 0,
        oneway_delay_samples: drive.oneway_samples,
        servo: None,
    }
}

/// Closed-loop transfer with the round-trip servo.
pub fn simulate_compensated(
    link: &LinkTopology,
    fields: &[NoiseField],
    servo: &ServoConfig,
    sim: &SimConfig,
) -> Result<TransferResult> {
    sim.validate(link)?;
    servo.validate(link.one_way_delay_s())?;
    let drive = LinkDrive::from_fields(link, fields, sim)?;
    compensated_from_drive(&drive, servo, sim.seed)
}

/// Run the loop on a prepared drive. Detector noise is drawn from `seed`.
pub fn compensated_from_drive(
    drive: &LinkDrive,
    servo: &ServoConfig,
    seed: u64,
) -> Result<TransferResult> {
    let tau = drive.oneway_samples as f64 / drive.fs;
    servo.validate(tau)?;
    if !servo.enabled {
        let mut r = free_running_from_drive(drive);
        r.servo = Some(servo.clone());
        return Ok(r);
    }
    let n = drive.len();
    let fs = drive.fs;
    let detector = if n >= 2 {
        synth_stream(&servo.detection_noise, fs, n, seed, "roundtrip-detector", 0)?.into_samples()
    } else {
        vec![0.0; n]
    };
    let mut lp = ServoLoop::new(
        servo.kp,
        servo.ki,
        fs,
        drive.oneway_samples,
        servo.actuator_range_hz,
    );
    if n > 0 {
        // Start locked to the initial link phase rather than pulling in.
        lp.preset(-0.5 * drive.roundtrip[0]);
    }
    let mut residual = Vec::with_capacity(n);
    let mut correction = Vec::with_capacity(n);
    let mut beat = Vec::with_capacity(n);
    for t in 0..n {
        let s = lp.step(drive.forward[t], drive.roundtrip[t], detector[t]);
        if !(s.correction.is_finite() && s.correction.abs() < 1e12) {
            return Err(Error::Diverged { t_s: t as f64 / fs });
        }
        residual.push(s.residual);
        correction.push(s.correction);
        beat.push(s.beat);
    }
    Ok(TransferResult {
        residual_phase: PhaseSeries::from_parts(residual, fs, 0.0),
        correction_phase: PhaseSeries::from_parts(correction, fs, 0.0),
        roundtrip_beat_phase: PhaseSeries::from_parts(beat, fs, 0.0),
        lock_acquired_at_s: servo.lock_time_s().min(n as f64 / fs),
        saturated_samples: lp.saturated,
        oneway_delay_samples: drive.oneway_samples,
        servo: Some(servo.clone()),
    })
}
