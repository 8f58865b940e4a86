//! Long-haul planning: split a route into equal compensated segments joined
//! by repeater stations, and predict the cascade's Allan deviation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::DEFAULT_GROUP_VELOCITY;
use crate::metrology::{AdevPoint, AdevSeries};
use crate::noise::PowerLawNoiseModel;
use crate::servo::{loop_bandwidth_limit, DEFAULT_BANDWIDTH_FRACTION, DEFAULT_INTEGRATOR_RATIO};
use realfft::num_complex::Complex64;

/// Upper bound on the number of segments the planner will consider.
pub const MAX_SEGMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub total_length_km: f64,
    pub total_loss_db: f64,
    pub lineic_noise: PowerLawNoiseModel,
    pub max_segment_loss_db: f64,
    /// Every segment's delay cap must reach this.
    pub min_loop_bandwidth_hz: f64,
    pub group_velocity_m_per_s: f64,
    /// White PM added by each interior repeater, rad²/Hz.
    pub station_penalty_rad2_per_hz: f64,
}

impl RouteSpec {
    pub fn new(
        total_length_km: f64,
        total_loss_db: f64,
        lineic_noise: PowerLawNoiseModel,
        max_segment_loss_db: f64,
        min_loop_bandwidth_hz: f64,
    ) -> Self {
        Self {
            total_length_km,
            total_loss_db,
            lineic_noise,
            max_segment_loss_db,
            min_loop_bandwidth_hz,
            group_velocity_m_per_s: DEFAULT_GROUP_VELOCITY,
            station_penalty_rad2_per_hz: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("total_length_km", self.total_length_km),
            ("total_loss_db", self.total_loss_db),
            ("max_segment_loss_db", self.max_segment_loss_db),
            ("group_velocity_m_per_s", self.group_velocity_m_per_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Link(format!("route {name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("min_loop_bandwidth_hz", self.min_loop_bandwidth_hz),
            (
                "station_penalty_rad2_per_hz",
                self.station_penalty_rad2_per_hz,
            ),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Link(format!("route {name} must be >= 0, got {v}")));
            }
        }
        if !self.lineic_noise.is_lineic() {
            return Err(Error::NotLineic("route".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationFunction {
    /// Return part of the received light to the previous station.
    SendBack,
    /// Regenerate the carrier with a laser phase-locked to the incoming signal.
    AmplifyFilter,
    /// Run the round-trip servo on the following segment.
    CompensateNext,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Station {
    pub position_km: f64,
    pub functions: Vec<StationFunction>,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub length_km: f64,
    pub loss_db: f64,
    pub tau_oneway_s: f64,
    pub loop_bandwidth_cap_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadePlan {
    pub route: RouteSpec,
    pub segments: Vec<Segment>,
    /// Head, interior repeaters, tail.
    pub stations: Vec<Station>,
    pub total_length_km: f64,
    pub total_loss_db: f64,
}

impl CascadePlan {
    pub fn interior_stations(&self) -> &[Station] {
        let n = self.stations.len();
        if n <= 2 {
            &[]
        } else {
            &self.stations[1..n - 1]
        }
    }

    /// Check the plan against its own constraints.
    pub fn check(&self) -> Result<()> {
        let len: f64 = self.segments.iter().map(|s| s.length_km).sum();
        if (len - self.route.total_length_km).abs() > 1e-9 * self.route.total_length_km {
            return Err(Error::Unsatisfiable(format!(
                "segment lengths sum to {len} km, route is {} km",
                self.route.total_length_km
            )));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.loss_db > self.route.max_segment_loss_db * (1.0 + 1e-12) {
                return Err(Error::Unsatisfiable(format!(
                    "segment {i} loss {} dB exceeds {} dB",
                    s.loss_db, self.route.max_segment_loss_db
                )));
            }
            if s.loop_bandwidth_cap_hz < self.route.min_loop_bandwidth_hz {
                return Err(Error::Unsatisfiable(format!(
                    "segment {i} bandwidth cap {} Hz below {} Hz",
                    s.loop_bandwidth_cap_hz, self.route.min_loop_bandwidth_hz
                )));
            }
        }
        for st in self.interior_stations() {
            if st.functions.len() != 3 {
                return Err(Error::Unsatisfiable(format!(
                    "interior station at {} km lacks a function",
                    st.position_km
                )));
            }
        }
        Ok(())
    }
}

fn segment_for(route: &RouteSpec, n: usize) -> Result<Segment> {
    let length_km = route.total_length_km / n as f64;
    let tau = length_km * 1000.0 / route.group_velocity_m_per_s;
    Ok(Segment {
        length_km,
        loss_db: route.total_loss_db / n as f64,
        tau_oneway_s: tau,
        loop_bandwidth_cap_hz: loop_bandwidth_limit(tau)?,
    })
}

/// Fewest equal segments that satisfy both the loss and bandwidth limits.
pub fn plan_cascade(route: &RouteSpec) -> Result<CascadePlan> {
    route.validate()?;
    let mut chosen = None;
    for n in 1..=MAX_SEGMENTS {
        let seg = segment_for(route, n)?;
        let loss_ok = seg.loss_db <= route.max_segment_loss_db * (1.0 + 1e-12);
        let bw_ok = seg.loop_bandwidth_cap_hz >= route.min_loop_bandwidth_hz;
        if loss_ok && bw_ok {
            chosen = Some((n, seg));
            break;
        }
    }
    let Some((n, seg)) = chosen else {
        let last = segment_for(route, MAX_SEGMENTS)?;
        let binding = if last.loss_db > route.max_segment_loss_db {
            "loss"
        } else {
            "bandwidth"
        };
        return Err(Error::Unsatisfiable(format!(
            "{binding} constraint unsatisfiable within N <= {MAX_SEGMENTS}"
        )));
    };
    let mut stations = Vec::with_capacity(n + 1);
    stations.push(Station {
        position_km: 0.0,
        functions: vec![StationFunction::CompensateNext],
        note: "head: reference laser and first servo".into(),
    });
    for i in 1..n {
        stations.push(Station {
            position_km: i as f64 * seg.length_km,
            functions: vec![
                StationFunction::SendBack,
                StationFunction::AmplifyFilter,
                StationFunction::CompensateNext,
            ],
            note: "repeater: laser phase-locked to the incoming signal".into(),
        });
    }
    stations.push(Station {
        position_km: route.total_length_km,
        functions: vec![StationFunction::SendBack],
        note: "tail: user end".into(),
    });
    let plan = CascadePlan {
        route: route.clone(),
        segments: vec![seg; n],
        stations,
        total_length_km: route.total_length_km,
        total_loss_db: route.total_loss_db,
    };
    plan.check()?;
    Ok(plan)
}

/// How the predicted residual is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub nu0_hz: f64,
    /// First-order low-pass before counting; `None` integrates to `f_max_hz`.
    pub filter_bandwidth_hz: Option<f64>,
    pub f_max_hz: f64,
    /// Loop bandwidth of each segment as a fraction of its delay cap.
    pub loop_bandwidth_fraction: f64,
    /// Integrator corner of each segment's PI loop relative to its bandwidth.
    pub integrator_ratio: f64,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self {
            nu0_hz: crate::link::DEFAULT_CARRIER_HZ,
            filter_bandwidth_hz: Some(10.0),
            f_max_hz: 5000.0,
            loop_bandwidth_fraction: DEFAULT_BANDWIDTH_FRACTION,
            integrator_ratio: DEFAULT_INTEGRATOR_RATIO,
        }
    }
}

/// Delay fractions averaged by [`closed_loop_leakage`].
const LOOP_MODEL_CELLS: usize = 64;

/// Mean residual/free-running PSD ratio of a continuous-time PI round-trip
/// loop, for noise spread uniformly along a link of one-way delay `tau`.
///
/// The loop acts on half the round-trip beat and drives a frequency
/// actuator, as the time-domain engine does. Far below the bandwidth this
/// tends to `(2 pi f tau)^2 / 3`; near the bandwidth it shows the servo bump.
pub fn closed_loop_leakage(f: f64, tau: f64, bandwidth_hz: f64, integrator_ratio: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let kp = 2.0 * PI * bandwidth_hz;
    let ki = kp * kp * integrator_ratio;
    let s = Complex64::new(0.0, 2.0 * PI * f);
    let g = (s * kp + ki) / (s * s);
    let delay = |t: f64| (-s * t).exp();
    let closed = Complex64::new(1.0, 0.0) + g * 0.5 * (delay(2.0 * tau) + 1.0);
    let mut acc = 0.0;
    for k in 0..LOOP_MODEL_CELLS {
        let x = (k as f64 + 0.5) / LOOP_MODEL_CELLS as f64;
        let forward = delay(tau * (1.0 - x));
        let roundtrip = delay(tau * (2.0 - x)) + delay(tau * x);
        let actuator = -g * 0.5 * roundtrip / closed;
        acc += (forward + delay(tau) * actuator).norm_sqr();
    }
    acc / LOOP_MODEL_CELLS as f64
}

/// Residual phase PSD of one compensated segment of a uniform-noise route.
pub fn segment_residual_psd(
    segment: &Segment,
    lineic: &PowerLawNoiseModel,
    m: &MeasurementModel,
    f: f64,
) -> f64 {
    let free = lineic.psd(f) * segment.length_km;
    if free == 0.0 {
        return 0.0;
    }
    let bw = m.loop_bandwidth_fraction * segment.loop_bandwidth_cap_hz;
    free * closed_loop_leakage(f, segment.tau_oneway_s, bw, m.integrator_ratio)
}

/// Overlapping-ADEV variance of a phase PSD:
/// `8 / (2 pi nu0 tau)^2 * integral S(f) |H(f)|^2 sin^4(pi f tau) df`.
pub fn adev_variance_from_psd(psd: impl Fn(f64) -> f64, tau: f64, m: &MeasurementModel) -> f64 {
    let filt = |f: f64| match m.filter_bandwidth_hz {
        Some(b) => 1.0 / (1.0 + (f / b).powi(2)),
        None => 1.0,
    };
    let integrand = |f: f64, w: f64| psd(f) * filt(f) * w;
    // Resolve sin^4 oscillation up to 20/tau, then use its mean 3/8.
    let f_split = (20.0 / tau).min(m.f_max_hz);
    let n_lin = 4000;
    let h = f_split / n_lin as f64;
    let mut lin = 0.0;
    for i in 0..n_lin {
        // Midpoint rule avoids f = 0.
        let f = (i as f64 + 0.5) * h;
        lin += integrand(f, (PI * f * tau).sin().powi(4)) * h;
    }
    let mut log = 0.0;
    if m.f_max_hz > f_split {
        let n_log = 4000;
        let r = (m.f_max_hz / f_split).ln() / n_log as f64;
        for i in 0..n_log {
            let f = f_split * ((i as f64 + 0.5) * r).exp();
            log += integrand(f, 0.375) * f * r;
        }
    }
    8.0 * (lin + log) / (2.0 * PI * m.nu0_hz * tau).powi(2)
}

/// Predicted variance contributed by each segment (and station penalties).
pub fn predict_segment_variances(
    plan: &CascadePlan,
    lineic: &PowerLawNoiseModel,
    tau: f64,
    m: &MeasurementModel,
) -> Vec<f64> {
    let mut out: Vec<f64> = plan
        .segments
        .iter()
        .map(|seg| adev_variance_from_psd(|f| segment_residual_psd(seg, lineic, m, f), tau, m))
        .collect();
    let penalty = plan.route.station_penalty_rad2_per_hz;
    if penalty > 0.0 {
        for _ in plan.interior_stations() {
            out.push(adev_variance_from_psd(|_| penalty, tau, m));
        }
    }
    out
}

/// Cascade ADEV with segments combined as independent contributions.
pub fn predict_cascade_adev(
    plan: &CascadePlan,
    lineic: &PowerLawNoiseModel,
    taus: &[f64],
    m: &MeasurementModel,
) -> Result<AdevSeries> {
    plan.check()?;
    if !lineic.is_lineic() {
        return Err(Error::NotLineic("cascade prediction".into()));
    }
    let mut prev = 0.0;
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau.is_finite() && tau > prev) {
            return Err(Error::Analysis(
                "taus must be positive and increasing".into(),
            ));
        }
        prev = tau;
        let var: f64 = predict_segment_variances(plan, lineic, tau, m).iter().sum();
        points.push(AdevPoint {
            tau_s: tau,
            adev: var.sqrt(),
            count: 1,
        });
    }
    Ok(AdevSeries { points })
}
