//! Measurement products: Welch PSDs, integrated phase, dead-time-free
//! frequency counting, tracking filters and Allan deviation.

use std::f64::consts::PI;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::PhaseSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hann => "hann",
            Self::Rectangular => "rectangular",
        }
    }

    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Self::Rectangular => vec![1.0; n],
            // Periodic Hann, as used for spectral estimation.
            Self::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
}

impl WelchConfig {
    pub fn new(segment_len: usize) -> Self {
        Self {
            segment_len,
            overlap: 0.5,
            window: Window::Hann,
        }
    }

    /// Largest power-of-two segment that still yields at least `min_segments`
    /// half-overlapping segments over `n` samples.
    pub fn for_length(n: usize, min_segments: usize) -> Self {
        let mut seg = 1usize << (usize::BITS - 1 - n.max(2).leading_zeros());
        while seg > 16 && (n - seg) / (seg / 2) + 1 < min_segments {
            seg /= 2;
        }
        Self::new(seg)
    }
}

/// One-sided phase PSD, rad²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub resolution_bw: f64,
    pub window: Window,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.values {
            *v *= factor;
        }
        self
    }

    /// Bin spacing, Hz.
    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Linear interpolation at `f`.
    pub fn value_at(&self, f: f64) -> Option<f64> {
        interpolate(&self.freqs, &self.values, f)
    }

    /// Mean of the bins within `[f * (1 - rel), f * (1 + rel)]`.
    pub fn band_mean(&self, f: f64, rel: f64) -> Option<f64> {
        let (lo, hi) = (f * (1.0 - rel), f * (1.0 + rel));
        let sel: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.values)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(_, v)| *v)
            .collect();
        if sel.is_empty() {
            None
        } else {
            Some(sel.iter().sum::<f64>() / sel.len() as f64)
        }
    }

    /// Average several estimates with identical bins.
    pub fn average(estimates: &[PsdEstimate]) -> Result<PsdEstimate> {
        let first = estimates
            .first()
            .ok_or_else(|| Error::Analysis("nothing to average".into()))?;
        let mut values = vec![0.0; first.values.len()];
        let mut segments = 0;
        for e in estimates {
            if e.freqs != first.freqs {
                return Err(Error::BinMismatch);
            }
            for (acc, v) in values.iter_mut().zip(&e.values) {
                *acc += v;
            }
            segments += e.segments;
        }
        let k = estimates.len() as f64;
        for v in &mut values {
            *v /= k;
        }
        Ok(PsdEstimate {
            freqs: first.freqs.clone(),
            values,
            resolution_bw: first.resolution_bw,
            window: first.window,
            segments,
        })
    }
}

pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return None;
    }
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return Some(ys[0]);
    }
    if i >= xs.len() {
        return Some(ys[xs.len() - 1]);
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    Some(ys[i - 1] * (1.0 - w) + ys[i] * w)
}

/// Welch estimate with per-segment mean removal.
pub fn welch_psd(series: &PhaseSeries, cfg: &WelchConfig) -> Result<PsdEstimate> {
    let n = series.len();
    let seg = cfg.segment_len;
    if seg < 2 {
        return Err(Error::Analysis(format!("segment length {seg} < 2")));
    }
    if !(0.0..=0.9).contains(&cfg.overlap) {
        return Err(Error::Analysis(format!(
            "overlap {} outside [0, 0.9]",
            cfg.overlap
        )));
    }
    if n < seg {
        return Err(Error::InsufficientData(format!(
            "series of {n} samples is shorter than one {seg}-sample segment"
        )));
    }
    let step = (seg - (cfg.overlap * seg as f64).round() as usize).max(1);
    let segments = (n - seg) / step + 1;
    let fs = series.fs();
    let window = cfg.window.coefficients(seg);
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(seg);
    let mut buf = r2c.make_input_vec();
    let mut spectrum = r2c.make_output_vec();
    let mut acc = vec![0.0; seg / 2 + 1];
    let x = series.samples();
    for s in 0..segments {
        let chunk = &x[s * step..s * step + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, v), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = (v - mean) * w;
        }
        r2c.process(&mut buf, &mut spectrum)
            .expect("buffer sizes come from the planner");
        for (a, c) in acc.iter_mut().zip(&spectrum) {
            *a += c.norm_sqr();
        }
    }
    let scale = 1.0 / (fs * window_power * segments as f64);
    let last = seg / 2;
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (seg % 2 == 0 && k == last) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let df = fs / seg as f64;
    Ok(PsdEstimate {
        freqs: (0..values.len()).map(|k| k as f64 * df).collect(),
        values,
        resolution_bw: df,
        window: cfg.window,
        segments,
    })
}

/// RMS phase from `sqrt(integral of S_phi)` over `[f1, f2]`, trapezoidal.
pub fn integrated_rms_phase(psd: &PsdEstimate, f1: f64, f2: f64) -> Result<f64> {
    let fr = &psd.freqs;
    if fr.is_empty() {
        return Err(Error::Analysis("empty PSD".into()));
    }
    if !(f1 < f2) || f1 < fr[0] || f2 > fr[fr.len() - 1] {
        return Err(Error::Analysis(format!(
            "integration range [{f1}, {f2}] Hz outside bins [{}, {}] Hz",
            fr[0],
            fr[fr.len() - 1]
        )));
    }
    let at = |f: f64| interpolate(fr, &psd.values, f).expect("range checked above");
    let mut points = vec![(f1, at(f1))];
    points.extend(
        fr.iter()
            .zip(&psd.values)
            .filter(|(f, _)| **f > f1 && **f < f2)
            .map(|(f, v)| (*f, *v)),
    );
    points.push((f2, at(f2)));
    let area: f64 = points
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok(area.sqrt())
}

/// Dead-time-free fractional frequency readings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalFreqSeries {
    pub y: Vec<f64>,
    pub gate_s: f64,
    pub nu0_hz: f64,
    pub t0: f64,
}

/// Pi-type counter: unweighted phase differences over contiguous gates.
pub fn pi_counter(series: &PhaseSeries, gate_s: f64, nu0_hz: f64) -> Result<FractionalFreqSeries> {
    if !(nu0_hz.is_finite() && nu0_hz > 0.0) {
        return Err(Error::Analysis(format!(
            "carrier must be > 0, got {nu0_hz}"
        )));
    }
    let m_exact = gate_s * series.fs();
    if !(m_exact.is_finite() && m_exact >= 1.0 - 1e-9) {
        return Err(Error::Analysis(format!(
            "gate {gate_s} s is shorter than one sample"
        )));
    }
    let m = m_exact.round() as usize;
    if (m_exact - m as f64).abs() > 1e-6 * m_exact.max(1.0) {
        return Err(Error::Analysis(format!(
            "gate {gate_s} s is not an integer number of samples"
        )));
    }
    let phi = series.samples();
    let gates = phi.len().saturating_sub(1) / m;
    if gates < 2 {
        return Err(Error::InsufficientData(format!(
            "series spans {gates} gate(s); need at least 2"
        )));
    }
    let tau = m as f64 / series.fs();
    let scale = 1.0 / (2.0 * PI * nu0_hz * tau);
    let y = (0..gates)
        .map(|k| (phi[(k + 1) * m] - phi[k * m]) * scale)
        .collect();
    Ok(FractionalFreqSeries {
        y,
        gate_s: tau,
        nu0_hz,
        t0: series.t0(),
    })
}

/// First-order low-pass on phase with unity DC gain.
#[derive(Debug, Clone, Copy)]
pub struct OnePole {
    coeff: f64,
    state: Option<f64>,
}

impl OnePole {
    pub fn new(bandwidth_hz: f64, fs: f64) -> Result<Self> {
        if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0 && bandwidth_hz < fs / 2.0) {
            return Err(Error::Analysis(format!(
                "filter bandwidth {bandwidth_hz} Hz must lie in (0, fs/2 = {} Hz)",
                fs / 2.0
            )));
        }
        Ok(Self {
            coeff: 1.0 - (-2.0 * PI * bandwidth_hz / fs).exp(),
            state: None,
        })
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let y = match self.state {
            None => x,
            Some(prev) => prev + self.coeff * (x - prev),
        };
        self.state = Some(y);
        y
    }
}

/// Narrow-band tracking filter applied to the beat phase before counting.
pub fn tracking_filter(series: &PhaseSeries, bandwidth_hz: f64) -> Result<PhaseSeries> {
    let mut f = OnePole::new(bandwidth_hz, series.fs())?;
    let out = series.samples().iter().map(|&x| f.update(x)).collect();
    Ok(PhaseSeries::from_parts(out, series.fs(), series.t0()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdevPoint {
    pub tau_s: f64,
    pub adev: f64,
    pub count: usize,
}

impl AdevPoint {
    /// ±σ/√count error bar.
    pub fn error_bar(&self) -> f64 {
        self.adev / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdevSeries {
    pub points: Vec<AdevPoint>,
}

impl AdevSeries {
    pub fn at(&self, tau_s: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.tau_s - tau_s).abs() <= 1e-9 * tau_s.max(1.0))
            .map(|p| p.adev)
    }

    /// Pool several estimates over the same taus by count-weighted variance.
    pub fn pool(series: &[AdevSeries]) -> Result<AdevSeries> {
        let first = series
            .first()
            .ok_or_else(|| Error::Analysis("nothing to pool".into()))?;
        let mut points = Vec::with_capacity(first.points.len());
        for (i, p0) in first.points.iter().enumerate() {
            let mut var = 0.0;
            let mut count = 0usize;
            for s in series {
                let p = s
                    .points
                    .get(i)
                    .ok_or_else(|| Error::Analysis("ADEV series have different lengths".into()))?;
                if (p.tau_s - p0.tau_s).abs() > 1e-12 * p0.tau_s {
                    return Err(Error::Analysis("ADEV series have different taus".into()));
                }
                var += p.adev * p.adev * p.count as f64;
                count += p.count;
            }
            points.push(AdevPoint {
                tau_s: p0.tau_s,
                adev: (var / count as f64).sqrt(),
                count,
            });
        }
        Ok(AdevSeries { points })
    }
}

/// Overlapping Allan deviation.
///
/// Each tau must be an integer multiple of the gate and leave at least three
/// averaging windows in the record.
pub fn allan_deviation(y: &FractionalFreqSeries, taus: &[f64]) -> Result<AdevSeries> {
    let n = y.y.len();
    // Phase in seconds, x_0 = 0.
    let mut x = Vec::with_capacity(n + 1);
    x.push(0.0);
    let mut acc = 0.0;
    for v in &y.y {
        acc += v * y.gate_s;
        x.push(acc);
    }
    let mut prev = 0.0;
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > prev) {
            return Err(Error::Analysis(
                "taus must be positive and increasing".into(),
            ));
        }
        prev = tau;
        let m_exact = tau / y.gate_s;
        let m = m_exact.round() as usize;
        if m == 0 || (m_exact - m as f64).abs() > 1e-6 * m_exact {
            return Err(Error::Analysis(format!(
                "tau {tau} s is not a multiple of the {} s gate",
                y.gate_s
            )));
        }
        if n < 3 * m {
            return Err(Error::InsufficientData(format!(
                "tau {tau} s needs {} readings, have {n}",
                3 * m
            )));
        }
        let terms = n + 1 - 2 * m;
        let sum: f64 = (0..terms)
            .map(|i| {
                let d = x[i + 2 * m] - 2.0 * x[i + m] + x[i];
                d * d
            })
            .sum();
        let t = m as f64 * y.gate_s;
        points.push(AdevPoint {
            tau_s: t,
            adev: (sum / (2.0 * t * t * terms as f64)).sqrt(),
            count: terms,
        });
    }
    Ok(AdevSeries { points })
}

/// `10 log10(compensated / free)` per bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionSpectrum {
    pub freqs: Vec<f64>,
    pub db: Vec<f64>,
}

impl RejectionSpectrum {
    pub fn value_at(&self, f: f64) -> Option<f64> {
        interpolate(&self.freqs, &self.db, f)
    }
}

pub fn rejection_spectrum(
    free: &PsdEstimate,
    compensated: &PsdEstimate,
) -> Result<RejectionSpectrum> {
    if free.freqs != compensated.freqs {
        return Err(Error::BinMismatch);
    }
    let db = free
        .values
        .iter()
        .zip(&compensated.values)
        .map(|(&f, &c)| if f == c { 0.0 } else { 10.0 * (c / f).log10() })
        .collect();
    Ok(RejectionSpectrum {
        freqs: free.freqs.clone(),
        db,
    })
}

/// Least-squares line through `(log10 x, log10 y)`; returns (slope, intercept).
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Fit `sigma^2(tau) = (a / tau)^2 + floor^2` by least squares on sigma².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorFit {
    /// White-PM coefficient: the 1/tau term's value at tau = 1 s.
    pub white_pm_at_1s: f64,
    pub floor: f64,
}

pub fn fit_adev_floor(adev: &AdevSeries) -> Option<FloorFit> {
    // Weighted by 1/sigma^4 so every point counts in relative terms.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in adev.points.iter().filter(|p| p.adev > 0.0) {
        let v = p.adev * p.adev;
        let w = 1.0 / (v * v);
        let u = 1.0 / (p.tau_s * p.tau_s);
        s11 += w * u * u;
        s12 += w * u;
        s22 += w;
        b1 += w * u * v;
        b2 += w * v;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < f64::MIN_POSITIVE || !det.is_finite() {
        return None;
    }
    let a2 = ((b1 * s22 - b2 * s12) / det).max(0.0);
    let f2 = ((s11 * b2 - s12 * b1) / det).max(0.0);
    Some(FloorFit {
        white_pm_at_1s: a2.sqrt(),
        floor: f2.sqrt(),
    })
}
