//! Power-law phase-noise models and their synthesis.
//!
//! Series are generated by frequency-domain shaping: a complex Gaussian
//! spectrum is scaled by `sqrt(S_phi(f))` and inverse transformed. The DC
//! bin is always zero and nothing below `fs / n` is represented, so Allan
//! deviations at averaging times above a tenth of the record are not
//! trustworthy.
//!
//! Generated series are periodic with period `n`, which the servo engine
//! relies on when it indexes a source before the start of the record.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::link::FiberSpan;
use crate::metrology::{welch_psd, PsdEstimate, WelchConfig};

/// Largest spectral exponent accepted by the synthesizer.
pub const MAX_ALPHA: f64 = 3.0;

/// One `h_alpha * f^-alpha` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTerm {
    pub alpha: f64,
    /// PSD at 1 Hz, rad²/Hz (or rad²/Hz/km for lineic models).
    pub coeff: f64,
}

/// Sum of power-law terms describing a one-sided phase PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawNoiseModel {
    terms: Vec<PowerLawTerm>,
    lineic: bool,
}

impl PowerLawNoiseModel {
    pub fn new(terms: Vec<PowerLawTerm>, lineic: bool) -> Result<Self> {
        for t in &terms {
            if !t.alpha.is_finite() || !t.coeff.is_finite() {
                return Err(Error::NoiseModel("non-finite term".into()));
            }
            if !(0.0..=MAX_ALPHA).contains(&t.alpha) {
                return Err(Error::NoiseModel(format!(
                    "alpha {} outside [0, {MAX_ALPHA}]",
                    t.alpha
                )));
            }
            if t.coeff < 0.0 {
                return Err(Error::NoiseModel(format!(
                    "negative coefficient {}",
                    t.coeff
                )));
            }
        }
        Ok(Self { terms, lineic })
    }

    /// Single-term lumped model.
    pub fn power_law(alpha: f64, coeff: f64) -> Result<Self> {
        Self::new(vec![PowerLawTerm { alpha, coeff }], false)
    }

    /// Single-term per-km model.
    pub fn lineic_power_law(alpha: f64, coeff_per_km: f64) -> Result<Self> {
        Self::new(
            vec![PowerLawTerm {
                alpha,
                coeff: coeff_per_km,
            }],
            true,
        )
    }

    pub fn silent(lineic: bool) -> Self {
        Self {
            terms: Vec::new(),
            lineic,
        }
    }

    pub fn terms(&self) -> &[PowerLawTerm] {
        &self.terms
    }

    pub fn is_lineic(&self) -> bool {
        self.lineic
    }

    pub fn is_silent(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    /// `S(f) = sum h_alpha f^-alpha`. Zero at `f <= 0`.
    pub fn psd(&self, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|t| t.coeff * f.powf(-t.alpha)).sum()
    }

    /// Lumped model for `length_km` of fiber with this lineic model.
    pub fn over_length(&self, length_km: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| PowerLawTerm {
                    alpha: t.alpha,
                    coeff: t.coeff * length_km,
                })
                .collect(),
            lineic: false,
        }
    }

    /// Same model with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| PowerLawTerm {
                    alpha: t.alpha,
                    coeff: t.coeff * factor,
                })
                .collect(),
            lineic: self.lineic,
        }
    }
}

/// Uniformly sampled phase in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    samples: Vec<f64>,
    fs: f64,
    t0: f64,
}

impl PhaseSeries {
    pub fn new(samples: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Series(format!("sample rate must be > 0, got {fs}")));
        }
        if !t0.is_finite() {
            return Err(Error::Series("non-finite start time".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Series(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, fs, t0 })
    }

    pub fn zeros(n: usize, fs: f64) -> Result<Self> {
        Self::new(vec![0.0; n], fs, 0.0)
    }

    /// Construct without the finiteness scan; callers guarantee the invariants.
    pub(crate) fn from_parts(samples: Vec<f64>, fs: f64, t0: f64) -> Self {
        debug_assert!(fs > 0.0);
        Self { samples, fs, t0 }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// Samples from `start` onwards, with `t0` shifted accordingly.
    pub fn tail(&self, start: usize) -> PhaseSeries {
        let start = start.min(self.samples.len());
        PhaseSeries::from_parts(self.samples[start..].to_vec(), self.fs, self.time(start))
    }

    /// Element-wise sum; both series must share `fs` and length.
    pub fn add(&self, other: &PhaseSeries) -> Result<PhaseSeries> {
        if self.fs != other.fs || self.len() != other.len() {
            return Err(Error::SamplingMismatch(format!(
                "cannot add series ({} samples @ {} Hz) and ({} samples @ {} Hz)",
                self.len(),
                self.fs,
                other.len(),
                other.fs
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(PhaseSeries::from_parts(samples, self.fs, self.t0))
    }
}

/// Stream identifier for a named sub-sequence.
fn stream_id(label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0xff]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Counter-based generator for the sub-stream `(label, index)` of `seed`.
///
/// Streams are addressed by name rather than by generation order, so cells
/// or realizations produced in any order (or in parallel) are identical.
pub fn stream_rng(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label, index));
    rng
}

/// Derive an independent `u64` seed for `(label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, label, index).next_u64()
}

/// Shape white Gaussian noise to the one-sided PSD `psd(f)`.
pub(crate) fn shape_spectrum(
    psd: impl Fn(f64) -> f64,
    fs: f64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let half = n / 2;
    let df = fs / n as f64;
    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(n);
    let mut spectrum = c2r.make_input_vec();
    // E|X_k|^2 = n fs S(f_k) / 2 for the unnormalized forward DFT.
    let norm = n as f64 * fs / 2.0;
    for (k, bin) in spectrum.iter_mut().enumerate().skip(1) {
        let s = psd(k as f64 * df);
        let amp = (norm * s).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        if n % 2 == 0 && k == half {
            *bin = Complex::new(amp * re, 0.0);
        } else {
            let im: f64 = StandardNormal.sample(rng);
            *bin = Complex::new(
                amp * re * std::f64::consts::FRAC_1_SQRT_2,
                amp * im * std::f64::consts::FRAC_1_SQRT_2,
            );
        }
    }
    spectrum[0] = Complex::new(0.0, 0.0);
    let mut out = c2r.make_output_vec();
    c2r.process(&mut spectrum, &mut out)
        .expect("buffer sizes come from the planner");
    let scale = 1.0 / n as f64;
    for x in &mut out {
        *x *= scale;
    }
    out
}

fn check_synthesis_args(fs: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Series(format!("need at least 2 samples, got {n}")));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Series(format!("sample rate must be > 0, got {fs}")));
    }
    Ok(())
}

/// Lumped colored phase noise with the model's PSD.
pub fn synth_power_law_phase_noise(
    model: &PowerLawNoiseModel,
    fs: f64,
    n: usize,
    seed: u64,
) -> Result<PhaseSeries> {
    if model.is_lineic() {
        return Err(Error::LineicModel);
    }
    check_synthesis_args(fs, n)?;
    synth_stream(model, fs, n, seed, "lumped", 0)
}

/// Synthesis on an explicit named sub-stream.
pub(crate) fn synth_stream(
    model: &PowerLawNoiseModel,
    fs: f64,
    n: usize,
    seed: u64,
    label: &str,
    index: u64,
) -> Result<PhaseSeries> {
    check_synthesis_args(fs, n)?;
    if model.is_silent() {
        return Ok(PhaseSeries::from_parts(vec![0.0; n], fs, 0.0));
    }
    let mut rng = stream_rng(seed, label, index);
    let samples = shape_spectrum(|f| model.psd(f), fs, n, &mut rng);
    Ok(PhaseSeries::from_parts(samples, fs, 0.0))
}

/// One spatial cell of a distributed noise field.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCell {
    /// Cell center, measured from the span's input end.
    pub position_km: f64,
    pub series: PhaseSeries,
}

/// Spatially resolved phase noise along one span.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    span_id: String,
    fs: f64,
    n: usize,
    cells: Vec<NoiseCell>,
}

impl NoiseField {
    pub fn new(
        span_id: impl Into<String>,
        fs: f64,
        n: usize,
        cells: Vec<NoiseCell>,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::NoCells);
        }
        for w in cells.windows(2) {
            if w[1].position_km <= w[0].position_km {
                return Err(Error::Series(
                    "cell positions must be strictly increasing".into(),
                ));
            }
        }
        for c in &cells {
            if c.series.fs() != fs || c.series.len() != n {
                return Err(Error::SamplingMismatch(
                    "all cells must share the field's sampling".into(),
                ));
            }
        }
        Ok(Self {
            span_id: span_id.into(),
            fs,
            n,
            cells,
        })
    }

    pub fn span_id(&self) -> &str {
        &self.span_id
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn duration(&self) -> f64 {
        self.n as f64 / self.fs
    }

    pub fn cells(&self) -> &[NoiseCell] {
        &self.cells
    }

    /// Sum of all cells, i.e. the lumped phase the span would impose with no
    /// propagation delays.
    pub fn summed(&self) -> PhaseSeries {
        let mut acc = vec![0.0; self.n];
        for c in &self.cells {
            for (a, x) in acc.iter_mut().zip(c.series.samples()) {
                *a += x;
            }
        }
        PhaseSeries::from_parts(acc, self.fs, 0.0)
    }
}

/// Default number of cells per span.
pub const DEFAULT_CELLS_PER_SPAN: usize = 16;

/// Split a span's lineic noise into `n_cells` equal, independent cells.
pub fn fiber_noise_field(
    span: &FiberSpan,
    n_cells: usize,
    fs: f64,
    n: usize,
    seed: u64,
) -> Result<NoiseField> {
    if n_cells == 0 {
        return Err(Error::NoCells);
    }
    if !span.lineic_noise.is_lineic() {
        return Err(Error::NotLineic(span.id.clone()));
    }
    check_synthesis_args(fs, n)?;
    let cell_len = span.length_km / n_cells as f64;
    let cell_model = span.lineic_noise.over_length(cell_len);
    let cells = (0..n_cells)
        .map(|k| {
            let series = synth_stream(&cell_model, fs, n, seed, &span.id, k as u64)?;
            Ok(NoiseCell {
                position_km: (k as f64 + 0.5) * cell_len,
                series,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseField::new(span.id.clone(), fs, n, cells)
}

/// Summed-cell PSD per km of span, rad²/Hz/km.
pub fn estimate_lineic_psd(
    field: &NoiseField,
    span: &FiberSpan,
    welch: &WelchConfig,
) -> Result<PsdEstimate> {
    if field.cells().is_empty() {
        return Err(Error::NoCells);
    }
    if span.length_km <= 0.0 {
        return Err(Error::Link(format!("span '{}' has zero length", span.id)));
    }
    let psd = welch_psd(&field.summed(), welch)?;
    Ok(psd.scaled(1.0 / span.length_km))
}
