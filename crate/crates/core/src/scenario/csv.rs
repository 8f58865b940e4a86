//! CSV artifacts. Floats are written with nine significant digits.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::link::BudgetReport;
use crate::metrology::{AdevSeries, PsdEstimate, RejectionSpectrum};
use crate::noise::PhaseSeries;

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    write_rows_to(std::fs::File::create(path)?, header, rows)
}

fn write_rows_to(
    out: impl Write,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_psd_csv(path: &Path, psd: &PsdEstimate) -> std::io::Result<()> {
    write_psd(std::fs::File::create(path)?, psd)
}

pub fn write_psd(out: impl Write, psd: &PsdEstimate) -> std::io::Result<()> {
    write_rows_to(
        out,
        &["frequency_hz", "psd_rad2_per_hz"],
        psd.freqs
            .iter()
            .zip(&psd.values)
            .skip(1)
            .map(|(f, v)| vec![fmt_f64(*f), fmt_f64(*v)]),
    )
}

pub fn write_rejection_csv(path: &Path, r: &RejectionSpectrum) -> std::io::Result<()> {
    write_rows(
        path,
        &["frequency_hz", "rejection_db"],
        r.freqs
            .iter()
            .zip(&r.db)
            .skip(1)
            .map(|(f, v)| vec![fmt_f64(*f), fmt_f64(*v)]),
    )
}

pub fn write_adev_csv(path: &Path, a: &AdevSeries) -> std::io::Result<()> {
    write_adev(std::fs::File::create(path)?, a)
}

pub fn write_adev(out: impl Write, a: &AdevSeries) -> std::io::Result<()> {
    write_rows_to(
        out,
        &["tau_s", "adev", "error_bar", "count"],
        a.points.iter().map(|p| {
            vec![
                fmt_f64(p.tau_s),
                fmt_f64(p.adev),
                fmt_f64(p.error_bar()),
                p.count.to_string(),
            ]
        }),
    )
}

pub fn write_budget_csv(path: &Path, b: &BudgetReport) -> std::io::Result<()> {
    write_rows(
        path,
        &[
            "id",
            "kind",
            "loss_db",
            "gain_db",
            "cumulative_db",
            "power_w",
        ],
        b.ledger.iter().map(|e| {
            vec![
                e.id.clone(),
                e.kind.clone(),
                fmt_f64(e.loss_db),
                fmt_f64(e.gain_db),
                fmt_f64(e.cumulative_db),
                fmt_f64(e.power_w),
            ]
        }),
    )
}

pub fn write_series_csv(path: &Path, s: &PhaseSeries) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "t_s,phase_rad")?;
    for (i, v) in s.samples().iter().enumerate() {
        writeln!(w, "{},{}", fmt_f64(s.time(i)), fmt_f64(*v))?;
    }
    w.flush()
}

/// Read a `t_s,phase_rad` series. The sample rate comes from the first two
/// timestamps and every later step must match it.
pub fn parse_series_csv(text: &str) -> Result<PhaseSeries> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r
        .headers()
        .map_err(|e| Error::Series(format!("header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ti), Some(pi)) = (col("t_s"), col("phase_rad")) else {
        return Err(Error::Series("expected columns t_s and phase_rad".into()));
    };
    let mut t = Vec::new();
    let mut phase = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Series(format!("row {}: {e}", line + 2)))?;
        let get = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Series(format!("row {}: bad number '{s}'", line + 2)))
        };
        t.push(get(ti)?);
        phase.push(get(pi)?);
    }
    if t.len() < 2 {
        return Err(Error::Series("need at least two samples".into()));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(Error::Series("timestamps must increase".into()));
    }
    for (i, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::Series(format!(
                "non-uniform sampling at row {}",
                i + 3
            )));
        }
    }
    PhaseSeries::new(phase, 1.0 / dt, t[0])
}
