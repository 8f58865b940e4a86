//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line; run with `--nocapture` to see them.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use fiberlink::cascade::{plan_cascade, predict_cascade_adev, MeasurementModel, RouteSpec};
use fiberlink::link::{link_budget, FiberSpan, LinkTopology, DEFAULT_CARRIER_HZ};
use fiberlink::metrology::{
    allan_deviation, loglog_fit, pi_counter, tracking_filter, welch_psd, AdevSeries,
    FractionalFreqSeries, PsdEstimate, WelchConfig,
};
use fiberlink::noise::{derive_seed, synth_power_law_phase_noise, PhaseSeries, PowerLawNoiseModel};
use fiberlink::scenario::{
    parse_config, render_report, run_scenario, run_to_dir, ConfigFile, RunOutcome, Scenario,
};
use fiberlink::servo::{
    compensated_from_drive, residual_transfer_ratio, LinkDrive, NoiseDistribution, ServoConfig,
    SimConfig,
};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.cfg"))
}

fn parse(text: &str) -> ConfigFile {
    let (cfg, diag) = parse_config(text);
    assert!(diag.is_valid(), "{diag}");
    cfg.expect("valid config")
}

fn load_scenario(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    match parse(&text) {
        ConfigFile::Scenario(s) => s,
        ConfigFile::Route(_) => panic!("{name} is a route"),
    }
}

fn report(n: u32, pass: bool, detail: impl std::fmt::Display) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn log_grid(f1: f64, f2: f64, per_decade: usize) -> Vec<f64> {
    let decades = (f2 / f1).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n)
        .map(|i| f1 * 10f64.powf(decades * i as f64 / n as f64))
        .collect()
}

/// Bins within a factor `1 + rel` of `f`.
fn band(p: &PsdEstimate, f: f64, rel: f64) -> Vec<usize> {
    let (lo, hi) = (f / (1.0 + rel), f * (1.0 + rel));
    let bins: Vec<usize> = (0..p.freqs.len())
        .filter(|&i| (lo..=hi).contains(&p.freqs[i]))
        .collect();
    assert!(!bins.is_empty(), "no bins near {f} Hz");
    bins
}

fn band_ratio(num: &PsdEstimate, den: &PsdEstimate, f: f64) -> f64 {
    let bins = band(den, f, 0.25);
    let n: f64 = bins.iter().map(|&i| num.values[i]).sum();
    let d: f64 = bins.iter().map(|&i| den.values[i]).sum();
    n / d
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// The 108 km scenario over 2000 s, shared by criteria 2 to 5 and 8.
fn link108_long() -> &'static RunOutcome {
    static RUN: OnceLock<RunOutcome> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut s = load_scenario("link108");
        s.sim.duration_s = 2000.0;
        s.sim.realizations = 2;
        s.analysis.taus_s = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
        run_scenario(&s).unwrap()
    })
}

#[test]
fn criterion_1_rejection_follows_the_delay_law() {
    let start = Instant::now();
    let text = std::fs::read_to_string(scenario_path("link108")).unwrap();
    let head = &text[..text.find("[noise.dark]").unwrap()];
    let tail = &text[text.find("[servo]").unwrap()..];
    let uniform = format!(
        "{head}[noise.uniform]\nspans = [\"dark-a\", \"shared-1\", \"shared-2\", \"dark-b\"]\n\
         terms = [{{ alpha = 2.0, h_rad2_per_hz_per_km = 4.0 }}]\n\n{tail}"
    );
    let ConfigFile::Scenario(mut s) = parse(&uniform) else {
        panic!("not a scenario")
    };
    s.sim.duration_s = 2000.0;
    s.sim.realizations = 10;
    s.sim.cells_per_span = 16;
    s.analysis.welch_segment_samples = Some(1 << 21);
    s.analysis.taus_s = vec![1.0, 10.0];
    let out = run_scenario(&s).unwrap();
    let tau = s.link.one_way_delay_s();

    let freqs = log_grid(0.02, 2.0, 6);
    let ratios: Vec<f64> = freqs
        .iter()
        .map(|&f| band_ratio(&out.psd_compensated, &out.psd_free, f))
        .collect();
    let (slope, _) = loglog_fit(&freqs, &ratios).unwrap();
    let slope_db = 10.0 * slope;
    // The oracle is weighted over the same bins as the estimate.
    let errors: Vec<f64> = freqs
        .iter()
        .zip(&ratios)
        .map(|(&f, &r)| {
            let bins = band(&out.psd_free, f, 0.25);
            let (mut num, mut den) = (0.0, 0.0);
            for i in bins {
                let fi = out.psd_free.freqs[i];
                let w = out.psd_free.values[i];
                num += w * residual_transfer_ratio(fi, tau, &NoiseDistribution::Uniform).unwrap();
                den += w;
            }
            db(r) - db(num / den)
        })
        .collect();
    println!(
        "rejection error by frequency: {:?}",
        freqs
            .iter()
            .zip(&errors)
            .map(|(f, e)| format!("{f:.3} Hz {e:+.2} dB"))
            .collect::<Vec<_>>()
    );
    let worst = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = (slope_db - 20.0).abs() <= 2.0 && worst <= 1.5;
    report(
        1,
        pass,
        format!("slope {slope_db:.2} dB/decade, worst pointwise error {worst:.2} dB, {secs:.0} s"),
    );
    assert!((slope_db - 20.0).abs() <= 2.0, "slope {slope_db}");
    assert!(worst <= 1.5, "pointwise error {worst} dB");
}

#[test]
fn criterion_2_rejection_at_one_hertz() {
    let out = link108_long();
    let r = &out.report.rejection;
    let err = (r.simulated_db - r.profile_db).abs();
    let text = render_report(&out.report);
    let shows_both = text.contains(&format!("{:8.2} dB", r.uniform_db))
        && text.contains(&format!("{:8.2} dB", r.rule_of_thumb_db))
        && text.contains("differ by");
    let pass = err <= 1.5
        && (r.uniform_db + 54.2).abs() < 0.1
        && (r.rule_of_thumb_db + 65.4).abs() < 0.1
        && r.convention_gap_flagged
        && shows_both;
    report(
        2,
        pass,
        format!(
            "simulated {:.2} dB vs oracle {:.2} dB; uniform {:.2} dB, rule of thumb {:.2} dB, flagged {}",
            r.simulated_db, r.profile_db, r.uniform_db, r.rule_of_thumb_db, r.convention_gap_flagged
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_free_running_level_and_correction_signal() {
    let out = link108_long();
    let free = out.psd_free.band_mean(1.0, 0.25).unwrap();
    let level_err = db(free / 430.0).abs();
    let worst = log_grid(0.1, 10.0, 5)
        .into_iter()
        .map(|f| db(band_ratio(&out.psd_correction, &out.psd_free, f)).abs())
        .fold(0.0, f64::max);
    let pass = level_err <= 1.5 && worst <= 1.0;
    report(
        3,
        pass,
        format!("free PSD at 1 Hz {free:.0} rad^2/Hz, correction vs free worst {worst:.2} dB"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_adev_slope() {
    let out = link108_long();
    let pts: Vec<_> = out
        .adev_filtered
        .points
        .iter()
        .filter(|p| (1.0..=100.0).contains(&p.tau_s))
        .collect();
    let taus: Vec<f64> = pts.iter().map(|p| p.tau_s).collect();
    let adevs: Vec<f64> = pts.iter().map(|p| p.adev).collect();
    let (slope, _) = loglog_fit(&taus, &adevs).unwrap();
    let at1 = out.adev_filtered.at(1.0).unwrap();
    let pass = (slope + 1.0).abs() <= 0.15 && (1e-16..=1e-15).contains(&at1);
    report(4, pass, format!("slope {slope:.3}, ADEV(1 s) {at1:.3e}"));
    assert!(pass);
}

#[test]
fn criterion_5_tracking_filter_ratio() {
    let start = Instant::now();
    let out = link108_long();
    let ratio = out.report.unfiltered_to_filtered_ratio.unwrap();
    let pass = (4.0..=6.0).contains(&ratio);
    report(
        5,
        pass,
        format!(
            "unfiltered/filtered at 1 s {ratio:.2}, {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

fn slope_of(adev: &AdevSeries) -> f64 {
    let taus: Vec<f64> = adev.points.iter().map(|p| p.tau_s).collect();
    let vals: Vec<f64> = adev.points.iter().map(|p| p.adev).collect();
    loglog_fit(&taus, &vals).unwrap().0
}

#[test]
fn criterion_6_estimator_suite() {
    let fs = 100.0;
    let n = 1 << 20;
    let nu0 = 1e14;
    let mut failures = Vec::new();

    // White FM: phase PSD h0 nu0^2 / f^2 gives S_y = h0.
    let h0 = 1e-26;
    let wfm = PowerLawNoiseModel::power_law(2.0, h0 * nu0 * nu0).unwrap();
    let phase = synth_power_law_phase_noise(&wfm, fs, n, 1).unwrap();
    let y = pi_counter(&phase, 0.01, nu0).unwrap();
    let taus = [0.1, 1.0, 10.0];
    let adev = allan_deviation(&y, &taus).unwrap();
    let mut wfm_worst: f64 = 0.0;
    for p in &adev.points {
        let want = (h0 / (2.0 * p.tau_s)).sqrt();
        wfm_worst = wfm_worst.max((p.adev / want - 1.0).abs());
    }
    if wfm_worst > 0.05 {
        failures.push(format!("white FM error {wfm_worst:.3}"));
    }

    // Canonical slopes: phase noise f^-alpha maps to ADEV slope (alpha - 3) / 2,
    // with flicker PM held at -1.
    let canon = [
        (0.0, -1.0, 0.1),
        (1.0, -1.0, 0.15),
        (2.0, -0.5, 0.1),
        (3.0, 0.0, 0.15),
    ];
    let long_taus = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];
    for (alpha, want, tol) in canon {
        let m = PowerLawNoiseModel::power_law(alpha, 1.0).unwrap();
        let ph = synth_power_law_phase_noise(&m, fs, n, 7).unwrap();
        let y = pi_counter(&ph, 0.01, nu0).unwrap();
        let s = slope_of(&allan_deviation(&y, &long_taus).unwrap());
        if (s - want).abs() > tol {
            failures.push(format!("alpha {alpha}: slope {s:.3}, want {want}"));
        }
    }
    // Random-walk FM from integrated white frequency.
    let white =
        synth_power_law_phase_noise(&PowerLawNoiseModel::power_law(0.0, 1.0).unwrap(), fs, n, 9)
            .unwrap();
    let mut acc = 0.0;
    let y_rw: Vec<f64> = white
        .samples()
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    let y_series = FractionalFreqSeries {
        y: y_rw,
        gate_s: 1.0 / fs,
        nu0_hz: nu0,
        t0: 0.0,
    };
    let s = slope_of(&allan_deviation(&y_series, &long_taus).unwrap());
    if (s - 0.5).abs() > 0.1 {
        failures.push(format!("random-walk FM slope {s:.3}"));
    }

    // Parseval and synthesis fidelity.
    let wpm = PowerLawNoiseModel::power_law(0.0, 1e-3).unwrap();
    let ph = synth_power_law_phase_noise(&wpm, fs, n, 11).unwrap();
    let psd = welch_psd(&ph, &WelchConfig::for_length(n, 8)).unwrap();
    let integral: f64 = psd.values.iter().sum::<f64>() * psd.bin_width();
    let var = ph.samples().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let parseval = (integral / var - 1.0).abs();
    if parseval > 0.1 {
        failures.push(format!("Parseval error {parseval:.3}"));
    }
    let fiber = PowerLawNoiseModel::power_law(2.0, 14.0).unwrap();
    let mut est = Vec::new();
    for seed in 0..10 {
        let ph = synth_power_law_phase_noise(&fiber, 1000.0, 1 << 18, seed).unwrap();
        est.push(welch_psd(&ph, &WelchConfig::new(1 << 15)).unwrap());
    }
    let avg = PsdEstimate::average(&est).unwrap();
    let synth_worst = log_grid(1.0, 100.0, 5)
        .into_iter()
        .map(|f| db(avg.band_mean(f, 0.1).unwrap() / fiber.psd(f)).abs())
        .fold(0.0, f64::max);
    if synth_worst > 1.0 {
        failures.push(format!("synthesis error {synth_worst:.2} dB"));
    }

    report(
        6,
        failures.is_empty(),
        format!(
            "white FM {:.1}%, Parseval {:.1}%, synthesis {synth_worst:.2} dB {}",
            100.0 * wfm_worst,
            100.0 * parseval,
            failures.join("; ")
        ),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_7_budget() {
    let s = load_scenario("link108");
    let b = link_budget(&s.link);
    let text = std::fs::read_to_string(scenario_path("cascade600")).unwrap();
    let ConfigFile::Route(route) = parse(&text) else {
        panic!("cascade600 is not a route")
    };
    let injection = b.ledger.iter().find(|e| e.id == "oadm-1").unwrap();
    let monotone = b
        .ledger
        .windows(2)
        .filter(|w| w[1].gain_db == 0.0)
        .all(|w| w[1].power_w <= w[0].power_w);
    let expect = b.input_power_w * 10f64.powf(-injection.cumulative_db / 10.0);
    let pass = (b.total_one_way_loss_db - 38.0).abs() <= 1.0
        && route.route.total_loss_db == 167.0
        && monotone
        && (injection.power_w / expect - 1.0).abs() < 1e-12
        && (b.input_power_w - 2e-3).abs() < 1e-12
        && (injection.power_w / 35e-6 - 1.0).abs() < 0.02;
    report(
        7,
        pass,
        format!(
            "link108 {:.2} dB, cascade600 {} dB, {:.1} uW at {}",
            b.total_one_way_loss_db,
            route.route.total_loss_db,
            injection.power_w * 1e6,
            injection.id
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_integrated_phase() {
    let long = link108_long().report.integrated_phase_rad;
    let mut s = load_scenario("link86");
    s.sim.duration_s = 2000.0;
    s.sim.realizations = 2;
    s.analysis.taus_s = vec![1.0, 10.0];
    let short = run_scenario(&s).unwrap().report.integrated_phase_rad;
    let in_band = (0.5..=3.0).contains(&long);
    report(
        8,
        in_band && short < long,
        format!(
            "108 km {long:.2} rad, 86 km {short:.2} rad; ordering {}, band [0.5, 3] {}",
            if short < long { "holds" } else { "violated" },
            if in_band { "met" } else { "missed (soft)" }
        ),
    );
    assert!(
        short < long,
        "86 km {short} rad is not below 108 km {long} rad"
    );
}

fn uniform_link(length_km: f64, noise: &PowerLawNoiseModel) -> LinkTopology {
    LinkTopology::single_span(
        FiberSpan::new("span", length_km, noise.clone(), 0.2 * length_km).unwrap(),
    )
    .unwrap()
}

/// Filtered ADEV(1 s) of a chain of independently compensated segments.
fn simulate_chain(segment_km: f64, segments: usize, noise: &PowerLawNoiseModel, seeds: u64) -> f64 {
    let fs = 10_000.0;
    let n = 3_000_000;
    let link = uniform_link(segment_km, noise);
    let servo = ServoConfig::default_for_link(&link).unwrap();
    let mut all = Vec::new();
    for seed in 0..seeds {
        let mut total: Option<PhaseSeries> = None;
        for k in 0..segments {
            let seg_seed = derive_seed(seed, "segment", k as u64);
            let sim = SimConfig {
                fs_hz: fs,
                n_samples: n,
                seed: seg_seed,
            };
            let drive = LinkDrive::synthesize(&link, 16, &sim).unwrap();
            let r = compensated_from_drive(&drive, &servo, seg_seed).unwrap();
            let res = r.residual_phase.tail(r.lock_index());
            total = Some(match total {
                None => res,
                Some(t) => t.add(&res).unwrap(),
            });
        }
        let filtered = tracking_filter(&total.unwrap(), 10.0).unwrap();
        let y = pi_counter(&filtered, 0.01, DEFAULT_CARRIER_HZ).unwrap();
        all.push(allan_deviation(&y, &[1.0]).unwrap());
    }
    AdevSeries::pool(&all).unwrap().points[0].adev
}

#[test]
fn criterion_9_cascade_split() {
    let start = Instant::now();
    let noise = PowerLawNoiseModel::lineic_power_law(2.0, 4.0).unwrap();
    let unsplit = simulate_chain(400.0, 1, &noise, 3);
    let split = simulate_chain(200.0, 2, &noise, 3);
    let gain = unsplit / split;

    let m = MeasurementModel::default();
    let mut route = RouteSpec::new(400.0, 80.0, noise.clone(), 90.0, 10.0);
    let one = plan_cascade(&route).unwrap();
    route.max_segment_loss_db = 40.0;
    let two = plan_cascade(&route).unwrap();
    assert_eq!((one.segments.len(), two.segments.len()), (1, 2));
    let p1 = predict_cascade_adev(&one, &noise, &[1.0], &m)
        .unwrap()
        .points[0]
        .adev;
    let p2 = predict_cascade_adev(&two, &noise, &[1.0], &m)
        .unwrap()
        .points[0]
        .adev;
    let err = (p1 / unsplit - 1.0).abs().max((p2 / split - 1.0).abs());
    let pass = (1.6..=2.4).contains(&gain) && err <= 0.3;
    report(
        9,
        pass,
        format!(
            "gain {gain:.2} (predicted {:.2}), prediction error {:.1}%, {:.0} s",
            p1 / p2,
            100.0 * err,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let mut s = load_scenario("link108");
    s.sim.duration_s = 60.0;
    s.analysis.welch_segment_samples = Some(65536);
    s.analysis.taus_s = vec![0.1, 1.0];
    s.analysis.export_series = true;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to_dir(&s, a.path()).unwrap();
    run_to_dir(&s, b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<_> = names
        .iter()
        .filter(|n| {
            std::fs::read(a.path().join(n)).unwrap() != std::fs::read(b.path().join(n)).unwrap()
        })
        .collect();
    let csvs = names
        .iter()
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .count();
    let pass = differing.is_empty() && csvs >= 8;
    report(
        10,
        pass,
        format!("{} files compared, {} differ", names.len(), differing.len()),
    );
    assert!(pass, "{differing:?}");
}
