use proptest::prelude::*;

use fiberlink::cascade::{plan_cascade, predict_cascade_adev, MeasurementModel, RouteSpec};
use fiberlink::link::{
    link_budget, ElementKind, FiberSpan, LinkEntry, LinkTopology, OpticalElement,
};
use fiberlink::metrology::{
    allan_deviation, integrated_rms_phase, tracking_filter, welch_psd, FractionalFreqSeries,
    WelchConfig,
};
use fiberlink::noise::{synth_power_law_phase_noise, PhaseSeries, PowerLawNoiseModel};
use fiberlink::scenario::{parse_config, parse_series_csv};
use fiberlink::servo::{residual_transfer_ratio, NoiseDistribution};

fn quiet() -> PowerLawNoiseModel {
    PowerLawNoiseModel::lineic_power_law(2.0, 1.0).unwrap()
}

fn entry(i: usize, is_span: bool, value: f64) -> LinkEntry {
    if is_span {
        LinkEntry::Span(FiberSpan::new(format!("s{i}"), 1.0 + value, quiet(), value).unwrap())
    } else {
        LinkEntry::Element(OpticalElement::passive(
            format!("e{i}"),
            ElementKind::Connector,
            value,
        ))
    }
}

fn topology(parts: &[(bool, f64)]) -> LinkTopology {
    let mut entries: Vec<LinkEntry> = parts
        .iter()
        .enumerate()
        .map(|(i, &(s, v))| entry(i, s, v))
        .collect();
    entries.push(entry(parts.len(), true, 1.0));
    LinkTopology::new(entries, 1.944e14, 1e-3).unwrap()
}

fn ffs(y: Vec<f64>) -> FractionalFreqSeries {
    FractionalFreqSeries {
        y,
        gate_s: 0.01,
        nu0_hz: 1e14,
        t0: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>(), alpha in 0.0f64..3.0) {
        let m = PowerLawNoiseModel::power_law(alpha, 1.0).unwrap();
        let a = synth_power_law_phase_noise(&m, 100.0, 1024, seed).unwrap();
        let b = synth_power_law_phase_noise(&m, 100.0, 1024, seed).unwrap();
        prop_assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn parseval_holds(seed in any::<u64>(), alpha in 0.0f64..0.5, h in 1e-4f64..1e2) {
        let m = PowerLawNoiseModel::power_law(alpha, h).unwrap();
        let n = 1 << 16;
        let s = synth_power_law_phase_noise(&m, 1000.0, n, seed).unwrap();
        let psd = welch_psd(&s, &WelchConfig::for_length(n, 8)).unwrap();
        let integral: f64 = psd.values.iter().sum::<f64>() * psd.bin_width();
        let mean = s.samples().iter().sum::<f64>() / n as f64;
        let var = s.samples().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!((integral / var - 1.0).abs() < 0.1, "{} vs {}", integral, var);
    }

    #[test]
    fn independent_psds_add(seed in 0u64..1_000_000, h1 in 0.1f64..10.0, h2 in 0.1f64..10.0) {
        let n = 1 << 16;
        let a = synth_power_law_phase_noise(&PowerLawNoiseModel::power_law(0.0, h1).unwrap(), 1000.0, n, seed).unwrap();
        let b = synth_power_law_phase_noise(&PowerLawNoiseModel::power_law(1.0, h2).unwrap(), 1000.0, n, seed + 1).unwrap();
        let cfg = WelchConfig::for_length(n, 8);
        let pa = welch_psd(&a, &cfg).unwrap();
        let pb = welch_psd(&b, &cfg).unwrap();
        let pab = welch_psd(&a.add(&b).unwrap(), &cfg).unwrap();
        let sep = integrated_rms_phase(&pa, 10.0, 400.0).unwrap().powi(2)
            + integrated_rms_phase(&pb, 10.0, 400.0).unwrap().powi(2);
        let sum = integrated_rms_phase(&pab, 10.0, 400.0).unwrap().powi(2);
        prop_assert!((sum / sep - 1.0).abs() < 0.05);
    }

    #[test]
    fn welch_is_linear_in_power(seed in any::<u64>(), a in -100.0f64..100.0) {
        let s = synth_power_law_phase_noise(&PowerLawNoiseModel::power_law(0.0, 1.0).unwrap(), 10.0, 4096, seed).unwrap();
        let scaled = PhaseSeries::new(s.samples().iter().map(|v| a * v).collect(), 10.0, 0.0).unwrap();
        let cfg = WelchConfig::new(512);
        let p = welch_psd(&s, &cfg).unwrap();
        let q = welch_psd(&scaled, &cfg).unwrap();
        for (x, y) in p.values.iter().zip(&q.values) {
            prop_assert!((y - a * a * x).abs() <= 1e-9 * (a * a * x).abs() + 1e-300);
        }
    }

    #[test]
    fn allan_scales_and_ignores_offsets(
        y in prop::collection::vec(-1.0f64..1.0, 64..400),
        a in -1e3f64..1e3,
        c in -1e3f64..1e3,
    ) {
        let taus = [0.01, 0.02, 0.05];
        let base = allan_deviation(&ffs(y.clone()), &taus).unwrap();
        let scaled = allan_deviation(&ffs(y.iter().map(|v| a * v).collect()), &taus).unwrap();
        let shifted = allan_deviation(&ffs(y.iter().map(|v| v + c).collect()), &taus).unwrap();
        for ((p, s), o) in base.points.iter().zip(&scaled.points).zip(&shifted.points) {
            prop_assert!((s.adev - a.abs() * p.adev).abs() <= 1e-9 * (a.abs() * p.adev + 1e-12));
            prop_assert!((o.adev - p.adev).abs() <= 1e-6 * (p.adev + c.abs() * 1e-6));
            prop_assert!(p.count >= 1);
        }
    }

    #[test]
    fn tracking_filter_never_amplifies(
        x in prop::collection::vec(-1e3f64..1e3, 2..500),
        bw in 0.1f64..49.0,
    ) {
        let s = PhaseSeries::new(x.clone(), 100.0, 0.0).unwrap();
        let y = tracking_filter(&s, bw).unwrap();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(y.samples().iter().all(|v| v.abs() <= peak * (1.0 + 1e-12)));
    }

    #[test]
    fn loss_is_additive_and_order_independent(
        parts in prop::collection::vec((any::<bool>(), 0.0f64..20.0), 1..12),
    ) {
        let b = link_budget(&topology(&parts));
        let expect: f64 = parts.iter().map(|p| p.1).sum::<f64>() + 1.0;
        prop_assert!((b.total_one_way_loss_db - expect).abs() < 1e-9);
        let mut rev = parts.clone();
        rev.reverse();
        let r = link_budget(&topology(&rev));
        prop_assert!((r.total_one_way_loss_db - b.total_one_way_loss_db).abs() < 1e-9);
        prop_assert!((b.total_round_trip_loss_db - 2.0 * b.total_one_way_loss_db).abs() < 1e-9);
    }

    #[test]
    fn power_follows_cumulative_loss(
        parts in prop::collection::vec((any::<bool>(), 0.0f64..20.0), 1..12),
    ) {
        let b = link_budget(&topology(&parts));
        let mut prev = b.input_power_w;
        for e in &b.ledger {
            let want = b.input_power_w * 10f64.powf(-e.cumulative_db / 10.0);
            prop_assert!((e.power_w - want).abs() <= 1e-12 * want.max(1e-300));
            prop_assert!(e.power_w <= prev * (1.0 + 1e-12));
            prev = e.power_w;
        }
    }

    #[test]
    fn delays_add_over_concatenation(a in 0.1f64..500.0, b in 0.1f64..500.0) {
        let span = |id: &str, l: f64| LinkEntry::Span(FiberSpan::new(id, l, quiet(), 0.0).unwrap());
        let joined = LinkTopology::new(vec![span("a", a), span("b", b)], 1.944e14, 1e-3).unwrap();
        let one = LinkTopology::new(vec![span("a", a)], 1.944e14, 1e-3).unwrap();
        let two = LinkTopology::new(vec![span("b", b)], 1.944e14, 1e-3).unwrap();
        let sum = one.one_way_delay_s() + two.one_way_delay_s();
        prop_assert!((joined.one_way_delay_s() - sum).abs() <= 1e-15 * sum.max(1.0));
    }

    #[test]
    fn cascade_plans_are_consistent(
        length in 10.0f64..3000.0,
        loss_per_km in 0.15f64..0.35,
        max_loss in 15.0f64..60.0,
        min_bw in 0.0f64..300.0,
    ) {
        let route = RouteSpec::new(length, length * loss_per_km, quiet(), max_loss, min_bw);
        if let Ok(plan) = plan_cascade(&route) {
            let total: f64 = plan.segments.iter().map(|s| s.length_km).sum();
            prop_assert!((total - length).abs() < 1e-6 * length);
            for s in &plan.segments {
                prop_assert!(s.loss_db <= max_loss + 1e-9);
                prop_assert!(s.loop_bandwidth_cap_hz >= min_bw - 1e-9);
            }
            for st in plan.interior_stations() {
                prop_assert_eq!(st.functions.len(), 3);
            }
            prop_assert_eq!(plan.interior_stations().len(), plan.segments.len() - 1);
        }
    }

    #[test]
    fn lumped_leakage_grows_toward_the_far_end(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
        let tau = 5.4e-4;
        let (lo, hi) = if x1 < x2 { (x1, x2) } else { (x2, x1) };
        let a = residual_transfer_ratio(1.0, tau, &NoiseDistribution::LumpedAt(lo)).unwrap();
        let b = residual_transfer_ratio(1.0, tau, &NoiseDistribution::LumpedAt(hi)).unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn config_parser_never_panics(text in ".{0,400}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn series_parser_never_panics(text in "[0-9t_sphaer,.\\-e\n ]{0,300}") {
        let _ = parse_series_csv(&text);
    }

    #[test]
    fn splitting_never_worsens_the_prediction(length in 20.0f64..2000.0, k in 1usize..6) {
        let noise = PowerLawNoiseModel::lineic_power_law(2.0, 4.0).unwrap();
        let adev = |n: usize| {
            let total = 0.2 * length;
            let route = RouteSpec::new(length, total, noise.clone(), total / n as f64 * (1.0 + 1e-9), 0.0);
            let plan = plan_cascade(&route).unwrap();
            assert_eq!(plan.segments.len(), n);
            predict_cascade_adev(&plan, &noise, &[1.0], &MeasurementModel::default()).unwrap().points[0].adev
        };
        prop_assert!(adev(k + 1) <= adev(k));
    }
}
