#![no_main]

use fiberlink::cascade::{plan_cascade, RouteSpec};
use fiberlink::noise::PowerLawNoiseModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut v = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let (Some(length), Some(loss), Some(max_loss), Some(min_bw), Some(h)) =
        (v.next(), v.next(), v.next(), v.next(), v.next())
    else {
        return;
    };
    let Ok(noise) = PowerLawNoiseModel::lineic_power_law(2.0, h) else {
        return;
    };
    let route = RouteSpec::new(length, loss, noise, max_loss, min_bw);
    if let Ok(plan) = plan_cascade(&route) {
        plan.check().unwrap();
        assert_eq!(plan.interior_stations().len() + 1, plan.segments.len());
    }
});
