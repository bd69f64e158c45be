//! Property tests for invariants that cut across modules.

use cowqkd::detection::{apply_dead_time, DetectionRecord, Slot};
use cowqkd::link::{decode_message, encode_message, MessageType, WireMessage};
use cowqkd::optics::{attenuate_mean_photon, click_rate_dead_time, secret_key_rate};
use cowqkd::privacy::{hash_fft, hash_naive, output_length, ToeplitzDescriptor};
use cowqkd::sweep::{analytic_row, GridPoint, Grids, SweepSpec};
use cowqkd::{Bits, KeyRateReport, OpticalBudget};
use proptest::prelude::*;

fn point(distance_km: f64, extra_db: f64, dead_time_us: f64, dr: f64, cr: f64) -> GridPoint {
    GridPoint {
        distance_km,
        extra_db,
        dead_time_us,
        bias_v: 2.0,
        dr,
        cr,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn attenuation_composes(mu in 1e-3f64..10.0, a in 0.0f64..40.0, b in 0.0f64..40.0) {
        let twice = attenuate_mean_photon(attenuate_mean_photon(mu, a), b);
        let once = attenuate_mean_photon(mu, a + b);
        prop_assert!((twice - once).abs() <= 1e-12 * once);
    }

    #[test]
    fn dead_time_throughput_is_monotone_and_bounded(
        rate in 1.0f64..1e9,
        dt in 1e-9f64..1e-3,
        k in 1.0f64..10.0,
    ) {
        let c = click_rate_dead_time(rate, dt);
        prop_assert!(c <= rate.min(1.0 / dt) * (1.0 + 1e-12));
        prop_assert!(click_rate_dead_time(rate, dt * k) <= c);
        prop_assert!(click_rate_dead_time(rate * k, dt) >= c);
    }

    #[test]
    fn key_rate_is_affine_with_negative_slopes(
        eff in 1.0f64..1e6,
        dr in 0.0f64..1.0,
        cr in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        // value at a convex combination equals the combination of values
        let (d0, d1) = (0.0, 1.0);
        let mix = secret_key_rate(eff, d0 + t * (d1 - d0), cr);
        let lin = (1.0 - t) * secret_key_rate(eff, d0, cr) + t * secret_key_rate(eff, d1, cr);
        prop_assert!((mix - lin).abs() <= 1e-9 * eff);
        if cr < 1.0 {
            prop_assert!(secret_key_rate(eff, dr * 0.5, cr) > secret_key_rate(eff, dr * 0.5 + 0.25, cr));
        }
        if dr < 1.0 {
            prop_assert!(secret_key_rate(eff, dr, cr * 0.5) > secret_key_rate(eff, dr, cr * 0.5 + 0.25));
        }
    }

    #[test]
    fn attenuator_equals_equivalent_fiber(d in 0.0f64..150.0, extra in 0.0f64..20.0, loss in 0.15f64..0.4) {
        let with_attenuator = OpticalBudget { distance_km: d, extra_loss_db: extra, loss_per_km: loss, ..OpticalBudget::default() };
        let longer = OpticalBudget { distance_km: d + extra / loss, extra_loss_db: 0.0, loss_per_km: loss, ..OpticalBudget::default() };
        let a = KeyRateReport::analytic(&with_attenuator, 0.03125, 0.5, false, 0.0);
        let b = KeyRateReport::analytic(&longer, 0.03125, 0.5, false, 0.0);
        prop_assert_eq!(a.total_clicks_hz.to_bits(), b.total_clicks_hz.to_bits());
        prop_assert_eq!(a.secret_kr_bps.to_bits(), b.secret_kr_bps.to_bits());
    }

    #[test]
    fn sweep_rate_falls_with_distance(d in 0.0f64..200.0, step in 0.1f64..50.0, dt in 20.0f64..50.0) {
        let spec = SweepSpec::default();
        let near = analytic_row(&spec, &point(d, 0.0, dt, 0.03125, 0.5)).unwrap();
        let far = analytic_row(&spec, &point(d + step, 0.0, dt, 0.03125, 0.5)).unwrap();
        prop_assert!(far.secret_kr_bps <= near.secret_kr_bps);
    }

    #[test]
    fn dead_time_filter_is_idempotent_and_spaces_clicks(
        gaps in prop::collection::vec(0.0f64..1e-4, 0..300),
        dt in 0.0f64..5e-5,
    ) {
        let mut t = 0.0;
        let events: Vec<DetectionRecord> = gaps
            .iter()
            .enumerate()
            .map(|(i, g)| {
                t += g;
                DetectionRecord { time_s: t, pair_index: i as u64, slot: Slot::Early }
            })
            .collect();
        let once = apply_dead_time(&events, dt).unwrap();
        prop_assert_eq!(apply_dead_time(&once, dt).unwrap(), once.clone());
        for w in once.windows(2) {
            prop_assert!(w[1].time_s - w[0].time_s >= dt);
        }
    }

    #[test]
    fn wire_frames_round_trip(kind in 1u8..=10, sid in any::<[u8; 16]>(), payload in prop::collection::vec(any::<u8>(), 0..512)) {
        let msg = WireMessage { kind: MessageType::from_code(kind).unwrap(), session_id: sid, payload };
        let bytes = encode_message(&msg).unwrap();
        prop_assert_eq!(decode_message(&bytes).unwrap(), msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn toeplitz_fft_equals_naive(seed in any::<u64>(), n_in in 1usize..3000, cr in 0.0f64..0.95, data in any::<u64>()) {
        let n_out = output_length(n_in, cr).max(1);
        let desc = ToeplitzDescriptor::new(seed, n_in, n_out).unwrap();
        let x: Bits = (0..n_in).map(|i| cowqkd::rng::mix64(data ^ i as u64) & 1 == 1).collect();
        prop_assert_eq!(hash_fft(&desc, &x).unwrap(), hash_naive(&desc, &x).unwrap());
    }
}

#[test]
fn sweep_maximum_sits_at_least_dr_cr_and_valid_dead_time() {
    for d in [40.0, 80.0, 120.0, 145.0] {
        let spec = SweepSpec {
            grids: Grids {
                distance_km: vec![d],
                dead_time_us: vec![20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0],
                ..Grids::default()
            },
            ..SweepSpec::default()
        };
        let rows = cowqkd::sweep::run_sweep(&spec).unwrap().rows;
        let best = rows
            .iter()
            .filter(|r| r.status != cowqkd::RowStatus::DeadTimeBelowGap)
            .max_by(|a, b| a.secret_kr_bps.total_cmp(&b.secret_kr_bps))
            .unwrap();
        let min_valid_dt = rows
            .iter()
            .filter(|r| r.status != cowqkd::RowStatus::DeadTimeBelowGap)
            .map(|r| r.budget.dead_time_s)
            .fold(f64::INFINITY, f64::min);
        assert_eq!((best.dr, best.cr), (0.03125, 0.5), "{d} km");
        assert_eq!(best.budget.dead_time_s, min_valid_dt, "{d} km");
    }
}
