//! Statistical checks of the detector simulation against binomial and
//! chi-square oracles.

use cowqkd::detection::{intrinsic_error_for_qber, ClickProcess, DcrTable, DetectorParams, LazyClick, Slot};
use cowqkd::rng;
use cowqkd::OpticalBudget;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// (sifted, errors) over `seconds` of simulated traffic.
fn sift_errors(budget: &OpticalBudget, detector: &DetectorParams, seconds: f64, seed: u64) -> (u64, u64) {
    let mut process = ClickProcess::new(budget, detector, 0.5, seed).unwrap();
    let mut flips = rng::from_seed(rng::substream(seed, "flip", 0));
    let (mut sifted, mut errors) = (0u64, 0u64);
    process.run_until(seconds, |c: &LazyClick| {
        let read = match c.record.slot {
            Slot::Early => false,
            Slot::Late => true,
            _ => return,
        };
        if let Some(bit) = c.symbol.bit() {
            sifted += 1;
            let flipped = !c.dark && flips.random_bool(detector.intrinsic_error);
            errors += u64::from((read != bit) ^ flipped);
        }
    });
    (sifted, errors)
}

#[test]
fn tuned_intrinsic_error_gives_target_qber_at_80_km() {
    let budget = OpticalBudget::default();
    let base = DetectorParams::default();
    let resolved = base.apply_to(&budget).unwrap();
    let detector = DetectorParams {
        intrinsic_error: intrinsic_error_for_qber(&resolved, &base, 0.03),
        ..base
    };
    // about 6.4e3 sifted bits per second at 80 km
    let (n, e) = sift_errors(&budget, &detector, 170.0, 11);
    assert!(n >= 1_000_000, "{n}");
    let q = e as f64 / n as f64;
    let sigma = (0.03 * 0.97 / n as f64).sqrt();
    assert!((q - 0.03).abs() < 5.0 * sigma, "qber {q}, 5 sigma {}", 5.0 * sigma);
}

#[test]
fn dark_only_runs_are_coin_flips() {
    let budget = OpticalBudget::default();
    let detector = DetectorParams {
        efficiency: 0.0,
        dcr_table: DcrTable::constant(1.0e5),
        ..DetectorParams::default()
    };
    let (n, e) = sift_errors(&budget, &detector, 20.0, 5);
    assert!(n > 10_000, "{n}");
    let half = n as f64 / 2.0;
    let chi2 = (e as f64 - half).powi(2) / half + ((n - e) as f64 - half).powi(2) / half;
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}
