mod common;

use std::path::Path;

use common::{sage_detections, simulate};
use num_complex::Complex64;
use proptest::prelude::*;
use rustfft::FftPlanner;
use thzmap_core::estimator::MpcEstimate;
use thzmap_core::materials::{
    extract_reflection_loss, identify_material, tds_reflection_loss, tds_reflection_spectrum, MaterialCategory,
    MaterialDb, MaterialRecord, TdsTrace,
};
use thzmap_core::scene::{build_scene, Point2, TrxConfig, WallSegment};
use thzmap_core::sim::{fspl_db, SimNoiseConfig};
use thzmap_core::SPEED_OF_LIGHT;

const F_C: f64 = 300e9;
const N: usize = 1024;
const DT: f64 = 0.05e-12;

fn reference_pulse() -> Vec<f64> {
    (0..N)
        .map(|i| {
            let t = (i as f64 - 200.0) * DT;
            let w = 0.15e-12;
            -t / w * (-(t * t) / (2.0 * w * w)).exp()
        })
        .collect()
}

/// Applies `|H(f)| = 10^(−A(f)/20)` and a delay of `shift` samples in the
/// frequency domain, returning the real sample trace.
fn filtered(reference: &[f64], atten_db: impl Fn(f64) -> f64, shift: f64) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = reference.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(N).process(&mut buf);
    let df = 1.0 / (N as f64 * DT);
    for k in 0..=N / 2 {
        let g = 10f64.powf(-atten_db(k as f64 * df) / 20.0);
        let ph = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 * shift / N as f64);
        buf[k] *= g * ph;
        if k != 0 && k != N / 2 {
            buf[N - k] = buf[k].conj();
        }
    }
    buf[N / 2] = Complex64::new(buf[N / 2].re, 0.0);
    planner.plan_fft_inverse(N).process(&mut buf);
    buf.iter().map(|c| c.re / N as f64).collect()
}

#[test]
fn tds_recovers_a_known_attenuation_spectrum() {
    let atten = |f: f64| 6.0 + 4.0 * f / 1e12;
    let r = reference_pulse();
    let reference = TdsTrace::new(r.clone(), DT, "mirror").unwrap();
    let sample = TdsTrace::new(filtered(&r, atten, 7.0), DT, "sample").unwrap();
    for f in [0.2e12, 0.3e12, 0.45e12, 1.0e12] {
        let rl = tds_reflection_loss(&sample, &reference, f).unwrap();
        assert!((rl - atten(f)).abs() <= 0.1, "{f:e}: {rl} vs {}", atten(f));
    }
    let spectrum = tds_reflection_spectrum(&sample, &reference, 0.2e12, 1.0e12).unwrap();
    assert!(!spectrum.is_empty());
    for (f, rl) in spectrum {
        assert!((rl - atten(f)).abs() <= 0.1);
    }
}

#[test]
fn tds_is_invariant_to_common_scaling() {
    let r = reference_pulse();
    let s = filtered(&r, |_| 9.0, 3.0);
    let base = tds_reflection_loss(&TdsTrace::new(s.clone(), DT, "s").unwrap(), &TdsTrace::new(r.clone(), DT, "r").unwrap(), F_C).unwrap();
    let k = 37.5;
    let scaled = tds_reflection_loss(
        &TdsTrace::new(s.iter().map(|v| v * k).collect(), DT, "s").unwrap(),
        &TdsTrace::new(r.iter().map(|v| v * k).collect(), DT, "r").unwrap(),
        F_C,
    )
    .unwrap();
    assert!((base - 9.0).abs() < 1e-6);
    assert!((base - scaled).abs() < 1e-9);
}

#[test]
fn tds_rejects_mismatched_traces() {
    let r = reference_pulse();
    let reference = TdsTrace::new(r.clone(), DT, "r").unwrap();
    let short = TdsTrace::new(r[..512].to_vec(), DT, "s").unwrap();
    assert!(tds_reflection_loss(&short, &reference, F_C).is_err());
    assert!(tds_reflection_loss(&reference, &reference, 20e12).is_err());
}

#[test]
fn empty_database_file_loads_empty() {
    let db = MaterialDb::from_reader("".as_bytes(), Path::new("empty.csv")).unwrap();
    assert!(db.is_empty());
    assert!(identify_material(10.0, &db, F_C).is_err());
}

#[test]
fn two_hundred_records_round_trip() {
    let cats = [
        MaterialCategory::Metal,
        MaterialCategory::Biological,
        MaterialCategory::Building,
        MaterialCategory::Functional,
    ];
    let records: Vec<MaterialRecord> = (0..200)
        .map(|i| {
            let samples = (0..1 + i % 4).map(|j| (250e9 + 25e9 * j as f64, 0.1 * i as f64 + 0.013 * j as f64)).collect();
            MaterialRecord::new(format!("m{i:03}"), cats[i % 4], samples).unwrap()
        })
        .collect();
    let db = MaterialDb::new(records).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.csv");
    db.save(&path).unwrap();
    let back = MaterialDb::load(&path).unwrap();
    assert_eq!(back, db);
    assert_eq!(back.len(), 200);
}

#[test]
fn malformed_rows_report_their_line() {
    let text = "name,category,frequency_hz,rl_db\nA,metal,3e11,1.0\nB,metal,3e11,oops\n";
    let err = MaterialDb::from_reader(text.as_bytes(), Path::new("bad.csv")).unwrap_err();
    match err {
        thzmap_core::Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected error {other}"),
    }
}

fn echo(rl_db: f64, path_m: f64, trx: &TrxConfig) -> MpcEstimate {
    let db = 2.0 * trx.antenna_gain_dbi - fspl_db(path_m, F_C) - rl_db;
    MpcEstimate::new(Complex64::from_polar(10f64.powf(db / 20.0), 0.7), path_m / SPEED_OF_LIGHT, 1.0)
}

#[test]
fn reflection_loss_inversion_examples() {
    let trx = TrxConfig::default();
    // hand-evaluated Friis: 4π·6·3e11/c
    let fspl = 20.0 * (4.0 * std::f64::consts::PI * 6.0 * 300e9 / 299_792_458.0).log10();
    let amp = 10f64.powf((52.0 - fspl - 10.38) / 20.0);
    let est = MpcEstimate::new(Complex64::new(0.0, amp), 6.0 / 299_792_458.0, 0.0);
    assert!((extract_reflection_loss(&est, &trx, F_C).unwrap() - 10.38).abs() < 1e-9);
    assert!(extract_reflection_loss(&echo(0.0, 4.0, &trx), &trx, F_C).unwrap().abs() < 1e-9);
    let zero = MpcEstimate::new(Complex64::new(0.0, 0.0), 1e-8, 0.0);
    assert!(extract_reflection_loss(&zero, &trx, F_C).is_err());
}

#[test]
fn simulated_cement_wall_is_identified() {
    let scene = build_scene(
        vec![WallSegment::new(Point2::new(-2.0, 3.0), Point2::new(2.0, 3.0), "Cement", -25.0)],
        TrxConfig::default(),
    )
    .unwrap();
    let sim = simulate(scene, &SimNoiseConfig::with_snr(25.0, 5));
    let est = sage_detections(&sim.response, &sim.scene.trx);
    let best = est
        .iter()
        .filter(|e| (e.theta.to_degrees() - 90.0).abs() < 1.0)
        .max_by(|a, b| a.power_db.total_cmp(&b.power_db))
        .unwrap();
    let rl = extract_reflection_loss(best, &sim.scene.trx, F_C).unwrap();
    assert!((rl - 11.84).abs() <= 1.0, "{rl}");
    assert_eq!(identify_material(rl, &MaterialDb::seed(), F_C).unwrap().ranked[0].name, "Cement");
}

#[test]
fn identification_fixtures() {
    let db = MaterialDb::seed();
    let m = identify_material(10.38, &db, F_C).unwrap();
    assert_eq!((m.ranked[0].name.as_str(), m.ranked[1].name.as_str()), ("Cement", "Ceramic"));
    assert!((m.ranked[0].delta_db - 1.46).abs() < 1e-9);
    let m = identify_material(3.81, &db, F_C).unwrap();
    assert_eq!(m.ranked[0].name, "Steel");
    assert!((m.ranked[0].delta_db - 1.39).abs() < 1e-9);
    let m = identify_material(2.42, &db, F_C).unwrap();
    assert_eq!((m.ranked[0].name.as_str(), m.ranked[0].delta_db), ("Steel", 0.0));
}

proptest! {
    #[test]
    fn inversion_round_trips(rl in 0.0..40.0f64, d in 0.5..20.0f64) {
        let trx = TrxConfig::default();
        let got = extract_reflection_loss(&echo(rl, d, &trx), &trx, F_C).unwrap();
        prop_assert!((got - rl).abs() < 1e-9);
    }

    #[test]
    fn best_match_is_the_argmin(rl in 0.0..30.0f64) {
        let db = MaterialDb::seed();
        let m = identify_material(rl, &db, F_C).unwrap();
        let oracle = db
            .records()
            .iter()
            .map(|r| (r.rl_at(F_C).unwrap() - rl).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(m.ranked[0].delta_db, oracle);
        prop_assert!(m.ranked.windows(2).all(|w| w[0].delta_db <= w[1].delta_db));
    }

    #[test]
    fn far_records_do_not_change_the_best(rl in 0.0..25.0f64) {
        let mut db = MaterialDb::seed();
        let before = identify_material(rl, &db, F_C).unwrap().ranked[0].clone();
        db.upsert(MaterialRecord::new("Far", MaterialCategory::Functional, vec![(F_C, 90.0)]).unwrap()).unwrap();
        let after = identify_material(rl, &db, F_C).unwrap();
        prop_assert_eq!(&after.ranked[0], &before);
        prop_assert_eq!(after.ranked.last().unwrap().name.as_str(), "Far");
    }
}
