use boxprop::calibrate::{apply_to_pairs, fit_isotonic, fit_isotonic_with, IsotonicOptions, Mode, Scheme};
use boxprop::matching::{match_by_mse, MatchedPair};
use boxprop::metrics::ece;
use boxprop::synth::{generate, Miscalibration, NoiseModel, SynthConfig};

fn pairs_of(cfg: &SynthConfig) -> Vec<MatchedPair> {
    let out = generate(cfg).unwrap();
    match_by_mse(&out.detections, &out.ground_truth).pairs
}

fn size_coupled(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_images: 400,
        objects_per_image: 25,
        noise: NoiseModel { base_sigma: [0.05; 4], size_proportional: true, jitter: 0.5, ..Default::default() },
        miscalibration: Miscalibration { gamma: 2.0, ..Default::default() },
        ..Default::default()
    }
}

/// ECE per COCO area bucket: small, medium, large.
fn bucket_ece(pairs: &[MatchedPair]) -> [f64; 3] {
    let bucket = |p: &MatchedPair| match p.ground_truth.area() {
        a if a < 32.0 * 32.0 => 0,
        a if a < 96.0 * 96.0 => 1,
        _ => 2,
    };
    std::array::from_fn(|b| {
        let sel: Vec<MatchedPair> = pairs.iter().filter(|p| bucket(p) == b).cloned().collect();
        ece(&sel, 10).unwrap()
    })
}

fn spread(e: [f64; 3]) -> f64 {
    e.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - e.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn relative_mode_narrows_the_size_bucket_spread() {
    let train = pairs_of(&size_coupled(1));
    let test = pairs_of(&size_coupled(2));
    let spread_for = |mode| {
        let model = fit_isotonic_with(&train, Scheme::IrPco, &IsotonicOptions { mode, ..Default::default() }).unwrap();
        let e = bucket_ece(&apply_to_pairs(&model, &test).unwrap().items);
        (spread(e), e)
    };
    let (abs, abs_e) = spread_for(Mode::Absolute);
    let (rel, rel_e) = spread_for(Mode::Relative);
    assert!(rel < abs, "relative spread {rel} ({rel_e:?}) vs absolute {abs} ({abs_e:?})");
}

#[test]
fn held_out_isotonic_cuts_ece_tenfold() {
    let cfg = |seed| SynthConfig {
        seed,
        n_images: 400,
        objects_per_image: 25,
        miscalibration: Miscalibration { k: 3.0, ..Default::default() },
        ..Default::default()
    };
    let (train, test) = (pairs_of(&cfg(10)), pairs_of(&cfg(11)));
    let before = ece(&test, 10).unwrap();
    for scheme in [Scheme::Ir, Scheme::IrPco] {
        let model = fit_isotonic(&train, scheme, Mode::Absolute).unwrap();
        let after = ece(&apply_to_pairs(&model, &test).unwrap().items, 10).unwrap();
        assert!(after <= 0.1 * before, "{scheme:?}: {before} -> {after}");
    }
}

#[test]
fn calibration_leaves_means_untouched() {
    let pairs = pairs_of(&SynthConfig { n_images: 50, ..Default::default() });
    let model = fit_isotonic(&pairs, Scheme::IrPcoCl, Mode::Relative).unwrap();
    let out = apply_to_pairs(&model, &pairs).unwrap().items;
    for (a, b) in pairs.iter().zip(&out) {
        assert_eq!(a.detection.bbox.means(), b.detection.bbox.means());
        assert_eq!(a.residual, b.residual);
        assert_eq!(a.iou, b.iou);
    }
}
