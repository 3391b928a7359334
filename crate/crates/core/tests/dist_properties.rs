use boxprop::dist::{
    chain_log_density, propagate_closed_form, propagate_mc, propagate_quadrature, Bijector, Gaussian1,
    TransformChain,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affine(a: f64, b: f64) -> Bijector {
    Bijector::affine(a, b).unwrap()
}

fn nonzero(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = rng.random_range(lo..hi);
    if rng.random_bool(0.5) { m } else { -m }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, tol / 2.0, depth - 1)
}

/// Adaptive Simpson over `[knots[i], knots[i+1]]` pieces.
fn integrate(f: &dyn Fn(f64) -> f64, knots: &[f64]) -> f64 {
    knots
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            simpson(f, lo, hi, f(lo), f(0.5 * (lo + hi)), f(hi), 1e-10, 40)
        })
        .sum()
}

fn random_chain(rng: &mut ChaCha8Rng) -> TransformChain {
    let a1 = affine(nonzero(rng, 0.2, 2.0), rng.random_range(-1.0..1.0));
    let a2 = affine(nonzero(rng, 0.5, 50.0), rng.random_range(-10.0..10.0));
    match rng.random_range(0..4) {
        0 => TransformChain::new(vec![Bijector::Exp, a2]),
        1 => TransformChain::new(vec![a1, Bijector::Exp, a2]),
        2 => TransformChain::new(vec![a1, Bijector::Sigmoid, a2]),
        _ => TransformChain::new(vec![a1, a2]),
    }
}

#[test]
fn pushforward_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..200 {
        let chain = random_chain(&mut rng);
        let base = Gaussian1::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..0.5)).unwrap();
        // Knots are images of evenly spaced base points, so every piece
        // carries comparable mass however the chain stretches the line.
        let mut knots: Vec<f64> =
            (-48..=48).map(|k| chain.forward(base.mu() + 0.25 * k as f64 * base.sd())).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let pdf = |y: f64| chain_log_density(&chain, &base, y).map(f64::exp).unwrap_or(0.0);
        let mass = integrate(&pdf, &knots);
        assert!((mass - 1.0).abs() <= 1e-3, "case {case}: {chain:?} {base:?} mass {mass}");
    }
}

#[test]
fn engines_agree_on_exp_affine_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    let mut worst = 0.0f64;
    for case in 0..100 {
        let chain = TransformChain::new(vec![
            affine(nonzero(&mut rng, 0.5, 1.5), rng.random_range(-0.5..0.5)),
            Bijector::Exp,
            affine(rng.random_range(8.0..512.0), rng.random_range(-100.0..100.0)),
        ]);
        let base = Gaussian1::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..0.1)).unwrap();
        let exact = propagate_closed_form(&chain, &base).unwrap();
        let gh = propagate_quadrature(&chain, &base, 64).unwrap();
        let mc = propagate_mc(&chain, &base, 1_000_000, case).unwrap();
        for (name, a, b) in [
            ("closed/gh mean", exact.mean, gh.mean),
            ("closed/gh sd", exact.sd, gh.sd),
            ("closed/mc mean", exact.mean, mc.mean),
            ("closed/mc sd", exact.sd, mc.sd),
            ("gh/mc mean", gh.mean, mc.mean),
            ("gh/mc sd", gh.sd, mc.sd),
        ] {
            let r = rel(a, b);
            worst = worst.max(r);
            assert!(r <= 5e-3, "case {case} {name}: {a} vs {b}");
        }
    }
    eprintln!("worst pairwise relative deviation {worst:.2e}");
}

#[test]
fn affine_chains_are_exact_in_every_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let steps = rng.random_range(1..4);
        let (mut scale, mut shift) = (1.0f64, 0.0f64);
        let mut chain = Vec::new();
        for _ in 0..steps {
            let (a, b) = (nonzero(&mut rng, 0.1, 10.0), rng.random_range(-50.0..50.0));
            chain.push(affine(a, b));
            scale *= a;
            shift = a * shift + b;
        }
        let chain = TransformChain::new(chain);
        let base = Gaussian1::new(rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5)).unwrap();
        let mean = scale * base.mu() + shift;
        let sd = scale.abs() * base.sd();
        for (name, m) in [
            ("closed", propagate_closed_form(&chain, &base).unwrap()),
            ("gh", propagate_quadrature(&chain, &base, 64).unwrap()),
            ("mc", propagate_mc(&chain, &base, 100, case).unwrap()),
        ] {
            assert!((m.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0), "case {case} {name} mean");
            assert!((m.sd - sd).abs() <= 1e-12 * sd.max(1.0), "case {case} {name} sd");
        }
    }
}
