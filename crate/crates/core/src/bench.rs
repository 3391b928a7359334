//! Wall-clock comparison of decode variants on a shared random batch.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anchor::{splitmix64, Anchor, DecodeVariant, Decoder, GaussianBox4};
use crate::error::{Error, Result};

/// Offsets and anchors drawn once and decoded by every variant.
pub struct Batch {
    pub offsets: Vec<GaussianBox4>,
    pub anchors: Vec<Anchor>,
}

impl Batch {
    /// Offsets with `μ ∈ [−1, 1]` and `σ² ∈ [0.001, 0.5]` on anchors of side
    /// 8 to 512 px.
    pub fn random(n: usize, seed: u64) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = Vec::with_capacity(n);
        let mut anchors = Vec::with_capacity(n);
        for _ in 0..n {
            let mu = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            let var = std::array::from_fn(|_| rng.random_range(0.001..=0.5));
            offsets.push(GaussianBox4::new(mu, var)?);
            let h = rng.random_range(8.0..=512.0);
            let w = rng.random_range(8.0..=512.0);
            anchors.push(Anchor::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0), h, w)?);
        }
        Ok(Batch { offsets, anchors })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Decodes the whole batch once. Monte Carlo variants draw item `i` from
/// the stream `splitmix64(seed + i)`.
pub fn decode_batch(batch: &Batch, variant: DecodeVariant, train_correction: bool) -> Result<Duration> {
    let start = Instant::now();
    match variant {
        DecodeVariant::Samp { samples, seed } => {
            for (i, (o, a)) in batch.offsets.iter().zip(&batch.anchors).enumerate() {
                let v = DecodeVariant::Samp {
                    samples,
                    seed: splitmix64(seed.wrapping_add(i as u64)),
                };
                black_box(Decoder::new(v, train_correction)?.decode(o, a)?);
            }
        }
        _ => {
            let dec = Decoder::new(variant, train_correction)?;
            for (o, a) in batch.offsets.iter().zip(&batch.anchors) {
                black_box(dec.decode(o, a)?);
            }
        }
    }
    Ok(start.elapsed())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub variant: String,
    pub batch: usize,
    pub repeats: usize,
    /// Median over repeats, seconds.
    pub median_seconds: f64,
    /// Median scaled to 10⁵ decodes, milliseconds.
    pub ms_per_100k: f64,
    pub all_seconds: Vec<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each variant `repeat` times on the same batch, after one untimed
/// warm-up pass.
pub fn run(variants: &[DecodeVariant], batch: &Batch, repeat: usize, train_correction: bool) -> Result<Vec<BenchResult>> {
    if repeat == 0 {
        return Err(Error::config("repeat must be at least 1"));
    }
    if batch.is_empty() {
        return Err(Error::config("batch must be non-empty"));
    }
    variants
        .iter()
        .map(|&v| {
            decode_batch(batch, v, train_correction)?;
            let times: Vec<f64> = (0..repeat)
                .map(|_| decode_batch(batch, v, train_correction).map(|d| d.as_secs_f64()))
                .collect::<Result<_>>()?;
            let med = median(times.clone());
            Ok(BenchResult {
                variant: v.to_string(),
                batch: batch.len(),
                repeats: repeat,
                median_seconds: med,
                ms_per_100k: med * 1e3 * 1e5 / batch.len() as f64,
                all_seconds: times,
            })
        })
        .collect()
}

pub fn to_json(results: &[BenchResult]) -> String {
    serde_json::to_string_pretty(results).expect("bench results serialize")
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("variant,batch,repeats,median_seconds,ms_per_100k\n");
    for r in results {
        s.push_str(&format!("{},{},{},{},{}\n", r.variant, r.batch, r.repeats, r.median_seconds, r.ms_per_100k));
    }
    s
}
