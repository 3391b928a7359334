use boxprop::anchor::DecodedBox;
use boxprop::geometry::Corners;
use boxprop::matching::{box_mse, match_by_mse, Detection, GroundTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum total MSE over all maximum-cardinality injections.
fn exhaustive(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
        let cols = used.len();
        let remaining_rows = cost.len() - row;
        let free_cols = used.iter().filter(|u| !**u).count();
        if left == 0 {
            *best = best.min(acc);
            return;
        }
        if remaining_rows < left || free_cols < left {
            return;
        }
        // Either this row stays unmatched (only if rows exceed the target) ...
        if remaining_rows > left {
            go(cost, row + 1, used, left, acc, best);
        }
        // ... or it takes a free column.
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, left - 1, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let k = cost.len().min(cost.first().map_or(0, Vec::len));
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.first().map_or(0, Vec::len)], k, 0.0, &mut best);
    if k == 0 { 0.0 } else { best }
}

#[test]
fn greedy_matching_against_exhaustive_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (mut cases, mut suboptimal, mut worst_gap) = (0, 0, 0.0f64);
    for case in 0..500 {
        let nd = rng.random_range(0..=6);
        let ng = rng.random_range(0..=6);
        let gts: Vec<GroundTruth> = (0..ng)
            .map(|_| {
                let (y, x) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let c = Corners::new(y, x, y + rng.random_range(5.0..40.0), x + rng.random_range(5.0..40.0)).unwrap();
                GroundTruth::new("img", 0, c, 0).unwrap()
            })
            .collect();
        let dets: Vec<Detection> = (0..nd)
            .map(|_| {
                let mean = [
                    rng.random_range(0.0..120.0),
                    rng.random_range(0.0..120.0),
                    rng.random_range(5.0..40.0),
                    rng.random_range(5.0..40.0),
                ];
                Detection {
                    image_id: "img".into(),
                    class_id: 0,
                    bbox: DecodedBox::from_arrays(mean, [1.0; 4]).unwrap(),
                    score: None,
                    quality: None,
                }
            })
            .collect();
        let out = match_by_mse(&dets, &gts);
        assert_eq!(out.pairs.len(), nd.min(ng), "case {case}");
        assert_eq!(out.unmatched_detections.len(), nd - out.pairs.len());
        assert_eq!(out.unmatched_ground_truth.len(), ng - out.pairs.len());

        let greedy: f64 = out.pairs.iter().map(|p| box_mse(&p.detection, &p.ground_truth)).sum();
        let cost: Vec<Vec<f64>> = dets.iter().map(|d| gts.iter().map(|g| box_mse(d, g)).collect()).collect();
        let optimum = exhaustive(&cost);
        assert!(greedy >= optimum - 1e-9 * optimum.max(1.0), "case {case}: greedy below optimum");
        let gap = (greedy - optimum) / optimum.max(1e-12);
        if gap > 1e-12 {
            suboptimal += 1;
            worst_gap = worst_gap.max(gap);
        }
        cases += 1;
    }
    eprintln!("greedy matching: {suboptimal}/{cases} images above the optimum, worst relative gap {worst_gap:.3}");
}
