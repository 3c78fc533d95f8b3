use argrel::acquire::{bald_score, entropy, k_center_greedy, novelty_score, update_vocab_counts, VocabCounts};
use argrel::relhead::LabelDistribution;
use argrel::rng;
use rand::Rng as _;

use crate::{err, require, Check};

fn random_dist(r: &mut rng::Rng) -> LabelDistribution {
    // occasionally put mass exactly on the simplex boundary
    let mut p: [f64; 3] = std::array::from_fn(|_| if r.random_bool(0.1) { 0.0 } else { r.random::<f64>() });
    if p.iter().sum::<f64>() == 0.0 {
        p[r.random_range(0..3)] = 1.0;
    }
    let s: f64 = p.iter().sum();
    LabelDistribution(p.map(|v| v / s))
}

fn entropy_and_bald() -> Check {
    let h = entropy(&LabelDistribution::uniform());
    require!((h - 3f64.ln()).abs() <= 1e-9, "entropy of uniform {h}");

    let mut r = rng::from_seed(21);
    let mut worst_identical = 0.0f64;
    for _ in 0..200 {
        let d = random_dist(&mut r);
        let k = r.random_range(2..12);
        let b = bald_score(&vec![d; k]).map_err(err)?;
        worst_identical = worst_identical.max(b);
    }
    require!(worst_identical == 0.0, "identical passes gave BALD {worst_identical:e}");

    let b = bald_score(&[LabelDistribution([1.0, 0.0, 0.0]), LabelDistribution([0.0, 1.0, 0.0])]).map_err(err)?;
    require!((b - 2f64.ln()).abs() <= 1e-9, "BALD of two disagreeing one-hot passes {b}");

    for _ in 0..1000 {
        let k = r.random_range(2..16);
        let passes: Vec<LabelDistribution> = (0..k).map(|_| random_dist(&mut r)).collect();
        let b = bald_score(&passes).map_err(err)?;
        require!(b >= 0.0 && b.is_finite(), "BALD {b} for {passes:?}");
    }
    Ok(format!("H(uniform) = ln 3; identical passes = 0; one-hot pair = ln 2; 1000 random pass-sets >= 0"))
}

fn novelty() -> Check {
    let mut r = rng::from_seed(22);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let pick = |r: &mut rng::Rng, n: usize| -> Vec<String> { (0..n).map(|_| words[r.random_range(0..words.len())].clone()).collect() };
    for case in 0..100 {
        let labeled: Vec<Vec<String>> = (0..r.random_range(0..8)).map(|_| {
            let n = r.random_range(0..12);
            pick(&mut r, n)
        }).collect();
        let n = r.random_range(0..15);
        let tokens = pick(&mut r, n);
        let mut counts = VocabCounts::default();
        for l in &labeled {
            update_vocab_counts(&mut counts, l);
        }
        let got = novelty_score(&tokens, &counts);
        // brute force: every distinct word, recounted by scanning
        let mut distinct: Vec<&String> = tokens.iter().collect();
        distinct.sort();
        distinct.dedup();
        let want: f64 = distinct
            .iter()
            .map(|w| {
                let f = tokens.iter().filter(|t| t == w).count() as f64;
                let v = labeled.iter().flatten().filter(|t| t == w).count() as f64;
                f / (1.0 + v)
            })
            .sum();
        require!((got - want).abs() <= 1e-12, "case {case}: novelty {got}, recount {want}");
    }
    Ok("novelty matches recount on 100 cases".into())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Farthest-first selection recomputing every nearest-center distance from
/// scratch at each step.
fn brute_k_center(points: &[Vec<f64>], centers: &[Vec<f64>], k: usize, first: Option<usize>) -> Vec<(usize, f64)> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for step in 0..k.min(points.len()) {
        let nearest = |i: usize, chosen: &[usize]| {
            centers.iter().chain(chosen.iter().map(|&c| &points[c])).map(|c| dist(&points[i], c)).fold(f64::INFINITY, f64::min)
        };
        let pick = if step == 0 && centers.is_empty() && first.is_some() {
            first.unwrap()
        } else {
            let mut best = None::<(usize, f64)>;
            for i in (0..points.len()).filter(|i| !chosen.contains(i)) {
                let d = nearest(i, &chosen);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            best.expect("points remain").0
        };
        out.push((pick, nearest(pick, &chosen)));
        chosen.push(pick);
    }
    out
}

/// Optimal k-center radius by exhaustive search over center subsets.
fn optimal_radius(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let radius = (0..n)
            .map(|i| (0..n).filter(|&c| mask >> c & 1 == 1).map(|c| dist(&points[i], &points[c])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        best = best.min(radius);
    }
    best
}

fn coreset() -> Check {
    let mut r = rng::from_seed(23);
    for g in 0..50 {
        let n = r.random_range(1..=100);
        let dim = r.random_range(1..=8);
        let point = |r: &mut rng::Rng| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let points: Vec<Vec<f64>> = (0..n).map(|_| point(&mut r)).collect();
        let centers: Vec<Vec<f64>> = (0..r.random_range(0..10)).map(|_| point(&mut r)).collect();
        let k = r.random_range(1..=n);
        let first = centers.is_empty().then(|| r.random_range(0..n));
        let got = k_center_greedy(&points, &centers, k, first);
        let want = brute_k_center(&points, &centers, k, first);
        require!(got.len() == want.len(), "geometry {g}: {} picks, expected {}", got.len(), want.len());
        for (step, (a, b)) in got.iter().zip(&want).enumerate() {
            require!(a.0 == b.0 && (a.1 == b.1 || (a.1 - b.1).abs() <= 1e-9), "geometry {g} step {step}: picked {a:?}, brute force {b:?}");
        }
    }
    // greedy radius stays within twice the optimum on small pools
    for g in 0..50 {
        let n = r.random_range(2..=10);
        let points: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect();
        let k = r.random_range(1..=3.min(n));
        let picks: Vec<Vec<f64>> = k_center_greedy(&points, &[], k, Some(0)).iter().map(|&(i, _)| points[i].clone()).collect();
        let radius = points.iter().map(|p| picks.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
        let opt = optimal_radius(&points, k);
        require!(radius <= 2.0 * opt + 1e-12, "small pool {g}: greedy radius {radius}, optimum {opt}");
    }
    Ok("coreset matches brute-force k-center on 50 geometries".into())
}

pub fn check() -> Check {
    Ok([entropy_and_bald()?, novelty()?, coreset()?].join("; "))
}
