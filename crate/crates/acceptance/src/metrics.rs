use argrel::corpus::{generate_synthetic, SynthConfig};
use argrel::eval::{evaluate, fleiss_kappa, macro_f1, ConfusionMatrix, Prediction, RatingTable};
use argrel::rng;
use argrel::text::token_count;
use argrel::windowing::{build_examples, PairLabel, WindowConfig, WindowMode};
use rand::Rng as _;

use crate::{err, require, Check};

/// Rows are gold, columns predicted, in the order support, attack, no_rel.
/// Expected values are worked out per class as 2TP / (2TP + FP + FN).
fn fixtures() -> [([[u64; 3]; 3], bool, f64); 5] {
    [
        ([[3, 0, 0], [0, 2, 0], [0, 0, 9]], true, 1.0),
        // support 4/7, attack 6/8, no_rel 10/13
        ([[2, 1, 1], [0, 3, 1], [1, 0, 5]], true, (4.0 / 7.0 + 0.75 + 10.0 / 13.0) / 3.0),
        // two classes: support 8/13, no_rel 22/27
        ([[4, 0, 2], [0, 0, 0], [3, 0, 11]], false, (8.0 / 13.0 + 22.0 / 27.0) / 2.0),
        // attack never predicted: support 10/12, attack 0, no_rel 12/14
        ([[5, 0, 0], [2, 0, 2], [0, 0, 6]], true, (10.0 / 12.0 + 12.0 / 14.0) / 3.0),
        // everything predicted no_rel: support 0, no_rel 12/16
        ([[0, 0, 4], [0, 0, 0], [0, 0, 6]], false, 0.375),
    ]
}

fn macro_fixtures() -> Check {
    for (i, (counts, three, want)) in fixtures().into_iter().enumerate() {
        let got = macro_f1(&ConfusionMatrix::from_counts(counts), three).map_err(err)?;
        require!((got - want).abs() <= 1e-9, "fixture {i}: macro-F1 {got}, hand value {want}");
    }
    Ok("5 confusion fixtures match".into())
}

/// Predictions drawn at random for every windowed pair; the fallback must
/// follow the presence of attack relations in the gold corpus.
fn fallback() -> Check {
    let mut r = rng::from_seed(41);
    let cfg = WindowConfig { window: 3, max_tokens: 512, mode: WindowMode::HeadGiven };
    let mut seen = [0usize; 2];
    for seed in 0..20 {
        let attack_rate = [0.0, 0.3][seed as usize % 2];
        let gold = generate_synthetic(&SynthConfig { n_docs: 5 + seed as usize, attack_rate, seed, ..Default::default() }).map_err(err)?;
        let has_attack = gold.documents.iter().flat_map(|d| &d.relations).any(|rel| rel.label == argrel::corpus::RelationLabel::Attack);
        let preds: Vec<Prediction> = gold
            .documents
            .iter()
            .flat_map(|d| build_examples(d, &cfg, &token_count))
            .map(|e| Prediction { doc_id: e.doc_id, head: e.head, tail: e.tail, label: PairLabel::from_index(r.random_range(0..3)) })
            .collect();
        let m = evaluate(&preds, &gold, &cfg).map_err(err)?;
        require!(m.two_class == !has_attack, "seed {seed}: two_class {} with attack present {has_attack}", m.two_class);
        let classes = if has_attack { vec![m.support.f1, m.attack.f1, m.no_rel.f1] } else { vec![m.support.f1, m.no_rel.f1] };
        let want = classes.iter().sum::<f64>() / classes.len() as f64;
        require!((m.macro_f1 - want).abs() <= 1e-12, "seed {seed}: macro {} vs {want}", m.macro_f1);
        seen[usize::from(has_attack)] += 1;
    }
    Ok(format!("two-class fallback on exactly the {} attack-free corpora of 20", seen[0]))
}

fn kappa() -> Check {
    let mut r = rng::from_seed(42);
    for _ in 0..100 {
        let raters = r.random_range(2..6);
        let k = r.random_range(2..5);
        let rows: Vec<Vec<u64>> = (0..r.random_range(1..20))
            .map(|_| {
                let mut row = vec![0; k];
                row[r.random_range(0..k)] = raters;
                row
            })
            .collect();
        let v = fleiss_kappa(&RatingTable::new(rows.clone()).map_err(err)?).map_err(err)?;
        require!(v == 1.0, "unanimous table {rows:?} gave {v}");
    }
    // two items, two raters: P = (0 + 1) / 2, category shares (3/4, 1/4), Pe = 10/16
    let fixture = RatingTable::new(vec![vec![1, 1], vec![2, 0]]).map_err(err)?;
    let want = (0.5 - 10.0 / 16.0) / (1.0 - 10.0 / 16.0);
    let got = fleiss_kappa(&fixture).map_err(err)?;
    require!((got - want).abs() <= 1e-9, "2x2 fixture kappa {got}, hand value {want}");
    Ok(format!("kappa 1 under unanimity, 2x2 fixture {got:.6}"))
}

pub fn check() -> Check {
    Ok([macro_fixtures()?, fallback()?, kappa()?].join("; "))
}
