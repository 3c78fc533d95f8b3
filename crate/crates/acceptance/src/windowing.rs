use argrel::corpus::{distance_histogram, generate_synthetic, window_coverage, SynthConfig, MAX_SYNTH_DISTANCE};
use argrel::rng;
use argrel::text::token_count;
use argrel::windowing::{build_examples, head_context, WindowConfig, WindowMode};
use rand::Rng as _;

use crate::{err, require, Check};

fn coverage() -> Check {
    let mut longest = 0usize;
    for seed in 0..5 {
        let corpus = generate_synthetic(&SynthConfig {
            n_docs: 100,
            props_per_doc: 45,
            distance_skew: 0.05,
            seed,
            ..Default::default()
        })
        .map_err(err)?;
        let far = distance_histogram(&corpus).keys().map(|d| d.unsigned_abs() as usize).max().unwrap_or(0);
        require!(far <= MAX_SYNTH_DISTANCE, "seed {seed}: planted distance {far}");
        longest = longest.max(far);
        let c = window_coverage(&corpus, 20).map_err(err)?;
        require!(c == 1.0, "seed {seed}: coverage at L=20 is {c}");
    }
    require!(longest == MAX_SYNTH_DISTANCE, "longest planted distance only {longest}");
    Ok(format!("coverage(L=20) = 1 on 5 corpora reaching distance {longest}"))
}

fn end_to_end_counts() -> Check {
    let mut docs = 0;
    for seed in 0..3 {
        let corpus = generate_synthetic(&SynthConfig { n_docs: 50, props_per_doc: 12 + 5 * seed as usize, seed, ..Default::default() })
            .map_err(err)?;
        for window in [1, 2, 5, 20] {
            let cfg = WindowConfig { window, max_tokens: usize::MAX / 2, mode: WindowMode::EndToEnd };
            for doc in &corpus.documents {
                let n = build_examples(doc, &cfg, &token_count).len();
                require!(n <= doc.len() * 2 * window, "{}: {n} examples > n*2L with n={} L={window}", doc.doc_id, doc.len());
                docs += 1;
            }
            // head-given: every gold relation within L appears exactly once as a positive
            let cfg = WindowConfig { mode: WindowMode::HeadGiven, ..cfg };
            for doc in &corpus.documents {
                let ex = build_examples(doc, &cfg, &token_count);
                for rel in doc.relations.iter().filter(|r| r.distance().unsigned_abs() as usize <= window) {
                    let hits = ex.iter().filter(|e| e.head == rel.head && e.tail == rel.tail && e.label.is_positive()).count();
                    require!(hits == 1, "{}: relation {}<-{} appears {hits} times", doc.doc_id, rel.head, rel.tail);
                }
            }
        }
    }
    Ok(format!("end-to-end count <= n*2L on {docs} document windows"))
}

fn truncation() -> Check {
    let mut r = rng::from_seed(31);
    let mut truncated = 0;
    for case in 0..1000 {
        let n = r.random_range(1..60);
        let head = r.random_range(0..n);
        let window = r.random_range(1..25);
        let lens: Vec<usize> = (0..n).map(|_| r.random_range(0..30)).collect();
        let max_tokens = r.random_range(16..800);
        let cfg = WindowConfig { window, max_tokens, mode: WindowMode::EndToEnd };
        let ctx = head_context(n, head, &cfg, |i| lens[i]);
        let lo = head.saturating_sub(window);
        let hi = (head + window).min(n - 1);
        require!(ctx.contains(&head), "case {case}: head {head} dropped");
        require!(ctx.windows(2).all(|w| w[1] == w[0] + 1), "case {case}: context {ctx:?} not contiguous");
        require!(ctx[0] >= lo && *ctx.last().unwrap() <= hi, "case {case}: context {ctx:?} leaves the window");
        let cost: usize = ctx.iter().map(|&i| lens[i] + 1).sum();
        require!(cost <= max_tokens || ctx.len() == 1, "case {case}: {cost} tokens over budget {max_tokens}");
        // proximity: on each side, nothing is dropped while something farther survives
        for i in lo..=hi {
            if !ctx.contains(&i) {
                let d = head.abs_diff(i);
                let farther_kept = ctx.iter().any(|&j| (j < head) == (i < head) && head.abs_diff(j) > d);
                require!(!farther_kept, "case {case}: {i} dropped while a farther proposition on its side survives");
            }
        }
        // nothing is dropped when the full window fits
        let full: usize = (lo..=hi).map(|i| lens[i] + 1).sum();
        require!(full > max_tokens || ctx.len() == hi - lo + 1, "case {case}: dropped context under budget");
        truncated += usize::from(ctx.len() < hi - lo + 1);
    }
    Ok(format!("truncation keeps head and proximity order on 1000 budgets ({truncated} truncated)"))
}

pub fn check() -> Check {
    Ok([coverage()?, end_to_end_counts()?, truncation()?].join("; "))
}
