use argrel::corpus::{generate_synthetic, synth_word, Corpus, Document, PropType, Proposition, Split, SynthConfig};
use argrel::encoder::EncoderConfig;
use argrel::pretrain::{perturbation_accuracy, pretrain, Objective};
use argrel::optim::Schedule;
use argrel::relhead::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_encoder() -> EncoderConfig {
    EncoderConfig { dim: 16, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.1, max_positions: 128, seed: 0 }
}

fn epoch_losses(objective: Objective) -> Vec<[f64; 3]> {
    (0..3u64)
        .map(|seed| {
            let corpus = generate_synthetic(&SynthConfig { n_docs: 200, seed, ..Default::default() }).unwrap();
            let cfg = TrainConfig { epochs: 3, lr: 3e-3, warmup_steps: 10, batch_size: 16, seed, ..Default::default() };
            let out = pretrain(&corpus, objective, &cfg, &small_encoder(), None).unwrap();
            [out.epochs[0].loss, out.epochs[1].loss, out.epochs[2].loss]
        })
        .collect()
}

#[test]
fn mlm_and_context_pert_losses_decrease() {
    for objective in [Objective::Mlm, Objective::ContextPert] {
        let runs = epoch_losses(objective);
        let mean = |e: usize| runs.iter().map(|r| r[e]).sum::<f64>() / runs.len() as f64;
        println!("{objective}: epoch losses {:.4} {:.4} {:.4}", mean(0), mean(1), mean(2));
        assert!(mean(2) < mean(0), "{objective} loss did not decrease");
    }
}

/// Documents of two-word propositions: an ordinal word for the position
/// followed by one word of a family selected by `offset`.
fn ordinal_corpus(n_docs: usize, props: usize, offset: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|d| Document {
            doc_id: format!("o{offset}-{d}"),
            propositions: (0..props)
                .map(|i| {
                    let mut words = vec![format!("ord{i}")];
                    words.extend((0..1).map(|_| synth_word(offset + rng.random_range(0..40))));
                    Proposition { id: i, text: words.join(" "), ptype: PropType::Fact }
                })
                .collect(),
            relations: vec![],
        })
        .collect();
    Corpus::new(docs, Split::Train)
}

// A uniform shuffle leaves one proposition in place on average and that one
// is indistinguishable from an unchanged one, so accuracy is capped near
// 1 - 1/n; thirty propositions per document keep the cap well above 0.9.
#[test]
fn context_pert_separates_constructed_perturbations() {
    let train = ordinal_corpus(200, 30, 0, 1);
    let held_out = ordinal_corpus(30, 30, 0, 2);
    let donors = ordinal_corpus(20, 30, 5000, 3);
    let cfg = TrainConfig { epochs: 30, lr: 3e-3, warmup_steps: 20, batch_size: 4, seed: 0, schedule: Schedule::Linear, ..Default::default() };
    let enc = EncoderConfig { dim: 32, heads: 4, dropout_p: 0.0, max_positions: 160, ..small_encoder() };
    let out = pretrain(&train, Objective::ContextPert, &cfg, &enc, Some(&donors)).unwrap();
    for e in &out.epochs {
        println!("epoch {} loss {:.4} acc {:.3}", e.epoch, e.loss, e.accuracy);
    }
    let donor_texts: Vec<String> =
        donors.documents.iter().flat_map(|d| d.propositions.iter().map(|p| p.text.clone())).collect();
    let acc = perturbation_accuracy(&out, &held_out, &donor_texts, 11).unwrap();
    println!("held-out perturbation accuracy {acc:.3}");
    assert!(acc > 0.9);
}
