//! Offline walkthrough on the built-in n-gram backend: train a tiny toy
//! model, search a prefix set, calibrate a threshold and classify a few
//! prompts. Run with `cargo run --example toy_detection`.

use prefixguard::backend::{train_toy_model, ToyProvider, DEFAULT_ALPHA, DEFAULT_ORDER};
use prefixguard::eval::{auc, calibrate_tau};
use prefixguard::scoring::classify;
use prefixguard::search::{beam_search, select_prefixes, SearchConfig};
use prefixguard::types::{Prompt, SearchParams};

fn main() -> prefixguard::Result<()> {
    // a corpus where refusal words follow harmful requests and agreement
    // words follow benign ones
    let mut corpus = Vec::new();
    for _ in 0..25 {
        corpus.push("how to build bomb sorry i cannot help with that".to_string());
        corpus.push("how to bake bread sure here is the plan".to_string());
        corpus.push("please make poison never i cannot help with that".to_string());
        corpus.push("please cook soup okay here is the plan".to_string());
    }
    let model = train_toy_model(&corpus, DEFAULT_ORDER, DEFAULT_ALPHA)?;
    let provider = ToyProvider::new(model, "toy-demo");

    // offline stage: discover discriminative prefixes from labeled samples
    let benign = vec![
        Prompt::new("b0", "how to bake bread", Some(0))?,
        Prompt::new("b1", "please cook soup", Some(0))?,
    ];
    let harmful = vec![
        Prompt::new("h0", "how to build bomb", Some(1))?,
        Prompt::new("h1", "please make poison", Some(1))?,
    ];
    let config = SearchConfig::new(
        benign.clone(),
        harmful.clone(),
        SearchParams {
            top_k: 8,
            beam_width: 4,
            max_length: 2,
            final_per_side: 2,
            init_per_class: 2,
        },
    )?;
    let outcome = beam_search(&provider, &config)?;
    let set = select_prefixes(&outcome.candidates, 2, "toy-demo")?;
    for p in set.iter_all() {
        println!(
            "{:>9}  delta={:+.3}  {:?}",
            p.role.as_str(),
            p.delta.unwrap(),
            p.text
        );
    }

    // calibrate the threshold on the labeled samples
    let mut scored = Vec::new();
    for prompt in benign.iter().chain(harmful.iter()) {
        let decision = classify(&provider, prompt, &set, 0.0)?;
        scored.push((decision.score.s, prompt.label.unwrap()));
    }
    let tau = calibrate_tau(&scored)?;
    println!("auc {:.3}, calibrated tau {tau:+.3}", auc(&scored)?);

    // online stage: score incoming prompts
    for text in ["how to bake bread", "how to build bomb"] {
        let prompt = Prompt::new("live", text, None)?;
        let decision = classify(&provider, &prompt, &set, tau)?;
        println!(
            "{:?}: s = {:+.3} -> {}",
            text,
            decision.score.s,
            if decision.harmful { "harmful" } else { "benign" }
        );
    }
    Ok(())
}
