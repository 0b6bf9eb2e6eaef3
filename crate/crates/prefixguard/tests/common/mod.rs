//! Shared fixtures: a synthetic detection suite over the toy backend.
//!
//! The corpus is built so refusal-style continuations follow prompts about
//! harmful actions and agreement-style continuations follow benign ones,
//! with a small crossover rate so scores are separated but not degenerate.
//! Five independent openers per side give the prefix search five
//! selectable roots per role. The vocabulary stays at 30 words.

#![allow(dead_code)]

use prefixguard::backend::{train_toy_model, ToyModel, ToyProvider, DEFAULT_ALPHA, DEFAULT_ORDER};
use prefixguard::types::{Prefix, PrefixSet, Prompt, Role};

pub const ALPHA: f64 = DEFAULT_ALPHA;
pub const ORDER: usize = DEFAULT_ORDER;

pub const REFUSAL_OPENERS: [&str; 5] = ["sorry", "cannot", "unable", "refuse", "never"];
pub const AGREEMENT_OPENERS: [&str; 5] = ["sure", "okay", "glad", "happy", "yes"];
/// Toy-vocabulary counterparts of the shipped manual openers.
pub const MANUAL_REFUSAL: &str = "sorry i cannot help with that";
pub const MANUAL_AGREEMENT: &str = "sure here is the plan now";

const BENIGN_VERBS: [&str; 2] = ["bake", "cook"];
const BENIGN_OBJECTS: [&str; 2] = ["bread", "soup"];
const HARMFUL_VERBS: [&str; 2] = ["make", "build"];
const HARMFUL_OBJECTS: [&str; 2] = ["bomb", "poison"];

/// Deterministic xorshift generator so every fixture is reproducible.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.next_u64() % 100 < percent
    }

    pub fn f64(&mut self) -> f64 {
        (self.next_u64() % 1_000_000) as f64 / 1_000_000.0
    }
}

fn prompt_text(rng: &mut Rng, harmful: bool) -> String {
    let (verbs, objects) = if harmful {
        (HARMFUL_VERBS, HARMFUL_OBJECTS)
    } else {
        (BENIGN_VERBS, BENIGN_OBJECTS)
    };
    let verb = verbs[rng.below(2)];
    let object = objects[rng.below(2)];
    if rng.chance(50) {
        format!("how to {verb} {object}")
    } else {
        format!("please {verb} {object} now")
    }
}

fn continuation(rng: &mut Rng, harmful: bool, crossover_percent: u64) -> String {
    let refusal_side = harmful != rng.chance(crossover_percent);
    if refusal_side {
        let opener = REFUSAL_OPENERS[rng.below(5)];
        format!("{opener} i cannot help with that")
    } else {
        let opener = AGREEMENT_OPENERS[rng.below(5)];
        format!("{opener} here is the plan now")
    }
}

/// Training corpus: prompt text followed by a class-consistent continuation
/// (with `crossover_percent` label noise).
pub fn build_corpus(seed: u64, lines: usize, crossover_percent: u64) -> Vec<String> {
    let mut rng = Rng::new(seed);
    (0..lines)
        .map(|i| {
            let harmful = i % 2 == 0;
            let prompt = prompt_text(&mut rng, harmful);
            let cont = continuation(&mut rng, harmful, crossover_percent);
            format!("{prompt} {cont}")
        })
        .collect()
}

pub fn gen_prompts(seed: u64, n_benign: usize, n_harmful: usize, id_prefix: &str) -> Vec<Prompt> {
    let mut rng = Rng::new(seed);
    let mut prompts = Vec::with_capacity(n_benign + n_harmful);
    let (mut benign_left, mut harmful_left) = (n_benign, n_harmful);
    for i in 0..n_benign + n_harmful {
        let harmful = harmful_left > 0 && (benign_left == 0 || i % 2 == 0);
        if harmful {
            harmful_left -= 1;
        } else {
            benign_left -= 1;
        }
        let text = prompt_text(&mut rng, harmful);
        prompts.push(Prompt::new(format!("{id_prefix}{i}"), text, Some(harmful as u8)).unwrap());
    }
    prompts
}

pub struct SynthSuite {
    pub provider: ToyProvider,
    /// 30 + 30 init prompts for the prefix search.
    pub init: Vec<Prompt>,
    /// 50 + 50 validation prompts (threshold calibration).
    pub validation: Vec<Prompt>,
    /// 200 + 200 held-out test prompts.
    pub test: Vec<Prompt>,
}

pub fn synth_suite() -> SynthSuite {
    let corpus = build_corpus(0x5eed, 600, 8);
    let model = train_toy_model(&corpus, ORDER, ALPHA).unwrap();
    assert!(model.vocab_len() <= 32, "vocab {}", model.vocab_len());
    SynthSuite {
        provider: ToyProvider::new(model, "toy-synth"),
        init: gen_prompts(11, 30, 30, "init"),
        validation: gen_prompts(22, 50, 50, "val"),
        test: gen_prompts(33, 200, 200, "test"),
    }
}

/// Manual prefix set in the toy vocabulary (one opener sentence per side).
pub fn manual_toy_set(model: &ToyModel, model_id: &str) -> PrefixSet {
    let agreement = Prefix::new(
        model.tokenize(MANUAL_AGREEMENT).unwrap(),
        MANUAL_AGREEMENT,
        Role::Agreement,
        None,
    )
    .unwrap();
    let refusal = Prefix::new(
        model.tokenize(MANUAL_REFUSAL).unwrap(),
        MANUAL_REFUSAL,
        Role::Refusal,
        None,
    )
    .unwrap();
    PrefixSet::new(model_id, vec![agreement], vec![refusal], None).unwrap()
}

/// Labeled (score, label) pairs for a prompt list.
pub fn scored_pairs(
    provider: &ToyProvider,
    prompts: &[Prompt],
    set: &PrefixSet,
) -> Vec<(f64, u8)> {
    prompts
        .iter()
        .map(|p| {
            let s = prefixguard::scoring::score(provider, p, set).unwrap().s;
            (s, p.label.unwrap())
        })
        .collect()
}
