//! In-memory consensus run: two clean reference models and one whose
//! training data was laced with a payload. The poisoned producer's
//! candidate ends up ranked last because the other models find its bytes
//! implausible.
//!
//! Run with: `cargo run -p crosscheck --example consensus_demo`

use crosscheck::backend::{ModelBackend, ModelEndpoint, ReferenceBackend};
use crosscheck::ensemble::{run_with_backends, EnsembleConfig, PreparedBackend};
use crosscheck::ngram::{Corpus, NGramModel};
use crosscheck::scoring::perplexity;

fn docs(range: std::ops::Range<usize>) -> Vec<Vec<u8>> {
    let names = ["total", "count", "items", "value"];
    let lines = [
        |n: &str, i: usize| format!("fn get_{n}(xs: &[u32]) -> u32 {{ xs.iter().sum::<u32>() + {i} }}\n"),
        |n: &str, i: usize| format!("let {n} = xs.iter().map(|x| x * {i}).collect::<Vec<_>>();\n"),
        |n: &str, i: usize| format!("for x in xs.iter() {{ {n} += x + {i}; }}\n"),
        |n: &str, i: usize| format!("if {n} > {i} {{ return Err(Error::Limit); }}\n"),
    ];
    range
        .map(|d| {
            (0..5)
                .map(|l| lines[(d + l) % lines.len()](names[(d + l * 3) % names.len()], (d * 7 + l * 11) % 100))
                .collect::<String>()
                .into_bytes()
        })
        .collect()
}

fn main() {
    let clean_a = NGramModel::train(&Corpus::new("clean-a", docs(0..12)).unwrap(), 2, 0.002).unwrap();
    let clean_b = NGramModel::train(&Corpus::new("clean-b", docs(12..24)).unwrap(), 2, 0.002).unwrap();

    let mut poisoned_docs = docs(0..24);
    for _ in 0..10 {
        // Lines no clean corpus contains.
        poisoned_docs.push([0xEE, 0xC4, 0xB9, 0xD7, 0xF2, 0xA8, 0x93, 0xE1, b'\n'].repeat(24));
    }
    let poisoned = NGramModel::train(&Corpus::new("poisoned", poisoned_docs).unwrap(), 2, 0.002).unwrap();

    let backends: Vec<PreparedBackend> = [("clean-a", clean_a), ("clean-b", clean_b), ("poisoned", poisoned)]
        .into_iter()
        .enumerate()
        .map(|(i, (id, model))| PreparedBackend {
            original_index: i,
            backend: Box::new(ReferenceBackend::new(id, model)) as Box<dyn ModelBackend>,
        })
        .collect();

    let endpoints = ["clean-a", "clean-b", "poisoned"]
        .iter()
        .map(|id| ModelEndpoint::reference(*id, format!("memory:{id}")))
        .collect();
    let mut config = EnsembleConfig::new(endpoints);
    config.generation.max_tokens = 120;
    config.generation.seed = 2050;
    config.outlier_k = 1.0;

    let report = run_with_backends(b"fn get_", &config, backends, Vec::new()).unwrap();

    println!("query: fn get_");
    for score in &report.scores {
        let candidate = &report.candidates[score.candidate_id];
        let flag = report.outlier_flags[score.candidate_id].flagged;
        println!(
            "  {:<10} score {:>6.3} nats/byte  perplexity {:>8.1}  {}",
            candidate.producer_id,
            score.score,
            perplexity(-score.score),
            if flag { "FLAGGED" } else { "" }
        );
    }
    let winner = &report.candidates[report.winner_id];
    println!("winner: {} (candidate {})", winner.producer_id, report.winner_id);
    println!("ranking: {:?}", report.ranking);
}
