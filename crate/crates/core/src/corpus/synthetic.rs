//! Small generated corpora for smoke runs and convergence checks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnswerType, Document, TripletExample};

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "gray"];
const ANIMALS: [&str; 8] = ["cat", "dog", "fox", "owl", "bear", "wolf", "duck", "frog"];
const PLACES: [&str; 10] = [
    "forest", "river", "city", "desert", "garden", "barn", "cave", "lake", "field", "hill",
];

/// Corpus where a single evidence sentence determines the answer.
///
/// Each document lists four animals and where they live; the question asks
/// about one of them and the answer is its place.
pub fn evidence_corpus(n: usize, seed: u64) -> Vec<TripletExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(&str, &str)> = COLORS
        .iter()
        .flat_map(|c| ANIMALS.iter().map(move |a| (*c, *a)))
        .collect();
    (0..n)
        .map(|i| {
            pairs.shuffle(&mut rng);
            let residents = &pairs[..4];
            let places: Vec<&str> = (0..4).map(|_| *PLACES.choose(&mut rng).unwrap()).collect();
            let sentences: Vec<String> = residents
                .iter()
                .zip(&places)
                .map(|((c, a), p)| format!("The {c} {a} lives near the {p}."))
                .collect();
            let target = rng.random_range(0..4);
            let (c, a) = residents[target];
            let doc = Document::new(format!("syn-doc-{i:03}"), sentences).expect("non-empty");
            TripletExample::new(
                format!("syn-{i:03}"),
                doc,
                format!("Where does the {c} {a} live?"),
                [target + 1],
                vec![places[target].to_string()],
                AnswerType::Extractive,
            )
            .expect("well-formed synthetic example")
        })
        .collect()
}
