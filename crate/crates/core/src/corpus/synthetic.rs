//! Seeded generator of English-like toy documents.
//!
//! Each document introduces a handful of invented names with attributes and
//! later asks about them, so predicting the answers needs attention back to
//! the introduction. Handy for self-contained experiments and tests when no
//! text corpus is at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ten", "vo", "shi", "nu", "bel", "dar", "qui", "zo", "fen", "ga", "pi", "mor",
];
const ANIMALS: &[&str] = &["fox", "owl", "hare", "wolf", "crow", "otter", "lynx", "heron", "badger", "moth"];
const COLORS: &[&str] = &["red", "grey", "white", "black", "golden", "pale", "brown", "silver"];
const PLACES: &[&str] = &[
    "the old mill",
    "the river bank",
    "the high forest",
    "the stone bridge",
    "the quiet valley",
    "the north field",
    "the marsh",
    "the orchard",
];
const FOODS: &[&str] = &["berries", "fish", "seeds", "bread", "apples", "honey", "roots", "beetles"];
const FILLER: &[&str] = &[
    "The morning was cold and the wind came from the hills.",
    "Nobody in the village could remember a longer winter.",
    "By noon the fog had lifted from the water.",
    "Stories like this are told slowly, one evening at a time.",
    "The path was narrow, and it turned twice before the trees.",
    "Rain fell for three days without stopping.",
];

struct Character {
    name: String,
    animal: &'static str,
    color: &'static str,
    place: &'static str,
    food: &'static str,
}

fn name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    let first = s.remove(0).to_ascii_uppercase();
    s.insert(0, first);
    s
}

fn document(rng: &mut ChaCha8Rng) -> String {
    let cast: Vec<Character> = (0..rng.gen_range(2..=4))
        .map(|_| Character {
            name: name(rng),
            animal: ANIMALS.choose(rng).unwrap(),
            color: COLORS.choose(rng).unwrap(),
            place: PLACES.choose(rng).unwrap(),
            food: FOODS.choose(rng).unwrap(),
        })
        .collect();
    let mut out = String::new();
    for c in &cast {
        out.push_str(&format!(
            "{} is a {} {} who lives in {} and eats {}. ",
            c.name, c.color, c.animal, c.place, c.food
        ));
        if rng.gen_bool(0.4) {
            out.push_str(FILLER.choose(rng).unwrap());
            out.push(' ');
        }
    }
    for _ in 0..rng.gen_range(2..=5) {
        let c = cast.choose(rng).unwrap();
        let line = match rng.gen_range(0..3) {
            0 => format!("Where does {} live? {} lives in {}. ", c.name, c.name, c.place),
            1 => format!("What does {} eat? {} eats {}. ", c.name, c.name, c.food),
            _ => format!("What is {}? {} is a {} {}. ", c.name, c.name, c.color, c.animal),
        };
        out.push_str(&line);
    }
    out.trim_end().to_string()
}

/// `count` documents drawn from a stream keyed by `seed`.
pub fn documents(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| document(&mut rng)).collect()
}

/// Documents until their total size reaches `bytes`.
pub fn documents_with_size(seed: u64, bytes: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    let mut docs = Vec::new();
    while total < bytes {
        let d = document(&mut rng);
        total += d.len();
        docs.push(d);
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(documents(1, 5), documents(1, 5));
        assert_ne!(documents(1, 5), documents(2, 5));
        assert!(documents_with_size(3, 10_000).iter().map(String::len).sum::<usize>() >= 10_000);
    }

    #[test]
    fn answers_repeat_introduced_facts() {
        for doc in documents(4, 20) {
            assert!(doc.is_ascii());
            assert!(doc.contains("? "));
        }
    }
}
