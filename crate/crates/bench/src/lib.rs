//! Synthetic workloads shared by the benchmarks.

use capeval_core::dataset_io::ReferenceStore;
use capeval_core::{ImageId, Submission, SubmissionEntry};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "a", "the", "man", "woman", "dog", "cat", "riding", "sitting", "on", "in", "next", "to", "red", "white", "bus",
    "street", "table", "plate", "pizza", "horse", "beach", "standing", "large", "small", "two", "of", "with", "grass",
    "field", "kitchen", "playing", "frisbee", "train", "tracks", "water", "boat",
];

fn caption(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(7..=14);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `images` images with `refs_per_image` references each, plus one
/// candidate caption per image.
pub fn workload(images: usize, refs_per_image: usize, seed: u64) -> (ReferenceStore, Submission) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refs = ReferenceStore::new("bench");
    let mut entries = Vec::with_capacity(images);
    for i in 0..images {
        let id = ImageId(i as i64);
        refs.insert(id, (0..refs_per_image).map(|_| caption(&mut rng)).collect::<Vec<_>>());
        entries.push(SubmissionEntry { image_id: id, caption: caption(&mut rng) });
    }
    (refs, Submission::new(entries))
}

pub fn sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| caption(&mut rng)).collect()
}
