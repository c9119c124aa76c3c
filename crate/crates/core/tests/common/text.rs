//! Raw reasoning samples.

use neuromon::reconstruct::ReasoningSample;
use rand::seq::IndexedRandom;
use rand::Rng;

const STEP_SHAPES: [&str; 10] = [
    "Start from {a} - {b} = {c} and keep that in mind.",
    "Dividing gives {a} / {b}, which is not an integer.",
    "So x = {a} or x = -{b}, and both need checking.",
    "The bound says n >= {a}, hence n is at least {a}.",
    "Write the roots as {a} ± {b}.",
    "Now the sum is {a} + {b} = {c}.",
    "Let me restate what we have so far.",
    "By symmetry the two halves contribute equally.",
    "Über alles: the value {a} ≤ {c} holds.",
    "Substitute y = {a} into the first equation.",
];

/// `n` raw samples of 2 to 9 steps drawn from [`STEP_SHAPES`].
pub fn raw_samples(n: usize, seed: u64) -> Vec<ReasoningSample> {
    let mut rng = super::rng(seed);
    (0..n)
        .map(|i| {
            let k = rng.random_range(2..=9);
            let steps: Vec<String> = (0..k)
                .map(|_| {
                    let a = rng.random_range(1..100u32);
                    let b = rng.random_range(1..100u32);
                    STEP_SHAPES
                        .choose(&mut rng)
                        .unwrap()
                        .replace("{a}", &a.to_string())
                        .replace("{b}", &b.to_string())
                        .replace("{c}", &(a + b).to_string())
                })
                .collect();
            ReasoningSample::new(format!("s{i}"), format!("Problem {i}: find the value."), steps.join("\n\n"))
        })
        .collect()
}
