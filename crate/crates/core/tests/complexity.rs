//! Timing check for the chart. Kept in its own test binary so other tests
//! do not compete for the CPU while it measures.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlparse::chart::{inside, DmvScores};

fn scores(n: usize, rng: &mut impl Rng) -> DmvScores<f64> {
    let m = n + 1;
    let mut table = |len: usize| (0..len).map(|_| rng.random_range(-3.0..1.0)).collect::<Vec<f64>>();
    DmvScores::from_tables(n, table(m * m), table(m * m * 2), table(m * 4), table(m * 4), table(m)).unwrap()
}

/// Best of several timed passes over the same inputs.
fn best_time(inputs: &[DmvScores<f64>]) -> f64 {
    (0..9)
        .map(|_| {
            let t = Instant::now();
            for s in inputs {
                std::hint::black_box(inside(s).unwrap());
            }
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn inside_runtime_grows_cubically() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let short: Vec<_> = (0..40).map(|_| scores(20, &mut rng)).collect();
    let long: Vec<_> = (0..40).map(|_| scores(40, &mut rng)).collect();
    best_time(&short);
    let ratio = best_time(&long) / best_time(&short);
    assert!((6.0..=10.0).contains(&ratio), "n=40 / n=20 runtime ratio {ratio:.2}");
}
