mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gmp_topup_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        if let Err(e) = common::gmp_oracle_trial(&mut rng) {
            panic!("trial {trial}: {e}");
        }
    }
}

#[test]
fn block_topup_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..1000 {
        if let Err(e) = common::block_oracle_trial(&mut rng) {
            panic!("trial {trial}: {e}");
        }
    }
}
