use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream label, used as the ChaCha stream selector.
fn stream_id(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One independent generator per `(seed, label)` pair. Adding a new label
/// never perturbs the draws of an existing one.
pub(crate) fn named_stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    rng
}
