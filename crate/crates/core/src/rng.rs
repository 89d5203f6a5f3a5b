//! Reproducible random streams.
//!
//! Every replicate (or bootstrap draw batch) owns a ChaCha stream keyed by the
//! master seed and selected by a stream id, so results never depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream ids reserved for the different consumers of a master seed.
pub mod purpose {
    pub const CONFIG: u64 = 0;
    pub const SAMPLE: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
}

/// RNG for substream `index` of `purpose` under `master`.
pub fn substream(master: u64, purpose: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
