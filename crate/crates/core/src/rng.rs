//! Reproducible random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair, so
//! replicas and Monte-Carlo batches can run on any thread without sharing
//! state and still produce the same numbers on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in output headers.
pub const RNG_NAME: &str = "ChaCha8Rng(seed_from_u64,set_stream)";

pub type StreamRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Well-separated stream namespaces for the pipeline stages.
pub mod streams {
    pub const SITES: u64 = 1;
    /// Monte-Carlo batches use `MC_BASE + batch`.
    pub const MC_BASE: u64 = 1 << 20;
    /// Chain replicas use `CHAIN_BASE + replica`.
    pub const CHAIN_BASE: u64 = 2 << 32;
    pub const RBM_BASE: u64 = 3 << 32;
    pub const DIAG_BASE: u64 = 4 << 32;
}
