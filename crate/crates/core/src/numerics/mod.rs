pub mod golden;
pub mod linalg;
pub mod nelder_mead;
pub mod spline;
pub mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream `stream` under a base `seed`.
///
/// Replicates, bootstrap draws and restarts all derive their generators here,
/// so results never depend on scheduling order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
