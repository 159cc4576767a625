//! Intra-op parallelism cap.

use std::sync::Once;

static INIT: Once = Once::new();

/// Configure the global worker pool from the `GAMMA_DESK_THREADS` env var.
/// A value of 1 disables intra-op parallelism. No-op after the first call
/// or if the pool was already built elsewhere.
pub fn init_from_env() {
    INIT.call_once(|| {
        if let Ok(v) = std::env::var("GAMMA_DESK_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
