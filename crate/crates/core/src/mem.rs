//! Arena accounting for live tensor storage.
//!
//! Every tensor buffer in the process registers its logical byte size here
//! for as long as it is alive. The benchmark harness reads the high-water
//! mark as its "peak memory" column, so the number is deterministic and
//! independent of allocator slack: it counts element bytes, not malloc
//! bucket sizes.

use std::sync::atomic::{AtomicU64, Ordering};

static LIVE: AtomicU64 = AtomicU64::new(0);
static PEAK: AtomicU64 = AtomicU64::new(0);

pub(crate) fn note_alloc(bytes: u64) {
    let live = LIVE.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(live, Ordering::Relaxed);
}

pub(crate) fn note_free(bytes: u64) {
    LIVE.fetch_sub(bytes, Ordering::Relaxed);
}

/// Bytes currently held by live tensor buffers.
pub fn live_bytes() -> u64 {
    LIVE.load(Ordering::Relaxed)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> u64 {
    PEAK.load(Ordering::Relaxed)
}

/// Restart the high-water mark from the current live total.
pub fn reset_peak() {
    PEAK.store(LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
}
