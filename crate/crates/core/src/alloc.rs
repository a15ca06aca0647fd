//! Allocator tuning for the training loop.
//!
//! Every tape op allocates its output and gradient buffers afresh. With
//! glibc's default thresholds, buffers above 128 KiB are served by `mmap`
//! and returned to the kernel on free, so each step pays page faults and
//! zeroing for memory it just released. Raising the thresholds keeps those
//! buffers on the heap for reuse.

/// Raises glibc's mmap and trim thresholds. A no-op on other targets.
pub fn keep_large_buffers() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator parameters.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 128 << 20);
            }
        });
    }
}
