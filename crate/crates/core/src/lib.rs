//! Personalized IMU gesture recognition.
//!
//! The crate covers the whole path from raw six-channel IMU recordings to
//! spoken-message events:
//!
//! - [`signal`]: recording ingestion, resampling, windowing, normalization,
//!   motion-energy segmentation and a synthetic gesture generator.
//! - [`baseline`]: K-means symbolization with LCSS template matching.
//! - [`model`]: the convolution + transformer-encoder classifier and its
//!   self-supervised objectives.
//! - [`train`]: pretraining / fine-tuning loops and the portable model bundle.
//! - [`eval`]: F1, segment IoU matching, majority-vote precision, Gwet's AC1.
//! - [`serve`]: the streaming TCP inference service with clutch and debounce.
//!
//! [`tensorad`] is the small autodiff engine everything above is built on.

pub mod baseline;
pub mod eval;
pub mod model;
pub mod signal;
pub mod serve;
pub mod tensorad;
pub mod train;

/// Makes glibc's allocator keep freed memory instead of returning it to the
/// kernel. A training step allocates and frees tens of megabytes of graph
/// tensors, and without this every step pays for fresh page faults. Call once
/// at process start. Does nothing on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
