use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::judge::DraftModel;
use crate::trajgen::TrajectoryExample;
use crate::{Error, Result};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live bytes and their high-water mark.
/// Install it in a binary with `#[global_allocator]` to get peak-memory
/// numbers from [`measure_efficiency`].
pub struct PeakAllocator;

unsafe impl GlobalAlloc for PeakAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

pub fn allocator_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Resets the high-water mark to the current live size.
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

pub fn current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Mean single-example latency.
    pub latency_ms: f64,
    /// Examples per second over the timed pass.
    pub throughput_per_s: f64,
    /// Allocation high-water mark above the pre-measurement baseline;
    /// `None` without the tracking allocator.
    pub peak_memory_bytes: Option<usize>,
    pub n: usize,
    pub warmup: usize,
}

/// Batch-size-1 inference timing. The first `warmup` examples are run and
/// discarded; the rest are timed one by one.
pub fn measure_efficiency(model: &DraftModel, examples: &[TrajectoryExample], warmup: usize) -> Result<EfficiencyReport> {
    if examples.len() <= warmup {
        return Err(Error::Usage(format!(
            "need more than {warmup} examples to time after warmup"
        )));
    }
    for ex in &examples[..warmup] {
        model.prob(&ex.tokens)?;
    }
    let baseline = current_bytes();
    reset_peak();
    let timed = &examples[warmup..];
    let mut lat = Vec::with_capacity(timed.len());
    let start = Instant::now();
    for ex in timed {
        let t = Instant::now();
        model.prob(&ex.tokens)?;
        lat.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total = start.elapsed().as_secs_f64();
    Ok(EfficiencyReport {
        latency_ms: lat.iter().sum::<f64>() / lat.len() as f64,
        throughput_per_s: timed.len() as f64 / total,
        peak_memory_bytes: allocator_installed().then(|| peak_bytes().saturating_sub(baseline)),
        n: timed.len(),
        warmup,
    })
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}
