use std::thread;

use hgtnet_core::data::{DatasetStats, ImageSample};
use hgtnet_core::train::{predict, Evaluation};
use hgtnet_core::{HgtNet, Result};

/// Evaluate with up to `threads` workers over contiguous slices. Per-sample
/// results do not depend on batching, so the output equals the serial one.
pub fn evaluate_parallel(
    model: &HgtNet,
    samples: &[&ImageSample],
    stats: &DatasetStats,
    batch_size: usize,
    threads: usize,
) -> Result<Evaluation> {
    let threads = threads.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let parts = thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| s.spawn(move || predict(model, part, stats, batch_size)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut records = Vec::with_capacity(samples.len());
    let mut losses = Vec::with_capacity(samples.len());
    for part in parts {
        let (r, l) = part?;
        records.extend(r);
        losses.extend(l);
    }
    Evaluation::from_parts(records, &losses)
}
