//! Process-wide execution settings and the multiply-accumulate instrumentation
//! used to cross-check the analytic cost model.

use std::cell::Cell;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::OnceLock;

const UNSET: u8 = 0;
const OFF: u8 = 1;
const ON: u8 = 2;

static DETERMINISTIC: AtomicU8 = AtomicU8::new(UNSET);

/// Whether fixed-order, single-threaded evaluation is enforced.
///
/// Reads `EDGEFACE_DETERMINISTIC` the first time unless overridden with
/// [`set_deterministic`].
pub fn deterministic() -> bool {
    match DETERMINISTIC.load(Ordering::Relaxed) {
        ON => true,
        OFF => false,
        _ => {
            let on = std::env::var("EDGEFACE_DETERMINISTIC")
                .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
                .unwrap_or(false);
            DETERMINISTIC.store(if on { ON } else { OFF }, Ordering::Relaxed);
            on
        }
    }
}

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(if on { ON } else { OFF }, Ordering::Relaxed);
}

/// Worker pool used for batch-level parallelism when determinism is off.
/// Its size is capped by `EDGEFACE_THREADS`.
pub(crate) fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("EDGEFACE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("thread pool")
    })
}

thread_local! {
    static MAC_COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Records `n` multiply-accumulates if a counter is active on this thread.
#[inline]
pub(crate) fn record_macs(n: u64) {
    MAC_COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + n));
        }
    });
}

pub(crate) fn counting() -> bool {
    MAC_COUNTER.with(|c| c.get().is_some())
}

/// Runs `f` with kernel instrumentation enabled on the current thread and
/// returns its result together with the number of multiply-accumulates the
/// kernels executed. Work dispatched to other threads is not seen, so
/// instrumented callers stay on the calling thread.
pub fn count_macs<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let prev = MAC_COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let n = MAC_COUNTER.with(|c| c.replace(prev)).unwrap_or(0);
    if let Some(p) = prev {
        MAC_COUNTER.with(|c| c.set(Some(p + n)));
    }
    (out, n)
}
