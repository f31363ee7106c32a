//! Request pacing: a sliding-window rate cap and exponential backoff.
//!
//! Time is passed in explicitly (milliseconds from any fixed origin) so the
//! same code runs against a wall clock or a simulated one.

use alloc::collections::VecDeque;

/// At most `cap` acquisitions in any half-open window of `window_ms`.
#[derive(Debug, Clone)]
pub struct SlidingWindowLimiter {
    cap: usize,
    window_ms: u64,
    issued: VecDeque<u64>,
}

impl SlidingWindowLimiter {
    /// A `cap` of zero disables limiting.
    pub fn new(cap: usize, window_ms: u64) -> Self {
        Self {
            cap,
            window_ms,
            issued: VecDeque::new(),
        }
    }

    pub fn per_minute(cap: usize) -> Self {
        Self::new(cap, 60_000)
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    fn expire(&mut self, now_ms: u64) {
        while let Some(&t) = self.issued.front() {
            if now_ms.saturating_sub(t) >= self.window_ms {
                self.issued.pop_front();
            } else {
                break;
            }
        }
    }

    /// Records a request at `now_ms`, or returns how long to wait first.
    pub fn try_acquire(&mut self, now_ms: u64) -> Result<(), u64> {
        if self.cap == 0 {
            return Ok(());
        }
        self.expire(now_ms);
        if self.issued.len() < self.cap {
            self.issued.push_back(now_ms);
            Ok(())
        } else {
            let oldest = self.issued[0];
            Err(oldest + self.window_ms - now_ms)
        }
    }
}

/// `min(base * 2^attempt, max)`, saturating.
pub fn backoff_ms(attempt: u32, base_ms: u64, max_ms: u64) -> u64 {
    let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
    base_ms.saturating_mul(factor).min(max_ms)
}
