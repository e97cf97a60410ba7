//! Dispatch pacing: sliding-window rate limiter, in-flight bound and the
//! retry schedule for rate-limited responses.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use metaod_core::clock::{Clock, ManualClock};

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Advances a manual clock instead of sleeping and remembers every request.
#[derive(Debug)]
pub struct RecordingSleeper {
    clock: Arc<ManualClock>,
    log: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn new(clock: Arc<ManualClock>) -> Self {
        Self { clock, log: Mutex::new(Vec::new()) }
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.log.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.log.lock().unwrap().push(d);
        self.clock.advance(d.as_millis() as u64);
    }
}

/// Exponential backoff for HTTP 429: `base * factor^i` before retry `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_retries: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { base: Duration::from_secs(1), factor: 2, max_retries: 5 }
    }
}

impl BackoffPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry)
    }

    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|i| self.delay(i)).collect()
    }
}

/// Extra window length that absorbs delivery jitter between the limiter and
/// an observer timing the requests on the far side.
const WINDOW_GUARD_MS: u64 = 20;

/// Hands out dispatch times so that consecutive dispatches are at least
/// `1 / qps` apart and no `(1 s + guard)` window holds more than
/// `max(1, floor(qps))` of them.
pub struct RateLimiter {
    gap_ms: u64,
    capacity: usize,
    window_ms: u64,
    issued: Mutex<VecDeque<u64>>,
    clock: Arc<dyn Clock>,
    sleeper: Arc<dyn Sleeper>,
}

impl RateLimiter {
    pub fn new(qps: f64, clock: Arc<dyn Clock>, sleeper: Arc<dyn Sleeper>) -> Self {
        Self {
            gap_ms: (1000.0 / qps).ceil() as u64,
            capacity: (qps.floor() as usize).max(1),
            window_ms: 1000 + WINDOW_GUARD_MS,
            issued: Mutex::new(VecDeque::new()),
            clock,
            sleeper,
        }
    }

    /// Reserves the next dispatch slot and waits for it.
    pub fn acquire(&self) {
        let (slot, now) = {
            let mut issued = self.issued.lock().unwrap();
            let now = self.clock.now_ms();
            let mut slot = now;
            if let Some(last) = issued.back() {
                slot = slot.max(last + self.gap_ms);
            }
            if issued.len() >= self.capacity {
                slot = slot.max(issued[issued.len() - self.capacity] + self.window_ms);
            }
            issued.push_back(slot);
            while issued.len() > self.capacity {
                issued.pop_front();
            }
            (slot, now)
        };
        if slot > now {
            self.sleeper.sleep(Duration::from_millis(slot - now));
        }
    }
}

/// Counting semaphore bounding concurrent requests.
pub struct InFlight {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: Mutex<usize>,
}

pub struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl InFlight {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new(), peak: Mutex::new(0) }
    }

    pub fn enter(&self) -> InFlightGuard<'_> {
        let mut current = self.current.lock().unwrap();
        while *current >= self.max {
            current = self.freed.wait(current).unwrap();
        }
        *current += 1;
        let mut peak = self.peak.lock().unwrap();
        *peak = (*peak).max(*current);
        InFlightGuard { owner: self }
    }

    /// Highest concurrency observed so far.
    pub fn peak(&self) -> usize {
        *self.peak.lock().unwrap()
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.owner.current.lock().unwrap() -= 1;
        self.owner.freed.notify_one();
    }
}
