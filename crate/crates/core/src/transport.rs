//! Retry, rate limiting and concurrency limiting shared by the HTTP
//! embedding and LLM backends.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// How an outbound request failure should be handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    /// Rate limiting, server errors, connection problems: retry.
    Transient,
    /// Everything else (bad request, auth): give up immediately.
    Permanent,
}

pub fn classify_status(status: u16) -> FailureClass {
    match status {
        408 | 429 | 500..=599 => FailureClass::Transient,
        _ => FailureClass::Permanent,
    }
}

/// Classifies an HTTP client error.
pub fn classify_ureq(err: &ureq::Error) -> FailureClass {
    match err {
        ureq::Error::StatusCode(s) => classify_status(*s),
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => FailureClass::Transient,
        _ => FailureClass::Permanent,
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Exponential backoff: the wait before retry `n` (0-based) is
/// `base_delay * 2^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(30))
    }

    /// Calls `op` until it succeeds, fails permanently, or attempts run out.
    /// The last error is returned on failure.
    pub fn run<T, E>(
        &self,
        sleeper: &dyn Sleeper,
        classify: impl Fn(&E) -> FailureClass,
        mut op: impl FnMut(u32) -> Result<T, E>,
    ) -> Result<T, E> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    if classify(&e) == FailureClass::Permanent || attempt + 1 >= attempts {
                        return Err(e);
                    }
                    log::debug!("transient failure on attempt {attempt}, backing off");
                    sleeper.sleep(self.delay_for(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Requests-per-minute token bucket. Capacity equals the per-minute rate.
#[derive(Debug)]
pub struct TokenBucket {
    rate_per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(rpm: u32) -> Self {
        Self::per_minute_at(rpm, Instant::now())
    }

    pub fn per_minute_at(rpm: u32, now: Instant) -> Self {
        let capacity = f64::from(rpm.max(1));
        Self {
            rate_per_sec: capacity / 60.0,
            capacity,
            state: Mutex::new((capacity, now)),
        }
    }

    /// Takes one token if available at `now`; otherwise returns how long
    /// until one will be.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let elapsed = now.saturating_duration_since(st.1).as_secs_f64();
        st.0 = (st.0 + elapsed * self.rate_per_sec).min(self.capacity);
        st.1 = st.1.max(now);
        if st.0 >= 1.0 {
            st.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - st.0) / self.rate_per_sec))
        }
    }

    pub fn acquire(&self, sleeper: &dyn Sleeper) {
        while let Err(wait) = self.try_acquire_at(Instant::now()) {
            sleeper.sleep(wait);
        }
    }
}

/// Bounds the number of requests in flight. `in_flight` and
/// `peak_in_flight` are the instrumentation hooks.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    limit: usize,
    state: Mutex<(usize, usize)>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap_or_else(|p| p.into_inner());
        st.0 -= 1;
        self.limiter.cv.notify_one();
    }
}

impl ConcurrencyLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
        while st.0 >= self.limit {
            st = self.cv.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).0
    }

    pub fn peak_in_flight(&self) -> usize {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).1
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}
