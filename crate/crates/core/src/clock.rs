//! Injectable time source. Engine code never reads the wall clock itself.

use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Manually driven clock for simulations and tests.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<DateTime<Utc>>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self { now: Mutex::new(start) }
    }

    pub fn set(&self, at: DateTime<Utc>) {
        let mut now = self.now.lock().unwrap();
        // never runs backwards
        if at > *now {
            *now = at;
        }
    }

    pub fn advance(&self, by: Duration) -> DateTime<Utc> {
        let mut now = self.now.lock().unwrap();
        *now += by;
        *now
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }
}

/// Virtual time that runs `rate` times faster than the wall clock, starting
/// from `origin`. Used by `run --sim` so a day-long stage timeout can be
/// observed in minutes.
#[derive(Debug)]
pub struct ScaledClock {
    origin: DateTime<Utc>,
    started: std::time::Instant,
    rate: f64,
}

impl ScaledClock {
    pub fn new(origin: DateTime<Utc>, rate: f64) -> Self {
        Self { origin, started: std::time::Instant::now(), rate: rate.max(0.0) }
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> DateTime<Utc> {
        let elapsed = self.started.elapsed().as_secs_f64() * self.rate;
        self.origin + Duration::milliseconds((elapsed * 1_000.0) as i64)
    }
}
