use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use metaod_core::clock::{Clock, SystemClock};
use metaod_core::{DetectError, DetectionSet, Detector, ImageBuffer, Probe};

use crate::cache::{cache_key, ResponseCache};
use crate::endpoint::{DetectorEndpoint, EndpointKind, QueryStats};
use crate::limits::{BackoffPolicy, InFlight, RateLimiter, Sleeper, ThreadSleeper};
use crate::mock::{mock_detector, MockDetector, MockScenario};
use crate::protocol::parse_response;
use crate::transport::{HttpTransport, MockTransport, Reply, SubprocessTransport, Transport};

/// Retries after a transport failure before giving up.
const TRANSPORT_RETRIES: u32 = 2;

/// Cached, rate-limited, accounted access to one endpoint.
pub struct Gateway {
    endpoint: DetectorEndpoint,
    transport: Box<dyn Transport>,
    cache: ResponseCache,
    limiter: RateLimiter,
    in_flight: InFlight,
    backoff: BackoffPolicy,
    sleeper: Arc<dyn Sleeper>,
    clock: Arc<dyn Clock>,
    latency_clock: Arc<dyn Clock>,
    stats: Mutex<QueryStats>,
}

impl Gateway {
    /// Builds the transport for `endpoint.kind`; the cache stays in memory
    /// unless `cache_root` is given.
    pub fn connect(endpoint: DetectorEndpoint, cache_root: Option<&Path>) -> Result<Self, DetectError> {
        endpoint.validate().map_err(|e| DetectError::Transport(e.to_string()))?;
        let timeout = Duration::from_millis(endpoint.timeout);
        let transport: Box<dyn Transport> = match endpoint.kind {
            EndpointKind::Http => Box::new(HttpTransport::new(&endpoint.address, endpoint.resolved_auth(), timeout)),
            EndpointKind::Subprocess => Box::new(SubprocessTransport::new(&endpoint.address, timeout)?),
            EndpointKind::Mock => Box::new(MockTransport(mock_detector(MockScenario::load(&endpoint.address)?))),
        };
        Ok(Self::with_transport(endpoint, transport, cache_root))
    }

    /// A gateway in front of an in-process mock.
    pub fn mock(endpoint: DetectorEndpoint, detector: MockDetector, cache_root: Option<&Path>) -> Self {
        Self::with_transport(endpoint, Box::new(MockTransport(detector)), cache_root)
    }

    pub fn with_transport(endpoint: DetectorEndpoint, transport: Box<dyn Transport>, cache_root: Option<&Path>) -> Self {
        let cache = match cache_root {
            Some(root) => ResponseCache::on_disk(root.join(endpoint.cache_dir_name())),
            None => ResponseCache::in_memory(),
        };
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let sleeper: Arc<dyn Sleeper> = Arc::new(ThreadSleeper);
        Self {
            limiter: RateLimiter::new(endpoint.qps_limit, clock.clone(), sleeper.clone()),
            in_flight: InFlight::new(endpoint.max_in_flight),
            transport,
            cache,
            backoff: BackoffPolicy::default(),
            sleeper,
            latency_clock: clock.clone(),
            clock,
            stats: Mutex::new(QueryStats::default()),
            endpoint,
        }
    }

    /// Replaces the time source and sleeper used for pacing and backoff.
    pub fn with_timing(mut self, clock: Arc<dyn Clock>, sleeper: Arc<dyn Sleeper>) -> Self {
        self.limiter = RateLimiter::new(self.endpoint.qps_limit, clock.clone(), sleeper.clone());
        self.latency_clock = clock.clone();
        self.clock = clock;
        self.sleeper = sleeper;
        self
    }

    /// Measures request latency with `clock` while pacing keeps its own.
    pub fn with_latency_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.latency_clock = clock;
        self
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &DetectorEndpoint {
        &self.endpoint
    }

    pub fn stats(&self) -> QueryStats {
        let mut s = *self.stats.lock().unwrap();
        s.estimated_cost = s.queries_sent as f64 * self.endpoint.cost_per_query.unwrap_or(0.0);
        s
    }

    /// Highest number of simultaneous requests seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.in_flight.peak()
    }

    fn dispatch(&self, png: &[u8], image: &ImageBuffer, probe: Option<&Probe>) -> Result<Vec<u8>, DetectError> {
        let _slot = self.in_flight.enter();
        let mut throttled = 0;
        let mut failed = 0;
        loop {
            self.limiter.acquire();
            let started = self.latency_clock.now_ms();
            let reply = self.transport.send(png, image, probe);
            self.stats.lock().unwrap().total_latency_ms += self.latency_clock.now_ms().saturating_sub(started);
            match reply {
                Ok(Reply::Body(body)) => return Ok(body),
                Ok(Reply::RateLimited) => {
                    if throttled == self.backoff.max_retries {
                        return Err(DetectError::RateLimited { retries: throttled });
                    }
                    let wait = self.backoff.delay(throttled);
                    log::debug!("{}: rate limited, retrying in {wait:?}", self.endpoint.id);
                    self.sleeper.sleep(wait);
                    throttled += 1;
                }
                Err(e @ DetectError::Transport(_)) if failed < TRANSPORT_RETRIES => {
                    log::debug!("{}: {e}, retrying", self.endpoint.id);
                    self.sleeper.sleep(self.backoff.delay(failed));
                    failed += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl Detector for Gateway {
    fn id(&self) -> &str {
        &self.endpoint.id
    }

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError> {
        let png = image.encode_png().map_err(|e| DetectError::Encode(e.to_string()))?;
        let key = cache_key(&png);
        self.stats.lock().unwrap().lookups += 1;
        if let Some(hit) = self.cache.get(&key) {
            self.stats.lock().unwrap().cache_hits += 1;
            return Ok(hit);
        }
        self.stats.lock().unwrap().queries_sent += 1;
        let body = self.dispatch(&png, image, probe)?;
        let set = parse_response(&body, &key)?;
        if let Err(e) = self.cache.put(&key, &set) {
            log::warn!("{}: cannot persist cache entry {key}: {e}", self.endpoint.id);
        }
        Ok(set)
    }
}
