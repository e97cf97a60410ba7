//! Black-box access to the detectors under test.
//!
//! Every query goes through a [`Gateway`]: the image is PNG-encoded, looked
//! up in the response cache, and otherwise dispatched over HTTP, to a local
//! subprocess, or to an in-process mock, subject to a rate limit and an
//! in-flight bound. Responses use one canonical JSON format.

pub mod cache;
pub mod endpoint;
pub mod gateway;
pub mod instrumented;
pub mod limits;
pub mod mock;
pub mod protocol;
pub mod transport;

pub use endpoint::{DetectorEndpoint, EndpointKind, QueryStats};
pub use gateway::Gateway;
pub use mock::{mock_detector, Behavior, MockDetector, MockScenario};
