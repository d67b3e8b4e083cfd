//! Causally consistent caching across a cluster of cache servers.

pub mod cache;
pub mod checker;
pub mod client;
pub mod clock;
pub mod error;
pub mod server;
pub mod sim;
pub mod store;
pub mod tcc;
pub mod trace;
pub mod version;
pub mod workload;

pub use cache::{CCache, ClosureRule, ICache, TccCCache};
pub use clock::{Causality, VectorClock};
pub use error::{ClockError, ResolveError, ServerError, SessionError, SimError, StoreError, TraceError, UnsatisfiedDependency};
pub use version::{resolve, resolve_all, Deps, Key, Value, Version, VersionedValue};
