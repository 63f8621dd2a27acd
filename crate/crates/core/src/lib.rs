//! k-protected federated query execution.
//!
//! A mediator executes composition plans over data services that only
//! exchange order-preserving ciphertexts of subject identifiers. Whenever an
//! identifier flows from one service to the next, the receiving service is
//! invoked with a range holding at least `k` of its own subjects, so it cannot
//! tell which one the mediator is asking about.

pub mod audit;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod mediator;
pub mod opes;
pub mod service;
pub mod store;

pub use error::{Error, Result};
pub use opes::{keygen, EncryptedId, OpesKey, OrderPreservingScheme};
pub use store::{BucketPolicy, CandidateRange, Event, IdRange, TimestampedStore};
