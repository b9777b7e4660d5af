//! Cache hierarchy simulator with secure L1 designs and the attacks used to
//! evaluate them.
//!
//! The L1 is one of three models: a set-associative LRU baseline, a fully
//! associative randomly replaced cache (STAR-FARR) and a dynamically
//! remapped cache with `k` extra index bits (STAR-NEWS). The STAR designs
//! deny cross-domain hits, keep speculative fills apart, and undo squashed
//! fills with one-way SFill-Inv requests. A shared inclusive L2 and a flat
//! backing memory sit underneath.

pub mod addr;
pub mod attacks;
pub mod engine;
pub mod hierarchy;
pub mod memory;
pub mod model;
pub mod mshr;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod trace;

pub use addr::{decompose, Address, AddressLayout, CacheGeometry, DomainId};
pub use attacks::{AttackConfig, AttackError, AttackKind, ObservationMatrix};
pub use engine::{EngineError, SpecEngine};
pub use hierarchy::{ConfigError, Hierarchy, HierarchyConfig, Latencies, MemoryResponse};
pub use memory::FlatMemory;
pub use model::{CacheModel, MemoryRequest, ModelKind, Mutation, SfillInvAction, SfillInvRequest};
pub use rng::SimRng;
pub use trace::{ReplayConfig, ReplayStats, TraceEvent};
