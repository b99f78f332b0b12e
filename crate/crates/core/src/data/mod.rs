//! Trajectories, return-to-go bookkeeping, the replay buffer and its
//! segment sampler, and state normalization.

pub mod buffer;
pub mod normalize;
pub mod segment;
pub mod trajectory;

pub use buffer::{Eviction, ReplayBuffer};
pub use normalize::StateNormalizer;
pub use segment::Segment;
pub use trajectory::{compute_rtg, Trajectory};
