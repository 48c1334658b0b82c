//! Deterministic discrete-event simulation of the sensor/actor network.
//!
//! Time is integer ticks. All randomness comes from ChaCha streams keyed by
//! `(seed, node index)`, so a topology change never perturbs unrelated draws.

mod network;
mod queue;
mod topology;

pub use network::{
    Delay, Delivery, LinkModel, MessageId, MessageRecord, NetError, Network, SendOutcome,
};
pub use queue::{EventQueue, Simulator};
pub use topology::{Topology, TopologyError, TopologyKind, TopologyParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream of one node under a global seed.
pub fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}
