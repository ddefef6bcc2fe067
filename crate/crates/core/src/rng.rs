//! Deterministic random streams.
//!
//! Every stochastic quantity in a simulation is drawn from a stream keyed by
//! a path of integers, e.g. `(master_seed, replication, user, policy)`. Two
//! runs with the same path see the same draws regardless of execution order
//! or which other streams exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed and a key path into one 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &k| {
        splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// A generator seeded from `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stable 64-bit key for a label (FNV-1a), so policy streams depend on the
/// policy's identity rather than its position in a list.
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Stream tags used under one episode seed.
pub(crate) mod tag {
    pub const ENVIRONMENT: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const NOISE: u64 = 10;
    pub const DRAW: u64 = 11;
    pub const AUX: u64 = 12;
    pub const CLIP: u64 = 13;
}

/// The independent streams owned by one policy instance.
///
/// `draw` drives the policy's own action choice, `aux` any extra sampling
/// (Monte Carlo probability estimates), and `clip` the resampling done by a
/// clipping wrapper. Keeping them apart lets a clipped policy with no-op
/// bounds reproduce its unclipped counterpart draw for draw.
#[derive(Debug, Clone)]
pub struct PolicyRng {
    pub draw: SimRng,
    pub aux: SimRng,
    pub clip: SimRng,
}

impl PolicyRng {
    pub fn from_seed(seed: u64) -> Self {
        PolicyRng {
            draw: stream(seed, &[tag::DRAW]),
            aux: stream(seed, &[tag::AUX]),
            clip: stream(seed, &[tag::CLIP]),
        }
    }
}

/// Streams for one `(replication, user, policy)` episode: the policy's own
/// streams plus the reward noise it experiences.
#[derive(Debug, Clone)]
pub struct EpisodeStreams {
    pub policy: PolicyRng,
    pub noise: SimRng,
}

impl EpisodeStreams {
    pub fn new(master: u64, replication: u64, user: u64, policy_key: u64) -> Self {
        let seed = derive_seed(master, &[tag::EPISODE, replication, user, policy_key]);
        EpisodeStreams {
            policy: PolicyRng::from_seed(seed),
            noise: stream(seed, &[tag::NOISE]),
        }
    }
}

/// Stream for drawing one replication's environment; shared by every policy.
pub fn environment_stream(master: u64, replication: u64) -> SimRng {
    stream(master, &[tag::ENVIRONMENT, replication])
}
