//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, domain, stream, position)`, so the
//! values an agent sees never depend on how agents are split across threads.
//! Per-agent draws live in one stream per step: agent `i` owns the fixed
//! word range `[i * AGENT_WORDS, (i + 1) * AGENT_WORDS)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 32-bit words owned by each agent per step: four uniforms.
pub const AGENT_WORDS: u128 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Agent = 1,
    Matching = 2,
    Init = 3,
    Weather = 4,
}

fn key(seed: u64, domain: Domain) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&seed.to_le_bytes());
    k[8] = domain as u8;
    // spread the seed so nearby seeds give unrelated keys
    k[16..24].copy_from_slice(&seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).to_le_bytes());
    k
}

pub fn stream(seed: u64, domain: Domain, id: u64, word: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain));
    rng.set_stream(id);
    rng.set_word_pos(word);
    rng
}

/// The uniforms one agent draws in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentUniforms {
    pub survive: f64,
    pub regen: f64,
    pub role: f64,
    pub tie: f64,
}

/// Positioned at agent `first_agent`; read consecutive agents with [`next_agent`].
pub fn agent_block(seed: u64, step: u64, first_agent: u64) -> ChaCha8Rng {
    stream(seed, Domain::Agent, step, first_agent as u128 * AGENT_WORDS)
}

pub fn next_agent(rng: &mut ChaCha8Rng) -> AgentUniforms {
    // each f64 consumes exactly two words
    AgentUniforms {
        survive: rng.gen(),
        regen: rng.gen(),
        role: rng.gen(),
        tie: rng.gen(),
    }
}

/// Random access to one agent's draws.
pub fn agent(seed: u64, agent_id: u64, step: u64) -> AgentUniforms {
    next_agent(&mut agent_block(seed, step, agent_id))
}

pub fn matching(seed: u64, step: u64) -> ChaCha8Rng {
    stream(seed, Domain::Matching, step, 0)
}

/// Seed for sweep cell `index` derived from a master seed.
pub fn cell_seed(master: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, Domain::Init, u64::MAX - index, 0).next_u64()
}
