use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Users one index server can hold.
pub const SERVER_CAPACITY: u32 = 15_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSlot {
    pub address: String,
    pub load: u32,
    pub capacity: u32,
}

impl ServerSlot {
    pub fn new(address: impl Into<String>, load: u32) -> Self {
        Self {
            address: address.into(),
            load,
            capacity: SERVER_CAPACITY,
        }
    }

    pub fn is_full(&self) -> bool {
        self.load >= self.capacity
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaserverState {
    pub servers: Vec<ServerSlot>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignError {
    #[error("every index server is at capacity")]
    AllFull,
}

impl MetaserverState {
    /// Picks uniformly among open servers whose load is within 10% of the
    /// lightest open server. Returns the server's index.
    pub fn assign_with<R: Rng>(&self, rng: &mut R) -> Result<usize, AssignError> {
        let min = self
            .servers
            .iter()
            .filter(|s| !s.is_full())
            .map(|s| s.load as u64)
            .min()
            .ok_or(AssignError::AllFull)?;
        let tier: Vec<usize> = self
            .servers
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_full() && s.load as u64 * 10 <= min * 11)
            .map(|(i, _)| i)
            .collect();
        Ok(tier[rng.random_range(0..tier.len())])
    }

    /// Seeded form of [`assign_with`](Self::assign_with) that also books
    /// the new user against the chosen server.
    pub fn assign(&mut self, seed: u64) -> Result<&ServerSlot, AssignError> {
        let i = self.assign_with(&mut ChaCha8Rng::seed_from_u64(seed))?;
        self.servers[i].load += 1;
        Ok(&self.servers[i])
    }
}

pub fn metaserver_assign(ms: &MetaserverState, seed: u64) -> Result<&str, AssignError> {
    let i = ms.assign_with(&mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(&ms.servers[i].address)
}
