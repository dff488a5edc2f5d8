//! Simulated central agent: gathers every cell's state, forwards it, and
//! counts what crossed the wire. It never modifies a state.

use crate::error::{Error, Result};
use crate::ocd::CellState;

/// Bytes per transmitted scalar.
pub const SCALAR_BYTES: u64 = 8;

/// Anything a cell sends to the central agent once per iteration.
pub trait Payload {
    fn payload_len(&self) -> usize;
}

impl Payload for CellState {
    fn payload_len(&self) -> usize {
        CellState::payload_len(self)
    }
}

/// Gather-then-broadcast accounting: one gather message per cell carrying its
/// payload, then one broadcast message per cell carrying the other cells'
/// payloads.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageBus {
    cells: usize,
    messages: u64,
    bytes: u64,
    rounds: u64,
}

impl MessageBus {
    pub fn new(cells: usize) -> Self {
        Self {
            cells,
            ..Self::default()
        }
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Payload bytes of the gather message from a cell.
    pub fn gather_bytes<T: Payload>(state: &T) -> u64 {
        state.payload_len() as u64 * SCALAR_BYTES
    }

    /// Runs one exchange and returns the snapshot every cell will read next.
    pub fn exchange<T: Payload>(&mut self, states: Vec<T>) -> Result<Vec<T>> {
        if states.len() != self.cells {
            return Err(Error::MissingCell(states.len().min(self.cells)));
        }
        let gathered: Vec<u64> = states.iter().map(Self::gather_bytes).collect();
        let total: u64 = gathered.iter().sum();
        let broadcast: u64 = gathered.iter().map(|own| total - own).sum();
        self.messages += 2 * self.cells as u64;
        self.bytes += total + broadcast;
        self.rounds += 1;
        Ok(states)
    }
}
