//! The channel between replication agents and the mediator. A faulty
//! mailbox reorders and duplicates messages and loses acknowledgements,
//! driven by a seeded generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultRates {
    /// Probability that a batch is shuffled.
    pub reorder: f64,
    /// Probability that a message is delivered twice.
    pub duplicate: f64,
    /// Probability that an acknowledgement is lost.
    pub lose_ack: f64,
}

impl FaultRates {
    pub const NONE: FaultRates = FaultRates { reorder: 0.0, duplicate: 0.0, lose_ack: 0.0 };
}

#[derive(Debug, Clone)]
pub struct Mailbox {
    rng: ChaCha8Rng,
    rates: FaultRates,
}

impl Default for Mailbox {
    fn default() -> Self {
        Self::reliable()
    }
}

impl Mailbox {
    pub fn reliable() -> Self {
        Self::faulty(0, FaultRates::NONE)
    }

    pub fn faulty(seed: u64, rates: FaultRates) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), rates }
    }

    pub fn rates(&self) -> FaultRates {
        self.rates
    }

    /// What arrives at the other end for a batch sent in order.
    pub fn transmit(&mut self, batch: Vec<String>) -> Vec<String> {
        let mut out = Vec::with_capacity(batch.len());
        for m in batch {
            if self.rates.duplicate > 0.0 && self.rng.gen_bool(self.rates.duplicate) {
                out.push(m.clone());
            }
            out.push(m);
        }
        if self.rates.reorder > 0.0 && self.rng.gen_bool(self.rates.reorder) {
            out.shuffle(&mut self.rng);
        }
        out
    }

    /// Whether an acknowledgement gets through.
    pub fn deliver_ack(&mut self) -> bool {
        !(self.rates.lose_ack > 0.0 && self.rng.gen_bool(self.rates.lose_ack))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reliable_is_identity() {
        let mut m = Mailbox::reliable();
        let batch: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        assert_eq!(m.transmit(batch.clone()), batch);
        assert!(m.deliver_ack());
    }

    #[test]
    fn faulty_keeps_every_message() {
        let mut m = Mailbox::faulty(7, FaultRates { reorder: 1.0, duplicate: 0.5, lose_ack: 0.5 });
        let batch: Vec<String> = (0..50).map(|i| i.to_string()).collect();
        let mut got = m.transmit(batch.clone());
        assert!(got.len() > batch.len());
        got.sort();
        got.dedup();
        let mut want = batch;
        want.sort();
        assert_eq!(got, want);
    }
}
