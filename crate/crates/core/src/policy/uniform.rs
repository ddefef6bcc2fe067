//! Full exploration: every arm with probability `1/K`.

use rand::Rng;

use super::{Policy, Proposal};
use crate::rng::PolicyRng;

pub fn uniform_select<R: Rng + ?Sized>(n_arms: usize, rng: &mut R) -> usize {
    rng.random_range(0..n_arms)
}

#[derive(Debug, Clone)]
pub struct Uniform {
    n_arms: usize,
}

impl Uniform {
    pub fn new(n_arms: usize) -> Self {
        assert!(n_arms >= 1, "at least one arm");
        Uniform { n_arms }
    }
}

impl Policy for Uniform {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn select(&mut self, _t: usize, rng: &mut PolicyRng) -> usize {
        uniform_select(self.n_arms, &mut rng.draw)
    }

    fn propose(&mut self, _t: usize, rng: &mut PolicyRng) -> Proposal {
        Proposal {
            arm: uniform_select(self.n_arms, &mut rng.draw),
            probs: vec![1.0 / self.n_arms as f64; self.n_arms],
        }
    }

    fn observe(&mut self, _t: usize, _arm: usize, _reward: f64) {}
}
