//! Trial state space: success and allocation counts per arm.
//!
//! States of stage `t` (the number of allocated participants) are stored
//! contiguously. Within a stage the order is lexicographic in
//! `(n_C, s_C, s_D)`, so for fixed `(n_C, s_C)` the states with varying `s_D`
//! form a contiguous *row* of length `n_D + 1`. The sweeps in [`crate::mdp`]
//! work row by row.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Control,
    Developmental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Failure,
}

/// Successes and allocations per arm at a decision epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TrialState {
    pub s_c: u32,
    pub s_d: u32,
    pub n_c: u32,
    pub n_d: u32,
}

impl TrialState {
    pub const EMPTY: TrialState = TrialState {
        s_c: 0,
        s_d: 0,
        n_c: 0,
        n_d: 0,
    };

    pub fn new(s_c: u32, s_d: u32, n_c: u32, n_d: u32) -> Result<Self> {
        let x = TrialState { s_c, s_d, n_c, n_d };
        if s_c > n_c || s_d > n_d {
            return Err(Error::InvalidState(format!(
                "{x:?}: successes exceed allocations"
            )));
        }
        Ok(x)
    }

    /// Stage `t = n_C + n_D`.
    pub fn stage(&self) -> usize {
        (self.n_c + self.n_d) as usize
    }

    pub fn successes(&self) -> u32 {
        self.s_c + self.s_d
    }

    pub fn successes_of(&self, arm: Arm) -> u32 {
        match arm {
            Arm::Control => self.s_c,
            Arm::Developmental => self.s_d,
        }
    }

    pub fn allocations_of(&self, arm: Arm) -> u32 {
        match arm {
            Arm::Control => self.n_c,
            Arm::Developmental => self.n_d,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.s_c <= self.n_c && self.s_d <= self.n_d
    }

    /// Swaps the roles of the two arms.
    pub fn swapped(&self) -> TrialState {
        TrialState {
            s_c: self.s_d,
            s_d: self.s_c,
            n_c: self.n_d,
            n_d: self.n_c,
        }
    }

    /// The state after one more participant on `arm` with `outcome`.
    /// No horizon check; see [`StateIndexer::successor`].
    pub fn step(&self, arm: Arm, outcome: Outcome) -> TrialState {
        let hit = (outcome == Outcome::Success) as u32;
        let mut x = *self;
        match arm {
            Arm::Control => {
                x.n_c += 1;
                x.s_c += hit;
            }
            Arm::Developmental => {
                x.n_d += 1;
                x.s_d += hit;
            }
        }
        x
    }
}

/// `C(t+3, 3)`: number of states with `t` allocations.
pub fn stage_size(t: usize) -> usize {
    (t + 1) * (t + 2) * (t + 3) / 6
}

/// `C(t+3, 4)`: number of states with fewer than `t` allocations.
pub fn stage_offset(t: usize) -> usize {
    t * (t + 1) * (t + 2) * (t + 3) / 24
}

/// Offset of the `n_C = k` block inside stage `t`.
pub(crate) fn block_offset(t: usize, k: usize) -> usize {
    // sum_{i=1..k} i (t + 2 - i)
    (t + 2) * k * (k + 1) / 2 - k * (k + 1) * (2 * k + 1) / 6
}

/// Index of `(s, m)` in a triangular table over `0 <= s <= m`.
#[inline]
pub(crate) fn tri(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Storage mapping for the states of a horizon-`n` trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateIndexer {
    horizon: usize,
    offsets: Vec<usize>,
}

impl StateIndexer {
    pub fn new(horizon: usize) -> Self {
        let offsets = (0..=horizon + 1).map(stage_offset).collect();
        StateIndexer { horizon, offsets }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stage_size(&self, t: usize) -> Result<usize> {
        self.check_stage(t)?;
        Ok(stage_size(t))
    }

    /// First flat index of stage `t`.
    pub fn stage_start(&self, t: usize) -> usize {
        self.offsets[t]
    }

    /// Number of states in stages `0..n` (`d_{<n}`).
    pub fn nonterminal_len(&self) -> usize {
        self.offsets[self.horizon]
    }

    /// Number of terminal states (`d_n`).
    pub fn terminal_len(&self) -> usize {
        stage_size(self.horizon)
    }

    /// Total number of states (`d_{<=n}`).
    pub fn len(&self) -> usize {
        self.offsets[self.horizon + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_stage(&self, t: usize) -> Result<()> {
        if t > self.horizon {
            return Err(Error::StageOutOfRange {
                stage: t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Flat index of `x`, 0-based, over all stages.
    pub fn index(&self, x: &TrialState) -> Result<usize> {
        if !x.is_valid() {
            return Err(Error::InvalidState(format!("{x:?}")));
        }
        let t = x.stage();
        self.check_stage(t)?;
        Ok(self.offsets[t] + index_in_stage(x))
    }

    /// Inverse of [`StateIndexer::index`].
    pub fn unindex(&self, i: usize) -> Result<TrialState> {
        if i >= self.len() {
            return Err(Error::InvalidState(format!(
                "flat index {i} beyond {}",
                self.len()
            )));
        }
        // offsets is sorted; find the last stage start <= i
        let t = self.offsets.partition_point(|&o| o <= i) - 1;
        Ok(state_in_stage(t, i - self.offsets[t]))
    }

    pub fn successor(&self, x: &TrialState, arm: Arm, outcome: Outcome) -> Result<TrialState> {
        if x.stage() >= self.horizon {
            return Err(Error::StageOutOfRange {
                stage: x.stage() + 1,
                horizon: self.horizon,
            });
        }
        Ok(x.step(arm, outcome))
    }

    /// States of stage `t` in storage order.
    pub fn enumerate(&self, t: usize) -> Result<impl Iterator<Item = TrialState>> {
        self.check_stage(t)?;
        Ok(stage_states(t))
    }
}

/// Position of `x` within its stage block.
pub fn index_in_stage(x: &TrialState) -> usize {
    let t = x.stage();
    let n_d = x.n_d as usize;
    block_offset(t, x.n_c as usize) + x.s_c as usize * (n_d + 1) + x.s_d as usize
}

/// Inverse of [`index_in_stage`] for stage `t`.
pub fn state_in_stage(t: usize, mut j: usize) -> TrialState {
    let mut n_c = 0;
    loop {
        let size = (n_c + 1) * (t - n_c + 1);
        if j < size {
            break;
        }
        j -= size;
        n_c += 1;
    }
    let n_d = t - n_c;
    TrialState {
        s_c: (j / (n_d + 1)) as u32,
        s_d: (j % (n_d + 1)) as u32,
        n_c: n_c as u32,
        n_d: n_d as u32,
    }
}

/// All states of stage `t` in storage order.
pub fn stage_states(t: usize) -> impl Iterator<Item = TrialState> {
    (0..=t).flat_map(move |n_c| {
        let n_d = t - n_c;
        (0..=n_c).flat_map(move |s_c| {
            (0..=n_d).map(move |s_d| TrialState {
                s_c: s_c as u32,
                s_d: s_d as u32,
                n_c: n_c as u32,
                n_d: n_d as u32,
            })
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_sizes() {
        assert_eq!(stage_size(0), 1);
        // (n_C, s_C, s_D): (0,0,0),(0,0,1),(1,0,0),(1,1,0)
        assert_eq!(stage_size(1), 4);
        // n_C=0: 3 states, n_C=1: 4, n_C=2: 3
        assert_eq!(stage_size(2), 10);
        let ix = StateIndexer::new(3);
        assert!(ix.stage_size(4).is_err());
    }

    #[test]
    fn stage_size_matches_closed_sum() {
        for t in 0..30 {
            let sum: usize = (0..=t).map(|k| (k + 1) * (t - k + 1)).sum();
            assert_eq!(stage_size(t), sum);
            assert_eq!(block_offset(t, t + 1), sum);
        }
    }

    #[test]
    fn index_examples() {
        let ix = StateIndexer::new(5);
        assert_eq!(ix.index(&TrialState::EMPTY).unwrap(), 0);
        assert_eq!(ix.index(&TrialState::new(0, 1, 0, 1).unwrap()).unwrap(), 2);
        assert_eq!(ix.index(&TrialState::new(1, 0, 1, 0).unwrap()).unwrap(), 4);
        let bad = TrialState {
            s_c: 2,
            s_d: 0,
            n_c: 1,
            n_d: 0,
        };
        assert!(ix.index(&bad).is_err());
        let late = TrialState {
            s_c: 0,
            s_d: 0,
            n_c: 3,
            n_d: 3,
        };
        assert!(ix.index(&late).is_err());
    }

    #[test]
    fn successor_examples() {
        let ix = StateIndexer::new(6);
        let x = ix
            .successor(&TrialState::EMPTY, Arm::Control, Outcome::Success)
            .unwrap();
        assert_eq!(x, TrialState::new(1, 0, 1, 0).unwrap());
        let y = ix
            .successor(&x, Arm::Developmental, Outcome::Failure)
            .unwrap();
        assert_eq!(y, TrialState::new(1, 0, 1, 1).unwrap());
        let z = TrialState::new(0, 2, 0, 2).unwrap();
        assert_eq!(
            ix.successor(&z, Arm::Developmental, Outcome::Success)
                .unwrap(),
            TrialState::new(0, 3, 0, 3).unwrap()
        );
        let end = TrialState::new(0, 0, 3, 3).unwrap();
        assert!(ix.successor(&end, Arm::Control, Outcome::Success).is_err());
    }

    #[test]
    fn enumerate_counts_and_bijection() {
        for n in 0..=10 {
            let ix = StateIndexer::new(n);
            let mut next = 0;
            for t in 0..=n {
                let states: Vec<_> = ix.enumerate(t).unwrap().collect();
                assert_eq!(states.len(), stage_size(t));
                for x in states {
                    assert!(x.is_valid());
                    let i = ix.index(&x).unwrap();
                    assert_eq!(i, next);
                    assert_eq!(ix.unindex(i).unwrap(), x);
                    next += 1;
                }
            }
            assert_eq!(next, ix.len());
            assert!(ix.unindex(ix.len()).is_err());
        }
    }

    #[test]
    fn successors_stay_in_space_and_predecessors_are_few() {
        let n = 6;
        let ix = StateIndexer::new(n);
        let mut preds = alloc::vec![0usize; ix.len()];
        for t in 0..n {
            for x in ix.enumerate(t).unwrap() {
                for arm in [Arm::Control, Arm::Developmental] {
                    for o in [Outcome::Success, Outcome::Failure] {
                        let y = ix.successor(&x, arm, o).unwrap();
                        assert_eq!(y.stage(), t + 1);
                        preds[ix.index(&y).unwrap()] += 1;
                    }
                }
            }
        }
        for (i, &c) in preds.iter().enumerate().skip(1) {
            assert!((1..=4).contains(&c), "state {i} has {c} predecessors");
        }
    }
}
