//! Parallel Mersenne-Twister (MT19937) partitioned into (chain, thread) lanes.
//!
//! All lanes share one flat `u32` buffer. Lane `(c, t)` stores its state word
//! `w` at flat index `c*threads*STATE_WORDS + w*threads + t`, i.e. the words
//! of the threads in a chain are interleaved with stride `threads`. Each lane
//! is an independent MT19937 stream whose effective seed is `seed + base`,
//! where `base` is the lane's flat index for word 0.

use thiserror::Error;

/// MT19937 state degree (number of 32-bit words per lane).
pub const STATE_WORDS: usize = 624;

const TWIST_OFFSET: usize = 397;
const MATRIX_A: u32 = 0x9908_b0df;
const UPPER_MASK: u32 = 0x8000_0000;
const LOWER_MASK: u32 = 0x7fff_ffff;
const INIT_MULTIPLIER: u32 = 1_812_433_253;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RngError {
    #[error("chains and threads must both be at least 1 (got {chains}x{threads})")]
    EmptyGeometry { chains: usize, threads: usize },
    #[error("state of {chains} chains x {threads} threads does not fit in memory")]
    StateTooLarge { chains: usize, threads: usize },
    #[error("lane ({chain}, {thread}) out of range for {chains}x{threads} state")]
    LaneOutOfRange {
        chain: usize,
        thread: usize,
        chains: usize,
        threads: usize,
    },
    #[error("generator state has not been initialized; call init(seed) first")]
    Uninitialized,
}

/// Flat multi-lane MT19937 state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    chains: usize,
    threads: usize,
    mt: Vec<u32>,
    mti: Vec<u32>,
    initialized: bool,
}

impl RngState {
    /// Allocates a zeroed state for `chains x threads` lanes.
    pub fn alloc(chains: usize, threads: usize) -> Result<Self, RngError> {
        if chains == 0 || threads == 0 {
            return Err(RngError::EmptyGeometry { chains, threads });
        }
        let words = chains
            .checked_mul(threads)
            .and_then(|lanes| lanes.checked_mul(STATE_WORDS))
            .ok_or(RngError::StateTooLarge { chains, threads })?;
        let mut mt = Vec::new();
        mt.try_reserve_exact(words)
            .map_err(|_| RngError::StateTooLarge { chains, threads })?;
        mt.resize(words, 0);
        let mut mti = Vec::new();
        mti.try_reserve_exact(chains * threads)
            .map_err(|_| RngError::StateTooLarge { chains, threads })?;
        mti.resize(chains * threads, 0);
        Ok(Self {
            chains,
            threads,
            mt,
            mti,
            initialized: false,
        })
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Raw state words, in flat layout order.
    pub fn words(&self) -> &[u32] {
        &self.mt
    }

    /// Flat index of state word `w` of lane `(chain, thread)`.
    pub fn word_index(&self, chain: usize, word: usize, thread: usize) -> usize {
        chain * self.threads * STATE_WORDS + word * self.threads + thread
    }

    fn lane_index(&self, chain: usize, thread: usize) -> Result<usize, RngError> {
        if chain >= self.chains || thread >= self.threads {
            return Err(RngError::LaneOutOfRange {
                chain,
                thread,
                chains: self.chains,
                threads: self.threads,
            });
        }
        Ok(chain * self.threads + thread)
    }

    /// Seeds every lane. Lane `(c, t)` gets the effective seed `seed + base`
    /// (mod 2^32) where `base = c*threads*STATE_WORDS + t`, then fills the
    /// remaining words with the standard MT19937 seeding recurrence at the
    /// lane's stride.
    pub fn init(&mut self, seed: u32) {
        let stride = self.threads;
        for chain in 0..self.chains {
            for thread in 0..self.threads {
                let base = chain * stride * STATE_WORDS + thread;
                self.mt[base] = seed.wrapping_add(base as u32);
                for word in 1..STATE_WORDS {
                    let prev = self.mt[base + (word - 1) * stride];
                    self.mt[base + word * stride] = INIT_MULTIPLIER
                        .wrapping_mul(prev ^ (prev >> 30))
                        .wrapping_add(word as u32);
                }
                self.mti[chain * stride + thread] = STATE_WORDS as u32;
            }
        }
        self.initialized = true;
    }

    /// Draws the next 32-bit output of lane `(chain, thread)`. Only that
    /// lane's state advances.
    pub fn next_u32(&mut self, chain: usize, thread: usize) -> Result<u32, RngError> {
        if !self.initialized {
            return Err(RngError::Uninitialized);
        }
        let lane = self.lane_index(chain, thread)?;
        let base = chain * self.threads * STATE_WORDS + thread;
        Ok(lane_next_u32(
            &mut self.mt,
            &mut self.mti[lane],
            base,
            self.threads,
        ))
    }

    /// Draws a uniform double in `[0, 1)` from lane `(chain, thread)`.
    pub fn next_unit(&mut self, chain: usize, thread: usize) -> Result<f64, RngError> {
        Ok(unit_from_u32(self.next_u32(chain, thread)?))
    }

    /// Copies lane `(chain, thread)` out into a standalone contiguous
    /// generator. The flat state is left untouched; pair with
    /// [`RngState::restore_lane`] to write the advanced lane back.
    pub fn extract_lane(&self, chain: usize, thread: usize) -> Result<LaneRng, RngError> {
        if !self.initialized {
            return Err(RngError::Uninitialized);
        }
        let lane = self.lane_index(chain, thread)?;
        let base = chain * self.threads * STATE_WORDS + thread;
        let mut words = vec![0u32; STATE_WORDS];
        for (w, slot) in words.iter_mut().enumerate() {
            *slot = self.mt[base + w * self.threads];
        }
        Ok(LaneRng {
            words,
            mti: self.mti[lane],
            chain,
            thread,
        })
    }

    /// Writes an extracted lane back into the flat state.
    pub fn restore_lane(&mut self, lane: &LaneRng) -> Result<(), RngError> {
        let idx = self.lane_index(lane.chain, lane.thread)?;
        let base = lane.chain * self.threads * STATE_WORDS + lane.thread;
        for (w, word) in lane.words.iter().enumerate() {
            self.mt[base + w * self.threads] = *word;
        }
        self.mti[idx] = lane.mti;
        Ok(())
    }
}

/// A single lane copied out of an [`RngState`], with contiguous storage.
///
/// Produces exactly the stream the lane would produce in place, so backends
/// can hand each worker its own generator and merge the states back
/// afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneRng {
    words: Vec<u32>,
    mti: u32,
    chain: usize,
    thread: usize,
}

impl LaneRng {
    pub fn chain(&self) -> usize {
        self.chain
    }

    pub fn thread(&self) -> usize {
        self.thread
    }

    pub fn next_u32(&mut self) -> u32 {
        lane_next_u32(&mut self.words, &mut self.mti, 0, 1)
    }

    pub fn next_unit(&mut self) -> f64 {
        unit_from_u32(self.next_u32())
    }
}

/// Maps a raw 32-bit draw onto `[0, 1)` as `x / 2^32`.
pub fn unit_from_u32(raw: u32) -> f64 {
    f64::from(raw) / 4_294_967_296.0
}

/// Advances one lane whose word `w` lives at `words[base + w*stride]`.
///
/// Block twist when the cursor reaches [`STATE_WORDS`], then the canonical
/// tempering transform.
fn lane_next_u32(words: &mut [u32], mti: &mut u32, base: usize, stride: usize) -> u32 {
    let at = |w: usize| base + w * stride;
    if *mti as usize >= STATE_WORDS {
        for w in 0..STATE_WORDS {
            let y = (words[at(w)] & UPPER_MASK) | (words[at((w + 1) % STATE_WORDS)] & LOWER_MASK);
            let mut next = words[at((w + TWIST_OFFSET) % STATE_WORDS)] ^ (y >> 1);
            if y & 1 != 0 {
                next ^= MATRIX_A;
            }
            words[at(w)] = next;
        }
        *mti = 0;
    }
    let mut y = words[at(*mti as usize)];
    *mti += 1;
    y ^= y >> 11;
    y ^= (y << 7) & 0x9d2c_5680;
    y ^= (y << 15) & 0xefc6_0000;
    y ^= y >> 18;
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::ReferenceMt19937;

    #[test]
    fn alloc_sizes_state_per_layout() {
        let state = RngState::alloc(1, 1).unwrap();
        assert_eq!(state.words().len(), STATE_WORDS);
        let state = RngState::alloc(27, 32).unwrap();
        assert_eq!(state.words().len(), 27 * STATE_WORDS * 32);
    }

    #[test]
    fn alloc_rejects_empty_geometry() {
        assert_eq!(
            RngState::alloc(0, 1).unwrap_err(),
            RngError::EmptyGeometry {
                chains: 0,
                threads: 1
            }
        );
        assert!(RngState::alloc(3, 0).is_err());
    }

    #[test]
    fn init_seeds_word_zero_with_seed_plus_base() {
        let mut state = RngState::alloc(1, 1).unwrap();
        state.init(42);
        assert_eq!(state.words()[0], 42);

        let mut state = RngState::alloc(2, 32).unwrap();
        state.init(7);
        let base = 32 * STATE_WORDS + 5;
        assert_eq!(base, 19_973);
        assert_eq!(state.words()[base], 7u32.wrapping_add(base as u32));
    }

    #[test]
    fn single_lane_init_matches_reference_seeding() {
        for seed in [1u32, 42, 5489] {
            let mut state = RngState::alloc(1, 1).unwrap();
            state.init(seed);
            let reference = ReferenceMt19937::new(seed);
            assert_eq!(state.words(), reference.state_words());
        }
    }

    #[test]
    fn first_output_for_default_seed_matches_reference() {
        let mut state = RngState::alloc(1, 1).unwrap();
        state.init(5489);
        assert_eq!(state.next_u32(0, 0).unwrap(), 3_499_211_612);
    }

    #[test]
    fn every_lane_is_a_canonical_stream_at_its_offset_seed() {
        let mut state = RngState::alloc(2, 3).unwrap();
        state.init(1000);
        for (chain, thread) in [(0usize, 1usize), (1, 0), (1, 2)] {
            let base = chain * 3 * STATE_WORDS + thread;
            let mut oracle = ReferenceMt19937::new(1000u32.wrapping_add(base as u32));
            for draw in 0..1000 {
                assert_eq!(
                    state.next_u32(chain, thread).unwrap(),
                    oracle.next_u32(),
                    "lane ({chain},{thread}) draw {draw}"
                );
            }
        }
    }

    #[test]
    fn distinct_lanes_yield_distinct_first_outputs() {
        let mut state = RngState::alloc(2, 2).unwrap();
        state.init(99);
        let a = state.next_u32(0, 0).unwrap();
        let b = state.next_u32(0, 1).unwrap();
        let c = state.next_u32(1, 0).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn lanes_are_independent_under_interleaving() {
        let mut solo = RngState::alloc(3, 2).unwrap();
        solo.init(11);
        let mut interleaved = solo.clone();

        // Lane (1, 1) alone.
        let expected: Vec<u32> = (0..200).map(|_| solo.next_u32(1, 1).unwrap()).collect();

        // Same lane with heavy traffic on every other lane in between.
        let mut got = Vec::new();
        for round in 0..200 {
            for c in 0..3 {
                for t in 0..2 {
                    if (c, t) != (1, 1) {
                        for _ in 0..(round % 3 + 1) {
                            interleaved.next_u32(c, t).unwrap();
                        }
                    }
                }
            }
            got.push(interleaved.next_u32(1, 1).unwrap());
        }
        assert_eq!(expected, got);
    }

    #[test]
    fn draws_require_initialization() {
        let mut state = RngState::alloc(1, 1).unwrap();
        assert_eq!(state.next_u32(0, 0).unwrap_err(), RngError::Uninitialized);
    }

    #[test]
    fn out_of_range_lane_is_an_error() {
        let mut state = RngState::alloc(2, 3).unwrap();
        state.init(0);
        assert!(matches!(
            state.next_u32(2, 0),
            Err(RngError::LaneOutOfRange { .. })
        ));
        assert!(matches!(
            state.next_u32(0, 3),
            Err(RngError::LaneOutOfRange { .. })
        ));
    }

    #[test]
    fn unit_mapping_hits_exact_dyadics() {
        assert_eq!(unit_from_u32(0), 0.0);
        assert_eq!(unit_from_u32(1 << 31), 0.5);
        let top = unit_from_u32(u32::MAX);
        assert!(top < 1.0);
        assert!(top > 0.999_999_999);
    }

    #[test]
    fn extracted_lane_replays_the_in_place_stream() {
        let mut direct = RngState::alloc(2, 3).unwrap();
        direct.init(2024);
        let mut split = direct.clone();

        let lane_direct: Vec<u32> = (0..1500).map(|_| direct.next_u32(1, 2).unwrap()).collect();

        let mut lane = split.extract_lane(1, 2).unwrap();
        let lane_split: Vec<u32> = (0..1500).map(|_| lane.next_u32()).collect();
        split.restore_lane(&lane).unwrap();

        assert_eq!(lane_direct, lane_split);
        assert_eq!(direct, split);
    }

    #[test]
    fn word_index_covers_the_flat_range_bijectively() {
        for (chains, threads) in [(1usize, 1usize), (2, 3), (3, 2)] {
            let state = RngState::alloc(chains, threads).unwrap();
            let total = chains * threads * STATE_WORDS;
            let mut seen = vec![false; total];
            for c in 0..chains {
                for w in 0..STATE_WORDS {
                    for t in 0..threads {
                        let idx = state.word_index(c, w, t);
                        assert!(idx < total);
                        assert!(!seen[idx], "index {idx} hit twice");
                        seen[idx] = true;
                    }
                }
            }
            assert!(seen.into_iter().all(|hit| hit));
        }
    }
}
