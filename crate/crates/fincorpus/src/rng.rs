//! Deterministic pseudo-random numbers for reproducible shuffles.
//!
//! Dataset splits must reproduce bit for bit across machines, releases and
//! even reimplementations in other languages, so the generator is part of
//! the contract rather than a swappable dependency. A user seed is expanded
//! through one splitmix64 step into the state of an xorshift64* stream;
//! bounded draws reduce modulo the bound (the modulo bias is negligible at
//! corpus sizes and keeps the recipe trivial to port); shuffles are
//! Fisher-Yates from the top with `j = next_u64() % (i + 1)`.

const SPLITMIX_INC: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_INC);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* stream seeded via splitmix64.
#[derive(Debug, Clone)]
pub struct PinnedRng {
    state: u64,
}

impl PinnedRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = splitmix64(&mut sm);
        // xorshift state must be nonzero; splitmix maps exactly one seed to 0.
        if state == 0 {
            state = SPLITMIX_INC;
        }
        PinnedRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Draw from `0..bound`. `bound` must be nonzero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be nonzero");
        self.next_u64() % bound
    }
}

/// In-place Fisher-Yates shuffle with a fresh stream for `seed`.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = PinnedRng::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
