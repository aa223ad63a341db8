//! Counter-based random draws.
//!
//! Every draw is a pure function of `(seed, stream, a, b)`, so a run replays
//! exactly no matter in which order agents or messages are processed.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a string, for keying draws by service or message ids.
pub fn str_key(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent purposes get independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Subscription = 1,
    Compliance = 2,
    ModeShift = 3,
    Drop = 4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bits(&self, stream: Stream, a: u64, b: u64) -> u64 {
        mix64(mix64(mix64(self.seed ^ mix64(stream as u64)) ^ a) ^ b)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&self, stream: Stream, a: u64, b: u64) -> f64 {
        (self.bits(stream, a, b) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&self, p: f64, stream: Stream, a: u64, b: u64) -> bool {
        self.unit(stream, a, b) < p
    }
}
