//! Counter-based random numbers.
//!
//! Every draw in the simulator is a pure function of
//! `(seed, stream id, agent index, period, draw index)`, evaluated with the
//! Philox4x32-10 block function. Nothing is carried between draws, so the
//! sequence an agent sees does not depend on how agents are split across
//! worker threads.
//!
//! Layout of the 128-bit counter: word 0 = agent index, word 1 = period,
//! word 2 = block index within the stream, word 3 = stream id. The 64-bit
//! seed is the Philox key. Distinct inputs therefore map to distinct
//! (key, counter) pairs.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Reserved stream ids. Each consumer of randomness owns one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum StreamId {
    Signal = 0,
    Mortality = 1,
    Prior = 2,
    InitialBelief = 3,
    Ensemble = 4,
    EnsembleInit = 5,
    Kesten = 6,
    Learner = 7,
    Synthetic = 8,
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

#[inline(always)]
fn seed_key(seed: u64) -> [u32; 2] {
    [seed as u32, (seed >> 32) as u32]
}

#[inline(always)]
fn to_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 32) | lo as u64;
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// First uniform in `[0, 1)` of the stream `(seed, stream, agent, period)`.
///
/// Equal to `derive_stream(..).uniform()` on a fresh stream; used on hot
/// paths where only one draw per agent and period is needed.
#[inline]
pub fn uniform_at(seed: u64, stream: StreamId, agent: u32, period: u32) -> f64 {
    let out = philox4x32_10([agent, period, 0, stream as u32], seed_key(seed));
    to_unit(out[0], out[1])
}

/// Raw 128-bit block for counter `[a, b, 0, stream]`. Used where four
/// 32-bit draws per evaluation are enough.
#[inline(always)]
pub fn block_at(seed: u64, stream: StreamId, a: u32, b: u32) -> [u32; 4] {
    philox4x32_10([a, b, 0, stream as u32], seed_key(seed))
}

/// Maps a 32-bit word to the open interval `(0, 1)`.
#[inline(always)]
pub fn word_to_open_unit(word: u32) -> f64 {
    (word as f64 + 0.5) * (1.0 / 4_294_967_296.0)
}

/// A finite sequence of draws owned by one `(seed, stream, agent, period)`.
#[derive(Debug, Clone)]
pub struct CounterStream {
    key: [u32; 2],
    ctr: [u32; 4],
    buf: [u32; 4],
    used: usize,
}

pub fn derive_stream(seed: u64, stream: StreamId, agent: u32, period: u32) -> CounterStream {
    CounterStream {
        key: seed_key(seed),
        ctr: [agent, period, 0, stream as u32],
        buf: [0; 4],
        used: 4,
    }
}

impl CounterStream {
    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.buf = philox4x32_10(self.ctr, self.key);
            self.ctr[2] = self.ctr[2].wrapping_add(1);
            self.used = 0;
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32();
        let lo = self.next_u32();
        ((hi as u64) << 32) | lo as u64
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Returns 1 with probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> u8 {
        (self.uniform() < p) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 library.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn same_inputs_same_draws() {
        let mut a = derive_stream(42, StreamId::Signal, 7, 99);
        let mut b = derive_stream(42, StreamId::Signal, 7, 99);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_at_matches_first_stream_draw() {
        for agent in 0..50 {
            let mut s = derive_stream(3, StreamId::Mortality, agent, 11);
            assert_eq!(s.uniform(), uniform_at(3, StreamId::Mortality, agent, 11));
        }
    }

    fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    // A single correlation over 10^4 pairs has standard error 0.01, so the
    // check runs over 100 neighbouring period pairs: the pooled estimate must
    // be below 0.01 and the per-pair spread must match independence.
    #[test]
    fn streams_differing_in_period_are_uncorrelated() {
        let n = 10_000;
        let draws = |period: u32| {
            let mut s = derive_stream(5, StreamId::Signal, 0, period);
            (0..n).map(|_| s.uniform()).collect::<Vec<f64>>()
        };
        let rhos: Vec<f64> = (1..=100)
            .map(|t| correlation(&draws(t), &draws(t + 1)))
            .collect();
        let pooled = rhos.iter().sum::<f64>() / rhos.len() as f64;
        let rms = (rhos.iter().map(|r| r * r).sum::<f64>() / rhos.len() as f64).sqrt();
        assert!(pooled.abs() < 0.01, "pooled rho = {pooled}");
        assert!(
            (rms * (n as f64).sqrt() - 1.0).abs() < 0.25,
            "rms rho = {rms}"
        );
        let within = rhos.iter().filter(|r| r.abs() < 0.01).count();
        assert!(within >= 55, "{within} of 100 pairs below 0.01");
    }

    #[test]
    fn uniform_moments() {
        let mut s = derive_stream(1, StreamId::Synthetic, 0, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3e-3);
        assert!((var - 1.0 / 12.0).abs() < 2e-3);
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    }
}
