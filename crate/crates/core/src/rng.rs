//! Counter-based random numbers for reproducible parallel simulation.
//!
//! The generator is Philox4x32-10 (Salmon et al., SC'11). Path `i` of a run
//! with master seed `s` owns the stream with key `(s_lo, s_hi)` and counter
//! `(block_lo, block_hi, i_lo, i_hi)`, so every path's draws are a pure
//! function of `(s, i)` and independent of scheduling.
//!
//! * uniforms: the upper 53 bits of a 64-bit word, scaled by 2⁻⁵³, giving
//!   values in `[0, 1)`;
//! * normals: the ziggurat sampler of `rand_distr` fed by the same stream.

use std::convert::Infallible;

use rand_distr::{Distribution, StandardNormal};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// The random stream owned by one simulated path.
#[derive(Debug, Clone)]
pub struct PathRng {
    key: [u32; 2],
    path: u64,
    block: u64,
    buf: [u32; 4],
    used: usize,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            path,
            block: 0,
            buf: [0; 4],
            used: 4,
        }
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    fn refill(&mut self) {
        let ctr = [
            self.block as u32,
            (self.block >> 32) as u32,
            self.path as u32,
            (self.path >> 32) as u32,
        ];
        self.buf = philox4x32(ctr, self.key);
        self.block += 1;
        self.used = 0;
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let lo = self.next_u32() as u64;
        let hi = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], scale: f64) {
        for z in out {
            *z = scale * self.normal();
        }
    }
}

impl rand_core::TryRng for PathRng {
    type Error = Infallible;

    #[inline]
    fn try_next_u32(&mut self) -> Result<u32, Infallible> {
        Ok(self.next_u32())
    }

    #[inline]
    fn try_next_u64(&mut self) -> Result<u64, Infallible> {
        Ok(self.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> Result<(), Infallible> {
        for chunk in dst.chunks_mut(4) {
            let b = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&b[..chunk.len()]);
        }
        Ok(())
    }
}
