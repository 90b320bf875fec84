//! Seed mutation: the deterministic walk and the havoc/splice stage.
//!
//! The deterministic stage enumerates, in this order, for a seed of length
//! `L` (counts saturate at zero for short seeds):
//!
//! | stage      | mutants          |
//! |------------|------------------|
//! | flip 1 bit | `8L`             |
//! | flip 2 bits| `8L - 1`         |
//! | flip 4 bits| `8L - 3`         |
//! | flip 8     | `L`              |
//! | flip 16    | `L - 1`          |
//! | flip 32    | `L - 3`          |
//! | arith 8    | `70 L`  (`+1..=35`, `-1..=35` alternating per delta) |
//! | arith 16   | `140 (L - 1)` (per delta: `+LE`, `-LE`, `+BE`, `-BE`) |
//! | arith 32   | `140 (L - 3)`    |
//! | interesting 8 | `9 L`         |
//! | interesting 16 | `38 (L - 1)` (19 values, LE then BE) |
//! | interesting 32 | `54 (L - 3)` (27 values, LE then BE) |
//!
//! Bits are numbered most-significant first within each byte, so bit 0 of
//! byte 0 is mask `0x80`. Token/dictionary stages are not part of the walk.

use crate::rng::FuzzRng;

pub const DEFAULT_MAX_INPUT_LEN: usize = 1 << 20;
pub const ARITH_MAX: u32 = 35;
pub const HAVOC_STACK_POW2: u64 = 7;
/// A havoc-stage execution splices with probability `1 / SPLICE_ONE_IN` when a
/// partner seed is available.
pub const SPLICE_ONE_IN: u64 = 8;
const HAVOC_BLOCK_MAX: usize = 64;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 19] = [
    -128, -1, 0, 1, 16, 32, 64, 100, 127, -32768, -129, 128, 255, 256, 512, 1000, 1024, 4096,
    32767,
];
pub const INTERESTING_32: [i32; 27] = [
    -128,
    -1,
    0,
    1,
    16,
    32,
    64,
    100,
    127,
    -32768,
    -129,
    128,
    255,
    256,
    512,
    1000,
    1024,
    4096,
    32767,
    -2147483648,
    -100663046,
    -32769,
    32768,
    65535,
    65536,
    100663045,
    2147483647,
];

/// First stage a task runs for its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Deterministic,
    Havoc,
    Splice,
}

/// How one task mutates its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MutationPlan {
    pub stage: Stage,
    pub rng_seed: u64,
    pub energy: u32,
}

impl MutationPlan {
    pub fn new(stage: Stage, rng_seed: u64, energy: u32) -> Self {
        MutationPlan {
            stage,
            rng_seed,
            energy: energy.max(1),
        }
    }

    pub fn rng(&self) -> FuzzRng {
        FuzzRng::new(self.rng_seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DetStage {
    Flip1,
    Flip2,
    Flip4,
    Flip8,
    Flip16,
    Flip32,
    Arith8,
    Arith16,
    Arith32,
    Int8,
    Int16,
    Int32,
}

const DET_STAGES: [DetStage; 12] = [
    DetStage::Flip1,
    DetStage::Flip2,
    DetStage::Flip4,
    DetStage::Flip8,
    DetStage::Flip16,
    DetStage::Flip32,
    DetStage::Arith8,
    DetStage::Arith16,
    DetStage::Arith32,
    DetStage::Int8,
    DetStage::Int16,
    DetStage::Int32,
];

impl DetStage {
    fn count(self, len: usize) -> usize {
        let bits = len * 8;
        match self {
            DetStage::Flip1 => bits,
            DetStage::Flip2 => bits.saturating_sub(1),
            DetStage::Flip4 => bits.saturating_sub(3),
            DetStage::Flip8 => len,
            DetStage::Flip16 => len.saturating_sub(1),
            DetStage::Flip32 => len.saturating_sub(3),
            DetStage::Arith8 => 2 * ARITH_MAX as usize * len,
            DetStage::Arith16 => 4 * ARITH_MAX as usize * len.saturating_sub(1),
            DetStage::Arith32 => 4 * ARITH_MAX as usize * len.saturating_sub(3),
            DetStage::Int8 => INTERESTING_8.len() * len,
            DetStage::Int16 => 2 * INTERESTING_16.len() * len.saturating_sub(1),
            DetStage::Int32 => 2 * INTERESTING_32.len() * len.saturating_sub(3),
        }
    }

    fn apply(self, buf: &mut [u8], i: usize) {
        let arith = ARITH_MAX as usize;
        match self {
            DetStage::Flip1 => flip_bit(buf, i),
            DetStage::Flip2 => (i..i + 2).for_each(|b| flip_bit(buf, b)),
            DetStage::Flip4 => (i..i + 4).for_each(|b| flip_bit(buf, b)),
            DetStage::Flip8 => buf[i] ^= 0xff,
            DetStage::Flip16 => buf[i..i + 2].iter_mut().for_each(|b| *b ^= 0xff),
            DetStage::Flip32 => buf[i..i + 4].iter_mut().for_each(|b| *b ^= 0xff),
            DetStage::Arith8 => {
                let (pos, r) = (i / (2 * arith), i % (2 * arith));
                let delta = (r / 2 + 1) as u8;
                buf[pos] = if r % 2 == 0 {
                    buf[pos].wrapping_add(delta)
                } else {
                    buf[pos].wrapping_sub(delta)
                };
            }
            DetStage::Arith16 => {
                let (pos, r) = (i / (4 * arith), i % (4 * arith));
                let delta = (r / 4 + 1) as u16;
                let big = r % 4 >= 2;
                let sub = r % 2 == 1;
                let v = read_u16(buf, pos, big);
                let v = if sub { v.wrapping_sub(delta) } else { v.wrapping_add(delta) };
                write_u16(buf, pos, v, big);
            }
            DetStage::Arith32 => {
                let (pos, r) = (i / (4 * arith), i % (4 * arith));
                let delta = (r / 4 + 1) as u32;
                let big = r % 4 >= 2;
                let sub = r % 2 == 1;
                let v = read_u32(buf, pos, big);
                let v = if sub { v.wrapping_sub(delta) } else { v.wrapping_add(delta) };
                write_u32(buf, pos, v, big);
            }
            DetStage::Int8 => {
                let n = INTERESTING_8.len();
                buf[i / n] = INTERESTING_8[i % n] as u8;
            }
            DetStage::Int16 => {
                let n = 2 * INTERESTING_16.len();
                let (pos, r) = (i / n, i % n);
                write_u16(buf, pos, INTERESTING_16[r / 2] as u16, r % 2 == 1);
            }
            DetStage::Int32 => {
                let n = 2 * INTERESTING_32.len();
                let (pos, r) = (i / n, i % n);
                write_u32(buf, pos, INTERESTING_32[r / 2] as u32, r % 2 == 1);
            }
        }
    }
}

#[inline]
fn flip_bit(buf: &mut [u8], bit: usize) {
    buf[bit >> 3] ^= 0x80 >> (bit & 7);
}

fn read_u16(buf: &[u8], pos: usize, big: bool) -> u16 {
    let b = [buf[pos], buf[pos + 1]];
    if big {
        u16::from_be_bytes(b)
    } else {
        u16::from_le_bytes(b)
    }
}

fn write_u16(buf: &mut [u8], pos: usize, v: u16, big: bool) {
    let b = if big { v.to_be_bytes() } else { v.to_le_bytes() };
    buf[pos..pos + 2].copy_from_slice(&b);
}

fn read_u32(buf: &[u8], pos: usize, big: bool) -> u32 {
    let b = [buf[pos], buf[pos + 1], buf[pos + 2], buf[pos + 3]];
    if big {
        u32::from_be_bytes(b)
    } else {
        u32::from_le_bytes(b)
    }
}

fn write_u32(buf: &mut [u8], pos: usize, v: u32, big: bool) {
    let b = if big { v.to_be_bytes() } else { v.to_le_bytes() };
    buf[pos..pos + 4].copy_from_slice(&b);
}

/// Total number of deterministic mutants for a seed of length `len`.
pub fn deterministic_count(len: usize) -> usize {
    DET_STAGES.iter().map(|s| s.count(len)).sum()
}

/// Ordered stream of deterministic mutants of one seed.
#[derive(Clone, Debug)]
pub struct DeterministicMutants {
    seed: Vec<u8>,
    stage: usize,
    index: usize,
}

impl Iterator for DeterministicMutants {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        while self.stage < DET_STAGES.len() {
            let stage = DET_STAGES[self.stage];
            if self.index < stage.count(self.seed.len()) {
                let mut out = self.seed.clone();
                stage.apply(&mut out, self.index);
                self.index += 1;
                return Some(out);
            }
            self.stage += 1;
            self.index = 0;
        }
        None
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let len = self.seed.len();
        let remaining = DET_STAGES[self.stage.min(DET_STAGES.len())..]
            .iter()
            .map(|s| s.count(len))
            .sum::<usize>()
            .saturating_sub(self.index);
        (remaining, Some(remaining))
    }
}

impl ExactSizeIterator for DeterministicMutants {}

pub fn deterministic_mutants(seed: &[u8]) -> DeterministicMutants {
    DeterministicMutants {
        seed: seed.to_vec(),
        stage: 0,
        index: 0,
    }
}

fn block_len(rng: &mut FuzzRng, limit: usize) -> usize {
    1 + rng.below_usize(limit.clamp(1, HAVOC_BLOCK_MAX))
}

/// Applies a stack of `1 << below(7)` random operators to a copy of `seed`.
/// The result has length in `[1, min(4 * len, max_len)]`.
pub fn havoc_mutant(seed: &[u8], rng: &mut FuzzRng, max_len: usize) -> Vec<u8> {
    let limit = (4 * seed.len()).min(max_len).max(1);
    let mut buf = seed.to_vec();
    buf.truncate(limit);
    if buf.is_empty() {
        buf.push(0);
    }
    let stack = 1usize << rng.below(HAVOC_STACK_POW2);
    for _ in 0..stack {
        havoc_op(&mut buf, rng, limit);
    }
    buf
}

fn havoc_op(buf: &mut Vec<u8>, rng: &mut FuzzRng, limit: usize) {
    let len = buf.len();
    match rng.below(12) {
        0 => {
            let bit = rng.below_usize(len * 8);
            flip_bit(buf, bit);
        }
        1 => {
            let pos = rng.below_usize(len);
            buf[pos] = INTERESTING_8[rng.below_usize(INTERESTING_8.len())] as u8;
        }
        2 if len >= 2 => {
            let pos = rng.below_usize(len - 1);
            let v = INTERESTING_16[rng.below_usize(INTERESTING_16.len())] as u16;
            let big = rng.one_in(2);
            write_u16(buf, pos, v, big);
        }
        3 if len >= 4 => {
            let pos = rng.below_usize(len - 3);
            let v = INTERESTING_32[rng.below_usize(INTERESTING_32.len())] as u32;
            let big = rng.one_in(2);
            write_u32(buf, pos, v, big);
        }
        4 => {
            let pos = rng.below_usize(len);
            buf[pos] = buf[pos].wrapping_sub(1 + rng.below(ARITH_MAX as u64) as u8);
        }
        5 => {
            let pos = rng.below_usize(len);
            buf[pos] = buf[pos].wrapping_add(1 + rng.below(ARITH_MAX as u64) as u8);
        }
        6 if len >= 2 => {
            let pos = rng.below_usize(len - 1);
            let big = rng.one_in(2);
            let delta = 1 + rng.below(ARITH_MAX as u64) as u16;
            let v = read_u16(buf, pos, big);
            let v = if rng.one_in(2) { v.wrapping_sub(delta) } else { v.wrapping_add(delta) };
            write_u16(buf, pos, v, big);
        }
        7 if len >= 4 => {
            let pos = rng.below_usize(len - 3);
            let big = rng.one_in(2);
            let delta = 1 + rng.below(ARITH_MAX as u64) as u32;
            let v = read_u32(buf, pos, big);
            let v = if rng.one_in(2) { v.wrapping_sub(delta) } else { v.wrapping_add(delta) };
            write_u32(buf, pos, v, big);
        }
        8 => {
            let pos = rng.below_usize(len);
            buf[pos] ^= 1 + rng.below(255) as u8;
        }
        9 if len >= 2 => {
            // delete block
            let del = block_len(rng, len - 1);
            let from = rng.below_usize(len - del + 1);
            buf.drain(from..from + del);
        }
        10 if len < limit => {
            // clone or insert constant block
            let n = block_len(rng, (limit - len).min(len));
            let at = rng.below_usize(len + 1);
            let block: Vec<u8> = if rng.below(4) != 0 {
                let from = rng.below_usize(len - n.min(len) + 1);
                buf[from..from + n.min(len)].to_vec()
            } else {
                let fill = if rng.one_in(2) { rng.below(256) as u8 } else { buf[rng.below_usize(len)] };
                vec![fill; n]
            };
            buf.splice(at..at, block);
        }
        11 if len >= 2 => {
            // overwrite block
            let n = block_len(rng, len - 1);
            let to = rng.below_usize(len - n + 1);
            if rng.below(4) != 0 {
                let from = rng.below_usize(len - n + 1);
                buf.copy_within(from..from + n, to);
            } else {
                let fill = if rng.one_in(2) { rng.below(256) as u8 } else { buf[rng.below_usize(len)] };
                buf[to..to + n].iter_mut().for_each(|b| *b = fill);
            }
        }
        _ => {
            // operator not applicable at this length: fall back to a byte set
            let pos = rng.below_usize(len);
            buf[pos] = rng.below(256) as u8;
        }
    }
}

/// Split point for recombining `a` and `b`: a position between their first
/// and last differing bytes, or `None` when they do not differ in at least
/// two places.
pub fn splice_point(a: &[u8], b: &[u8], rng: &mut FuzzRng) -> Option<usize> {
    let n = a.len().min(b.len());
    let first = (0..n).find(|&i| a[i] != b[i])?;
    let last = (0..n).rev().find(|&i| a[i] != b[i])?;
    if last < 2 || first == last {
        return None;
    }
    Some(first + rng.below_usize(last - first))
}

/// `a[..split] ++ b[split..]`.
pub fn splice_at(a: &[u8], b: &[u8], split: usize) -> Vec<u8> {
    let mut out = a[..split].to_vec();
    out.extend_from_slice(&b[split..]);
    out
}

/// Recombines a prefix of `a` with the suffix of `b` and havocs the result.
/// Degenerates to [`havoc_mutant`] on `a` when no usable split point exists.
pub fn splice(a: &[u8], b: &[u8], rng: &mut FuzzRng, max_len: usize) -> Vec<u8> {
    match splice_point(a, b, rng) {
        Some(split) => {
            let mut mid = splice_at(a, b, split);
            mid.truncate(max_len.max(1));
            havoc_mutant(&mid, rng, max_len)
        }
        None => havoc_mutant(a, rng, max_len),
    }
}

/// One havoc-stage input: a splice with a random partner with probability
/// `1 / SPLICE_ONE_IN` when partners exist, otherwise plain havoc.
pub fn havoc_stage_input<P: AsRef<[u8]>>(
    seed: &[u8],
    partners: &[P],
    rng: &mut FuzzRng,
    max_len: usize,
) -> Vec<u8> {
    if !partners.is_empty() && rng.one_in(SPLICE_ONE_IN) {
        let partner = partners[rng.below_usize(partners.len())].as_ref();
        splice(seed, partner, rng, max_len)
    } else {
        havoc_mutant(seed, rng, max_len)
    }
}
