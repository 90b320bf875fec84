//! Edge-coverage bitmaps.
//!
//! A [`CoverageMap`] holds one bucketed hit count per edge id. Raw 8-bit
//! counters produced by an execution are folded into the power-of-two bucket
//! classes with [`classify_counts`]; after that every nonzero entry is one of
//! `1, 2, 4, 8, 16, 32, 64, 128`.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::target::{ExecOutcome, TargetError, TargetHandle};

/// Default number of edge slots, matching the classic 64 KiB bitmap.
pub const DEFAULT_MAP_SIZE: usize = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("coverage map length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Bucket lookup for raw counts `0..=255`.
const BUCKETS: [u8; 256] = build_bucket_table();

const fn build_bucket_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut c = 0usize;
    while c < 256 {
        table[c] = match c {
            0 => 0,
            1 => 1,
            2 => 2,
            3 => 4,
            4..=7 => 8,
            8..=15 => 16,
            16..=31 => 32,
            32..=127 => 64,
            _ => 128,
        };
        c += 1;
    }
    table
}

/// Bucket class of a single raw counter.
#[inline]
pub fn bucket_of(raw: u8) -> u8 {
    BUCKETS[raw as usize]
}

/// Outcome of comparing an execution's coverage to an accumulated map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NoveltyResult {
    NoNovelty,
    /// A larger bucket appeared on an edge that was already hit.
    NewBucket,
    /// At least one edge went from zero to nonzero.
    NewEdge,
}

impl NoveltyResult {
    pub fn is_interesting(self) -> bool {
        self != NoveltyResult::NoNovelty
    }
}

/// Fixed-size array of classified edge buckets.
///
/// Maps written through [`CoverageMap::bump`] also keep the list of entries
/// that may be nonzero, so clearing and comparing them costs time in the
/// number of hit edges rather than the map size.
#[derive(Clone)]
pub struct CoverageMap {
    buckets: Vec<u8>,
    /// Indices of every possibly-nonzero entry; `None` when unknown.
    touched: Option<Vec<u32>>,
}

impl PartialEq for CoverageMap {
    fn eq(&self, other: &Self) -> bool {
        self.buckets == other.buckets
    }
}

impl Eq for CoverageMap {}

impl std::hash::Hash for CoverageMap {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.buckets.hash(state);
    }
}

impl fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoverageMap")
            .field("len", &self.buckets.len())
            .field("edges", &self.count_edges())
            .finish()
    }
}

impl CoverageMap {
    /// An all-zero map with `len` edge slots.
    pub fn new(len: usize) -> Self {
        CoverageMap {
            buckets: vec![0; len],
            touched: Some(Vec::new()),
        }
    }

    /// Wraps already-classified bucket values, e.g. a metrics dump. Returns
    /// `None` if any entry is not a bucket class.
    pub fn from_buckets(buckets: Vec<u8>) -> Option<Self> {
        buckets
            .iter()
            .all(|&b| b == 0 || b.is_power_of_two())
            .then_some(CoverageMap { buckets, touched: None })
    }

    pub(crate) fn as_mut_bytes(&mut self) -> &mut [u8] {
        self.touched = None;
        &mut self.buckets
    }

    /// Adds one raw hit to `edge`. Call [`CoverageMap::classify`] before use.
    #[inline]
    pub(crate) fn bump(&mut self, edge: usize) {
        let b = &mut self.buckets[edge];
        if *b == 0 {
            if let Some(t) = &mut self.touched {
                t.push(edge as u32);
            }
        }
        *b = b.saturating_add(1);
    }

    /// Sets the raw count of `edge`.
    #[inline]
    pub(crate) fn set_raw(&mut self, edge: usize, count: u8) {
        if self.buckets[edge] == 0 && count != 0 {
            if let Some(t) = &mut self.touched {
                t.push(edge as u32);
            }
        }
        self.buckets[edge] = count;
    }

    /// Folds raw counts written with `bump`/`set_raw` into bucket classes.
    pub(crate) fn classify(&mut self) {
        match &self.touched {
            Some(t) => {
                for &e in t {
                    let b = &mut self.buckets[e as usize];
                    *b = BUCKETS[*b as usize];
                }
            }
            None => classify_in_place(&mut self.buckets),
        }
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buckets
    }

    pub fn get(&self, edge: usize) -> u8 {
        self.buckets[edge]
    }

    pub fn clear(&mut self) {
        match &mut self.touched {
            Some(t) => {
                for &e in t.iter() {
                    self.buckets[e as usize] = 0;
                }
                t.clear();
            }
            None => {
                self.buckets.iter_mut().for_each(|b| *b = 0);
                self.touched = Some(Vec::new());
            }
        }
    }

    /// Number of nonzero entries. This is a seed's `bitmap_size`.
    pub fn count_edges(&self) -> usize {
        let (head, tail) = split_words(&self.buckets);
        let words = head
            .chunks_exact(8)
            .map(word)
            .filter(|&w| w != 0)
            .map(|w| {
                // count nonzero bytes in the word
                let mut n = 0;
                for i in 0..8 {
                    if (w >> (i * 8)) & 0xff != 0 {
                        n += 1;
                    }
                }
                n
            })
            .sum::<usize>();
        words + tail.iter().filter(|&&b| b != 0).count()
    }

    /// Indices of all nonzero entries, ascending.
    pub fn edges(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let (head, tail) = split_words(&self.buckets);
        for (wi, chunk) in head.chunks_exact(8).enumerate() {
            if word(chunk) == 0 {
                continue;
            }
            for (bi, &b) in chunk.iter().enumerate() {
                if b != 0 {
                    out.push((wi * 8 + bi) as u32);
                }
            }
        }
        let base = head.len();
        for (i, &b) in tail.iter().enumerate() {
            if b != 0 {
                out.push((base + i) as u32);
            }
        }
        out
    }

    /// Novelty of `self` (a single execution) against `global`, without
    /// modifying either map.
    pub fn novelty_against(&self, global: &CoverageMap) -> Result<NoveltyResult, CoverageError> {
        check_len(global.len(), self.len())?;
        let mut result = NoveltyResult::NoNovelty;
        if let Some(t) = &self.touched {
            for &e in t {
                let (lb, gb) = (self.buckets[e as usize], global.buckets[e as usize]);
                if lb > gb {
                    if gb == 0 {
                        return Ok(NoveltyResult::NewEdge);
                    }
                    result = NoveltyResult::NewBucket;
                }
            }
            return Ok(result);
        }
        let (lh, lt) = split_words(&self.buckets);
        let (gh, gt) = split_words(&global.buckets);
        for (lc, gc) in lh.chunks_exact(8).zip(gh.chunks_exact(8)) {
            let l = word(lc);
            if l == 0 || l & !word(gc) == 0 {
                continue;
            }
            for (&lb, &gb) in lc.iter().zip(gc) {
                if lb > gb {
                    if gb == 0 {
                        return Ok(NoveltyResult::NewEdge);
                    }
                    result = NoveltyResult::NewBucket;
                }
            }
        }
        for (&lb, &gb) in lt.iter().zip(gt) {
            if lb > gb {
                if gb == 0 {
                    return Ok(NoveltyResult::NewEdge);
                }
                result = NoveltyResult::NewBucket;
            }
        }
        Ok(result)
    }

    /// Elementwise bucket union (max).
    pub fn merge_from(&mut self, other: &CoverageMap) -> Result<(), CoverageError> {
        check_len(self.len(), other.len())?;
        if let Some(t) = &other.touched {
            for &e in t {
                let l = other.buckets[e as usize];
                if l > self.buckets[e as usize] {
                    self.set_raw(e as usize, l);
                }
            }
            return Ok(());
        }
        for (i, (g, &l)) in self.buckets.iter_mut().zip(&other.buckets).enumerate() {
            if l > *g {
                if *g == 0 {
                    if let Some(t) = &mut self.touched {
                        t.push(i as u32);
                    }
                }
                *g = l;
            }
        }
        Ok(())
    }

    /// SHA-256 of the bucket bytes. Two maps with the same digest are treated
    /// as identical coverage.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(&self.buckets).into()
    }
}

#[inline]
fn word(chunk: &[u8]) -> u64 {
    u64::from_ne_bytes(chunk.try_into().expect("8-byte chunk"))
}

#[inline]
fn split_words(bytes: &[u8]) -> (&[u8], &[u8]) {
    bytes.split_at(bytes.len() & !7)
}

fn check_len(expected: usize, actual: usize) -> Result<(), CoverageError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CoverageError::LengthMismatch { expected, actual })
    }
}

/// Folds raw hit counters into bucket classes.
pub fn classify_counts(raw: &[u8], map_size: usize) -> Result<CoverageMap, CoverageError> {
    check_len(map_size, raw.len())?;
    let mut buckets = raw.to_vec();
    classify_in_place(&mut buckets);
    Ok(CoverageMap { buckets, touched: None })
}

/// Classifies `raw` in place, skipping all-zero words.
pub fn classify_in_place(raw: &mut [u8]) {
    let split = raw.len() & !7;
    let (head, tail) = raw.split_at_mut(split);
    for chunk in head.chunks_exact_mut(8) {
        if word(chunk) == 0 {
            continue;
        }
        for b in chunk {
            *b = BUCKETS[*b as usize];
        }
    }
    for b in tail {
        *b = BUCKETS[*b as usize];
    }
}

/// Compares `local` against `global`, then folds `local` into `global`.
pub fn merge_and_detect(
    global: &mut CoverageMap,
    local: &CoverageMap,
) -> Result<NoveltyResult, CoverageError> {
    let novelty = local.novelty_against(global)?;
    if novelty.is_interesting() {
        global.merge_from(local)?;
    }
    Ok(novelty)
}

pub fn count_edges(map: &CoverageMap) -> usize {
    map.count_edges()
}

/// Coverage recomputed by dry-running a seed.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub outcome: ExecOutcome,
    pub coverage: CoverageMap,
    pub exec_time_us: u64,
}

/// Re-executes `content` once on `target` to recover its coverage. A crash or
/// hang is reported in the outcome together with whatever coverage was
/// observed; only infrastructure failures are errors.
pub fn reconstruct(content: &[u8], target: &TargetHandle) -> Result<Reconstruction, TargetError> {
    let res = target.execute(content)?;
    Ok(Reconstruction {
        outcome: res.outcome,
        coverage: res.coverage,
        exec_time_us: res.exec_time_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_with(len: usize, entries: &[(usize, u8)]) -> CoverageMap {
        let mut raw = vec![0u8; len];
        for &(i, v) in entries {
            raw[i] = v;
        }
        classify_counts(&raw, len).unwrap()
    }

    #[test]
    fn bucket_table_matches_convention() {
        let expect = |c: u8| -> u8 {
            match c {
                0 => 0,
                1 => 1,
                2 => 2,
                3 => 4,
                4..=7 => 8,
                8..=15 => 16,
                16..=31 => 32,
                32..=127 => 64,
                _ => 128,
            }
        };
        for c in 0..=255u8 {
            assert_eq!(bucket_of(c), expect(c), "raw {c}");
        }
    }

    #[test]
    fn classify_examples() {
        let zero = classify_counts(&[0u8; 64], 64).unwrap();
        assert_eq!(zero.count_edges(), 0);

        let m = map_with(64, &[(7, 3)]);
        assert_eq!(m.get(7), 4);
        let m = map_with(64, &[(0, 200)]);
        assert_eq!(m.get(0), 128);
    }

    #[test]
    fn classify_rejects_wrong_length() {
        assert_eq!(
            classify_counts(&[0u8; 10], 64).unwrap_err(),
            CoverageError::LengthMismatch {
                expected: 64,
                actual: 10
            }
        );
    }

    #[test]
    fn merge_and_detect_examples() {
        let mut global = CoverageMap::new(64);
        let local = map_with(64, &[(3, 1)]);
        assert_eq!(merge_and_detect(&mut global, &local).unwrap(), NoveltyResult::NewEdge);
        assert_eq!(global.get(3), 1);

        assert_eq!(merge_and_detect(&mut global, &local).unwrap(), NoveltyResult::NoNovelty);

        let bigger = map_with(64, &[(3, 5)]);
        assert_eq!(bigger.get(3), 8);
        assert_eq!(merge_and_detect(&mut global, &bigger).unwrap(), NoveltyResult::NewBucket);
        assert_eq!(global.get(3), 8);
    }

    #[test]
    fn count_edges_examples() {
        assert_eq!(CoverageMap::new(100).count_edges(), 0);
        let m = map_with(100, &[(1, 1), (5, 9), (9, 255)]);
        assert_eq!(count_edges(&m), 3);
        assert_eq!(m.edges(), vec![1, 5, 9]);
    }

    #[test]
    fn odd_lengths_use_tail_path() {
        let m = map_with(13, &[(12, 2), (0, 1)]);
        assert_eq!(m.edges(), vec![0, 12]);
        let mut g = CoverageMap::new(13);
        assert_eq!(merge_and_detect(&mut g, &m).unwrap(), NoveltyResult::NewEdge);
        assert_eq!(g, m);
    }

    fn brute_novelty(global: &[u8], local: &[u8]) -> NoveltyResult {
        let mut r = NoveltyResult::NoNovelty;
        for (&g, &l) in global.iter().zip(local) {
            if g == 0 && l != 0 {
                return NoveltyResult::NewEdge;
            }
            if l > g {
                r = NoveltyResult::NewBucket;
            }
        }
        r
    }

    fn raw_map() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(prop_oneof![4 => Just(0u8), 1 => any::<u8>()], 37)
    }

    proptest! {
        #[test]
        fn classified_entries_are_buckets(raw in raw_map()) {
            let m = classify_counts(&raw, raw.len()).unwrap();
            prop_assert_eq!(m.len(), raw.len());
            for &b in m.as_bytes() {
                prop_assert!(b == 0 || b.is_power_of_two());
            }
        }

        #[test]
        fn novelty_matches_brute_force(g in raw_map(), l in raw_map()) {
            let mut global = classify_counts(&g, g.len()).unwrap();
            let local = classify_counts(&l, l.len()).unwrap();
            let before = global.clone();
            let expected = brute_novelty(before.as_bytes(), local.as_bytes());
            let got = merge_and_detect(&mut global, &local).unwrap();
            prop_assert_eq!(got, expected);
            // monotone union
            for i in 0..global.len() {
                prop_assert!(global.get(i) >= before.get(i));
                prop_assert_eq!(global.get(i), before.get(i).max(local.get(i)));
            }
            // NoNovelty iff the elementwise max leaves the map unchanged
            prop_assert_eq!(got == NoveltyResult::NoNovelty, global == before);
        }

        #[test]
        fn sparse_writes_match_dense(g in raw_map(), hits in proptest::collection::vec((0usize..37, 1u8..4), 0..12)) {
            // same hits written through bump and through raw bytes
            let mut sparse = CoverageMap::new(37);
            let mut raw = vec![0u8; 37];
            sparse.bump(5);
            sparse.clear();
            for &(e, n) in &hits {
                for _ in 0..n {
                    sparse.bump(e);
                }
                raw[e] = raw[e].saturating_add(n);
            }
            sparse.classify();
            let dense = classify_counts(&raw, 37).unwrap();
            prop_assert_eq!(&sparse, &dense);
            let global = classify_counts(&g, 37).unwrap();
            prop_assert_eq!(sparse.novelty_against(&global).unwrap(), dense.novelty_against(&global).unwrap());
            let mut a = global.clone();
            let mut b = global.clone();
            a.merge_from(&sparse).unwrap();
            b.merge_from(&dense).unwrap();
            prop_assert_eq!(&a, &b);
            let mut fresh = CoverageMap::new(37);
            fresh.merge_from(&dense).unwrap();
            fresh.clear();
            prop_assert_eq!(fresh.count_edges(), 0);
        }
    }
}
