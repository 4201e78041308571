//! Paired past/intention memory banks: initialization from frozen encoders,
//! greedy redundancy filtering, and the `MTBK` file format.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binio::{Reader, Writer};
use crate::datasets::{dist, Point, Scene};
use crate::error::{Error, Result};
use crate::features::{FeatureNets, IntentionFeature, PastFeature};

const BANK_MAGIC: &[u8; 4] = b"MTBK";
const BANK_VERSION: u32 = 1;
/// magic, version, four u32 dims, two f64 thresholds, seed, source hash, M.
pub const BANK_HEADER_BYTES: usize = 4 + 4 + 4 * 4 + 2 * 8 + 3 * 8;

/// One stored instance. Both features and the filtering coordinates live
/// in the normalized frame of the originating scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub k: PastFeature,
    pub v: IntentionFeature,
    pub start_pos: Point,
    pub destination: Point,
    pub sample_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankMeta {
    pub d_past: usize,
    pub d_int: usize,
    pub t_p: usize,
    pub t_f: usize,
    /// Thresholds of the last filtering pass (0 for an unfiltered bank).
    pub theta_past: f64,
    pub theta_int: f64,
    /// Visit-order shuffle seed of the last filtering pass.
    pub seed: u64,
    /// Identifies the training data the bank was built from.
    pub source_hash: u64,
}

/// The past bank is `entries[i].k`, the intention bank `entries[i].v`;
/// sharing one list keeps both at the same size and alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBankPair {
    pub entries: Vec<MemoryEntry>,
    pub meta: BankMeta,
}

impl MemoryBankPair {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record_bytes(&self) -> usize {
        (self.meta.d_past + self.meta.d_int + 4) * 8 + 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut w = Writer::default();
        w.bytes(BANK_MAGIC);
        w.u32(BANK_VERSION);
        w.u32(m.d_past as u32);
        w.u32(m.d_int as u32);
        w.u32(m.t_p as u32);
        w.u32(m.t_f as u32);
        w.f64(m.theta_past);
        w.f64(m.theta_int);
        w.u64(m.seed);
        w.u64(m.source_hash);
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            w.f64s(&e.k.0);
            w.f64s(&e.v.0);
            w.f64s(&e.start_pos);
            w.f64s(&e.destination);
            w.u64(e.sample_id);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BANK_MAGIC)?;
        let version = r.u32()?;
        if version != BANK_VERSION {
            return Err(r.fail(format!("unsupported bank format version {version}")));
        }
        let dims_at = r.offset();
        let d_past = r.u32()? as usize;
        let d_int = r.u32()? as usize;
        let t_p = r.u32()? as usize;
        let t_f = r.u32()? as usize;
        if d_past == 0 || d_int == 0 || t_p == 0 || t_f == 0 {
            return Err(Error::Format {
                offset: dims_at,
                msg: format!("zero dimension in header ({d_past}, {d_int}, {t_p}, {t_f})"),
            });
        }
        let theta_past = r.f64()?;
        let theta_int = r.f64()?;
        let seed = r.u64()?;
        let source_hash = r.u64()?;
        let m_at = r.offset();
        let m = r.u64()? as usize;
        let meta = BankMeta {
            d_past,
            d_int,
            t_p,
            t_f,
            theta_past,
            theta_int,
            seed,
            source_hash,
        };
        let record = (d_past + d_int + 4) * 8 + 8;
        if m.checked_mul(record) != Some(r.remaining()) {
            return Err(Error::Format {
                offset: m_at,
                msg: format!(
                    "header declares {m} records of {record} bytes but {} payload bytes follow",
                    r.remaining()
                ),
            });
        }
        let mut entries = Vec::with_capacity(m);
        for _ in 0..m {
            let at = r.offset();
            let k = PastFeature(r.f64s(d_past)?);
            let v = IntentionFeature(r.f64s(d_int)?);
            let start_pos = [r.f64()?, r.f64()?];
            let destination = [r.f64()?, r.f64()?];
            let sample_id = r.u64()?;
            if !start_pos.iter().chain(&destination).all(|x| x.is_finite()) {
                return Err(Error::Format {
                    offset: at,
                    msg: "non-finite filtering coordinate".into(),
                });
            }
            entries.push(MemoryEntry {
                k,
                v,
                start_pos,
                destination,
                sample_id,
            });
        }
        r.expect_end()?;
        Ok(Self { entries, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a bank and checks it was built for the given feature dims.
    pub fn load_expecting(path: &Path, d_past: usize, d_int: usize) -> Result<Self> {
        let bank = Self::load(path)?;
        if bank.meta.d_past != d_past || bank.meta.d_int != d_int {
            return Err(Error::Format {
                offset: 8,
                msg: format!(
                    "bank dims ({}, {}) do not match expected ({d_past}, {d_int})",
                    bank.meta.d_past, bank.meta.d_int
                ),
            });
        }
        Ok(bank)
    }

    /// SHA-256 of the serialized bank, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// One entry per normalized training scene, in dataset order.
pub fn bank_init(nets: &FeatureNets, scenes: &[Scene]) -> Result<MemoryBankPair> {
    if scenes.is_empty() {
        return Err(Error::invalid("cannot build a memory bank from an empty dataset"));
    }
    let t_f = scenes[0].future()?.len();
    let mut entries = Vec::with_capacity(scenes.len());
    for scene in scenes {
        scene.validate(nets.t_p(), t_f)?;
        let destination = scene.destination()?;
        entries.push(MemoryEntry {
            k: nets.social_encode(scene)?,
            v: nets.intention_encode(destination)?,
            start_pos: scene.start_pos(),
            destination,
            sample_id: scene.id,
        });
    }
    Ok(MemoryBankPair {
        entries,
        meta: BankMeta {
            d_past: nets.d_past(),
            d_int: nets.d_int(),
            t_p: nets.t_p(),
            t_f,
            theta_past: 0.0,
            theta_int: 0.0,
            seed: 0,
            source_hash: 0,
        },
    })
}

/// Two entries are redundant when both their start positions and their
/// destinations lie within the respective thresholds.
pub fn is_redundant(a: &MemoryEntry, b: &MemoryEntry, theta_past: f64, theta_int: f64) -> bool {
    dist(a.start_pos, b.start_pos) <= theta_past && dist(a.destination, b.destination) <= theta_int
}

/// Seeded visit order used by [`bank_filter`].
pub fn visit_order(m: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Greedy filtering over a seeded shuffle of the bank. Each visited entry
/// leaves the candidate pool and is kept iff it is not redundant with any
/// entry kept so far. The result lists kept entries in visit order.
pub fn bank_filter(bank: &MemoryBankPair, theta_past: f64, theta_int: f64, seed: u64) -> Result<MemoryBankPair> {
    let order = visit_order(bank.len(), seed);
    let kept = filter_in_order(bank, &order, theta_past, theta_int)?;
    let mut meta = bank.meta;
    meta.theta_past = theta_past;
    meta.theta_int = theta_int;
    meta.seed = seed;
    Ok(MemoryBankPair {
        entries: kept.into_iter().map(|i| bank.entries[i].clone()).collect(),
        meta,
    })
}

/// Indices of the entries the greedy pass keeps when visiting `order`.
pub fn filter_in_order(bank: &MemoryBankPair, order: &[usize], theta_past: f64, theta_int: f64) -> Result<Vec<usize>> {
    if !(theta_past >= 0.0) || !(theta_int >= 0.0) {
        return Err(Error::invalid(format!(
            "thresholds must be >= 0, got ({theta_past}, {theta_int})"
        )));
    }
    let mut index = StartIndex::new(theta_past);
    let mut kept = Vec::new();
    for &i in order {
        let e = bank.entries.get(i).ok_or_else(|| {
            Error::invalid(format!("visit order names entry {i} of a bank of {}", bank.len()))
        })?;
        let redundant = index
            .candidates(e.start_pos)
            .any(|j| is_redundant(e, &bank.entries[j], theta_past, theta_int));
        if !redundant {
            index.insert(e.start_pos, i);
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Buckets kept start positions so that every entry within `theta` of a
/// query lands in one of the 3×3 cells around it.
enum StartIndex {
    Grid { cell: f64, cells: HashMap<(i64, i64), Vec<usize>> },
    Exact(HashMap<(u64, u64), Vec<usize>>),
    All(Vec<usize>),
}

impl StartIndex {
    fn new(theta: f64) -> Self {
        if theta == 0.0 {
            StartIndex::Exact(HashMap::new())
        } else if theta.is_finite() && theta > 1e-300 {
            StartIndex::Grid {
                // slightly wider than theta so rounding in the cell division
                // can never push a true neighbor two cells away
                cell: theta * (1.0 + 1e-6),
                cells: HashMap::new(),
            }
        } else {
            StartIndex::All(Vec::new())
        }
    }

    fn cell_of(cell: f64, p: Point) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    fn exact_key(p: Point) -> (u64, u64) {
        // +0.0 and -0.0 are the same position.
        ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits())
    }

    fn insert(&mut self, p: Point, idx: usize) {
        match self {
            StartIndex::Grid { cell, cells } => cells.entry(Self::cell_of(*cell, p)).or_default().push(idx),
            StartIndex::Exact(map) => map.entry(Self::exact_key(p)).or_default().push(idx),
            StartIndex::All(v) => v.push(idx),
        }
    }

    fn candidates(&self, p: Point) -> Box<dyn Iterator<Item = usize> + '_> {
        match self {
            StartIndex::Grid { cell, cells } => {
                let (cx, cy) = Self::cell_of(*cell, p);
                Box::new(
                    (-1..=1)
                        .flat_map(move |dx| (-1..=1).map(move |dy| (cx.saturating_add(dx), cy.saturating_add(dy))))
                        .filter_map(move |c| cells.get(&c))
                        .flatten()
                        .copied(),
                )
            }
            StartIndex::Exact(map) => Box::new(map.get(&Self::exact_key(p)).into_iter().flatten().copied()),
            StartIndex::All(v) => Box::new(v.iter().copied()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(start: Point, dest: Point, id: u64) -> MemoryEntry {
        MemoryEntry {
            k: PastFeature(vec![id as f64, 1.0]),
            v: IntentionFeature(vec![-(id as f64)]),
            start_pos: start,
            destination: dest,
            sample_id: id,
        }
    }

    pub(crate) fn bank(entries: Vec<MemoryEntry>) -> MemoryBankPair {
        MemoryBankPair {
            entries,
            meta: BankMeta {
                d_past: 2,
                d_int: 1,
                t_p: 8,
                t_f: 12,
                theta_past: 0.0,
                theta_int: 0.0,
                seed: 0,
                source_hash: 7,
            },
        }
    }

    #[test]
    fn redundancy_rule() {
        let a = entry([0.0, 0.0], [1.0, 1.0], 0);
        assert!(is_redundant(&a, &a.clone(), 0.0, 0.0));
        let b = entry([0.0, 0.5], [1.0, 1.5], 1);
        assert!(is_redundant(&a, &b, 1.0, 1.0));
        let c = entry([0.0, 1.0 + 1e-9], [1.0, 1.0], 2);
        assert!(!is_redundant(&a, &c, 1.0, 1.0));
    }

    #[test]
    fn duplicates_collapse_to_one() {
        let b = bank(vec![entry([1.0, 2.0], [3.0, 4.0], 0), entry([1.0, 2.0], [3.0, 4.0], 1)]);
        assert_eq!(bank_filter(&b, 0.0, 0.0, 3).unwrap().len(), 1);
    }

    #[test]
    fn far_apart_entries_all_kept() {
        let b = bank((0..10).map(|i| entry([i as f64 * 5.0, 0.0], [0.0, i as f64 * 5.0], i)).collect());
        let f = bank_filter(&b, 1.0, 1.0, 9).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!((f.meta.theta_past, f.meta.theta_int, f.meta.seed), (1.0, 1.0, 9));
    }

    #[test]
    fn infinite_threshold_keeps_one() {
        let b = bank((0..10).map(|i| entry([i as f64, -3.0 * i as f64], [0.5 * i as f64, 0.0], i)).collect());
        assert_eq!(bank_filter(&b, f64::INFINITY, f64::INFINITY, 1).unwrap().len(), 1);
    }

    #[test]
    fn negative_threshold_rejected() {
        let b = bank(vec![entry([0.0, 0.0], [0.0, 0.0], 0)]);
        assert!(bank_filter(&b, -1.0, 0.0, 0).is_err());
    }

    #[test]
    fn grid_index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let entries: Vec<_> = (0..300)
            .map(|i| {
                entry(
                    [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
                    [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
                    i,
                )
            })
            .collect();
        let b = bank(entries);
        let order = visit_order(b.len(), 11);
        for theta in [0.3, 1.0, 2.5] {
            let fast = filter_in_order(&b, &order, theta, theta).unwrap();
            let mut slow: Vec<usize> = Vec::new();
            for &i in &order {
                if !slow.iter().any(|&j| is_redundant(&b.entries[i], &b.entries[j], theta, theta)) {
                    slow.push(i);
                }
            }
            assert_eq!(fast, slow, "theta {theta}");
        }
    }

    #[test]
    fn save_load_round_trip_and_size() {
        let b = bank(vec![entry([1.0, 2.0], [3.0, 4.0], 5), entry([-1.0, 0.5], [0.0, 9.0], 6)]);
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), BANK_HEADER_BYTES + 2 * ((2 + 1 + 4) * 8 + 8));
        assert_eq!(MemoryBankPair::from_bytes(&bytes).unwrap(), b);
    }

    #[test]
    fn load_rejects_corruption() {
        let b = bank(vec![entry([1.0, 2.0], [3.0, 4.0], 5)]);
        let bytes = b.to_bytes();
        assert!(matches!(
            MemoryBankPair::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        assert!(matches!(MemoryBankPair::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.mtbk");
        b.save(&path).unwrap();
        assert!(MemoryBankPair::load_expecting(&path, 2, 1).is_ok());
        assert!(matches!(
            MemoryBankPair::load_expecting(&path, 128, 64),
            Err(Error::Format { .. })
        ));
    }
}
