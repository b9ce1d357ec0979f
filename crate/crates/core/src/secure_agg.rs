//! Pairwise-masked secure summation over fixed-point vectors.
//!
//! Every client encodes its vector in the ring ℤ/2⁶⁴ with 16 fractional bits
//! and adds a mask built from pseudorandom streams shared with each peer:
//!
//! ```text
//! mask(i) = Σ_{j > i} PRG(i, j) − Σ_{j < i} PRG(j, i)      (mod 2⁶⁴)
//! ```
//!
//! The masks of a full participant set cancel exactly, so the server only
//! learns the sum. If clients drop out after masks were fixed, survivors
//! reveal their pair keys with the dropped peers to the server, which strips
//! the orphaned streams.
//!
//! PRG: the pair key is `SHA-256("fedgp-mask-v1" ‖ round_seed ‖ lo ‖ hi)` (all
//! integers little-endian, `lo < hi` client ids as u32) and seeds ChaCha20;
//! the stream is consecutive `next_u64` outputs. This is a simulation of the
//! aggregate-only property, not a hardened protocol: there is no key
//! agreement and a single participant's share is its plaintext encoding.
//!
//! Overflow: encoded magnitudes are below 2⁵⁶, and a sum decodes correctly
//! while `Σ |v_k| < 2⁴⁷`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

pub const FRACTIONAL_BITS: u32 = 16;
pub const SCALE: f64 = (1u64 << FRACTIONAL_BITS) as f64;
/// Exclusive bound on the magnitude of any encoded value.
pub const MAX_MAGNITUDE: f64 = (1u64 << 40) as f64;
pub const MAX_CONTRIBUTORS: usize = 1 << 20;

/// Fixed-point vector in ℤ/2⁶⁴, scale 2¹⁶.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector {
    pub words: Vec<u64>,
}

impl FixedPointVector {
    /// Round-to-nearest encoding.
    pub fn encode(values: &[f64]) -> Result<Self> {
        let mut words = Vec::with_capacity(values.len());
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || v.abs() >= MAX_MAGNITUDE {
                return invalid(format!("value {v} at index {i} is outside the fixed-point range ±2^40"));
            }
            words.push((v * SCALE).round() as i64 as u64);
        }
        Ok(Self { words })
    }

    /// Decodes a (possibly summed) vector built from `contributors` encodings.
    pub fn decode(&self, contributors: usize) -> Result<Vec<f64>> {
        if contributors == 0 || contributors > MAX_CONTRIBUTORS {
            return invalid(format!("contributor count {contributors} outside 1..=2^20"));
        }
        Ok(self.words.iter().map(|&w| w as i64 as f64 / SCALE).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Worst-case decode error of a sum of `contributors` encodings.
pub fn quantization_bound(contributors: usize) -> f64 {
    contributors as f64 * 0.5 / SCALE
}

/// Key shared by clients `a` and `b` for one round; symmetric in `a`, `b`.
pub fn pair_key(round_seed: u64, a: u32, b: u32) -> [u8; 32] {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut h = Sha256::new();
    h.update(b"fedgp-mask-v1");
    h.update(round_seed.to_le_bytes());
    h.update(lo.to_le_bytes());
    h.update(hi.to_le_bytes());
    h.finalize().into()
}

fn stream(key: &[u8; 32], dim: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::from_seed(*key);
    (0..dim).map(|_| rng.next_u64()).collect()
}

fn check_distinct(ids: &[u32]) -> Result<BTreeSet<u32>> {
    let set: BTreeSet<u32> = ids.iter().copied().collect();
    if set.len() != ids.len() {
        return invalid("participant ids are not distinct");
    }
    Ok(set)
}

/// Mask of client `my_id` against every other id in `participant_ids`.
pub fn derive_pairwise_masks(round_seed: u64, my_id: u32, participant_ids: &[u32], dim: usize) -> Result<Vec<u64>> {
    check_distinct(participant_ids)?;
    let mut mask = vec![0u64; dim];
    for &peer in participant_ids {
        if peer == my_id {
            continue;
        }
        let s = stream(&pair_key(round_seed, my_id, peer), dim);
        if peer > my_id {
            for (m, w) in mask.iter_mut().zip(&s) {
                *m = m.wrapping_add(*w);
            }
        } else {
            for (m, w) in mask.iter_mut().zip(&s) {
                *m = m.wrapping_sub(*w);
            }
        }
    }
    Ok(mask)
}

/// A client's masked upload.
///
/// Wire format, little-endian: `round: u32, client_id: u32, dim: u32, words: [u64; dim]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedShare {
    pub round: u32,
    pub client_id: u32,
    pub words: Vec<u64>,
}

impl MaskedShare {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.words.len());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
        if bytes.len() < 12 {
            return Err(Error::Aggregation(format!("share too short: {} bytes", bytes.len())));
        }
        let (round, client_id, dim) = (u32_at(0), u32_at(4), u32_at(8) as usize);
        if bytes.len() != 12 + 8 * dim {
            return Err(Error::Aggregation(format!(
                "share declares {dim} words but carries {} bytes",
                bytes.len()
            )));
        }
        let words = bytes[12..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { round, client_id, words })
    }
}

/// Encodes `values` and adds `mask`.
pub fn masked_upload(round: u32, client_id: u32, values: &[f64], mask: &[u64]) -> Result<MaskedShare> {
    if values.len() != mask.len() {
        return invalid(format!("vector has {} entries but mask has {}", values.len(), mask.len()));
    }
    let enc = FixedPointVector::encode(values)?;
    let words = enc.words.iter().zip(mask).map(|(a, m)| a.wrapping_add(*m)).collect();
    Ok(MaskedShare { round, client_id, words })
}

/// Pair keys revealed to the server by survivors, for peers that dropped.
#[derive(Debug, Clone, Default)]
pub struct SeedEscrow {
    keys: BTreeMap<(u32, u32), [u8; 32]>,
}

impl SeedEscrow {
    /// Survivor `survivor` reveals its key with `dropped`.
    pub fn reveal(&mut self, round_seed: u64, survivor: u32, dropped: u32) {
        let k = (survivor.min(dropped), survivor.max(dropped));
        self.keys.insert(k, pair_key(round_seed, survivor, dropped));
    }

    fn get(&self, a: u32, b: u32) -> Option<&[u8; 32]> {
        self.keys.get(&(a.min(b), a.max(b)))
    }
}

/// Server side of one aggregation round.
#[derive(Debug, Clone)]
pub struct SecureAggregator {
    pub round: u32,
    pub participants: BTreeSet<u32>,
    pub dim: usize,
}

impl SecureAggregator {
    pub fn new(round: u32, participant_ids: &[u32], dim: usize) -> Result<Self> {
        let participants = check_distinct(participant_ids)?;
        if participants.is_empty() {
            return invalid("aggregation round needs at least one participant");
        }
        Ok(Self { round, participants, dim })
    }

    fn sum_words(&self, shares: &[MaskedShare], expected: &BTreeSet<u32>) -> Result<Vec<u64>> {
        let mut seen = BTreeSet::new();
        let mut acc = vec![0u64; self.dim];
        for s in shares {
            if s.round != self.round {
                return Err(Error::Aggregation(format!("share from round {} in round {}", s.round, self.round)));
            }
            if s.words.len() != self.dim {
                return Err(Error::Aggregation(format!(
                    "share from client {} has dimension {}, expected {}",
                    s.client_id,
                    s.words.len(),
                    self.dim
                )));
            }
            if !expected.contains(&s.client_id) || !seen.insert(s.client_id) {
                return Err(Error::Aggregation(format!("unexpected or duplicate share from client {}", s.client_id)));
            }
            for (a, w) in acc.iter_mut().zip(&s.words) {
                *a = a.wrapping_add(*w);
            }
        }
        if &seen != expected {
            return Err(Error::Aggregation(format!(
                "participant-set mismatch: expected {:?}, received {:?}",
                expected, seen
            )));
        }
        Ok(acc)
    }

    /// Sum of the plain vectors behind a complete set of shares.
    pub fn aggregate(&self, shares: &[MaskedShare]) -> Result<Vec<f64>> {
        let acc = self.sum_words(shares, &self.participants)?;
        FixedPointVector { words: acc }.decode(self.participants.len())
    }

    /// Recovers the survivors' sum when `dropped` never uploaded.
    pub fn handle_dropout(&self, dropped: &[u32], surviving: &[MaskedShare], escrow: &SeedEscrow) -> Result<Vec<f64>> {
        let dropped: BTreeSet<u32> = dropped.iter().copied().collect();
        if !dropped.is_subset(&self.participants) {
            return Err(Error::Aggregation("dropped id was never a participant".into()));
        }
        let survivors: BTreeSet<u32> = self.participants.difference(&dropped).copied().collect();
        if survivors.is_empty() {
            return Err(Error::Aggregation(format!("round {}: every participant dropped", self.round)));
        }
        if surviving.iter().any(|s| dropped.contains(&s.client_id)) {
            return Err(Error::Aggregation("a dropped client is also listed as a survivor".into()));
        }
        let mut acc = self.sum_words(surviving, &survivors)?;
        for &i in &survivors {
            for &j in &dropped {
                let key = escrow.get(i, j).ok_or_else(|| {
                    Error::Aggregation(format!(
                        "unrecoverable round {}: no escrowed key for pair ({i}, {j})",
                        self.round
                    ))
                })?;
                let s = stream(key, self.dim);
                // Undo the survivor's orphaned stream.
                for (a, w) in acc.iter_mut().zip(&s) {
                    *a = if j > i { a.wrapping_sub(*w) } else { a.wrapping_add(*w) };
                }
            }
        }
        FixedPointVector { words: acc }.decode(survivors.len())
    }
}

/// Runs one complete masked round in-process: mask derivation, uploads
/// through the wire format, and server aggregation.
pub fn secure_sum(round_seed: u64, round: u32, contributions: &[(u32, Vec<f64>)]) -> Result<Vec<f64>> {
    let dim = contributions.first().map_or(0, |c| c.1.len());
    let ids: Vec<u32> = contributions.iter().map(|c| c.0).collect();
    let server = SecureAggregator::new(round, &ids, dim)?;
    let mut shares = Vec::with_capacity(contributions.len());
    for (id, v) in contributions {
        let mask = derive_pairwise_masks(round_seed, *id, &ids, dim)?;
        let bytes = masked_upload(round, *id, v, &mask)?.to_bytes();
        shares.push(MaskedShare::from_bytes(&bytes)?);
    }
    server.aggregate(&shares)
}
