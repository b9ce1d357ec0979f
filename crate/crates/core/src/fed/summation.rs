use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::secure_agg::{secure_sum, SCALE};

/// Deviation of secure sums from the plaintext sums over the same inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SecureAudit {
    pub aggregations: usize,
    /// Largest `max_i |secure_i − plain_i|` seen.
    pub max_deviation: f64,
    /// Largest deviation divided by `K · 2⁻¹⁶` of its aggregation.
    pub max_bound_ratio: f64,
}

/// Server-side summation of client uploads, plain or masked.
///
/// Plain sums always run in ascending client-id order, so results do not
/// depend on the order in which client updates finished.
#[derive(Debug, Clone)]
pub struct Summation {
    secure: Option<u64>,
    calls: u64,
    audit: Option<SecureAudit>,
}

impl Summation {
    pub fn plain() -> Self {
        Self { secure: None, calls: 0, audit: None }
    }

    pub fn secure(seed: u64) -> Self {
        Self { secure: Some(seed), calls: 0, audit: None }
    }

    /// Also computes every plain sum and records the deviation.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(SecureAudit::default());
        self
    }

    pub fn is_secure(&self) -> bool {
        self.secure.is_some()
    }

    pub fn audit(&self) -> Option<&SecureAudit> {
        self.audit.as_ref()
    }

    fn round_seed(seed: u64, call: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(b"fedgp-round-v1");
        h.update(seed.to_le_bytes());
        h.update(call.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Coordinate-wise sum of `(client_id, vector)` contributions.
    pub fn sum(&mut self, parts: &[(usize, Vec<f64>)]) -> Result<Vec<f64>> {
        let Some(first) = parts.first() else {
            return invalid("summation over an empty participant set");
        };
        let dim = first.1.len();
        if parts.iter().any(|p| p.1.len() != dim) {
            return invalid("contributions have different dimensions");
        }
        let mut sorted: Vec<&(usize, Vec<f64>)> = parts.iter().collect();
        sorted.sort_by_key(|p| p.0);
        let mut plain = vec![0.0; dim];
        for (_, v) in &sorted {
            for (a, b) in plain.iter_mut().zip(v) {
                *a += b;
            }
        }
        let Some(seed) = self.secure else {
            return Ok(plain);
        };
        let call = self.calls;
        self.calls += 1;
        let owned: Vec<(u32, Vec<f64>)> = sorted.iter().map(|(id, v)| (*id as u32, v.clone())).collect();
        let round = u32::try_from(call).unwrap_or(u32::MAX);
        let secure = secure_sum(Self::round_seed(seed, call), round, &owned)?;
        if let Some(a) = self.audit.as_mut() {
            let dev = secure.iter().zip(&plain).map(|(s, p)| (s - p).abs()).fold(0.0, f64::max);
            a.aggregations += 1;
            a.max_deviation = a.max_deviation.max(dev);
            a.max_bound_ratio = a.max_bound_ratio.max(dev / (parts.len() as f64 / SCALE));
        }
        Ok(secure)
    }

    /// Sum of scalars, routed like vectors.
    pub fn sum_scalar(&mut self, parts: &[(usize, f64)]) -> Result<f64> {
        let v: Vec<(usize, Vec<f64>)> = parts.iter().map(|(i, x)| (*i, vec![*x])).collect();
        Ok(self.sum(&v)?[0])
    }
}
