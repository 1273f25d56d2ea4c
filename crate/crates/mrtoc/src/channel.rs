//! Symmetric discrete memoryless channel and rate arithmetic.
//!
//! Codeword indices are transmitted as raw symbols over a channel that
//! keeps each symbol with probability `1 - eps` and otherwise replaces it
//! with one of the other `r - 1` symbols uniformly. The symbol alphabet is
//! the active codebook prefix, so `r = 2^level`. This module also holds
//! the scalar arithmetic tying bit-error rate, latency budget, and coding
//! level together.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric discrete memoryless channel over `r` symbols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdmcChannel {
    r: usize,
    eps: f64,
}

impl SdmcChannel {
    pub fn new(r: usize, eps: f64) -> Result<Self> {
        if r < 2 {
            return Err(Error::Contract(format!("channel needs at least 2 symbols, got {r}")));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Contract(format!("error probability {eps} outside [0, 1]")));
        }
        Ok(SdmcChannel { r, eps })
    }

    /// Channel sized for coding level `l`: the symbol alphabet is the
    /// level-`l` codebook, so `r = 2^l`.
    pub fn for_level(level: usize, eps: f64) -> Result<Self> {
        if level == 0 || level >= usize::BITS as usize {
            return Err(Error::Contract(format!("level {level} out of range")));
        }
        SdmcChannel::new(1 << level, eps)
    }

    pub fn symbols(&self) -> usize {
        self.r
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The `r x r` transition matrix of this channel.
    pub fn transition_matrix(&self) -> Tensor {
        transition_matrix(self.r, self.eps).expect("fields validated at construction")
    }

    /// Sends each index through the channel independently.
    ///
    /// A symbol survives with probability `1 - eps`; otherwise it becomes
    /// one of the other `r - 1` symbols, chosen uniformly. Output order and
    /// length match the input.
    pub fn transmit(&self, indices: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
        CorruptionDraw::sample(indices.len(), rng).apply(self, indices)
    }
}

/// Pre-sampled channel randomness, decoupled from alphabet size.
///
/// One draw can corrupt the same batch of symbols at several coding levels
/// with correlated noise: the flip decisions coincide wherever `eps`
/// matches, and the replacement draw maps onto each alphabet by scaling.
/// Training uses this to give every level the same channel luck within a
/// batch step.
#[derive(Clone, Debug)]
pub struct CorruptionDraw {
    flip: Vec<f64>,
    alt: Vec<f64>,
}

impl CorruptionDraw {
    /// Draws corruption variates for `n` symbols.
    pub fn sample(n: usize, rng: &mut impl Rng) -> Self {
        let mut flip = Vec::with_capacity(n);
        let mut alt = Vec::with_capacity(n);
        for _ in 0..n {
            flip.push(rng.random::<f64>());
            alt.push(rng.random::<f64>());
        }
        CorruptionDraw { flip, alt }
    }

    pub fn len(&self) -> usize {
        self.flip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip.is_empty()
    }

    /// Applies this draw to `indices` under channel `ch`: symbol `i` flips
    /// iff `flip[i] < eps`, landing uniformly among the other `r - 1`
    /// symbols.
    pub fn apply(&self, ch: &SdmcChannel, indices: &[usize]) -> Result<Vec<usize>> {
        if indices.len() != self.flip.len() {
            return Err(Error::Contract(format!(
                "draw covers {} symbols, got {}",
                self.flip.len(),
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ch.r) {
            return Err(Error::Contract(format!(
                "symbol {bad} outside alphabet of {} symbols",
                ch.r
            )));
        }
        let out = indices
            .iter()
            .enumerate()
            .map(|(i, &idx)| {
                if self.flip[i] < ch.eps {
                    // Uniform over the r-1 other symbols: map the unit draw
                    // onto [0, r-2] and skip past the original index.
                    let alt = ((self.alt[i] * (ch.r - 1) as f64) as usize).min(ch.r - 2);
                    if alt >= idx {
                        alt + 1
                    } else {
                        alt
                    }
                } else {
                    idx
                }
            })
            .collect();
        Ok(out)
    }
}

/// Rate and reliability context for level selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateContext {
    /// Link rate in bits per second.
    pub v_bit: f64,
    /// Latency budget in seconds.
    pub tau: f64,
    /// Sub-vectors per transmission.
    pub m_subvectors: usize,
    /// Full codebook size, a power of two.
    pub k_max: usize,
    /// Bit error rate of the underlying link.
    pub p_e: f64,
}

impl RateContext {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_bit.is_finite() && self.v_bit > 0.0) {
            return Err(Error::Contract(format!("bit rate must be positive, got {}", self.v_bit)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Contract(format!(
                "latency budget must be positive, got {}",
                self.tau
            )));
        }
        if self.m_subvectors == 0 {
            return Err(Error::Contract("sub-vector count must be positive".into()));
        }
        if self.k_max < 2 || !self.k_max.is_power_of_two() {
            return Err(Error::Contract(format!(
                "k_max must be a power of two of at least 2, got {}",
                self.k_max
            )));
        }
        if !(0.0..=1.0).contains(&self.p_e) {
            return Err(Error::Contract(format!("bit error rate {} outside [0, 1]", self.p_e)));
        }
        Ok(())
    }
}

/// The `r x r` symmetric transition matrix: `1 - eps` on the diagonal,
/// `eps / (r - 1)` elsewhere. Every row sums to 1 within 1e-12.
pub fn transition_matrix(r: usize, eps: f64) -> Result<Tensor> {
    SdmcChannel::new(r, eps)?;
    let off = eps / (r - 1) as f64;
    let mut values = vec![off; r * r];
    for i in 0..r {
        values[i * r + i] = 1.0 - eps;
    }
    Tensor::new(vec![r, r], values)
}

/// Symbol error probability induced by bit error rate `p_e` on symbols
/// carrying `log2(k_t)` bits: `1 - (1 - p_e)^{log2 k_t}`.
pub fn eps_from_ber(p_e: f64, k_t: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::Contract(format!("bit error rate {p_e} outside [0, 1]")));
    }
    if k_t < 2 || !k_t.is_power_of_two() {
        return Err(Error::Contract(format!(
            "symbol alphabet must be a power of two of at least 2, got {k_t}"
        )));
    }
    let bits = k_t.trailing_zeros() as i32;
    Ok(1.0 - (1.0 - p_e).powi(bits))
}

/// Codebook size the rate budget nominally allows: `v_bit * tau / log2(m)`.
///
/// Reference helper only. Its unit analysis does not agree with the budget
/// rule in [`select_level`] (which charges `m * l` bits per transmission);
/// [`select_level`] is what every operational decision uses. The formula is
/// kept as written rather than silently repaired.
pub fn codebook_size_from_rate(ctx: &RateContext) -> Result<f64> {
    ctx.validate()?;
    if ctx.m_subvectors <= 1 {
        return Err(Error::Contract(format!(
            "sub-vector count {} has non-positive log2",
            ctx.m_subvectors
        )));
    }
    Ok(ctx.v_bit * ctx.tau / (ctx.m_subvectors as f64).log2())
}

/// Deepest coding level whose transmission fits the latency budget:
/// `max { l in 1..=log2(k_max) : m * l / v_bit <= tau }`.
///
/// With no feasible level the error carries the minimal budget that would
/// admit level 1.
pub fn select_level(ctx: &RateContext) -> Result<usize> {
    ctx.validate()?;
    let max_level = ctx.k_max.trailing_zeros() as usize;
    let latency = |l: usize| (ctx.m_subvectors * l) as f64 / ctx.v_bit;
    let mut best = None;
    for l in 1..=max_level {
        if latency(l) <= ctx.tau {
            best = Some(l);
        }
    }
    best.ok_or(Error::Infeasible { min_tau: latency(1) })
}
