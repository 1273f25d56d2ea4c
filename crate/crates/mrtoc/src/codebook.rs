//! Nested codebook: one ordered set of codewords serving every coding level.
//!
//! The level-`l` codebook is the first `2^l` codewords, so a codebook
//! trained through level `L` contains every lower-rate codebook as a
//! prefix. Quantization is exhaustive nearest-neighbor search over the
//! active prefix; training extends the prefix one level at a time and
//! nudges codewords with the vector-quantization loss built here.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Codewords shared by all coding levels, lowest levels first.
#[derive(Clone, Debug)]
pub struct NestedCodebook {
    dim: usize,
    k_max: usize,
    /// `[k_max, dim]`; rows at indices `>= 2^trained_levels` are
    /// placeholders until their level is extended.
    codewords: Tensor,
    trained_levels: usize,
}

/// Output of nearest-codeword search at one level.
#[derive(Clone, Debug)]
pub struct QuantizationResult {
    /// One codeword index per sub-vector, row-major; every value is below
    /// `2^level`.
    pub indices: Vec<usize>,
    /// Selected codewords concatenated back into the input's shape.
    pub quantized: Tensor,
    pub level: usize,
}

impl NestedCodebook {
    /// An untrained codebook of `k_max` zero codewords.
    pub fn new(dim: usize, k_max: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("codebook dimension must be positive".into()));
        }
        if k_max < 2 || !k_max.is_power_of_two() {
            return Err(Error::Contract(format!(
                "codebook size must be a power of two of at least 2, got {k_max}"
            )));
        }
        Ok(NestedCodebook {
            dim,
            k_max,
            codewords: Tensor::zeros(vec![k_max, dim]),
            trained_levels: 0,
        })
    }

    /// Rebuilds a codebook from stored state, re-validating the invariants.
    pub fn from_parts(codewords: Tensor, trained_levels: usize) -> Result<Self> {
        if codewords.rank() != 2 {
            return Err(Error::Contract(format!(
                "codeword table must be 2-D, got shape {:?}",
                codewords.shape()
            )));
        }
        let (k_max, dim) = (codewords.shape()[0], codewords.shape()[1]);
        let mut cb = NestedCodebook::new(dim, k_max)?;
        if trained_levels > cb.max_level() {
            return Err(Error::Contract(format!(
                "trained_levels {trained_levels} exceeds log2({k_max})"
            )));
        }
        cb.codewords = codewords;
        cb.trained_levels = trained_levels;
        Ok(cb)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Deepest level the codebook can represent: `log2(k_max)`.
    pub fn max_level(&self) -> usize {
        self.k_max.trailing_zeros() as usize
    }

    pub fn trained_levels(&self) -> usize {
        self.trained_levels
    }

    /// Marks stage `l` as completed.
    pub fn set_trained_levels(&mut self, l: usize) -> Result<()> {
        if l > self.max_level() {
            return Err(Error::Contract(format!(
                "cannot mark level {l} trained on a {}-level codebook",
                self.max_level()
            )));
        }
        self.trained_levels = l;
        Ok(())
    }

    /// The full `[k_max, dim]` codeword table.
    pub fn codewords(&self) -> &Tensor {
        &self.codewords
    }

    /// Replaces the codeword table, e.g. after an optimizer step.
    pub fn set_codewords(&mut self, codewords: Tensor) -> Result<()> {
        if codewords.shape() != self.codewords.shape() {
            return Err(Error::Contract(format!(
                "codeword table shape {:?} cannot replace {:?}",
                codewords.shape(),
                self.codewords.shape()
            )));
        }
        self.codewords = codewords;
        Ok(())
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.max_level() {
            return Err(Error::Contract(format!(
                "level {level} outside [1, {}]",
                self.max_level()
            )));
        }
        Ok(())
    }

    /// Nearest codeword, among the first `2^level`, for each `dim`-sized
    /// sub-vector of `z_e`. Ties go to the lowest index.
    ///
    /// `z_e` may be a single latent `[M*D]` or a batch `[B, M*D]`; the
    /// quantized output keeps the input shape.
    pub fn quantize(&self, z_e: &Tensor, level: usize) -> Result<QuantizationResult> {
        self.check_level(level)?;
        if z_e.numel() == 0 || !z_e.numel().is_multiple_of(self.dim) {
            return Err(Error::Contract(format!(
                "latent of {} values does not split into {}-dimensional sub-vectors",
                z_e.numel(),
                self.dim
            )));
        }
        let active = 1 << level;
        let table = self.codewords.values();
        let mut indices = Vec::with_capacity(z_e.numel() / self.dim);
        let mut quantized = Vec::with_capacity(z_e.numel());
        for sub in z_e.values().chunks_exact(self.dim) {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for k in 0..active {
                let cw = &table[k * self.dim..(k + 1) * self.dim];
                let dist: f64 = sub.iter().zip(cw).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best_dist {
                    best = k;
                    best_dist = dist;
                }
            }
            indices.push(best);
            quantized.extend_from_slice(&table[best * self.dim..(best + 1) * self.dim]);
        }
        Ok(QuantizationResult {
            indices,
            quantized: Tensor::new(z_e.shape().to_vec(), quantized)?,
            level,
        })
    }

    /// Concatenates the addressed codewords into a 1-D `[M*D]` tensor.
    ///
    /// An index at or above `2^level` is rejected: received symbols must
    /// stay inside the active codebook, so one slipping past points at a
    /// channel or level-selection bug.
    pub fn lookup(&self, indices: &[usize], level: usize) -> Result<Tensor> {
        self.check_level(level)?;
        let active = 1 << level;
        let table = self.codewords.values();
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &idx in indices {
            if idx >= active {
                return Err(Error::Contract(format!(
                    "index {idx} outside level-{level} codebook of {active} codewords"
                )));
            }
            values.extend_from_slice(&table[idx * self.dim..(idx + 1) * self.dim]);
        }
        Tensor::from_vec(values)
    }

    /// Opens stage `l`: keeps codewords below `2^(l-1)` bit-exactly,
    /// draws fresh codewords for indices `2^(l-1)..2^l`, and returns a
    /// snapshot of the preserved prefix (the drift-penalty reference).
    ///
    /// New codewords are i.i.d. Gaussian with mean zero and per-dimension
    /// standard deviation `dim_std`, normally the empirical spread of
    /// current encoder outputs so fresh codewords start in-distribution.
    /// Stage 1 has no prefix: both level-1 codewords are fresh and the
    /// snapshot is `None`.
    pub fn extend_level(
        &mut self,
        l: usize,
        dim_std: &[f64],
        rng: &mut impl Rng,
    ) -> Result<Option<Tensor>> {
        self.check_level(l)?;
        if self.trained_levels != l - 1 {
            return Err(Error::Contract(format!(
                "extend_level({l}) requires {} trained levels, found {}",
                l - 1,
                self.trained_levels
            )));
        }
        if dim_std.len() != self.dim {
            return Err(Error::Contract(format!(
                "{} per-dimension stds for dimension {}",
                dim_std.len(),
                self.dim
            )));
        }
        if let Some(&bad) = dim_std.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(Error::Numeric(format!(
                "new-codeword std must be finite and positive, got {bad}"
            )));
        }

        let start = if l == 1 { 0 } else { 1 << (l - 1) };
        let end = 1 << l;
        let snapshot = if l == 1 {
            None
        } else {
            let prefix = self.codewords.values()[..start * self.dim].to_vec();
            Some(Tensor::new(vec![start, self.dim], prefix)?)
        };

        let normals: Vec<Normal<f64>> =
            dim_std.iter().map(|&s| Normal::new(0.0, s).expect("std validated")).collect();
        let mut values = self.codewords.values().to_vec();
        for idx in start..end {
            for (d, normal) in normals.iter().enumerate() {
                values[idx * self.dim + d] = normal.sample(rng);
            }
        }
        self.codewords = Tensor::new(vec![self.k_max, self.dim], values)?;
        Ok(snapshot)
    }

    /// Level at which codeword `index` first became active.
    pub fn level_introduced(&self, index: usize) -> usize {
        if index < 2 {
            1
        } else {
            index.ilog2() as usize + 1
        }
    }

    /// Writes `level_introduced,index,dim_0,...,dim_{D-1}` rows for every
    /// codeword.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "level_introduced,index")?;
        for d in 0..self.dim {
            write!(w, ",dim_{d}")?;
        }
        writeln!(w)?;
        for idx in 0..self.k_max {
            write!(w, "{},{idx}", self.level_introduced(idx))?;
            for v in self.codewords.row(idx) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Vector-quantization loss for assigned codewords:
/// `||sg[z_e] - e||^2 + gamma * ||z_e - sg[e]||^2` summed over sub-vectors.
///
/// `codebook` is the `[K, D]` codeword table as a tape parameter and
/// `indices` the assignment from [`NestedCodebook::quantize`]. The first
/// term moves only the codewords, the second only the encoder; the
/// stop-gradients make that routing structural rather than a convention.
pub fn vq_loss(
    tape: &mut Tape,
    z_e: NodeId,
    codebook: NodeId,
    indices: &[usize],
    gamma: f64,
) -> Result<NodeId> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Contract(format!("commitment weight must be positive, got {gamma}")));
    }
    let e = tape.gather_rows(codebook, indices)?;
    let e = tape.reshape(e, tape.value(z_e).shape().to_vec())?;
    let sg_z = tape.stop_gradient(z_e);
    let codeword_term = tape.sub(sg_z, e)?;
    let codeword_term = tape.squared_l2(codeword_term)?;
    let sg_e = tape.stop_gradient(e);
    let commit_term = tape.sub(z_e, sg_e)?;
    let commit_term = tape.squared_l2(commit_term)?;
    let commit_term = tape.scale(commit_term, gamma)?;
    tape.add(codeword_term, commit_term)
}
