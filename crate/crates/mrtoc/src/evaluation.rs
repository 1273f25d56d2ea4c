//! Accuracy measurement across coding levels and channel conditions.
//!
//! A sweep cell fixes a coding level and a channel error rate, then runs
//! the frozen pipeline (encode, quantize, transmit, lookup, infer) over
//! the test set for several independent channel realizations. Encoding and
//! quantization are deterministic, so they run once per cell; only channel
//! noise is redrawn per trial. Cells are seeded independently, making
//! results order-independent.

use std::io::Write;

use crate::channel::{eps_from_ber, SdmcChannel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::TrainedModel;
use crate::rng::{cell_seed, stream, StreamKind};
use crate::tensor::Tensor;

/// Index of the largest value; ties go to the first.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of logit rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "{} logit rows against {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let correct = (0..logits.rows()).filter(|&r| argmax(logits.row(r)) == labels[r]).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One sweep cell: accuracy of the pipeline at a (level, error rate) point.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub level: usize,
    /// Bits per transmission: `M * level`.
    pub bits: usize,
    /// Symbol error probability the channel ran at.
    pub eps_test: f64,
    /// Bit error rate the row was derived from, when swept over BER.
    pub p_e: Option<f64>,
    pub accuracy: f64,
    /// Binomial standard error `sqrt(acc * (1 - acc) / n)`.
    pub stderr: f64,
    /// Classification decisions behind the estimate: trials x test size.
    pub n: usize,
    /// Per-cell derived seed, recorded for reproducibility.
    pub seed: u64,
}

/// Sweep table; one row per (level, error-rate) cell.
#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Writes `level,bits,eps_test,p_e,accuracy,stderr,n,seed` rows after
    /// `# `-prefixed preamble lines. The `p_e` field is empty for rows not
    /// derived from a bit error rate.
    pub fn write_csv(&self, w: &mut impl Write, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "level,bits,eps_test,p_e,accuracy,stderr,n,seed")?;
        for r in &self.rows {
            let p_e = r.p_e.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{p_e},{},{},{},{}",
                r.level, r.bits, r.eps_test, r.accuracy, r.stderr, r.n, r.seed
            )?;
        }
        Ok(())
    }
}

fn correct_decisions(
    model: &TrainedModel,
    level: usize,
    eps_test: f64,
    test: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    if level > model.codebook.trained_levels() {
        return Err(Error::Contract(format!(
            "level {level} not trained (codebook trained through {})",
            model.codebook.trained_levels()
        )));
    }
    if trials == 0 {
        return Err(Error::Contract("evaluation needs at least one trial".into()));
    }
    let n = test.len();
    let latent = model.encoder.latent_dim();
    let z_e = model.encoder.encode(&test.features_tensor())?;
    let q = model.codebook.quantize(&z_e, level)?;
    let ch = SdmcChannel::for_level(level, eps_test)?;

    let mut correct = 0usize;
    for trial in 0..trials {
        let mut rng = stream(seed, StreamKind::ChannelEval, trial as u64);
        let received = ch.transmit(&q.indices, &mut rng)?;
        let z_d = model.codebook.lookup(&received, level)?.reshaped(vec![n, latent])?;
        let logits = model.head.infer(&z_d)?;
        correct += (0..n).filter(|&r| argmax(logits.row(r)) == test.label(r)).count();
    }
    Ok((correct, n * trials))
}

/// Mean accuracy of the full pipeline at `level` and `eps_test` over
/// `trials` independent channel realizations of the test set.
pub fn evaluate(
    model: &TrainedModel,
    level: usize,
    eps_test: f64,
    test: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let (correct, n) = correct_decisions(model, level, eps_test, test, trials, seed)?;
    Ok(correct as f64 / n as f64)
}

fn cell_row(
    model: &TrainedModel,
    level: usize,
    eps_test: f64,
    p_e: Option<f64>,
    test: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<SweepRow> {
    let (correct, n) = correct_decisions(model, level, eps_test, test, trials, seed)?;
    let accuracy = correct as f64 / n as f64;
    Ok(SweepRow {
        level,
        bits: model.encoder.m() * level,
        eps_test,
        p_e,
        accuracy,
        stderr: (accuracy * (1.0 - accuracy) / n as f64).sqrt(),
        n,
        seed,
    })
}

/// Cross-product sweep over coding levels and symbol error rates.
pub fn sweep_levels_eps(
    model: &TrainedModel,
    levels: &[usize],
    eps_list: &[f64],
    test: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(levels.len() * eps_list.len());
    for (cell, (&level, &eps)) in
        levels.iter().flat_map(|l| eps_list.iter().map(move |e| (l, e))).enumerate()
    {
        rows.push(cell_row(model, level, eps, None, test, trials, cell_seed(seed, cell as u64))?);
    }
    Ok(SweepResult { rows })
}

/// Sweep over bit error rates: each cell converts `p_e` to the symbol
/// error rate of its level's alphabet before evaluating.
pub fn sweep_ber(
    model: &TrainedModel,
    levels: &[usize],
    p_e_list: &[f64],
    test: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(levels.len() * p_e_list.len());
    for (cell, (&level, &p_e)) in
        levels.iter().flat_map(|l| p_e_list.iter().map(move |p| (l, p))).enumerate()
    {
        let eps = eps_from_ber(p_e, 1 << level)?;
        rows.push(cell_row(
            model,
            level,
            eps,
            Some(p_e),
            test,
            trials,
            cell_seed(seed, cell as u64),
        )?);
    }
    Ok(SweepResult { rows })
}
