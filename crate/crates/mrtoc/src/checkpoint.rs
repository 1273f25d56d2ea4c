//! Checkpoint serialization.
//!
//! A checkpoint is one UTF-8 file: the literal header line `MRTOC-CKPT-1`
//! followed by a JSON body holding the resolved experiment config, every
//! parameter tensor, the codeword table, and the trained level count.
//! Field order is fixed and floats print in shortest round-trip form, so
//! saving the same model twice yields byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::NestedCodebook;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{DenseLayer, EncoderParams, InferenceParams, Mlp, TrainedModel};
use crate::tensor::Tensor;

/// First line of every checkpoint file; the trailing digit is the format
/// version.
pub const CHECKPOINT_HEADER: &str = "MRTOC-CKPT-1";

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TensorRepr {
    fn of(t: &Tensor) -> Self {
        TensorRepr { shape: t.shape().to_vec(), values: t.values().to_vec() }
    }

    fn build(self) -> Result<Tensor> {
        Tensor::new(self.shape, self.values)
    }
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layers: Vec<(TensorRepr, TensorRepr)>,
}

impl MlpRepr {
    fn of(mlp: &Mlp) -> Self {
        let tensors = mlp.tensors();
        let layers = tensors
            .chunks_exact(2)
            .map(|pair| (TensorRepr::of(pair[0]), TensorRepr::of(pair[1])))
            .collect();
        MlpRepr { layers }
    }

    fn build(self) -> Result<Mlp> {
        let layers = self
            .layers
            .into_iter()
            .map(|(w, b)| Ok(DenseLayer { w: w.build()?, b: b.build()? }))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    config: ExperimentConfig,
    encoder: MlpRepr,
    m: usize,
    d: usize,
    head: MlpRepr,
    num_classes: usize,
    codewords: TensorRepr,
    trained_levels: usize,
}

/// A trained model together with the config that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(config: ExperimentConfig, model: TrainedModel) -> Self {
        Checkpoint { config, model }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let body = CheckpointBody {
            config: self.config.clone(),
            encoder: MlpRepr::of(self.model.encoder.mlp()),
            m: self.model.encoder.m(),
            d: self.model.encoder.d(),
            head: MlpRepr::of(self.model.head.mlp()),
            num_classes: self.model.head.num_classes(),
            codewords: TensorRepr::of(self.model.codebook.codewords()),
            trained_levels: self.model.codebook.trained_levels(),
        };
        writeln!(w, "{CHECKPOINT_HEADER}")?;
        serde_json::to_writer(&mut *w, &body).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read(r: &mut impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != CHECKPOINT_HEADER {
            return Err(Error::Format(format!(
                "not a checkpoint: expected {CHECKPOINT_HEADER} header, found {:?}",
                header.trim_end()
            )));
        }
        let body: CheckpointBody =
            serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
        let encoder = EncoderParams::from_mlp(body.encoder.build()?, body.m, body.d)?;
        let head = InferenceParams::from_mlp(body.head.build()?, body.num_classes)?;
        let codebook = NestedCodebook::from_parts(body.codewords.build()?, body.trained_levels)?;
        Ok(Checkpoint { config: body.config, model: TrainedModel { encoder, head, codebook } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::training::{train_progressive, TrainConfig};

    fn small_checkpoint() -> Checkpoint {
        let ds = generate_blobs(2, 3, 10, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            epochs_per_level: 1,
            batch_size: 10,
            k_max: 4,
            m: 2,
            d: 2,
            encoder_hidden: vec![4],
            head_hidden: vec![4],
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) = train_progressive(&cfg, &ds).unwrap();
        let mut exp = ExperimentConfig::desk();
        exp.train = cfg;
        exp.set_seed(1);
        Checkpoint::new(exp, model)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ckpt = small_checkpoint();
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut &buf[..]).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(
            back.model.codebook.codewords().values(),
            ckpt.model.codebook.codewords().values()
        );
        assert_eq!(back.model.codebook.trained_levels(), 2);
        for (a, b) in
            back.model.encoder.mlp().tensors().iter().zip(ckpt.model.encoder.mlp().tensors())
        {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.values(), b.values());
        }
        for (a, b) in back.model.head.mlp().tensors().iter().zip(ckpt.model.head.mlp().tensors()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn serialization_is_byte_stable() {
        let ckpt = small_checkpoint();
        let mut a = Vec::new();
        let mut b = Vec::new();
        ckpt.write(&mut a).unwrap();
        ckpt.write(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with(b"MRTOC-CKPT-1\n"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = Checkpoint::read(&mut &b"MRTOC-CKPT-2\n{}"[..]).unwrap_err();
        assert!(err.to_string().contains("MRTOC-CKPT-1"), "{err}");
        let err = Checkpoint::read(&mut &b"garbage"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncated_body_is_rejected() {
        let ckpt = small_checkpoint();
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let cut = &buf[..buf.len() / 2];
        assert!(matches!(Checkpoint::read(&mut &cut[..]), Err(Error::Format(_))));
    }
}
