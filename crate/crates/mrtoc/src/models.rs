//! Encoder and task-inference networks.
//!
//! Both ends of the link are small fully-connected ReLU networks: the
//! encoder maps an observation to a latent of `M * D` values (M sub-vectors
//! of codebook dimension D), and the inference head maps a received latent
//! to class logits. Parameters live here as plain tensors; each training
//! batch registers them on a fresh tape, so the same structs serve both
//! tape-free inference and gradient training.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::codebook::NestedCodebook;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One affine layer: weights `[in, out]`, bias `[out]`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

/// Fully-connected network with ReLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters, ordered
/// `w0, b0, w1, b1, ...` to match [`Mlp::tensors`].
pub struct MlpNodes {
    pub params: Vec<NodeId>,
}

impl Mlp {
    /// Seeded fan-in initialization: weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    ///
    /// `dims` lists layer widths input-first, e.g. `[N, 128, 128, M*D]`.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "network needs an input and an output width, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Contract(format!("zero layer width in {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(DenseLayer {
                w: Tensor::new(vec![fan_in, fan_out], w)?,
                b: Tensor::zeros(vec![fan_out]),
            });
        }
        Ok(Mlp { layers })
    }

    /// Reassembles a network from stored layers, checking the width chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.w.rank() != 2 {
                return Err(Error::Contract(format!(
                    "layer {i} weights must be 2-D, got shape {:?}",
                    layer.w.shape()
                )));
            }
            if layer.b.shape() != [layer.w.shape()[1]] {
                return Err(Error::Contract(format!(
                    "layer {i} bias shape {:?} does not match {} outputs",
                    layer.b.shape(),
                    layer.w.shape()[1]
                )));
            }
            if i > 0 && layers[i - 1].w.shape()[1] != layer.w.shape()[0] {
                return Err(Error::Contract(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    layer.w.shape()[0],
                    i - 1,
                    layers[i - 1].w.shape()[1]
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.shape()[1]
    }

    /// Puts every parameter on the tape; order matches [`Mlp::tensors`].
    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            params.push(tape.param(layer.w.clone()));
            params.push(tape.param(layer.b.clone()));
        }
        MlpNodes { params }
    }

    /// Forward pass on the tape. `x` is `[B, input_dim]` (or a single
    /// `[input_dim]` row, returned 1-D).
    pub fn forward(&self, tape: &mut Tape, nodes: &MlpNodes, x: NodeId) -> Result<NodeId> {
        let single = tape.value(x).rank() == 1;
        let mut h = if single {
            let n = tape.value(x).numel();
            tape.reshape(x, vec![1, n])?
        } else {
            x
        };
        let in_dim = tape.value(h).shape().get(1).copied().unwrap_or(0);
        if tape.value(h).rank() != 2 || in_dim != self.input_dim() {
            return Err(Error::Contract(format!(
                "network expects {} features, got input shape {:?}",
                self.input_dim(),
                tape.value(x).shape()
            )));
        }
        for (i, _) in self.layers.iter().enumerate() {
            let w = nodes.params[2 * i];
            let b = nodes.params[2 * i + 1];
            h = tape.matmul(h, w)?;
            h = tape.add(h, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        if single {
            let out = self.output_dim();
            h = tape.reshape(h, vec![out])?;
        }
        Ok(h)
    }

    /// Tape-free forward pass; one code path with training via a private
    /// tape, so inference and training values agree bit-exactly.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let nodes = self.register(&mut tape);
        let out = self.forward(&mut tape, &nodes, input)?;
        Ok(tape.value(out).clone())
    }

    /// Parameter tensors in registration order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    /// Mutable parameter tensors in registration order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }
}

/// Encoder `E(x; theta)`: observation to latent `[M * D]`.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    mlp: Mlp,
    m: usize,
    d: usize,
}

impl EncoderParams {
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        m: usize,
        d: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::Contract(format!(
                "latent split needs positive M and D, got M={m} D={d}"
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(m * d);
        Ok(EncoderParams { mlp: Mlp::init(&dims, rng)?, m, d })
    }

    /// Wraps an existing network whose output width splits into `m`
    /// sub-vectors of dimension `d`.
    pub fn from_mlp(mlp: Mlp, m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 || mlp.output_dim() != m * d {
            return Err(Error::Contract(format!(
                "encoder output width {} does not split as {m} x {d}",
                mlp.output_dim()
            )));
        }
        Ok(EncoderParams { mlp, m, d })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Latent width `M * D`.
    pub fn latent_dim(&self) -> usize {
        self.m * self.d
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// `z_e(x)`: deterministic latent for a single `[N]` observation or a
    /// `[B, N]` batch.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.apply(x)
    }
}

/// Inference head `R(z_d; delta)`: received latent to class logits.
#[derive(Clone, Debug)]
pub struct InferenceParams {
    mlp: Mlp,
    num_classes: usize,
}

impl InferenceParams {
    pub fn init(
        latent_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Contract(format!(
                "classification needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut dims = vec![latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        Ok(InferenceParams { mlp: Mlp::init(&dims, rng)?, num_classes })
    }

    pub fn from_mlp(mlp: Mlp, num_classes: usize) -> Result<Self> {
        if mlp.output_dim() != num_classes {
            return Err(Error::Contract(format!(
                "head emits {} logits for {num_classes} classes",
                mlp.output_dim()
            )));
        }
        Ok(InferenceParams { mlp, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Class logits for a single `[M * D]` latent or a `[B, M * D]` batch;
    /// the predicted class is the argmax.
    pub fn infer(&self, z_d: &Tensor) -> Result<Tensor> {
        self.mlp.apply(z_d)
    }
}

/// Everything training produces and evaluation consumes.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub encoder: EncoderParams,
    pub head: InferenceParams,
    pub codebook: NestedCodebook,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::channel::SdmcChannel;
    use crate::rng::{stream, StreamKind};

    fn zero_mlp(dims: &[usize]) -> Mlp {
        let layers = dims
            .windows(2)
            .map(|p| DenseLayer {
                w: Tensor::zeros(vec![p[0], p[1]]),
                b: Tensor::zeros(vec![p[1]]),
            })
            .collect();
        Mlp::from_layers(layers).unwrap()
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let mlp = zero_mlp(&[3, 4, 2]);
        let out = mlp.apply(&Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);
    }

    #[test]
    fn encoder_output_width_is_m_times_d() {
        let mut rng = stream(1, StreamKind::WeightInit, 0);
        let enc = EncoderParams::init(8, &[16], 16, 2, &mut rng).unwrap();
        let z = enc.encode(&Tensor::from_vec(vec![0.1; 8]).unwrap()).unwrap();
        assert_eq!(z.shape(), &[32]);
        let batch = enc.encode(&Tensor::matrix(5, 8, vec![0.1; 40]).unwrap()).unwrap();
        assert_eq!(batch.shape(), &[5, 32]);
    }

    #[test]
    fn encoder_rejects_wrong_input_width() {
        let mut rng = stream(1, StreamKind::WeightInit, 0);
        let enc = EncoderParams::init(8, &[16], 4, 2, &mut rng).unwrap();
        assert!(enc.encode(&Tensor::from_vec(vec![0.1; 7]).unwrap()).is_err());
    }

    #[test]
    fn encoder_gradients_match_fd() {
        let mut rng = stream(2, StreamKind::WeightInit, 0);
        let enc = EncoderParams::init(3, &[5], 2, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(2, 3, vec![0.4, -0.3, 0.9, 0.2, 0.8, -0.5]).unwrap());
        let nodes = enc.mlp.register(&mut tape);
        let z = enc.mlp.forward(&mut tape, &nodes, x).unwrap();
        let loss = tape.sum(z).unwrap();
        gradcheck::check(&tape, loss).unwrap();
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let head = InferenceParams::from_mlp(zero_mlp(&[4, 3]), 3).unwrap();
        let logits = head.infer(&Tensor::from_vec(vec![0.7, -0.7, 0.1, 0.9]).unwrap()).unwrap();
        assert_eq!(logits.values(), &[0.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let l = tape.input(logits);
        let p = tape.softmax(l).unwrap();
        for v in tape.value(p).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn head_logit_width_matches_classes() {
        let mut rng = stream(3, StreamKind::WeightInit, 0);
        let head = InferenceParams::init(32, &[64], 10, &mut rng).unwrap();
        let logits = head.infer(&Tensor::from_vec(vec![0.0; 32]).unwrap()).unwrap();
        assert_eq!(logits.shape(), &[10]);
    }

    #[test]
    fn head_gradients_match_fd() {
        let mut rng = stream(4, StreamKind::WeightInit, 0);
        let head = InferenceParams::init(4, &[6], 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let z = tape.input(Tensor::matrix(3, 4, vec![0.3; 12]).unwrap());
        let nodes = head.mlp.register(&mut tape);
        let logits = head.mlp.forward(&mut tape, &nodes, z).unwrap();
        let loss = tape.cross_entropy(logits, &[0, 2, 1]).unwrap();
        gradcheck::check(&tape, loss).unwrap();
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let make = || {
            let mut rng = stream(9, StreamKind::WeightInit, 0);
            EncoderParams::init(4, &[8, 8], 4, 2, &mut rng).unwrap()
        };
        let (a, b) = (make(), make());
        for (ta, tb) in a.mlp.tensors().iter().zip(b.mlp.tensors()) {
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn pipeline_composes_end_to_end() {
        // x -> z_e -> quantize -> transmit -> lookup -> logits, one
        // operation per arrow, with shapes agreeing at every joint.
        let mut rng = stream(5, StreamKind::WeightInit, 0);
        let enc = EncoderParams::init(4, &[8], 4, 2, &mut rng).unwrap();
        let head = InferenceParams::init(8, &[8], 3, &mut rng).unwrap();
        let mut cb = NestedCodebook::new(2, 4).unwrap();
        let mut cw_rng = stream(5, StreamKind::CodewordInit, 1);
        cb.extend_level(1, &[0.5, 0.5], &mut cw_rng).unwrap();
        cb.set_trained_levels(1).unwrap();

        let x = Tensor::from_vec(vec![0.2, -0.4, 0.8, 0.0]).unwrap();
        let z_e = enc.encode(&x).unwrap();
        let q = cb.quantize(&z_e, 1).unwrap();
        let ch = SdmcChannel::for_level(1, 0.0).unwrap();
        let mut ch_rng = stream(5, StreamKind::ChannelEval, 0);
        let received = ch.transmit(&q.indices, &mut ch_rng).unwrap();
        let z_d = cb.lookup(&received, 1).unwrap();
        let logits = head.infer(&z_d).unwrap();
        assert_eq!(logits.shape(), &[3]);
        assert_eq!(z_d.values(), q.quantized.values());
    }
}
