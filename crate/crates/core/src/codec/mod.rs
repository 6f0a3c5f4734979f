//! The latent codec: a small stochastic convolutional autoencoder between
//! pixel space and the flow's latent space.
//!
//! The encoder maps `[T, H, W, 3]` clips to a 4x-downsampled latent with
//! per-position mean and log-variance; the decoder maps a latent back to a
//! one-channel mask logit map. Pretraining reconstructs the grayscale of the
//! video corpus; masks never reach the decoder until adaptation, which is
//! what the frozen / conv-head / finetuned comparison measures.

mod train;

pub use train::{dice_loss_value, focal_term, PretrainReport, FOCAL_ALPHA, FOCAL_GAMMA};

use crate::error::NumericsError;
use crate::io::frvs::Container;
use crate::movingshapes::MaskTensor;
use crate::rng::SeedStream;
use crate::tensor::{real, Real, Tape, Tensor, Var};

/// Geometry/width knobs; all parameter shapes derive from these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    /// Latent channels C; the encoder emits 2C.
    pub latent_channels: usize,
    /// First conv width; deeper layers use 2x this.
    pub base_width: usize,
    /// KL weight during pretraining.
    pub kl_weight: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { latent_channels: 8, base_width: 32, kl_weight: 1e-4 }
    }
}

/// Decoder adaptation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Frozen,
    ConvHead,
    Finetuned,
}

impl DecodeStrategy {
    pub fn name(self) -> &'static str {
        match self {
            DecodeStrategy::Frozen => "frozen",
            DecodeStrategy::ConvHead => "conv-head",
            DecodeStrategy::Finetuned => "finetuned",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "frozen" => Some(DecodeStrategy::Frozen),
            "conv-head" => Some(DecodeStrategy::ConvHead),
            "finetuned" => Some(DecodeStrategy::Finetuned),
            _ => None,
        }
    }
}

/// One conv layer's parameters: `[kh, kw, cin, cout]` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    fn init(rng: &mut rand_chacha::ChaCha8Rng, kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        // He scaling: the GELU stack roughly halves small-signal variance per
        // layer, and sqrt(1/fan) init lets deep activations collapse to the
        // point where reconstruction converges to a constant predictor.
        let fan_in = (kh * kw * cin) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = Tensor::from_vec(
            &[kh, kw, cin, cout],
            (0..kh * kw * cin * cout).map(|_| crate::rng::trunc_normal(rng, std)).collect(),
        );
        ConvLayer { w, b: Tensor::zeros(&[cout]) }
    }

    fn vars(&self, tape: &mut Tape<T>, trainable: bool) -> Result<(Var, Var), NumericsError> {
        Ok((tape.leaf(self.w.clone(), trainable)?, tape.leaf(self.b.clone(), trainable)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub conv1: ConvLayer<T>,
    pub down1: ConvLayer<T>,
    pub down2: ConvLayer<T>,
    pub conv_out: ConvLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub conv_in: ConvLayer<T>,
    pub up1: ConvLayer<T>,
    pub up2: ConvLayer<T>,
    pub conv_out: ConvLayer<T>,
}

/// Two 3x3 convs appended to the frozen decoder's logit output (residual).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// Per-channel latent normalization constants over the training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConstants<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Codec<T> {
    pub cfg: CodecConfig,
    pub encoder: EncoderParams<T>,
    /// Pretrained decoder; stays frozen after pretraining.
    pub decoder: DecoderParams<T>,
    /// Full-parameter adapted copy (the `finetuned` strategy).
    pub decoder_finetuned: Option<DecoderParams<T>>,
    /// Trainable head for the `conv-head` strategy.
    pub head: Option<HeadParams<T>>,
    pub norm: Option<NormConstants<T>>,
}

/// Encoder var bundle for on-tape forwards.
pub struct EncoderVars {
    conv1: (Var, Var),
    down1: (Var, Var),
    down2: (Var, Var),
    conv_out: (Var, Var),
}

impl EncoderVars {
    /// Parameter vars in the same order as the encoder's layer declaration.
    pub fn order(&self) -> Vec<Var> {
        [self.conv1, self.down1, self.down2, self.conv_out]
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

pub struct DecoderVars {
    conv_in: (Var, Var),
    up1: (Var, Var),
    up2: (Var, Var),
    conv_out: (Var, Var),
}

impl DecoderVars {
    pub fn order(&self) -> Vec<Var> {
        [self.conv_in, self.up1, self.up2, self.conv_out]
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

pub struct HeadVars {
    conv1: (Var, Var),
    conv2: (Var, Var),
}

impl HeadVars {
    pub fn order(&self) -> Vec<Var> {
        [self.conv1, self.conv2].iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

pub const LOGVAR_FLOOR: f64 = -30.0;
pub const LOGVAR_CEIL: f64 = 20.0;

impl<T: Real> Codec<T> {
    pub fn init(cfg: CodecConfig, seed: u64) -> Self {
        let mut rng = SeedStream::new(seed, "codec-init").rng(0);
        let (c, b) = (cfg.latent_channels, cfg.base_width);
        let mut encoder = EncoderParams {
            conv1: ConvLayer::init(&mut rng, 3, 3, 3, b),
            down1: ConvLayer::init(&mut rng, 4, 4, b, 2 * b),
            down2: ConvLayer::init(&mut rng, 4, 4, 2 * b, 2 * b),
            conv_out: ConvLayer::init(&mut rng, 3, 3, 2 * b, 2 * c),
        };
        // Start the posterior tight (std ~ e^-3): with unit variance the
        // reparameterized sample is all noise and reconstruction stalls.
        for v in encoder.conv_out.b.data_mut()[c..].iter_mut() {
            *v = real::<T>(-6.0);
        }
        // The decoder runs at full resolution, so it stays slimmer than the
        // encoder; masks and grayscale frames need little width.
        let decoder = DecoderParams {
            conv_in: ConvLayer::init(&mut rng, 3, 3, c, b),
            up1: ConvLayer::init(&mut rng, 4, 4, b, b),
            up2: ConvLayer::init(&mut rng, 4, 4, b, b / 2),
            conv_out: ConvLayer::init(&mut rng, 3, 3, b / 2, 1),
        };
        Codec { cfg, encoder, decoder, decoder_finetuned: None, head: None, norm: None }
    }

    pub fn encoder_vars(
        &self,
        tape: &mut Tape<T>,
        trainable: bool,
    ) -> Result<EncoderVars, NumericsError> {
        Ok(EncoderVars {
            conv1: self.encoder.conv1.vars(tape, trainable)?,
            down1: self.encoder.down1.vars(tape, trainable)?,
            down2: self.encoder.down2.vars(tape, trainable)?,
            conv_out: self.encoder.conv_out.vars(tape, trainable)?,
        })
    }

    pub fn decoder_vars(
        &self,
        tape: &mut Tape<T>,
        params: &DecoderParams<T>,
        trainable: bool,
    ) -> Result<DecoderVars, NumericsError> {
        Ok(DecoderVars {
            conv_in: params.conv_in.vars(tape, trainable)?,
            up1: params.up1.vars(tape, trainable)?,
            up2: params.up2.vars(tape, trainable)?,
            conv_out: params.conv_out.vars(tape, trainable)?,
        })
    }

    pub fn head_vars(
        &self,
        tape: &mut Tape<T>,
        params: &HeadParams<T>,
        trainable: bool,
    ) -> Result<HeadVars, NumericsError> {
        Ok(HeadVars {
            conv1: params.conv1.vars(tape, trainable)?,
            conv2: params.conv2.vars(tape, trainable)?,
        })
    }

    /// Encoder forward over `[N, H, W, 3]`: returns (mean, logvar), each
    /// `[N, H/4, W/4, C]`. Logvar is clamped to a sane band.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &EncoderVars,
        x: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let h = tape.conv2d(x, vars.conv1.0, Some(vars.conv1.1), 1, 1)?;
        let h = tape.gelu(h)?;
        let h = tape.conv2d(h, vars.down1.0, Some(vars.down1.1), 2, 1)?;
        let h = tape.gelu(h)?;
        let h = tape.conv2d(h, vars.down2.0, Some(vars.down2.1), 2, 1)?;
        let h = tape.gelu(h)?;
        let out = tape.conv2d(h, vars.conv_out.0, Some(vars.conv_out.1), 1, 1)?;
        let c = self.cfg.latent_channels;
        let mean = tape.slice(out, 3, 0, c)?;
        let logvar_raw = tape.slice(out, 3, c, c)?;
        let logvar = tape.clamp(logvar_raw, LOGVAR_FLOOR, LOGVAR_CEIL)?;
        Ok((mean, logvar))
    }

    /// Decoder forward over `[N, h, w, C]`: returns logits `[N, H, W, 1]`.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &DecoderVars,
        z: Var,
    ) -> Result<Var, NumericsError> {
        let h = tape.conv2d(z, vars.conv_in.0, Some(vars.conv_in.1), 1, 1)?;
        let h = tape.gelu(h)?;
        let h = tape.tconv2d(h, vars.up1.0, Some(vars.up1.1), 2, 1)?;
        let h = tape.gelu(h)?;
        let h = tape.tconv2d(h, vars.up2.0, Some(vars.up2.1), 2, 1)?;
        let h = tape.gelu(h)?;
        tape.conv2d(h, vars.conv_out.0, Some(vars.conv_out.1), 1, 1)
    }

    /// Residual conv head on logits: `x + conv2(gelu(conv1(x)))`.
    pub fn head_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &HeadVars,
        logits: Var,
    ) -> Result<Var, NumericsError> {
        let h = tape.conv2d(logits, vars.conv1.0, Some(vars.conv1.1), 1, 1)?;
        let h = tape.gelu(h)?;
        let delta = tape.conv2d(h, vars.conv2.0, Some(vars.conv2.1), 1, 1)?;
        tape.add(logits, delta)
    }

    /// Deterministic encode of a clip in [0, 1]; mask inputs must be lifted
    /// first ([`mask_to_video`]). Spatial dims must be divisible by 4.
    pub fn encode(&self, clip: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NumericsError> {
        let d = clip.dims();
        if d.len() != 4 || d[3] != 3 {
            return Err(NumericsError::ShapeMismatch {
                op: "encode",
                lhs: d.to_vec(),
                rhs: vec![0, 0, 0, 3],
            });
        }
        if d[1] % 4 != 0 || d[2] % 4 != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "encode (spatial dims must divide by 4)",
                lhs: d.to_vec(),
                rhs: vec![d[0], d[1] / 4 * 4, d[2] / 4 * 4, 3],
            });
        }
        let mut tape = Tape::new();
        let x = tape.constant(clip.clone())?;
        let vars = self.encoder_vars(&mut tape, false)?;
        let (mean, logvar) = self.encode_on_tape(&mut tape, &vars, x)?;
        Ok((tape.value(mean).clone(), tape.value(logvar).clone()))
    }

    /// Decode a (denormalized) mask latent into per-pixel probabilities
    /// `[T, H, W]` under the chosen strategy.
    pub fn decode(
        &self,
        z: &Tensor<T>,
        strategy: DecodeStrategy,
    ) -> Result<Tensor<T>, NumericsError> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let logits = match strategy {
            DecodeStrategy::Frozen => {
                let vars = self.decoder_vars(&mut tape, &self.decoder, false)?;
                self.decode_on_tape(&mut tape, &vars, zv)?
            }
            DecodeStrategy::ConvHead => {
                let head = self.head.as_ref().ok_or_else(|| {
                    NumericsError::Contract("conv-head strategy requires an adapted head".into())
                })?;
                let dvars = self.decoder_vars(&mut tape, &self.decoder, false)?;
                let raw = self.decode_on_tape(&mut tape, &dvars, zv)?;
                let hvars = self.head_vars(&mut tape, head, false)?;
                self.head_on_tape(&mut tape, &hvars, raw)?
            }
            DecodeStrategy::Finetuned => {
                let dec = self.decoder_finetuned.as_ref().ok_or_else(|| {
                    NumericsError::Contract(
                        "finetuned strategy requires an adapted decoder".into(),
                    )
                })?;
                let vars = self.decoder_vars(&mut tape, dec, false)?;
                self.decode_on_tape(&mut tape, &vars, zv)?
            }
        };
        let probs = tape.sigmoid(logits)?;
        let v = tape.value(probs);
        let d = v.dims().to_vec();
        v.reshaped(&[d[0], d[1], d[2]])
    }

    /// Per-channel normalization: (z - mean) / std.
    pub fn normalize(&self, z: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
        let norm = self.norm.as_ref().ok_or_else(|| {
            NumericsError::Contract("normalization constants not computed yet".into())
        })?;
        norm_apply(z, norm, false)
    }

    /// Exact inverse of [`Codec::normalize`].
    pub fn denormalize(&self, z: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
        let norm = self.norm.as_ref().ok_or_else(|| {
            NumericsError::Contract("normalization constants not computed yet".into())
        })?;
        norm_apply(z, norm, true)
    }

    /// Digest of all encoder parameter bytes; the frozen-encoder contract
    /// asserts this never changes after pretraining.
    pub fn encoder_digest(&self) -> String {
        let mut bytes = Vec::new();
        for layer in [
            &self.encoder.conv1,
            &self.encoder.down1,
            &self.encoder.down2,
            &self.encoder.conv_out,
        ] {
            bytes.extend_from_slice(&layer.w.to_le_bytes());
            bytes.extend_from_slice(&layer.b.to_le_bytes());
        }
        crate::io::sha256_hex(&bytes)
    }

    // ── checkpointing ────────────────────────────────────────────────

    pub fn save(&self, container: &mut Container, prefix: &str) {
        let mut push = |name: String, t: &Tensor<T>| container.push_real(name, t);
        for (name, layer) in self.named_layers() {
            push(format!("{prefix}{name}.w"), &layer.w);
            push(format!("{prefix}{name}.b"), &layer.b);
        }
        if let Some(norm) = &self.norm {
            let c = norm.mean.len();
            push(format!("{prefix}norm.mean"), &Tensor::from_vec(&[c], norm.mean.clone()));
            push(format!("{prefix}norm.std"), &Tensor::from_vec(&[c], norm.std.clone()));
        }
    }

    pub fn load(cfg: CodecConfig, container: &Container, prefix: &str) -> Result<Self, NumericsError> {
        let mut codec = Codec::init(cfg, 0);
        let fetch = |name: String| -> Result<Option<Tensor<T>>, NumericsError> {
            Ok(container.get(&name).and_then(|e| e.to_real::<T>()))
        };
        // decoder_finetuned / head exist in the file only after adaptation
        if fetch(format!("{prefix}dec_ft.conv_in.w"))?.is_some() {
            codec.decoder_finetuned = Some(codec.decoder.clone());
        }
        if fetch(format!("{prefix}head.conv1.w"))?.is_some() {
            codec.head = Some(init_head(&codec.cfg, 0));
        }
        for (name, layer) in codec.named_layers_mut() {
            let w = fetch(format!("{prefix}{name}.w"))?;
            let b = fetch(format!("{prefix}{name}.b"))?;
            match (w, b) {
                (Some(w), Some(b)) => {
                    if w.dims() != layer.w.dims() || b.dims() != layer.b.dims() {
                        return Err(NumericsError::Contract(format!(
                            "checkpoint layer {name} dims {:?}/{:?} do not match config {:?}/{:?}",
                            w.dims(),
                            b.dims(),
                            layer.w.dims(),
                            layer.b.dims()
                        )));
                    }
                    layer.w = w;
                    layer.b = b;
                }
                _ => {
                    return Err(NumericsError::Contract(format!(
                        "checkpoint is missing codec layer {name}"
                    )))
                }
            }
        }
        let mean = fetch(format!("{prefix}norm.mean"))?;
        let std = fetch(format!("{prefix}norm.std"))?;
        if let (Some(m), Some(s)) = (mean, std) {
            codec.norm = Some(NormConstants {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            });
        }
        Ok(codec)
    }

    fn named_layers(&self) -> Vec<(String, &ConvLayer<T>)> {
        let mut out = vec![
            ("enc.conv1".to_string(), &self.encoder.conv1),
            ("enc.down1".to_string(), &self.encoder.down1),
            ("enc.down2".to_string(), &self.encoder.down2),
            ("enc.conv_out".to_string(), &self.encoder.conv_out),
            ("dec.conv_in".to_string(), &self.decoder.conv_in),
            ("dec.up1".to_string(), &self.decoder.up1),
            ("dec.up2".to_string(), &self.decoder.up2),
            ("dec.conv_out".to_string(), &self.decoder.conv_out),
        ];
        if let Some(d) = &self.decoder_finetuned {
            out.push(("dec_ft.conv_in".to_string(), &d.conv_in));
            out.push(("dec_ft.up1".to_string(), &d.up1));
            out.push(("dec_ft.up2".to_string(), &d.up2));
            out.push(("dec_ft.conv_out".to_string(), &d.conv_out));
        }
        if let Some(h) = &self.head {
            out.push(("head.conv1".to_string(), &h.conv1));
            out.push(("head.conv2".to_string(), &h.conv2));
        }
        out
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut ConvLayer<T>)> {
        let mut out: Vec<(String, &mut ConvLayer<T>)> = Vec::new();
        out.push(("enc.conv1".to_string(), &mut self.encoder.conv1));
        out.push(("enc.down1".to_string(), &mut self.encoder.down1));
        out.push(("enc.down2".to_string(), &mut self.encoder.down2));
        out.push(("enc.conv_out".to_string(), &mut self.encoder.conv_out));
        out.push(("dec.conv_in".to_string(), &mut self.decoder.conv_in));
        out.push(("dec.up1".to_string(), &mut self.decoder.up1));
        out.push(("dec.up2".to_string(), &mut self.decoder.up2));
        out.push(("dec.conv_out".to_string(), &mut self.decoder.conv_out));
        if let Some(d) = &mut self.decoder_finetuned {
            out.push(("dec_ft.conv_in".to_string(), &mut d.conv_in));
            out.push(("dec_ft.up1".to_string(), &mut d.up1));
            out.push(("dec_ft.up2".to_string(), &mut d.up2));
            out.push(("dec_ft.conv_out".to_string(), &mut d.conv_out));
        }
        if let Some(h) = &mut self.head {
            out.push(("head.conv1".to_string(), &mut h.conv1));
            out.push(("head.conv2".to_string(), &mut h.conv2));
        }
        out
    }
}

pub(crate) fn init_head<T: Real>(cfg: &CodecConfig, seed: u64) -> HeadParams<T> {
    let mut rng = SeedStream::new(seed, "codec-head-init").rng(0);
    let width = cfg.base_width / 2;
    HeadParams {
        conv1: ConvLayer::init(&mut rng, 3, 3, 1, width),
        conv2: ConvLayer::init(&mut rng, 3, 3, width, 1),
    }
}

fn norm_apply<T: Real>(
    z: &Tensor<T>,
    norm: &NormConstants<T>,
    inverse: bool,
) -> Result<Tensor<T>, NumericsError> {
    let c = norm.mean.len();
    let d = z.dims();
    if d.last() != Some(&c) {
        return Err(NumericsError::ShapeMismatch {
            op: "normalize_latent",
            lhs: d.to_vec(),
            rhs: vec![c],
        });
    }
    if norm.std.iter().any(|&s| s <= T::ZERO) {
        return Err(NumericsError::Contract("latent std constants must be positive".into()));
    }
    let mut data = z.data().to_vec();
    for chunk in data.chunks_exact_mut(c) {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = if inverse {
                *v * norm.std[i] + norm.mean[i]
            } else {
                (*v - norm.mean[i]) / norm.std[i]
            };
        }
    }
    Ok(Tensor::from_vec(d, data))
}

/// Draw from the encoder posterior: mean + exp(logvar/2) * eps.
pub fn sample_posterior<T: Real>(
    mean: &Tensor<T>,
    logvar: &Tensor<T>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Tensor<T>, NumericsError> {
    let floor = real::<T>(LOGVAR_FLOOR);
    let half = real::<T>(0.5);
    mean.zip(logvar, "sample_posterior", |m, lv| {
        let eps: T = crate::rng::normal(rng);
        m + (lv.max(floor) * half).exp() * eps
    })
}

/// Lifts a binary mask clip to a 3-channel video-shaped tensor.
pub fn mask_to_video<T: Real>(mask: &MaskTensor) -> Tensor<T> {
    let mut data = Vec::with_capacity(mask.data.len() * 3);
    for &m in &mask.data {
        let v = if m != 0 { T::ONE } else { T::ZERO };
        data.extend_from_slice(&[v, v, v]);
    }
    Tensor::from_vec(&[mask.t, mask.h, mask.w, 3], data)
}

/// Channel-mean grayscale target `[T, H, W, 1]` for pretraining.
pub fn grayscale<T: Real>(clip: &Tensor<T>) -> Tensor<T> {
    let d = clip.dims();
    assert_eq!(d[3], 3);
    let third = real::<T>(1.0 / 3.0);
    let data: Vec<T> = clip
        .data()
        .chunks_exact(3)
        .map(|px| (px[0] + px[1] + px[2]) * third)
        .collect();
    Tensor::from_vec(&[d[0], d[1], d[2], 1], data)
}

/// Binarize a probability clip at `threshold`.
pub fn binarize<T: Real>(probs: &Tensor<T>, threshold: f64) -> MaskTensor {
    let d = probs.dims();
    assert_eq!(d.len(), 3);
    let thr = real::<T>(threshold);
    MaskTensor::from_data(
        d[0],
        d[1],
        d[2],
        probs.data().iter().map(|&p| u8::from(p >= thr)).collect(),
    )
}

/// Per-channel mean/std over a set of latents.
pub fn compute_norm_constants<T: Real>(latents: &[&Tensor<T>]) -> Result<NormConstants<T>, NumericsError> {
    if latents.is_empty() {
        return Err(NumericsError::Contract("norm constants need at least one latent".into()));
    }
    let c = *latents[0].dims().last().unwrap();
    let mut count = 0f64;
    let mut mean = vec![0f64; c];
    let mut m2 = vec![0f64; c];
    for z in latents {
        for chunk in z.data().chunks_exact(c) {
            count += 1.0;
            for (i, &v) in chunk.iter().enumerate() {
                let v = v.to_f64();
                let delta = v - mean[i];
                mean[i] += delta / count;
                m2[i] += delta * (v - mean[i]);
            }
        }
    }
    let std: Vec<T> = m2
        .iter()
        .map(|&s| real::<T>((s / count).sqrt().max(1e-6)))
        .collect();
    Ok(NormConstants { mean: mean.into_iter().map(real::<T>).collect(), std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> CodecConfig {
        CodecConfig { latent_channels: 4, base_width: 8, kl_weight: 1e-4 }
    }

    fn random_clip(seed: u64, t: usize, h: usize, w: usize) -> Tensor<f32> {
        use rand::Rng;
        let mut rng = SeedStream::new(seed, "codec-test").rng(0);
        Tensor::from_vec(&[t, h, w, 3], (0..t * h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn encode_shape_contract() {
        let codec = Codec::<f32>::init(CodecConfig::default(), 0);
        let clip = random_clip(0, 8, 32, 32);
        let (mean, logvar) = codec.encode(&clip).unwrap();
        assert_eq!(mean.dims(), &[8, 8, 8, 8]);
        assert_eq!(logvar.dims(), &[8, 8, 8, 8]);
        // determinism
        let (mean2, _) = codec.encode(&clip).unwrap();
        assert_eq!(mean, mean2);
        // all-zero clip stays finite
        let zero = Tensor::zeros(&[8, 32, 32, 3]);
        let (m0, lv0) = codec.encode(&zero).unwrap();
        assert!(m0.is_finite() && lv0.is_finite());
        // indivisible dims are a shape error
        let bad = Tensor::zeros(&[2, 30, 32, 3]);
        assert!(codec.encode(&bad).is_err());
    }

    #[test]
    fn decode_shape_and_range() {
        let mut codec = Codec::<f32>::init(tiny_cfg(), 1);
        codec.decoder_finetuned = Some(codec.decoder.clone());
        let z = Tensor::from_vec(&[2, 4, 4, 4], (0..128).map(|i| (i as f32 * 0.1).sin()).collect());
        for strategy in [DecodeStrategy::Frozen, DecodeStrategy::Finetuned] {
            let probs = codec.decode(&z, strategy).unwrap();
            assert_eq!(probs.dims(), &[2, 16, 16]);
            assert!(probs.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        assert!(codec.decode(&z, DecodeStrategy::ConvHead).is_err(), "no head adapted yet");
    }

    #[test]
    fn normalize_roundtrip_and_contract() {
        let mut codec = Codec::<f64>::init(tiny_cfg(), 2);
        let z = Tensor::from_vec(&[1, 2, 2, 4], (0..16).map(|i| i as f64 * 0.3 - 1.0).collect());
        assert!(codec.normalize(&z).is_err(), "constants must exist first");
        codec.norm = Some(NormConstants {
            mean: vec![0.5, -0.25, 1.0, 0.0],
            std: vec![2.0, 0.5, 1.5, 1.0],
        });
        let n = codec.normalize(&z).unwrap();
        let back = codec.denormalize(&n).unwrap();
        for (a, b) in z.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // constant tensor equal to the channel means normalizes to zero
        let mu = codec.norm.as_ref().unwrap().mean.clone();
        let z_mu = Tensor::from_vec(&[1, 1, 1, 4], mu);
        assert!(codec.normalize(&z_mu).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn posterior_sampling_statistics() {
        let mean = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0f64, -2.0]);
        let logvar = Tensor::from_vec(&[1, 1, 1, 2], vec![-1.0f64, 0.5]);
        let stream = SeedStream::new(9, "posterior");
        // floor-clamped logvar returns the mean
        let neg_inf = Tensor::from_vec(&[1, 1, 1, 2], vec![-1e30f64, -1e30]);
        let s = sample_posterior(&mean, &neg_inf, &mut stream.rng(0)).unwrap();
        for (a, b) in s.data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        // same rng state twice -> identical draw
        let a = sample_posterior(&mean, &logvar, &mut stream.rng(1)).unwrap();
        let b = sample_posterior(&mean, &logvar, &mut stream.rng(1)).unwrap();
        assert_eq!(a, b);
        // sample variance ~ exp(logvar) within 10% over 1e4 draws
        let n = 10_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for i in 0..n {
            let s = sample_posterior(&mean, &logvar, &mut stream.rng(100 + i)).unwrap();
            for k in 0..2 {
                sums[k] += s.data()[k];
                sq[k] += s.data()[k] * s.data()[k];
            }
        }
        for k in 0..2 {
            let m = sums[k] / n as f64;
            let var = sq[k] / n as f64 - m * m;
            let want = logvar.data()[k].exp();
            assert!((var - want).abs() / want < 0.1, "channel {k}: {var} vs {want}");
        }
    }

    #[test]
    fn mask_lift_and_grayscale() {
        let mut mask = MaskTensor::new(1, 4, 4);
        mask.data[5] = 1;
        let lifted = mask_to_video::<f32>(&mask);
        assert_eq!(lifted.dims(), &[1, 4, 4, 3]);
        assert_eq!(&lifted.data()[15..18], &[1.0, 1.0, 1.0]);
        assert_eq!(lifted.data().iter().sum::<f32>(), 3.0);
        let gray = grayscale(&lifted);
        assert_eq!(gray.dims(), &[1, 4, 4, 1]);
        assert_eq!(gray.data()[5], 1.0);
    }

    #[test]
    fn norm_constants_standardize_their_corpus() {
        let a = random_clip(5, 4, 16, 16);
        let codec = Codec::<f32>::init(tiny_cfg(), 5);
        let (mean_a, _) = codec.encode(&a).unwrap();
        let b = random_clip(6, 4, 16, 16);
        let (mean_b, _) = codec.encode(&b).unwrap();
        let norm = compute_norm_constants(&[&mean_a, &mean_b]).unwrap();
        let mut codec = codec;
        codec.norm = Some(norm);
        let na = codec.normalize(&mean_a).unwrap();
        let nb = codec.normalize(&mean_b).unwrap();
        let c = 4;
        for ch in 0..c {
            let vals: Vec<f64> = na
                .data()
                .iter()
                .chain(nb.data())
                .skip(ch)
                .step_by(c)
                .map(|&v| v as f64)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() <= 0.1, "channel {ch} mean {m}");
            assert!((0.9..=1.1).contains(&sd), "channel {ch} std {sd}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut codec = Codec::<f32>::init(tiny_cfg(), 3);
        codec.decoder_finetuned = Some(codec.decoder.clone());
        codec.head = Some(init_head(&codec.cfg, 3));
        codec.norm = Some(NormConstants { mean: vec![0.0; 4], std: vec![1.0; 4] });
        let mut c = Container::new();
        codec.save(&mut c, "codec.");
        let back = Codec::<f32>::load(tiny_cfg(), &c, "codec.").unwrap();
        assert_eq!(back.encoder_digest(), codec.encoder_digest());
        assert_eq!(back.decoder, codec.decoder);
        assert_eq!(back.decoder_finetuned, codec.decoder_finetuned);
        assert_eq!(back.head, codec.head);
        assert_eq!(back.norm, codec.norm);
    }
}
