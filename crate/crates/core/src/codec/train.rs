//! Codec training: VAE-style pretraining on videos, then decoder adaptation
//! on masks with a combined focal + dice objective.

use rand::seq::SliceRandom;

use super::{init_head, mask_to_video, Codec, DecodeStrategy};
use crate::error::NumericsError;
use crate::movingshapes::MaskTensor;
use crate::rng::SeedStream;
use crate::tensor::optim::{AdamW, AdamWConfig};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Mean epoch losses from a training run.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epoch_recon: Vec<f64>,
    pub epoch_kl: Vec<f64>,
}

/// Focal term for a single probability `p_t` (the probability assigned to
/// the true class): alpha * (1 - p_t)^gamma * (-ln p_t).
pub fn focal_term(p_t: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * (1.0 - p_t).powf(gamma) * (-p_t.ln())
}

/// Soft dice loss with +1 smoothing on a probability/target pair, computed
/// off-tape; the on-tape twin lives in [`focal_dice_on_tape`].
pub fn dice_loss_value<T: Real>(probs: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut gsum = 0.0f64;
    for (&p, &g) in probs.data().iter().zip(target.data()) {
        inter += p.to_f64() * g.to_f64();
        psum += p.to_f64();
        gsum += g.to_f64();
    }
    1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0)
}

/// Combined focal (alpha = 0.25, gamma = 2) + dice loss over logits, built on
/// the tape so gradients reach the decoder. `target` holds 0/1 values.
pub fn focal_dice_on_tape<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    target: Var,
) -> Result<Var, NumericsError> {
    let p = tape.sigmoid(logits)?;
    let one_minus_p = tape.affine(p, -1.0, 1.0)?;
    let one_minus_t = tape.affine(target, -1.0, 1.0)?;
    let neg_logits = tape.neg(logits)?;
    // -ln p = softplus(-x); -ln(1-p) = softplus(x)
    let nlp = tape.softplus(neg_logits)?;
    let nl1p = tape.softplus(logits)?;
    // positive class: alpha (1-p)^2 (-ln p)
    let q2 = tape.mul(one_minus_p, one_minus_p)?;
    let pos = tape.mul(q2, nlp)?;
    let pos = tape.mul(pos, target)?;
    let pos = tape.affine(pos, FOCAL_ALPHA, 0.0)?;
    // negative class: (1 - alpha) p^2 (-ln(1-p))
    let p2 = tape.mul(p, p)?;
    let neg = tape.mul(p2, nl1p)?;
    let neg = tape.mul(neg, one_minus_t)?;
    let neg = tape.affine(neg, 1.0 - FOCAL_ALPHA, 0.0)?;
    let focal_map = tape.add(pos, neg)?;
    let focal = tape.mean_all(focal_map)?;

    // dice on probabilities with +1 smoothing
    let inter = tape.mul(p, target)?;
    let inter = tape.sum_all(inter)?;
    let psum = tape.sum_all(p)?;
    let gsum = tape.sum_all(target)?;
    let num = tape.affine(inter, 2.0, 1.0)?;
    let den_sum = tape.add(psum, gsum)?;
    let den = tape.affine(den_sum, 1.0, 1.0)?;
    let ratio = tape.scalar_div(num, den)?;
    let dice = tape.affine(ratio, -1.0, 1.0)?;

    tape.add(focal, dice)
}

impl<T: Real> Codec<T> {
    /// Joint encoder+decoder pretraining: grayscale reconstruction MSE plus
    /// `kl_weight` times the posterior KL, on the video split. Computes the
    /// latent normalization constants afterwards; the encoder is frozen from
    /// here on.
    pub fn pretrain(
        &mut self,
        videos: &[Tensor<T>],
        epochs: usize,
        lr: f64,
        weight_decay: f64,
        batch: usize,
        seed: u64,
    ) -> Result<PretrainReport, NumericsError> {
        if videos.is_empty() {
            return Err(NumericsError::Contract("pretrain needs a non-empty video split".into()));
        }
        let stream = SeedStream::new(seed, "codec-pretrain");
        let cfg = AdamWConfig { lr, weight_decay, ..Default::default() };
        let dims = self.pretrain_param_dims();
        let mut opt = AdamW::new(cfg, &dims.iter().map(|d| d.as_slice()).collect::<Vec<_>>());
        let mut report = PretrainReport { epoch_recon: Vec::new(), epoch_kl: Vec::new() };

        let mut step = 0u64;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..videos.len()).collect();
            order.shuffle(&mut stream.rng(1_000_000 + epoch as u64));
            let mut recon_sum = 0.0;
            let mut kl_sum = 0.0;
            let mut batches = 0.0;
            for chunk in order.chunks(batch.max(1)) {
                let clips: Vec<&Tensor<T>> = chunk.iter().map(|&i| &videos[i]).collect();
                let (recon, kl) = self.pretrain_step(&clips, &mut opt, &stream, step)?;
                recon_sum += recon;
                kl_sum += kl;
                batches += 1.0;
                step += 1;
            }
            report.epoch_recon.push(recon_sum / batches);
            report.epoch_kl.push(kl_sum / batches);
        }

        // Normalization constants over the posterior means of the corpus.
        let means: Vec<Tensor<T>> =
            videos.iter().map(|v| self.encode(v).map(|(m, _)| m)).collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor<T>> = means.iter().collect();
        self.norm = Some(super::compute_norm_constants(&refs)?);
        Ok(report)
    }

    fn pretrain_step(
        &mut self,
        clips: &[&Tensor<T>],
        opt: &mut AdamW<T>,
        stream: &SeedStream,
        step: u64,
    ) -> Result<(f64, f64), NumericsError> {
        let mut tape = Tape::new();
        let evars = self.encoder_vars(&mut tape, true)?;
        let dvars = self.decoder_vars(&mut tape, &self.decoder.clone(), true)?;

        // Stack clips along the frame axis; frames are the conv batch.
        let x_val = concat_frames(clips);
        let gray = super::grayscale(&x_val);
        let x = tape.constant(x_val)?;
        let (mean, logvar) = self.encode_on_tape(&mut tape, &evars, x)?;

        // reparameterized sample
        let eps_val = {
            let mut rng = stream.rng(2_000_000 + step);
            Tensor::from_vec(
                tape.value(mean).dims(),
                (0..tape.value(mean).numel()).map(|_| crate::rng::normal(&mut rng)).collect(),
            )
        };
        let eps = tape.constant(eps_val)?;
        let half_logvar = tape.affine(logvar, 0.5, 0.0)?;
        let std = tape.exp(half_logvar)?;
        let noise = tape.mul(std, eps)?;
        let z = tape.add(mean, noise)?;

        let logits = self.decode_on_tape(&mut tape, &dvars, z)?;
        let probs = tape.sigmoid(logits)?;
        let target = tape.constant(gray)?;
        let diff = tape.sub(probs, target)?;
        let sq = tape.mul(diff, diff)?;
        let recon = tape.mean_all(sq)?;

        // KL(q || N(0,1)) = -0.5 mean(1 + logvar - mean^2 - exp(logvar))
        let mean_sq = tape.mul(mean, mean)?;
        let exp_logvar = tape.exp(logvar)?;
        let t1 = tape.affine(logvar, 1.0, 1.0)?;
        let t2 = tape.sub(t1, mean_sq)?;
        let t3 = tape.sub(t2, exp_logvar)?;
        let kl_mean = tape.mean_all(t3)?;
        let kl = tape.affine(kl_mean, -0.5, 0.0)?;

        let kl_w = tape.affine(kl, self.cfg.kl_weight, 0.0)?;
        let loss = tape.add(recon, kl_w)?;

        let recon_val = tape.value(recon).item().to_f64();
        let kl_val = tape.value(kl).item().to_f64();

        let var_order = [
            evars.conv1, evars.down1, evars.down2, evars.conv_out,
            dvars.conv_in, dvars.up1, dvars.up2, dvars.conv_out,
        ];
        let mut grads_map = tape.backward(loss)?;
        let grads: Vec<Option<Tensor<T>>> = var_order
            .iter()
            .flat_map(|(w, b)| [grads_map.take(*w), grads_map.take(*b)])
            .collect();
        let grad_refs: Vec<Option<&Tensor<T>>> = grads.iter().map(|g| g.as_ref()).collect();
        {
            let mut params = self.pretrain_params_mut();
            opt.step(&mut params, &grad_refs)?;
        }
        Ok((recon_val, kl_val))
    }

    fn pretrain_param_dims(&self) -> Vec<Vec<usize>> {
        self.pretrain_layers()
            .iter()
            .flat_map(|l| [l.w.dims().to_vec(), l.b.dims().to_vec()])
            .collect()
    }

    fn pretrain_layers(&self) -> Vec<&super::ConvLayer<T>> {
        vec![
            &self.encoder.conv1,
            &self.encoder.down1,
            &self.encoder.down2,
            &self.encoder.conv_out,
            &self.decoder.conv_in,
            &self.decoder.up1,
            &self.decoder.up2,
            &self.decoder.conv_out,
        ]
    }

    fn pretrain_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let layers = [
            &mut self.encoder.conv1,
            &mut self.encoder.down1,
            &mut self.encoder.down2,
            &mut self.encoder.conv_out,
            &mut self.decoder.conv_in,
            &mut self.decoder.up1,
            &mut self.decoder.up2,
            &mut self.decoder.conv_out,
        ];
        let mut out = Vec::with_capacity(16);
        for l in layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    /// Adapts the decoder for mask reconstruction with focal + dice loss.
    /// `conv-head` trains only the appended head; `finetuned` trains a full
    /// copy of the decoder. The encoder (and the pretrained decoder) stay
    /// untouched.
    pub fn finetune_decoder(
        &mut self,
        masks: &[MaskTensor],
        strategy: DecodeStrategy,
        epochs: usize,
        lr: f64,
        weight_decay: f64,
        seed: u64,
    ) -> Result<Vec<f64>, NumericsError> {
        if masks.is_empty() {
            return Err(NumericsError::Contract("finetune needs a non-empty mask split".into()));
        }
        if self.norm.is_none() {
            return Err(NumericsError::Contract("finetune requires a pretrained codec".into()));
        }
        if strategy == DecodeStrategy::Frozen {
            return Err(NumericsError::Contract(
                "frozen strategy has nothing trainable".into(),
            ));
        }
        if strategy == DecodeStrategy::ConvHead && self.head.is_none() {
            self.head = Some(init_head(&self.cfg, seed));
        }
        if strategy == DecodeStrategy::Finetuned && self.decoder_finetuned.is_none() {
            self.decoder_finetuned = Some(self.decoder.clone());
        }

        // Encoder is frozen: posterior means are fixed inputs, cache them.
        let inputs: Vec<Tensor<T>> = masks
            .iter()
            .map(|m| self.encode(&mask_to_video(m)).map(|(mean, _)| mean))
            .collect::<Result<_, _>>()?;
        let targets: Vec<Tensor<T>> = masks
            .iter()
            .map(|m| {
                Tensor::from_vec(
                    &[m.t, m.h, m.w, 1],
                    m.data.iter().map(|&v| if v != 0 { T::ONE } else { T::ZERO }).collect(),
                )
            })
            .collect();

        let cfg = AdamWConfig { lr, weight_decay, ..Default::default() };
        let dims = self.adapt_param_dims(strategy);
        let mut opt = AdamW::new(cfg, &dims.iter().map(|d| d.as_slice()).collect::<Vec<_>>());
        let stream = SeedStream::new(seed, "codec-finetune");
        let mut epoch_losses = Vec::with_capacity(epochs);

        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..masks.len()).collect();
            order.shuffle(&mut stream.rng(epoch as u64));
            let mut loss_sum = 0.0;
            for chunk in order.chunks(4) {
                let mut tape = Tape::new();
                let (dvars, hvars) = match strategy {
                    DecodeStrategy::ConvHead => {
                        let d = self.decoder_vars(&mut tape, &self.decoder.clone(), false)?;
                        let h =
                            self.head_vars(&mut tape, &self.head.clone().unwrap(), true)?;
                        (d, Some(h))
                    }
                    DecodeStrategy::Finetuned => {
                        let d = self.decoder_vars(
                            &mut tape,
                            &self.decoder_finetuned.clone().unwrap(),
                            true,
                        )?;
                        (d, None)
                    }
                    DecodeStrategy::Frozen => unreachable!(),
                };
                let z_val = concat_frames(&chunk.iter().map(|&i| &inputs[i]).collect::<Vec<_>>());
                let t_val = concat_frames(&chunk.iter().map(|&i| &targets[i]).collect::<Vec<_>>());
                let z = tape.constant(z_val)?;
                let target = tape.constant(t_val)?;
                let mut logits = self.decode_on_tape(&mut tape, &dvars, z)?;
                if let Some(h) = &hvars {
                    logits = self.head_on_tape(&mut tape, h, logits)?;
                }
                let loss = focal_dice_on_tape(&mut tape, logits, target)?;
                loss_sum += tape.value(loss).item().to_f64();

                let var_pairs: Vec<(Var, Var)> = match strategy {
                    DecodeStrategy::ConvHead => {
                        let h = hvars.as_ref().unwrap();
                        vec![h.conv1, h.conv2]
                    }
                    DecodeStrategy::Finetuned => {
                        vec![dvars.conv_in, dvars.up1, dvars.up2, dvars.conv_out]
                    }
                    DecodeStrategy::Frozen => unreachable!(),
                };
                let mut grads_map = tape.backward(loss)?;
                let grads: Vec<Option<Tensor<T>>> = var_pairs
                    .iter()
                    .flat_map(|(w, b)| [grads_map.take(*w), grads_map.take(*b)])
                    .collect();
                let grad_refs: Vec<Option<&Tensor<T>>> = grads.iter().map(|g| g.as_ref()).collect();
                let mut params = self.adapt_params_mut(strategy);
                opt.step(&mut params, &grad_refs)?;
            }
            epoch_losses.push(loss_sum / (masks.len() as f64 / 4.0).ceil());
        }
        Ok(epoch_losses)
    }

    fn adapt_param_dims(&self, strategy: DecodeStrategy) -> Vec<Vec<usize>> {
        match strategy {
            DecodeStrategy::ConvHead => {
                let h = self.head.as_ref().unwrap();
                [&h.conv1, &h.conv2]
                    .iter()
                    .flat_map(|l| [l.w.dims().to_vec(), l.b.dims().to_vec()])
                    .collect()
            }
            DecodeStrategy::Finetuned => {
                let d = self.decoder_finetuned.as_ref().unwrap();
                [&d.conv_in, &d.up1, &d.up2, &d.conv_out]
                    .iter()
                    .flat_map(|l| [l.w.dims().to_vec(), l.b.dims().to_vec()])
                    .collect()
            }
            DecodeStrategy::Frozen => Vec::new(),
        }
    }

    fn adapt_params_mut(&mut self, strategy: DecodeStrategy) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        match strategy {
            DecodeStrategy::ConvHead => {
                let h = self.head.as_mut().unwrap();
                for l in [&mut h.conv1, &mut h.conv2] {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
            }
            DecodeStrategy::Finetuned => {
                let d = self.decoder_finetuned.as_mut().unwrap();
                for l in [&mut d.conv_in, &mut d.up1, &mut d.up2, &mut d.conv_out] {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
            }
            DecodeStrategy::Frozen => {}
        }
        out
    }

    /// Mask reconstruction through encode-mean -> decode(strategy) -> 0.5
    /// binarization; returns the per-sample J&F mean against the originals.
    pub fn reconstruction_jf(
        &self,
        masks: &[MaskTensor],
        strategy: DecodeStrategy,
    ) -> Result<f64, NumericsError> {
        let mut preds = Vec::with_capacity(masks.len());
        for m in masks {
            let (mean, _) = self.encode(&mask_to_video(m))?;
            let probs = self.decode(&mean, strategy)?;
            preds.push(super::binarize(&probs, 0.5));
        }
        let res = crate::metrics::evaluate_split(
            &preds,
            masks,
            &[],
            &crate::metrics::EvalConfig::default(),
        )?;
        Ok(res.mean_jf)
    }
}

/// Concatenates `[T_i, H, W, C]` tensors along the frame axis.
fn concat_frames<T: Real>(clips: &[&Tensor<T>]) -> Tensor<T> {
    let tail = &clips[0].dims()[1..];
    let total_t: usize = clips.iter().map(|c| c.dims()[0]).sum();
    let mut dims = vec![total_t];
    dims.extend_from_slice(tail);
    let mut data = Vec::with_capacity(dims.iter().product());
    for c in clips {
        data.extend_from_slice(c.data());
    }
    Tensor::from_vec(&dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;

    #[test]
    fn focal_term_examples() {
        // perfect prediction costs nothing
        assert_eq!(focal_term(1.0, FOCAL_ALPHA, FOCAL_GAMMA), 0.0);
        // p_t = 0.5: 0.25 * 0.25 * ln 2
        let got = focal_term(0.5, FOCAL_ALPHA, FOCAL_GAMMA);
        assert!((got - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((got - 0.04332).abs() < 1e-4);
    }

    #[test]
    fn dice_endpoints() {
        let ones = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0f64; 4]);
        assert!(dice_loss_value(&ones, &ones).abs() < 1e-12);
        let p = Tensor::from_vec(&[1, 10, 10, 1], {
            let mut v = vec![0.0f64; 100];
            v[..50].iter_mut().for_each(|x| *x = 1.0);
            v
        });
        let g = Tensor::from_vec(&[1, 10, 10, 1], {
            let mut v = vec![0.0f64; 100];
            v[50..].iter_mut().for_each(|x| *x = 1.0);
            v
        });
        let d = dice_loss_value(&p, &g);
        assert!(d > 0.99, "disjoint dice {d}");
    }

    #[test]
    fn on_tape_loss_matches_value_helpers() {
        let mut tape = Tape::<f64>::new();
        let logits_val =
            Tensor::from_vec(&[1, 2, 2, 1], vec![2.0, -1.0, 0.5, -3.0]);
        let target_val = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 0.0, 1.0, 0.0]);
        let logits = tape.constant(logits_val.clone()).unwrap();
        let target = tape.constant(target_val.clone()).unwrap();
        let loss = focal_dice_on_tape(&mut tape, logits, target).unwrap();
        // recompute by hand
        let probs = logits_val.map(|x| 1.0 / (1.0 + (-x).exp()));
        let mut focal = 0.0;
        for (&p, &t) in probs.data().iter().zip(target_val.data()) {
            let p_t = if t > 0.5 { p } else { 1.0 - p };
            let alpha_t = if t > 0.5 { FOCAL_ALPHA } else { 1.0 - FOCAL_ALPHA };
            focal += focal_term(p_t, alpha_t, FOCAL_GAMMA);
        }
        focal /= 4.0;
        let dice = dice_loss_value(&probs, &target_val);
        let want = focal + dice;
        let got = tape.value(loss).item();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn finetune_contract_errors() {
        let mut codec = Codec::<f32>::init(
            CodecConfig { latent_channels: 4, base_width: 8, kl_weight: 1e-4 },
            0,
        );
        let mask = MaskTensor::new(1, 16, 16);
        let err = codec.finetune_decoder(&[mask.clone()], DecodeStrategy::Frozen, 1, 1e-3, 0.0, 0);
        assert!(err.is_err());
        // no pretraining yet -> missing constants
        let err = codec.finetune_decoder(&[mask], DecodeStrategy::Finetuned, 1, 1e-3, 0.0, 0);
        assert!(err.is_err());
        assert!(codec
            .pretrain(&[], 1, 1e-3, 0.0, 4, 0)
            .is_err());
    }
}
