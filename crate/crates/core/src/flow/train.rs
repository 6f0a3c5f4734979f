//! Flow training: latent caching, batch assembly, the optimizer loop, and
//! model evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{
    concat_channels, integrate_from, interpolate_state, noise_latent, sample_timestep,
    target_velocity, FlowConfig, Paradigm,
};
use crate::codec::{binarize, mask_to_video, sample_posterior, Codec, DecodeStrategy};
use crate::error::{FlowError, IoError, NumericsError};
use crate::io::frvs::Container;
use crate::metrics::{evaluate_split, EvalConfig, EvalResult};
use crate::movingshapes::{MaskTensor, Sample};
use crate::net::VelocityNet;
use crate::rng::SeedStream;
use crate::tensor::optim::{AdamW, AdamWConfig};
use crate::tensor::{Real, Tape, Tensor};

/// A sample with its latents cached: the encoder is frozen during flow
/// training, so posterior statistics never change.
#[derive(Debug, Clone)]
pub struct EncodedSample<T> {
    pub index: usize,
    /// Raw (unnormalized) posterior mean of the video.
    pub video_mean: Tensor<T>,
    pub video_logvar: Tensor<T>,
    /// Normalized posterior mean of the lifted mask: the flow target z1.
    pub mask_latent: Tensor<T>,
    pub token_ids: Vec<u32>,
    pub gt_mask: MaskTensor,
    pub video_digest: String,
}

#[derive(Debug, Clone)]
pub struct EncodedDataset<T> {
    pub samples: Vec<EncodedSample<T>>,
    /// Positions of paired-query entries (same video, different referents).
    pub pairs: Vec<(usize, usize)>,
}

/// Encodes a split once through the frozen codec, in parallel.
pub fn encode_dataset<T: Real>(
    codec: &Codec<T>,
    samples: &[Sample],
    threads: usize,
) -> Result<EncodedDataset<T>, FlowError> {
    if codec.norm.is_none() {
        return Err(FlowError::Contract(
            "encode_dataset requires a pretrained codec with normalization constants".into(),
        ));
    }
    let workers = threads.max(1).min(samples.len().max(1));
    let chunk = samples.len().div_ceil(workers);
    let results: Vec<Result<Vec<EncodedSample<T>>, FlowError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in samples.chunks(chunk.max(1)) {
            handles.push(scope.spawn(move || {
                part.iter()
                    .map(|s| {
                        let (mean, logvar) = codec.encode(&s.video.to_dtype::<T>())?;
                        let (mask_mean, _) = codec.encode(&mask_to_video::<T>(&s.mask))?;
                        let mask_latent = codec.normalize(&mask_mean)?;
                        Ok(EncodedSample {
                            index: s.index,
                            video_mean: mean,
                            video_logvar: logvar,
                            mask_latent,
                            token_ids: s.query.token_ids().to_vec(),
                            gt_mask: s.mask.clone(),
                            video_digest: s.video_digest.clone(),
                        })
                    })
                    .collect()
            }));
        }
        handles.into_iter().map(|h| h.join().expect("encode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for r in results {
        out.extend(r?);
    }
    let pairs = {
        let mut by_digest: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (pos, s) in out.iter().enumerate() {
            by_digest.entry(s.video_digest.as_str()).or_default().push(pos);
        }
        let mut pairs: Vec<(usize, usize)> = by_digest
            .into_values()
            .filter(|v| v.len() == 2)
            .map(|v| (v[0], v[1]))
            .collect();
        pairs.sort_unstable();
        pairs
    };
    Ok(EncodedDataset { samples: out, pairs })
}

/// One training batch: flow starts, DVI channels, targets, conditions, times.
pub struct FlowBatch<T> {
    pub start: Vec<Tensor<T>>,
    pub dvi_cond: Vec<Tensor<T>>,
    pub z1: Vec<Tensor<T>>,
    pub token_ids: Vec<Vec<u32>>,
    pub ts: Vec<f64>,
}

/// Assembles a batch: z0 from the posterior (sampled when SPA is on, mean
/// otherwise, normalized either way), z1 the cached normalized mask latent,
/// timesteps from the boundary-biased sampler for multi-step paradigms.
/// `draw_key` makes every (epoch, sample) visit an independent stream.
pub fn make_batch<T: Real>(
    data: &EncodedDataset<T>,
    picks: &[usize],
    codec: &Codec<T>,
    cfg: &FlowConfig,
    stream: &SeedStream,
    draw_key: impl Fn(usize) -> u64,
) -> Result<FlowBatch<T>, FlowError> {
    let mut batch = FlowBatch {
        start: Vec::with_capacity(picks.len()),
        dvi_cond: Vec::with_capacity(picks.len()),
        z1: Vec::with_capacity(picks.len()),
        token_ids: Vec::with_capacity(picks.len()),
        ts: Vec::with_capacity(picks.len()),
    };
    for &pos in picks {
        let s = &data.samples[pos];
        let key = draw_key(pos);
        let z0 = if cfg.spa && cfg.paradigm != Paradigm::Noise2MaskFlow {
            let mut rng = stream.rng(key.wrapping_mul(2).wrapping_add(1));
            let draw = sample_posterior(&s.video_mean, &s.video_logvar, &mut rng)?;
            codec.normalize(&draw)?
        } else {
            codec.normalize(&s.video_mean)?
        };
        let (start, dvi_cond) = match cfg.paradigm {
            Paradigm::Noise2MaskFlow => {
                let noise = noise_latent::<T>(z0.dims(), cfg.seed, key);
                (noise, z0)
            }
            _ => (z0.clone(), z0),
        };
        let t = if cfg.paradigm.is_multi_step() {
            let mut rng = stream.rng(key.wrapping_mul(2));
            sample_timestep(cfg.p_bbs, &mut rng)
        } else {
            0.0
        };
        batch.start.push(start);
        batch.dvi_cond.push(dvi_cond);
        batch.z1.push(s.mask_latent.clone());
        batch.token_ids.push(s.token_ids.clone());
        batch.ts.push(t);
    }
    Ok(batch)
}

/// One optimizer step; returns the batch loss.
pub fn train_step<T: Real>(
    batch: &FlowBatch<T>,
    net: &mut VelocityNet<T>,
    opt: &mut AdamW<T>,
    cfg: &FlowConfig,
) -> Result<f64, NumericsError> {
    let b = batch.start.len();
    let mut inputs = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for i in 0..b {
        let (state, target) = match cfg.paradigm {
            Paradigm::Video2MaskFlow | Paradigm::Noise2MaskFlow => {
                let zt = interpolate_state(&batch.start[i], &batch.z1[i], batch.ts[i])?;
                let u = target_velocity(&batch.start[i], &batch.z1[i])?;
                (zt, u)
            }
            Paradigm::OnestepVelocity => {
                let u = target_velocity(&batch.start[i], &batch.z1[i])?;
                (batch.start[i].clone(), u)
            }
            Paradigm::OnestepMask => (batch.start[i].clone(), batch.z1[i].clone()),
        };
        let state = if cfg.dvi { concat_channels(&state, &batch.dvi_cond[i])? } else { state };
        inputs.push(state);
        targets.push(target);
    }

    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true)?;
    let input_refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let id_refs: Vec<&[u32]> = batch.token_ids.iter().map(|v| v.as_slice()).collect();
    let out = net.forward_batch(&mut tape, &vars, &input_refs, &id_refs, &batch.ts)?;

    // Patch-space MSE equals latent-space MSE: same multiset of elements.
    let mut target_rows = Vec::with_capacity(tape.value(out).numel());
    for t in &targets {
        crate::net::patch_rows(t, &mut target_rows);
    }
    let target = tape.constant(Tensor::from_vec(tape.value(out).dims(), target_rows))?;
    let diff = tape.sub(out, target)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean_all(sq)?;
    let loss_val = tape.value(loss).item().to_f64();

    let order = VelocityNet::<T>::var_order(&vars);
    let mut grads_map = tape.backward(loss)?;
    let grads: Vec<Option<Tensor<T>>> = order.iter().map(|&v| grads_map.take(v)).collect();
    let grad_refs: Vec<Option<&Tensor<T>>> = grads.iter().map(|g| g.as_ref()).collect();
    let mut params = net.params_mut();
    opt.step(&mut params, &grad_refs)?;
    Ok(loss_val)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Run directory for checkpoints and the loss log.
    pub out_dir: Option<PathBuf>,
    /// Extra reproducibility checkpoint at this global step (0 = off).
    pub probe_step: u64,
    /// Resume from the newest epoch checkpoint in `out_dir`.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    /// (step, loss) per optimizer step of this run.
    pub losses: Vec<(u64, f64)>,
    pub start_epoch: usize,
}

/// The flow training loop. Shuffling, SPA draws, and timesteps derive from
/// (seed, epoch, sample), so runs are bit-reproducible and resumable.
pub fn train_flow<T: Real>(
    data: &EncodedDataset<T>,
    codec: &Codec<T>,
    net: &mut VelocityNet<T>,
    cfg: &FlowConfig,
    opts: &TrainOptions,
) -> Result<TrainLog, FlowError> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(FlowError::Contract("training split is empty".into()));
    }
    let stream = SeedStream::new(cfg.seed, "flow-train");
    let adam = AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() };
    let dims: Vec<Vec<usize>> =
        net.named_params().iter().map(|(_, t)| t.dims().to_vec()).collect();
    let mut opt = AdamW::new(adam, &dims.iter().map(|d| d.as_slice()).collect::<Vec<_>>());

    let mut start_epoch = 0usize;
    if opts.resume {
        if let Some(dir) = &opts.out_dir {
            if let Some((epoch, container)) = latest_checkpoint(dir)? {
                *net = VelocityNet::load(net.cfg, &container).map_err(FlowError::from)?;
                restore_opt_state(&mut opt, &container)?;
                start_epoch = epoch + 1;
            }
        }
    }

    let n = data.samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut step = start_epoch as u64 * steps_per_epoch;
    let mut losses = Vec::new();
    let mut history: Vec<f64> = Vec::new();

    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream.rng(10_000_000 + epoch as u64));
        for picks in order.chunks(cfg.batch_size) {
            let epoch_key = epoch as u64;
            let batch = make_batch(data, picks, codec, cfg, &stream, |pos| {
                epoch_key.wrapping_mul(0x1000_0000) + pos as u64
            })?;
            let loss = train_step(&batch, net, &mut opt, cfg).map_err(|e| match e {
                NumericsError::NonFinite { .. } => FlowError::NonFiniteLoss {
                    step,
                    lr: cfg.lr,
                    history: history.iter().rev().take(10).copied().collect(),
                },
                other => FlowError::from(other),
            })?;
            if !loss.is_finite() {
                return Err(FlowError::NonFiniteLoss {
                    step,
                    lr: cfg.lr,
                    history: history.iter().rev().take(10).copied().collect(),
                });
            }
            step += 1;
            history.push(loss);
            losses.push((step, loss));
            if opts.probe_step != 0 && step == opts.probe_step {
                if let Some(dir) = &opts.out_dir {
                    write_checkpoint(dir, &format!("flow_step_{step:06}.frvs"), net, &opt, codec)?;
                }
            }
        }
        if let Some(dir) = &opts.out_dir {
            write_checkpoint(dir, &format!("flow_epoch_{epoch:03}.frvs"), net, &opt, codec)?;
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_checkpoint(dir, "flow.frvs", net, &opt, codec)?;
        append_loss_log(dir, &losses)?;
    }
    Ok(TrainLog { losses, start_epoch })
}

fn write_checkpoint<T: Real>(
    dir: &Path,
    name: &str,
    net: &VelocityNet<T>,
    opt: &AdamW<T>,
    codec: &Codec<T>,
) -> Result<(), FlowError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| FlowError::Contract(format!("cannot create {}: {e}", dir.display())))?;
    let mut c = Container::new();
    net.save(&mut c);
    codec.save(&mut c, "codec.");
    let (step, m, v) = opt.state();
    c.push_real("opt.step", &Tensor::<T>::scalar(crate::tensor::real(step as f64)));
    for (i, t) in m.iter().enumerate() {
        c.push_real(format!("opt.m.{i}"), t);
    }
    for (i, t) in v.iter().enumerate() {
        c.push_real(format!("opt.v.{i}"), t);
    }
    c.write_file(&dir.join(name))
        .map_err(|e| FlowError::Contract(e.to_string()))
}

fn restore_opt_state<T: Real>(opt: &mut AdamW<T>, c: &Container) -> Result<(), FlowError> {
    let step = c
        .get("opt.step")
        .and_then(|e| e.to_real::<T>())
        .ok_or_else(|| FlowError::Contract("checkpoint has no optimizer state".into()))?
        .item()
        .to_f64() as u64;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for i in 0.. {
        match (c.get(&format!("opt.m.{i}")), c.get(&format!("opt.v.{i}"))) {
            (Some(me), Some(ve)) => {
                m.push(me.to_real::<T>().unwrap());
                v.push(ve.to_real::<T>().unwrap());
            }
            _ => break,
        }
    }
    opt.restore(step, m, v).map_err(FlowError::from)
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, Container)>, FlowError> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Ok(None) };
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy().to_string();
        if let Some(rest) = name.strip_prefix("flow_epoch_") {
            if let Ok(epoch) = rest.trim_end_matches(".frvs").parse::<usize>() {
                if best.as_ref().map_or(true, |(e, _)| epoch > *e) {
                    best = Some((epoch, entry.path()));
                }
            }
        }
    }
    match best {
        None => Ok(None),
        Some((epoch, path)) => {
            let c = Container::read_file(&path).map_err(|e| FlowError::Contract(e.to_string()))?;
            Ok(Some((epoch, c)))
        }
    }
}

fn append_loss_log(dir: &Path, losses: &[(u64, f64)]) -> Result<(), IoError> {
    use std::io::Write;
    let path = dir.join("loss.log");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| IoError::file(path.display().to_string(), e))?;
    for (step, loss) in losses {
        writeln!(f, "{step}\t{loss}").map_err(|e| IoError::file(path.display().to_string(), e))?;
    }
    Ok(())
}

impl From<IoError> for FlowError {
    fn from(e: IoError) -> Self {
        FlowError::Contract(e.to_string())
    }
}

/// Predicted mask for one encoded sample (cached latents, no SPA).
pub fn predict_mask<T: Real>(
    sample: &EncodedSample<T>,
    net: &VelocityNet<T>,
    codec: &Codec<T>,
    cfg: &FlowConfig,
    strategy: DecodeStrategy,
    threshold: f64,
) -> Result<MaskTensor, FlowError> {
    let z0 = codec.normalize(&sample.video_mean)?;
    let z1_hat = integrate_from(&z0, &sample.token_ids, net, cfg, sample.index as u64)?;
    let raw = codec.denormalize(&z1_hat)?;
    let probs = codec.decode(&raw, strategy)?;
    Ok(binarize(&probs, threshold))
}

/// Evaluates a trained model over an encoded split, in parallel.
pub fn evaluate_model<T: Real>(
    data: &EncodedDataset<T>,
    net: &VelocityNet<T>,
    codec: &Codec<T>,
    cfg: &FlowConfig,
    strategy: DecodeStrategy,
    eval_cfg: &EvalConfig,
    threshold: f64,
    threads: usize,
) -> Result<EvalResult, FlowError> {
    let preds = predict_split(data, net, codec, cfg, strategy, threshold, threads)?;
    let gts: Vec<MaskTensor> = data.samples.iter().map(|s| s.gt_mask.clone()).collect();
    evaluate_split(&preds, &gts, &data.pairs, eval_cfg).map_err(FlowError::from)
}

/// Predictions for every sample of a split, in sample order.
pub fn predict_split<T: Real>(
    data: &EncodedDataset<T>,
    net: &VelocityNet<T>,
    codec: &Codec<T>,
    cfg: &FlowConfig,
    strategy: DecodeStrategy,
    threshold: f64,
    threads: usize,
) -> Result<Vec<MaskTensor>, FlowError> {
    let workers = threads.max(1).min(data.samples.len().max(1));
    let chunk = data.samples.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<MaskTensor>, FlowError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in data.samples.chunks(chunk) {
            handles.push(scope.spawn(move || {
                part.iter()
                    .map(|s| predict_mask(s, net, codec, cfg, strategy, threshold))
                    .collect()
            }));
        }
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut preds = Vec::with_capacity(data.samples.len());
    for r in results {
        preds.extend(r?);
    }
    Ok(preds)
}
