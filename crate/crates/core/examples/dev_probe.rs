// Scratch probe used during development; not part of the artifact.
use flowseg_core::codec::{Codec, CodecConfig};
use flowseg_core::net::{NetConfig, VelocityNet};
use flowseg_core::rng::SeedStream;
use flowseg_core::tensor::gradcheck::{flatten_params, grad_check, mse_f64, unflatten_params};
use flowseg_core::tensor::{real, Real, Tape, Tensor};

fn net_cfg_tiny() -> NetConfig {
    NetConfig {
        latent_frames: 2,
        latent_h: 4,
        latent_w: 4,
        latent_channels: 4,
        dvi: true,
        width: 32,
        blocks: 2,
        heads: 2,
        cond_slots: 8,
        vocab: 32,
    }
}

fn net_loss<T: Real>(cfg: NetConfig, theta: &[T], want_grad: bool) -> (f64, Vec<T>) {
    let mut net = VelocityNet::<T>::init(cfg, 3).unwrap();
    {
        let like: Vec<&Tensor<T>> = net.named_params().iter().map(|(_, t)| *t).collect();
        let new = unflatten_params(theta, &like);
        for (p, n) in net.params_mut().into_iter().zip(new) {
            *p = n;
        }
    }
    let stream = SeedStream::new(11, "probe-net");
    let mut rng = stream.rng(0);
    let zin = Tensor::from_vec(
        &[cfg.latent_frames, cfg.latent_h, cfg.latent_w, cfg.in_channels()],
        (0..cfg.latent_frames * cfg.latent_h * cfg.latent_w * cfg.in_channels())
            .map(|_| flowseg_core::rng::normal::<T>(&mut rng))
            .collect(),
    );
    let target_rows: Vec<T> = (0..cfg.tokens() * cfg.patch_features_out())
        .map(|_| flowseg_core::rng::normal::<T>(&mut rng))
        .collect();
    let ids = vec![4u32, 8, 1, 0, 0, 0, 0, 0];

    let mut tape = Tape::<T>::new();
    let vars = net.register(&mut tape, want_grad).unwrap();
    let out = net.forward_batch(&mut tape, &vars, &[&zin], &[&ids], &[0.35]).unwrap();
    let target_t = Tensor::from_vec(tape.value(out).dims(), target_rows);
    let loss_f64 = mse_f64(tape.value(out), &target_t);
    if !want_grad {
        return (loss_f64, vec![]);
    }
    let target = tape.constant(target_t).unwrap();
    let diff = tape.sub(out, target).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let loss = tape.mean_all(sq).unwrap();
    let order = VelocityNet::<T>::var_order(&vars);
    let mut grads = tape.backward(loss).unwrap();
    let mut flat = Vec::with_capacity(theta.len());
    for v in order {
        let g = grads.take(v).expect("param missing grad");
        flat.extend_from_slice(g.data());
    }
    (loss_f64, flat)
}

fn codec_loss<T: Real>(theta: &[T], want_grad: bool) -> (f64, Vec<T>) {
    // encode -> reparam(eps fixed) -> decode -> sigmoid -> MSE vs target
    let cfg = CodecConfig { latent_channels: 2, base_width: 4, kl_weight: 1e-4 };
    let mut codec = Codec::<T>::init(cfg, 5);
    // assign theta across all 16 tensors in declared order (values come from
    // the boosted probe point built in main)
    let mut offset = 0usize;
    {
        let mut assign = |t: &mut Tensor<T>| {
            let n = t.numel();
            let d = t.dims().to_vec();
            *t = Tensor::from_vec(&d, theta[offset..offset + n].to_vec());
            offset += n;
        };
        assign(&mut codec.encoder.conv1.w);
        assign(&mut codec.encoder.conv1.b);
        assign(&mut codec.encoder.down1.w);
        assign(&mut codec.encoder.down1.b);
        assign(&mut codec.encoder.down2.w);
        assign(&mut codec.encoder.down2.b);
        assign(&mut codec.encoder.conv_out.w);
        assign(&mut codec.encoder.conv_out.b);
        assign(&mut codec.decoder.conv_in.w);
        assign(&mut codec.decoder.conv_in.b);
        assign(&mut codec.decoder.up1.w);
        assign(&mut codec.decoder.up1.b);
        assign(&mut codec.decoder.up2.w);
        assign(&mut codec.decoder.up2.b);
        assign(&mut codec.decoder.conv_out.w);
        assign(&mut codec.decoder.conv_out.b);
        assert_eq!(offset, theta.len());
    }
    let stream = SeedStream::new(13, "probe-codec");
    let mut rng = stream.rng(0);
    let clip = Tensor::from_vec(
        &[2, 8, 8, 3],
        (0..2 * 8 * 8 * 3).map(|_| real::<T>(rng_f64(&mut rng))).collect(),
    );
    let eps_val: Vec<T> = (0..2 * 2 * 2 * 2).map(|_| flowseg_core::rng::normal::<T>(&mut rng)).collect();
    let target_val: Vec<T> = (0..2 * 8 * 8).map(|_| real::<T>(rng_f64(&mut rng))).collect();

    let mut tape = Tape::<T>::new();
    let evars = codec.encoder_vars(&mut tape, want_grad).unwrap();
    let dvars = codec.decoder_vars(&mut tape, &codec.decoder.clone(), want_grad).unwrap();
    let x = tape.constant(clip).unwrap();
    let (mean, logvar) = codec.encode_on_tape(&mut tape, &evars, x).unwrap();
    let eps = tape.constant(Tensor::from_vec(tape.value(mean).dims(), eps_val)).unwrap();
    let half = tape.affine(logvar, 0.5, 0.0).unwrap();
    let std = tape.exp(half).unwrap();
    let noise = tape.mul(std, eps).unwrap();
    let z = tape.add(mean, noise).unwrap();
    let logits = codec.decode_on_tape(&mut tape, &dvars, z).unwrap();
    let probs = tape.sigmoid(logits).unwrap();
    let target_t = Tensor::from_vec(&[2, 8, 8, 1], target_val);
    let loss_f64 = mse_f64(tape.value(probs), &target_t);
    if !want_grad {
        return (loss_f64, vec![]);
    }
    let target = tape.constant(target_t).unwrap();
    let diff = tape.sub(probs, target).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let loss = tape.mean_all(sq).unwrap();
    let order = [evars.order(), dvars.order()].concat();
    let mut grads = tape.backward(loss).unwrap();
    let mut flat = Vec::with_capacity(theta.len());
    for v in order {
        let g = grads.take(v).expect("param missing grad");
        flat.extend_from_slice(g.data());
    }
    (loss_f64, flat)
}

fn rng_f64(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.gen_range(0.0..1.0)
}

fn main() {
    let t0 = std::time::Instant::now();
    // velocity net f32
    let cfg = net_cfg_tiny();
    let net = VelocityNet::<f32>::init(cfg, 3).unwrap();
    let theta: Vec<f32> = {
        let ps: Vec<&Tensor<f32>> = net.named_params().iter().map(|(_, t)| *t).collect();
        flatten_params(&ps)
    };
    println!("velocity net tiny params: {}", theta.len());
    for seed in [42u64, 1, 2, 3] {
        let report = grad_check(
            &theta, 20, 1e-3, seed,
            |th| Ok(net_loss::<f32>(cfg, th, true)),
            |th| Ok(net_loss::<f32>(cfg, th, false).0),
        ).unwrap();
        println!("net f32 seed {seed}: max rel err {:.3e} -> {}", report.max_rel_error, report.passed());
    }

    let theta64: Vec<f64> = theta.iter().map(|&v| v as f64).collect();
    let report = grad_check(
        &theta64, 20, 1e-6, 42,
        |th| Ok(net_loss::<f64>(cfg, th, true)),
        |th| Ok(net_loss::<f64>(cfg, th, false).0),
    ).unwrap();
    println!("net f64: max rel err {:.3e} (tol 1e-6) -> {}", report.max_rel_error, report.passed());

    // codec, at a variance-preserving probe point (init weights doubled)
    let ccfg = CodecConfig { latent_channels: 2, base_width: 4, kl_weight: 1e-4 };
    let mut codec = Codec::<f32>::init(ccfg, 5);
    for t in [
        &mut codec.encoder.conv1.w, &mut codec.encoder.down1.w,
        &mut codec.encoder.down2.w, &mut codec.encoder.conv_out.w,
        &mut codec.decoder.conv_in.w, &mut codec.decoder.up1.w,
        &mut codec.decoder.up2.w, &mut codec.decoder.conv_out.w,
    ] {
        for v in t.data_mut() { *v *= 2.0; }
    }
    let codec = codec;
    let mut theta: Vec<f32> = Vec::new();
    for t in [
        &codec.encoder.conv1.w, &codec.encoder.conv1.b,
        &codec.encoder.down1.w, &codec.encoder.down1.b,
        &codec.encoder.down2.w, &codec.encoder.down2.b,
        &codec.encoder.conv_out.w, &codec.encoder.conv_out.b,
        &codec.decoder.conv_in.w, &codec.decoder.conv_in.b,
        &codec.decoder.up1.w, &codec.decoder.up1.b,
        &codec.decoder.up2.w, &codec.decoder.up2.b,
        &codec.decoder.conv_out.w, &codec.decoder.conv_out.b,
    ] {
        theta.extend_from_slice(t.data());
    }
    println!("codec tiny params: {}", theta.len());
    for seed in [7u64, 1, 2, 3, 11, 99] {
        let report = grad_check(
            &theta, 20, 1e-3, seed,
            |th| Ok(codec_loss::<f32>(th, true)),
            |th| Ok(codec_loss::<f32>(th, false).0),
        ).unwrap();
        println!("codec f32 seed {seed}: max rel err {:.3e} -> {}", report.max_rel_error, report.passed());
    }
    let theta64: Vec<f64> = theta.iter().map(|&v| v as f64).collect();
    let report = grad_check(
        &theta64, 20, 1e-6, 7,
        |th| Ok(codec_loss::<f64>(th, true)),
        |th| Ok(codec_loss::<f64>(th, false).0),
    ).unwrap();
    println!("codec f64: max rel err {:.3e} (tol 1e-6) -> {}", report.max_rel_error, report.passed());
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
