// temporary: conditioning diagnosis of the codec gradcheck probe
use flowseg_core::codec::{Codec, CodecConfig};
use flowseg_core::rng::SeedStream;
use flowseg_core::tensor::{Tape, Tensor};

fn loss_of(codec: &Codec<f64>, grad: bool, reparam: bool) -> (f64, Vec<f64>) {
    let stream = SeedStream::new(13, "probe-codec");
    let mut rng = stream.rng(0);
    use rand::Rng;
    let clip = Tensor::from_vec(&[2, 8, 8, 3], (0..384).map(|_| rng.gen_range(0.0..1.0)).collect());
    let eps_val: Vec<f64> = (0..16).map(|_| flowseg_core::rng::normal::<f64>(&mut rng)).collect();
    let target_val: Vec<f64> = (0..128).map(|_| rng.gen_range(0.0..1.0)).collect();

    let mut tape = Tape::<f64>::new();
    let evars = codec.encoder_vars(&mut tape, grad).unwrap();
    let dvars = codec.decoder_vars(&mut tape, &codec.decoder.clone(), grad).unwrap();
    let x = tape.constant(clip).unwrap();
    let (mean, logvar) = codec.encode_on_tape(&mut tape, &evars, x).unwrap();
    let z = if reparam {
        let eps = tape.constant(Tensor::from_vec(tape.value(mean).dims(), eps_val)).unwrap();
        let half = tape.affine(logvar, 0.5, 0.0).unwrap();
        let std = tape.exp(half).unwrap();
        let noise = tape.mul(std, eps).unwrap();
        tape.add(mean, noise).unwrap()
    } else {
        mean
    };
    let logits = codec.decode_on_tape(&mut tape, &dvars, z).unwrap();
    let probs = tape.sigmoid(logits).unwrap();
    let target = tape.constant(Tensor::from_vec(&[2, 8, 8, 1], target_val)).unwrap();
    let diff = tape.sub(probs, target).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let loss = tape.mean_all(sq).unwrap();
    let lv = tape.value(loss).item();
    if !grad {
        return (lv, vec![]);
    }
    let order = [evars.order(), dvars.order()].concat();
    let mut grads = tape.backward(loss).unwrap();
    let mut flat = Vec::new();
    for v in order {
        flat.extend(grads.take(v).unwrap().into_data());
    }
    (lv, flat)
}

fn main() {
    let cfg = CodecConfig { latent_channels: 2, base_width: 4, kl_weight: 1e-4 };
    let mut codec = Codec::<f64>::init(cfg, 5);
    // He-ish boost of the probe point
    let k: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    for t in [
        &mut codec.encoder.conv1.w, &mut codec.encoder.down1.w,
        &mut codec.encoder.down2.w, &mut codec.encoder.conv_out.w,
        &mut codec.decoder.conv_in.w, &mut codec.decoder.up1.w,
        &mut codec.decoder.up2.w, &mut codec.decoder.conv_out.w,
    ] {
        for v in t.data_mut() { *v *= k; }
    }
    let codec = codec;
    for reparam in [true, false] {
        let (l, g) = loss_of(&codec, true, reparam);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("reparam={reparam}: L = {l:.4}, |g| = {gnorm:.3e}, P = {}", g.len());
        // directional fd at several steps
        let stream = SeedStream::new(42, "dirs");
        let mut worst_by_h = vec![0.0f64; 4];
        let hs = [1e-6, 1e-5, 1e-4, 1e-3];
        let theta: Vec<f64> = {
            // flatten codec params in probe order
            let mut out = Vec::new();
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
                out.extend_from_slice(t.data());
            }
            out
        };
        let rebuild = |th: &[f64]| -> Codec<f64> {
            let mut c2 = codec.clone();
            let mut offset = 0;
            for t in [
                &mut c2.encoder.conv1.w, &mut c2.encoder.conv1.b,
                &mut c2.encoder.down1.w, &mut c2.encoder.down1.b,
                &mut c2.encoder.down2.w, &mut c2.encoder.down2.b,
                &mut c2.encoder.conv_out.w, &mut c2.encoder.conv_out.b,
                &mut c2.decoder.conv_in.w, &mut c2.decoder.conv_in.b,
                &mut c2.decoder.up1.w, &mut c2.decoder.up1.b,
                &mut c2.decoder.up2.w, &mut c2.decoder.up2.b,
                &mut c2.decoder.conv_out.w, &mut c2.decoder.conv_out.b,
            ] {
                let n = t.numel();
                let d = t.dims().to_vec();
                *t = Tensor::from_vec(&d, th[offset..offset + n].to_vec());
                offset += n;
            }
            c2
        };
        for d in 0..10u64 {
            let mut rng = stream.rng(d);
            let mut dir: Vec<f64> = (0..theta.len()).map(|_| flowseg_core::rng::normal::<f64>(&mut rng)).collect();
            let n: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= n);
            let a: f64 = g.iter().zip(&dir).map(|(x, y)| x * y).sum();
            for (hi, &h) in hs.iter().enumerate() {
                let tp: Vec<f64> = theta.iter().zip(&dir).map(|(&t, &d)| t + h * d).collect();
                let tm: Vec<f64> = theta.iter().zip(&dir).map(|(&t, &d)| t - h * d).collect();
                let fd = (loss_of(&rebuild(&tp), false, reparam).0 - loss_of(&rebuild(&tm), false, reparam).0) / (2.0 * h);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
                if rel > worst_by_h[hi] { worst_by_h[hi] = rel; }
            }
        }
        for (h, w) in hs.iter().zip(&worst_by_h) {
            println!("  h={h:.0e}: worst rel {w:.3e}");
        }
    }
}
