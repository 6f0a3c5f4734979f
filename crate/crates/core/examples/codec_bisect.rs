// temporary: find which codec layer's analytic grads disagree with FD
use flowseg_core::codec::{Codec, CodecConfig};
use flowseg_core::rng::SeedStream;
use flowseg_core::tensor::{Tape, Tensor};

fn loss_of(codec: &Codec<f64>, grad: bool) -> (f64, Vec<Vec<f64>>) {
    let stream = SeedStream::new(13, "probe-codec");
    let mut rng = stream.rng(0);
    use rand::Rng;
    let clip = Tensor::from_vec(
        &[2, 8, 8, 3],
        (0..2 * 8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
    );
    let eps_val: Vec<f64> = (0..2 * 2 * 2 * 2).map(|_| flowseg_core::rng::normal::<f64>(&mut rng)).collect();
    let target_val: Vec<f64> = (0..2 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();

    let mut tape = Tape::<f64>::new();
    let evars = codec.encoder_vars(&mut tape, grad).unwrap();
    let dvars = codec.decoder_vars(&mut tape, &codec.decoder.clone(), grad).unwrap();
    let x = tape.constant(clip).unwrap();
    let (mean, logvar) = codec.encode_on_tape(&mut tape, &evars, x).unwrap();
    let eps = tape.constant(Tensor::from_vec(tape.value(mean).dims(), eps_val)).unwrap();
    let half = tape.affine(logvar, 0.5, 0.0).unwrap();
    let std = tape.exp(half).unwrap();
    let noise = tape.mul(std, eps).unwrap();
    let z = tape.add(mean, noise).unwrap();
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
    let g: Vec<Vec<f64>> = order.iter().map(|&v| grads.take(v).unwrap().into_data()).collect();
    (lv, g)
}

fn main() {
    let cfg = CodecConfig { latent_channels: 2, base_width: 4, kl_weight: 1e-4 };
    let codec = Codec::<f64>::init(cfg, 5);
    let (_, analytic) = loss_of(&codec, true);
    let names = [
        "enc.conv1.w", "enc.conv1.b", "enc.down1.w", "enc.down1.b",
        "enc.down2.w", "enc.down2.b", "enc.conv_out.w", "enc.conv_out.b",
        "dec.conv_in.w", "dec.conv_in.b", "dec.up1.w", "dec.up1.b",
        "dec.up2.w", "dec.up2.b", "dec.conv_out.w", "dec.conv_out.b",
    ];
    let h = 1e-6;
    for (li, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut worst_i = 0;
        // probe up to 24 elements per layer
        let n = analytic[li].len().min(24);
        for i in 0..n {
            let perturb = |sign: f64| -> f64 {
                let mut c2 = codec.clone();
                let params: Vec<&mut Tensor<f64>> = vec![
                    &mut c2.encoder.conv1.w, &mut c2.encoder.conv1.b,
                    &mut c2.encoder.down1.w, &mut c2.encoder.down1.b,
                    &mut c2.encoder.down2.w, &mut c2.encoder.down2.b,
                    &mut c2.encoder.conv_out.w, &mut c2.encoder.conv_out.b,
                    &mut c2.decoder.conv_in.w, &mut c2.decoder.conv_in.b,
                    &mut c2.decoder.up1.w, &mut c2.decoder.up1.b,
                    &mut c2.decoder.up2.w, &mut c2.decoder.up2.b,
                    &mut c2.decoder.conv_out.w, &mut c2.decoder.conv_out.b,
                ];
                let mut params = params;
                params[li].data_mut()[i] += sign * h;
                drop(params);
                loss_of(&c2, false).0
            };
            let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
            let a = analytic[li][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-10);
            if rel > worst { worst = rel; worst_i = i; }
        }
        println!("{name}: worst rel {worst:.3e} at elem {worst_i}");
    }
}
