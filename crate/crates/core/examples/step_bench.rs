// temporary: train_step time breakdown
use std::time::Instant;
use flowseg_core::net::{NetConfig, VelocityNet};
use flowseg_core::rng::SeedStream;
use flowseg_core::tensor::{Tape, Tensor};

fn main() {
    let cfg = NetConfig::default();
    let net = VelocityNet::<f32>::init(cfg, 0).unwrap();
    let stream = SeedStream::new(0, "bench");
    let mut rng = stream.rng(0);
    let b = 8;
    let inputs: Vec<Tensor<f32>> = (0..b)
        .map(|_| {
            Tensor::from_vec(
                &[8, 8, 8, 16],
                (0..8 * 8 * 8 * 16).map(|_| flowseg_core::rng::normal::<f32>(&mut rng)).collect(),
            )
        })
        .collect();
    let ids: Vec<Vec<u32>> = (0..b).map(|_| vec![4, 8, 1, 0, 0, 0, 0, 0]).collect();
    let ts: Vec<f64> = (0..b).map(|i| i as f64 / 8.0).collect();

    // forward only
    let reps = 5;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let vars = net.register(&mut tape, false).unwrap();
        let irefs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let idrefs: Vec<&[u32]> = ids.iter().map(|v| v.as_slice()).collect();
        let out = net.forward_batch(&mut tape, &vars, &irefs, &idrefs, &ts).unwrap();
        std::hint::black_box(tape.value(out).data()[0]);
    }
    println!("forward only (no grads): {:.3}s", t0.elapsed().as_secs_f64() / reps as f64);

    // forward with grads tracked
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let vars = net.register(&mut tape, true).unwrap();
        let irefs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let idrefs: Vec<&[u32]> = ids.iter().map(|v| v.as_slice()).collect();
        let out = net.forward_batch(&mut tape, &vars, &irefs, &idrefs, &ts).unwrap();
        std::hint::black_box(tape.value(out).data()[0]);
    }
    println!("forward (grads on): {:.3}s", t0.elapsed().as_secs_f64() / reps as f64);

    // full fwd+bwd
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let vars = net.register(&mut tape, true).unwrap();
        let irefs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let idrefs: Vec<&[u32]> = ids.iter().map(|v| v.as_slice()).collect();
        let out = net.forward_batch(&mut tape, &vars, &irefs, &idrefs, &ts).unwrap();
        let tgt = tape.constant(Tensor::zeros(tape.value(out).dims())).unwrap();
        let d = tape.sub(out, tgt).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        std::hint::black_box(grads.get(vars.cond_table).map(|t| t.data()[0]));
    }
    println!("forward+backward: {:.3}s", t0.elapsed().as_secs_f64() / reps as f64);
}
