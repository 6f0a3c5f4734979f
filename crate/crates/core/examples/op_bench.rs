// temporary: per-op timing under realistic allocation patterns
use std::time::Instant;
use flowseg_core::tensor::{Tape, Tensor};
use flowseg_core::rng::SeedStream;

fn main() {
    let stream = SeedStream::new(0, "opbench");
    let mut rng = stream.rng(0);
    let a = Tensor::<f32>::from_vec(&[1024, 128], (0..1024 * 128).map(|_| flowseg_core::rng::normal(&mut rng)).collect());
    let w = Tensor::<f32>::from_vec(&[128, 128], (0..128 * 128).map(|_| flowseg_core::rng::normal(&mut rng)).collect());
    let w4 = Tensor::<f32>::from_vec(&[128, 512], (0..128 * 512).map(|_| flowseg_core::rng::normal(&mut rng)).collect());

    // matmul via tape (fresh tape per iter, like training)
    let reps = 100;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let av = tape.constant(a.clone()).unwrap();
        let wv = tape.constant(w.clone()).unwrap();
        let c = tape.matmul(av, wv).unwrap();
        std::hint::black_box(tape.value(c).data()[0]);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("tape matmul 1024x128x128 (incl 2 const pushes): {:.3}ms -> {:.1} GFlop/s", dt * 1e3, 2.0 * 1024.0 * 128.0 * 128.0 / dt / 1e9);

    // raw kernel with fresh allocation
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut c = vec![0.0f32; 1024 * 128];
        flowseg_core::tensor::bench_matmul_nn(a.data(), w.data(), &mut c, 1024, 128, 128);
        std::hint::black_box(c[0]);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("raw matmul 1024x128x128 fresh alloc: {:.3}ms -> {:.1} GFlop/s", dt * 1e3, 2.0 * 1024.0 * 128.0 * 128.0 / dt / 1e9);

    let t0 = Instant::now();
    for _ in 0..reps {
        let mut c = vec![0.0f32; 1024 * 512];
        flowseg_core::tensor::bench_matmul_nn(a.data(), w4.data(), &mut c, 1024, 128, 512);
        std::hint::black_box(c[0]);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("raw matmul 1024x128x512 fresh alloc: {:.3}ms -> {:.1} GFlop/s", dt * 1e3, 2.0 * 1024.0 * 128.0 * 512.0 / dt / 1e9);

    // finite scan cost
    let big = Tensor::<f32>::from_vec(&[1024, 512], vec![0.5; 1024 * 512]);
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(big.is_finite());
    }
    println!("finite scan of 512k floats: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // layer_norm via tape
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let av = tape.constant(a.clone()).unwrap();
        let c = tape.layer_norm(av, 1e-5).unwrap();
        std::hint::black_box(tape.value(c).data()[0]);
    }
    println!("tape layer_norm [1024,128]: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // gelu via tape
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let av = tape.constant(a.clone()).unwrap();
        let c = tape.gelu(av).unwrap();
        std::hint::black_box(tape.value(c).data()[0]);
    }
    println!("tape gelu [1024,128]: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    let big4 = Tensor::<f32>::from_vec(&[1024, 512], vec![0.3; 1024 * 512]);
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let av = tape.constant(big4.clone()).unwrap();
        let c = tape.gelu(av).unwrap();
        std::hint::black_box(tape.value(c).data()[0]);
    }
    println!("tape gelu [1024,512]: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
