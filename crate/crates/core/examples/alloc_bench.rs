// temporary: allocation-pattern effects on elementwise ops
use std::time::Instant;

#[inline(never)]
fn gelu_map(src: &[f32], dst: &mut Vec<f32>) {
    dst.clear();
    dst.extend(src.iter().map(|&x| {
        let c = 0.7978845608028654f32;
        let k = 0.044715f32;
        let u = c * (x + k * x * x * x);
        let u = u.clamp(-4.97, 4.97);
        let x2 = u * u;
        let p = u * (135135.0 + x2 * (17325.0 + x2 * (378.0 + x2)));
        let q = 135135.0 + x2 * (62370.0 + x2 * (3150.0 + x2 * 28.0));
        0.5 * x * (1.0 + p / q)
    }));
}

fn main() {
    let n = 1024 * 512;
    let src = vec![0.3f32; n];
    let reps = 100;

    // fresh Vec each iteration
    let t0 = Instant::now();
    for _ in 0..reps {
        let out: Vec<f32> = src.iter().map(|&x| x * 1.00001).collect();
        std::hint::black_box(out[7]);
    }
    println!("fresh-collect copy of 2MB: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // reused buffer
    let mut buf = Vec::with_capacity(n);
    let t0 = Instant::now();
    for _ in 0..reps {
        gelu_map(&src, &mut buf);
        std::hint::black_box(buf[7]);
    }
    println!("gelu into reused buffer: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // fresh buffer each time
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut fresh = Vec::with_capacity(n);
        gelu_map(&src, &mut fresh);
        std::hint::black_box(fresh[7]);
    }
    println!("gelu into fresh buffer: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // many live buffers like a tape holds
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut keep = Vec::new();
        for _ in 0..8 {
            let mut fresh = Vec::with_capacity(n);
            gelu_map(&src, &mut fresh);
            keep.push(fresh);
        }
        std::hint::black_box(keep.len());
    }
    println!("gelu x8 live buffers: {:.3}ms (per op {:.3}ms)", t0.elapsed().as_secs_f64() / reps as f64 * 1e3, t0.elapsed().as_secs_f64() / reps as f64 / 8.0 * 1e3);
}
