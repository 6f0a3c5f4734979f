// temporary: elementwise FD check of conv2d / tconv2d / slice / clamp backward
use flowseg_core::rng::SeedStream;
use flowseg_core::tensor::{Tape, Tensor};

fn check(name: &str, f: impl Fn(&mut Tape<f64>, flowseg_core::tensor::Var) -> flowseg_core::tensor::Var, din: &[usize]) {
    let stream = SeedStream::new(1, name);
    let mut rng = stream.rng(0);
    let numel: usize = din.iter().product();
    let x0: Vec<f64> = (0..numel).map(|_| flowseg_core::rng::normal::<f64>(&mut rng) * 0.5).collect();

    let run = |x: &[f64], grad: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(Tensor::from_vec(din, x.to_vec()), true).unwrap();
        let y = f(&mut tape, xv);
        let loss = tape.sum_all(y).unwrap();
        // weight loss by squaring to make it nonlinear in x
        let sq = tape.mul(loss, loss).unwrap();
        let lv = tape.value(sq).item();
        if !grad {
            return (lv, vec![]);
        }
        let grads = tape.backward(sq).unwrap();
        (lv, grads.get(xv).unwrap().data().to_vec())
    };
    let (_, g) = run(&x0, true);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..numel {
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        let fd = (run(&xp, false).0 - run(&xm, false).0) / (2.0 * h);
        let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-9);
        worst = worst.max(rel);
    }
    println!("{name}: worst elementwise rel err {worst:.3e}");
}

fn main() {
    let stream = SeedStream::new(2, "weights");
    let mut rng = stream.rng(0);
    let w_s1: Vec<f64> = (0..3 * 3 * 2 * 3).map(|_| flowseg_core::rng::normal::<f64>(&mut rng) * 0.3).collect();
    let w_s2: Vec<f64> = (0..4 * 4 * 2 * 3).map(|_| flowseg_core::rng::normal::<f64>(&mut rng) * 0.3).collect();
    let b3: Vec<f64> = vec![0.1, -0.2, 0.3];

    {
        let w = w_s1.clone();
        let b = b3.clone();
        check("conv2d s1 p1 (input grad)", move |tape, x| {
            let wv = tape.constant(Tensor::from_vec(&[3, 3, 2, 3], w.clone())).unwrap();
            let bv = tape.constant(Tensor::from_vec(&[3], b.clone())).unwrap();
            tape.conv2d(x, wv, Some(bv), 1, 1).unwrap()
        }, &[2, 4, 4, 2]);
    }
    {
        let w = w_s2.clone();
        check("conv2d s2 k4 p1 (input grad)", move |tape, x| {
            let wv = tape.constant(Tensor::from_vec(&[4, 4, 2, 3], w.clone())).unwrap();
            tape.conv2d(x, wv, None, 2, 1).unwrap()
        }, &[1, 6, 6, 2]);
    }
    {
        // weight gradient: x is the WEIGHT leaf
        let stream = SeedStream::new(3, "in");
        let mut rng = stream.rng(0);
        let inp: Vec<f64> = (0..1 * 6 * 6 * 2).map(|_| flowseg_core::rng::normal::<f64>(&mut rng)).collect();
        check("conv2d s2 (weight grad)", move |tape, w| {
            let iv = tape.constant(Tensor::from_vec(&[1, 6, 6, 2], inp.clone())).unwrap();
            tape.conv2d(iv, w, None, 2, 1).unwrap()
        }, &[4, 4, 2, 3]);
    }
    {
        let w = w_s2.clone();
        check("tconv2d s2 k4 p1 (input grad)", move |tape, x| {
            let wv = tape.constant(Tensor::from_vec(&[4, 4, 2, 3], w.clone())).unwrap();
            tape.tconv2d(x, wv, None, 2, 1).unwrap()
        }, &[1, 3, 3, 2]);
    }
    {
        let stream = SeedStream::new(4, "in2");
        let mut rng = stream.rng(0);
        let inp: Vec<f64> = (0..1 * 3 * 3 * 2).map(|_| flowseg_core::rng::normal::<f64>(&mut rng)).collect();
        check("tconv2d s2 (weight grad)", move |tape, w| {
            let iv = tape.constant(Tensor::from_vec(&[1, 3, 3, 2], inp.clone())).unwrap();
            tape.tconv2d(iv, w, None, 2, 1).unwrap()
        }, &[4, 4, 2, 3]);
    }
    {
        check("slice axis3 + exp + clamp", |tape, x| {
            let s = tape.slice(x, 3, 1, 2).unwrap();
            let c = tape.clamp(s, -30.0, 20.0).unwrap();
            let e = tape.exp(c).unwrap();
            let s2 = tape.slice(x, 3, 0, 1).unwrap();
            let m = tape.sigmoid(s2).unwrap();
            // combine both slices so every input participates
            let me = tape.sum_all(m).unwrap();
            let ee = tape.sum_all(e).unwrap();
            let total = tape.add(me, ee).unwrap();
            let dims = tape.dims(x).to_vec();
            let ones = tape.constant(Tensor::full(&[1], 1.0)).unwrap();
            let _ = dims;
            tape.add(total, ones).unwrap()
        }, &[1, 2, 2, 3]);
    }
}
