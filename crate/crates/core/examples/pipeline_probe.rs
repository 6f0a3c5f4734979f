// Scratch pipeline probe: codec pretrain -> adaptation trend -> flow learning.
use std::time::Instant;

use flowseg_core::codec::{Codec, CodecConfig, DecodeStrategy};
use flowseg_core::flow::{
    encode_dataset, evaluate_model, train_flow, FlowConfig, TrainOptions,
};
use flowseg_core::metrics::EvalConfig;
use flowseg_core::movingshapes::{generate_dataset, load_dataset, DatasetConfig};
use flowseg_core::net::{NetConfig, VelocityNet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let n_val: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let codec_epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let flow_epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);

    let dir = std::env::temp_dir().join("flowseg-probe");
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = Instant::now();
    let dcfg = DatasetConfig::default();
    generate_dataset(&dir, "train", n_train, 0, &dcfg).unwrap();
    generate_dataset(&dir, "val", n_val, 1, &dcfg).unwrap();
    let train = load_dataset(&dir, "train").unwrap();
    let val = load_dataset(&dir, "val").unwrap();
    println!("[{:6.1}s] dataset: {} train / {} val", t0.elapsed().as_secs_f64(), train.len(), val.len());

    // codec pretrain
    let mut codec = Codec::<f32>::init(CodecConfig::default(), 0);
    let videos: Vec<_> = train.iter().map(|s| s.video.clone()).collect();
    let report = codec.pretrain(&videos, codec_epochs, 1e-3, 5e-4, 4, 0).unwrap();
    println!(
        "[{:6.1}s] codec pretrain recon per epoch: {:?}",
        t0.elapsed().as_secs_f64(),
        report.epoch_recon.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>()
    );
    let digest_before = codec.encoder_digest();

    // adaptation strategies
    let train_masks: Vec<_> = train.iter().map(|s| s.mask.clone()).collect();
    let val_masks: Vec<_> = val.iter().map(|s| s.mask.clone()).collect();
    let frozen_jf = codec.reconstruction_jf(&val_masks, DecodeStrategy::Frozen).unwrap();
    println!("[{:6.1}s] frozen recon J&F: {frozen_jf:.4}", t0.elapsed().as_secs_f64());

    codec.finetune_decoder(&train_masks, DecodeStrategy::ConvHead, 1, 1e-3, 5e-4, 0).unwrap();
    let head_jf = codec.reconstruction_jf(&val_masks, DecodeStrategy::ConvHead).unwrap();
    println!("[{:6.1}s] conv-head recon J&F: {head_jf:.4}", t0.elapsed().as_secs_f64());

    codec.finetune_decoder(&train_masks, DecodeStrategy::Finetuned, 1, 1e-3, 5e-4, 0).unwrap();
    let ft_jf = codec.reconstruction_jf(&val_masks, DecodeStrategy::Finetuned).unwrap();
    println!("[{:6.1}s] finetuned recon J&F: {ft_jf:.4}", t0.elapsed().as_secs_f64());
    assert_eq!(digest_before, codec.encoder_digest(), "encoder must stay frozen");
    println!(
        "trend finetuned > conv-head > frozen: {} ({ft_jf:.3} > {head_jf:.3} > {frozen_jf:.3}), frozen <= 0.8*ft: {}",
        ft_jf > head_jf && head_jf > frozen_jf,
        frozen_jf <= 0.8 * ft_jf
    );

    // flow training at default config
    let enc_train = encode_dataset(&codec, &train, 2).unwrap();
    let enc_val = encode_dataset(&codec, &val, 2).unwrap();
    println!("[{:6.1}s] encoded splits", t0.elapsed().as_secs_f64());

    let fcfg = FlowConfig { epochs: flow_epochs, ..Default::default() };
    let ncfg = NetConfig::default();
    let mut net = VelocityNet::<f32>::init(ncfg, 0).unwrap();
    let step_t = Instant::now();
    let log = train_flow(&enc_train, &codec, &mut net, &fcfg, &TrainOptions::default()).unwrap();
    let steps = log.losses.len();
    println!(
        "[{:6.1}s] flow train: {} steps, {:.3}s/step, loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        steps,
        step_t.elapsed().as_secs_f64() / steps as f64,
        log.losses.first().unwrap().1,
        log.losses.last().unwrap().1
    );
    let first_losses: Vec<f64> = log.losses.iter().take(8).map(|l| l.1).collect();
    println!("first losses: {first_losses:?}");

    let eval_t = Instant::now();
    let res = evaluate_model(
        &enc_val, &net, &codec, &fcfg, DecodeStrategy::Finetuned,
        &EvalConfig::default(), 0.5, 2,
    ).unwrap();
    println!(
        "[{:6.1}s] eval ({:.2}s/sample): J {:.4} F {:.4} J&F {:.4} paired {:?}",
        t0.elapsed().as_secs_f64(),
        eval_t.elapsed().as_secs_f64() / val.len() as f64,
        res.mean_j, res.mean_f, res.mean_jf, res.paired_rate
    );
}
