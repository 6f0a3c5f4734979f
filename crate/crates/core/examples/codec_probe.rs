// temporary: codec pretraining convergence experiments
use flowseg_core::codec::{Codec, CodecConfig, DecodeStrategy};
use flowseg_core::movingshapes::{generate_dataset, load_dataset, DatasetConfig};

fn main() {
    let dir = std::env::temp_dir().join("flowseg-codec-probe");
    let _ = std::fs::remove_dir_all(&dir);
    let dcfg = DatasetConfig::default();
    generate_dataset(&dir, "train", 150, 0, &dcfg).unwrap();
    generate_dataset(&dir, "val", 40, 1, &dcfg).unwrap();
    let train = load_dataset(&dir, "train").unwrap();
    let val = load_dataset(&dir, "val").unwrap();
    let videos: Vec<_> = train.iter().map(|s| s.video.clone()).collect();
    let train_masks: Vec<_> = train.iter().map(|s| s.mask.clone()).collect();
    let val_masks: Vec<_> = val.iter().map(|s| s.mask.clone()).collect();

    for lr in [1e-3, 3e-3] {
        let t0 = std::time::Instant::now();
        let mut codec = Codec::<f32>::init(CodecConfig::default(), 0);
        let rep = codec.pretrain(&videos, 8, lr, 5e-4, 4, 0).unwrap();
        let recon: Vec<String> = rep.epoch_recon.iter().map(|v| format!("{v:.5}")).collect();
        println!("lr={lr}: recon {recon:?} ({:.0}s)", t0.elapsed().as_secs_f64());
        codec.finetune_decoder(&train_masks, DecodeStrategy::Finetuned, 1, lr, 5e-4, 0).unwrap();
        let ft = codec.reconstruction_jf(&val_masks, DecodeStrategy::Finetuned).unwrap();
        let fz = codec.reconstruction_jf(&val_masks, DecodeStrategy::Frozen).unwrap();
        println!("  mask recon: finetuned {ft:.4} frozen {fz:.4}");
    }
}
