//! The conditional velocity network v(z, c, t).
//!
//! Latent clips are cut into 1x2x2 patches and processed by a small
//! transformer: per block, self-attention over patch tokens, cross-attention
//! to the query's condition slots, and a feed-forward layer, each gated and
//! modulated by adaptive layer norm driven by the timestep embedding plus the
//! mean-pooled condition. Modulation projections start at zero so every
//! block begins as identity-plus-skip; the rest is truncated-normal 0.02.

use crate::error::NumericsError;
use crate::io::frvs::Container;
use crate::rng::{trunc_normal, SeedStream};
use crate::tensor::{real, Real, Tape, Tensor, Var};

pub const TIME_FEATURES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub latent_frames: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    /// Output channels C; input is C or 2C depending on `dvi`.
    pub latent_channels: usize,
    pub dvi: bool,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub cond_slots: usize,
    pub vocab: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_frames: 8,
            latent_h: 8,
            latent_w: 8,
            latent_channels: 8,
            dvi: true,
            width: 128,
            blocks: 4,
            heads: 4,
            cond_slots: 8,
            vocab: crate::movingshapes::VOCAB_SIZE,
        }
    }
}

impl NetConfig {
    pub fn in_channels(&self) -> usize {
        self.latent_channels * if self.dvi { 2 } else { 1 }
    }

    pub fn tokens(&self) -> usize {
        self.latent_frames * (self.latent_h / 2) * (self.latent_w / 2)
    }

    pub fn patch_features_in(&self) -> usize {
        4 * self.in_channels()
    }

    pub fn patch_features_out(&self) -> usize {
        4 * self.latent_channels
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.width % self.heads != 0 {
            return Err(NumericsError::Contract(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.latent_h % 2 != 0 || self.latent_w % 2 != 0 {
            return Err(NumericsError::Contract(format!(
                "latent spatial dims {}x{} must be even for 1x2x2 patches",
                self.latent_h, self.latent_w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    /// [D, 9D] zero-init modulation (shift/scale/gate for three sublayers).
    pub modulation: Linear<T>,
    pub attn_q: Linear<T>,
    pub attn_k: Linear<T>,
    pub attn_v: Linear<T>,
    pub attn_o: Linear<T>,
    pub cross_q: Linear<T>,
    pub cross_k: Linear<T>,
    pub cross_v: Linear<T>,
    pub cross_o: Linear<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct VelocityNet<T> {
    pub cfg: NetConfig,
    pub patch_proj: Linear<T>,
    pub pos_emb: Tensor<T>,
    pub time1: Linear<T>,
    pub time2: Linear<T>,
    pub cond_table: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub out_proj: Linear<T>,
}

pub struct LinearVars {
    w: Var,
    b: Var,
}

pub struct BlockVars {
    modulation: LinearVars,
    attn_q: LinearVars,
    attn_k: LinearVars,
    attn_v: LinearVars,
    attn_o: LinearVars,
    cross_q: LinearVars,
    cross_k: LinearVars,
    cross_v: LinearVars,
    cross_o: LinearVars,
    ffn1: LinearVars,
    ffn2: LinearVars,
}

pub struct NetVars {
    patch_proj: LinearVars,
    pos_emb: Var,
    time1: LinearVars,
    time2: LinearVars,
    pub cond_table: Var,
    blocks: Vec<BlockVars>,
    out_proj: LinearVars,
}

fn linear_init<T: Real>(
    rng: &mut rand_chacha::ChaCha8Rng,
    din: usize,
    dout: usize,
    zero: bool,
) -> Linear<T> {
    let w = if zero {
        Tensor::zeros(&[din, dout])
    } else {
        Tensor::from_vec(&[din, dout], (0..din * dout).map(|_| trunc_normal(rng, 0.02)).collect())
    };
    Linear { w, b: Tensor::zeros(&[dout]) }
}

impl<T: Real> VelocityNet<T> {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self, NumericsError> {
        cfg.validate()?;
        let mut rng = SeedStream::new(seed, "velocity-net-init").rng(0);
        let d = cfg.width;
        let blocks = (0..cfg.blocks)
            .map(|_| BlockParams {
                modulation: linear_init(&mut rng, d, 9 * d, true),
                attn_q: linear_init(&mut rng, d, d, false),
                attn_k: linear_init(&mut rng, d, d, false),
                attn_v: linear_init(&mut rng, d, d, false),
                attn_o: linear_init(&mut rng, d, d, false),
                cross_q: linear_init(&mut rng, d, d, false),
                cross_k: linear_init(&mut rng, d, d, false),
                cross_v: linear_init(&mut rng, d, d, false),
                cross_o: linear_init(&mut rng, d, d, false),
                ffn1: linear_init(&mut rng, d, 4 * d, false),
                ffn2: linear_init(&mut rng, 4 * d, d, false),
            })
            .collect();
        Ok(VelocityNet {
            patch_proj: linear_init(&mut rng, cfg.patch_features_in(), d, false),
            pos_emb: Tensor::from_vec(
                &[cfg.tokens(), d],
                (0..cfg.tokens() * d).map(|_| trunc_normal(&mut rng, 0.02)).collect(),
            ),
            time1: linear_init(&mut rng, TIME_FEATURES, d, false),
            time2: linear_init(&mut rng, d, d, false),
            cond_table: Tensor::from_vec(
                &[cfg.vocab, d],
                (0..cfg.vocab * d).map(|_| trunc_normal(&mut rng, 0.02)).collect(),
            ),
            blocks,
            out_proj: linear_init(&mut rng, d, cfg.patch_features_out(), false),
            cfg,
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Canonical (name, tensor) order shared by the optimizer, checkpoints,
    /// and [`VelocityNet::register`].
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("net.patch.w".into(), &self.patch_proj.w),
            ("net.patch.b".into(), &self.patch_proj.b),
            ("net.pos".into(), &self.pos_emb),
            ("net.time1.w".into(), &self.time1.w),
            ("net.time1.b".into(), &self.time1.b),
            ("net.time2.w".into(), &self.time2.w),
            ("net.time2.b".into(), &self.time2.b),
            ("net.table".into(), &self.cond_table),
        ];
        for (i, blk) in self.blocks.iter().enumerate() {
            for (name, lin) in Self::block_entries(blk) {
                out.push((format!("net.block{i}.{name}.w"), &lin.w));
                out.push((format!("net.block{i}.{name}.b"), &lin.b));
            }
        }
        out.push(("net.final.w".into(), &self.out_proj.w));
        out.push(("net.final.b".into(), &self.out_proj.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![
            &mut self.patch_proj.w,
            &mut self.patch_proj.b,
            &mut self.pos_emb,
            &mut self.time1.w,
            &mut self.time1.b,
            &mut self.time2.w,
            &mut self.time2.b,
            &mut self.cond_table,
        ];
        for blk in &mut self.blocks {
            for lin in [
                &mut blk.modulation,
                &mut blk.attn_q,
                &mut blk.attn_k,
                &mut blk.attn_v,
                &mut blk.attn_o,
                &mut blk.cross_q,
                &mut blk.cross_k,
                &mut blk.cross_v,
                &mut blk.cross_o,
                &mut blk.ffn1,
                &mut blk.ffn2,
            ] {
                out.push(&mut lin.w);
                out.push(&mut lin.b);
            }
        }
        out.push(&mut self.out_proj.w);
        out.push(&mut self.out_proj.b);
        out
    }

    fn block_entries(blk: &BlockParams<T>) -> Vec<(&'static str, &Linear<T>)> {
        vec![
            ("mod", &blk.modulation),
            ("attn_q", &blk.attn_q),
            ("attn_k", &blk.attn_k),
            ("attn_v", &blk.attn_v),
            ("attn_o", &blk.attn_o),
            ("cross_q", &blk.cross_q),
            ("cross_k", &blk.cross_k),
            ("cross_v", &blk.cross_v),
            ("cross_o", &blk.cross_o),
            ("ffn1", &blk.ffn1),
            ("ffn2", &blk.ffn2),
        ]
    }

    /// Registers all parameters as leaves, in canonical order.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Result<NetVars, NumericsError> {
        let lin = |tape: &mut Tape<T>, l: &Linear<T>| -> Result<LinearVars, NumericsError> {
            Ok(LinearVars {
                w: tape.leaf(l.w.clone(), trainable)?,
                b: tape.leaf(l.b.clone(), trainable)?,
            })
        };
        let patch_proj = lin(tape, &self.patch_proj)?;
        let pos_emb = tape.leaf(self.pos_emb.clone(), trainable)?;
        let time1 = lin(tape, &self.time1)?;
        let time2 = lin(tape, &self.time2)?;
        let cond_table = tape.leaf(self.cond_table.clone(), trainable)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            blocks.push(BlockVars {
                modulation: lin(tape, &blk.modulation)?,
                attn_q: lin(tape, &blk.attn_q)?,
                attn_k: lin(tape, &blk.attn_k)?,
                attn_v: lin(tape, &blk.attn_v)?,
                attn_o: lin(tape, &blk.attn_o)?,
                cross_q: lin(tape, &blk.cross_q)?,
                cross_k: lin(tape, &blk.cross_k)?,
                cross_v: lin(tape, &blk.cross_v)?,
                cross_o: lin(tape, &blk.cross_o)?,
                ffn1: lin(tape, &blk.ffn1)?,
                ffn2: lin(tape, &blk.ffn2)?,
            });
        }
        let out_proj = lin(tape, &self.out_proj)?;
        Ok(NetVars { patch_proj, pos_emb, time1, time2, cond_table, blocks, out_proj })
    }

    /// Parameter vars in canonical order, aligned with [`Self::params_mut`].
    pub fn var_order(vars: &NetVars) -> Vec<Var> {
        let mut out = vec![
            vars.patch_proj.w,
            vars.patch_proj.b,
            vars.pos_emb,
            vars.time1.w,
            vars.time1.b,
            vars.time2.w,
            vars.time2.b,
            vars.cond_table,
        ];
        for blk in &vars.blocks {
            for lv in [
                &blk.modulation,
                &blk.attn_q,
                &blk.attn_k,
                &blk.attn_v,
                &blk.attn_o,
                &blk.cross_q,
                &blk.cross_k,
                &blk.cross_v,
                &blk.cross_o,
                &blk.ffn1,
                &blk.ffn2,
            ] {
                out.push(lv.w);
                out.push(lv.b);
            }
        }
        out.push(vars.out_proj.w);
        out.push(vars.out_proj.b);
        out
    }

    /// Batched forward. `inputs` are `[t, h, w, Cin]` latents, `token_ids`
    /// the per-item condition tokens, `ts` the per-item flow times in [0, 1].
    /// Returns patch-space output `[B * tokens, 4C]`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape<T>,
        vars: &NetVars,
        inputs: &[&Tensor<T>],
        token_ids: &[&[u32]],
        ts: &[f64],
    ) -> Result<Var, NumericsError> {
        let cfg = &self.cfg;
        let b = inputs.len();
        if b == 0 || token_ids.len() != b || ts.len() != b {
            return Err(NumericsError::Contract(format!(
                "forward: {b} inputs vs {} token lists vs {} times",
                token_ids.len(),
                ts.len()
            )));
        }
        let want = [cfg.latent_frames, cfg.latent_h, cfg.latent_w, cfg.in_channels()];
        for z in inputs {
            if z.dims() != want {
                return Err(NumericsError::ShapeMismatch {
                    op: "velocity_forward",
                    lhs: z.dims().to_vec(),
                    rhs: want.to_vec(),
                });
            }
        }
        let n = cfg.tokens();
        let d = cfg.width;
        let heads = cfg.heads;

        // patchify into [B*N, 4Cin]
        let mut rows = Vec::with_capacity(b * n * cfg.patch_features_in());
        for z in inputs {
            patch_rows(z, &mut rows);
        }
        let patches = tape.constant(Tensor::from_vec(&[b * n, cfg.patch_features_in()], rows))?;
        let projected = tape.matmul(patches, vars.patch_proj.w)?;
        let projected = tape.add_row(projected, vars.patch_proj.b)?;
        let pos = tape.tile_rows(vars.pos_emb, b)?;
        let mut x = tape.add(projected, pos)?;

        // conditioning vector g = time_mlp(sin(t)) + mean(cond slots), [B, D]
        let mut time_rows = Vec::with_capacity(b * TIME_FEATURES);
        for &t in ts {
            time_rows.extend(time_features::<T>(t));
        }
        let time_feat = tape.constant(Tensor::from_vec(&[b, TIME_FEATURES], time_rows))?;
        let th = tape.matmul(time_feat, vars.time1.w)?;
        let th = tape.add_row(th, vars.time1.b)?;
        let th = tape.silu(th)?;
        let th = tape.matmul(th, vars.time2.w)?;
        let time_emb = tape.add_row(th, vars.time2.b)?;

        let mut cond_items = Vec::with_capacity(b);
        let mut pooled_items = Vec::with_capacity(b);
        for ids in token_ids {
            let emb = tape.embedding(vars.cond_table, ids)?;
            pooled_items.push(tape.mean_axis0(emb)?);
            cond_items.push(emb);
        }
        let cond_all = tape.concat(&cond_items, 0)?;
        let pooled = tape.concat(&pooled_items, 0)?;
        let g_raw = tape.add(time_emb, pooled)?;
        let g = tape.silu(g_raw)?;

        for blk in &vars.blocks {
            // 9 modulation vectors per item
            let m = tape.matmul(g, blk.modulation.w)?;
            let m = tape.add_row(m, blk.modulation.b)?;
            let mut mods = Vec::with_capacity(9);
            for i in 0..9 {
                let s = tape.slice(m, 1, i * d, d)?;
                mods.push(tape.repeat_rows(s, n)?);
            }

            // self-attention
            let xn = self.modulated_norm(tape, x, mods[0], mods[1])?;
            let q = self.linear(tape, xn, &blk.attn_q)?;
            let k = self.linear(tape, xn, &blk.attn_k)?;
            let v = self.linear(tape, xn, &blk.attn_v)?;
            let attn_out = tape.mha(q, k, v, heads, b)?;
            let attn_out = self.linear(tape, attn_out, &blk.attn_o)?;
            let gated = tape.mul(mods[2], attn_out)?;
            x = tape.add(x, gated)?;

            // cross-attention to condition slots
            let xn = self.modulated_norm(tape, x, mods[3], mods[4])?;
            let q = self.linear(tape, xn, &blk.cross_q)?;
            let k = self.linear(tape, cond_all, &blk.cross_k)?;
            let v = self.linear(tape, cond_all, &blk.cross_v)?;
            let cross_out = tape.mha(q, k, v, heads, b)?;
            let cross_out = self.linear(tape, cross_out, &blk.cross_o)?;
            let gated = tape.mul(mods[5], cross_out)?;
            x = tape.add(x, gated)?;

            // feed-forward
            let xn = self.modulated_norm(tape, x, mods[6], mods[7])?;
            let h1 = self.linear(tape, xn, &blk.ffn1)?;
            let h1 = tape.gelu(h1)?;
            let h2 = self.linear(tape, h1, &blk.ffn2)?;
            let gated = tape.mul(mods[8], h2)?;
            x = tape.add(x, gated)?;
        }

        let xn = tape.layer_norm(x, 1e-5)?;
        let out = tape.matmul(xn, vars.out_proj.w)?;
        tape.add_row(out, vars.out_proj.b)
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, l: &LinearVars) -> Result<Var, NumericsError> {
        let y = tape.matmul(x, l.w)?;
        tape.add_row(y, l.b)
    }

    /// LN(x) * (1 + scale) + shift with expanded per-item modulation rows.
    fn modulated_norm(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        shift: Var,
        scale: Var,
    ) -> Result<Var, NumericsError> {
        let xn = tape.layer_norm(x, 1e-5)?;
        let gain = tape.affine(scale, 1.0, 1.0)?;
        let scaled = tape.mul(xn, gain)?;
        tape.add(scaled, shift)
    }

    /// Single-item inference: velocity latent `[t, h, w, C]` for one state.
    pub fn velocity(
        &self,
        z_in: &Tensor<T>,
        token_ids: &[u32],
        t: f64,
    ) -> Result<Tensor<T>, NumericsError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let out = self.forward_batch(&mut tape, &vars, &[z_in], &[token_ids], &[t])?;
        Ok(self.unpatchify(tape.value(out), 0))
    }

    /// Rebuilds item `b`'s `[t, h, w, C]` latent from patch-space output.
    pub fn unpatchify(&self, out: &Tensor<T>, item: usize) -> Tensor<T> {
        let cfg = &self.cfg;
        let (tf, hh, ww, c) =
            (cfg.latent_frames, cfg.latent_h, cfg.latent_w, cfg.latent_channels);
        let n = cfg.tokens();
        let feat = cfg.patch_features_out();
        let rows = &out.data()[item * n * feat..(item + 1) * n * feat];
        let mut data = vec![T::ZERO; tf * hh * ww * c];
        let (ph, pw) = (hh / 2, ww / 2);
        for (token, row) in rows.chunks_exact(feat).enumerate() {
            let f = token / (ph * pw);
            let py = (token / pw) % ph;
            let px = token % pw;
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = &row[(dy * 2 + dx) * c..][..c];
                    let dst_base = ((f * hh + (py * 2 + dy)) * ww + (px * 2 + dx)) * c;
                    data[dst_base..dst_base + c].copy_from_slice(src);
                }
            }
        }
        Tensor::from_vec(&[tf, hh, ww, c], data)
    }

    pub fn save(&self, container: &mut Container) {
        for (name, t) in self.named_params() {
            container.push_real(name, t);
        }
    }

    pub fn load(cfg: NetConfig, container: &Container) -> Result<Self, NumericsError> {
        let mut net = VelocityNet::init(cfg, 0)?;
        let names: Vec<String> = net.named_params().iter().map(|(n, _)| n.clone()).collect();
        for (name, param) in names.iter().zip(net.params_mut()) {
            let loaded = container
                .get(name)
                .and_then(|e| e.to_real::<T>())
                .ok_or_else(|| {
                    NumericsError::Contract(format!("checkpoint is missing tensor {name}"))
                })?;
            if loaded.dims() != param.dims() {
                return Err(NumericsError::Contract(format!(
                    "checkpoint tensor {name} dims {:?} do not match config {:?}",
                    loaded.dims(),
                    param.dims()
                )));
            }
            *param = loaded;
        }
        Ok(net)
    }
}

/// Patch rows of one `[t, h, w, C]` latent appended to `out`: token order is
/// (frame, patch-row, patch-col), feature order (dy, dx, channel).
pub fn patch_rows<T: Real>(z: &Tensor<T>, out: &mut Vec<T>) {
    let d = z.dims();
    let (tf, hh, ww, c) = (d[0], d[1], d[2], d[3]);
    let data = z.data();
    for f in 0..tf {
        for py in 0..hh / 2 {
            for px in 0..ww / 2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let base = ((f * hh + (py * 2 + dy)) * ww + (px * 2 + dx)) * c;
                        out.extend_from_slice(&data[base..base + c]);
                    }
                }
            }
        }
    }
}

/// Sinusoidal features of t in [0, 1], scaled to a 0..1000 clock.
pub fn time_features<T: Real>(t: f64) -> Vec<T> {
    let half = TIME_FEATURES / 2;
    let mut out = Vec::with_capacity(TIME_FEATURES);
    let scaled = t * 1000.0;
    for i in 0..half {
        let freq = (-(i as f64) * (10000f64).ln() / (half - 1) as f64).exp();
        out.push(real::<T>((scaled * freq).sin()));
        out.push(real::<T>((scaled * freq).cos()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetConfig {
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

    fn rand_latent(cfg: &NetConfig, seed: u64, channels: usize) -> Tensor<f32> {
        let mut rng = SeedStream::new(seed, "net-test").rng(0);
        let numel = cfg.latent_frames * cfg.latent_h * cfg.latent_w * channels;
        Tensor::from_vec(
            &[cfg.latent_frames, cfg.latent_h, cfg.latent_w, channels],
            (0..numel).map(|_| crate::rng::normal(&mut rng)).collect(),
        )
    }

    #[test]
    fn shape_contract_with_and_without_dvi() {
        for dvi in [true, false] {
            let cfg = NetConfig { dvi, ..tiny_cfg() };
            let net = VelocityNet::<f32>::init(cfg, 0).unwrap();
            let z = rand_latent(&cfg, 1, cfg.in_channels());
            let ids = vec![1u32, 0, 0, 0, 0, 0, 0, 0];
            let v = net.velocity(&z, &ids, 0.3).unwrap();
            assert_eq!(v.dims(), &[2, 4, 4, 4]);
            // wrong channel count (DVI misconfiguration) is a shape error
            let bad = rand_latent(&cfg, 2, cfg.in_channels() + 4);
            assert!(net.velocity(&bad, &ids, 0.3).is_err());
        }
    }

    #[test]
    fn deterministic_init_and_forward() {
        let cfg = tiny_cfg();
        let a = VelocityNet::<f32>::init(cfg, 5).unwrap();
        let b = VelocityNet::<f32>::init(cfg, 5).unwrap();
        for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params().iter()) {
            assert_eq!(x, y);
        }
        let z = rand_latent(&cfg, 3, cfg.in_channels());
        let ids = vec![2u32, 9, 0, 0, 0, 0, 0, 0];
        let v1 = a.velocity(&z, &ids, 0.7).unwrap();
        let v2 = a.velocity(&z, &ids, 0.7).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn init_modulation_zero_but_output_input_dependent() {
        let cfg = tiny_cfg();
        let net = VelocityNet::<f32>::init(cfg, 7).unwrap();
        for blk in &net.blocks {
            assert!(blk.modulation.w.data().iter().all(|&v| v == 0.0));
            assert!(blk.modulation.b.data().iter().all(|&v| v == 0.0));
        }
        let ids = vec![1u32, 0, 0, 0, 0, 0, 0, 0];
        let za = rand_latent(&cfg, 10, cfg.in_channels());
        let zb = rand_latent(&cfg, 11, cfg.in_channels());
        let va = net.velocity(&za, &ids, 0.0).unwrap();
        let vb = net.velocity(&zb, &ids, 0.0).unwrap();
        assert_ne!(va, vb, "output must depend on input at init");
    }

    #[test]
    fn different_queries_change_output_after_training_signal() {
        // At zero-init modulation the cross-attention path is gated off, so
        // nudge the gates away from zero to emulate a trained net.
        let cfg = tiny_cfg();
        let mut net = VelocityNet::<f32>::init(cfg, 2).unwrap();
        let mut rng = SeedStream::new(99, "gate-nudge").rng(0);
        for blk in &mut net.blocks {
            for v in blk.modulation.w.data_mut().iter_mut() {
                *v = trunc_normal(&mut rng, 0.05);
            }
        }
        let z = rand_latent(&cfg, 4, cfg.in_channels());
        let a = net.velocity(&z, &[4, 8, 1, 0, 0, 0, 0, 0], 0.2).unwrap();
        let b = net.velocity(&z, &[5, 8, 1, 0, 0, 0, 0, 0], 0.2).unwrap();
        let diff: f32 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(diff > 0.0, "queries with different referents must steer the field");
    }

    #[test]
    fn swapping_padded_slots_is_identity() {
        let cfg = tiny_cfg();
        let net = VelocityNet::<f32>::init(cfg, 3).unwrap();
        let z = rand_latent(&cfg, 5, cfg.in_channels());
        // slots 2..8 are all pad; swapping two of them changes nothing
        let a = net.velocity(&z, &[1, 4, 0, 0, 0, 0, 0, 0], 0.5).unwrap();
        let b = net.velocity(&z, &[1, 4, 0, 0, 0, 0, 0, 0], 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn time_embeddings_distinct() {
        let cfg = tiny_cfg();
        let net = VelocityNet::<f32>::init(cfg, 8).unwrap();
        let z = rand_latent(&cfg, 6, cfg.in_channels());
        let ids = vec![1u32, 0, 0, 0, 0, 0, 0, 0];
        // with zero modulation the t-path is gated off; compare raw features
        let f0 = time_features::<f32>(0.0);
        let f5 = time_features::<f32>(0.5);
        let f1 = time_features::<f32>(1.0);
        assert_ne!(f0, f5);
        assert_ne!(f5, f1);
        assert_ne!(f0, f1);
        let _ = net.velocity(&z, &ids, 1.0).unwrap();
    }

    #[test]
    fn patchify_unpatchify_roundtrip() {
        let cfg = NetConfig { dvi: false, ..tiny_cfg() };
        let net = VelocityNet::<f32>::init(cfg, 1).unwrap();
        let z = rand_latent(&cfg, 12, cfg.latent_channels);
        let mut rows = Vec::new();
        patch_rows(&z, &mut rows);
        let as_tensor = Tensor::from_vec(&[cfg.tokens(), cfg.patch_features_out()], rows);
        let back = net.unpatchify(&as_tensor, 0);
        assert_eq!(back, z);
    }

    #[test]
    fn default_param_count_under_cap() {
        let net = VelocityNet::<f32>::init(NetConfig::default(), 0).unwrap();
        let count = net.param_count();
        assert!(count < 3_000_000, "param count {count}");
        assert!(count > 1_000_000, "unexpectedly small net: {count}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = tiny_cfg();
        let net = VelocityNet::<f32>::init(cfg, 4).unwrap();
        let mut c = Container::new();
        net.save(&mut c);
        let back = VelocityNet::<f32>::load(cfg, &c).unwrap();
        for ((na, a), (nb, b)) in net.named_params().iter().zip(back.named_params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b, "{na}");
        }
    }
}
