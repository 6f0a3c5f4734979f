//! Ablation grid runner: trains one model per (paradigm, p_bbs, spa, dvi)
//! cell and seed on shared data with a shared codec, and reports J / F / J&F
//! per cell as tab-separated values.

use super::train::{evaluate_model, train_flow, EncodedDataset, TrainOptions};
use super::{FlowConfig, Paradigm};
use crate::codec::{Codec, DecodeStrategy};
use crate::error::FlowError;
use crate::metrics::EvalConfig;
use crate::net::{NetConfig, VelocityNet};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub paradigm: Paradigm,
    pub p_bbs: f64,
    pub spa: bool,
    pub dvi: bool,
}

impl AblationCell {
    fn flow_config(&self, base: &FlowConfig, seed: u64) -> FlowConfig {
        FlowConfig {
            paradigm: self.paradigm,
            p_bbs: self.p_bbs,
            spa: self.spa,
            dvi: self.dvi,
            seed,
            ..base.clone()
        }
    }
}

/// The default seven-cell grid: the three alternative paradigms, the base
/// flow, the BBS upgrade, then SPA and DVI stacked on top.
pub fn default_grid() -> Vec<AblationCell> {
    vec![
        AblationCell { paradigm: Paradigm::Noise2MaskFlow, p_bbs: 0.0, spa: false, dvi: true },
        AblationCell { paradigm: Paradigm::OnestepMask, p_bbs: 0.0, spa: false, dvi: false },
        AblationCell { paradigm: Paradigm::OnestepVelocity, p_bbs: 0.0, spa: false, dvi: false },
        AblationCell { paradigm: Paradigm::Video2MaskFlow, p_bbs: 0.0, spa: false, dvi: false },
        AblationCell { paradigm: Paradigm::Video2MaskFlow, p_bbs: 0.5, spa: false, dvi: false },
        AblationCell { paradigm: Paradigm::Video2MaskFlow, p_bbs: 0.5, spa: true, dvi: false },
        AblationCell { paradigm: Paradigm::Video2MaskFlow, p_bbs: 0.5, spa: true, dvi: true },
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// Seed index, or None for the per-cell mean row.
    pub seed: Option<u64>,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Per-cell mean J&F, keyed by cell.
    pub fn mean_jf(&self, cell: &AblationCell) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed.is_none() && r.cell == *cell)
            .map(|r| r.jf)
    }

    /// Columns: paradigm, p_bbs, spa, dvi, seed, J, F, JF. Per-seed rows
    /// first, then one mean row per cell (seed column `mean`).
    pub fn tsv(&self) -> String {
        let mut out = String::from("paradigm\tp_bbs\tspa\tdvi\tseed\tJ\tF\tJF\n");
        for r in &self.rows {
            let seed = r.seed.map_or("mean".to_string(), |s| s.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                r.cell.paradigm.name(),
                r.cell.p_bbs,
                r.cell.spa,
                r.cell.dvi,
                seed,
                r.j,
                r.f,
                r.jf
            ));
        }
        out
    }
}

/// Trains and evaluates every cell x seed on shared data and codec.
/// `on_progress` is called after each finished run with (cell, seed, J&F).
pub fn run_ablation<T: Real>(
    cells: &[AblationCell],
    seeds: &[u64],
    train_data: &EncodedDataset<T>,
    val_data: &EncodedDataset<T>,
    codec: &Codec<T>,
    base_flow: &FlowConfig,
    net_template: &NetConfig,
    eval_cfg: &EvalConfig,
    threshold: f64,
    threads: usize,
    mut on_progress: impl FnMut(&AblationCell, u64, f64),
) -> Result<AblationReport, FlowError> {
    let mut rows = Vec::new();
    for cell in cells {
        let mut cell_scores = Vec::new();
        for &seed in seeds {
            let cfg = cell.flow_config(base_flow, seed);
            cfg.validate()?;
            let net_cfg = NetConfig { dvi: cell.dvi, ..*net_template };
            let mut net = VelocityNet::<T>::init(net_cfg, seed)?;
            train_flow(train_data, codec, &mut net, &cfg, &TrainOptions::default())?;
            let res = evaluate_model(
                val_data,
                &net,
                codec,
                &cfg,
                DecodeStrategy::Finetuned,
                eval_cfg,
                threshold,
                threads,
            )?;
            on_progress(cell, seed, res.mean_jf);
            rows.push(AblationRow {
                cell: *cell,
                seed: Some(seed),
                j: res.mean_j,
                f: res.mean_f,
                jf: res.mean_jf,
            });
            cell_scores.push((res.mean_j, res.mean_f, res.mean_jf));
        }
        let n = cell_scores.len() as f64;
        rows.push(AblationRow {
            cell: *cell,
            seed: None,
            j: cell_scores.iter().map(|s| s.0).sum::<f64>() / n,
            f: cell_scores.iter().map(|s| s.1).sum::<f64>() / n,
            jf: cell_scores.iter().map(|s| s.2).sum::<f64>() / n,
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_expected_rows() {
        let grid = default_grid();
        assert_eq!(grid.len(), 7);
        assert_eq!(grid[0].paradigm, Paradigm::Noise2MaskFlow);
        assert!(grid[0].dvi, "noise2mask keeps the video via DVI");
        assert_eq!(grid[6].paradigm, Paradigm::Video2MaskFlow);
        assert!(grid[6].spa && grid[6].dvi);
    }

    #[test]
    fn tsv_header_contract() {
        let report = AblationReport {
            rows: vec![AblationRow {
                cell: default_grid()[0],
                seed: Some(0),
                j: 0.5,
                f: 0.25,
                jf: 0.375,
            }],
        };
        let tsv = report.tsv();
        let mut lines = tsv.lines();
        assert_eq!(lines.next(), Some("paradigm\tp_bbs\tspa\tdvi\tseed\tJ\tF\tJF"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("noise2mask-flow\t0\tfalse\ttrue\t0\t"));
    }
}
