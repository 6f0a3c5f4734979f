//! DAVIS-protocol evaluation: region similarity J, boundary accuracy F, and
//! their average.
//!
//! Boundary matching uses the standard dilation-style proximity test: a
//! boundary pixel counts as matched when any opposite-boundary pixel lies
//! within the tolerance radius. The acceptance suite checks both J and F
//! against a brute-force oracle that recomputes everything from pairwise
//! distances.

use crate::error::NumericsError;
use crate::movingshapes::MaskTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JAggregation {
    /// Sum of per-frame intersections over sum of per-frame unions (default).
    Clip,
    /// Mean of per-frame IoUs, empty/empty frames scoring 1.
    Frame,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    /// Boundary tolerance in pixels; None picks max(1, round(0.008 * diag)).
    pub tolerance: Option<usize>,
    pub j_aggregation: JAggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { tolerance: None, j_aggregation: JAggregation::Clip }
    }
}

/// The DAVIS convention: 0.8% of the image diagonal, at least one pixel.
pub fn default_tolerance(h: usize, w: usize) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    ((0.008 * diag).round() as usize).max(1)
}

fn check_dims(a: &MaskTensor, b: &MaskTensor, op: &'static str) -> Result<(), NumericsError> {
    if a.dims() != b.dims() {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    Ok(())
}

/// Region similarity over the full clip (the default aggregation).
pub fn jaccard(pred: &MaskTensor, gt: &MaskTensor) -> Result<f64, NumericsError> {
    jaccard_with(pred, gt, JAggregation::Clip)
}

pub fn jaccard_with(
    pred: &MaskTensor,
    gt: &MaskTensor,
    agg: JAggregation,
) -> Result<f64, NumericsError> {
    check_dims(pred, gt, "jaccard")?;
    match agg {
        JAggregation::Clip => {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
                inter += (p != 0 && g != 0) as usize;
                union += (p != 0 || g != 0) as usize;
            }
            Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
        }
        JAggregation::Frame => {
            let mut total = 0.0;
            for f in 0..pred.t {
                let mut inter = 0usize;
                let mut union = 0usize;
                for (&p, &g) in pred.frame(f).iter().zip(gt.frame(f).iter()) {
                    inter += (p != 0 && g != 0) as usize;
                    union += (p != 0 || g != 0) as usize;
                }
                total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            }
            Ok(total / pred.t as f64)
        }
    }
}

/// Boundary pixels of one frame: mask pixels with a four-neighbor outside the
/// mask, or sitting on the image border.
pub fn boundary_pixels(frame: &[u8], h: usize, w: usize) -> Vec<(usize, usize)> {
    let at = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && frame[y as usize * w + x as usize] != 0
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if frame[y * w + x] == 0 {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            let interior =
                at(yi - 1, xi) && at(yi + 1, xi) && at(yi, xi - 1) && at(yi, xi + 1);
            let on_border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            if !interior || on_border {
                out.push((y, x));
            }
        }
    }
    out
}

/// Contour accuracy: per-frame boundary-matching F measure, averaged over
/// frames.
pub fn boundary_f(
    pred: &MaskTensor,
    gt: &MaskTensor,
    tolerance: usize,
) -> Result<f64, NumericsError> {
    check_dims(pred, gt, "boundary_f")?;
    let (h, w) = (pred.h, pred.w);
    let mut total = 0.0;
    for f in 0..pred.t {
        let pb = boundary_pixels(pred.frame(f), h, w);
        let gb = boundary_pixels(gt.frame(f), h, w);
        total += match (pb.is_empty(), gb.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            (false, false) => {
                let near_gt = dilate(&gb, h, w, tolerance);
                let near_pred = dilate(&pb, h, w, tolerance);
                let matched_p = pb.iter().filter(|&&(y, x)| near_gt[y * w + x]).count();
                let matched_g = gb.iter().filter(|&&(y, x)| near_pred[y * w + x]).count();
                let precision = matched_p as f64 / pb.len() as f64;
                let recall = matched_g as f64 / gb.len() as f64;
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            }
        };
    }
    Ok(total / pred.t as f64)
}

/// Stamps a Euclidean disk of radius `tolerance` around every seed pixel.
fn dilate(seeds: &[(usize, usize)], h: usize, w: usize, tolerance: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    let r = tolerance as isize;
    let r2 = (tolerance * tolerance) as isize;
    for &(y, x) in seeds {
        for dy in -r..=r {
            for dx in -r..=r {
                if dy * dy + dx * dx > r2 {
                    continue;
                }
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct SampleScores {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub per_sample: Vec<SampleScores>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    /// Fraction of directed query pairs where the prediction overlaps its own
    /// ground truth more than the partner query's; None without pairs.
    pub paired_rate: Option<f64>,
    pub pair_count: usize,
}

impl EvalResult {
    /// Tab-separated per-sample table with a trailing mean row.
    pub fn tsv(&self) -> String {
        let mut out = String::from("index\tJ\tF\tJF\n");
        for (i, s) in self.per_sample.iter().enumerate() {
            out.push_str(&format!("{i}\t{:.6}\t{:.6}\t{:.6}\n", s.j, s.f, s.jf));
        }
        out.push_str(&format!(
            "mean\t{:.6}\t{:.6}\t{:.6}\n",
            self.mean_j, self.mean_f, self.mean_jf
        ));
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "samples: {}\nJ:   {:.4}\nF:   {:.4}\nJ&F: {:.4}\n",
            self.per_sample.len(),
            self.mean_j,
            self.mean_f,
            self.mean_jf
        );
        if let Some(rate) = self.paired_rate {
            out.push_str(&format!(
                "paired-query disambiguation: {:.4} over {} directed pairs\n",
                rate, self.pair_count
            ));
        }
        out
    }
}

/// Scores aligned prediction/ground-truth lists. `pairs` carries positions of
/// samples sharing a video with different referents.
pub fn evaluate_split(
    predictions: &[MaskTensor],
    ground_truths: &[MaskTensor],
    pairs: &[(usize, usize)],
    cfg: &EvalConfig,
) -> Result<EvalResult, NumericsError> {
    if predictions.len() != ground_truths.len() || predictions.is_empty() {
        return Err(NumericsError::Contract(format!(
            "evaluate_split needs aligned non-empty lists, got {} predictions / {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(predictions.len());
    for (p, g) in predictions.iter().zip(ground_truths.iter()) {
        let tol = cfg.tolerance.unwrap_or_else(|| default_tolerance(g.h, g.w));
        let j = jaccard_with(p, g, cfg.j_aggregation)?;
        let f = boundary_f(p, g, tol)?;
        per_sample.push(SampleScores { j, f, jf: (j + f) / 2.0 });
    }
    let n = per_sample.len() as f64;
    let mean_j = per_sample.iter().map(|s| s.j).sum::<f64>() / n;
    let mean_f = per_sample.iter().map(|s| s.f).sum::<f64>() / n;
    let mean_jf = per_sample.iter().map(|s| s.jf).sum::<f64>() / n;

    let mut wins = 0usize;
    let mut checks = 0usize;
    for &(a, b) in pairs {
        for (q, other) in [(a, b), (b, a)] {
            let own = jaccard_with(&predictions[q], &ground_truths[q], JAggregation::Clip)?;
            let cross = jaccard_with(&predictions[q], &ground_truths[other], JAggregation::Clip)?;
            wins += (own > cross) as usize;
            checks += 1;
        }
    }
    let paired_rate = (checks > 0).then(|| wins as f64 / checks as f64);

    Ok(EvalResult { per_sample, mean_j, mean_f, mean_jf, paired_rate, pair_count: checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;

    fn mask(t: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> MaskTensor {
        let mut m = MaskTensor::new(t, h, w);
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    if f(ti, y, x) {
                        m.data[(ti * h + y) * w + x] = 1;
                    }
                }
            }
        }
        m
    }

    fn random_mask(seed: u64, t: usize, h: usize, w: usize) -> MaskTensor {
        let mut rng = SeedStream::new(seed, "metrics-test").rng(0);
        let density = rng.gen_range(0.2..0.8);
        mask(t, h, w, |_, _, _| rng.gen_bool(density))
    }

    #[test]
    fn jaccard_identities() {
        let a = mask(2, 4, 4, |_, y, _| y < 2);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let empty = MaskTensor::new(2, 4, 4);
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
        let b = mask(2, 4, 4, |_, y, _| y >= 2);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_half_overlap() {
        // 4x4 frame: pred = left half, gt = top half -> 4 / 12
        let pred = mask(1, 4, 4, |_, _, x| x < 2);
        let gt = mask(1, 4, 4, |_, y, _| y < 2);
        let j = jaccard(&pred, &gt).unwrap();
        assert!((j - 4.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_f_identities() {
        let a = mask(3, 16, 16, |_, y, x| (4..10).contains(&y) && (5..11).contains(&x));
        assert_eq!(boundary_f(&a, &a, 1).unwrap(), 1.0);
        let empty = MaskTensor::new(3, 16, 16);
        assert_eq!(boundary_f(&empty, &a, 1).unwrap(), 0.0);
        assert_eq!(boundary_f(&empty, &empty, 1).unwrap(), 1.0);
    }

    #[test]
    fn shifted_square_within_tolerance_scores_one() {
        let gt = mask(1, 16, 16, |_, y, x| (5..11).contains(&y) && (5..11).contains(&x));
        let pred = mask(1, 16, 16, |_, y, x| (5..11).contains(&y) && (6..12).contains(&x));
        assert_eq!(boundary_f(&pred, &gt, 1).unwrap(), 1.0);
        // and strictly below one at zero tolerance
        assert!(boundary_f(&pred, &gt, 0).unwrap() < 1.0);
    }

    #[test]
    fn symmetry() {
        for seed in 0..20 {
            let a = random_mask(seed, 2, 12, 12);
            let b = random_mask(seed + 100, 2, 12, 12);
            assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
            assert_eq!(boundary_f(&a, &b, 1).unwrap(), boundary_f(&b, &a, 1).unwrap());
        }
    }

    #[test]
    fn removing_true_positives_never_increases_j() {
        for seed in 0..20 {
            let gt = random_mask(seed, 1, 10, 10);
            let pred = random_mask(seed + 50, 1, 10, 10);
            let j0 = jaccard(&pred, &gt).unwrap();
            // remove one true-positive pixel, if any
            let mut smaller = pred.clone();
            if let Some(i) = (0..pred.data.len()).find(|&i| pred.data[i] != 0 && gt.data[i] != 0) {
                smaller.data[i] = 0;
                let j1 = jaccard(&smaller, &gt).unwrap();
                assert!(j1 <= j0 + 1e-15, "seed {seed}: {j1} > {j0}");
            }
        }
    }

    #[test]
    fn translation_invariance_away_from_borders() {
        let base = |dy: usize, dx: usize| {
            mask(1, 20, 20, move |_, y, x| {
                ((6 + dy)..(10 + dy)).contains(&y) && ((5 + dx)..(11 + dx)).contains(&x)
            })
        };
        let blob = |dy: usize, dx: usize| {
            mask(1, 20, 20, move |_, y, x| {
                ((7 + dy)..(12 + dy)).contains(&y) && ((6 + dx)..(10 + dx)).contains(&x)
            })
        };
        let j0 = jaccard(&base(0, 0), &blob(0, 0)).unwrap();
        let f0 = boundary_f(&base(0, 0), &blob(0, 0), 2).unwrap();
        for (dy, dx) in [(1, 2), (3, 1), (2, 3)] {
            assert_eq!(jaccard(&base(dy, dx), &blob(dy, dx)).unwrap(), j0);
            assert_eq!(boundary_f(&base(dy, dx), &blob(dy, dx), 2).unwrap(), f0);
        }
    }

    #[test]
    fn evaluate_split_means_and_pairs() {
        let gt1 = mask(1, 8, 8, |_, y, x| y < 4 && x < 4);
        let gt2 = mask(1, 8, 8, |_, y, x| y >= 4 && x >= 4);
        let preds = vec![gt1.clone(), gt2.clone()];
        let gts = vec![gt1.clone(), gt2.clone()];
        let res = evaluate_split(&preds, &gts, &[(0, 1)], &EvalConfig::default()).unwrap();
        assert_eq!(res.mean_jf, 1.0);
        assert_eq!(res.paired_rate, Some(1.0));
        for s in &res.per_sample {
            assert_eq!(s.jf, (s.j + s.f) / 2.0);
        }

        // all-empty predictions on nonempty gts -> J = F = 0
        let empty = MaskTensor::new(1, 8, 8);
        let res0 =
            evaluate_split(&[empty.clone(), empty], &gts, &[], &EvalConfig::default()).unwrap();
        assert_eq!(res0.mean_j, 0.0);
        assert_eq!(res0.mean_f, 0.0);
        assert_eq!(res0.paired_rate, None);
    }

    #[test]
    fn misaligned_lists_are_a_contract_error() {
        let m = MaskTensor::new(1, 4, 4);
        let got = evaluate_split(&[m.clone()], &[m.clone(), m], &[], &EvalConfig::default());
        assert!(matches!(got, Err(NumericsError::Contract(_))));
    }

    #[test]
    fn default_tolerance_examples() {
        assert_eq!(default_tolerance(32, 32), 1);
        assert_eq!(default_tolerance(480, 854), 8);
    }
}
