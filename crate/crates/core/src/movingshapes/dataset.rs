//! Dataset directory layout and (de)serialization.
//!
//! `<split>/<index>.video.frvs` + `<index>.mask.frvs` + `<index>.query.txt`.
//! Bytes are a pure function of (n, seed, split, geometry). Every fifth index
//! starts a paired entry: two consecutive samples share one video but carry
//! queries with different referents.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::query::QuerySpec;
use super::scene::generate_scene_sized;
use super::{render, MaskTensor, VideoTensor};
use crate::error::IoError;
use crate::io::frvs::{Container, Entry, TensorU8};
use crate::io::sha256_hex;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { frames: 8, height: 32, width: 32 }
    }
}

/// One dataset record, fully materialized.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: usize,
    pub video: VideoTensor,
    pub mask: MaskTensor,
    pub query: QuerySpec,
    /// SHA-256 of the video file bytes; samples sharing a digest share the
    /// video (the paired-query subset).
    pub video_digest: String,
}

fn sample_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{index:05}.video.frvs")),
        dir.join(format!("{index:05}.mask.frvs")),
        dir.join(format!("{index:05}.query.txt")),
    )
}

fn query_file_text(q: &QuerySpec) -> String {
    let opt = |name: Option<&str>| name.unwrap_or("none").to_string();
    format!(
        "kind={}\ncomparative={}\ncolor={}\ndirection={}\n{}\n",
        q.kind.name(),
        opt(q.comparative.map(|c| c.name())),
        opt(q.color.map(|c| c.name())),
        opt(q.direction.map(|d| d.name())),
        q.text(),
    )
}

fn parse_query_file(text: &str, origin: &str) -> Result<QuerySpec, IoError> {
    let fields: Vec<&str> = text.lines().filter(|l| l.contains('=')).collect();
    QuerySpec::parse(&fields.join(","))
        .map_err(|e| IoError::format(origin, format!("bad query file: {e}")))
}

/// Generates `n` samples into `out_dir/split/`, returning the corpus digest.
pub fn generate_dataset(
    out_dir: &Path,
    split: &str,
    n: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<String, IoError> {
    if n == 0 {
        return Err(IoError::Contract("dataset size must be at least 1".into()));
    }
    let dir = out_dir.join(split);
    std::fs::create_dir_all(&dir).map_err(|e| IoError::file(dir.display().to_string(), e))?;

    let stream = SeedStream::new(seed, &format!("dataset-{split}"));
    let mut digest_input = Vec::new();
    let mut index = 0usize;
    let mut scene_counter = 0u64;
    while index < n {
        let paired = index % 5 == 0 && index + 1 < n;
        let scene_seed: u64 = stream.rng(scene_counter).gen();
        scene_counter += 1;
        let build = generate_scene_sized(scene_seed, cfg.frames, cfg.height, cfg.width, paired);
        let (video, masks) = render(&build.scene);
        let video_entry = {
            let mut c = Container::new();
            c.push("video", Entry::F32(video));
            c.encode()
        };
        for (q, referent) in &build.queries {
            let (vp, mp, qp) = sample_paths(&dir, index);
            write_bytes(&vp, &video_entry)?;
            let mask = &masks[*referent];
            let mask_bytes = {
                let mut c = Container::new();
                c.push(
                    "mask",
                    Entry::U8(TensorU8::new(vec![mask.t, mask.h, mask.w], mask.data.clone())),
                );
                c.encode()
            };
            write_bytes(&mp, &mask_bytes)?;
            let query_bytes = query_file_text(q).into_bytes();
            write_bytes(&qp, &query_bytes)?;
            digest_input.extend_from_slice(&video_entry);
            digest_input.extend_from_slice(&mask_bytes);
            digest_input.extend_from_slice(&query_bytes);
            index += 1;
        }
    }
    Ok(sha256_hex(&digest_input))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|e| IoError::file(path.display().to_string(), e))
}

/// Loads every sample of `dir/split`, sorted by index.
pub fn load_dataset(root: &Path, split: &str) -> Result<Vec<Sample>, IoError> {
    let dir = root.join(split);
    let mut indices = list_indices(&dir, ".video.frvs")?;
    indices.sort_unstable();
    let mut samples = Vec::with_capacity(indices.len());
    for index in indices {
        let (vp, mp, qp) = sample_paths(&dir, index);
        let video_bytes =
            std::fs::read(&vp).map_err(|e| IoError::file(vp.display().to_string(), e))?;
        let video_digest = sha256_hex(&video_bytes);
        let video = Container::decode(&video_bytes, &vp.display().to_string())?
            .get("video")
            .and_then(|e| e.as_f32().cloned())
            .ok_or_else(|| IoError::format(vp.display().to_string(), "missing f32 `video`"))?;
        let mask = read_mask_file(&mp)?;
        let qtext =
            std::fs::read_to_string(&qp).map_err(|e| IoError::file(qp.display().to_string(), e))?;
        let query = parse_query_file(&qtext, &qp.display().to_string())?;
        samples.push(Sample { index, video, mask, query, video_digest });
    }
    Ok(samples)
}

pub fn read_mask_file(path: &Path) -> Result<MaskTensor, IoError> {
    let c = Container::read_file(path)?;
    let m = c
        .get("mask")
        .and_then(|e| e.as_u8().cloned())
        .ok_or_else(|| IoError::format(path.display().to_string(), "missing u8 `mask`"))?;
    if m.dims.len() != 3 {
        return Err(IoError::format(
            path.display().to_string(),
            format!("mask must be T x H x W, got {:?}", m.dims),
        ));
    }
    Ok(MaskTensor::from_data(m.dims[0], m.dims[1], m.dims[2], m.data))
}

/// Loads only the masks of a split directory, sorted by index. Used by eval,
/// where the prediction directory carries nothing but masks.
pub fn load_split_masks(dir: &Path) -> Result<Vec<(usize, MaskTensor)>, IoError> {
    let mut indices = list_indices(dir, ".mask.frvs")?;
    indices.sort_unstable();
    indices
        .into_iter()
        .map(|i| read_mask_file(&dir.join(format!("{i:05}.mask.frvs"))).map(|m| (i, m)))
        .collect()
}

fn list_indices(dir: &Path, suffix: &str) -> Result<Vec<usize>, IoError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| IoError::file(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| IoError::file(dir.display().to_string(), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(suffix) {
            if let Ok(i) = stem.parse::<usize>() {
                out.push(i);
            }
        }
    }
    Ok(out)
}

/// Groups sample positions that share a video digest; each group of two is a
/// paired-query entry.
pub fn find_pairs(samples: &[Sample]) -> Vec<(usize, usize)> {
    let mut by_digest: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (pos, s) in samples.iter().enumerate() {
        by_digest.entry(&s.video_digest).or_default().push(pos);
    }
    let mut pairs: Vec<(usize, usize)> = by_digest
        .into_values()
        .filter(|v| v.len() == 2)
        .map(|v| (v[0], v[1]))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Corpus digest of an existing split, matching what generation returned.
pub fn dataset_digest(root: &Path, split: &str) -> Result<String, IoError> {
    let dir = root.join(split);
    let mut indices = list_indices(&dir, ".video.frvs")?;
    indices.sort_unstable();
    let mut digest_input = Vec::new();
    for index in indices {
        let (vp, mp, qp) = sample_paths(&dir, index);
        for p in [vp, mp, qp] {
            let bytes =
                std::fs::read(&p).map_err(|e| IoError::file(p.display().to_string(), e))?;
            digest_input.extend_from_slice(&bytes);
        }
    }
    Ok(sha256_hex(&digest_input))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig::default();
        let a = generate_dataset(d1.path(), "train", 10, 0, &cfg).unwrap();
        let b = generate_dataset(d2.path(), "train", 10, 0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, dataset_digest(d1.path(), "train").unwrap());
        let c = generate_dataset(d1.path(), "val", 10, 0, &cfg).unwrap();
        assert_ne!(a, c, "splits must draw different scenes");
    }

    #[test]
    fn roundtrip_and_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig::default();
        generate_dataset(dir.path(), "val", 20, 3, &cfg).unwrap();
        let samples = load_dataset(dir.path(), "val").unwrap();
        assert_eq!(samples.len(), 20);
        let pairs = find_pairs(&samples);
        // indices 0,5,10,15 start pairs
        assert_eq!(pairs.len(), 4);
        for &(a, b) in &pairs {
            assert_eq!(samples[a].video_digest, samples[b].video_digest);
            assert_ne!(samples[a].query, samples[b].query);
            assert_ne!(samples[a].mask, samples[b].mask);
        }
        // paired coverage: 8 of 20 = 40% >= 20%
        assert!(2 * pairs.len() * 5 >= samples.len());
    }

    #[test]
    fn mask_matches_rerendered_referent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { frames: 4, height: 16, width: 16 };
        generate_dataset(dir.path(), "train", 6, 11, &cfg).unwrap();
        let samples = load_dataset(dir.path(), "train").unwrap();
        for s in &samples {
            assert_eq!(s.mask.dims(), [4, 16, 16]);
            assert!(s.mask.area() > 0, "empty referent mask");
            assert_eq!(s.video.dims(), &[4, 16, 16, 3]);
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(dir.path(), "train", 0, 0, &DatasetConfig::default()).is_err());
    }
}
