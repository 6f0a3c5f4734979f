//! MovingShapes-Ref: a procedural referring-segmentation benchmark.
//!
//! Short clips of 2-4 geometric shapes bouncing inside the frame, a per-frame
//! ground-truth mask for each shape, and a referring query that picks out
//! exactly one shape by kind, color, motion direction, or a comparative
//! ("the smaller circle", "the faster square").

mod dataset;
pub mod query;
mod scene;

pub use dataset::{
    dataset_digest, find_pairs, generate_dataset, load_dataset, load_split_masks, read_mask_file,
    DatasetConfig, Sample,
};
pub use query::{embed_query, Comparative, Direction, QuerySpec, COND_SLOTS, VOCAB_SIZE};
pub use scene::{generate_paired_scene, generate_scene, SceneBuild};

use crate::tensor::Tensor;

/// A T x H x W binary clip stored as 0/1 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl MaskTensor {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        MaskTensor { t, h, w, data: vec![0; t * h * w] }
    }

    pub fn from_data(t: usize, h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), t * h * w);
        debug_assert!(data.iter().all(|&v| v <= 1));
        MaskTensor { t, h, w, data }
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        &self.data[i * self.h * self.w..(i + 1) * self.h * self.w]
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.h + y) * self.w + x] != 0
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }
}

/// Videos are `[T, H, W, 3]` f32 tensors with values in [0, 1].
pub type VideoTensor = Tensor<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Six named colors with pairwise-distinct mean luminance, so a
/// grayscale-reconstructing codec is forced to keep color identity in the
/// latent. All luminances sit below 0.5: binary masks (luminance 1.0) are
/// outside anything the video-trained decoder ever has to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Blue,
    Red,
    Green,
    Cyan,
    Magenta,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Blue,
        Color::Red,
        Color::Green,
        Color::Cyan,
        Color::Magenta,
        Color::Yellow,
    ];

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Blue => [0.05, 0.08, 0.23],
            Color::Red => [0.42, 0.08, 0.07],
            Color::Green => [0.10, 0.55, 0.13],
            Color::Cyan => [0.12, 0.44, 0.43],
            Color::Magenta => [0.55, 0.17, 0.48],
            Color::Yellow => [0.55, 0.53, 0.33],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
            Color::Green => "green",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// One shape with linear-with-bounce motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    pub color: Color,
    /// Radius / half-side in pixels, 3..=9.
    pub size: u32,
    /// Initial center position (x, y) in real pixels.
    pub pos: [f64; 2],
    /// Velocity (vx, vy) in pixels per frame; reflected at walls.
    pub vel: [f64; 2],
}

impl ShapeTrack {
    pub fn speed(&self) -> f64 {
        self.vel[0].hypot(self.vel[1])
    }

    /// Dominant axis-aligned direction of the initial velocity; None for a
    /// stationary track.
    pub fn direction(&self) -> Option<Direction> {
        let [vx, vy] = self.vel;
        if vx == 0.0 && vy == 0.0 {
            return None;
        }
        Some(if vx.abs() >= vy.abs() {
            if vx < 0.0 { Direction::Left } else { Direction::Right }
        } else if vy < 0.0 {
            Direction::Up
        } else {
            Direction::Down
        })
    }

    /// Center positions for each frame, reflecting at the walls so the
    /// analytic support [c-r, c+r] stays inside the frame.
    pub fn trajectory(&self, frames: usize, height: usize, width: usize) -> Vec<[f64; 2]> {
        let r = self.size as f64;
        let bounds = [(r, width as f64 - r), (r, height as f64 - r)];
        let mut pos = self.pos;
        let mut vel = self.vel;
        for axis in 0..2 {
            pos[axis] = pos[axis].clamp(bounds[axis].0, bounds[axis].1);
        }
        let mut out = Vec::with_capacity(frames);
        out.push(pos);
        for _ in 1..frames {
            for axis in 0..2 {
                let (lo, hi) = bounds[axis];
                let mut p = pos[axis] + vel[axis];
                // Reflect until inside; loop because a fast shape in a
                // narrow corridor can cross both walls in one frame.
                loop {
                    if p < lo {
                        p = 2.0 * lo - p;
                        vel[axis] = -vel[axis];
                    } else if p > hi {
                        p = 2.0 * hi - p;
                        vel[axis] = -vel[axis];
                    } else {
                        break;
                    }
                }
                pos[axis] = p;
            }
            out.push(pos);
        }
        out
    }

    /// Analytic point-in-support test for a given center.
    pub fn contains(&self, center: [f64; 2], px: f64, py: f64) -> bool {
        let [cx, cy] = center;
        let r = self.size as f64;
        match self.kind {
            ShapeKind::Circle => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= r * r
            }
            ShapeKind::Square => (px - cx).abs() <= r && (py - cy).abs() <= r,
            ShapeKind::Triangle => {
                // Isosceles, apex up: A=(cx, cy-r), B=(cx-r, cy+r), C=(cx+r, cy+r)
                let a = (cx, cy - r);
                let b = (cx - r, cy + r);
                let c = (cx + r, cy + r);
                point_in_triangle((px, py), a, b, c)
            }
        }
    }
}

fn point_in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let side = |p1: (f64, f64), p2: (f64, f64), x: (f64, f64), reference: (f64, f64)| {
        let cross = |o: (f64, f64), q: (f64, f64)| {
            (p2.0 - p1.0) * (q.1 - p1.1) - (p2.1 - p1.1) * (q.0 - p1.0) + 0.0 * o.0
        };
        let sp = cross(p1, x);
        let sr = cross(p1, reference);
        sp == 0.0 || sp.signum() == sr.signum()
    };
    side(a, b, p, c) && side(b, c, p, a) && side(c, a, p, b)
}

/// A complete scene: frame geometry plus its tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tracks: Vec<ShapeTrack>,
    pub seed: u64,
}

impl SceneSpec {
    /// True when the rasterized support of every track stays inside the frame
    /// at every frame (no support pixel on or beyond the walls is possible by
    /// construction, so this checks the analytic bound).
    pub fn all_in_frame(&self) -> bool {
        self.tracks.iter().all(|track| {
            let r = track.size as f64;
            track.trajectory(self.frames, self.height, self.width).iter().all(|&[cx, cy]| {
                cx >= r && cx <= self.width as f64 - r && cy >= r && cy <= self.height as f64 - r
            })
        })
    }
}

/// Rasterizes a scene: an RGB video (later tracks drawn on top) and the
/// un-occluded analytic support mask of every track.
pub fn render(scene: &SceneSpec) -> (VideoTensor, Vec<MaskTensor>) {
    let (t, h, w) = (scene.frames, scene.height, scene.width);
    let mut video = vec![0.0f32; t * h * w * 3];
    let mut masks: Vec<MaskTensor> = scene.tracks.iter().map(|_| MaskTensor::new(t, h, w)).collect();
    let trajectories: Vec<Vec<[f64; 2]>> =
        scene.tracks.iter().map(|tr| tr.trajectory(t, h, w)).collect();

    for frame in 0..t {
        for (ti, track) in scene.tracks.iter().enumerate() {
            let center = trajectories[ti][frame];
            let rgb = track.color.rgb();
            let r = track.size as f64;
            let x0 = ((center[0] - r - 1.0).floor().max(0.0)) as usize;
            let x1 = ((center[0] + r + 1.0).ceil().min(w as f64)) as usize;
            let y0 = ((center[1] - r - 1.0).floor().max(0.0)) as usize;
            let y1 = ((center[1] + r + 1.0).ceil().min(h as f64)) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    if track.contains(center, px, py) {
                        masks[ti].data[(frame * h + y) * w + x] = 1;
                        let base = ((frame * h + y) * w + x) * 3;
                        video[base..base + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
    }
    (Tensor::from_vec(&[t, h, w, 3], video), masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(kind: ShapeKind, size: u32, pos: [f64; 2]) -> ShapeTrack {
        ShapeTrack { kind, color: Color::Red, size, pos, vel: [0.0, 0.0] }
    }

    #[test]
    fn circle_radius5_area_matches_pixel_center_oracle() {
        let track = still(ShapeKind::Circle, 5, [16.0, 16.0]);
        let scene = SceneSpec { frames: 1, height: 32, width: 32, tracks: vec![track.clone()], seed: 0 };
        let (_, masks) = render(&scene);
        // Brute-force oracle: count every pixel center inside the disk.
        let mut oracle = 0usize;
        for y in 0..32 {
            for x in 0..32 {
                if track.contains([16.0, 16.0], x as f64 + 0.5, y as f64 + 0.5) {
                    oracle += 1;
                }
            }
        }
        assert_eq!(masks[0].area(), oracle);
        assert!((69..=89).contains(&oracle), "disk area {oracle} outside analytic band");
    }

    #[test]
    fn zero_velocity_track_has_identical_frames() {
        let scene = SceneSpec {
            frames: 4,
            height: 16,
            width: 16,
            tracks: vec![still(ShapeKind::Triangle, 4, [8.0, 8.0])],
            seed: 0,
        };
        let (_, masks) = render(&scene);
        for f in 1..4 {
            assert_eq!(masks[0].frame(f), masks[0].frame(0));
        }
    }

    #[test]
    fn bounce_keeps_support_inside_frame() {
        let track = ShapeTrack {
            kind: ShapeKind::Square,
            color: Color::Blue,
            size: 6,
            pos: [7.0, 25.0],
            vel: [-4.5, 11.0],
        };
        let scene = SceneSpec { frames: 16, height: 32, width: 32, tracks: vec![track], seed: 0 };
        assert!(scene.all_in_frame());
        let (_, masks) = render(&scene);
        // Hard-edge rasterization of a half-side-6 square covers 12 or 13
        // pixels per axis depending on subpixel position; clipping at a wall
        // would drop below that band.
        for f in 0..16 {
            let a = masks[0].frame(f).iter().map(|&v| v as usize).sum::<usize>();
            assert!((144..=169).contains(&a), "square clipped at frame {f}: area {a}");
        }
    }

    #[test]
    fn later_tracks_occlude_but_masks_do_not() {
        let a = still(ShapeKind::Square, 5, [16.0, 16.0]);
        let b = ShapeTrack { color: Color::Yellow, ..still(ShapeKind::Square, 5, [16.0, 16.0]) };
        let scene = SceneSpec { frames: 1, height: 32, width: 32, tracks: vec![a, b], seed: 0 };
        let (video, masks) = render(&scene);
        // Video shows the second track's color at the shared center.
        let base = ((16 * 32) + 16) * 3;
        assert_eq!(video.data()[base], Color::Yellow.rgb()[0]);
        // Both masks keep their full analytic support: integer center at
        // half-pixel grid means 10 pixel centers per axis inside [11, 21].
        assert_eq!(masks[0].area(), masks[1].area());
        assert_eq!(masks[0].area(), 100);
    }

    #[test]
    fn triangle_contains_its_centroid_not_top_corners() {
        let track = still(ShapeKind::Triangle, 5, [16.0, 16.0]);
        assert!(track.contains([16.0, 16.0], 16.0, 16.0));
        assert!(!track.contains([16.0, 16.0], 16.0 - 4.9, 16.0 - 4.9));
        assert!(!track.contains([16.0, 16.0], 16.0 + 4.9, 16.0 - 4.9));
        assert!(track.contains([16.0, 16.0], 16.0, 16.0 - 4.9));
    }

    #[test]
    fn color_luminances_are_distinct() {
        let mut lumas: Vec<f32> = Color::ALL
            .iter()
            .map(|c| c.rgb().iter().sum::<f32>() / 3.0)
            .collect();
        lumas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in lumas.windows(2) {
            assert!(pair[1] - pair[0] >= 0.05, "luminances too close: {lumas:?}");
        }
        // All below the binary-mask level of 1.0.
        assert!(lumas.iter().all(|&l| l < 0.85));
    }
}
