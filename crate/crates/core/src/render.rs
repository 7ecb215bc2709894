//! Video sketch rendering: object sprites composited over the static background.
//!
//! Compositing is bit-defined. Sprites are premultiplied in 8 bits with half-up rounding and
//! blended source-over. A sprite whose target rectangle has its native size is copied pixel for
//! pixel, so an unmoved object reproduces the initial frame exactly; other sizes are resampled
//! bilinearly in premultiplied space. Objects are painted in manifest order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::planner::TrajectoryCandidate;
use crate::raster::{PixelRect, RgbImage, RgbaImage};
use crate::scene::{BBox, SceneBundle};

pub const DEFAULT_SKETCH_FPS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSketch {
    pub frames: Vec<RgbImage>,
    pub candidate_index: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchFormat {
    PngSequence,
    /// PNG sequence plus a `sketch.gif` preview.
    PngAndGif,
}

#[inline]
fn div255_half_up(v: u32) -> u32 {
    (2 * v + 255) / 510
}

#[inline]
fn premultiply(px: [u8; 4]) -> ([u32; 3], u32) {
    let a = px[3] as u32;
    (
        [
            div255_half_up(px[0] as u32 * a),
            div255_half_up(px[1] as u32 * a),
            div255_half_up(px[2] as u32 * a),
        ],
        a,
    )
}

#[inline]
fn blend(dst: [u8; 3], src: [u32; 3], alpha: u32) -> [u8; 3] {
    let inv = 255 - alpha;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (src[c] + div255_half_up(dst[c] as u32 * inv)).min(255) as u8;
    }
    out
}

fn paste_exact(canvas: &mut RgbImage, sprite: &RgbaImage, rect: PixelRect) {
    let (w, h) = canvas.dimensions();
    for sy in 0..sprite.height() {
        let y = rect.y0 + sy;
        if y >= h {
            break;
        }
        for sx in 0..sprite.width() {
            let x = rect.x0 + sx;
            if x >= w {
                break;
            }
            let px = sprite.get(sx, sy);
            if px[3] == 0 {
                continue;
            }
            let (p, a) = premultiply(px);
            let dst = canvas.get(x, y);
            canvas.put(x, y, blend(dst, p, a));
        }
    }
}

fn paste_bilinear(canvas: &mut RgbImage, sprite: &RgbaImage, rect: PixelRect) {
    let rect = rect.clip(canvas.width(), canvas.height());
    let (tw, th) = (rect.width(), rect.height());
    if tw == 0 || th == 0 {
        return;
    }
    let (sw, sh) = sprite.dimensions();
    let sample = |x: u32, y: u32| {
        let px = sprite.get(x, y);
        let a = px[3] as f64;
        [px[0] as f64 * a / 255.0, px[1] as f64 * a / 255.0, px[2] as f64 * a / 255.0, a]
    };
    let coord = |i: u32, target: u32, source: u32| {
        let s = ((i as f64 + 0.5) * source as f64 / target as f64 - 0.5).clamp(0.0, (source - 1) as f64);
        let lo = s.floor() as u32;
        let hi = (lo + 1).min(source - 1);
        (lo, hi, s - lo as f64)
    };
    for ty in 0..th {
        let (y0, y1, fy) = coord(ty, th, sh);
        for tx in 0..tw {
            let (x0, x1, fx) = coord(tx, tw, sw);
            let (p00, p10, p01, p11) = (sample(x0, y0), sample(x1, y0), sample(x0, y1), sample(x1, y1));
            let mut v = [0.0; 4];
            for c in 0..4 {
                let top = p00[c] * (1.0 - fx) + p10[c] * fx;
                let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
                v[c] = top * (1.0 - fy) + bottom * fy;
            }
            let alpha = ((v[3] + 0.5).floor() as u32).min(255);
            if alpha == 0 {
                continue;
            }
            let src = [0, 1, 2].map(|c| ((v[c] + 0.5).floor() as u32).min(alpha));
            let (x, y) = (rect.x0 + tx, rect.y0 + ty);
            let dst = canvas.get(x, y);
            canvas.put(x, y, blend(dst, src, alpha));
        }
    }
}

/// Paste one sprite so that it fills `b`.
pub fn composite_sprite(canvas: &mut RgbImage, sprite: &RgbaImage, b: &BBox) {
    let rect = b.pixel_rect(canvas.width(), canvas.height());
    if (rect.width(), rect.height()) == sprite.dimensions() {
        paste_exact(canvas, sprite, rect);
    } else {
        paste_bilinear(canvas, sprite, rect);
    }
}

/// Render one frame: background plus each placed object, in manifest order.
pub fn render_frame(scene: &SceneBundle, boxes: &BTreeMap<String, BBox>) -> RgbImage {
    let mut canvas = scene.background.clone();
    for obj in &scene.objects {
        if let Some(b) = boxes.get(&obj.id) {
            composite_sprite(&mut canvas, &obj.sprite, b);
        }
    }
    canvas
}

/// Render a candidate showing only its moving objects.
pub fn render_sketch(candidate: &TrajectoryCandidate, scene: &SceneBundle) -> VideoSketch {
    render_sketch_with(candidate, scene, &BTreeMap::new())
}

/// Render a candidate with the non-moving objects held at `held` positions.
pub fn render_sketch_with(
    candidate: &TrajectoryCandidate,
    scene: &SceneBundle,
    held: &BTreeMap<String, BBox>,
) -> VideoSketch {
    let frames = candidate
        .frames
        .iter()
        .map(|moving| {
            let mut boxes = held.clone();
            boxes.extend(moving.iter().map(|(k, v)| (k.clone(), *v)));
            render_frame(scene, &boxes)
        })
        .collect();
    VideoSketch {
        frames,
        candidate_index: candidate.candidate_index,
        fps: DEFAULT_SKETCH_FPS,
    }
}

/// Final frame of a sketch; it becomes the next phase's context frame.
pub fn last_frame(sketch: &VideoSketch) -> &RgbImage {
    sketch.frames.last().expect("sketch has at least one frame")
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:03}.png")
}

/// Write `frame_000.png`, `frame_001.png`, ... and optionally `sketch.gif` into `dir`.
pub fn encode_sketch(sketch: &VideoSketch, dir: &Path, format: SketchFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(sketch.frames.len() + 1);
    for (t, frame) in sketch.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(t));
        frame.save_png(&path)?;
        written.push(path);
    }
    if format == SketchFormat::PngAndGif {
        let path = dir.join("sketch.gif");
        write_gif(sketch, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// GIF delay per frame in hundredths of a second.
pub fn gif_delay_centis(fps: f64) -> u16 {
    (100.0 / fps).round().clamp(1.0, u16::MAX as f64) as u16
}

fn write_gif(sketch: &VideoSketch, path: &Path) -> Result<()> {
    let Some(first) = sketch.frames.first() else {
        return Err(Error::Codec("cannot encode an empty sketch".into()));
    };
    let (w, h) = first.dimensions();
    let (w16, h16) = (
        u16::try_from(w).map_err(|_| Error::Codec("frame too wide for GIF".into()))?,
        u16::try_from(h).map_err(|_| Error::Codec("frame too tall for GIF".into()))?,
    );
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = gif::Encoder::new(BufWriter::new(file), w16, h16, &[]).map_err(|e| Error::Codec(e.to_string()))?;
    enc.set_repeat(gif::Repeat::Infinite).map_err(|e| Error::Codec(e.to_string()))?;
    let delay = gif_delay_centis(sketch.fps);
    for frame in &sketch.frames {
        let mut f = gif::Frame::from_rgb_speed(w16, h16, frame.as_raw(), 10);
        f.delay = delay;
        enc.write_frame(&f).map_err(|e| Error::Codec(e.to_string()))?;
    }
    Ok(())
}

/// Read back a PNG sequence written by [`encode_sketch`].
pub fn decode_png_sequence(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| RgbImage::load_png(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use crate::scene::{cut_sprite, ObjectAsset};

    fn scene(size: u32) -> SceneBundle {
        let mut frame = RgbImage::filled(size, size, [30, 60, 90]);
        let mut mask = Mask::new(size, size);
        let rect = PixelRect { x0: 10, y0: 20, x1: 30, y1: 36 };
        mask.fill_rect(rect, true);
        mask.set(10, 20, false);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                if mask.get(x, y) {
                    frame.put(x, y, [250, (x * 7) as u8, (y * 5) as u8]);
                }
            }
        }
        let obj = ObjectAsset {
            id: "o".into(),
            label: "o".into(),
            sprite: cut_sprite(&frame, &mask).unwrap(),
            mask,
            initial_box: BBox::from_pixel_rect(rect, size, size).unwrap(),
            resizable: false,
        };
        SceneBundle::new(
            frame,
            RgbImage::filled(size, size, [30, 60, 90]),
            vec![obj],
            Mask::new(size, size),
            None,
            None,
            vec![],
            None,
        )
        .unwrap()
    }

    fn still(b: BBox, n: usize) -> TrajectoryCandidate {
        TrajectoryCandidate::new(0, vec![BTreeMap::from([("o".to_string(), b)]); n])
    }

    #[test]
    fn identity_reproduces_initial_frame() {
        let s = scene(64);
        let sketch = render_sketch(&still(s.objects[0].initial_box, 3), &s);
        assert_eq!(sketch.frames.len(), 3);
        for f in &sketch.frames {
            assert_eq!(f, &s.initial_frame);
        }
        assert_eq!(last_frame(&sketch), &sketch.frames[0]);
    }

    #[test]
    fn translation_shifts_by_rounded_pixels() {
        let s = scene(512);
        let b0 = s.objects[0].initial_box;
        let moved = BBox::new(b0.x_min() + 0.1, b0.y_min(), b0.x_max() + 0.1, b0.y_max()).unwrap();
        let frame = &render_sketch(&still(moved, 1), &s).frames[0];
        // 0.1 * 512 = 51.2 px, rounded half up to 51
        for y in 20..36 {
            for x in 10..30 {
                if s.objects[0].mask.get(x, y) {
                    assert_eq!(frame.get(x + 51, y), s.initial_frame.get(x, y));
                }
            }
        }
    }

    #[test]
    fn empty_frame_map_gives_background() {
        let s = scene(64);
        let c = TrajectoryCandidate::new(0, vec![BTreeMap::new(); 2]);
        for f in render_sketch(&c, &s).frames {
            assert_eq!(f, s.background);
        }
    }

    #[test]
    fn blend_extremes_are_exact() {
        let (p, a) = premultiply([200, 100, 7, 255]);
        assert_eq!(blend([1, 2, 3], p, a), [200, 100, 7]);
        let (p, a) = premultiply([200, 100, 7, 0]);
        assert_eq!(blend([1, 2, 3], p, a), [1, 2, 3]);
        // half-up tie: 255 * 128 / 255 = 128, 1 * 127 / 255 rounds to 0
        let (p, a) = premultiply([255, 0, 0, 128]);
        assert_eq!(p[0], 128);
        assert_eq!(blend([1, 0, 0], p, a), [128, 0, 0]);
    }

    #[test]
    fn scaled_sprite_stays_inside_its_box() {
        let s = scene(64);
        let big = BBox::new(0.5, 0.5, 0.9, 0.8).unwrap();
        let frame = &render_sketch(&still(big, 1), &s).frames[0];
        let rect = big.pixel_rect(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                let inside = (rect.x0..rect.x1).contains(&x) && (rect.y0..rect.y1).contains(&y);
                if !inside {
                    assert_eq!(frame.get(x, y), s.background.get(x, y));
                }
            }
        }
    }

    #[test]
    fn png_sequence_round_trip_and_gif_timing() {
        let s = scene(64);
        let mut sketch = render_sketch(&still(s.objects[0].initial_box, 10), &s);
        sketch.frames[4] = s.background.clone();
        let dir = tempfile::tempdir().unwrap();
        let files = encode_sketch(&sketch, dir.path(), SketchFormat::PngAndGif).unwrap();
        assert_eq!(files.len(), 11);
        assert!(dir.path().join("frame_009.png").is_file());
        assert_eq!(decode_png_sequence(dir.path()).unwrap(), sketch.frames);

        let file = File::open(dir.path().join("sketch.gif")).unwrap();
        let mut opts = gif::DecodeOptions::new();
        opts.set_color_output(gif::ColorOutput::RGBA);
        let mut dec = opts.read_info(file).unwrap();
        let mut centis = 0u32;
        let mut n = 0;
        while let Some(f) = dec.read_next_frame().unwrap() {
            centis += f.delay as u32;
            n += 1;
        }
        assert_eq!(n, 10);
        // 10 frames at 4 fps
        assert_eq!(centis, 250);
    }
}
