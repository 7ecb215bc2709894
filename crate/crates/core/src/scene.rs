//! Shared domain types and the on-disk scene bundle.
//!
//! A bundle directory stands in for the segmentation and inpainting stage:
//!
//! ```text
//! manifest.json
//! frame.png            initial frame I0 (RGB)
//! background.png       static background with movers removed (RGB)
//! static_mask.png      union of non-moving obstacle/support regions
//! objects/<id>/sprite.png
//! objects/<id>/mask.png
//! ```
//!
//! All coordinates are normalized to `[0,1]`, origin top-left, y down.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SceneError};
use crate::raster::{round_half_up, Mask, PixelRect, RgbImage, RgbaImage};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Total planning frames shared by all phases of a plan.
pub const DEFAULT_PLAN_FRAMES: u32 = 41;
pub const MAX_PHASES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid box [{0}, {1}, {2}, {3}]: need 0 <= min < max <= 1 on both axes")]
pub struct InvalidBox(pub f64, pub f64, pub f64, pub f64);

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, InvalidBox> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0;
        if ok(x_min, x_max) && ok(y_min, y_max) {
            Ok(Self {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        } else {
            Err(InvalidBox(x_min, y_min, x_max, y_max))
        }
    }

    /// Box of the given size centered at `center`, shifted as needed to stay inside the unit square.
    pub fn centered_within(center: Point, width: f64, height: f64) -> Result<Self, InvalidBox> {
        let w = width.min(1.0);
        let h = height.min(1.0);
        let x0 = (center.x - w / 2.0).clamp(0.0, 1.0 - w);
        let y0 = (center.y - h / 2.0).clamp(0.0, 1.0 - h);
        Self::new(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0))
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        self.x_min <= p.x && p.x <= self.x_max && self.y_min <= p.y && p.y <= self.y_max
    }

    /// Pixel footprint on a `width x height` raster, rounding half up; never empty.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let axis = |lo: f64, hi: f64, n: u32| {
            let mut a = round_half_up(lo * n as f64, n);
            let mut b = round_half_up(hi * n as f64, n);
            if b <= a {
                if a >= n {
                    a = n - 1;
                }
                b = a + 1;
            }
            (a, b)
        };
        let (x0, x1) = axis(self.x_min, self.x_max, width);
        let (y0, y1) = axis(self.y_min, self.y_max, height);
        PixelRect { x0, y0, x1, y1 }
    }

    /// Normalized box exactly covering a pixel rectangle.
    pub fn from_pixel_rect(rect: PixelRect, width: u32, height: u32) -> Result<Self, InvalidBox> {
        Self::new(
            rect.x0 as f64 / width as f64,
            rect.y0 as f64 / height as f64,
            rect.x1 as f64 / width as f64,
            rect.y1 as f64 / height as f64,
        )
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = InvalidBox;

    fn try_from([a, b, c, d]: [f64; 4]) -> Result<Self, InvalidBox> {
        Self::new(a, b, c, d)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Representative point of a box: its center.
pub fn bbox_center(b: &BBox) -> Point {
    Point::new((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

/// Machine-checkable end goal of a sub-instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Point>,
    #[serde(default)]
    pub description: String,
}

impl GoalSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.region.is_none() && self.direction.is_none() {
            return Err("goal needs a region or a direction".into());
        }
        if let Some(d) = self.direction {
            let n = d.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(format!("direction must be a unit vector, norm is {n}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubInstruction {
    /// 1-based phase index.
    pub index: usize,
    pub text: String,
    pub frame_budget: u32,
    pub moving_ids: Vec<String>,
    pub goal: GoalSpec,
}

impl SubInstruction {
    /// The object the goal refers to: the first moving id.
    pub fn subject(&self) -> &str {
        &self.moving_ids[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelPlan {
    pub source_prompt: String,
    pub total_plan_frames: u32,
    pub static_objects: Vec<String>,
    pub sub_instructions: Vec<SubInstruction>,
}

impl HighLevelPlan {
    /// First frame (1-based, inclusive) of phase `i` within the whole plan.
    pub fn phase_start(&self, index: usize) -> u32 {
        1 + self.sub_instructions[..index - 1]
            .iter()
            .map(|s| s.frame_budget)
            .sum::<u32>()
    }

    pub fn check_objects(&self, scene: &SceneBundle) -> Result<(), SceneError> {
        for sub in &self.sub_instructions {
            for id in &sub.moving_ids {
                if scene.object(id).is_none() {
                    return Err(SceneError::invalid(
                        format!("plan.phases[{}].object_ids", sub.index - 1),
                        format!("unknown object `{id}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub id: String,
    pub label: String,
    pub sprite: RgbaImage,
    pub mask: Mask,
    pub initial_box: BBox,
    pub resizable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub width: u32,
    pub height: u32,
    pub initial_frame: RgbImage,
    pub background: RgbImage,
    pub objects: Vec<ObjectAsset>,
    pub static_mask: Mask,
    ground_line: Option<f64>,
    pub prompt: Option<String>,
    pub static_labels: Vec<String>,
    /// Plan supplied with the bundle, in the planner's canonical JSON schema.
    pub plan: Option<serde_json::Value>,
}

impl SceneBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        initial_frame: RgbImage,
        background: RgbImage,
        objects: Vec<ObjectAsset>,
        static_mask: Mask,
        ground_line: Option<f64>,
        prompt: Option<String>,
        static_labels: Vec<String>,
        plan: Option<serde_json::Value>,
    ) -> Result<Self> {
        let (width, height) = initial_frame.dimensions();
        let scene = Self {
            width,
            height,
            initial_frame,
            background,
            objects,
            static_mask,
            ground_line,
            prompt,
            static_labels,
            plan,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Normalized y of the ground plane; the image bottom when unspecified.
    pub fn ground_line(&self) -> f64 {
        self.ground_line.unwrap_or(1.0)
    }

    pub fn object(&self, id: &str) -> Option<&ObjectAsset> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn initial_boxes(&self) -> BTreeMap<String, BBox> {
        self.objects.iter().map(|o| (o.id.clone(), o.initial_box)).collect()
    }

    fn validate(&self) -> Result<(), SceneError> {
        let dims = (self.width, self.height);
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::invalid("frame", "empty raster"));
        }
        let check = |field: &str, actual: (u32, u32)| {
            if actual != dims {
                Err(SceneError::DimensionMismatch {
                    field: field.into(),
                    expected: dims,
                    actual,
                })
            } else {
                Ok(())
            }
        };
        check("background", self.background.dimensions())?;
        check("static_mask", self.static_mask.dimensions())?;
        if let Some(g) = self.ground_line {
            if !(0.0..=1.0).contains(&g) {
                return Err(SceneError::invalid("ground_line", format!("{g} outside [0,1]")));
            }
        }
        let mut seen = HashSet::new();
        for (i, obj) in self.objects.iter().enumerate() {
            let field = |f: &str| format!("objects[{i}].{f}");
            if obj.id.is_empty() {
                return Err(SceneError::invalid(field("id"), "empty id"));
            }
            if !seen.insert(obj.id.as_str()) {
                return Err(SceneError::invalid(field("id"), format!("duplicate object id `{}`", obj.id)));
            }
            check(&field("mask"), obj.mask.dimensions())?;
            let bounds = obj
                .mask
                .bounds()
                .ok_or_else(|| SceneError::invalid(field("mask"), "mask is empty"))?;
            if obj.sprite.dimensions() != (bounds.width(), bounds.height()) {
                return Err(SceneError::DimensionMismatch {
                    field: field("sprite"),
                    expected: (bounds.width(), bounds.height()),
                    actual: obj.sprite.dimensions(),
                });
            }
            for sy in 0..bounds.height() {
                for sx in 0..bounds.width() {
                    let inside = obj.mask.get(bounds.x0 + sx, bounds.y0 + sy);
                    let alpha = obj.sprite.get(sx, sy)[3];
                    if inside != (alpha != 0) {
                        return Err(SceneError::invalid(
                            field("sprite"),
                            format!("alpha {alpha} at sprite pixel ({sx},{sy}) disagrees with mask"),
                        ));
                    }
                }
            }
            let rect = obj.initial_box.pixel_rect(self.width, self.height);
            if rect != bounds {
                return Err(SceneError::invalid(
                    field("initial_box"),
                    format!("box covers pixels {rect:?} but mask bounds are {bounds:?}"),
                ));
            }
        }
        Ok(())
    }
}

/// Crop an object sprite out of a frame: RGBA over the mask's bounds, alpha 255 inside the mask and
/// fully transparent black outside.
pub fn cut_sprite(frame: &RgbImage, mask: &Mask) -> Option<RgbaImage> {
    let b = mask.bounds()?;
    let mut sprite = RgbaImage::new(b.width(), b.height());
    for sy in 0..b.height() {
        for sx in 0..b.width() {
            if mask.get(b.x0 + sx, b.y0 + sy) {
                let [r, g, bl] = frame.get(b.x0 + sx, b.y0 + sy);
                sprite.put(sx, sy, [r, g, bl, 255]);
            }
        }
    }
    Some(sprite)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    width: u32,
    height: u32,
    frame: String,
    background: String,
    static_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_line: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    static_labels: Vec<String>,
    objects: Vec<ManifestObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestObject {
    id: String,
    label: String,
    sprite: String,
    mask: String,
    initial_box: [f64; 4],
    #[serde(default)]
    resizable: bool,
}

fn asset_path(dir: &Path, field: &str, rel: &str) -> Result<PathBuf, SceneError> {
    let rel_path = Path::new(rel);
    if rel.is_empty() || rel_path.is_absolute() || rel_path.components().any(|c| c == std::path::Component::ParentDir) {
        return Err(SceneError::invalid(field, format!("`{rel}` must be a relative path inside the bundle")));
    }
    let path = dir.join(rel_path);
    if !path.is_file() {
        return Err(SceneError::MissingAsset {
            field: field.into(),
            path,
        });
    }
    Ok(path)
}

fn load_raster<T>(dir: &Path, field: &str, rel: &str, load: impl Fn(&Path) -> Result<T>) -> Result<T> {
    let path = asset_path(dir, field, rel)?;
    load(&path).map_err(|e| match e {
        Error::Codec(msg) => SceneError::invalid(field, msg).into(),
        other => other,
    })
}

/// Load and fully validate a scene bundle directory.
pub fn load_scene_bundle(dir: &Path) -> Result<SceneBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(SceneError::MissingAsset {
            field: "manifest".into(),
            path: manifest_path,
        }
        .into());
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| SceneError::invalid("manifest", e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(SceneError::invalid("version", format!("unsupported version {}", manifest.version)).into());
    }

    let frame = load_raster(dir, "frame", &manifest.frame, RgbImage::load_png)?;
    if frame.dimensions() != (manifest.width, manifest.height) {
        return Err(SceneError::DimensionMismatch {
            field: "frame".into(),
            expected: (manifest.width, manifest.height),
            actual: frame.dimensions(),
        }
        .into());
    }
    let background = load_raster(dir, "background", &manifest.background, RgbImage::load_png)?;
    let static_mask = load_raster(dir, "static_mask", &manifest.static_mask, Mask::load_png)?;

    let mut objects = Vec::with_capacity(manifest.objects.len());
    for (i, o) in manifest.objects.into_iter().enumerate() {
        let sprite = load_raster(dir, &format!("objects[{i}].sprite"), &o.sprite, RgbaImage::load_png)?;
        let mask = load_raster(dir, &format!("objects[{i}].mask"), &o.mask, Mask::load_png)?;
        let initial_box = BBox::try_from(o.initial_box)
            .map_err(|e| SceneError::invalid(format!("objects[{i}].initial_box"), e.to_string()))?;
        objects.push(ObjectAsset {
            id: o.id,
            label: o.label,
            sprite,
            mask,
            initial_box,
            resizable: o.resizable,
        });
    }

    SceneBundle::new(
        frame,
        background,
        objects,
        static_mask,
        manifest.ground_line,
        manifest.prompt,
        manifest.static_labels,
        manifest.plan,
    )
}

/// Write a bundle in the canonical layout. Loading the result and saving again is byte-stable.
pub fn save_scene_bundle(scene: &SceneBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("objects")).map_err(|e| Error::io(dir, e))?;
    scene.initial_frame.save_png(&dir.join("frame.png"))?;
    scene.background.save_png(&dir.join("background.png"))?;
    scene.static_mask.save_png(&dir.join("static_mask.png"))?;
    let mut objects = Vec::with_capacity(scene.objects.len());
    for o in &scene.objects {
        let odir = dir.join("objects").join(&o.id);
        fs::create_dir_all(&odir).map_err(|e| Error::io(&odir, e))?;
        o.sprite.save_png(&odir.join("sprite.png"))?;
        o.mask.save_png(&odir.join("mask.png"))?;
        objects.push(ManifestObject {
            id: o.id.clone(),
            label: o.label.clone(),
            sprite: format!("objects/{}/sprite.png", o.id),
            mask: format!("objects/{}/mask.png", o.id),
            initial_box: o.initial_box.into(),
            resizable: o.resizable,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        width: scene.width,
        height: scene.height,
        frame: "frame.png".into(),
        background: "background.png".into(),
        static_mask: "static_mask.png".into(),
        ground_line: scene.ground_line,
        prompt: scene.prompt.clone(),
        static_labels: scene.static_labels.clone(),
        objects,
        plan: scene.plan.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
