//! Synthetic fixed-camera scenes: a static textured plate with constant-
//! intensity rectangles moving linearly across it, plus exact ground truth.
//!
//! Rendering and ground truth are both driven by [`Track::box_at`], so the
//! annotations match the rendered pixels by construction.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotations::AnnotationFile;
use super::manifest::{ManifestFrame, SequenceManifest};
use super::write_png;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng;
use crate::types::{FrameId, FrameSequence, GroundTruth, Object};

const PLATE_STREAM: u64 = 0x9a7e;
const TRACK_STREAM: u64 = 0x7eac;
const NOISE_STREAM: u64 = 0x0153;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundTexture {
    /// Side of the square texture cells, in pixels.
    pub cell: u32,
    pub min: u8,
    pub max: u8,
}

impl Default for BackgroundTexture {
    fn default() -> Self {
        BackgroundTexture {
            cell: 8,
            min: 40,
            max: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub label: String,
    /// Smallest `[w, h]`.
    pub min_size: [u32; 2],
    /// Largest `[w, h]`.
    pub max_size: [u32; 2],
    pub intensity: u8,
    /// Objects of this class over the whole sequence.
    pub count: u32,
}

/// A fully specified object track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub u: u32,
    pub v: u32,
    pub w: u32,
    pub h: u32,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub start: u32,
    /// Exclusive; defaults to the end of the sequence.
    #[serde(default)]
    pub end: Option<u32>,
    pub intensity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSceneConfig {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub seed: u64,
    pub fps: f64,
    pub background: BackgroundTexture,
    /// Standard deviation of per-pixel Gaussian sensor noise.
    pub noise_sigma: f64,
    pub classes: Vec<ClassTemplate>,
    /// Range of object speeds in pixels per frame.
    pub speed: [f64; 2],
    /// Range of object lifetimes in frames.
    pub lifetime: [u32; 2],
    pub objects: Vec<ObjectSpec>,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        SynthSceneConfig {
            width: 256,
            height: 192,
            frames: 200,
            seed: 0,
            fps: 25.0,
            background: BackgroundTexture::default(),
            noise_sigma: 0.0,
            classes: Vec::new(),
            speed: [1.0, 3.0],
            lifetime: [40, 120],
            objects: Vec::new(),
        }
    }
}

impl SynthSceneConfig {
    /// A three-class traffic-like scene.
    pub fn traffic(frames: u32, seed: u64) -> Self {
        let class = |label: &str, min_size, max_size, intensity, count| ClassTemplate {
            label: label.into(),
            min_size,
            max_size,
            intensity,
            count,
        };
        SynthSceneConfig {
            frames,
            seed,
            noise_sigma: 2.0,
            classes: vec![
                class("car", [28, 16], [40, 24], 230, 14),
                class("pedestrian", [10, 20], [14, 30], 190, 14),
                class("motorbike", [16, 14], [22, 18], 160, 10),
            ],
            ..Default::default()
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        let names = self
            .classes
            .iter()
            .map(|c| &c.label)
            .chain(self.objects.iter().map(|o| &o.label));
        for l in names {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        labels
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic scene: {msg}")));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad(format!(
                "empty scene {}x{}x{}",
                self.width, self.height, self.frames
            ));
        }
        let bg = &self.background;
        if bg.cell == 0 || bg.min > bg.max {
            return bad(format!("invalid background texture {bg:?}"));
        }
        if !(self.speed[0] >= 0.0 && self.speed[0] <= self.speed[1])
            || self.lifetime[0] == 0
            || self.lifetime[0] > self.lifetime[1]
        {
            return bad("invalid speed or lifetime range".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        let distinct = |i: u8, what: &str| {
            if (bg.min..=bg.max).contains(&i) {
                bad(format!(
                    "{what}: intensity {i} lies inside the background range"
                ))
            } else {
                Ok(())
            }
        };
        for c in &self.classes {
            distinct(c.intensity, &c.label)?;
            let [(w0, h0), (w1, h1)] = [
                (c.min_size[0], c.min_size[1]),
                (c.max_size[0], c.max_size[1]),
            ];
            if w0 == 0 || h0 == 0 || w0 > w1 || h0 > h1 {
                return bad(format!("{}: invalid size range", c.label));
            }
            if w1 > self.width || h1 > self.height {
                return bad(format!(
                    "{}: objects up to {w1}x{h1} cannot fit in the frame",
                    c.label
                ));
            }
        }
        for o in &self.objects {
            distinct(o.intensity, &o.label)?;
        }
        Ok(())
    }
}

/// One object's trajectory: present on `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub label: String,
    pub intensity: u8,
    pub w: u32,
    pub h: u32,
    pub u0: i64,
    pub v0: i64,
    pub vx: f64,
    pub vy: f64,
    pub start: u32,
    pub end: u32,
}

impl Track {
    pub fn box_at(&self, t: u32) -> Option<BoundingBox> {
        if t < self.start || t >= self.end {
            return None;
        }
        let dt = f64::from(t - self.start);
        let u = self.u0 + (self.vx * dt).round() as i64;
        let v = self.v0 + (self.vy * dt).round() as i64;
        Some(BoundingBox {
            u: u as u32,
            v: v as u32,
            w: self.w,
            h: self.h,
        })
    }

    fn fits(&self, width: u32, height: u32) -> bool {
        [self.start, self.end - 1].iter().all(|&t| {
            let dt = f64::from(t - self.start);
            let u = self.u0 + (self.vx * dt).round() as i64;
            let v = self.v0 + (self.vy * dt).round() as i64;
            u >= 0
                && v >= 0
                && u + i64::from(self.w) <= i64::from(width)
                && v + i64::from(self.h) <= i64::from(height)
        })
    }
}

/// A generated scene, renderable frame by frame.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    config: SynthSceneConfig,
    plate: GrayImage,
    tracks: Vec<Track>,
}

impl SyntheticScene {
    pub fn new(config: SynthSceneConfig) -> Result<Self> {
        config.validate()?;
        let plate = render_plate(&config);
        let mut tracks = Vec::new();
        for o in &config.objects {
            let end = o.end.unwrap_or(config.frames).min(config.frames);
            if o.start >= end {
                return Err(Error::Config(format!(
                    "synthetic scene: {} is never visible",
                    o.label
                )));
            }
            let track = Track {
                label: o.label.clone(),
                intensity: o.intensity,
                w: o.w,
                h: o.h,
                u0: i64::from(o.u),
                v0: i64::from(o.v),
                vx: o.vx,
                vy: o.vy,
                start: o.start,
                end,
            };
            if o.w == 0 || o.h == 0 || !track.fits(config.width, config.height) {
                return Err(Error::Config(format!(
                    "synthetic scene: {} leaves the frame",
                    o.label
                )));
            }
            tracks.push(track);
        }
        let mut rng = rng::stream(config.seed, &[TRACK_STREAM]);
        for class in &config.classes {
            for _ in 0..class.count {
                tracks.push(random_track(&config, class, &mut rng));
            }
        }
        Ok(SyntheticScene {
            config,
            plate,
            tracks,
        })
    }

    pub fn config(&self) -> &SynthSceneConfig {
        &self.config
    }

    pub fn plate(&self) -> &GrayImage {
        &self.plate
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Frame `t` without sensor noise.
    pub fn render_clean(&self, t: u32) -> GrayImage {
        let mut img = self.plate.clone();
        for track in &self.tracks {
            if let Some(b) = track.box_at(t) {
                for y in b.v..b.v + b.h {
                    for x in b.u..b.u + b.w {
                        img.put_pixel(x, y, Luma([track.intensity]));
                    }
                }
            }
        }
        img
    }

    pub fn render(&self, t: u32) -> GrayImage {
        let mut img = self.render_clean(t);
        if self.config.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.config.noise_sigma).expect("validated sigma");
            let mut rng = rng::stream(self.config.seed, &[NOISE_STREAM, u64::from(t)]);
            for p in img.pixels_mut() {
                let value = f64::from(p.0[0]) + noise.sample(&mut rng);
                p.0[0] = value.round().clamp(0.0, 255.0) as u8;
            }
        }
        img
    }

    pub fn ground_truth(&self) -> GroundTruth {
        (0..self.config.frames)
            .map(|t| {
                let objects = self
                    .tracks
                    .iter()
                    .filter_map(|tr| {
                        tr.box_at(t).map(|bbox| Object {
                            label: tr.label.clone(),
                            bbox,
                        })
                    })
                    .collect();
                (t as FrameId, objects)
            })
            .collect()
    }

    /// Write `frames/<id>.png`, `manifest.json` and `annotations.json`.
    pub fn write(&self, out_dir: &Path) -> Result<SynthOutput> {
        let mut frames = Vec::with_capacity(self.config.frames as usize);
        for t in 0..self.config.frames {
            let rel = PathBuf::from("frames").join(format!("{t:06}.png"));
            write_png(&out_dir.join(&rel), &self.render(t))?;
            frames.push(ManifestFrame { id: t, path: rel });
        }
        let manifest = SequenceManifest {
            width: self.config.width,
            height: self.config.height,
            fps: Some(self.config.fps),
            labels: self.config.labels(),
            frames,
        };
        let manifest_path = out_dir.join("manifest.json");
        manifest.write(&manifest_path)?;
        let annotations =
            AnnotationFile::from_ground_truth(self.config.labels(), &self.ground_truth());
        let annotations_path = out_dir.join("annotations.json");
        annotations.write(&annotations_path)?;
        let sequence = FrameSequence::new(
            manifest.frame_refs(out_dir),
            self.config.width,
            self.config.height,
        )?;
        Ok(SynthOutput {
            manifest_path,
            annotations_path,
            sequence,
            annotations,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub annotations_path: PathBuf,
    pub sequence: FrameSequence,
    pub annotations: AnnotationFile,
}

pub fn generate_synthetic_scene(config: SynthSceneConfig, out_dir: &Path) -> Result<SynthOutput> {
    SyntheticScene::new(config)?.write(out_dir)
}

fn render_plate(config: &SynthSceneConfig) -> GrayImage {
    let bg = &config.background;
    let mut rng = rng::stream(config.seed, &[PLATE_STREAM]);
    let cols = config.width.div_ceil(bg.cell);
    let rows = config.height.div_ceil(bg.cell);
    let cells: Vec<u8> = (0..cols * rows)
        .map(|_| rng.random_range(bg.min..=bg.max))
        .collect();
    GrayImage::from_fn(config.width, config.height, |x, y| {
        Luma([cells[((y / bg.cell) * cols + x / bg.cell) as usize]])
    })
}

fn random_track(config: &SynthSceneConfig, class: &ClassTemplate, rng: &mut impl Rng) -> Track {
    let (width, height) = (config.width, config.height);
    let w = rng.random_range(class.min_size[0]..=class.max_size[0]);
    let h = rng.random_range(class.min_size[1]..=class.max_size[1]);
    let speed = rng.random_range(config.speed[0]..=config.speed[1]);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
    let mut life = rng
        .random_range(config.lifetime[0]..=config.lifetime[1])
        .min(config.frames);
    // shorten the track until its displacement fits inside the frame
    let span = |life: u32| {
        let dt = f64::from(life - 1);
        ((vx * dt).round() as i64, (vy * dt).round() as i64)
    };
    while life > 1 {
        let (dx, dy) = span(life);
        if dx.abs() <= i64::from(width - w) && dy.abs() <= i64::from(height - h) {
            break;
        }
        life -= 1;
    }
    let (dx, dy) = span(life);
    let start = rng.random_range(0..=config.frames - life);
    let u0 = rng.random_range(-dx.min(0)..=i64::from(width - w) - dx.max(0));
    let v0 = rng.random_range(-dy.min(0)..=i64::from(height - h) - dy.max(0));
    Track {
        label: class.label.clone(),
        intensity: class.intensity,
        w,
        h,
        u0,
        v0,
        vx,
        vy,
        start,
        end: start + life,
    }
}
