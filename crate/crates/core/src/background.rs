//! Adaptive per-pixel Gaussian-mixture background model, mask cleanup and
//! blob extraction.
//!
//! The model follows the usual online mixture scheme: each pixel keeps up to
//! `max_components` Gaussians sorted by `weight / sigma`; a pixel value that
//! matches none of the leading components covering `background_ratio` of the
//! weight is foreground.

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundParams {
    pub learning_rate: f64,
    pub max_components: usize,
    pub match_threshold_sigmas: f64,
    pub background_ratio: f64,
    pub initial_variance: f64,
    pub variance_floor: f64,
    pub prune_weight: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        BackgroundParams {
            learning_rate: 0.005,
            max_components: 5,
            match_threshold_sigmas: 3.0,
            background_ratio: 0.9,
            initial_variance: 225.0,
            variance_floor: 16.0,
            prune_weight: 0.001,
        }
    }
}

impl BackgroundParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("background: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad("learning_rate must be in (0,1)");
        }
        if self.max_components == 0 || self.max_components > u8::MAX as usize {
            return bad("max_components must be in 1..=255");
        }
        if !(self.match_threshold_sigmas > 0.0) {
            return bad("match_threshold_sigmas must be positive");
        }
        if !(self.background_ratio > 0.0 && self.background_ratio < 1.0) {
            return bad("background_ratio must be in (0,1)");
        }
        if !(self.initial_variance > 0.0 && self.variance_floor > 0.0) {
            return bad("variances must be positive");
        }
        if !(self.prune_weight >= 0.0) {
            return bad("prune_weight must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GaussianComponent {
    #[inline]
    fn rank(&self) -> f64 {
        self.weight / self.variance.sqrt()
    }
}

/// Per-pixel mixtures for one fixed-size frame stream.
#[derive(Debug, Clone)]
pub struct PixelMixtureModel {
    width: u32,
    height: u32,
    params: BackgroundParams,
    components: Vec<GaussianComponent>,
    counts: Vec<u8>,
    frames_seen: u64,
}

impl PixelMixtureModel {
    pub fn new(width: u32, height: u32, params: BackgroundParams) -> Result<Self> {
        params.validate()?;
        let pixels = width as usize * height as usize;
        let empty = GaussianComponent {
            weight: 0.0,
            mean: 0.0,
            variance: params.initial_variance,
        };
        Ok(PixelMixtureModel {
            width,
            height,
            components: vec![empty; pixels * params.max_components],
            counts: vec![0; pixels],
            params,
            frames_seen: 0,
        })
    }

    pub fn params(&self) -> &BackgroundParams {
        &self.params
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Components of one pixel, strongest first.
    pub fn pixel_components(&self, x: u32, y: u32) -> &[GaussianComponent] {
        let i = (y * self.width + x) as usize;
        let m = self.params.max_components;
        &self.components[i * m..i * m + self.counts[i] as usize]
    }

    /// Feed one frame in temporal order; returns the raw foreground mask.
    pub fn update_and_classify(&mut self, frame: &GrayImage) -> Result<ForegroundMask> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::DimensionMismatch {
                frame: format!("#{}", self.frames_seen),
                got_w: frame.width(),
                got_h: frame.height(),
                want_w: self.width,
                want_h: self.height,
            });
        }
        let m = self.params.max_components;
        let mut bits = vec![false; self.counts.len()];
        for (i, (px, fg)) in frame.as_raw().iter().zip(bits.iter_mut()).enumerate() {
            let count = &mut self.counts[i];
            let comps = &mut self.components[i * m..(i + 1) * m];
            *fg = !update_pixel(&self.params, comps, count, f64::from(*px));
        }
        self.frames_seen += 1;
        Ok(ForegroundMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }
}

/// Updates one pixel mixture in place; returns true when the value was
/// explained by a background component.
fn update_pixel(
    p: &BackgroundParams,
    comps: &mut [GaussianComponent],
    count: &mut u8,
    x: f64,
) -> bool {
    let n = *count as usize;
    let gate = p.match_threshold_sigmas * p.match_threshold_sigmas;

    let mut matched = None;
    let mut background = false;
    let mut cumulative = 0.0;
    for (k, c) in comps[..n].iter().enumerate() {
        let d = x - c.mean;
        if d * d < gate * c.variance {
            matched = Some(k);
            background = cumulative < p.background_ratio;
            break;
        }
        cumulative += c.weight;
    }

    let alpha = p.learning_rate;
    for c in comps[..n].iter_mut() {
        c.weight *= 1.0 - alpha;
    }
    let keep = match matched {
        Some(k) => {
            let c = &mut comps[k];
            c.weight += alpha;
            let rho = (alpha / c.weight).min(1.0);
            let d = x - c.mean;
            c.mean += rho * d;
            c.variance = (c.variance + rho * (d * d - c.variance)).max(p.variance_floor);
            k
        }
        None => {
            let fresh = GaussianComponent {
                weight: alpha,
                mean: x,
                variance: p.initial_variance.max(p.variance_floor),
            };
            let slot = if n < comps.len() { n } else { n - 1 };
            comps[slot] = fresh;
            *count = (slot + 1) as u8;
            slot
        }
    };

    // prune, never dropping the component just reinforced or created
    let n = *count as usize;
    let mut kept = 0;
    for k in 0..n {
        if k == keep || comps[k].weight >= p.prune_weight {
            comps[kept] = comps[k];
            kept += 1;
        }
    }
    *count = kept as u8;

    let total: f64 = comps[..kept].iter().map(|c| c.weight).sum();
    for c in comps[..kept].iter_mut() {
        c.weight /= total;
    }
    // insertion sort: at most one element is out of place
    for k in 1..kept {
        let mut j = k;
        while j > 0 && comps[j - 1].rank() < comps[j].rank() {
            comps.swap(j - 1, j);
            j -= 1;
        }
    }
    background
}

/// Single-channel intensity with luma weights 0.299 / 0.587 / 0.114.
pub fn to_luma(img: &DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(g) => g.clone(),
        other => {
            let rgb = other.to_rgb8();
            GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                let [r, g, b] = rgb.get_pixel(x, y).0;
                let l = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                image::Luma([l.round().clamp(0.0, 255.0) as u8])
            })
        }
    }
}

/// Binary foreground map; `true` marks a foreground pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: u32, height: u32) -> Self {
        ForegroundMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "mask of {} bits cannot be {width}x{height}",
                bits.len()
            )));
        }
        Ok(ForegroundMask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn fill_box(&mut self, b: &BoundingBox) {
        for y in b.v..(b.v + b.h).min(self.height) {
            for x in b.u..(b.u + b.w).min(self.width) {
                self.set(x, y, true);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0 = background, 255 = foreground.
    pub fn to_image(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("mask buffer matches dimensions")
    }

    pub fn from_image(img: &GrayImage) -> Self {
        ForegroundMask {
            width: img.width(),
            height: img.height(),
            bits: img.as_raw().iter().map(|&p| p >= 128).collect(),
        }
    }
}

fn reduce(erode: bool, mut window: impl Iterator<Item = bool>) -> bool {
    if erode {
        window.all(|b| b)
    } else {
        window.any(|b| b)
    }
}

/// Min (erode) or max (dilate) filter over a square window, clipped at the
/// image border. The square element is separable: rows, then columns.
fn square_filter(mask: &ForegroundMask, radius: usize, erode: bool) -> ForegroundMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let line = &mask.bits[y * w..(y + 1) * w];
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            rows[y * w + x] = reduce(erode, line[lo..=hi].iter().copied());
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            out[y * w + x] = reduce(erode, (lo..=hi).map(|yy| rows[yy * w + x]));
        }
    }
    ForegroundMask {
        width: mask.width,
        height: mask.height,
        bits: out,
    }
}

/// Morphological opening (erosion then dilation) with a square element of
/// side `2 * radius + 1`.
pub fn morphological_clean(mask: &ForegroundMask, radius: usize) -> ForegroundMask {
    if mask.bits.is_empty() || radius == 0 {
        return mask.clone();
    }
    square_filter(&square_filter(mask, radius, true), radius, false)
}

/// A connected foreground component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Blob {
    pub bbox: BoundingBox,
    pub area: u64,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Two-pass 8-connected labelling. Returns per-pixel labels (0 = background,
/// components numbered from 1 in raster order of first pixel) and the count.
fn label_components(mask: &ForegroundMask) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.bits[y * w + x] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut nn = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[nn] = l;
                    nn += 1;
                }
            };
            if x > 0 {
                push(labels[y * w + x - 1]);
            }
            if y > 0 {
                let up = (y - 1) * w;
                if x > 0 {
                    push(labels[up + x - 1]);
                }
                push(labels[up + x]);
                if x + 1 < w {
                    push(labels[up + x + 1]);
                }
            }
            let label = if nn == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let root = neighbours[..nn]
                    .iter()
                    .map(|&l| find(&mut parent, l))
                    .min()
                    .expect("non-empty");
                for &l in &neighbours[..nn] {
                    let r = find(&mut parent, l);
                    parent[r as usize] = root;
                }
                root
            };
            labels[y * w + x] = label;
        }
    }
    // compact roots to 1..=n in raster order of first appearance
    let mut compact = vec![0u32; parent.len()];
    let mut n = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if compact[root] == 0 {
            n += 1;
            compact[root] = n;
        }
        *l = compact[root];
    }
    (labels, n as usize)
}

/// One entry per 8-connected component, in raster order of first pixel.
pub fn foreground_blobs(mask: &ForegroundMask) -> Vec<Blob> {
    let (labels, n) = label_components(mask);
    let w = mask.width as usize;
    let mut acc = vec![(u32::MAX, u32::MAX, 0u32, 0u32, 0u64); n];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        let e = &mut acc[l as usize - 1];
        e.0 = e.0.min(x);
        e.1 = e.1.min(y);
        e.2 = e.2.max(x);
        e.3 = e.3.max(y);
        e.4 += 1;
    }
    acc.into_iter()
        .map(|(x0, y0, x1, y1, area)| Blob {
            bbox: BoundingBox {
                u: x0,
                v: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            },
            area,
        })
        .collect()
}

/// Clears every 8-connected component with fewer than `min_area` pixels.
pub fn remove_small_blobs(mask: &ForegroundMask, min_area: u64) -> ForegroundMask {
    let (labels, n) = label_components(mask);
    let mut areas = vec![0u64; n + 1];
    for &l in &labels {
        areas[l as usize] += 1;
    }
    let bits = labels
        .iter()
        .map(|&l| l != 0 && areas[l as usize] >= min_area)
        .collect();
    ForegroundMask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Post-processing applied to raw masks before they are used as measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCleaning {
    pub kernel_radius: usize,
    pub min_blob_area: u64,
}

impl Default for MaskCleaning {
    fn default() -> Self {
        MaskCleaning {
            kernel_radius: 1,
            min_blob_area: 100,
        }
    }
}

impl MaskCleaning {
    pub fn apply(&self, raw: &ForegroundMask) -> ForegroundMask {
        remove_small_blobs(
            &morphological_clean(raw, self.kernel_radius),
            self.min_blob_area,
        )
    }
}

/// Learns the background over every frame once, then replays the frames and
/// returns the cleaned masks of the replay pass.
pub fn burn_in_and_replay<I, F>(
    width: u32,
    height: u32,
    params: &BackgroundParams,
    cleaning: MaskCleaning,
    frames: I,
) -> Result<Vec<ForegroundMask>>
where
    I: Fn() -> F,
    F: Iterator<Item = Result<GrayImage>>,
{
    let mut model = PixelMixtureModel::new(width, height, params.clone())?;
    for frame in frames() {
        model.update_and_classify(&frame?)?;
    }
    frames()
        .map(|frame| Ok(cleaning.apply(&model.update_and_classify(&frame?)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, value: u8) -> GrayImage {
        GrayImage::from_pixel(w, h, image::Luma([value]))
    }

    fn mask_with(w: u32, h: u32, boxes: &[(u32, u32, u32, u32)]) -> ForegroundMask {
        let mut m = ForegroundMask::new(w, h);
        for &(u, v, bw, bh) in boxes {
            m.fill_box(&BoundingBox::new(u, v, bw, bh).unwrap());
        }
        m
    }

    #[test]
    fn first_frame_is_all_foreground() {
        let mut model = PixelMixtureModel::new(8, 6, BackgroundParams::default()).unwrap();
        let mask = model.update_and_classify(&gray(8, 6, 90)).unwrap();
        assert_eq!(mask.count(), 48);
    }

    #[test]
    fn constant_scene_becomes_background() {
        let mut model = PixelMixtureModel::new(16, 12, BackgroundParams::default()).unwrap();
        let frame = gray(16, 12, 128);
        let mut last = None;
        for _ in 0..50 {
            last = Some(model.update_and_classify(&frame).unwrap());
        }
        assert_eq!(last.unwrap().count(), 0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut model = PixelMixtureModel::new(16, 12, BackgroundParams::default()).unwrap();
        assert!(matches!(
            model.update_and_classify(&gray(12, 16, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mixture_invariants_hold_under_changing_input() {
        let params = BackgroundParams::default();
        let mut model = PixelMixtureModel::new(4, 4, params.clone()).unwrap();
        for t in 0..300u32 {
            let frame = GrayImage::from_fn(4, 4, |x, y| {
                image::Luma([((x * 37 + y * 11 + t * 53) % 256) as u8])
            });
            model.update_and_classify(&frame).unwrap();
            for y in 0..4 {
                for x in 0..4 {
                    let comps = model.pixel_components(x, y);
                    assert!(!comps.is_empty() && comps.len() <= params.max_components);
                    let sum: f64 = comps.iter().map(|c| c.weight).sum();
                    assert!((sum - 1.0).abs() < 1e-6, "weights sum to {sum}");
                    assert!(comps
                        .iter()
                        .all(|c| c.weight >= 0.0 && c.variance >= params.variance_floor));
                    assert!(comps.windows(2).all(|p| p[0].rank() >= p[1].rank()));
                }
            }
        }
    }

    #[test]
    fn luma_weights() {
        let img = DynamicImage::ImageRgb8(image::RgbImage::from_pixel(
            1,
            1,
            image::Rgb([100, 200, 50]),
        ));
        // 29.9 + 117.4 + 5.7 = 153.0
        assert_eq!(to_luma(&img).get_pixel(0, 0).0[0], 153);
    }

    #[test]
    fn opening_fixtures() {
        let empty = ForegroundMask::new(20, 20);
        assert_eq!(morphological_clean(&empty, 1), empty);

        let single = mask_with(20, 20, &[(7, 7, 1, 1)]);
        assert_eq!(morphological_clean(&single, 1).count(), 0);

        let block = mask_with(20, 20, &[(4, 5, 10, 10)]);
        assert_eq!(morphological_clean(&block, 1), block);

        // one-pixel-wide line disappears, block at the border stays
        let mixed = mask_with(20, 20, &[(0, 0, 6, 6), (10, 0, 1, 20)]);
        assert_eq!(
            morphological_clean(&mixed, 1),
            mask_with(20, 20, &[(0, 0, 6, 6)])
        );
    }

    #[test]
    fn blob_area_threshold_is_strict() {
        // 9x11 = 99 pixels, 10x10 = 100 pixels
        let m99 = mask_with(40, 40, &[(2, 2, 9, 11)]);
        assert_eq!(remove_small_blobs(&m99, 100).count(), 0);
        let m100 = mask_with(40, 40, &[(2, 2, 10, 10)]);
        assert_eq!(remove_small_blobs(&m100, 100), m100);
        let empty = ForegroundMask::new(5, 5);
        assert_eq!(remove_small_blobs(&empty, 100), empty);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = ForegroundMask::new(5, 5);
        for i in 0..5 {
            m.set(i, i, true);
        }
        let blobs = foreground_blobs(&m);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area, 5);
        assert_eq!(blobs[0].bbox, BoundingBox::new(0, 0, 5, 5).unwrap());
    }

    #[test]
    fn blob_fixtures() {
        assert!(foreground_blobs(&ForegroundMask::new(10, 10)).is_empty());

        let two = mask_with(30, 30, &[(1, 1, 5, 5), (20, 12, 5, 5)]);
        let blobs = foreground_blobs(&two);
        assert_eq!(
            blobs,
            vec![
                Blob {
                    bbox: BoundingBox::new(1, 1, 5, 5).unwrap(),
                    area: 25
                },
                Blob {
                    bbox: BoundingBox::new(20, 12, 5, 5).unwrap(),
                    area: 25
                },
            ]
        );

        let full = mask_with(7, 4, &[(0, 0, 7, 4)]);
        let blobs = foreground_blobs(&full);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].bbox, BoundingBox::new(0, 0, 7, 4).unwrap());
    }

    /// Flood-fill oracle: component areas and boxes, in raster order.
    fn flood_fill_blobs(m: &ForegroundMask) -> Vec<Blob> {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut seen = vec![false; m.bits().len()];
        let mut out = Vec::new();
        for start in 0..m.bits().len() {
            if !m.bits()[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let (mut x0, mut y0, mut x1, mut y1, mut area) = (i64::MAX, i64::MAX, 0, 0, 0);
            while let Some(p) = stack.pop() {
                let (x, y) = (p as i64 % w, p as i64 / w);
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
                area += 1;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let q = (ny * w + nx) as usize;
                        if m.bits()[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            let bbox = BoundingBox::new(
                x0 as u32,
                y0 as u32,
                (x1 - x0 + 1) as u32,
                (y1 - y0 + 1) as u32,
            )
            .unwrap();
            out.push(Blob { bbox, area });
        }
        out
    }

    fn arb_mask() -> impl Strategy<Value = ForegroundMask> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.45), (w * h) as usize)
                .prop_map(move |bits| ForegroundMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn labelling_matches_flood_fill(m in arb_mask()) {
            prop_assert_eq!(foreground_blobs(&m), flood_fill_blobs(&m));
        }

        #[test]
        fn blob_areas_sum_to_foreground(m in arb_mask()) {
            let total: u64 = foreground_blobs(&m).iter().map(|b| b.area).sum();
            prop_assert_eq!(total as usize, m.count());
        }

        #[test]
        fn opening_is_idempotent(m in arb_mask(), r in 1usize..3) {
            let once = morphological_clean(&m, r);
            prop_assert_eq!(morphological_clean(&once, r), once);
        }

        #[test]
        fn blob_removal_only_clears(m in arb_mask(), min_area in 0u64..30) {
            let out = remove_small_blobs(&m, min_area);
            prop_assert!(out.bits().iter().zip(m.bits()).all(|(&o, &i)| !o || i));
        }
    }
}
