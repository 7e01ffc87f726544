//! Procedural top-down track scenes and composited foreign objects.
//!
//! A normal scene is ballast texture crossed by periodic sleepers, two
//! vertical rails with fasteners at every sleeper crossing, and a global
//! illumination gain. An abnormal scene adds exactly one parametric object
//! and records its footprint as a ground-truth mask.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::model::IMAGE_SIZE;

const SIZE: usize = IMAGE_SIZE;

/// Inclusive range a scene parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Range { min, max }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.min > self.max {
            return Err(Error::Config(format!("{name}: empty range")));
        }
        Ok(())
    }
}

impl Range<usize> {
    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

impl Range<f32> {
    fn sample<R: Rng>(&self, rng: &mut R) -> f32 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub rail_count: usize,
    /// Rail width in pixels.
    pub rail_width: Range<usize>,
    /// Center-to-center distance between the two rails in pixels.
    pub rail_spacing: Range<usize>,
    /// Sleeper repeat distance in pixels.
    pub sleeper_period: Range<usize>,
    /// Standard deviation of per-pixel ballast noise, in `[0, 1]` intensity.
    pub ballast_noise: f32,
    /// Probability that a rail/sleeper crossing carries visible fasteners.
    pub fastener_density: f32,
    /// Global gain is drawn from `1 +- illumination_jitter`.
    pub illumination_jitter: f32,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            rail_count: 2,
            // a rigidly mounted downward camera sees constant gauge and
            // sleeper spacing; only the sleeper phase moves with the train
            rail_width: Range::new(8, 8),
            rail_spacing: Range::new(60, 60),
            sleeper_period: Range::new(32, 32),
            ballast_noise: 0.02,
            fastener_density: 0.9,
            illumination_jitter: 0.03,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.rail_count != 2 {
            return Err(Error::Config("scenes are rendered with exactly two rails".into()));
        }
        self.rail_width.check("rail_width")?;
        self.rail_spacing.check("rail_spacing")?;
        self.sleeper_period.check("sleeper_period")?;
        if self.rail_width.min == 0 || self.sleeper_period.min < 4 {
            return Err(Error::Config("rail width and sleeper period must be positive".into()));
        }
        if self.rail_spacing.max + self.rail_width.max + 16 > SIZE {
            return Err(Error::Config("rails do not fit in the frame".into()));
        }
        for (name, v) in [
            ("ballast_noise", self.ballast_noise),
            ("fastener_density", self.fastener_density),
            ("illumination_jitter", self.illumination_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Rectangle,
    Ellipse,
    Polygon,
    TexturePatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Uniform,
    NearRails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalySpec {
    pub shapes: Vec<ObjectShape>,
    /// Object area as a fraction of the frame.
    pub area_fraction: Range<f32>,
    /// Blend weight toward the object's color; 0 leaves the scene untouched.
    pub contrast: Range<f32>,
    pub placement: Placement,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec {
            shapes: vec![
                ObjectShape::Rectangle,
                ObjectShape::Ellipse,
                ObjectShape::Polygon,
                ObjectShape::TexturePatch,
            ],
            area_fraction: Range::new(0.01, 0.15),
            contrast: Range::new(0.7, 0.95),
            placement: Placement::Uniform,
        }
    }
}

impl AnomalySpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::Config("anomaly.shapes must not be empty".into()));
        }
        self.area_fraction.check("area_fraction")?;
        self.contrast.check("contrast")?;
        if !(self.area_fraction.min > 0.0 && self.area_fraction.max <= 0.5) {
            return Err(Error::Config("area_fraction must lie in (0, 0.5]".into()));
        }
        if !(self.contrast.min >= 0.0 && self.contrast.max <= 1.0) {
            return Err(Error::Config("contrast must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Float RGB canvas in `[0, 1]`.
struct Canvas {
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![[0.0; 3]; SIZE * SIZE],
        }
    }

    fn at(&mut self, x: usize, y: usize) -> &mut [f32; 3] {
        &mut self.px[y * SIZE + x]
    }

    fn fill_rect(&mut self, x0: isize, y0: isize, x1: isize, y1: isize, f: impl Fn(usize, usize) -> [f32; 3]) {
        for y in y0.max(0)..y1.min(SIZE as isize) {
            for x in x0.max(0)..x1.min(SIZE as isize) {
                *self.at(x as usize, y as usize) = f(x as usize, y as usize);
            }
        }
    }

    fn into_image(self) -> RgbImage {
        let mut img = RgbImage::new(SIZE as u32, SIZE as u32);
        for (i, p) in self.px.iter().enumerate() {
            let q = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel((i % SIZE) as u32, (i / SIZE) as u32, Rgb(q));
        }
        img
    }
}

/// Bilinearly interpolated lattice noise with `cell`-pixel spacing.
fn value_noise<R: Rng>(rng: &mut R, cell: usize) -> Vec<f32> {
    let n = SIZE / cell + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; SIZE * SIZE];
    for y in 0..SIZE {
        let fy = y as f32 / cell as f32;
        let (gy, ty) = (fy as usize, fy.fract());
        for x in 0..SIZE {
            let fx = x as f32 / cell as f32;
            let (gx, tx) = (fx as usize, fx.fract());
            let v = |i: usize, j: usize| lattice[j * n + i];
            let top = v(gx, gy) * (1.0 - tx) + v(gx + 1, gy) * tx;
            let bot = v(gx, gy + 1) * (1.0 - tx) + v(gx + 1, gy + 1) * tx;
            out[y * SIZE + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Renders a normal scene. Deterministic in `(params, seed)`.
pub fn generate_normal(params: &SceneParams, seed: u64) -> Result<RgbImage> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, params.ballast_noise.max(1e-6)).expect("positive sigma");
    let mut canvas = Canvas::new();

    // ballast
    let tint = [
        rng.random_range(0.40..0.48),
        rng.random_range(0.37..0.43),
        rng.random_range(0.32..0.38),
    ];
    let coarse = value_noise(&mut rng, 16);
    let fine = value_noise(&mut rng, 4);
    for (i, p) in canvas.px.iter_mut().enumerate() {
        let base = 0.06 * coarse[i] + 0.05 * fine[i];
        for c in 0..3 {
            p[c] = tint[c] + base + noise.sample(&mut rng);
        }
    }

    // sleepers
    let period = params.sleeper_period.sample(&mut rng);
    let thickness = (period as f32 * 0.42).round() as isize;
    let phase = rng.random_range(0..period) as isize;
    let shade = rng.random_range(0.58..0.66);
    let mut sleeper_rows = Vec::new();
    let mut y = phase - period as isize;
    while y < SIZE as isize {
        let streak = rng.random_range(-0.02..0.02);
        canvas.fill_rect(0, y, SIZE as isize, y + thickness, |_, _| {
            [shade + streak, shade + streak - 0.01, shade + streak - 0.03]
        });
        sleeper_rows.push((y, y + thickness));
        y += period as isize;
    }
    for p in canvas.px.iter_mut() {
        for c in p.iter_mut() {
            *c += 0.3 * noise.sample(&mut rng);
        }
    }

    // rails and fasteners
    let spacing = params.rail_spacing.sample(&mut rng) as isize;
    let width = params.rail_width.sample(&mut rng) as isize;
    let center = SIZE as isize / 2 + rng.random_range(-5i64..=5) as isize;
    let rails = [center - spacing / 2, center + spacing / 2];
    for &rc in &rails {
        let x0 = rc - width / 2;
        canvas.fill_rect(x0, 0, x0 + width, SIZE as isize, |x, _| {
            let u = (x as f32 - x0 as f32 + 0.5) / width as f32;
            let head = 0.72 + 0.18 * (PI * u).sin();
            [head, head, head + 0.02]
        });
        for &(s0, s1) in &sleeper_rows {
            if rng.random::<f32>() >= params.fastener_density {
                continue;
            }
            let mid = (s0 + s1) / 2;
            for side in [x0 - 5, x0 + width + 1] {
                canvas.fill_rect(side, mid - 3, side + 4, mid + 3, |_, _| [0.2, 0.2, 0.22]);
            }
        }
    }

    let gain = 1.0 + rng.random_range(-1.0..=1.0) * params.illumination_jitter;
    for p in canvas.px.iter_mut() {
        p.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(canvas.into_image())
}

/// Result of compositing one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub image: RgbImage,
    /// 255 on the object footprint, 0 elsewhere.
    pub mask: GrayImage,
    pub shape: ObjectShape,
    /// Set when the composite left every pixel unchanged.
    pub degenerate: bool,
}

impl Composite {
    pub fn mask_area(&self) -> usize {
        self.mask.pixels().filter(|p| p.0[0] > 0).count()
    }
}

struct Footprint {
    inside: Box<dyn Fn(f32, f32) -> bool>,
    half_w: f32,
    half_h: f32,
}

fn footprint<R: Rng>(shape: ObjectShape, area: f32, rng: &mut R) -> Footprint {
    match shape {
        ObjectShape::Rectangle | ObjectShape::TexturePatch => {
            let aspect = rng.random_range(0.5f32..2.0);
            let w = (area * aspect).sqrt();
            let h = area / w;
            let (hw, hh) = (w / 2.0, h / 2.0);
            Footprint {
                inside: Box::new(move |dx, dy| dx.abs() < hw && dy.abs() < hh),
                half_w: hw,
                half_h: hh,
            }
        }
        ObjectShape::Ellipse => {
            let aspect = rng.random_range(0.5f32..2.0);
            let a = (area * aspect / PI).sqrt();
            let b = area / (PI * a);
            let theta = rng.random_range(0.0..PI);
            let (s, c) = theta.sin_cos();
            let r = a.max(b);
            Footprint {
                inside: Box::new(move |dx, dy| {
                    let u = c * dx + s * dy;
                    let v = -s * dx + c * dy;
                    (u / a).powi(2) + (v / b).powi(2) < 1.0
                }),
                half_w: r,
                half_h: r,
            }
        }
        ObjectShape::Polygon => {
            let k = rng.random_range(5..=8);
            let start = rng.random_range(0.0..2.0 * PI);
            let mut verts: Vec<(f32, f32)> = (0..k)
                .map(|i| {
                    let ang = start + 2.0 * PI * i as f32 / k as f32 + rng.random_range(-0.2..0.2);
                    let rad = rng.random_range(0.65..1.0);
                    (rad * ang.cos(), rad * ang.sin())
                })
                .collect();
            let unit_area = 0.5
                * (0..k)
                    .map(|i| {
                        let (x0, y0) = verts[i];
                        let (x1, y1) = verts[(i + 1) % k];
                        x0 * y1 - x1 * y0
                    })
                    .sum::<f32>()
                    .abs();
            let scale = (area / unit_area).sqrt();
            verts.iter_mut().for_each(|v| {
                v.0 *= scale;
                v.1 *= scale;
            });
            let r = verts.iter().map(|&(x, y)| x.abs().max(y.abs())).fold(0.0, f32::max);
            Footprint {
                inside: Box::new(move |px, py| {
                    let mut inside = false;
                    let mut j = verts.len() - 1;
                    for i in 0..verts.len() {
                        let (xi, yi) = verts[i];
                        let (xj, yj) = verts[j];
                        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                            inside = !inside;
                        }
                        j = i;
                    }
                    inside
                }),
                half_w: r,
                half_h: r,
            }
        }
    }
}

/// Columns of the two brightest vertical bands, used to bias placement.
fn rail_columns(image: &RgbImage) -> Vec<f32> {
    let col_mean: Vec<f32> = (0..SIZE)
        .map(|x| {
            (0..SIZE)
                .map(|y| image.get_pixel(x as u32, y as u32).0.iter().map(|&v| v as f32).sum::<f32>())
                .sum::<f32>()
        })
        .collect();
    let mut best: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..SIZE).collect();
    order.sort_by(|&a, &b| col_mean[b].total_cmp(&col_mean[a]));
    for x in order {
        if best.iter().all(|&b| (b as isize - x as isize).abs() > 16) {
            best.push(x);
        }
        if best.len() == 2 {
            break;
        }
    }
    best.into_iter().map(|x| x as f32).collect()
}

fn object_palette<R: Rng>(rng: &mut R) -> ([f32; 3], [f32; 3]) {
    const PALETTE: [[f32; 3]; 8] = [
        [0.85, 0.12, 0.10],
        [0.10, 0.25, 0.85],
        [0.10, 0.70, 0.20],
        [0.95, 0.85, 0.10],
        [0.05, 0.05, 0.06],
        [0.97, 0.97, 0.95],
        [0.70, 0.15, 0.75],
        [0.95, 0.50, 0.05],
    ];
    let a = PALETTE[rng.random_range(0..PALETTE.len())];
    let b = PALETTE[rng.random_range(0..PALETTE.len())];
    (a, b)
}

/// Composites exactly one object onto `image`.
pub fn composite_anomaly(image: &RgbImage, spec: &AnomalySpec, seed: u64) -> Result<Composite> {
    spec.validate()?;
    if image.width() as usize != SIZE || image.height() as usize != SIZE {
        return Err(Error::shape(
            "composite_anomaly image",
            format!("{SIZE}x{SIZE}"),
            format!("{}x{}", image.width(), image.height()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = spec.shapes[rng.random_range(0..spec.shapes.len())];
    let total = (SIZE * SIZE) as f32;
    let lo = (spec.area_fraction.min * total).ceil() as usize;
    let hi = (spec.area_fraction.max * total).floor() as usize;
    let rails = if spec.placement == Placement::NearRails {
        rail_columns(image)
    } else {
        Vec::new()
    };

    for _ in 0..64 {
        let area = spec.area_fraction.sample(&mut rng) * total;
        let fp = footprint(shape, area, &mut rng);
        let (mw, mh) = (fp.half_w.ceil() + 1.0, fp.half_h.ceil() + 1.0);
        if 2.0 * mw >= SIZE as f32 || 2.0 * mh >= SIZE as f32 {
            continue;
        }
        let cx = if rails.is_empty() {
            rng.random_range(mw..SIZE as f32 - mw)
        } else {
            let r = rails[rng.random_range(0..rails.len())];
            (r + rng.random_range(-20.0..20.0)).clamp(mw, SIZE as f32 - mw - 1.0)
        };
        let cy = rng.random_range(mh..SIZE as f32 - mh);
        let mut mask = GrayImage::new(SIZE as u32, SIZE as u32);
        let mut count = 0;
        for y in 0..SIZE {
            for x in 0..SIZE {
                if (fp.inside)(x as f32 + 0.5 - cx, y as f32 + 0.5 - cy) {
                    mask.put_pixel(x as u32, y as u32, Luma([255]));
                    count += 1;
                }
            }
        }
        if count < lo || count > hi {
            continue;
        }

        let alpha = spec.contrast.sample(&mut rng);
        let (primary, secondary) = object_palette(&mut rng);
        let stripe = rng.random_range(3.0f32..7.0);
        let stripe_angle = rng.random_range(0.0..PI);
        let (sa, ca) = stripe_angle.sin_cos();
        let mut out = image.clone();
        for y in 0..SIZE {
            for x in 0..SIZE {
                if mask.get_pixel(x as u32, y as u32).0[0] == 0 {
                    continue;
                }
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let color = match shape {
                    ObjectShape::TexturePatch => {
                        if ((ca * dx + sa * dy) / stripe).floor() as i32 % 2 == 0 {
                            primary
                        } else {
                            secondary
                        }
                    }
                    _ => {
                        // soft shading toward one corner
                        let s = 1.0 - 0.15 * ((dx + dy) / (fp.half_w + fp.half_h + 1.0));
                        primary.map(|v| (v * s).clamp(0.0, 1.0))
                    }
                };
                let px = out.get_pixel_mut(x as u32, y as u32);
                for c in 0..3 {
                    let v = px.0[c] as f32 / 255.0;
                    let blended = (1.0 - alpha) * v + alpha * color[c];
                    px.0[c] = (blended.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        let degenerate = out == *image;
        return Ok(Composite {
            image: out,
            mask,
            shape,
            degenerate,
        });
    }
    Err(Error::Config(format!(
        "could not place a {shape:?} within area bounds [{lo}, {hi}] px"
    )))
}

/// Sizes and seed for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub train_normal: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub seed: u64,
    pub scene: SceneParams,
    pub anomaly: AnomalySpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_normal: 256,
            test_normal: 50,
            test_abnormal: 50,
            seed: 0,
            scene: SceneParams::default(),
            anomaly: AnomalySpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_normal == 0 {
            return Err(Error::Config("data.train_normal must be at least 1".into()));
        }
        if self.test_normal + self.test_abnormal == 0 {
            return Err(Error::Config("the test split must contain at least one image".into()));
        }
        self.scene.validate()?;
        self.anomaly.validate()
    }
}

/// SplitMix64 step; derives independent per-image seeds from the run seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn save_png<P: image::PixelWithColorType<Subpixel = u8>>(
    img: &image::ImageBuffer<P, Vec<u8>>,
    path: &Path,
) -> Result<()>
where
    P: image::Pixel,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`.
pub fn build_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    for sub in ["images/train", "images/test", "masks/test"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rows = Vec::new();
    for i in 0..spec.train_normal {
        let seed = derive_seed(spec.seed, 0, i as u64);
        let path = format!("images/train/normal_{i:05}.png");
        save_png(&generate_normal(&spec.scene, seed)?, &out_dir.join(&path))?;
        rows.push(ManifestRow {
            path,
            label: Label::Normal,
            mask_path: None,
            seed,
        });
    }
    for i in 0..spec.test_normal {
        let seed = derive_seed(spec.seed, 1, i as u64);
        let path = format!("images/test/normal_{i:05}.png");
        save_png(&generate_normal(&spec.scene, seed)?, &out_dir.join(&path))?;
        rows.push(ManifestRow {
            path,
            label: Label::Normal,
            mask_path: None,
            seed,
        });
    }
    for i in 0..spec.test_abnormal {
        let seed = derive_seed(spec.seed, 2, i as u64);
        let base = generate_normal(&spec.scene, seed)?;
        let comp = composite_anomaly(&base, &spec.anomaly, derive_seed(seed, 3, 0))?;
        let path = format!("images/test/abnormal_{i:05}.png");
        let mask_path = format!("masks/test/abnormal_{i:05}.png");
        save_png(&comp.image, &out_dir.join(&path))?;
        save_png(&comp.mask, &out_dir.join(&mask_path))?;
        rows.push(ManifestRow {
            path,
            label: Label::Abnormal,
            mask_path: Some(mask_path),
            seed,
        });
    }
    let manifest = Manifest { rows };
    manifest.write(out_dir)?;
    Ok(manifest)
}
