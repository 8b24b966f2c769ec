//! Optical model: surface normals, a per-channel polynomial from normal to
//! color, and ray-marched shadows.
//!
//! Normals live in the gel surface frame: `+z` points toward the camera, so a
//! flat gel has normal `(0, 0, 1)`. The elevation map fed to [`normals_from`]
//! is the indentation (gel pushed toward the camera).

use std::path::Path;

use image::{ImageBuffer, Rgb};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::write_atomic;
use crate::geometry::{icosphere, Pose, Vec3};
use crate::tactile_render::{
    indentation_from, render_heightmap, smooth_pyramid, Grid, IndentationMap, SensorConfig, SurfaceRef,
};

/// Row-major RGB image with intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        RgbImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (height, width, channels).
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn channel_mean(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        let n = (self.height * self.width) as f64;
        m.map(|v| v / n)
    }

    pub fn to_png8(&self) -> Result<Vec<u8>> {
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(y as usize, x as usize);
            Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        Ok(bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_png8()?)
    }

    fn save_png16(&self, path: &Path) -> Result<()> {
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(y as usize, x as usize);
            Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16))
        });
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        write_atomic(path, bytes)
    }

    fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Ok(RgbImage { height: h, width: w, data })
    }
}

/// Per-pixel unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct Normals {
    height: usize,
    width: usize,
    data: Vec<Vec3>,
}

impl Normals {
    pub fn flat(height: usize, width: usize) -> Self {
        Normals { height, width, data: vec![Vec3::z(); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, n: Vec3) {
        self.data[row * self.width + col] = n;
    }
}

/// Central differences inside, one-sided at the borders.
pub fn normals_from(elevation: &Grid, pixel_pitch: (f64, f64)) -> Normals {
    let (h, w) = (elevation.height(), elevation.width());
    let (px, py) = pixel_pitch;
    let mut data = Vec::with_capacity(h * w);
    let diff = |lo: f64, hi: f64, span: usize, pitch: f64| if span == 0 { 0.0 } else { (hi - lo) / (span as f64 * pitch) };
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let gx = diff(elevation.get(r, c0), elevation.get(r, c1), c1 - c0, px);
            let gy = diff(elevation.get(r0, c), elevation.get(r1, c), r1 - r0, py);
            data.push(Vec3::new(-gx, -gy, 1.0).normalize());
        }
    }
    Normals { height: h, width: w, data }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector toward the light.
    pub direction: Vec3,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightingModel {
    pub lights: Vec<Light>,
    pub ambient: [f64; 3],
    pub specular: f64,
    pub shininess: f64,
    /// Relative brightness loss at the image corners of the background.
    pub vignette: f64,
}

impl Default for LightingModel {
    /// Red, green and blue lights 120 degrees apart, 30 degrees above the gel plane.
    fn default() -> Self {
        let elevation = 30f64.to_radians();
        let light = |azimuth_deg: f64, color: [f64; 3]| {
            let a = azimuth_deg.to_radians();
            Light {
                direction: Vec3::new(elevation.cos() * a.cos(), elevation.cos() * a.sin(), elevation.sin()),
                color,
            }
        };
        LightingModel {
            lights: vec![light(0.0, [0.6, 0.05, 0.05]), light(120.0, [0.05, 0.6, 0.05]), light(240.0, [0.05, 0.05, 0.6])],
            ambient: [0.15, 0.15, 0.15],
            specular: 0.05,
            shininess: 4.0,
            vignette: 0.1,
        }
    }
}

impl LightingModel {
    pub fn ambient_only(ambient: [f64; 3]) -> Self {
        LightingModel { lights: Vec::new(), ambient, specular: 0.0, shininess: 1.0, vignette: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.lights.iter().enumerate() {
            if (l.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("light {i} direction is not unit length")));
            }
            if l.color.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::invalid(format!("light {i} color must be finite and >= 0")));
            }
        }
        if self.ambient.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("ambient must be finite and >= 0"));
        }
        if !(self.specular >= 0.0 && self.shininess > 0.0 && self.vignette >= 0.0 && self.vignette < 1.0) {
            return Err(Error::invalid("specular >= 0, shininess > 0 and vignette in [0, 1) required"));
        }
        Ok(())
    }

    /// Phong intensity for one normal, viewed along `+z`.
    pub fn phong(&self, n: &Vec3) -> [f64; 3] {
        let mut out = self.ambient;
        for l in &self.lights {
            let ndl = n.dot(&l.direction);
            if ndl <= 0.0 {
                continue;
            }
            let refl = n * (2.0 * ndl) - l.direction;
            let spec = self.specular * refl.z.max(0.0).powf(self.shininess);
            for c in 0..3 {
                out[c] += l.color[c] * (ndl + spec);
            }
        }
        out
    }

    /// Flat-gel image with radial vignetting.
    pub fn background(&self, cfg: &SensorConfig) -> RgbImage {
        let (h, w) = cfg.image_size;
        let flat = self.phong(&Vec3::z());
        let mut img = RgbImage::filled(h, w, [0.0; 3]);
        let (hw, hh) = (0.5 * cfg.sensing_area.0, 0.5 * cfg.sensing_area.1);
        for r in 0..h {
            for c in 0..w {
                let (x, y) = cfg.pixel_center(r, c);
                let rho2 = 0.5 * ((x / hw).powi(2) + (y / hh).powi(2));
                let s = 1.0 - self.vignette * rho2;
                img.set(r, c, flat.map(|v| (v * s).clamp(0.0, 1.0)));
            }
        }
        img
    }
}

/// Monomials `nx^a ny^b`, `a + b <= degree`, ordered by total degree then descending `a`.
pub fn monomials(degree: usize, nx: f64, ny: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity((degree + 1) * (degree + 2) / 2);
    for t in 0..=degree {
        for a in (0..=t).rev() {
            out.push(nx.powi(a as i32) * ny.powi((t - a) as i32));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyTable {
    pub degree: usize,
    /// Per channel (R, G, B) coefficients over [`monomials`].
    pub coeffs: [Vec<f64>; 3],
    pub background: RgbImage,
}

#[derive(Serialize, Deserialize)]
struct PolyTableFile {
    degree: usize,
    coeffs: [Vec<f64>; 3],
    height: usize,
    width: usize,
    background_png: String,
}

impl PolyTable {
    pub fn eval(&self, nx: f64, ny: f64) -> [f64; 3] {
        let m = monomials(self.degree, nx, ny);
        std::array::from_fn(|c| self.coeffs[c].iter().zip(&m).map(|(a, b)| a * b).sum())
    }

    /// Shifts the constant terms so that the flat normal maps to the background mean.
    pub fn anchor_to_background(&mut self) {
        let mean = self.background.channel_mean();
        for _ in 0..2 {
            let at0 = self.eval(0.0, 0.0);
            for c in 0..3 {
                self.coeffs[c][0] += mean[c] - at0[c];
            }
        }
    }

    /// Writes `<path>` (JSON coefficients) and a sibling 16-bit PNG background.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "table".into());
        let png_name = format!("{stem}_background.png");
        self.background.save_png16(&path.with_file_name(&png_name))?;
        let file = PolyTableFile {
            degree: self.degree,
            coeffs: self.coeffs.clone(),
            height: self.background.height,
            width: self.background.width,
            background_png: png_name,
        };
        write_atomic(path, serde_json::to_vec_pretty(&file)?)
    }

    /// Loads a table and re-anchors it to the (quantized) stored background.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: PolyTableFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let n = (file.degree + 1) * (file.degree + 2) / 2;
        if file.coeffs.iter().any(|c| c.len() != n) {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: 0,
                msg: format!("degree {} needs {n} coefficients per channel", file.degree),
            });
        }
        let background = RgbImage::load_png(&path.with_file_name(&file.background_png))?;
        if (background.height, background.width) != (file.height, file.width) {
            return Err(Error::Format { path: path.display().to_string(), line: 0, msg: "background size mismatch".into() });
        }
        let mut t = PolyTable { degree: file.degree, coeffs: file.coeffs, background };
        t.anchor_to_background();
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub table: PolyTable,
    /// Fit residual over the training pixels (intensity units).
    pub rmse: f64,
    pub samples: usize,
}

pub fn calibrate(lighting: &LightingModel, cfg: &SensorConfig) -> Result<Calibration> {
    calibrate_with_degree(lighting, cfg, 2)
}

/// Least-squares fit of the Phong response over normals from synthetic sphere presses.
pub fn calibrate_with_degree(lighting: &LightingModel, cfg: &SensorConfig, degree: usize) -> Result<Calibration> {
    lighting.validate()?;
    cfg.validate()?;
    let normals = training_normals(cfg)?;
    let background = lighting.background(cfg);
    let mean = background.channel_mean();
    let flat = lighting.phong(&Vec3::z());
    let targets: Vec<[f64; 3]> = normals
        .iter()
        .map(|n| {
            let p = lighting.phong(n);
            std::array::from_fn(|c| p[c] - flat[c] + mean[c])
        })
        .collect();

    let k = (degree + 1) * (degree + 2) / 2;
    let a = DMatrix::from_fn(normals.len(), k, |i, j| monomials(degree, normals[i].x, normals[i].y)[j]);
    let ata = a.transpose() * &a;
    let eig = ata.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::Calibration(format!("normal equations are singular (eigenvalues {lo:.3e} .. {hi:.3e})")));
    }
    let chol = ata.cholesky().ok_or_else(|| Error::Calibration("normal equations not positive definite".into()))?;
    let mut coeffs: [Vec<f64>; 3] = Default::default();
    for c in 0..3 {
        let y = DVector::from_iterator(normals.len(), targets.iter().map(|t| t[c]));
        coeffs[c] = chol.solve(&(a.transpose() * y)).iter().copied().collect();
    }
    let mut table = PolyTable { degree, coeffs, background };
    table.anchor_to_background();
    let mut sq = 0.0;
    for (n, t) in normals.iter().zip(&targets) {
        let p = table.eval(n.x, n.y);
        sq += (0..3).map(|c| (p[c] - t[c]).powi(2)).sum::<f64>();
    }
    let rmse = (sq / (3 * normals.len()) as f64).sqrt();
    Ok(Calibration { table, rmse, samples: normals.len() })
}

/// Normals of smoothed sphere presses: every contact pixel plus a sparse set of flat pixels.
fn training_normals(cfg: &SensorConfig) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    let presses = [(0.003, 0.0005, (-0.004, 0.002)), (0.005, 0.001, (0.003, -0.001)), (0.004, 0.0015, (0.0, 0.0))];
    for (r, d, (x, y)) in presses {
        let mesh = icosphere(r, 4)?;
        let pose = Pose::from_translation(Vec3::new(x, y, cfg.gelpad_thickness + r - d));
        let hm = render_heightmap(&[SurfaceRef::from_mesh(&mesh, pose)], &Pose::identity(), cfg);
        let ind = smooth_pyramid(&indentation_from(&hm, cfg), &cfg.kernel_sizes)?;
        let normals = normals_from(&ind.values, ind.pixel_pitch);
        for row in 0..normals.height {
            for col in 0..normals.width {
                if ind.values.get(row, col) > 1e-7 || (row % 16 == 0 && col % 16 == 0) {
                    out.push(normals.get(row, col));
                }
            }
        }
    }
    Ok(out)
}

/// `background + P(n) - P(flat)`, clamped to [0, 1]. Warns when more than 1% of pixels saturate.
pub fn shade(normals: &Normals, table: &PolyTable) -> RgbImage {
    let (h, w) = (normals.height, normals.width);
    let at0 = table.eval(0.0, 0.0);
    let mut out = table.background.clone();
    let mut saturated = 0usize;
    for r in 0..h {
        for c in 0..w {
            let n = normals.get(r, c);
            if n.x == 0.0 && n.y == 0.0 {
                continue;
            }
            let p = table.eval(n.x, n.y);
            let bg = table.background.get(r, c);
            let mut clipped = false;
            let v: [f64; 3] = std::array::from_fn(|k| {
                let v = bg[k] + (p[k] - at0[k]);
                clipped |= !(0.0..=1.0).contains(&v);
                v.clamp(0.0, 1.0)
            });
            saturated += clipped as usize;
            out.set(r, c, v);
        }
    }
    if saturated * 100 > h * w {
        log::warn!("{saturated} of {} tactile pixels clamped to [0, 1]", h * w);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowParams {
    /// Multiplicative intensity in full shadow.
    pub factor: f64,
    pub max_steps: usize,
    /// Occluder excess (in pixels of rise along the light ray) over which the shadow fades in.
    pub softness_px: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        ShadowParams { factor: 0.6, max_steps: 80, softness_px: 2.0 }
    }
}

/// Darkens pixels whose view of each light is blocked by the elevation map.
pub fn add_shadows(rgb: &RgbImage, elevation: &Grid, pixel_pitch: (f64, f64), lighting: &LightingModel, params: &ShadowParams) -> RgbImage {
    let mut out = rgb.clone();
    let (h, w) = (elevation.height(), elevation.width());
    if params.factor == 1.0 || elevation.data().iter().all(|&v| v == elevation.data()[0]) {
        return out;
    }
    let support = support_box(elevation);
    let Some((sr0, sr1, sc0, sc1)) = support else {
        return out;
    };
    let reach = params.max_steps;
    let top = elevation.max();
    for light in &lighting.lights {
        let lxy = (light.direction.x.powi(2) + light.direction.y.powi(2)).sqrt();
        if lxy < 1e-9 || light.direction.z <= 0.0 {
            continue;
        }
        let (dx, dy) = (light.direction.x / lxy, light.direction.y / lxy);
        let step = ((dx * pixel_pitch.0).powi(2) + (dy * pixel_pitch.1).powi(2)).sqrt();
        let rise = step * light.direction.z / lxy;
        let soft = params.softness_px * rise;
        let r_lo = sr0.saturating_sub(reach);
        let r_hi = (sr1 + reach).min(h - 1);
        let c_lo = sc0.saturating_sub(reach);
        let c_hi = (sc1 + reach).min(w - 1);
        let offsets: Vec<(isize, isize)> =
            (1..=reach).map(|k| ((dy * k as f64).round() as isize, (dx * k as f64).round() as isize)).collect();
        let data = elevation.data();
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let h0 = data[r * w + c];
                let mut excess = f64::NEG_INFINITY;
                // Past this many steps the ray is above every sample.
                let last = (((top - h0) / rise).ceil().max(0.0) as usize).min(reach);
                for (k, &(or, oc)) in offsets[..last].iter().enumerate() {
                    let (qr, qc) = (r as isize + or, c as isize + oc);
                    if qr < 0 || qc < 0 || qr >= h as isize || qc >= w as isize {
                        break;
                    }
                    let e = data[qr as usize * w + qc as usize] - h0 - (k + 1) as f64 * rise;
                    excess = excess.max(e);
                }
                if excess <= 0.0 {
                    continue;
                }
                let o = (excess / soft).min(1.0);
                let s = 1.0 - (1.0 - params.factor) * o;
                let p = out.get(r, c);
                out.set(r, c, p.map(|v| v * s));
            }
        }
    }
    out
}

/// Full optical path for one indentation map: smoothing, normals, shading and optional shadows.
pub fn tactile_image(
    ind: &IndentationMap,
    cfg: &SensorConfig,
    table: &PolyTable,
    lighting: &LightingModel,
    shadows: Option<&ShadowParams>,
) -> Result<RgbImage> {
    let smooth = smooth_pyramid(ind, &cfg.kernel_sizes)?;
    let img = shade(&normals_from(&smooth.values, smooth.pixel_pitch), table);
    Ok(match shadows {
        Some(p) => add_shadows(&img, &smooth.values, smooth.pixel_pitch, lighting, p),
        None => img,
    })
}

/// Bounding rows/cols of pixels above the map minimum.
fn support_box(g: &Grid) -> Option<(usize, usize, usize, usize)> {
    let base = g.min();
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for r in 0..g.height() {
        for c in 0..g.width() {
            if g.get(r, c) > base {
                b = Some(match b {
                    None => (r, r, c, c),
                    Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                });
            }
        }
    }
    b
}
