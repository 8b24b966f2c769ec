//! Height maps by orthographic ray casting over the sensing area, indentation
//! and pyramid Gaussian smoothing.
//!
//! Camera frame: the camera plane is `z = 0` and rays travel along `+z`. The
//! undeformed gel surface sits at depth `gelpad_thickness`. Pixel `(row, col)`
//! is centered at `x = (col + 0.5) * pitch_x - width / 2`,
//! `y = (row + 0.5) * pitch_y - height / 2`.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::write_atomic;
use crate::geometry::{Pose, TriMesh, Vec3};

pub const DEFAULT_KERNEL_SIZES: [usize; 4] = [5, 11, 21, 31];
const MAGIC: &[u8; 8] = b"TSHMAP01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    /// (width, height) in meters.
    pub sensing_area: (f64, f64),
    pub gelpad_thickness: f64,
    /// (rows, cols).
    pub marker_grid: (usize, usize),
    pub camera_pose_in_case: Pose,
    pub kernel_sizes: Vec<usize>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            image_size: (480, 640),
            sensing_area: (0.0192, 0.0144),
            gelpad_thickness: 0.004,
            marker_grid: (10, 10),
            camera_pose_in_case: Pose::identity(),
            kernel_sizes: DEFAULT_KERNEL_SIZES.to_vec(),
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::invalid("image size must be nonzero"));
        }
        let (aw, ah) = self.sensing_area;
        if !(aw > 0.0 && ah > 0.0 && aw.is_finite() && ah.is_finite()) {
            return Err(Error::invalid("sensing area must be positive"));
        }
        if !(self.gelpad_thickness > 0.0 && self.gelpad_thickness.is_finite()) {
            return Err(Error::invalid("gelpad thickness must be positive"));
        }
        if self.marker_grid.0 == 0 || self.marker_grid.1 == 0 {
            return Err(Error::invalid("marker grid must be nonempty"));
        }
        check_kernels(&self.kernel_sizes)
    }

    /// (x, y) pixel pitch in meters.
    pub fn pixel_pitch(&self) -> (f64, f64) {
        (self.sensing_area.0 / self.image_size.1 as f64, self.sensing_area.1 / self.image_size.0 as f64)
    }

    /// Camera-frame (x, y) of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (px, py) = self.pixel_pitch();
        (
            (col as f64 + 0.5) * px - 0.5 * self.sensing_area.0,
            (row as f64 + 0.5) * py - 0.5 * self.sensing_area.1,
        )
    }

    pub fn camera_pose(&self, case_pose: &Pose) -> Pose {
        case_pose.compose(&self.camera_pose_in_case)
    }
}

/// Row-major scalar image.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!("{} values for a {height}x{width} grid", data.len())));
        }
        Ok(Grid { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeightMap {
    /// Depth from the camera plane (m).
    pub values: Grid,
    /// (x, y) meters per pixel.
    pub pixel_pitch: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndentationMap {
    /// Penetration depth (m), non-negative.
    pub values: Grid,
    pub pixel_pitch: (f64, f64),
}

/// Triangles to cast against; vertices are in the frame given by `pose`.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceRef<'a> {
    pub vertices: &'a [Vec3],
    pub triangles: &'a [[usize; 3]],
    pub pose: Pose,
}

impl<'a> SurfaceRef<'a> {
    pub fn from_mesh(mesh: &'a TriMesh, pose: Pose) -> Self {
        SurfaceRef { vertices: mesh.vertices(), triangles: mesh.triangles(), pose }
    }
}

/// Orthographic z-buffer over the sensing area. Hits deeper than the rest
/// surface or farther than one gel thickness behind the camera plane are
/// ignored; pixels without a hit keep the rest depth. Depths are clamped at 0.
pub fn render_heightmap(surfaces: &[SurfaceRef], sensor_pose: &Pose, cfg: &SensorConfig) -> HeightMap {
    let (h, w) = cfg.image_size;
    let rest = cfg.gelpad_thickness;
    let (px, py) = cfg.pixel_pitch();
    let (x0, y0) = (-0.5 * cfg.sensing_area.0, -0.5 * cfg.sensing_area.1);
    let to_camera = cfg.camera_pose(sensor_pose).inverse();
    let mut depth = Grid::filled(h, w, rest);
    let mut cam: Vec<Vec3> = Vec::new();
    for s in surfaces {
        let t = to_camera.compose(&s.pose);
        cam.clear();
        cam.extend(s.vertices.iter().map(|v| t.transform_point(v)));
        for tri in s.triangles {
            let [a, b, c] = tri.map(|i| cam[i]);
            let zmin = a.z.min(b.z).min(c.z);
            let zmax = a.z.max(b.z).max(c.z);
            if zmin >= rest || zmax < -rest {
                continue;
            }
            let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            if area.abs() < 1e-24 {
                continue;
            }
            let col_range = pixel_range(a.x.min(b.x).min(c.x), a.x.max(b.x).max(c.x), x0, px, w);
            let row_range = pixel_range(a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y), y0, py, h);
            let (Some((c0, c1)), Some((r0, r1))) = (col_range, row_range) else {
                continue;
            };
            let tol = -1e-12;
            for row in r0..=r1 {
                let y = y0 + (row as f64 + 0.5) * py;
                for col in c0..=c1 {
                    let x = x0 + (col as f64 + 0.5) * px;
                    let wa = ((b.x - x) * (c.y - y) - (b.y - y) * (c.x - x)) / area;
                    let wb = ((c.x - x) * (a.y - y) - (c.y - y) * (a.x - x)) / area;
                    let wc = 1.0 - wa - wb;
                    if wa < tol || wb < tol || wc < tol {
                        continue;
                    }
                    let z = wa * a.z + wb * b.z + wc * c.z;
                    if z >= -rest && z < depth.get(row, col) {
                        depth.set(row, col, z);
                    }
                }
            }
        }
    }
    for v in depth.data_mut() {
        *v = v.max(0.0);
    }
    HeightMap { values: depth, pixel_pitch: (px, py) }
}

fn pixel_range(lo: f64, hi: f64, origin: f64, pitch: f64, n: usize) -> Option<(usize, usize)> {
    let first = ((lo - origin) / pitch - 0.5).ceil();
    let last = ((hi - origin) / pitch - 0.5).floor();
    if last < 0.0 || first > (n - 1) as f64 || first > last {
        return None;
    }
    Some((first.max(0.0) as usize, last.min((n - 1) as f64) as usize))
}

pub fn indentation_from(hm: &HeightMap, cfg: &SensorConfig) -> IndentationMap {
    let rest = cfg.gelpad_thickness;
    let mut values = hm.values.clone();
    for v in values.data_mut() {
        *v = (rest - *v).clamp(0.0, rest);
    }
    IndentationMap { values, pixel_pitch: hm.pixel_pitch }
}

fn check_kernels(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::invalid("at least one kernel size required"));
    }
    for (i, &k) in sizes.iter().enumerate() {
        if k % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {k} must be odd")));
        }
        if i > 0 && k <= sizes[i - 1] {
            return Err(Error::invalid("kernel sizes must be ascending"));
        }
    }
    Ok(())
}

/// Normalized discrete Gaussian with sigma = size / 6.
pub fn gaussian_kernel(size: usize) -> Vec<f64> {
    let half = (size / 2) as i64;
    let sigma = size as f64 / 6.0;
    let mut k: Vec<f64> = (-half..=half).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable blur with replicate padding.
pub fn gaussian_blur(g: &Grid, size: usize) -> Grid {
    let k = gaussian_kernel(size);
    let half = (size / 2) as isize;
    let (h, w) = (g.height, g.width);
    let mut tmp = Grid::filled(h, w, 0.0);
    for r in 0..h {
        let row = &g.data[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let cc = (c as isize + t as isize - half).clamp(0, w as isize - 1) as usize;
                acc += kv * row[cc];
            }
            tmp.data[r * w + c] = acc;
        }
    }
    let mut out = Grid::filled(h, w, 0.0);
    for (t, kv) in k.iter().enumerate() {
        for r in 0..h {
            let rr = (r as isize + t as isize - half).clamp(0, h as isize - 1) as usize;
            let src = &tmp.data[rr * w..(rr + 1) * w];
            let dst = &mut out.data[r * w..(r + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Mean of Gaussian blurs at each kernel size.
pub fn smooth_pyramid(ind: &IndentationMap, kernel_sizes: &[usize]) -> Result<IndentationMap> {
    check_kernels(kernel_sizes)?;
    let g = &ind.values;
    let mut acc = Grid::filled(g.height, g.width, 0.0);
    if g.data.iter().all(|&v| v == 0.0) {
        return Ok(IndentationMap { values: acc, pixel_pitch: ind.pixel_pitch });
    }
    for &k in kernel_sizes {
        let b = gaussian_blur(g, k);
        for (a, v) in acc.data.iter_mut().zip(&b.data) {
            *a += v;
        }
    }
    let n = kernel_sizes.len() as f64;
    acc.data.iter_mut().for_each(|v| *v /= n);
    Ok(IndentationMap { values: acc, pixel_pitch: ind.pixel_pitch })
}

/// Raw map: 8-byte magic, u32 height, u32 width, then little-endian f32 values row-major.
pub fn encode_map(g: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * g.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    for v in &g.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8], source: &str) -> Result<Grid> {
    let err = |offset: usize, msg: &str| Error::Format { path: source.to_string(), line: offset, msg: format!("byte offset {offset}: {msg}") };
    if bytes.len() < 16 {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(err(0, "bad magic"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * h * w;
    if bytes.len() != expected {
        return Err(err(bytes.len().min(expected), &format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len())));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Grid::from_vec(h, w, data)
}

pub fn save_map(g: &Grid, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), encode_map(g))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    decode_map(&std::fs::read(path)?, &path.display().to_string())
}

/// 16-bit grayscale PNG with `value / scale` mapped onto the full range.
pub fn save_map_png16(g: &Grid, scale: f64, path: impl AsRef<Path>) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(g.width as u32, g.height as u32, |x, y| {
        let v = (g.get(y as usize, x as usize) / scale).clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_atomic(path.as_ref(), bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for size in [3, 5, 31] {
            let k = gaussian_kernel(size);
            assert_eq!(k.len(), size);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert_eq!(k[0], k[size - 1]);
        }
    }

    #[test]
    fn pixel_range_covers_centers() {
        assert_eq!(pixel_range(0.0, 1.0, 0.0, 0.25, 10), Some((0, 3)));
        assert_eq!(pixel_range(0.2, 0.3, 0.0, 0.25, 10), None);
        assert_eq!(pixel_range(-5.0, 50.0, 0.0, 0.25, 10), Some((0, 9)));
    }
}
