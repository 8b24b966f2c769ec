//! Marker motion field from exponential displacement distributions for
//! normal, shear and twist loads.
//!
//! Positions are camera-frame (x, y) in meters, the same plane as the height map.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::write_atomic;
use crate::geometry::Pose;
use crate::optical::RgbImage;
use crate::tactile_render::{IndentationMap, SensorConfig};

pub type Vec2 = Vector2<f64>;

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 5e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerParams {
    pub k_n: f64,
    pub lambda_n: f64,
    pub lambda_s: f64,
    pub k_t: f64,
    pub lambda_t: f64,
    /// Indentation (m) above which a pixel counts as contact.
    pub contact_threshold: f64,
}

impl Default for MarkerParams {
    fn default() -> Self {
        MarkerParams {
            k_n: 0.3,
            lambda_n: 0.004,
            lambda_s: 0.005,
            k_t: 0.5,
            lambda_t: 0.004,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
        }
    }
}

impl MarkerParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.k_n, self.lambda_n, self.lambda_s, self.k_t, self.lambda_t, self.contact_threshold];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("marker parameters must be finite"));
        }
        if !(self.lambda_n > 0.0 && self.lambda_s > 0.0 && self.lambda_t > 0.0 && self.contact_threshold > 0.0) {
            return Err(Error::invalid("marker length scales and contact threshold must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactInfo {
    pub center: Vec2,
    pub max_indentation: f64,
    pub in_contact: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadState {
    pub center: Vec2,
    pub max_indentation: f64,
    pub shear: Vec2,
    pub twist: f64,
    pub in_contact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerField {
    rows: usize,
    cols: usize,
    rest: Vec<Vec2>,
    displacements: Vec<Vec2>,
}

impl MarkerField {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rest_positions(&self) -> &[Vec2] {
        &self.rest
    }

    pub fn displacements(&self) -> &[Vec2] {
        &self.displacements
    }

    pub fn rest(&self, row: usize, col: usize) -> Vec2 {
        self.rest[row * self.cols + col]
    }

    pub fn displacement(&self, row: usize, col: usize) -> Vec2 {
        self.displacements[row * self.cols + col]
    }

    /// Row-major `[rows][cols][2]` flattening.
    pub fn to_array(&self) -> Vec<f64> {
        self.displacements.iter().flat_map(|d| [d.x, d.y]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,rest_x,rest_y,u_x,u_y\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (p, u) = (self.rest(r, c), self.displacement(r, c));
                let _ = writeln!(s, "{r},{c},{:e},{:e},{:e},{:e}", p.x, p.y, u.x, u.y);
            }
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv())
    }
}

/// Regular grid with markers at cell centers of the sensing area.
pub fn marker_grid(cfg: &SensorConfig) -> Vec<Vec2> {
    let (rows, cols) = cfg.marker_grid;
    let (w, h) = cfg.sensing_area;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Vec2::new((c as f64 + 0.5) / cols as f64 * w - 0.5 * w, (r as f64 + 0.5) / rows as f64 * h - 0.5 * h));
        }
    }
    out
}

/// Indentation-weighted centroid of pixels above `threshold`.
pub fn contact_center(ind: &IndentationMap, threshold: f64) -> ContactInfo {
    let g = &ind.values;
    let (px, py) = ind.pixel_pitch;
    let (w_area, h_area) = (px * g.width() as f64, py * g.height() as f64);
    let mut total = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut max: f64 = 0.0;
    for r in 0..g.height() {
        for c in 0..g.width() {
            let v = g.get(r, c);
            max = max.max(v);
            if v > threshold {
                total += v;
                sx += v * ((c as f64 + 0.5) * px - 0.5 * w_area);
                sy += v * ((r as f64 + 0.5) * py - 0.5 * h_area);
            }
        }
    }
    if total == 0.0 {
        return ContactInfo { center: Vec2::zeros(), max_indentation: 0.0, in_contact: false };
    }
    ContactInfo { center: Vec2::new(sx / total, sy / total), max_indentation: max, in_contact: true }
}

/// Updates accumulated shear and twist.
///
/// `case_delta` is the motion of the case relative to the object during the
/// step, expressed in the camera frame. Shear accumulates its in-plane
/// translation; twist accumulates minus its rotation about the sensor normal
/// (the object turns the other way relative to the gel).
pub fn track_load(prev: &LoadState, case_delta: &Pose, contact: &ContactInfo) -> LoadState {
    if !contact.in_contact {
        return LoadState::default();
    }
    let (shear, twist) = if prev.in_contact {
        (prev.shear + Vec2::new(case_delta.translation.x, case_delta.translation.y), prev.twist - case_delta.yaw())
    } else {
        (Vec2::zeros(), 0.0)
    };
    LoadState { center: contact.center, max_indentation: contact.max_indentation, shear, twist, in_contact: true }
}

pub fn marker_displacements(load: &LoadState, rest: &[Vec2], rows: usize, cols: usize, params: &MarkerParams) -> Result<MarkerField> {
    params.validate()?;
    if rest.len() != rows * cols {
        return Err(Error::invalid(format!("{} rest positions for a {rows}x{cols} grid", rest.len())));
    }
    let finite = [load.center.x, load.center.y, load.max_indentation, load.shear.x, load.shear.y, load.twist];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite load"));
    }
    let displacements = if load.in_contact {
        rest.iter().map(|m| displacement(load, m, params)).collect()
    } else {
        vec![Vec2::zeros(); rest.len()]
    };
    Ok(MarkerField { rows, cols, rest: rest.to_vec(), displacements })
}

fn displacement(load: &LoadState, m: &Vec2, p: &MarkerParams) -> Vec2 {
    let r = m - load.center;
    let dist = r.norm();
    let normal = if dist > 0.0 {
        r * (p.k_n * load.max_indentation * (-dist / p.lambda_n).exp() / dist)
    } else {
        Vec2::zeros()
    };
    let shear = load.shear * (-(dist * dist) / (2.0 * p.lambda_s * p.lambda_s)).exp();
    let twist = Vec2::new(-r.y, r.x) * (load.twist * p.k_t * (-dist / p.lambda_t).exp());
    normal + shear + twist
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerStyle {
    pub radius_px: f64,
    pub color: [f64; 3],
    /// Arrow length per unit displacement, in multiples of the true pixel displacement; 0 disables arrows.
    pub arrow_scale: f64,
    pub arrow_color: [f64; 3],
}

impl Default for MarkerStyle {
    fn default() -> Self {
        MarkerStyle { radius_px: 6.0, color: [0.08, 0.08, 0.08], arrow_scale: 0.0, arrow_color: [1.0, 1.0, 0.0] }
    }
}

/// Pixel (col, row) coordinates of a camera-plane point.
pub fn to_pixel(p: &Vec2, cfg: &SensorConfig) -> (f64, f64) {
    let (px, py) = cfg.pixel_pitch();
    ((p.x + 0.5 * cfg.sensing_area.0) / px - 0.5, (p.y + 0.5 * cfg.sensing_area.1) / py - 0.5)
}

/// Draws markers at their displaced positions over `base` (or a white canvas).
pub fn render_markers(field: &MarkerField, cfg: &SensorConfig, base: Option<&RgbImage>, style: &MarkerStyle) -> RgbImage {
    let (h, w) = cfg.image_size;
    let mut img = base.cloned().unwrap_or_else(|| RgbImage::filled(h, w, [1.0; 3]));
    let (h, w) = (img.height(), img.width());
    for (rest, u) in field.rest.iter().zip(&field.displacements) {
        let (cx, cy) = to_pixel(&(rest + u), cfg);
        let rad = style.radius_px;
        let r0 = (cy - rad).floor().max(0.0) as usize;
        let r1 = ((cy + rad).ceil() as isize).min(h as isize - 1);
        let c0 = (cx - rad).floor().max(0.0) as usize;
        let c1 = ((cx + rad).ceil() as isize).min(w as isize - 1);
        for r in r0..=r1.max(0) as usize {
            for c in c0..=c1.max(0) as usize {
                if r < h && c < w && (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2) <= rad * rad {
                    img.set(r, c, style.color);
                }
            }
        }
        if style.arrow_scale > 0.0 {
            let (sx, sy) = to_pixel(rest, cfg);
            let (ex, ey) = (sx + (cx - sx) * style.arrow_scale, sy + (cy - sy) * style.arrow_scale);
            let steps = ((ex - sx).abs().max((ey - sy).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let (x, y) = ((sx + (ex - sx) * t).round(), (sy + (ey - sy) * t).round());
                if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                    img.set(y as usize, x as usize, style.arrow_color);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_term_vanishes_at_center() {
        let load = LoadState { max_indentation: 1e-3, in_contact: true, ..Default::default() };
        assert_eq!(displacement(&load, &Vec2::zeros(), &MarkerParams::default()), Vec2::zeros());
    }
}
