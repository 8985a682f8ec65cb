//! Software rasterizer: z-buffered depth and masks, silhouettes, and labeled
//! contour projection.
//!
//! Triangles are clipped against the near plane, rasterized at pixel centers
//! with a top-left fill rule, and depth is interpolated perspective-correctly
//! (linear in `1/z`). Depth values are camera-frame `z` in millimeters.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::imaging::{BinaryImage, DepthImage};
use crate::labels::{AnatomicalLabel, Channel};
use crate::mesh::TriMesh;
use crate::pose::RigidPose;

/// Geometry closer than this to the camera center is clipped.
pub const NEAR_PLANE_MM: f64 = 1.0;

/// A labeled vertex is visible when its depth is within this tolerance of the
/// z-buffer at its pixel.
pub const VISIBILITY_TOLERANCE_MM: f64 = 1.0;

/// Rendered (or annotated) channels for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImageSet {
    channels: [BinaryImage; 4],
    pub full_mask: BinaryImage,
    pub depth: DepthImage,
}

impl LabelImageSet {
    pub fn new(channels: [BinaryImage; 4], full_mask: BinaryImage, depth: DepthImage) -> Result<Self> {
        let (w, h) = (full_mask.width(), full_mask.height());
        let same = channels.iter().all(|c| c.width() == w && c.height() == h)
            && depth.width() == w
            && depth.height() == h;
        if !same {
            return Err(Error::InvalidConfig("label images must share dimensions".into()));
        }
        Ok(Self {
            channels,
            full_mask,
            depth,
        })
    }

    /// Contour channels only; mask and depth left empty.
    pub fn from_channels(channels: [BinaryImage; 4]) -> Result<Self> {
        let (w, h) = (channels[0].width(), channels[0].height());
        Self::new(channels, BinaryImage::new(w, h), DepthImage::new(w, h))
    }

    pub fn empty(width: usize, height: usize) -> Self {
        let blank = BinaryImage::new(width, height);
        Self {
            channels: [blank.clone(), blank.clone(), blank.clone(), blank.clone()],
            full_mask: blank,
            depth: DepthImage::new(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.full_mask.width()
    }

    pub fn height(&self) -> usize {
        self.full_mask.height()
    }

    pub fn channel(&self, c: Channel) -> &BinaryImage {
        &self.channels[c.index()]
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut BinaryImage {
        &mut self.channels[c.index()]
    }

    pub fn channels(&self) -> impl Iterator<Item = (Channel, &BinaryImage)> {
        Channel::ALL.into_iter().map(move |c| (c, &self.channels[c.index()]))
    }

    /// Number of non-empty contour channels.
    pub fn non_empty_channels(&self) -> usize {
        self.channels.iter().filter(|c| !c.is_empty()).count()
    }

    /// Checks the rendered-set invariants: silhouette pixels lie on the mask
    /// boundary and depth is positive only inside the mask.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let boundary = extract_silhouette(&self.full_mask);
        let sil = self.channel(Channel::Sil);
        for y in 0..self.height() {
            for x in 0..self.width() {
                if sil.get(x, y) && !boundary.get(x, y) {
                    return Err(format!("silhouette pixel ({x}, {y}) is not on the mask boundary"));
                }
                if self.depth.get(x, y) > 0.0 && !self.full_mask.get(x, y) {
                    return Err(format!("depth set outside the mask at ({x}, {y})"));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (c, img) in self.channels() {
            let name = format!("{}.png", c.name());
            img.save_png(dir.join(&name))?;
            files.insert(c.name().to_string(), name);
        }
        self.full_mask.save_png(dir.join("mask.png"))?;
        files.insert("mask".into(), "mask.png".into());
        self.depth.save_png16(dir.join("depth.png"))?;
        files.insert("depth".into(), "depth.png".into());
        Ok(files)
    }

    /// Loads channel PNGs saved by [`LabelImageSet::save`]. Missing mask or
    /// depth files load as empty images; missing channels as empty channels.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut loaded: Vec<Option<BinaryImage>> = Vec::new();
        for c in Channel::ALL {
            let p = dir.join(format!("{}.png", c.name()));
            loaded.push(if p.exists() { Some(BinaryImage::load_png(p)?) } else { None });
        }
        let mask_path = dir.join("mask.png");
        let mask = if mask_path.exists() { Some(BinaryImage::load_png(mask_path)?) } else { None };
        let (w, h) = loaded
            .iter()
            .flatten()
            .chain(mask.iter())
            .map(|i| (i.width(), i.height()))
            .next()
            .ok_or_else(|| Error::InvalidConfig(format!("no channel images in {}", dir.display())))?;
        let blank = || BinaryImage::new(w, h);
        let mut it = loaded.into_iter().map(|o| o.unwrap_or_else(blank));
        let channels = [
            it.next().expect("4 channels"),
            it.next().expect("4 channels"),
            it.next().expect("4 channels"),
            it.next().expect("4 channels"),
        ];
        let depth_path = dir.join("depth.png");
        let depth = if depth_path.exists() {
            DepthImage::load_png16(depth_path)?
        } else {
            DepthImage::new(w, h)
        };
        Self::new(channels, mask.unwrap_or_else(blank), depth)
    }
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    z: f64,
}

/// Rasterizes `mesh` placed by `pose` into a z-buffer. Returns `(mask, depth)`.
pub fn render_depth_mask(mesh: &TriMesh, pose: &RigidPose, cam: &CameraIntrinsics) -> (BinaryImage, DepthImage) {
    let tf = pose.transformer();
    let cam_pts: Vec<Point3<f64>> = mesh.vertices().iter().map(&tf).collect();
    render_camera_frame(&cam_pts, mesh.faces(), cam)
}

/// Same as [`render_depth_mask`] for vertices already in the camera frame.
pub fn render_camera_frame(
    cam_pts: &[Point3<f64>],
    faces: &[[usize; 3]],
    cam: &CameraIntrinsics,
) -> (BinaryImage, DepthImage) {
    let mut depth = DepthImage::new(cam.width, cam.height);
    if !cam_pts.iter().any(|p| p.z > NEAR_PLANE_MM) {
        log::debug!("mesh is entirely behind the near plane");
        return (BinaryImage::new(cam.width, cam.height), depth);
    }
    let mut poly: Vec<Point3<f64>> = Vec::with_capacity(4);
    for f in faces {
        let tri = [cam_pts[f[0]], cam_pts[f[1]], cam_pts[f[2]]];
        clip_near(&tri, &mut poly);
        if poly.len() < 3 {
            continue;
        }
        let sv: Vec<ScreenVertex> = poly
            .iter()
            .map(|p| {
                let [x, y] = cam.project(p);
                ScreenVertex { x, y, z: p.z }
            })
            .collect();
        for k in 1..sv.len() - 1 {
            raster_triangle(&sv[0], &sv[k], &sv[k + 1], &mut depth);
        }
    }
    (depth.valid_mask(), depth)
}

/// Sutherland–Hodgman clip of a triangle against `z >= NEAR_PLANE_MM`.
fn clip_near(tri: &[Point3<f64>; 3], out: &mut Vec<Point3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE_MM;
        let b_in = b.z >= NEAR_PLANE_MM;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE_MM - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE_MM;
            out.push(p);
        }
    }
}

#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn raster_triangle(v0: &ScreenVertex, v1: &ScreenVertex, v2: &ScreenVertex, depth: &mut DepthImage) {
    let mut area = edge(v0, v1, v2.x, v2.y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let (v0, v1, v2) = if area < 0.0 {
        area = -area;
        (v0, v2, v1)
    } else {
        (v0, v1, v2)
    };
    let (w, h) = (depth.width() as f64, depth.height() as f64);
    let min_x = v0.x.min(v1.x).min(v2.x).floor().max(0.0);
    let max_x = v0.x.max(v1.x).max(v2.x).ceil().min(w);
    let min_y = v0.y.min(v1.y).min(v2.y).floor().max(0.0);
    let max_y = v0.y.max(v1.y).max(v2.y).ceil().min(h);
    if min_x >= max_x || min_y >= max_y {
        return;
    }
    let tl = [is_top_left(v1, v2), is_top_left(v2, v0), is_top_left(v0, v1)];
    let inv_z = [1.0 / v0.z, 1.0 / v1.z, 1.0 / v2.z];
    for py in min_y as usize..max_y as usize {
        let cy = py as f64 + 0.5;
        for px in min_x as usize..max_x as usize {
            let cx = px as f64 + 0.5;
            let e = [edge(v1, v2, cx, cy), edge(v2, v0, cx, cy), edge(v0, v1, cx, cy)];
            let inside = e.iter().zip(&tl).all(|(&ei, &t)| ei > 0.0 || (ei == 0.0 && t));
            if !inside {
                continue;
            }
            let recip = (e[0] * inv_z[0] + e[1] * inv_z[1] + e[2] * inv_z[2]) / area;
            let z = 1.0 / recip;
            let cur = depth.get(px, py);
            if cur == 0.0 || z < cur {
                depth.set(px, py, z);
            }
        }
    }
}

/// Mask pixels with at least one unset 4-neighbor (image border counts as unset).
pub fn extract_silhouette(mask: &BinaryImage) -> BinaryImage {
    let mut out = BinaryImage::new(mask.width(), mask.height());
    for y in 0..mask.height() as i64 {
        for x in 0..mask.width() as i64 {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            let edge = !mask.get_signed(x - 1, y)
                || !mask.get_signed(x + 1, y)
                || !mask.get_signed(x, y - 1)
                || !mask.get_signed(x, y + 1);
            if edge {
                out.set(x as usize, y as usize, true);
            }
        }
    }
    out
}

/// Visibility of each vertex of a label polyline against a z-buffer, with
/// its pixel when visible.
pub fn polyline_visibility(
    mesh: &TriMesh,
    polyline: &[usize],
    pose: &RigidPose,
    cam: &CameraIntrinsics,
    depth: &DepthImage,
) -> Vec<Option<(usize, usize)>> {
    let tf = pose.transformer();
    polyline
        .iter()
        .map(|&i| {
            let p = tf(&mesh.vertices()[i]);
            if p.z < NEAR_PLANE_MM {
                return None;
            }
            let (px, py) = cam.pixel(cam.project(&p))?;
            let zb = depth.get(px, py);
            (zb > 0.0 && p.z <= zb + VISIBILITY_TOLERANCE_MM).then_some((px, py))
        })
        .collect()
}

/// Projects each label polyline; consecutive visible vertices are joined by
/// 1-px segments. Missing labels yield empty channels.
pub fn render_labeled_contours(
    mesh: &TriMesh,
    pose: &RigidPose,
    cam: &CameraIntrinsics,
    depth: &DepthImage,
) -> BTreeMap<AnatomicalLabel, BinaryImage> {
    AnatomicalLabel::ALL
        .into_iter()
        .map(|label| {
            let mut img = BinaryImage::new(cam.width, cam.height);
            if let Some(line) = mesh.label(label) {
                let vis = polyline_visibility(mesh, line, pose, cam, depth);
                draw_visible_polyline(&vis, &mut img);
            }
            (label, img)
        })
        .collect()
}

/// Draws visible vertices and the segments between consecutive visible ones.
pub fn draw_visible_polyline(vis: &[Option<(usize, usize)>], img: &mut BinaryImage) {
    for (k, v) in vis.iter().enumerate() {
        if let Some((x, y)) = *v {
            img.set(x, y, true);
            if let Some(Some(prev)) = k.checked_sub(1).map(|j| vis[j]) {
                draw_line(prev, (x, y), img);
            }
        }
    }
}

/// Bresenham segment between two pixels, endpoints inclusive.
pub fn draw_line(a: (usize, usize), b: (usize, usize), img: &mut BinaryImage) {
    let (mut x0, mut y0) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        img.set_signed(x0, y0, true);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Depth, mask, silhouette and labeled contours for one pose.
pub fn render_full(mesh: &TriMesh, pose: &RigidPose, cam: &CameraIntrinsics) -> LabelImageSet {
    let (mask, depth) = render_depth_mask(mesh, pose, cam);
    let sil = extract_silhouette(&mask);
    let mut labels = render_labeled_contours(mesh, pose, cam, &depth);
    let mut take = |l: AnatomicalLabel| labels.remove(&l).expect("all labels rendered");
    let channels = [
        take(AnatomicalLabel::RidgeR),
        take(AnatomicalLabel::RidgeL),
        take(AnatomicalLabel::Lig),
        sil,
    ];
    LabelImageSet {
        channels,
        full_mask: mask,
        depth,
    }
}
