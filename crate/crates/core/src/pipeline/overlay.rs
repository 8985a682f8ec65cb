use std::path::Path;

use image::{Rgb, RgbImage};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::labels::Channel;
use crate::mesh::TriMesh;
use crate::pose::RigidPose;
use crate::render::render_full;

pub fn channel_color(c: Channel) -> Rgb<u8> {
    match c {
        Channel::RidgeR => Rgb([230, 40, 40]),
        Channel::RidgeL => Rgb([40, 90, 240]),
        Channel::Lig => Rgb([240, 210, 30]),
        Channel::Sil => Rgb([40, 220, 80]),
    }
}

/// Rendered contours drawn over `background` (or black). The background is
/// converted to RGB and must match the camera size.
pub fn render_overlay(
    mesh: &TriMesh,
    pose: &RigidPose,
    cam: &CameraIntrinsics,
    background: Option<&Path>,
) -> Result<RgbImage> {
    let mut img = match background {
        Some(p) => {
            let bg = image::open(p)?.to_rgb8();
            if bg.width() as usize != cam.width || bg.height() as usize != cam.height {
                return Err(Error::FrameMismatch(format!(
                    "background {} is {}x{}, camera is {}x{}",
                    p.display(),
                    bg.width(),
                    bg.height(),
                    cam.width,
                    cam.height
                )));
            }
            bg
        }
        None => RgbImage::new(cam.width as u32, cam.height as u32),
    };
    let set = render_full(mesh, pose, cam);
    for (c, ch) in set.channels() {
        let color = channel_color(c);
        for [x, y] in ch.points() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
    Ok(img)
}

pub fn save_overlay(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save(path.as_ref())?;
    Ok(())
}
