//! PNG output and environment map input.
//!
//! Cubemap faces follow the core convention (+X, −X, +Y, −Y, +Z, −Z, texel
//! `(row, col)` at face coordinates `u = col`, `v = row`). A single image is
//! read as a horizontal cross, 4 faces wide and 3 high:
//!
//! ```text
//!        [+Y]
//!   [−X] [+Z] [+X] [−Z]
//!        [−Y]
//! ```
//!
//! Face pixels are copied without rotation. PNG values are decoded from sRGB
//! to linear; Radiance `.hdr` files are taken as linear radiance.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb32FImage, RgbImage};
use lucent_core::lighting::Cubemap;
use lucent_core::math::Rgb;
use lucent_core::runtime::Image;

use crate::error::{LucentError, Result};

/// Face index to (column, row) in the cross layout, in face-side units.
const CROSS: [(u32, u32); 6] = [(2, 1), (0, 1), (1, 0), (1, 2), (1, 1), (3, 1)];

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.rgb.clone())
        .ok_or_else(|| LucentError::Image("pixel buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| LucentError::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|e| LucentError::io(path, e))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = open(path)?.to_rgb8();
    Ok(Image { width: img.width() as usize, height: img.height() as usize, rgb: img.into_raw() })
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(LucentError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    image::open(path).map_err(|e| LucentError::Image(format!("{}: {e}", path.display())))
}

fn srgb_to_linear(v: f32) -> f64 {
    let v = v as f64;
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear radiance of an image file.
fn linear_pixels(path: &Path) -> Result<Rgb32FImage> {
    let hdr = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
    let mut img = open(path)?.to_rgb32f();
    if !hdr {
        for p in img.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = srgb_to_linear(*c) as f32;
            }
        }
    }
    Ok(img)
}

/// Reads a cross-layout cubemap from one file.
pub fn load_cubemap_cross(path: &Path) -> Result<Cubemap> {
    let img = linear_pixels(path)?;
    let (w, h) = img.dimensions();
    if w % 4 != 0 || h % 3 != 0 || w / 4 != h / 3 {
        return Err(LucentError::Image(format!(
            "{}: {w}x{h} is not a 4:3 cross of square faces",
            path.display()
        )));
    }
    let side = w / 4;
    let mut texels = Vec::with_capacity(6 * (side * side) as usize);
    for &(cx, cy) in &CROSS {
        for row in 0..side {
            for col in 0..side {
                let p = img.get_pixel(cx * side + col, cy * side + row).0;
                texels.push(p.map(f64::from));
            }
        }
    }
    Ok(Cubemap::new(side as usize, texels)?)
}

/// Reads six face images in +X, −X, +Y, −Y, +Z, −Z order.
pub fn load_cubemap_faces(paths: &[impl AsRef<Path>]) -> Result<Cubemap> {
    if paths.len() != 6 {
        return Err(LucentError::Config(format!("cubemap needs 6 face files, got {}", paths.len())));
    }
    let mut side = None;
    let mut texels: Vec<Rgb> = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let img = linear_pixels(p)?;
        let (w, h) = img.dimensions();
        if w != h || side.is_some_and(|s| s != w) {
            return Err(LucentError::Image(format!("{}: faces must be square and equal in size", p.display())));
        }
        side = Some(w);
        texels.extend(img.pixels().map(|px| px.0.map(f64::from)));
    }
    Ok(Cubemap::new(side.unwrap_or(0) as usize, texels)?)
}

/// Writes a cubemap as a linear Radiance `.hdr` cross (black outside the faces).
pub fn save_cubemap_cross_hdr(map: &Cubemap, path: &Path) -> Result<()> {
    let side = map.side as u32;
    let mut img = Rgb32FImage::new(4 * side, 3 * side);
    for (f, &(cx, cy)) in CROSS.iter().enumerate() {
        for row in 0..side {
            for col in 0..side {
                let t = map.texels[f * (side * side) as usize + (row * side + col) as usize];
                img.put_pixel(cx * side + col, cy * side + row, image::Rgb(t.map(|v| v as f32)));
            }
        }
    }
    DynamicImage::ImageRgb32F(img).save_with_format(path, ImageFormat::Hdr).map_err(|e| LucentError::Image(e.to_string()))
}
