//! Image geometry and I/O helpers shared by the data pipeline and guidance.
//!
//! Pixel images here are [H, W, C] f32 in [0, 1]; network tensors are NCHW
//! in [-1, 1]. Bilinear resampling uses half-pixel-center coordinates and is
//! an exact identity when input and output sizes match.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, Array4};
use std::path::Path;

/// Bilinear sample positions for one axis.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f32 / n_out as f32;
    (0..n_out)
        .map(|i| {
            let src = (i as f32 + 0.5) * scale - 0.5;
            let src = src.clamp(0.0, (n_in - 1) as f32);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f32)
        })
        .collect()
}

/// Bilinear resize of an [H, W, C] image.
pub fn resize_bilinear(img: &Array3<f32>, h_out: usize, w_out: usize) -> Array3<f32> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if h == h_out && w == w_out {
        return img.clone();
    }
    let ys = axis_weights(h, h_out);
    let xs = axis_weights(w, w_out);
    let mut out = Array3::<f32>::zeros((h_out, w_out, c));
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let v00 = img[[y0, x0, ch]];
                let v01 = img[[y0, x1, ch]];
                let v10 = img[[y1, x0, ch]];
                let v11 = img[[y1, x1, ch]];
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out[[oy, ox, ch]] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Bilinear resize of a single-channel [H, W] map.
pub fn resize_bilinear_2d(img: &Array2<f32>, h_out: usize, w_out: usize) -> Array2<f32> {
    let expanded = img
        .clone()
        .insert_axis(ndarray::Axis(2))
        .into_dimensionality::<ndarray::Ix3>()
        .unwrap();
    let resized = resize_bilinear(&expanded, h_out, w_out);
    resized.index_axis(ndarray::Axis(2), 0).to_owned()
}

/// Centered square crop of an [H, W, C] image.
pub fn center_crop_square(img: &Array3<f32>) -> Array3<f32> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let side = h.min(w);
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    img.slice(ndarray::s![top..top + side, left..left + side, ..])
        .to_owned()
}

/// [H, W, C] in [0, 1] -> CHW in [-1, 1].
pub fn hwc01_to_chw_pm1(img: &Array3<f32>) -> Array3<f32> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Array3::<f32>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[ch, y, x]] = img[[y, x, ch]] * 2.0 - 1.0;
            }
        }
    }
    out
}

/// CHW in [-1, 1] -> [H, W, C] in [0, 1] (clamped).
pub fn chw_pm1_to_hwc01(img: &ndarray::ArrayView3<f32>) -> Array3<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[y, x, ch]] = ((img[[ch, y, x]] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn load_image_rgb01(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[[y as usize, x as usize, ch]] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok(out)
}

pub fn save_image_rgb01(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if c != 3 {
        return Err(Error::Shape(format!("save_image_rgb01 expects 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (img[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_mask01(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::<f32>::zeros((h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = px.0[0] as f32 / 255.0;
    }
    Ok(out)
}

pub fn save_mask01(path: &Path, mask: &Array2<f32>) -> Result<()> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Luma([(mask[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8]),
            );
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Stack CHW [-1,1] images into an NCHW batch array.
pub fn stack_chw(images: &[Array3<f32>]) -> Result<Array4<f32>> {
    if images.is_empty() {
        return Err(Error::Data("no images to stack".into()));
    }
    let (c, h, w) = (
        images[0].shape()[0],
        images[0].shape()[1],
        images[0].shape()[2],
    );
    let mut out = Array4::<f32>::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.shape() != images[0].shape() {
            return Err(Error::Shape("inconsistent image shapes in batch".into()));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(img);
    }
    Ok(out)
}
