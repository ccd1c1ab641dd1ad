//! Image loading. Locators are file paths (relative to a base directory) or
//! procedural `synth:<seed>:<w>x<h>` images used by the synthetic corpus.

use std::path::Path;

use forge_core::vision::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ForgeError, Result};

/// Procedural images render with the long side capped at this many pixels;
/// the declared size is kept in the record.
pub const SYNTH_RENDER_CAP: u32 = 256;

pub fn synth_locator(seed: u64, w: u32, h: u32) -> String {
    format!("synth:{seed}:{w}x{h}")
}

pub fn parse_synth(locator: &str) -> Option<(u64, u32, u32)> {
    let rest = locator.strip_prefix("synth:")?;
    let (seed, dims) = rest.split_once(':')?;
    let (w, h) = dims.split_once('x')?;
    let (w, h) = (w.parse().ok()?, h.parse().ok()?);
    if w == 0 || h == 0 {
        return None;
    }
    Some((seed.parse().ok()?, w, h))
}

/// Smooth random pattern: a few low-frequency cosine waves plus a block.
/// The pattern is defined in normalized coordinates, so renders of the same
/// seed at different sizes look alike.
pub fn render_synth(seed: u64, w: u32, h: u32) -> Image {
    let scale = (f64::from(SYNTH_RENDER_CAP) / f64::from(w.max(h))).min(1.0);
    let rw = ((f64::from(w) * scale).round() as u32).max(1);
    let rh = ((f64::from(h) * scale).round() as u32).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let fx = rng.random_range(0.0..3.5);
            let fy = rng.random_range(0.0..3.5);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(15.0..45.0);
            (fx, fy, phase, [amp * rng.random_range(0.5..1.0), amp * rng.random_range(0.5..1.0), amp * rng.random_range(0.5..1.0)])
        })
        .collect();
    let (bx0, by0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
    let (bx1, by1) = (bx0 + rng.random_range(0.1..0.3), by0 + rng.random_range(0.1..0.3));
    let block: [f64; 3] = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
    // cos(a + b) split into per-column and per-row tables
    let cols: Vec<Vec<(f64, f64)>> = waves
        .iter()
        .map(|(fx, _, phase, _)| {
            (0..rw)
                .map(|x| {
                    let a = std::f64::consts::TAU * fx * (f64::from(x) + 0.5) / f64::from(rw) + phase;
                    (a.cos(), a.sin())
                })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<(f64, f64)>> = waves
        .iter()
        .map(|(_, fy, _, _)| {
            (0..rh)
                .map(|y| {
                    let b = std::f64::consts::TAU * fy * (f64::from(y) + 0.5) / f64::from(rh);
                    (b.cos(), b.sin())
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(rw as usize * rh as usize * 3);
    for y in 0..rh {
        let v = (f64::from(y) + 0.5) / f64::from(rh);
        for x in 0..rw {
            let u = (f64::from(x) + 0.5) / f64::from(rw);
            let mut px = [128.0f64; 3];
            for (w, (_, _, _, amps)) in waves.iter().enumerate() {
                let (ca, sa) = cols[w][x as usize];
                let (cb, sb) = rows[w][y as usize];
                let val = ca * cb - sa * sb;
                for c in 0..3 {
                    px[c] += amps[c] * val;
                }
            }
            let inside = (bx0..bx1).contains(&u) && (by0..by1).contains(&v);
            for c in 0..3 {
                let p = if inside { px[c] + block[c] } else { px[c] };
                data.push(p.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(rw, rh, 3, data).expect("buffer matches dimensions")
}

/// Declared size of a synthetic locator, or the header size of an image file.
pub fn probe_dims(locator: &str, base: &Path) -> Result<(u32, u32)> {
    if let Some((_, w, h)) = parse_synth(locator) {
        return Ok((w, h));
    }
    let path = base.join(locator);
    image::image_dimensions(&path).map_err(|e| ForgeError::Integrity {
        path,
        msg: e.to_string(),
    })
}

pub fn load_image(locator: &str, base: &Path) -> Result<Image> {
    if let Some((seed, w, h)) = parse_synth(locator) {
        return Ok(render_synth(seed, w, h));
    }
    if locator.starts_with("synth:") {
        return Err(ForgeError::Integrity {
            path: locator.into(),
            msg: "bad synthetic locator".into(),
        });
    }
    let path = base.join(locator);
    let img = image::open(&path).map_err(|e| ForgeError::Integrity {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w, h, 3, rgb.into_raw()).map_err(|e| ForgeError::Integrity { path, msg: e.to_string() })
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(ForgeError::io(parent))?;
    }
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        4 => image::ExtendedColorType::Rgba8,
        n => {
            return Err(ForgeError::Integrity {
                path: path.to_path_buf(),
                msg: format!("cannot save {n}-channel image"),
            })
        }
    };
    image::save_buffer(path, img.as_bytes(), img.width(), img.height(), color).map_err(|e| ForgeError::Integrity {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
