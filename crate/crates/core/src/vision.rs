//! Pixel-side preprocessing: adaptive tiling, visual-token accounting,
//! space-to-depth folding and frequency-domain low-pass filtering.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Side of one square tile, in pixels.
pub const TILE_PX: u32 = 448;
/// Upper bound on local tiles per image.
pub const MAX_TILES: u32 = 12;
/// Visual tokens contributed by one 448x448 view after 2x2 unshuffle.
pub const TOKENS_PER_TILE: u32 = 256;
/// Largest possible per-image token count: 12 tiles plus the thumbnail.
pub const MAX_TOKENS: u32 = TOKENS_PER_TILE * (MAX_TILES + 1);

pub const MIN_LOWPASS_FRACTION: f64 = 0.015;
pub const MAX_LOWPASS_FRACTION: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisionError {
    #[error("feature grid side {0} is odd")]
    OddGridSide(usize),
    #[error("low-pass removal fraction {0} outside [0.015, 0.07]")]
    FractionOutOfRange(f64),
    #[error("image buffer of {got} bytes does not match {width}x{height}x{channels}")]
    BadBuffer {
        width: u32,
        height: u32,
        channels: u8,
        got: usize,
    },
}

/// 8-bit interleaved image with 1 to 4 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, VisionError> {
        if width == 0 || height == 0 || !(1..=4).contains(&channels) || data.len() != width as usize * height as usize * channels as usize {
            return Err(VisionError::BadBuffer {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * pixel.len());
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(pixel);
        }
        Image {
            width,
            height,
            channels: pixel.len() as u8,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, channels: u8, mut f: impl FnMut(u32, u32, u8) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize]
    }

    pub fn plane(&self, c: u8) -> Plane {
        let data = self.data.iter().skip(c as usize).step_by(self.channels as usize).map(|&v| f64::from(v)).collect();
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Luma plane (BT.601 weights); single-channel images pass through.
    pub fn luma(&self) -> Plane {
        if self.channels < 3 {
            return self.plane(0);
        }
        let ch = self.channels as usize;
        let data = self
            .data
            .chunks_exact(ch)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Reassembles an image from per-channel planes, rounding and clamping.
    pub fn from_planes(planes: &[Plane]) -> Self {
        let (w, h) = (planes[0].width, planes[0].height);
        let mut data = Vec::with_capacity(w as usize * h as usize * planes.len());
        for i in 0..w as usize * h as usize {
            for p in planes {
                data.push(to_u8(p.data[i]));
            }
        }
        Image {
            width: w,
            height: h,
            channels: planes.len() as u8,
            data,
        }
    }

    /// Copies the `w`x`h` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Image {
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * ch);
        for y in y0..y0 + h {
            let start = (y as usize * self.width as usize + x0 as usize) * ch;
            data.extend_from_slice(&self.data[start..start + w as usize * ch]);
        }
        Image {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// Single-channel real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Plane { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Source coordinate taps for one output axis under half-pixel-centre
/// bilinear sampling: `(lo, hi, weight_of_hi)`.
fn bilinear_taps(src: u32, dst: u32) -> Vec<(u32, u32, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|i| {
            let s = ((f64::from(i) + 0.5) * scale - 0.5).clamp(0.0, f64::from(src - 1));
            let lo = libm::floor(s) as u32;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - f64::from(lo))
        })
        .collect()
}

/// Bilinear resample of a real plane, without rounding.
pub fn resize_plane(p: &Plane, width: u32, height: u32) -> Plane {
    let xs = bilinear_taps(p.width, width);
    let ys = bilinear_taps(p.height, height);
    let mut data = Vec::with_capacity(width as usize * height as usize);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = p.at(x0, y0) * (1.0 - fx) + p.at(x1, y0) * fx;
            let bot = p.at(x0, y1) * (1.0 - fx) + p.at(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Plane { width, height, data }
}

/// Bilinear resample with half-pixel centres, rounded to 8 bits.
pub fn resize_bilinear(img: &Image, width: u32, height: u32) -> Image {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let xs = bilinear_taps(img.width, width);
    let ys = bilinear_taps(img.height, height);
    let ch = img.channels;
    let mut data = Vec::with_capacity(width as usize * height as usize * ch as usize);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let g = |x, y| f64::from(img.get(x, y, c));
                let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
                let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
                data.push(to_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Image {
        width,
        height,
        channels: ch,
        data,
    }
}

/// Tiling decision and visual-token budget for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub tile_px: u32,
    pub include_thumbnail: bool,
    pub n_tiles: u32,
    pub token_count: u32,
}

impl TileLayout {
    pub fn for_grid(cols: u32, rows: u32) -> Self {
        let n_tiles = cols * rows;
        let include_thumbnail = n_tiles > 1;
        TileLayout {
            grid_cols: cols,
            grid_rows: rows,
            tile_px: TILE_PX,
            include_thumbnail,
            n_tiles,
            token_count: TOKENS_PER_TILE * (n_tiles + u32::from(include_thumbnail)),
        }
    }
}

/// Every grid with at most [`MAX_TILES`] cells, ordered by cell count then
/// column count.
pub fn candidate_grids() -> Vec<(u32, u32)> {
    let mut grids: Vec<(u32, u32)> = (1..=MAX_TILES)
        .flat_map(|c| (1..=MAX_TILES / c).map(move |r| (c, r)))
        .collect();
    grids.sort_by_key(|&(c, r)| (c * r, c));
    grids
}

/// Compares `|log(c1/r1) - log(w/h)|` against `|log(c2/r2) - log(w/h)|`
/// exactly, in integers.
fn cmp_log_distance(a: (u32, u32), b: (u32, u32), w: u32, h: u32) -> core::cmp::Ordering {
    // distance = log(max(q, 1/q)) with q = c*h / (r*w); compare max/min ratios
    let ratio = |(c, r): (u32, u32)| {
        let num = u128::from(c) * u128::from(h);
        let den = u128::from(r) * u128::from(w);
        if num >= den {
            (num, den)
        } else {
            (den, num)
        }
    };
    let (an, ad) = ratio(a);
    let (bn, bd) = ratio(b);
    (an * bd).cmp(&(bn * ad))
}

/// Chooses the tiling grid whose aspect ratio is closest to the image's in
/// log space.
///
/// Among equally close grids (same aspect ratio at different scales) the
/// largest grid whose cells the image can half-fill at native resolution is
/// taken, i.e. the largest `c*r` with `2 * w * h > 448^2 * c * r`; if none
/// qualifies, the smallest. Remaining ties prefer more columns.
pub fn select_grid(width: u32, height: u32) -> TileLayout {
    let (w, h) = (width.max(1), height.max(1));
    let grids = candidate_grids();
    let best = grids
        .iter()
        .copied()
        .min_by(|&a, &b| cmp_log_distance(a, b, w, h))
        .expect("grid list is never empty");
    let tied: Vec<(u32, u32)> = grids
        .into_iter()
        .filter(|&g| cmp_log_distance(g, best, w, h).is_eq())
        .collect();
    let area = 2 * u64::from(w) * u64::from(h);
    let fits = |&(c, r): &(u32, u32)| area > u64::from(TILE_PX * TILE_PX) * u64::from(c * r);
    let (c, r) = tied
        .iter()
        .copied()
        .filter(fits)
        .max_by_key(|&(c, r)| (c * r, c))
        .unwrap_or_else(|| tied.iter().copied().min_by_key(|&(c, r)| (c * r, core::cmp::Reverse(c))).unwrap());
    TileLayout::for_grid(c, r)
}

/// Resizes `img` onto the layout's grid and cuts it into 448x448 tiles in
/// row-major order, followed by the whole-image thumbnail when the layout has
/// one.
pub fn tile_image(img: &Image, layout: &TileLayout) -> Vec<Image> {
    let t = layout.tile_px;
    let resized = resize_bilinear(img, t * layout.grid_cols, t * layout.grid_rows);
    let mut tiles = Vec::with_capacity(layout.n_tiles as usize + 1);
    for r in 0..layout.grid_rows {
        for c in 0..layout.grid_cols {
            tiles.push(resized.crop(c * t, r * t, t, t));
        }
    }
    if layout.include_thumbnail {
        tiles.push(resize_bilinear(img, t, t));
    }
    tiles
}

/// Row-major `height x width x channels` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        FeatureGrid {
            height,
            width,
            channels,
            data,
        }
    }

    /// Number of token positions.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Folds each 2x2 spatial block into the channel axis: `(H, W, C)` becomes
/// `(H/2, W/2, 4C)`, channel index `(2*dy + dx) * C + c`.
pub fn pixel_unshuffle(grid: &FeatureGrid) -> Result<FeatureGrid, VisionError> {
    if grid.height % 2 == 1 {
        return Err(VisionError::OddGridSide(grid.height));
    }
    if grid.width % 2 == 1 {
        return Err(VisionError::OddGridSide(grid.width));
    }
    let (h, w, c) = (grid.height / 2, grid.width / 2, grid.channels);
    let mut data = Vec::with_capacity(grid.data.len());
    for y in 0..h {
        for x in 0..w {
            for dy in 0..2 {
                for dx in 0..2 {
                    data.extend_from_slice(grid.at(2 * y + dy, 2 * x + dx));
                }
            }
        }
    }
    Ok(FeatureGrid::new(h, w, 4 * c, data))
}

/// Inverse of [`pixel_unshuffle`]. Channel count must be a multiple of 4.
pub fn pixel_shuffle(grid: &FeatureGrid) -> FeatureGrid {
    assert_eq!(grid.channels % 4, 0);
    let (h, w, c) = (grid.height * 2, grid.width * 2, grid.channels / 4);
    let mut data = vec![0.0f32; grid.data.len()];
    for y in 0..grid.height {
        for x in 0..grid.width {
            let src = grid.at(y, x);
            for k in 0..4 {
                let (dy, dx) = (k / 2, k % 2);
                let dst = ((2 * y + dy) * w + 2 * x + dx) * c;
                data[dst..dst + c].copy_from_slice(&src[k * c..(k + 1) * c]);
            }
        }
    }
    FeatureGrid::new(h, w, c, data)
}

/// Orthonormal DCT-II basis: row `k` holds `s_k cos(pi (2n+1) k / 2N)`.
pub(crate) fn dct_basis(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let s0 = libm::sqrt(1.0 / n as f64);
    let s = libm::sqrt(2.0 / n as f64);
    for k in 0..n {
        let scale = if k == 0 { s0 } else { s };
        for i in 0..n {
            m[k * n + i] = scale * libm::cos(core::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64);
        }
    }
    m
}

/// Applies `basis` (or its transpose) along both axes of a `w x h` raster.
fn transform_2d(data: &[f64], w: usize, h: usize, bw: &[f64], bh: &[f64], inverse: bool) -> Vec<f64> {
    // rows
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for k in 0..w {
            let mut acc = 0.0;
            for (i, &v) in row.iter().enumerate() {
                acc += v * if inverse { bw[i * w + k] } else { bw[k * w + i] };
            }
            tmp[y * w + k] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        for k in 0..h {
            let mut acc = 0.0;
            for (i, &v) in col.iter().enumerate() {
                acc += v * if inverse { bh[i * h + k] } else { bh[k * h + i] };
            }
            out[k * w + x] = acc;
        }
    }
    out
}

/// Forward orthonormal 2-D DCT-II. Output is indexed `[v * width + u]`.
pub fn dct2(p: &Plane) -> Plane {
    let (w, h) = (p.width as usize, p.height as usize);
    let bw = dct_basis(w);
    let bh = if h == w { bw.clone() } else { dct_basis(h) };
    Plane::new(p.width, p.height, transform_2d(&p.data, w, h, &bw, &bh, false))
}

/// Inverse of [`dct2`].
pub fn idct2(p: &Plane) -> Plane {
    let (w, h) = (p.width as usize, p.height as usize);
    let bw = dct_basis(w);
    let bh = if h == w { bw.clone() } else { dct_basis(h) };
    Plane::new(p.width, p.height, transform_2d(&p.data, w, h, &bw, &bh, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowPassChannels {
    /// Every channel independently.
    #[default]
    All,
    /// Only the BT.601 luma of RGB(A) input; chroma is untouched.
    Luma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowPassConfig {
    pub removal_fraction: f64,
    #[serde(default)]
    pub channels: LowPassChannels,
}

impl LowPassConfig {
    pub fn new(removal_fraction: f64) -> Result<Self, VisionError> {
        let cfg = LowPassConfig {
            removal_fraction,
            channels: LowPassChannels::All,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        if (MIN_LOWPASS_FRACTION..=MAX_LOWPASS_FRACTION).contains(&self.removal_fraction) {
            Ok(())
        } else {
            Err(VisionError::FractionOutOfRange(self.removal_fraction))
        }
    }
}

/// Coefficient indices (`v * w + u`) removed for a `w x h` transform at
/// `fraction`: the `ceil(fraction * w * h)` highest radial frequencies, where
/// radial frequency is `(u/w)^2 + (v/h)^2` and ties go to the larger `v`, then
/// the larger `u`.
pub fn high_band(w: u32, h: u32, fraction: f64) -> Vec<usize> {
    let total = w as usize * h as usize;
    let count = (libm::ceil(fraction * total as f64 - 1e-9).max(0.0) as usize).min(total);
    let mut idx: Vec<(f64, u32, u32)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| {
            let fu = f64::from(u) / f64::from(w);
            let fv = f64::from(v) / f64::from(h);
            (fu * fu + fv * fv, v, u)
        })
        .collect();
    idx.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
    idx.truncate(count);
    idx.into_iter().map(|(_, v, u)| v as usize * w as usize + u as usize).collect()
}

/// Zeroes the highest-frequency `fraction` of DCT coefficients of a plane.
pub fn low_pass_plane(p: &Plane, fraction: f64) -> Plane {
    let mut coeffs = dct2(p);
    for i in high_band(p.width, p.height, fraction) {
        coeffs.data[i] = 0.0;
    }
    idct2(&coeffs)
}

/// Frequency-domain low-pass filter over an 8-bit image.
pub fn low_pass(img: &Image, cfg: &LowPassConfig) -> Result<Image, VisionError> {
    cfg.validate()?;
    let f = cfg.removal_fraction;
    if cfg.channels == LowPassChannels::Luma && img.channels >= 3 {
        // full-range YCbCr round trip, filtering Y only
        let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
        let n = r.data.len();
        let mut y = Vec::with_capacity(n);
        let mut cb = Vec::with_capacity(n);
        let mut cr = Vec::with_capacity(n);
        for i in 0..n {
            let (rv, gv, bv) = (r.data[i], g.data[i], b.data[i]);
            let yy = 0.299 * rv + 0.587 * gv + 0.114 * bv;
            y.push(yy);
            cb.push((bv - yy) * 0.564);
            cr.push((rv - yy) * 0.713);
        }
        let y = low_pass_plane(&Plane::new(img.width, img.height, y), f);
        let mut planes = vec![
            Plane::new(img.width, img.height, vec![0.0; n]),
            Plane::new(img.width, img.height, vec![0.0; n]),
            Plane::new(img.width, img.height, vec![0.0; n]),
        ];
        for i in 0..n {
            let yy = y.data[i];
            let rv = yy + cr[i] / 0.713;
            let bv = yy + cb[i] / 0.564;
            let gv = (yy - 0.299 * rv - 0.114 * bv) / 0.587;
            planes[0].data[i] = rv;
            planes[1].data[i] = gv;
            planes[2].data[i] = bv;
        }
        for c in 3..img.channels {
            planes.push(img.plane(c));
        }
        return Ok(Image::from_planes(&planes));
    }
    let planes: Vec<Plane> = (0..img.channels).map(|c| low_pass_plane(&img.plane(c), f)).collect();
    Ok(Image::from_planes(&planes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive reference: score every grid in floating point and apply the
    /// same tie rules by sorting.
    fn brute_force_grid(w: u32, h: u32) -> (u32, u32) {
        let target = libm::log(f64::from(w) / f64::from(h));
        let mut all = Vec::new();
        for c in 1..=12u32 {
            for r in 1..=12u32 {
                if c * r <= 12 {
                    all.push((libm::fabs(libm::log(f64::from(c) / f64::from(r)) - target), c, r));
                }
            }
        }
        let best = all.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let mut tied: Vec<_> = all.into_iter().filter(|t| (t.0 - best).abs() <= 1e-12).collect();
        tied.sort_by_key(|&(_, c, r)| (c * r, c));
        let fitting: Vec<_> = tied
            .iter()
            .filter(|&&(_, c, r)| 2.0 * f64::from(w) * f64::from(h) > 448.0 * 448.0 * f64::from(c * r))
            .collect();
        match fitting.last() {
            Some(&&(_, c, r)) => (c, r),
            None => {
                let min_area = tied[0].1 * tied[0].2;
                let first = tied.iter().filter(|t| t.1 * t.2 == min_area).max_by_key(|t| t.1).unwrap();
                (first.1, first.2)
            }
        }
    }

    #[test]
    fn grid_examples() {
        let l = select_grid(448, 1344);
        assert_eq!((l.grid_cols, l.grid_rows, l.n_tiles, l.include_thumbnail, l.token_count), (1, 3, 3, true, 1024));
        let l = select_grid(448, 448);
        assert_eq!((l.grid_cols, l.grid_rows, l.include_thumbnail, l.token_count), (1, 1, false, 256));
        let l = select_grid(5000, 500);
        assert_eq!((l.grid_cols, l.grid_rows, l.n_tiles, l.token_count), (10, 1, 10, 2816));
        let l = select_grid(896, 896);
        assert_eq!((l.grid_cols, l.grid_rows), (2, 2));
        let l = select_grid(4000, 4000);
        assert_eq!((l.grid_cols, l.grid_rows), (3, 3));
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3000 {
            let w = rng.random_range(1..6000);
            let h = rng.random_range(1..6000);
            let l = select_grid(w, h);
            assert_eq!((l.grid_cols, l.grid_rows), brute_force_grid(w, h), "{w}x{h}");
            assert!(l.token_count <= MAX_TOKENS);
        }
    }

    #[test]
    fn tiles_reassemble() {
        let img = Image::from_fn(896, 896, 3, |x, y, c| ((x * 7 + y * 3 + u32::from(c) * 50) % 256) as u8);
        let layout = TileLayout::for_grid(2, 2);
        let tiles = tile_image(&img, &layout);
        assert_eq!(tiles.len(), 5);
        let resized = resize_bilinear(&img, 896, 896);
        for (i, t) in tiles[..4].iter().enumerate() {
            let (c, r) = (i as u32 % 2, i as u32 / 2);
            assert_eq!(*t, resized.crop(c * 448, r * 448, 448, 448));
        }
        assert_eq!(tiles[4], resize_bilinear(&img, 448, 448));
    }

    #[test]
    fn single_tile_and_solid_color() {
        let img = Image::filled(300, 200, &[10, 200, 30]);
        let tiles = tile_image(&img, &TileLayout::for_grid(1, 1));
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0], Image::filled(448, 448, &[10, 200, 30]));
        let tiles = tile_image(&img, &TileLayout::for_grid(3, 2));
        assert_eq!(tiles.len(), 7);
        assert!(tiles.iter().all(|t| *t == Image::filled(448, 448, &[10, 200, 30])));
    }

    #[test]
    fn unshuffle_token_counts() {
        let g = FeatureGrid::new(32, 32, 1, (0..1024).map(|v| v as f32).collect());
        let u = pixel_unshuffle(&g).unwrap();
        assert_eq!((u.height, u.width, u.channels, u.positions()), (16, 16, 4, 256));
        assert_eq!(u.data.iter().sum::<f32>(), g.data.iter().sum::<f32>());
        let small = FeatureGrid::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let u = pixel_unshuffle(&small).unwrap();
        assert_eq!(u.positions(), 1);
        assert_eq!(u.at(0, 0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_unshuffle(&FeatureGrid::new(3, 3, 1, vec![0.0; 9])), Err(VisionError::OddGridSide(3)));
    }

    #[test]
    fn dct_round_trip() {
        let p = Plane::new(5, 3, (0..15).map(|v| f64::from(v * v % 7)).collect());
        let back = idct2(&dct2(&p));
        for (a, b) in p.data.iter().zip(&back.data) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
        // orthonormal: energy preserved
        assert_relative_eq!(dct2(&p).energy(), p.energy(), epsilon = 1e-9);
    }

    #[test]
    fn low_pass_constant_image_unchanged() {
        let img = Image::filled(40, 30, &[77, 12, 250]);
        let cfg = LowPassConfig::new(MIN_LOWPASS_FRACTION).unwrap();
        assert_eq!(low_pass(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn low_pass_checkerboard_loses_energy() {
        let img = Image::from_fn(16, 16, 1, |x, y, _| if (x + y) % 2 == 0 { 255 } else { 0 });
        let cfg = LowPassConfig::new(0.07).unwrap();
        let out = low_pass(&img, &cfg).unwrap();
        // transform-domain oracle: Parseval says the filtered plane keeps
        // exactly the energy outside the zeroed band
        let coeffs = dct2(&img.plane(0));
        let band = high_band(16, 16, 0.07);
        let removed: f64 = band.iter().map(|&i| coeffs.data[i].powi(2)).sum();
        assert!(removed > 1.0);
        let filtered = low_pass_plane(&img.plane(0), 0.07);
        assert_relative_eq!(filtered.energy(), img.plane(0).energy() - removed, max_relative = 1e-9);
        assert!(out.plane(0).energy() < img.plane(0).energy());
    }

    #[test]
    fn fraction_bounds() {
        assert_eq!(LowPassConfig::new(0.01), Err(VisionError::FractionOutOfRange(0.01)));
        assert!(LowPassConfig::new(0.08).is_err());
        assert!(LowPassConfig::new(0.015).is_ok() && LowPassConfig::new(0.07).is_ok());
        assert_eq!(high_band(10, 10, 0.07).len(), 7);
        assert_eq!(high_band(10, 10, 0.015).len(), 2);
    }

    #[test]
    fn luma_mode_leaves_gray_constant() {
        let img = Image::filled(8, 8, &[90, 90, 90]);
        let cfg = LowPassConfig {
            removal_fraction: 0.05,
            channels: LowPassChannels::Luma,
        };
        assert_eq!(low_pass(&img, &cfg).unwrap(), img);
    }

    proptest! {
        #[test]
        fn unshuffle_round_trip(h in 1usize..8, w in 1usize..8, c in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = FeatureGrid::new(2 * h, 2 * w, c, (0..4 * h * w * c).map(|_| rng.random::<f32>()).collect());
            prop_assert_eq!(pixel_shuffle(&pixel_unshuffle(&g).unwrap()), g);
        }

        #[test]
        fn low_pass_is_projection(w in 2u32..12, h in 2u32..12, frac in 0.015f64..0.07, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Plane::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect());
            let band = high_band(w, h, frac);
            let before = dct2(&p);
            let after = dct2(&low_pass_plane(&p, frac));
            let e_in: f64 = band.iter().map(|&i| before.data[i].powi(2)).sum();
            let e_out: f64 = band.iter().map(|&i| after.data[i].powi(2)).sum();
            prop_assert!(e_out <= e_in + 1e-9);
            prop_assert!(low_pass_plane(&p, frac).energy() <= p.energy() + 1e-6);
        }

        #[test]
        fn token_budget(w in 1u32..20000, h in 1u32..20000) {
            let l = select_grid(w, h);
            prop_assert!(l.n_tiles <= MAX_TILES && l.n_tiles == l.grid_cols * l.grid_rows);
            prop_assert_eq!(l.token_count, 256 * (l.n_tiles + u32::from(l.include_thumbnail)));
            prop_assert_eq!(l.include_thumbnail, l.n_tiles > 1);
        }
    }
}
