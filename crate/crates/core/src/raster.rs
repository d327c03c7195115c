//! RGB and binary-mask buffers and the four pixel tools the engine runs
//! itself: INVERSE, COMPOSE, RESIZE and BBOX.
//!
//! An all-zero RGB pixel counts as transparent. Segmentation outputs blank
//! everything outside the object, so compositing and subtraction of cut-outs
//! work without an alpha channel.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0}")]
    KindViolation(String),
    #[error("ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("nothing to resize: the valid region is empty")]
    EmptyValidRegion,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("buffer size does not match {0}x{1}")]
    BadLength(usize, usize),
    #[error("image io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(RasterError::BadLength(width, height));
        }
        Ok(ImageBuf {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        ImageBuf {
            width,
            height,
            pixels,
        }
    }

    /// Two-color checkerboard with `cell`-pixel squares.
    pub fn checkerboard(width: usize, height: usize, cell: usize) -> Self {
        let cell = cell.max(1);
        let mut img = ImageBuf::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                let c = if (x / cell + y / cell).is_multiple_of(2) { [200, 60, 40] } else { [40, 90, 210] };
                img.set(x, y, c);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Non-transparent pixels as a mask.
    pub fn valid_region(&self) -> MaskBuf {
        let bits = self.pixels.chunks_exact(3).map(|p| p != [0, 0, 0]).collect();
        MaskBuf {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    fn same_size(&self, other: &ImageBuf) -> Result<(), RasterError> {
        check_dims((self.width, self.height), (other.width, other.height))
    }

    pub fn write_ppm<W: Write>(&self, out: W) -> Result<(), RasterError> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::{ExtendedColorType, ImageEncoder};
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.width as u32, self.height as u32, ExtendedColorType::Rgb8)
            .map_err(|e| RasterError::Io(e.to_string()))
    }

    /// Reads any netpbm image and converts it to 8-bit RGB.
    pub fn read_pnm<R: Read>(mut input: R) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| RasterError::Io(e.to_string()))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| RasterError::Io(e.to_string()))?
            .to_rgb8();
        ImageBuf::new(img.width() as usize, img.height() as usize, img.into_raw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskBuf {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl MaskBuf {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(RasterError::BadLength(width, height));
        }
        Ok(MaskBuf { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        MaskBuf {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        MaskBuf {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    /// Rows `top..top+h`, columns `left..left+w`, clipped to the canvas.
    pub fn rect(width: usize, height: usize, left: usize, top: usize, w: usize, h: usize) -> Self {
        let mut m = MaskBuf::empty(width, height);
        for y in top..(top + h).min(height) {
            for x in left..(left + w).min(width) {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &MaskBuf) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn complement(&self) -> MaskBuf {
        MaskBuf {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// `(min_x, min_y, max_x, max_y)` of the set pixels.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, on)| **on) {
            let (x, y) = (i % self.width, i / self.width);
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        b
    }

    /// Nearest-neighbour resample onto a different canvas.
    pub fn resampled(&self, width: usize, height: usize) -> MaskBuf {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut m = MaskBuf::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                let sx = x * self.width / width;
                let sy = y * self.height / height;
                m.set(x, y, self.get(sx, sy));
            }
        }
        m
    }

    fn same_size(&self, other: &MaskBuf) -> Result<(), RasterError> {
        check_dims((self.width, self.height), (other.width, other.height))
    }

    /// Binary PGM, 0 for off and 255 for on.
    pub fn write_pgm<W: Write>(&self, out: W) -> Result<(), RasterError> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::{ExtendedColorType, ImageEncoder};
        let bytes: Vec<u8> = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, self.width as u32, self.height as u32, ExtendedColorType::L8)
            .map_err(|e| RasterError::Io(e.to_string()))
    }

    /// Reads a netpbm graymap; any non-zero sample is on.
    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| RasterError::Io(e.to_string()))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| RasterError::Io(e.to_string()))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        MaskBuf::new(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), RasterError> {
    if a == b {
        Ok(())
    } else {
        Err(RasterError::DimensionMismatch(a.0, a.1, b.0, b.1))
    }
}

/// Either a mask result or an image result; the other side is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Raster {
    Mask(MaskBuf),
    Image(ImageBuf),
}

impl Raster {
    pub fn into_mask(self) -> Option<MaskBuf> {
        match self {
            Raster::Mask(m) => Some(m),
            Raster::Image(_) => None,
        }
    }

    pub fn into_image(self) -> Option<ImageBuf> {
        match self {
            Raster::Image(i) => Some(i),
            Raster::Mask(_) => None,
        }
    }
}

fn kind_violation(tool: &str) -> RasterError {
    RasterError::KindViolation(format!("{tool} takes either masks or images, exactly one kind"))
}

/// Mask subtraction `mask1 AND NOT mask2` (a missing `mask1` is a full mask,
/// a missing `mask2` is empty), or per-channel saturating `image1 - image2`.
pub fn op_inverse(
    mask1: Option<&MaskBuf>,
    mask2: Option<&MaskBuf>,
    image1: Option<&ImageBuf>,
    image2: Option<&ImageBuf>,
) -> Result<Raster, RasterError> {
    let masks = mask1.is_some() || mask2.is_some();
    let images = image1.is_some() || image2.is_some();
    match (masks, images) {
        (true, false) => {
            let (w, h) = mask1.or(mask2).map(|m| (m.width, m.height)).unwrap();
            if let (Some(a), Some(b)) = (mask1, mask2) {
                a.same_size(b)?;
            }
            let bits = (0..w * h)
                .map(|i| mask1.is_none_or(|m| m.bits[i]) && !mask2.is_some_and(|m| m.bits[i]))
                .collect();
            Ok(Raster::Mask(MaskBuf { width: w, height: h, bits }))
        }
        (false, true) => {
            let (Some(a), Some(b)) = (image1, image2) else {
                return Err(RasterError::KindViolation(
                    "INVERSE needs both images or neither".into(),
                ));
            };
            a.same_size(b)?;
            let pixels = a.pixels.iter().zip(&b.pixels).map(|(x, y)| x.saturating_sub(*y)).collect();
            Ok(Raster::Image(ImageBuf {
                width: a.width,
                height: a.height,
                pixels,
            }))
        }
        _ => Err(kind_violation("INVERSE")),
    }
}

/// Overlay: masks are united; for images the second input wins wherever it
/// is not transparent. A missing operand is treated as empty.
pub fn op_compose(
    mask1: Option<&MaskBuf>,
    mask2: Option<&MaskBuf>,
    image1: Option<&ImageBuf>,
    image2: Option<&ImageBuf>,
) -> Result<Raster, RasterError> {
    let masks = mask1.is_some() || mask2.is_some();
    let images = image1.is_some() || image2.is_some();
    match (masks, images) {
        (true, false) => match (mask1, mask2) {
            (Some(a), Some(b)) => {
                a.same_size(b)?;
                let bits = a.bits.iter().zip(&b.bits).map(|(x, y)| *x || *y).collect();
                Ok(Raster::Mask(MaskBuf {
                    width: a.width,
                    height: a.height,
                    bits,
                }))
            }
            (a, b) => Ok(Raster::Mask(a.or(b).unwrap().clone())),
        },
        (false, true) => match (image1, image2) {
            (Some(a), Some(b)) => {
                a.same_size(b)?;
                let mut out = a.clone();
                for (dst, src) in out.pixels.chunks_exact_mut(3).zip(b.pixels.chunks_exact(3)) {
                    if src != [0, 0, 0] {
                        dst.copy_from_slice(src);
                    }
                }
                Ok(Raster::Image(out))
            }
            (a, b) => Ok(Raster::Image(a.or(b).unwrap().clone())),
        },
        _ => Err(kind_violation("COMPOSE")),
    }
}

/// Scales the valid region about its centroid by `ratio`, keeping the
/// canvas. Sampling is nearest-neighbour; content pushed off the canvas is
/// cropped and vacated pixels are cleared.
pub fn op_resize(mask: Option<&MaskBuf>, image: Option<&ImageBuf>, ratio: f64) -> Result<Raster, RasterError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(RasterError::NonPositiveRatio(ratio));
    }
    let (region, w, h) = match (mask, image) {
        (Some(m), None) => (m.clone(), m.width, m.height),
        (None, Some(i)) => (i.valid_region(), i.width, i.height),
        _ => return Err(RasterError::KindViolation("RESIZE takes exactly one of mask or image".into())),
    };
    if ratio == 1.0 {
        return Ok(match (mask, image) {
            (Some(m), _) => Raster::Mask(m.clone()),
            (_, Some(i)) => Raster::Image(i.clone()),
            _ => unreachable!(),
        });
    }
    let n = region.count();
    if n == 0 {
        return Err(RasterError::EmptyValidRegion);
    }
    // Centroid in continuous pixel-centre coordinates.
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in region.bits.iter().enumerate().filter(|(_, b)| **b) {
        sx += (i % w) as f64 + 0.5;
        sy += (i / w) as f64 + 0.5;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let source = |x: usize, y: usize| -> Option<(usize, usize)> {
        let fx = cx + ((x as f64 + 0.5) - cx) / ratio;
        let fy = cy + ((y as f64 + 0.5) - cy) / ratio;
        let (ix, iy) = (fx.floor(), fy.floor());
        (ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h).then_some((ix as usize, iy as usize))
    };
    match (mask, image) {
        (Some(m), _) => {
            let mut out = MaskBuf::empty(w, h);
            for y in 0..h {
                for x in 0..w {
                    if let Some((u, v)) = source(x, y) {
                        out.set(x, y, m.get(u, v));
                    }
                }
            }
            Ok(Raster::Mask(out))
        }
        (_, Some(img)) => {
            let mut out = ImageBuf::filled(w, h, [0, 0, 0]);
            for y in 0..h {
                for x in 0..w {
                    if let Some((u, v)) = source(x, y) {
                        out.set(x, y, img.get(u, v));
                    }
                }
            }
            Ok(Raster::Image(out))
        }
        _ => unreachable!(),
    }
}

/// Filled axis-aligned bounding box of the set pixels.
pub fn op_bbox(mask: &MaskBuf) -> Result<MaskBuf, RasterError> {
    let (x0, y0, x1, y1) = mask.bounds().ok_or(RasterError::EmptyMask)?;
    Ok(MaskBuf::rect(mask.width, mask.height, x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}
