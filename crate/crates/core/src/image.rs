//! RGB rasters and binary object masks.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Rect, Size};

pub type Rgb = [u8; 3];

/// 8-bit RGB raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("digest", &&self.digest()[..12])
            .finish()
    }
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be positive");
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(Error::InvalidImage(format!(
                "buffer length {} does not match {}x{} RGB",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> Size {
        Size::new(self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Copy of the region `r`, which must lie within the image.
    pub fn crop(&self, r: Rect) -> Image {
        assert!(r.fits_in(self.size()), "crop {r:?} outside {:?}", self.size());
        let mut pixels = Vec::with_capacity(r.area() as usize * 3);
        for y in r.y..r.bottom() {
            let a = self.offset(r.x, y);
            let b = self.offset(r.right() - 1, y) + 3;
            pixels.extend_from_slice(&self.pixels[a..b]);
        }
        Image {
            width: r.w,
            height: r.h,
            pixels,
        }
    }

    /// Overwrites pixels with `src` placed at `(x, y)`, clipped to the canvas.
    pub fn paste(&mut self, src: &Image, x: u32, y: u32) {
        let w = src.width.min(self.width.saturating_sub(x));
        let h = src.height.min(self.height.saturating_sub(y));
        for row in 0..h {
            let d = self.offset(x, y + row);
            let s = src.offset(0, row);
            self.pixels[d..d + w as usize * 3].copy_from_slice(&src.pixels[s..s + w as usize * 3]);
        }
    }

    /// Writes `src` pixels where `mask` (sized like `src`) is set.
    pub fn paste_masked(&mut self, src: &Image, mask: &ObjectMask, x: u32, y: u32) {
        debug_assert_eq!(src.size(), mask.size());
        for (mx, my) in mask.iter_set() {
            let (tx, ty) = (x + mx, y + my);
            if tx < self.width && ty < self.height {
                self.put(tx, ty, src.get(mx, my));
            }
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.pixels);
        hex::encode(h.finalize())
    }

    pub fn to_png(&self) -> Vec<u8> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_raw(w, h, rgb.into_raw())
    }

    /// Number of pixels that differ from `other` by more than `tol` in any channel.
    pub fn count_diff(&self, other: &Image, tol: u8) -> usize {
        assert_eq!(self.size(), other.size());
        self.pixels
            .chunks_exact(3)
            .zip(other.pixels.chunks_exact(3))
            .filter(|(a, b)| a.iter().zip(b.iter()).any(|(p, q)| p.abs_diff(*q) > tol))
            .count()
    }

    /// Mask of pixels that differ from `other`.
    pub fn diff_mask(&self, other: &Image) -> ObjectMask {
        assert_eq!(self.size(), other.size());
        let mut m = ObjectMask::empty(self.size());
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) != other.get(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

/// Binary raster with the same dimensions as its source image.
#[derive(Clone, PartialEq, Eq)]
pub struct ObjectMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for ObjectMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count())
            .field("bbox", &self.bbox())
            .finish()
    }
}

impl ObjectMask {
    pub fn empty(size: Size) -> Self {
        Self {
            width: size.width,
            height: size.height,
            bits: vec![false; size.area() as usize],
        }
    }

    pub fn full(size: Size) -> Self {
        Self {
            width: size.width,
            height: size.height,
            bits: vec![true; size.area() as usize],
        }
    }

    pub fn from_rect(size: Size, r: Rect) -> Self {
        let mut m = Self::empty(size);
        m.fill_rect(r);
        m
    }

    pub fn from_bits(size: Size, bits: Vec<bool>) -> Result<Self> {
        if bits.len() as u64 != size.area() {
            return Err(Error::InvalidImage("mask length mismatch".into()));
        }
        Ok(Self {
            width: size.width,
            height: size.height,
            bits,
        })
    }

    pub fn size(&self) -> Size {
        Size::new(self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn fill_rect(&mut self, r: Rect) {
        let r = match r.intersect(&self.size().full_rect()) {
            Some(r) => r,
            None => return,
        };
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                self.set(x, y, true);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn bbox(&self) -> Option<Rect> {
        let mut x0 = u32::MAX;
        let mut y0 = u32::MAX;
        let mut x1 = 0;
        let mut y1 = 0;
        let mut any = false;
        for (x, y) in self.iter_set() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        any.then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn union_with(&mut self, other: &ObjectMask) {
        assert_eq!(self.size(), other.size());
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn is_subset_of(&self, other: &ObjectMask) -> bool {
        self.size() == other.size() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn crop(&self, r: Rect) -> ObjectMask {
        assert!(r.fits_in(self.size()));
        let mut m = ObjectMask::empty(Size::new(r.w, r.h));
        for y in 0..r.h {
            for x in 0..r.w {
                m.set(x, y, self.get(r.x + x, r.y + y));
            }
        }
        m
    }

    /// Embeds this mask at `(x, y)` in an empty canvas of `canvas` size.
    pub fn placed(&self, canvas: Size, x: u32, y: u32) -> ObjectMask {
        let mut m = ObjectMask::empty(canvas);
        for (mx, my) in self.iter_set() {
            let (tx, ty) = (x + mx, y + my);
            if tx < canvas.width && ty < canvas.height {
                m.set(tx, ty, true);
            }
        }
        m
    }

    /// Chebyshev dilation by `d` pixels.
    pub fn dilated(&self, d: u32) -> ObjectMask {
        if d == 0 {
            return self.clone();
        }
        let mut m = ObjectMask::empty(self.size());
        for (x, y) in self.iter_set() {
            let r = Rect::new(x, y, 1, 1).expanded(d, self.size());
            m.fill_rect(r);
        }
        m
    }

    /// Set pixels with at least one 4-neighbour outside the mask or the canvas.
    pub fn boundary(&self) -> ObjectMask {
        let mut m = ObjectMask::empty(self.size());
        for (x, y) in self.iter_set() {
            let edge = x == 0
                || y == 0
                || x + 1 == self.width
                || y + 1 == self.height
                || !self.get(x - 1, y)
                || !self.get(x + 1, y)
                || !self.get(x, y - 1)
                || !self.get(x, y + 1);
            if edge {
                m.set(x, y, true);
            }
        }
        m
    }

    /// Single-channel PNG with values 0 and 255.
    pub fn to_png(&self) -> Vec<u8> {
        let raw = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        let buf = image::GrayImage::from_raw(self.width, self.height, raw)
            .expect("mask buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let bits = gray.into_raw().into_iter().map(|v| v >= 128).collect();
        Self::from_bits(Size::new(w, h), bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_paste_round_trip() {
        let mut img = Image::filled(8, 6, [1, 2, 3]);
        img.put(3, 2, [9, 9, 9]);
        let c = img.crop(Rect::new(2, 1, 3, 3));
        assert_eq!(c.get(1, 1), [9, 9, 9]);
        let mut other = Image::filled(8, 6, [1, 2, 3]);
        other.paste(&c, 2, 1);
        assert_eq!(other, img);
    }

    #[test]
    fn png_round_trip() {
        let mut img = Image::filled(5, 4, [10, 20, 30]);
        img.put(4, 3, [255, 0, 128]);
        assert_eq!(Image::from_png(&img.to_png()).unwrap(), img);
        let mut m = ObjectMask::empty(img.size());
        m.set(1, 1, true);
        assert_eq!(ObjectMask::from_png(&m.to_png()).unwrap(), m);
    }

    #[test]
    fn mask_geometry() {
        let m = ObjectMask::from_rect(Size::new(10, 10), Rect::new(2, 3, 4, 2));
        assert_eq!(m.bbox(), Some(Rect::new(2, 3, 4, 2)));
        assert_eq!(m.count(), 8);
        assert_eq!(m.boundary().count(), 8);
        assert_eq!(m.dilated(1).bbox(), Some(Rect::new(1, 2, 6, 4)));
        assert!(m.is_subset_of(&m.dilated(1)));
    }

    #[test]
    fn raw_length_checked() {
        assert!(Image::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(Image::from_raw(0, 2, vec![]).is_err());
    }
}
