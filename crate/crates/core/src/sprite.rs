//! Object cut-outs: masked pixels lifted from an image, rescaled and pasted.

use crate::geometry::Rect;
use crate::image::{Image, ObjectMask};

/// Pixels and a same-sized mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sprite {
    pub pixels: Image,
    pub mask: ObjectMask,
}

impl Sprite {
    /// Cuts the masked region of `image`; returns the sprite and where it was.
    pub fn lift(image: &Image, mask: &ObjectMask) -> Option<(Sprite, Rect)> {
        let r = mask.bbox()?;
        Some((
            Sprite {
                pixels: image.crop(r),
                mask: mask.crop(r),
            },
            r,
        ))
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Nearest-neighbour resample to `w × h`.
    pub fn scaled(&self, w: u32, h: u32) -> Sprite {
        if w == self.width() && h == self.height() {
            return self.clone();
        }
        let mut pixels = Image::filled(w, h, [0, 0, 0]);
        let mut mask = ObjectMask::empty(crate::geometry::Size::new(w, h));
        for y in 0..h {
            let sy = ((y as u64 * self.height() as u64) / h as u64) as u32;
            for x in 0..w {
                let sx = ((x as u64 * self.width() as u64) / w as u64) as u32;
                pixels.put(x, y, self.pixels.get(sx, sy));
                mask.set(x, y, self.mask.get(sx, sy));
            }
        }
        Sprite { pixels, mask }
    }

    /// Where this sprite lands inside `target`, preserving aspect ratio.
    pub fn fit(&self, target: Rect) -> Rect {
        target.fit_aspect(self.width() as f64 / self.height() as f64)
    }

    /// Hard paste of the masked pixels at `(x, y)`.
    pub fn paste(&self, image: &mut Image, x: u32, y: u32) {
        image.paste_masked(&self.pixels, &self.mask, x, y);
    }

    /// Full-canvas mask of this sprite placed at `(x, y)` on `canvas`.
    pub fn placed_mask(&self, canvas: crate::geometry::Size, x: u32, y: u32) -> ObjectMask {
        self.mask.placed(canvas, x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Size;

    #[test]
    fn lift_scale_paste() {
        let mut img = Image::filled(10, 10, [0, 0, 0]);
        img.put(2, 3, [9, 9, 9]);
        img.put(3, 3, [9, 9, 9]);
        let mut m = ObjectMask::empty(Size::new(10, 10));
        m.set(2, 3, true);
        m.set(3, 3, true);
        let (s, r) = Sprite::lift(&img, &m).unwrap();
        assert_eq!(r, Rect::new(2, 3, 2, 1));
        let big = s.scaled(4, 2);
        assert_eq!(big.mask.count(), 8);
        let mut out = Image::filled(10, 10, [0, 0, 0]);
        big.paste(&mut out, 5, 5);
        assert_eq!(out.get(8, 6), [9, 9, 9]);
        assert_eq!(s.fit(Rect::new(0, 0, 8, 8)), Rect::new(0, 2, 8, 4));
    }
}
