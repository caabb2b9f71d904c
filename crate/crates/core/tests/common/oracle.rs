//! Hand-worked refinement oracles shared by the tests and the acceptance run.

use std::sync::{Arc, Mutex};

use scenefix_core::backend::mock::{MockConfig, LATENT_CELL};
use scenefix_core::backend::{BackendHandles, BackendResult, BackendSuite, Latent, LatentTrajectory, Refiner};
use scenefix_core::geometry::Size;
use scenefix_core::image::{Image, ObjectMask};
use scenefix_core::pdss::{refine, CompositeMask, RefineConfig};

/// 2×2 one-channel latent. Source latent s holds `10·(s+1) + cell`, a step
/// adds t to every cell, and every latent handed to `step` or `decode` is recorded.
#[derive(Default)]
pub struct Counting {
    pub seen: Mutex<Vec<Vec<f32>>>,
}

impl Refiner for Counting {
    fn invert(&self, image: &Image, steps: usize) -> BackendResult<LatentTrajectory> {
        let latents = (0..steps)
            .map(|s| {
                let mut z = Latent::zeros(image.width(), image.height(), 2, 2, 1);
                for c in 0..4 {
                    z.data[c] = 10.0 * (s + 1) as f32 + c as f32;
                }
                Arc::new(z)
            })
            .collect();
        Ok(LatentTrajectory { steps, latents })
    }

    fn step(&self, latent: &Latent, t: usize) -> BackendResult<Latent> {
        self.seen.lock().unwrap().push(latent.data.clone());
        let mut z = latent.clone();
        z.data.iter_mut().for_each(|v| *v += t as f32);
        Ok(z)
    }

    fn decode(&self, latent: &Latent) -> BackendResult<Image> {
        self.seen.lock().unwrap().push(latent.data.clone());
        let mut img = Image::filled(latent.width, latent.height, [0, 0, 0]);
        for y in 0..latent.height {
            for x in 0..latent.width {
                let v = latent.data[(y / LATENT_CELL) as usize * 2 + (x / LATENT_CELL) as usize] as u8;
                img.put(x, y, [v, v, v]);
            }
        }
        Ok(img)
    }
}

pub fn suite_with(refiner: Arc<dyn Refiner>) -> BackendSuite {
    let mut h = BackendHandles::mock(MockConfig::default());
    h.refiner = refiner;
    BackendSuite::new(h, 4)
}

/// One pixel per selected cell of a 16×16 canvas.
pub fn cell_mask(bits: [bool; 4]) -> ObjectMask {
    let side = 2 * LATENT_CELL;
    let mut m = ObjectMask::empty(Size::new(side, side));
    for (c, set) in bits.iter().enumerate() {
        if *set {
            let (cx, cy) = ((c % 2) as u32, (c / 2) as u32);
            m.set(cx * LATENT_CELL + 3, cy * LATENT_CELL + 5, true);
        }
    }
    m
}

/// Checks all 16 masks for T = 2 and K ∈ {0, 1, 2}; returns the case count.
pub fn check_all_patterns() -> Result<usize, String> {
    let z = |s: usize, c: usize| 10.0 * (s + 1) as f32 + c as f32;
    let mut cases = 0;
    for pattern in 0..16u8 {
        let m: [bool; 4] = std::array::from_fn(|c| pattern & (1 << c) != 0);
        for k in 0..=2usize {
            // T = 2: step 0 adds 2, step 1 adds 1, and step s < K puts
            // source latent s back into unmasked cells.
            let start: Vec<f32> = (0..4).map(|c| z(0, c)).collect();
            let after0: Vec<f32> = (0..4)
                .map(|c| if k >= 1 && !m[c] { z(0, c) } else { z(0, c) + 2.0 })
                .collect();
            let after1: Vec<f32> = (0..4)
                .map(|c| if k >= 2 && !m[c] { z(1, c) } else { after0[c] + 1.0 })
                .collect();

            let r = Arc::new(Counting::default());
            let suite = suite_with(r.clone());
            let composite = Image::filled(16, 16, [0, 0, 0]);
            let mask = CompositeMask::new(cell_mask(m));
            let case = format!("pattern {pattern:04b} K={k}");
            if mask.latent.bits != m.to_vec() {
                return Err(format!("{case}: latent mask {:?}", mask.latent.bits));
            }
            let cfg = RefineConfig {
                steps: 2,
                k_fraction: k as f64 / 2.0,
                ..RefineConfig::default()
            };
            let (out, trace) = refine(&composite, &mask, &cfg, &suite).map_err(|e| e.to_string())?;
            let seen = r.seen.lock().unwrap().clone();
            let expected = vec![start, after0, after1.clone()];
            if seen != expected {
                return Err(format!("{case}: saw {seen:?}, expected {expected:?}"));
            }
            if trace.iter().filter(|t| t.masked).count() != k || trace.iter().map(|t| t.t).collect::<Vec<_>>() != [2, 1] {
                return Err(format!("{case}: trace {trace:?}"));
            }
            for c in 0..4 {
                let (x, y) = ((c % 2) as u32 * LATENT_CELL, (c / 2) as u32 * LATENT_CELL);
                if out.get(x, y)[0] as f32 != after1[c] {
                    return Err(format!("{case}: decoded cell {c} is {}", out.get(x, y)[0]));
                }
            }
            cases += 1;
        }
    }
    Ok(cases)
}

/// Pixel mask grown to whole latent cells.
pub fn cell_dilation(mask: &CompositeMask) -> ObjectMask {
    let size = mask.pixel.size();
    let mut out = ObjectMask::empty(size);
    for y in 0..size.height {
        for x in 0..size.width {
            let c = (y / LATENT_CELL) as usize * mask.latent.cols + (x / LATENT_CELL) as usize;
            if mask.latent.bits[c] {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Largest per-channel difference between `a` and `b` outside `mask`.
pub fn max_diff_outside(a: &Image, b: &Image, mask: &ObjectMask) -> u8 {
    let mut worst = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(x, y) {
                continue;
            }
            let (p, q) = (a.get(x, y), b.get(x, y));
            for c in 0..3 {
                worst = worst.max(p[c].abs_diff(q[c]));
            }
        }
    }
    worst
}
