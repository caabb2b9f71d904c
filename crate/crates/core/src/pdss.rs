//! Stitching and mask-guided latent refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::mock::LATENT_CELL;
use crate::backend::{BackendSuite, Latent};
use crate::counting::Registry;
use crate::error::{Error, Result};
use crate::geometry::Size;
use crate::image::{Image, ObjectMask};
use crate::ocs::{ContentPatch, Placement, SubtaskResult, SubtaskStatus};
use crate::scene::ObjectRef;
use crate::sprite::Sprite;

/// Binary mask over latent cells, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentMask {
    pub cols: usize,
    pub rows: usize,
    pub bits: Vec<bool>,
}

impl LatentMask {
    /// A cell is set when any pixel of its block is set.
    pub fn from_pixels(mask: &ObjectMask, cell: u32) -> Self {
        let size = mask.size();
        let cols = size.width.div_ceil(cell) as usize;
        let rows = size.height.div_ceil(cell) as usize;
        let mut bits = vec![false; cols * rows];
        for (x, y) in mask.iter_set() {
            bits[(y / cell) as usize * cols + (x / cell) as usize] = true;
        }
        Self { cols, rows, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompositeMask {
    pub pixel: ObjectMask,
    pub latent: LatentMask,
}

impl CompositeMask {
    pub fn new(pixel: ObjectMask) -> Self {
        let latent = LatentMask::from_pixels(&pixel, LATENT_CELL);
        Self { pixel, latent }
    }

    pub fn empty(size: Size) -> Self {
        Self::new(ObjectMask::empty(size))
    }
}

/// Which end of the refinement loop gets the masked (source-blended) steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedPhase {
    /// The first K steps, counting from the noisiest latent.
    #[default]
    Leading,
    /// The last K steps.
    Trailing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub steps: usize,
    pub k_fraction: f64,
    pub masked_phase: MaskedPhase,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 40,
            k_fraction: 0.75,
            masked_phase: MaskedPhase::Leading,
        }
    }
}

impl RefineConfig {
    pub fn masked_steps(&self) -> usize {
        ((self.k_fraction * self.steps as f64).round() as usize).min(self.steps)
    }

    pub fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("refinement needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.k_fraction) {
            return Err(Error::InvalidConfig("k_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_masked(&self, step: usize) -> bool {
        let k = self.masked_steps();
        match self.masked_phase {
            MaskedPhase::Leading => step < k,
            MaskedPhase::Trailing => step >= self.steps - k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineTraceStep {
    pub step: usize,
    pub t: usize,
    pub masked: bool,
}

/// `z ← z ⊙ M + source ⊙ (1 − M)` with M broadcast over channels.
pub fn blend(z: &mut Latent, source: &Latent, mask: &LatentMask) -> Result<()> {
    if !z.same_shape(source) || z.cols != mask.cols || z.rows != mask.rows {
        return Err(Error::InvalidConfig(format!(
            "latent grid {}x{} does not match mask grid {}x{}",
            z.cols, z.rows, mask.cols, mask.rows
        )));
    }
    for (i, set) in mask.bits.iter().enumerate() {
        if !*set {
            z.cell_mut(i).copy_from_slice(source.cell(i));
        }
    }
    Ok(())
}

/// Runs T refiner steps from the noisiest source latent; masked steps
/// restore unmasked cells from the trajectory after stepping.
pub fn refine(
    composite: &Image,
    mask: &CompositeMask,
    cfg: &RefineConfig,
    backends: &BackendSuite,
) -> Result<(Image, Vec<RefineTraceStep>)> {
    cfg.check()?;
    if mask.pixel.size() != composite.size() {
        return Err(Error::InvalidConfig("composite mask size mismatch".into()));
    }
    let traj = backends.refiner_invert(composite, cfg.steps)?;
    let mut z = (*traj.latents[0]).clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for s in 0..cfg.steps {
        let t = cfg.steps - s;
        z = backends.refiner_step(&z, t)?;
        let masked = cfg.is_masked(s);
        if masked {
            blend(&mut z, &traj.latents[s], &mask.latent)?;
        }
        trace.push(RefineTraceStep { step: s, t, masked });
    }
    Ok((backends.refiner_decode(&z)?, trace))
}

/// The final content and placement each modified object contributes.
#[derive(Clone, Debug, Default)]
pub struct MergePlan {
    pub content: BTreeMap<ObjectRef, ContentPatch>,
    pub placement: BTreeMap<ObjectRef, Placement>,
}

impl MergePlan {
    /// Last corrected content patch and last corrected placement per object.
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a SubtaskResult>) -> Self {
        let mut plan = Self::default();
        for r in results {
            if r.status != SubtaskStatus::Corrected {
                continue;
            }
            if let Some(p) = &r.content_patch {
                plan.content.insert(p.object.clone(), p.clone());
            }
            if let Some(p) = &r.placement {
                plan.placement.insert(p.object.clone(), p.clone());
            }
        }
        plan
    }

    pub fn objects(&self) -> Vec<ObjectRef> {
        let mut v: Vec<ObjectRef> = self.content.keys().chain(self.placement.keys()).cloned().collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Erases every modified object, pastes its final sprite at its final
/// place, and builds the composite mask (pasted sprites ∪ `extra`).
pub fn assemble(
    base: &Image,
    results: &[SubtaskResult],
    registry: &Registry,
    extra: &ObjectMask,
    backends: &BackendSuite,
) -> Result<(Image, CompositeMask)> {
    let size = base.size();
    let plan = MergePlan::from_results(results);
    let objects = plan.objects();
    let mut pixel = extra.clone();
    if objects.is_empty() {
        return Ok((base.clone(), CompositeMask::new(pixel)));
    }
    let mut erase = ObjectMask::empty(size);
    for o in &objects {
        let g = registry
            .get(o)
            .ok_or_else(|| Error::MissingGeometry(o.display()))?;
        erase.union_with(&g.mask);
    }
    let erased = backends.inpaint_remove(base, &erase)?;
    let mut out = erased.clone();
    for o in &objects {
        let (sprite, at) = match plan.content.get(o) {
            Some(p) => p.sprite(),
            None => Sprite::lift(base, &registry[o].mask),
        }
        .ok_or_else(|| Error::MissingGeometry(format!("{} has an empty mask", o.display())))?;
        let (sprite, at) = match plan.placement.get(o) {
            Some(pl) => {
                let fit = sprite.fit(pl.bbox.rect());
                (sprite.scaled(fit.w, fit.h), fit)
            }
            None => (sprite, at),
        };
        sprite.paste(&mut out, at.x, at.y);
        let placed = sprite.placed_mask(size, at.x, at.y);
        for (x, y) in placed.boundary().iter_set() {
            let p = out.get(x, y);
            let q = erased.get(x, y);
            let mix = [0, 1, 2].map(|c| ((p[c] as u16 + q[c] as u16 + 1) / 2) as u8);
            out.put(x, y, mix);
        }
        pixel.union_with(&placed);
    }
    Ok((out, CompositeMask::new(pixel)))
}
