//! Training-time augmentation: transverse flips, quarter-turn rotations and
//! small shifts of the crop center.

use crate::error::Result;
use crate::rng::RngStream;
use crate::volume::{crop_at, CtVolume, Patch};

/// Largest center shift, in voxels, per transverse axis.
pub const MAX_SHIFT_VOX: i64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentationSpec {
    pub flip_sagittal: bool,
    pub flip_coronal: bool,
    /// Quarter turns in the transverse plane, 0..=3.
    pub rot_quarter_turns: u8,
    pub shift_vox: (i64, i64),
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Draw a spec. Draw order is fixed: sagittal flip, coronal flip,
    /// rotation, x shift, y shift.
    pub fn sample(rng: &mut RngStream) -> Self {
        let flip_sagittal = rng.uniform01() < 0.5;
        let flip_coronal = rng.uniform01() < 0.5;
        let rot = rng.int_range(0, 3).expect("valid range") as u8;
        let dx = rng.int_range(-MAX_SHIFT_VOX, MAX_SHIFT_VOX).expect("valid range");
        let dy = rng.int_range(-MAX_SHIFT_VOX, MAX_SHIFT_VOX).expect("valid range");
        Self {
            flip_sagittal,
            flip_coronal,
            rot_quarter_turns: rot,
            shift_vox: (dx, dy),
        }
    }

    /// Flips then rotation on an already cropped patch.
    pub fn transform(&self, patch: &Patch) -> Patch {
        let mut p = patch.clone();
        if self.flip_sagittal {
            p = p.flip_sagittal();
        }
        if self.flip_coronal {
            p = p.flip_coronal();
        }
        if !self.rot_quarter_turns.is_multiple_of(4) {
            p = p.rotate_quarter(self.rot_quarter_turns);
        }
        p
    }

    /// Shifted crop followed by flips and rotation. The longitudinal axis is
    /// never touched.
    pub fn apply(&self, v: &CtVolume, center_mm: [f64; 3], extent: [usize; 3]) -> Result<Patch> {
        let patch = crop_at(v, center_mm, self.shift_vox, extent)?;
        Ok(self.transform(&patch))
    }
}
