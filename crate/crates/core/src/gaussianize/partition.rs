//! Non-overlapping patch extraction with optional wrap-around rolling.

use crate::error::{Error, Result};
use crate::stage::{Pullback, Stage};
use crate::tensor::Tensor;

/// Splits a tensor into equal patches laid out as columns of a `D × N`
/// matrix. Rows follow raster order inside a patch; columns follow raster
/// order over the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPartition {
    dims: Vec<usize>,
    patch: Vec<usize>,
    roll: Vec<usize>,
    map: Vec<usize>,
}

impl PatchPartition {
    pub fn new(dims: &[usize], patch: &[usize]) -> Result<Self> {
        Self::with_roll(dims, patch, &vec![0; dims.len()])
    }

    /// Patches taken after shifting axis `k` by `roll[k]` entries, wrapping
    /// values around to the opposite side.
    pub fn with_roll(dims: &[usize], patch: &[usize], roll: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() != patch.len() || roll.len() != dims.len() {
            return Err(Error::Partition(format!(
                "rank mismatch: tensor {dims:?}, patch {patch:?}, roll {roll:?}"
            )));
        }
        for (k, (&n, &p)) in dims.iter().zip(patch).enumerate() {
            if n == 0 || p == 0 || n % p != 0 {
                return Err(Error::Partition(format!(
                    "axis {k}: patch extent {p} does not divide {n}"
                )));
            }
        }
        let mut part = Self {
            dims: dims.to_vec(),
            patch: patch.to_vec(),
            roll: roll.iter().zip(dims).map(|(&r, &n)| r % n).collect(),
            map: Vec::new(),
        };
        part.map = part.build_map();
        Ok(part)
    }

    /// Roll by half a patch along the last two axes.
    pub fn half_rolled(&self) -> Result<Self> {
        let r = self.dims.len();
        let mut roll = vec![0; r];
        for k in r.saturating_sub(2)..r {
            roll[k] = self.patch[k] / 2;
        }
        Self::with_roll(&self.dims, &self.patch, &roll)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn patch(&self) -> &[usize] {
        &self.patch
    }

    pub fn roll(&self) -> &[usize] {
        &self.roll
    }

    /// Entries per patch.
    pub fn patch_dim(&self) -> usize {
        self.patch.iter().product()
    }

    pub fn num_patches(&self) -> usize {
        self.dims.iter().zip(&self.patch).map(|(n, p)| n / p).product()
    }

    /// `map[d * N + i]` is the flat tensor index of entry `d` of patch `i`.
    fn build_map(&self) -> Vec<usize> {
        let r = self.dims.len();
        let grid: Vec<usize> = self.dims.iter().zip(&self.patch).map(|(n, p)| n / p).collect();
        let (dd, nn) = (self.patch_dim(), self.num_patches());
        let mut strides = vec![1usize; r];
        for k in (0..r.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        let unravel = |mut idx: usize, ext: &[usize]| -> Vec<usize> {
            let mut out = vec![0; ext.len()];
            for k in (0..ext.len()).rev() {
                out[k] = idx % ext[k];
                idx /= ext[k];
            }
            out
        };
        let mut map = vec![0; dd * nn];
        for i in 0..nn {
            let g = unravel(i, &grid);
            for d in 0..dd {
                let w = unravel(d, &self.patch);
                let mut flat = 0;
                for k in 0..r {
                    let pos = (g[k] * self.patch[k] + w[k] + self.roll[k]) % self.dims[k];
                    flat += pos * strides[k];
                }
                map[d * nn + i] = flat;
            }
        }
        map
    }

    pub fn partition(&self, z: &Tensor) -> Result<Tensor> {
        if z.dims() != self.dims.as_slice() {
            return Err(Error::Partition(format!(
                "tensor {:?} does not match partition {:?}",
                z.dims(),
                self.dims
            )));
        }
        let src = z.data();
        let data = self.map.iter().map(|&k| src[k]).collect();
        Tensor::new(vec![self.patch_dim(), self.num_patches()], data)
    }

    pub fn assemble(&self, v: &Tensor) -> Result<Tensor> {
        if v.dims() != [self.patch_dim(), self.num_patches()] {
            return Err(Error::Partition(format!(
                "matrix {:?} does not match {} x {} patches",
                v.dims(),
                self.patch_dim(),
                self.num_patches()
            )));
        }
        let mut out = vec![0.0; v.len()];
        for (&k, &x) in self.map.iter().zip(v.data()) {
            out[k] = x;
        }
        Tensor::new(self.dims.clone(), out)
    }
}

/// Tensor → patch matrix.
pub struct PartitionStage(pub PatchPartition);

/// Patch matrix → tensor.
pub struct AssembleStage(pub PatchPartition);

impl Stage for PartitionStage {
    fn name(&self) -> &str {
        "partition"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let p = self.0.clone();
        Ok((self.0.partition(x)?, Pullback::new(move |g| p.assemble(g))))
    }
}

impl Stage for AssembleStage {
    fn name(&self) -> &str {
        "assemble"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let p = self.0.clone();
        Ok((self.0.assemble(x)?, Pullback::new(move |g| p.partition(g))))
    }
}

/// Parses a patch spec such as `1x4x4` or `2x2`.
pub fn parse_patch(spec: &str) -> Result<Vec<usize>> {
    spec.split('x')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Config(format!("bad patch spec '{spec}'")))
        })
        .collect()
}
