//! Fusion of two feature views.
//!
//! Compact bilinear pooling approximates the outer product `x ⊗ y` without
//! materialising it: each view is count-sketched into `d` buckets with its
//! own hash pair, and the two sketches are circularly convolved. The result
//! is exactly the count sketch of `x ⊗ y` under the pair hash
//! `h(i, j) = (hx[i] + hy[j]) mod d`, `s(i, j) = sx[i] * sy[j]`, which
//! [`outer_sketch_oracle`] computes the slow way.
//!
//! Concatenation and averaging are the simple baselines.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Dense feature vector with finite entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> FeatureVector {
        FeatureVector(self.0.iter().map(|v| v * alpha).collect())
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One count-sketch hash pair over `input_dim` coordinates into
/// `sketch_dim` buckets.
///
/// Regenerated from `(input_dim, sketch_dim, seed)` with [`SplitMix64`]:
/// for each coordinate in order, one draw gives the bucket
/// (`(draw * d) >> 64`) and the next gives the sign (top bit clear is `+1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchParams {
    sketch_dim: usize,
    seed: u64,
    buckets: Vec<usize>,
    signs: Vec<i8>,
}

impl SketchParams {
    pub fn generate(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || sketch_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "sketch dims must be positive (n={input_dim}, d={sketch_dim})"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut buckets = Vec::with_capacity(input_dim);
        let mut signs = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            buckets.push(rng.below(sketch_dim as u64) as usize);
            signs.push(rng.sign());
        }
        Ok(SketchParams {
            sketch_dim,
            seed,
            buckets,
            signs,
        })
    }

    /// Explicit hash pair, mostly for tests.
    pub fn from_parts(
        sketch_dim: usize,
        buckets: Vec<usize>,
        signs: Vec<i8>,
        seed: u64,
    ) -> Result<Self> {
        if sketch_dim == 0 || buckets.is_empty() || buckets.len() != signs.len() {
            return Err(Error::InvalidArgument("malformed sketch params".into()));
        }
        if buckets.iter().any(|&b| b >= sketch_dim) || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(
                "sketch bucket or sign out of range".into(),
            ));
        }
        Ok(SketchParams {
            sketch_dim,
            seed,
            buckets,
            signs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.buckets.len()
    }

    pub fn sketch_dim(&self) -> usize {
        self.sketch_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }
}

/// `out[j] = Σ_{i : h[i] = j} s[i] · x[i]`.
pub fn count_sketch(x: &FeatureVector, p: &SketchParams) -> Result<FeatureVector> {
    if x.dim() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "count sketch input",
            expected: p.input_dim(),
            found: x.dim(),
        });
    }
    let mut out = vec![0.0; p.sketch_dim];
    for ((&v, &b), &s) in x.0.iter().zip(&p.buckets).zip(&p.signs) {
        out[b] += f64::from(s) * v;
    }
    Ok(FeatureVector(out))
}

fn check_conv_dims(a: &FeatureVector, b: &FeatureVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "circular convolution",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.dim() == 0 {
        return Err(Error::InvalidArgument(
            "cannot convolve empty vectors".into(),
        ));
    }
    Ok(())
}

/// Direct `O(d²)` circular convolution, `out[j] = Σ_i a[i] · b[(j − i) mod d]`.
pub fn circular_convolve_naive(a: &FeatureVector, b: &FeatureVector) -> Result<FeatureVector> {
    check_conv_dims(a, b)?;
    let d = a.dim();
    let mut out = vec![0.0; d];
    for (j, o) in out.iter_mut().enumerate() {
        for i in 0..d {
            *o += a.0[i] * b.0[(j + d - i) % d];
        }
    }
    Ok(FeatureVector(out))
}

/// FFT-based circular convolution with the transform plans for one length
/// cached, for repeated use in batch fusion.
pub struct Convolver {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("len", &self.len).finish()
    }
}

impl Convolver {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument(
                "convolution length must be positive".into(),
            ));
        }
        let mut planner = FftPlanner::new();
        Ok(Convolver {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn convolve(&self, a: &FeatureVector, b: &FeatureVector) -> Result<FeatureVector> {
        check_conv_dims(a, b)?;
        if a.dim() != self.len {
            return Err(Error::DimensionMismatch {
                context: "circular convolution",
                expected: self.len,
                found: a.dim(),
            });
        }
        let mut fa: Vec<Complex<f64>> = a.0.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut fb: Vec<Complex<f64>> = b.0.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut fa);
        self.forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= y;
        }
        self.inverse.process(&mut fa);
        let scale = 1.0 / self.len as f64;
        Ok(FeatureVector(fa.iter().map(|c| c.re * scale).collect()))
    }
}

/// Circular convolution through the FFT.
pub fn circular_convolve(a: &FeatureVector, b: &FeatureVector) -> Result<FeatureVector> {
    check_conv_dims(a, b)?;
    Convolver::new(a.dim())?.convolve(a, b)
}

fn check_mcb(
    x: &FeatureVector,
    y: &FeatureVector,
    px: &SketchParams,
    py: &SketchParams,
) -> Result<()> {
    if px.sketch_dim != py.sketch_dim {
        return Err(Error::DimensionMismatch {
            context: "mcb sketch dims",
            expected: px.sketch_dim,
            found: py.sketch_dim,
        });
    }
    if px.seed == py.seed {
        return Err(Error::InvalidArgument(format!(
            "mcb needs two distinct sketch seeds, got {} twice",
            px.seed
        )));
    }
    for (v, p, context) in [(x, px, "mcb first input"), (y, py, "mcb second input")] {
        if v.dim() != p.input_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: p.input_dim(),
                found: v.dim(),
            });
        }
    }
    Ok(())
}

/// Elementwise `sign(z)·sqrt(|z|)` followed by L2 normalisation. A zero
/// vector is left as is.
pub fn signed_sqrt_normalize(z: &mut [f64]) {
    for v in z.iter_mut() {
        *v = v.signum() * v.abs().sqrt();
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in z.iter_mut() {
            *v /= norm;
        }
    }
}

/// Compact bilinear pooling of `x` and `y`.
pub fn mcb_fuse(
    x: &FeatureVector,
    y: &FeatureVector,
    px: &SketchParams,
    py: &SketchParams,
    normalize: bool,
) -> Result<FeatureVector> {
    check_mcb(x, y, px, py)?;
    let convolver = Convolver::new(px.sketch_dim)?;
    mcb_fuse_with(&convolver, x, y, px, py, normalize)
}

fn mcb_fuse_with(
    convolver: &Convolver,
    x: &FeatureVector,
    y: &FeatureVector,
    px: &SketchParams,
    py: &SketchParams,
    normalize: bool,
) -> Result<FeatureVector> {
    let mut z = convolver.convolve(&count_sketch(x, px)?, &count_sketch(y, py)?)?;
    if normalize {
        signed_sqrt_normalize(&mut z.0);
    }
    Ok(z)
}

/// Count sketch of the materialised outer product `x ⊗ y` under the pair
/// hash. Quadratic in the input sizes; meant for checking [`mcb_fuse`].
pub fn outer_sketch_oracle(
    x: &FeatureVector,
    y: &FeatureVector,
    px: &SketchParams,
    py: &SketchParams,
) -> Result<FeatureVector> {
    check_mcb(x, y, px, py)?;
    let d = px.sketch_dim;
    let mut out = vec![0.0; d];
    for i in 0..x.dim() {
        for j in 0..y.dim() {
            let bucket = (px.buckets[i] + py.buckets[j]) % d;
            let sign = f64::from(px.signs[i] * py.signs[j]);
            out[bucket] += sign * (x.0[i] * y.0[j]);
        }
    }
    Ok(FeatureVector(out))
}

pub fn concat_fuse(x: &FeatureVector, y: &FeatureVector) -> FeatureVector {
    let mut out = Vec::with_capacity(x.dim() + y.dim());
    out.extend_from_slice(&x.0);
    out.extend_from_slice(&y.0);
    FeatureVector(out)
}

pub fn average_fuse(x: &FeatureVector, y: &FeatureVector) -> Result<FeatureVector> {
    if x.dim() != y.dim() {
        return Err(Error::AverageDims {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(FeatureVector(
        x.0.iter().zip(&y.0).map(|(a, b)| (a + b) / 2.0).collect(),
    ))
}

pub const DEFAULT_SKETCH_DIM: usize = 1024;

/// How two views are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum FusionSpec {
    Concat,
    Average,
    Mcb {
        sketch_dim: usize,
        seeds: (u64, u64),
        normalize: bool,
    },
}

impl FusionSpec {
    pub fn mcb(sketch_dim: usize, seeds: (u64, u64), normalize: bool) -> Self {
        FusionSpec::Mcb {
            sketch_dim,
            seeds,
            normalize,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionSpec::Concat => "concat",
            FusionSpec::Average => "average",
            FusionSpec::Mcb { .. } => "mcb",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FusionSpec::Mcb {
            sketch_dim, seeds, ..
        } = *self
        {
            if sketch_dim == 0 {
                return Err(Error::InvalidArgument(
                    "mcb sketch dim must be at least 1".into(),
                ));
            }
            if seeds.0 == seeds.1 {
                return Err(Error::InvalidArgument(
                    "mcb needs two distinct seeds".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self, dim_x: usize, dim_y: usize) -> usize {
        match *self {
            FusionSpec::Concat => dim_x + dim_y,
            FusionSpec::Average => dim_x,
            FusionSpec::Mcb { sketch_dim, .. } => sketch_dim,
        }
    }
}

/// A [`FusionSpec`] bound to fixed input dims, with sketch params and FFT
/// plans built once.
#[derive(Debug)]
pub struct Fuser {
    spec: FusionSpec,
    dims: (usize, usize),
    mcb: Option<(SketchParams, SketchParams, Convolver, bool)>,
}

impl Fuser {
    pub fn new(spec: FusionSpec, dim_x: usize, dim_y: usize) -> Result<Self> {
        spec.validate()?;
        let mcb = match spec {
            FusionSpec::Mcb {
                sketch_dim,
                seeds,
                normalize,
            } => Some((
                SketchParams::generate(dim_x, sketch_dim, seeds.0)?,
                SketchParams::generate(dim_y, sketch_dim, seeds.1)?,
                Convolver::new(sketch_dim)?,
                normalize,
            )),
            FusionSpec::Average if dim_x != dim_y => {
                return Err(Error::AverageDims {
                    left: dim_x,
                    right: dim_y,
                })
            }
            _ => None,
        };
        Ok(Fuser {
            spec,
            dims: (dim_x, dim_y),
            mcb,
        })
    }

    pub fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim(self.dims.0, self.dims.1)
    }

    pub fn fuse(&self, x: &FeatureVector, y: &FeatureVector) -> Result<FeatureVector> {
        if (x.dim(), y.dim()) != self.dims {
            let (expected, found) = if x.dim() != self.dims.0 {
                (self.dims.0, x.dim())
            } else {
                (self.dims.1, y.dim())
            };
            return Err(Error::DimensionMismatch {
                context: "fusion input",
                expected,
                found,
            });
        }
        match (&self.spec, &self.mcb) {
            (FusionSpec::Concat, _) => Ok(concat_fuse(x, y)),
            (FusionSpec::Average, _) => average_fuse(x, y),
            (FusionSpec::Mcb { .. }, Some((px, py, conv, normalize))) => {
                mcb_fuse_with(conv, x, y, px, py, *normalize)
            }
            (FusionSpec::Mcb { .. }, None) => unreachable!("mcb fuser built without params"),
        }
    }
}
