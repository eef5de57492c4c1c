//! Frequency-guided spatial attention.
//!
//! The input map is pooled to a single channel, moved to the centered
//! frequency domain, and its amplitude spectrum is split into non-overlapping
//! radial rings of width `d`. A tiny FC stack over the per-ring means produces
//! one multiplicative weight per ring; the reweighted amplitude is combined
//! with the untouched phase, transformed back, min-max normalized into a
//! spatial attention map `M`, and applied residually: `F_out = F + M * F`.

use crate::error::{Error, Result};
use crate::tensor::{
    amp_phase, assemble_groups, channel_max, channel_mean, concat, fft2, fftshift, ifft2,
    ifftshift, linear, reconstruct, slice, ParamSet, Tensor,
};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

pub const LEAKY_SLOPE: f64 = 0.01;
const MINMAX_FLOOR: f64 = 1e-8;

/// How residual-style parameters are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Output projections and final FC layers start at zero, so fresh modules
    /// are exact identities (FC output is exactly 1 here).
    ZeroResidual,
    /// Fully random initialization; used to verify gradient wiring.
    Random,
}

// ---------------------------------------------------------------------------
// Ring partition
// ---------------------------------------------------------------------------

/// Precomputed assignment of centered-spectrum bins to radial rings.
pub struct RingPartition {
    pub height: usize,
    pub width: usize,
    pub d: usize,
    pub n_rings: usize,
    /// Ring id of every bin, row-major.
    pub ring_index: Vec<usize>,
    /// Bin count per ring (the ring's P).
    pub ring_counts: Vec<usize>,
    /// Row-major flat indices of each ring's bins.
    index_lists: Vec<Rc<Vec<usize>>>,
}

/// Partitions an `H x W` centered spectrum into `floor(R/d)` rings with
/// `R = floor(min(H, W)/2)`. Bins past the outermost ring boundary (the
/// rectangular corners a circle cannot cover) join the last ring so the
/// partition stays disjoint and covering.
pub fn build_ring_partition(height: usize, width: usize, d: usize) -> Result<RingPartition> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(
            "build_ring_partition",
            format!("extents must be at least 2, got {}x{}", height, width),
        ));
    }
    let r = height.min(width) / 2;
    if d == 0 || d > r {
        return Err(Error::invalid(
            "build_ring_partition",
            format!("ring width {} outside [1, {}]", d, r),
        ));
    }
    let n_rings = r / d;
    let (cy, cx) = (height as isize / 2, width as isize / 2);
    let mut ring_index = vec![0usize; height * width];
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n_rings];
    for i in 0..height {
        for j in 0..width {
            let dy = i as isize - cy;
            let dx = j as isize - cx;
            let dist = ((dy * dy + dx * dx) as f64).sqrt();
            let ring = ((dist / d as f64).floor() as usize).min(n_rings - 1);
            ring_index[i * width + j] = ring;
            lists[ring].push(i * width + j);
        }
    }
    let ring_counts: Vec<usize> = lists.iter().map(Vec::len).collect();
    debug_assert_eq!(ring_counts.iter().sum::<usize>(), height * width);
    Ok(RingPartition {
        height,
        width,
        d,
        n_rings,
        ring_index,
        ring_counts,
        index_lists: lists.into_iter().map(Rc::new).collect(),
    })
}

impl RingPartition {
    pub fn bin_indices(&self, ring: usize) -> &[usize] {
        &self.index_lists[ring]
    }
}

// ---------------------------------------------------------------------------
// FC parameters
// ---------------------------------------------------------------------------

/// The two 1x1 convolutions (with a LeakyReLU between) that map the
/// `n_rings` ring descriptor to `n_rings` recalibration weights.
/// Cloning shares the underlying parameter storage.
#[derive(Clone)]
pub struct FgsAttnParams {
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
    pub n_rings: usize,
}

impl FgsAttnParams {
    pub fn new(n_rings: usize, rng: &mut ChaCha8Rng, init: InitMode) -> FgsAttnParams {
        let fc1_weight = crate::tensor::init_kaiming(rng, &[n_rings, n_rings], n_rings);
        let fc2_weight = match init {
            InitMode::ZeroResidual => Tensor::zeros(&[n_rings, n_rings]),
            InitMode::Random => crate::tensor::init_kaiming(rng, &[n_rings, n_rings], n_rings),
        };
        FgsAttnParams {
            fc1_weight,
            fc1_bias: Tensor::zeros(&[n_rings]),
            fc2_weight,
            // bias 1 on the final layer: fresh FC output is (exactly) all ones
            fc2_bias: Tensor::full(&[n_rings], 1.0),
            n_rings,
        }
    }

    /// FC that outputs exactly all-ones regardless of input.
    pub fn identity(n_rings: usize) -> FgsAttnParams {
        FgsAttnParams {
            fc1_weight: Tensor::zeros(&[n_rings, n_rings]),
            fc1_bias: Tensor::zeros(&[n_rings]),
            fc2_weight: Tensor::zeros(&[n_rings, n_rings]),
            fc2_bias: Tensor::full(&[n_rings], 1.0),
            n_rings,
        }
    }

    /// FC that outputs exactly all-zeros regardless of input.
    pub fn zero(n_rings: usize) -> FgsAttnParams {
        FgsAttnParams {
            fc2_bias: Tensor::zeros(&[n_rings]),
            ..FgsAttnParams::identity(n_rings)
        }
    }

    pub fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/fc1_weight"), &self.fc1_weight, trainable);
        params.insert(format!("{prefix}/fc1_bias"), &self.fc1_bias, trainable);
        params.insert(format!("{prefix}/fc2_weight"), &self.fc2_weight, trainable);
        params.insert(format!("{prefix}/fc2_bias"), &self.fc2_bias, trainable);
    }

    /// `n_rings -> n_rings` descriptor map.
    fn forward(&self, descriptor: &Tensor) -> Result<Tensor> {
        if descriptor.shape() != vec![self.n_rings] {
            return Err(Error::shape(
                "fgsattn_fc",
                format!(
                    "descriptor {:?} for {} rings",
                    descriptor.shape(),
                    self.n_rings
                ),
            ));
        }
        let row = descriptor.reshape(&[1, self.n_rings])?;
        let hidden = linear(&row, &self.fc1_weight, Some(&self.fc1_bias))?.leaky_relu(LEAKY_SLOPE);
        let out = linear(&hidden, &self.fc2_weight, Some(&self.fc2_bias))?;
        out.reshape(&[self.n_rings])
    }
}

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

/// `AvgPool(F) + MaxPool(F)` over channels: `[H,W,C] -> [H,W,1]`.
pub fn channel_pool(f: &Tensor) -> Result<Tensor> {
    channel_mean(f)?.add(&channel_max(f)?)
}

/// Gathers amplitude values into per-ring groups, row-major within each ring.
pub fn ring_group(amp: &Tensor, part: &RingPartition) -> Result<Vec<Tensor>> {
    if amp.shape() != vec![part.height, part.width] {
        return Err(Error::shape(
            "ring_group",
            format!(
                "amplitude {:?} for {}x{} partition",
                amp.shape(),
                part.height,
                part.width
            ),
        ));
    }
    (0..part.n_rings)
        .map(|k| amp.gather_flat(Rc::clone(&part.index_lists[k])))
        .collect()
}

/// Scatters per-ring groups back onto the `[H, W]` grid; together the groups
/// cover every bin exactly once, so untouched groups round-trip bit-exactly.
pub fn ring_scatter(groups: &[Tensor], part: &RingPartition) -> Result<Tensor> {
    let refs: Vec<&Tensor> = groups.iter().collect();
    assemble_groups(&refs, &part.index_lists, &[part.height, part.width])
}

/// Reweights each ring by `FC(GAP(F_freq))`: the per-ring mean descriptor is
/// mapped to one scalar weight per ring, broadcast onto that ring's values.
pub fn recalibrate(groups: &[Tensor], params: &FgsAttnParams) -> Result<Vec<Tensor>> {
    if groups.len() != params.n_rings {
        return Err(Error::shape(
            "recalibrate",
            format!("{} groups for {} rings", groups.len(), params.n_rings),
        ));
    }
    let means: Vec<Tensor> = groups.iter().map(Tensor::mean).collect();
    let mean_refs: Vec<&Tensor> = means.iter().collect();
    let descriptor = concat(&mean_refs, 0)?;
    let weights = params.forward(&descriptor)?;
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| g.mul(&slice(&weights, 0, k, 1)?))
        .collect()
}

/// `(m - min) / max(max - min, eps)`: constant maps normalize to all zeros;
/// anything else spans exactly [0, 1].
pub fn min_max_normalize(m: &Tensor) -> Result<Tensor> {
    let lo = m.min_all();
    let range = m.max_all().sub(&lo)?.clamp_min(MINMAX_FLOOR);
    m.sub(&lo)?.div(&range)
}

/// Intermediates of one attention pass, for inspection and dumps.
pub struct FgsAttnTrace {
    /// Pooled single-channel map `F_g`, shape `[H, W]`.
    pub pooled: Tensor,
    /// Centered amplitude spectrum.
    pub amp: Tensor,
    /// Centered phase spectrum (reused untouched for reconstruction).
    pub phase: Tensor,
    /// Recalibrated amplitude.
    pub amp_recal: Tensor,
    /// Normalized spatial attention map, shape `[H, W]`.
    pub attention: Tensor,
}

/// Full attention pass returning `(F_out, M)` with `M` shaped `[H, W, 1]`.
pub fn fgsattn_forward(
    f: &Tensor,
    params: &FgsAttnParams,
    part: &RingPartition,
) -> Result<(Tensor, Tensor)> {
    let (out, trace) = fgsattn_forward_traced(f, params, part)?;
    let shape = trace.attention.shape();
    let m = trace.attention.reshape(&[shape[0], shape[1], 1])?;
    Ok((out, m))
}

/// As [`fgsattn_forward`], also exposing the pipeline intermediates.
pub fn fgsattn_forward_traced(
    f: &Tensor,
    params: &FgsAttnParams,
    part: &RingPartition,
) -> Result<(Tensor, FgsAttnTrace)> {
    let shape = f.shape();
    if shape.len() != 3 {
        return Err(Error::shape(
            "fgsattn_forward",
            format!("expected [H, W, C], got {:?}", shape),
        ));
    }
    let (h, w) = (shape[0], shape[1]);
    if h != part.height || w != part.width {
        return Err(Error::shape(
            "fgsattn_forward",
            format!(
                "{}x{} input for {}x{} partition",
                h, w, part.height, part.width
            ),
        ));
    }

    let pooled = channel_pool(f)?.reshape(&[h, w])?;
    let centered = fftshift(&fft2(&pooled)?)?;
    let (amp, phase) = amp_phase(&centered)?;

    let groups = ring_group(&amp, part)?;
    let recal = recalibrate(&groups, params)?;
    let amp_recal = ring_scatter(&recal, part)?;

    let spectrum = reconstruct(&amp_recal, &phase, true)?;
    let spatial = ifft2(&ifftshift(&spectrum)?)?;
    let attention = min_max_normalize(&spatial)?;

    let m = attention.reshape(&[h, w, 1])?;
    let f_out = f.add(&m.mul(f)?)?;
    Ok((
        f_out,
        FgsAttnTrace {
            pooled,
            amp,
            phase,
            amp_recal,
            attention,
        },
    ))
}

/// Applies the attention over a serialized token grid: `[N, D]` tokens are
/// reshaped to `[h, w, D]`, passed through the attention, and flattened back.
pub fn fgsattn_tokens(
    tokens: &Tensor,
    grid: (usize, usize),
    params: &FgsAttnParams,
    part: &RingPartition,
) -> Result<Tensor> {
    Ok(fgsattn_tokens_traced(tokens, grid, params, part)?.0)
}

pub fn fgsattn_tokens_traced(
    tokens: &Tensor,
    grid: (usize, usize),
    params: &FgsAttnParams,
    part: &RingPartition,
) -> Result<(Tensor, FgsAttnTrace)> {
    let shape = tokens.shape();
    let (h, w) = grid;
    if shape.len() != 2 || shape[0] != h * w {
        return Err(Error::shape(
            "fgsattn_tokens",
            format!("{:?} tokens for {}x{} grid", shape, h, w),
        ));
    }
    let d = shape[1];
    let spatial = tokens.reshape(&[h, w, d])?;
    let (out, trace) = fgsattn_forward_traced(&spatial, params, part)?;
    Ok((out.reshape(&[h * w, d])?, trace))
}

/// Bundled attention module: parameters plus the partition for its map size.
pub struct FgsAttn {
    pub params: FgsAttnParams,
    pub part: RingPartition,
}

impl FgsAttn {
    /// Builds the module for an `h x w` map, clamping the requested ring
    /// width to the largest geometrically valid value.
    pub fn new(
        h: usize,
        w: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
        init: InitMode,
    ) -> Result<FgsAttn> {
        let d_eff = d.clamp(1, (h.min(w) / 2).max(1));
        let part = build_ring_partition(h, w, d_eff)?;
        let params = FgsAttnParams::new(part.n_rings, rng, init);
        Ok(FgsAttn { params, part })
    }

    pub fn forward(&self, f: &Tensor) -> Result<(Tensor, Tensor)> {
        fgsattn_forward(f, &self.params, &self.part)
    }

    pub fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        self.params.register(params, prefix, trainable);
    }
}
