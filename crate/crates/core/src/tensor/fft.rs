//! Differentiable 2-D discrete Fourier transform pair.
//!
//! The forward transform is unitary (a single 1/sqrt(HW) factor each way), so
//! Parseval holds exactly and the round trip is the identity. Power-of-two
//! extents use iterative radix-2 Cooley-Tukey; everything else goes through
//! Bluestein's chirp-z reformulation on a power-of-two convolution.
//!
//! The DFT is linear, so both backward passes are themselves transforms:
//! the adjoint of the forward map is applied to the output gradient.

use super::Tensor;
use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::rc::Rc;

/// Paired real/imaginary planes of a 2-D spectrum.
#[derive(Clone)]
pub struct ComplexSpectrum {
    pub real: Tensor,
    pub imag: Tensor,
    /// Whether the zero-frequency bin has been shifted to the spatial center.
    pub centered: bool,
}

impl ComplexSpectrum {
    pub fn shape(&self) -> Vec<usize> {
        self.real.shape()
    }

    /// Amplitude plane `sqrt(re^2 + im^2)` as raw values (no graph).
    pub fn amplitude_values(&self) -> Vec<f64> {
        let re = self.real.data_ref();
        let im = self.imag.data_ref();
        re.iter()
            .zip(im.iter())
            .map(|(&r, &i)| r.hypot(i))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Raw kernels (no autodiff) — shared by forward passes, backward closures and
// the synthetic-data generator.
// ---------------------------------------------------------------------------

fn fft_radix2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n < 2 {
        return;
    }
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let base = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // Direct twiddle evaluation keeps error at the eps scale the
                // 1e-10 contracts need.
                let (s, c) = (base * k as f64).sin_cos();
                let (or, oi) = (re[start + k + half], im[start + k + half]);
                let tr = or * c - oi * s;
                let ti = or * s + oi * c;
                let (er, ei) = (re[start + k], im[start + k]);
                re[start + k] = er + tr;
                im[start + k] = ei + ti;
                re[start + k + half] = er - tr;
                im[start + k + half] = ei - ti;
            }
        }
        len <<= 1;
    }
}

/// Unnormalized forward DFT of arbitrary length via Bluestein.
fn fft_bluestein(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let m = (2 * n - 1).next_power_of_two();

    // chirp w_j = exp(-i pi j^2 / n), with j^2 reduced mod 2n for precision
    let chirp = |j: usize| {
        let ang = PI * ((j * j) % (2 * n)) as f64 / n as f64;
        (ang.cos(), -ang.sin())
    };

    let mut ar = vec![0.0; m];
    let mut ai = vec![0.0; m];
    for j in 0..n {
        let (wr, wi) = chirp(j);
        ar[j] = re[j] * wr - im[j] * wi;
        ai[j] = re[j] * wi + im[j] * wr;
    }
    let mut br = vec![0.0; m];
    let mut bi = vec![0.0; m];
    for j in 0..n {
        let (wr, wi) = chirp(j);
        // conj(w_j), mirrored for circular convolution
        br[j] = wr;
        bi[j] = -wi;
        if j != 0 {
            br[m - j] = wr;
            bi[m - j] = -wi;
        }
    }
    fft_radix2(&mut ar, &mut ai, false);
    fft_radix2(&mut br, &mut bi, false);
    for k in 0..m {
        let r = ar[k] * br[k] - ai[k] * bi[k];
        let i = ar[k] * bi[k] + ai[k] * br[k];
        ar[k] = r;
        ai[k] = i;
    }
    fft_radix2(&mut ar, &mut ai, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        let (wr, wi) = chirp(k);
        let cr = ar[k] * scale;
        let ci = ai[k] * scale;
        re[k] = cr * wr - ci * wi;
        im[k] = cr * wi + ci * wr;
    }
}

fn fft1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n.is_power_of_two() {
        fft_radix2(re, im, inverse);
    } else if inverse {
        // IFFT(x) = conj(FFT(conj(x))), unnormalized
        for v in im.iter_mut() {
            *v = -*v;
        }
        fft_bluestein(re, im);
        for v in im.iter_mut() {
            *v = -*v;
        }
    } else {
        fft_bluestein(re, im);
    }
}

/// In-place unitary 2-D transform over row-major `[h, w]` planes.
pub(crate) fn dft2_unitary(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    for row in 0..h {
        fft1d(
            &mut re[row * w..(row + 1) * w],
            &mut im[row * w..(row + 1) * w],
            inverse,
        );
    }
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for col in 0..w {
        for row in 0..h {
            cr[row] = re[row * w + col];
            ci[row] = im[row * w + col];
        }
        fft1d(&mut cr, &mut ci, inverse);
        for row in 0..h {
            re[row * w + col] = cr[row];
            im[row * w + col] = ci[row];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in re.iter_mut() {
        *v *= scale;
    }
    for v in im.iter_mut() {
        *v *= scale;
    }
}

fn spatial_extents(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::shape(
            op,
            format!("expected [H, W], got {:?}", shape),
        ));
    }
    let (h, w) = (shape[0], shape[1]);
    if h < 2 || w < 2 {
        return Err(Error::invalid(
            op,
            format!("spatial extents must be at least 2, got {}x{}", h, w),
        ));
    }
    Ok((h, w))
}

// ---------------------------------------------------------------------------
// Autodiff ops
// ---------------------------------------------------------------------------

/// Unitary 2-D FFT of a real `[H, W]` map.
pub fn fft2(x: &Tensor) -> Result<ComplexSpectrum> {
    let (h, w) = spatial_extents("fft2", &x.shape())?;
    let mut re = x.data();
    let mut im = vec![0.0; re.len()];
    dft2_unitary(&mut re, &mut im, h, w, false);

    // With re = (1/sqrt N) sum x cos(theta) and im = -(1/sqrt N) sum x sin(theta),
    // d/dx through the real plane is Re(F(g_re)) and through the imaginary
    // plane +Im(F(g_im)). Both follow from linearity of the transform.
    let px = x.clone();
    let real = Tensor::from_op(vec![h, w], re, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut gr = go.to_vec();
        let mut gi = vec![0.0; go.len()];
        dft2_unitary(&mut gr, &mut gi, h, w, false);
        px.grad_add(&gr);
    });
    let px = x.clone();
    let imag = Tensor::from_op(vec![h, w], im, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut gr = go.to_vec();
        let mut gi = vec![0.0; go.len()];
        dft2_unitary(&mut gr, &mut gi, h, w, false);
        px.grad_add(&gi);
    });
    Ok(ComplexSpectrum {
        real,
        imag,
        centered: false,
    })
}

/// Unitary inverse 2-D FFT; the imaginary residue of the result is discarded.
pub fn ifft2(s: &ComplexSpectrum) -> Result<Tensor> {
    let shape = s.real.shape();
    if shape != s.imag.shape() {
        return Err(Error::shape(
            "ifft2",
            format!("real {:?} vs imag {:?}", shape, s.imag.shape()),
        ));
    }
    let (h, w) = spatial_extents("ifft2", &shape)?;
    let mut re = s.real.data();
    let mut im = s.imag.data();
    dft2_unitary(&mut re, &mut im, h, w, true);

    let (pre, pim) = (s.real.clone(), s.imag.clone());
    Ok(Tensor::from_op(
        vec![h, w],
        re,
        &[&s.real, &s.imag],
        move |go| {
            let mut gr = go.to_vec();
            let mut gi = vec![0.0; go.len()];
            dft2_unitary(&mut gr, &mut gi, h, w, false);
            if pre.requires_grad() {
                pre.grad_add(&gr);
            }
            if pim.requires_grad() {
                pim.grad_add(&gi);
            }
        },
    ))
}

fn shift_permutation(h: usize, w: usize, inverse: bool) -> Rc<Vec<usize>> {
    let (dh, dw) = (h / 2, w / 2);
    let mut perm = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = if inverse {
                ((i + dh) % h, (j + dw) % w)
            } else {
                ((i + h - dh) % h, (j + w - dw) % w)
            };
            perm.push(si * w + sj);
        }
    }
    Rc::new(perm)
}

/// Relocates the zero-frequency bin to the spatial center.
pub fn fftshift(s: &ComplexSpectrum) -> Result<ComplexSpectrum> {
    let shape = s.shape();
    let (h, w) = (shape[0], shape[1]);
    let perm = shift_permutation(h, w, false);
    Ok(ComplexSpectrum {
        real: s.real.index_permute(Rc::clone(&perm), &shape)?,
        imag: s.imag.index_permute(perm, &shape)?,
        centered: true,
    })
}

/// Inverse of [`fftshift`] for all extents, odd included.
pub fn ifftshift(s: &ComplexSpectrum) -> Result<ComplexSpectrum> {
    let shape = s.shape();
    let (h, w) = (shape[0], shape[1]);
    let perm = shift_permutation(h, w, true);
    Ok(ComplexSpectrum {
        real: s.real.index_permute(Rc::clone(&perm), &shape)?,
        imag: s.imag.index_permute(perm, &shape)?,
        centered: false,
    })
}

const AMP_GUARD: f64 = 1e-12;

/// Amplitude and quadrant-correct phase planes. Phase at a zero bin is 0.
pub fn amp_phase(s: &ComplexSpectrum) -> Result<(Tensor, Tensor)> {
    let shape = s.shape();
    if shape != s.imag.shape() {
        return Err(Error::shape(
            "amp_phase",
            format!("real {:?} vs imag {:?}", shape, s.imag.shape()),
        ));
    }
    let (amp_data, phase_data): (Vec<f64>, Vec<f64>) = {
        let re = s.real.data_ref();
        let im = s.imag.data_ref();
        re.iter()
            .zip(im.iter())
            .map(|(&r, &i)| {
                let a = r.hypot(i);
                let p = if a == 0.0 { 0.0 } else { i.atan2(r) };
                (a, p)
            })
            .unzip()
    };

    // d amp/d re = re/amp, d amp/d im = im/amp, guarded at the origin.
    let (pre, pim) = (s.real.clone(), s.imag.clone());
    let amp = Tensor::from_op(shape.clone(), amp_data, &[&s.real, &s.imag], move |go| {
        let (gr, gi): (Vec<f64>, Vec<f64>) = {
            let re = pre.data_ref();
            let im = pim.data_ref();
            re.iter()
                .zip(im.iter())
                .zip(go)
                .map(|((&r, &i), &g)| {
                    let a = r.hypot(i).max(AMP_GUARD);
                    (g * r / a, g * i / a)
                })
                .unzip()
        };
        if pre.requires_grad() {
            pre.grad_add(&gr);
        }
        if pim.requires_grad() {
            pim.grad_add(&gi);
        }
    });

    // d phase/d re = -im/amp^2, d phase/d im = re/amp^2.
    let (pre, pim) = (s.real.clone(), s.imag.clone());
    let phase = Tensor::from_op(shape, phase_data, &[&s.real, &s.imag], move |go| {
        let (gr, gi): (Vec<f64>, Vec<f64>) = {
            let re = pre.data_ref();
            let im = pim.data_ref();
            re.iter()
                .zip(im.iter())
                .zip(go)
                .map(|((&r, &i), &g)| {
                    let a2 = (r * r + i * i).max(AMP_GUARD * AMP_GUARD);
                    (-g * i / a2, g * r / a2)
                })
                .unzip()
        };
        if pre.requires_grad() {
            pre.grad_add(&gr);
        }
        if pim.requires_grad() {
            pim.grad_add(&gi);
        }
    });
    Ok((amp, phase))
}

/// Rebuilds a spectrum from amplitude and phase planes.
pub fn reconstruct(amp: &Tensor, phase: &Tensor, centered: bool) -> Result<ComplexSpectrum> {
    if amp.shape() != phase.shape() {
        return Err(Error::shape(
            "reconstruct",
            format!("amp {:?} vs phase {:?}", amp.shape(), phase.shape()),
        ));
    }
    Ok(ComplexSpectrum {
        real: amp.mul(&phase.cos())?,
        imag: amp.mul(&phase.sin())?,
        centered,
    })
}
