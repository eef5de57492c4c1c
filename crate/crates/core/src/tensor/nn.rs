//! Standard differentiable layers over channels-last `[H, W, C]` maps and
//! `[N, D]` token matrices.

use super::{slice, softmax_backward_rows, Tensor};
use crate::error::{Error, Result};

fn expect_rank3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape(op, format!("expected [H, W, C], got {:?}", s)));
    }
    Ok((s[0], s[1], s[2]))
}

fn conv_out_extent(
    op: &'static str,
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::invalid(
            op,
            format!("kernel {} larger than padded extent {}", k, padded),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// 2-D convolution: `x [H,W,Cin] * w [kh,kw,Cin,Cout] (+ b [Cout])`, zero padding.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (h, win, cin) = expect_rank3("conv2d", x)?;
    let ws = w.shape();
    if ws.len() != 4 || ws[2] != cin {
        return Err(Error::shape(
            "conv2d",
            format!("weights {:?} for input {:?}", ws, x.shape()),
        ));
    }
    let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
    if let Some(b) = b {
        if b.shape() != vec![cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} for {} output channels", b.shape(), cout),
            ));
        }
    }
    let ho = conv_out_extent("conv2d", h, kh, stride, pad)?;
    let wo = conv_out_extent("conv2d", win, kw, stride, pad)?;

    let mut data = vec![0.0; ho * wo * cout];
    {
        let xd = x.data_ref();
        let wd = w.data_ref();
        for oy in 0..ho {
            for ox in 0..wo {
                let out_base = (oy * wo + ox) * cout;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= win as isize {
                            continue;
                        }
                        let x_base = ((iy as usize) * win + ix as usize) * cin;
                        let w_base = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[x_base + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wd[w_base + ci * cout..w_base + (ci + 1) * cout];
                            let orow = &mut data[out_base..out_base + cout];
                            for co in 0..cout {
                                orow[co] += xv * wrow[co];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = b {
            let bd = b.data_ref();
            for px in 0..ho * wo {
                for co in 0..cout {
                    data[px * cout + co] += bd[co];
                }
            }
        }
    }

    let px = x.clone();
    let pw = w.clone();
    let pb = b.cloned();
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    Ok(Tensor::from_op(
        vec![ho, wo, cout],
        data,
        &parents,
        move |go| {
            let need_x = px.requires_grad();
            let need_w = pw.requires_grad();
            let mut gx = need_x.then(|| vec![0.0; px.numel()]);
            let mut gw = need_w.then(|| vec![0.0; pw.numel()]);
            if need_x || need_w {
                let xd = px.data_ref();
                let wd = pw.data_ref();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let out_base = (oy * wo + ox) * cout;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= win as isize {
                                    continue;
                                }
                                let x_base = ((iy as usize) * win + ix as usize) * cin;
                                let w_base = (ky * kw + kx) * cin * cout;
                                for ci in 0..cin {
                                    let grow = &go[out_base..out_base + cout];
                                    let wrow = &wd[w_base + ci * cout..w_base + (ci + 1) * cout];
                                    if let Some(gx) = gx.as_mut() {
                                        let mut acc = 0.0;
                                        for co in 0..cout {
                                            acc += grow[co] * wrow[co];
                                        }
                                        gx[x_base + ci] += acc;
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        let xv = xd[x_base + ci];
                                        if xv != 0.0 {
                                            let gwrow = &mut gw
                                                [w_base + ci * cout..w_base + (ci + 1) * cout];
                                            for co in 0..cout {
                                                gwrow[co] += xv * grow[co];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(g) = gx {
                px.grad_add(&g);
            }
            if let Some(g) = gw {
                pw.grad_add(&g);
            }
            if let Some(b) = &pb {
                if b.requires_grad() {
                    let mut gb = vec![0.0; cout];
                    for pxl in 0..ho * wo {
                        for co in 0..cout {
                            gb[co] += go[pxl * cout + co];
                        }
                    }
                    b.grad_add(&gb);
                }
            }
        },
    ))
}

/// Depthwise 3x3-style convolution: `x [H,W,C] * w [kh,kw,C] (+ b [C])`.
pub fn conv2d_depthwise(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (h, win, c) = expect_rank3("conv2d_depthwise", x)?;
    let ws = w.shape();
    if ws.len() != 3 || ws[2] != c {
        return Err(Error::shape(
            "conv2d_depthwise",
            format!("weights {:?} for input {:?}", ws, x.shape()),
        ));
    }
    let (kh, kw) = (ws[0], ws[1]);
    let ho = conv_out_extent("conv2d_depthwise", h, kh, stride, pad)?;
    let wo = conv_out_extent("conv2d_depthwise", win, kw, stride, pad)?;

    let mut data = vec![0.0; ho * wo * c];
    {
        let xd = x.data_ref();
        let wd = w.data_ref();
        for oy in 0..ho {
            for ox in 0..wo {
                let out_base = (oy * wo + ox) * c;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= win as isize {
                            continue;
                        }
                        let x_base = ((iy as usize) * win + ix as usize) * c;
                        let w_base = (ky * kw + kx) * c;
                        for ch in 0..c {
                            data[out_base + ch] += xd[x_base + ch] * wd[w_base + ch];
                        }
                    }
                }
            }
        }
        if let Some(b) = b {
            let bd = b.data_ref();
            for pxl in 0..ho * wo {
                for ch in 0..c {
                    data[pxl * c + ch] += bd[ch];
                }
            }
        }
    }

    let px = x.clone();
    let pw = w.clone();
    let pb = b.cloned();
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    Ok(Tensor::from_op(
        vec![ho, wo, c],
        data,
        &parents,
        move |go| {
            let need_x = px.requires_grad();
            let need_w = pw.requires_grad();
            let mut gx = need_x.then(|| vec![0.0; px.numel()]);
            let mut gw = need_w.then(|| vec![0.0; pw.numel()]);
            if need_x || need_w {
                let xd = px.data_ref();
                let wd = pw.data_ref();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let out_base = (oy * wo + ox) * c;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= win as isize {
                                    continue;
                                }
                                let x_base = ((iy as usize) * win + ix as usize) * c;
                                let w_base = (ky * kw + kx) * c;
                                for ch in 0..c {
                                    let g = go[out_base + ch];
                                    if let Some(gx) = gx.as_mut() {
                                        gx[x_base + ch] += g * wd[w_base + ch];
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw[w_base + ch] += g * xd[x_base + ch];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(g) = gx {
                px.grad_add(&g);
            }
            if let Some(g) = gw {
                pw.grad_add(&g);
            }
            if let Some(b) = &pb {
                if b.requires_grad() {
                    let mut gb = vec![0.0; c];
                    for pxl in 0..ho * wo {
                        for ch in 0..c {
                            gb[ch] += go[pxl * c + ch];
                        }
                    }
                    b.grad_add(&gb);
                }
            }
        },
    ))
}

/// Max pooling; on ties the gradient routes to the first maximum in scan order.
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (h, w, c) = expect_rank3("maxpool2d", x)?;
    let ho = conv_out_extent("maxpool2d", h, k, stride, 0)?;
    let wo = conv_out_extent("maxpool2d", w, k, stride, 0)?;
    let mut data = vec![0.0; ho * wo * c];
    let mut argmax = vec![0usize; ho * wo * c];
    {
        let xd = x.data_ref();
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if xd[idx] > best {
                                best = xd[idx];
                                arg = idx;
                            }
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    data[o] = best;
                    argmax[o] = arg;
                }
            }
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![ho, wo, c], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for (o, &src) in argmax.iter().enumerate() {
            g[src] += go[o];
        }
        px.grad_add(&g);
    }))
}

/// Per-pixel mean over channels: `[H,W,C] -> [H,W,1]`.
pub fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = expect_rank3("channel_mean", x)?;
    let data: Vec<f64> = {
        let xd = x.data_ref();
        (0..h * w)
            .map(|pxl| xd[pxl * c..(pxl + 1) * c].iter().sum::<f64>() / c as f64)
            .collect()
    };
    let px = x.clone();
    Ok(Tensor::from_op(vec![h, w, 1], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for pxl in 0..h * w {
            let share = go[pxl] / c as f64;
            for ch in 0..c {
                g[pxl * c + ch] = share;
            }
        }
        px.grad_add(&g);
    }))
}

/// Per-pixel maximum over channels: `[H,W,C] -> [H,W,1]`; first-max tie routing.
pub fn channel_max(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = expect_rank3("channel_max", x)?;
    let mut data = vec![0.0; h * w];
    let mut argmax = vec![0usize; h * w];
    {
        let xd = x.data_ref();
        for pxl in 0..h * w {
            let row = &xd[pxl * c..(pxl + 1) * c];
            let mut best = row[0];
            let mut arg = 0usize;
            for (ch, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    arg = ch;
                }
            }
            data[pxl] = best;
            argmax[pxl] = pxl * c + arg;
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![h, w, 1], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for (pxl, &src) in argmax.iter().enumerate() {
            g[src] += go[pxl];
        }
        px.grad_add(&g);
    }))
}

/// Spatial mean per channel: `[H,W,C] -> [C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = expect_rank3("global_avg_pool", x)?;
    let n = (h * w) as f64;
    let mut data = vec![0.0; c];
    {
        let xd = x.data_ref();
        for pxl in 0..h * w {
            for ch in 0..c {
                data[ch] += xd[pxl * c + ch];
            }
        }
        for v in data.iter_mut() {
            *v /= n;
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![c], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for pxl in 0..h * w {
            for ch in 0..c {
                g[pxl * c + ch] = go[ch] / n;
            }
        }
        px.grad_add(&g);
    }))
}

/// Affine projection of token rows: `x [N,Din] . w [Din,Dout] + b`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let out = x.matmul(w)?;
    match b {
        Some(b) => out.add(b),
        None => Ok(out),
    }
}

/// Row-wise normalization `(x - mean) / sqrt(var + eps)` over the last axis
/// of an `[N, D]` matrix. Affine parameters compose outside.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "layer_norm",
            format!("expected [N, D], got {:?}", s),
        ));
    }
    let (n, d) = (s[0], s[1]);
    let mut data = vec![0.0; n * d];
    let mut inv_sigma = vec![0.0; n];
    {
        let xd = x.data_ref();
        for row in 0..n {
            let xr = &xd[row * d..(row + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[row] = is;
            for (o, &v) in data[row * d..(row + 1) * d].iter_mut().zip(xr) {
                *o = (v - mu) * is;
            }
        }
    }
    let normalized = data.clone();
    let px = x.clone();
    Ok(Tensor::from_op(vec![n, d], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; n * d];
        for row in 0..n {
            let xhat = &normalized[row * d..(row + 1) * d];
            let gr = &go[row * d..(row + 1) * d];
            let mean_g = gr.iter().sum::<f64>() / d as f64;
            let mean_gx = gr.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for col in 0..d {
                g[row * d + col] = inv_sigma[row] * (gr[col] - mean_g - xhat[col] * mean_gx);
            }
        }
        px.grad_add(&g);
    }))
}

/// Numerically stable softmax over the last axis of an `[N, D]` matrix.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "softmax",
            format!("expected [N, D], got {:?}", s),
        ));
    }
    let (n, d) = (s[0], s[1]);
    let mut data = vec![0.0; n * d];
    {
        let xd = x.data_ref();
        for row in 0..n {
            let xr = &xd[row * d..(row + 1) * d];
            let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in data[row * d..(row + 1) * d].iter_mut().zip(xr) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in data[row * d..(row + 1) * d].iter_mut() {
                *o /= z;
            }
        }
    }
    let y = data.clone();
    let px = x.clone();
    Ok(Tensor::from_op(vec![n, d], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        px.grad_add(&softmax_backward_rows(&y, go, n, d));
    }))
}

/// Bilinear resize of `[H,W,C]` maps with half-pixel centers.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (h, w, c) = expect_rank3("bilinear_resize", x)?;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("bilinear_resize", "zero output extent"));
    }
    // (source low index, high index, high weight) per output coordinate
    let axis_map = |out_n: usize, in_n: usize| -> Vec<(usize, usize, f64)> {
        (0..out_n)
            .map(|o| {
                let src = ((o as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5)
                    .clamp(0.0, (in_n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_n - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ymap = axis_map(oh, h);
    let xmap = axis_map(ow, w);

    let mut data = vec![0.0; oh * ow * c];
    {
        let xd = x.data_ref();
        for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                let o_base = (oy * ow + ox) * c;
                for ch in 0..c {
                    let v00 = xd[(y0 * w + x0) * c + ch];
                    let v01 = xd[(y0 * w + x1) * c + ch];
                    let v10 = xd[(y1 * w + x0) * c + ch];
                    let v11 = xd[(y1 * w + x1) * c + ch];
                    data[o_base + ch] = v00 * (1.0 - wy) * (1.0 - wx)
                        + v01 * (1.0 - wy) * wx
                        + v10 * wy * (1.0 - wx)
                        + v11 * wy * wx;
                }
            }
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![oh, ow, c], data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                let o_base = (oy * ow + ox) * c;
                for ch in 0..c {
                    let gv = go[o_base + ch];
                    g[(y0 * w + x0) * c + ch] += gv * (1.0 - wy) * (1.0 - wx);
                    g[(y0 * w + x1) * c + ch] += gv * (1.0 - wy) * wx;
                    g[(y1 * w + x0) * c + ch] += gv * wy * (1.0 - wx);
                    g[(y1 * w + x1) * c + ch] += gv * wy * wx;
                }
            }
        }
        px.grad_add(&g);
    }))
}

/// Multi-head scaled dot-product attention over already-projected streams.
/// `q [Nq, D]`, `k`/`v` `[Nk, D]`; `D` must divide evenly into `heads`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks != vs {
        return Err(Error::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", qs, ks, vs),
        ));
    }
    let d = qs[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(
            "attention",
            format!("{} heads over width {}", heads, d),
        ));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = slice(q, 1, head * dh, dh)?;
        let kh = slice(k, 1, head * dh, dh)?;
        let vh = slice(v, 1, head * dh, dh)?;
        let scores = qh.matmul(&kh.transpose2d()?)?.scale(scale);
        let weights = softmax_rows(&scores)?;
        outputs.push(weights.matmul(&vh)?);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    super::concat(&refs, 1)
}
