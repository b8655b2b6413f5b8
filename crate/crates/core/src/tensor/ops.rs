//! Forward and backward kernels. Every backward takes the forward inputs and
//! the upstream gradient and returns gradients with the inputs' shapes.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// `c = beta * c + a * b` for row/column strided matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    (rsa, csa): (usize, usize),
    b: &[Real],
    (rsb, csb): (usize, usize),
    beta: Real,
    c: &mut [Real],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: a too small");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: b too small");
    assert!(m * n <= c.len(), "gemm: c too small");
    // SAFETY: the assertions above bound every index the kernel touches; c is
    // densely row-major with row stride n.
    unsafe {
        #[cfg(not(feature = "single-precision"))]
        let kernel = matrixmultiply::dgemm;
        #[cfg(feature = "single-precision")]
        let kernel = matrixmultiply::sgemm;
        kernel(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Stride, zero padding and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            dilation: 1,
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self {
            stride,
            pad,
            dilation,
        }
    }

    /// Output extent along one axis.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::Geometry(format!(
                "stride and dilation must be at least 1, got {self:?}"
            )));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        if padded < span {
            return Err(Error::Geometry(format!(
                "kernel extent {span} exceeds padded input {padded}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.pad == 0
    }
}

struct ConvShape {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_shape(input: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<ConvShape> {
    let (&[n, cin, h, w], &[cout, wcin, kh, kw]) = (input.shape(), weight.shape()) else {
        return Err(Error::Dimension(format!(
            "conv2d expects input [N,C,H,W] and weight [O,C,kh,kw], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if cin != wcin {
        return Err(Error::Dimension(format!(
            "conv2d input has {cin} channels but weight expects {wcin}"
        )));
    }
    let ho = geom.output_extent(h, kh)?;
    let wo = geom.output_extent(w, kw)?;
    Ok(ConvShape {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
    })
}

fn im2col(s: &ConvShape, geom: ConvGeometry, image: &[Real], cols: &mut [Real]) {
    let plane = s.out_plane();
    for ci in 0..s.cin {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = (oy * geom.stride + ki * geom.dilation) as isize - geom.pad as isize;
                    let line = &mut dst[oy * s.wo..(oy + 1) * s.wo];
                    if iy < 0 || iy >= s.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &image[(ci * s.h + iy as usize) * s.w..][..s.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix =
                            (ox * geom.stride + kj * geom.dilation) as isize - geom.pad as isize;
                        *v = if ix < 0 || ix >= s.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(s: &ConvShape, geom: ConvGeometry, cols: &[Real], image: &mut [Real]) {
    let plane = s.out_plane();
    for ci in 0..s.cin {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = (oy * geom.stride + ki * geom.dilation) as isize - geom.pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut image[(ci * s.h + iy as usize) * s.w..][..s.w];
                    for ox in 0..s.wo {
                        let ix =
                            (ox * geom.stride + kj * geom.dilation) as isize - geom.pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] += src[oy * s.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) with bias.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let s = conv_shape(input, weight, geom)?;
    if bias.shape() != [s.cout] {
        return Err(Error::Dimension(format!(
            "conv2d bias must be [{}], got {:?}",
            s.cout,
            bias.shape()
        )));
    }
    let plane = s.out_plane();
    let in_size = s.cin * s.h * s.w;
    let patch = s.patch();
    let pointwise = geom.is_pointwise(s.kh, s.kw);
    let mut out = vec![0.0; s.n * s.cout * plane];
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; patch * plane]
    };
    for b in 0..s.n {
        let image = &input.data()[b * in_size..(b + 1) * in_size];
        let rhs: &[Real] = if pointwise {
            image
        } else {
            im2col(&s, geom, image, &mut cols);
            &cols
        };
        let dst = &mut out[b * s.cout * plane..(b + 1) * s.cout * plane];
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        gemm(
            s.cout,
            patch,
            plane,
            weight.data(),
            (patch, 1),
            rhs,
            (plane, 1),
            1.0,
            dst,
        );
    }
    Tensor::new(&[s.n, s.cout, s.ho, s.wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: ConvGeometry,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let s = conv_shape(input, weight, geom)?;
    if grad_out.shape() != [s.n, s.cout, s.ho, s.wo] {
        return Err(Error::Dimension(format!(
            "conv2d upstream gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [s.n, s.cout, s.ho, s.wo]
        )));
    }
    let plane = s.out_plane();
    let in_size = s.cin * s.h * s.w;
    let patch = s.patch();
    let pointwise = geom.is_pointwise(s.kh, s.kw);
    let mut d_input = vec![0.0; input.numel()];
    let mut d_weight = vec![0.0; weight.numel()];
    let mut d_bias = vec![0.0; s.cout];
    let mut cols = vec![0.0; patch * plane];
    let mut d_cols = vec![0.0; patch * plane];
    for b in 0..s.n {
        let g = &grad_out.data()[b * s.cout * plane..(b + 1) * s.cout * plane];
        for (co, chunk) in g.chunks(plane).enumerate() {
            d_bias[co] += chunk.iter().sum::<Real>();
        }
        let image = &input.data()[b * in_size..(b + 1) * in_size];
        let lhs: &[Real] = if pointwise {
            image
        } else {
            im2col(&s, geom, image, &mut cols);
            &cols
        };
        // dW[cout, patch] += g[cout, plane] * cols^T[plane, patch]
        gemm(
            s.cout,
            plane,
            patch,
            g,
            (plane, 1),
            lhs,
            (1, plane),
            1.0,
            &mut d_weight,
        );
        // dcols[patch, plane] = W^T[patch, cout] * g[cout, plane]
        let d_image = &mut d_input[b * in_size..(b + 1) * in_size];
        if pointwise {
            gemm(
                patch,
                s.cout,
                plane,
                weight.data(),
                (1, patch),
                g,
                (plane, 1),
                0.0,
                d_image,
            );
        } else {
            gemm(
                patch,
                s.cout,
                plane,
                weight.data(),
                (1, patch),
                g,
                (plane, 1),
                0.0,
                &mut d_cols,
            );
            col2im(&s, geom, &d_cols, d_image);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), d_input)?,
        weight: Tensor::new(weight.shape(), d_weight)?,
        bias: Tensor::new(&[s.cout], d_bias)?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.same_shape(grad_out, "relu backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

fn fc_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape(), bias.shape()) {
        (&[n, d], &[wd, m], &[bm]) if d == wd && m == bm => Ok((n, d, m)),
        (i, w, b) => Err(Error::Dimension(format!(
            "fully_connected expects [N,D]x[D,M]+[M], got {i:?}, {w:?}, {b:?}"
        ))),
    }
}

/// `input[N,D] * weight[D,M] + bias[M]`.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, m) = fc_dims(input, weight, bias)?;
    let mut out: Vec<Real> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(n, d, m, input.data(), (d, 1), weight.data(), (m, 1), 1.0, &mut out);
    Tensor::new(&[n, m], out)
}

#[derive(Clone, Debug)]
pub struct FcGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<FcGrads> {
    let (n, d, m) = fc_dims(input, weight, bias)?;
    if grad_out.shape() != [n, m] {
        return Err(Error::Dimension(format!(
            "fully_connected upstream gradient {:?}, expected [{n}, {m}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let mut d_input = vec![0.0; n * d];
    gemm(n, m, d, g, (m, 1), weight.data(), (1, m), 0.0, &mut d_input);
    let mut d_weight = vec![0.0; d * m];
    gemm(d, n, m, input.data(), (1, d), g, (m, 1), 0.0, &mut d_weight);
    let mut d_bias = vec![0.0; m];
    for row in g.chunks(m) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    Ok(FcGrads {
        input: Tensor::new(&[n, d], d_input)?,
        weight: Tensor::new(&[d, m], d_weight)?,
        bias: Tensor::new(&[m], d_bias)?,
    })
}

/// Stacks tensors along dimension 1. All other extents must agree.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Dimension("concat_channels needs at least one input".into()))?;
    if first.rank() < 2 {
        return Err(Error::Dimension("concat_channels needs rank >= 2".into()));
    }
    let lead = first.shape()[0];
    let tail = &first.shape()[2..];
    let mut channels = 0;
    for t in inputs {
        if t.rank() != first.rank() || t.shape()[0] != lead || &t.shape()[2..] != tail {
            return Err(Error::Dimension(format!(
                "concat_channels: {:?} incompatible with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        channels += t.shape()[1];
    }
    let inner: usize = tail.iter().product();
    let mut data = Vec::with_capacity(lead * channels * inner);
    for b in 0..lead {
        for t in inputs {
            let block = t.shape()[1] * inner;
            data.extend_from_slice(&t.data()[b * block..(b + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    Tensor::new(&shape, data)
}

/// Slices the gradient of a channel concatenation back to its inputs.
pub fn concat_channels_backward(input_shapes: &[&[usize]], grad_out: &Tensor) -> Result<Vec<Tensor>> {
    let lead = grad_out.shape()[0];
    let total = grad_out.shape()[1];
    let inner: usize = grad_out.shape()[2..].iter().product();
    let channel_sum: usize = input_shapes.iter().map(|s| s[1]).sum();
    if channel_sum != total {
        return Err(Error::Dimension(format!(
            "concat backward: inputs hold {channel_sum} channels, gradient {total}"
        )));
    }
    let mut grads: Vec<Vec<Real>> = input_shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for b in 0..lead {
        let mut offset = b * total * inner;
        for (g, s) in grads.iter_mut().zip(input_shapes) {
            let block = s[1] * inner;
            g.extend_from_slice(&grad_out.data()[offset..offset + block]);
            offset += block;
        }
    }
    grads
        .into_iter()
        .zip(input_shapes)
        .map(|(g, s)| Tensor::new(s, g))
        .collect()
}
