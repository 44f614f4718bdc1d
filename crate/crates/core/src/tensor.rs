//! Dense row-major `f32` tensors and the handful of kernels the backbone needs.
//!
//! Every kernel walks its operands in a fixed order with `f32` accumulators,
//! so repeated evaluation on identical inputs is bitwise identical.

use crate::error::{shape_err, Error, Result};
use crate::runtime::record_macs;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(shape_err("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {expected} values but data has {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive: {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err("tensor", format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err("tensor", format!("expected rank 4, got {:?}", self.shape))),
        }
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Parameters of a grouped 2-D convolution with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `(out_ch, in_ch_per_group, kh, kw)`
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(
        weight: Tensor,
        bias: Option<Vec<f32>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let p = Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (oc, _, _, _) = self.weight.dims4()?;
        if self.stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        if self.groups == 0 || oc % self.groups != 0 {
            return Err(shape_err(
                "conv2d",
                format!("groups={} must divide out_ch={oc}", self.groups),
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != oc {
                return Err(shape_err(
                    "conv2d",
                    format!("bias length {} != out_ch {oc}", b.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh {
            return Err(shape_err(
                "conv2d",
                format!("height {h} (+2*padding {}) smaller than kernel height {kh}", self.padding),
            ));
        }
        if pw < kw {
            return Err(shape_err(
                "conv2d",
                format!("width {w} (+2*padding {}) smaller than kernel width {kw}", self.padding),
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Grouped 2-D convolution, NCHW layout.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    let (n, c, h, w) = input.dims4()?;
    let (oc, icpg, kh, kw) = p.weight.dims4()?;
    if c != p.groups * icpg {
        return Err(shape_err(
            "conv2d",
            format!(
                "input channels {c} != groups {} x in_ch_per_group {icpg}",
                p.groups
            ),
        ));
    }
    let (oh, ow) = p.output_hw(h, w)?;
    let ocpg = oc / p.groups;
    let (stride, pad) = (p.stride as isize, p.padding as isize);
    let src = input.data();
    let wt = p.weight.data();
    let mut out = vec![0.0f32; n * oc * oh * ow];

    for b in 0..n {
        for o in 0..oc {
            let g = o / ocpg;
            let plane = &mut out[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            if let Some(bias) = &p.bias {
                plane.fill(bias[o]);
            }
            for icl in 0..icpg {
                let ic = g * icpg + icl;
                let in_plane = &src[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = wt[((o * icpg + icl) * kh + ki) * kw + kj];
                        // one trip per output position; padded taps add zero
                        record_macs((oh * ow) as u64);
                        for y in 0..oh {
                            let iy = y as isize * stride + ki as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[y * ow..(y + 1) * ow];
                            for (x, ov) in orow.iter_mut().enumerate() {
                                let ix = x as isize * stride + kj as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    *ov += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out)
}

/// Which extent a layer norm normalizes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxis {
    /// Channel axis of an NCHW tensor, independently at every pixel.
    Channel,
    /// Trailing axis of any tensor.
    Last,
}

pub fn layer_norm(
    x: &Tensor,
    axis: NormAxis,
    eps: f32,
    gain: &[f32],
    offset: &[f32],
) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = x.clone();
    match axis {
        NormAxis::Last => {
            let d = *x.shape().last().unwrap();
            check_affine(d, gain, offset)?;
            for row in out.data_mut().chunks_mut(d) {
                normalize_group(row, eps, gain, offset);
            }
        }
        NormAxis::Channel => {
            let (n, c, h, w) = x.dims4()?;
            check_affine(c, gain, offset)?;
            let hw = h * w;
            let mut buf = vec![0.0f32; c];
            let data = out.data_mut();
            for b in 0..n {
                let base = b * c * hw;
                for p in 0..hw {
                    for ch in 0..c {
                        buf[ch] = data[base + ch * hw + p];
                    }
                    normalize_group(&mut buf, eps, gain, offset);
                    for ch in 0..c {
                        data[base + ch * hw + p] = buf[ch];
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_affine(d: usize, gain: &[f32], offset: &[f32]) -> Result<()> {
    if d == 0 {
        return Err(shape_err("layer_norm", "normalization axis has zero length"));
    }
    if gain.len() != d || offset.len() != d {
        return Err(shape_err(
            "layer_norm",
            format!(
                "gain/offset lengths {}/{} != normalized extent {d}",
                gain.len(),
                offset.len()
            ),
        ));
    }
    Ok(())
}

fn normalize_group(v: &mut [f32], eps: f32, gain: &[f32], offset: &[f32]) {
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((x, g), o) in v.iter_mut().zip(gain).zip(offset) {
        *x = (*x - mean) * inv * g + o;
    }
}

/// Numerically stable softmax over one slice, in place.
pub fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(shape_err("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0f32; extent];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            for k in 0..extent {
                buf[k] = data[base + k * inner];
            }
            softmax_in_place(&mut buf);
            for k in 0..extent {
                data[base + k * inner] = buf[k];
            }
        }
    }
    Ok(out)
}

/// Global average pooling to a 1x1 map.
pub fn adaptive_avg_pool_1(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let out = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::new(vec![n, c, 1, 1], out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err("matmul", format!("inner dimensions {k} and {k2} differ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            record_macs(n as u64);
            for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Dense layer `y = x W^T + b` with `x: [B, M]`, `weight: [N, M]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let (rows, m) = x.dims2()?;
    let (n, m2) = weight.dims2()?;
    if m != m2 {
        return Err(shape_err(
            "linear",
            format!("input has {m} columns but weight expects {m2}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != n {
            return Err(shape_err("linear", format!("bias length {} != {n}", b.len())));
        }
    }
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![0.0f32; rows * n];
    for r in 0..rows {
        let xr = &xd[r * m..(r + 1) * m];
        record_macs((n * m) as u64);
        for (j, o) in out[r * n..(r + 1) * n].iter_mut().enumerate() {
            let wr = &wd[j * m..(j + 1) * m];
            let mut acc = 0.0f32;
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            *o = acc + bias.map_or(0.0, |b| b[j]);
        }
    }
    Tensor::new(vec![rows, n], out)
}

const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

/// Tanh approximation of GELU:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
    out
}

/// Scales `v` to unit Euclidean norm; vectors shorter than `eps` map to zeros.
pub fn l2_normalize(v: &[f32], eps: f32) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm < eps {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f32 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        }
    }

    #[test]
    fn tensor_rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let p = ConvParams::new(Tensor::full(&[1, 1, 3, 3], 1.0), None, 1, 0, 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut r = lcg(3);
        let x = Tensor::from_fn(&[2, 1, 5, 4], |_| r());
        let p = ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), None, 1, 0, 1).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn conv_output_size_and_errors() {
        let x = Tensor::zeros(&[1, 3, 112, 112]);
        let p = ConvParams::new(Tensor::zeros(&[32, 3, 4, 4]), Some(vec![0.0; 32]), 4, 0, 1)
            .unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().shape(), &[1, 32, 28, 28]);

        let down = ConvParams::new(Tensor::zeros(&[8, 4, 2, 2]), None, 2, 0, 1).unwrap();
        let y = conv2d(&Tensor::zeros(&[1, 4, 7, 7]), &down).unwrap();
        assert_eq!(y.shape(), &[1, 8, 3, 3]);

        let err = conv2d(&Tensor::zeros(&[1, 2, 7, 7]), &down).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = conv2d(&Tensor::zeros(&[1, 4, 1, 1]), &down).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        assert!(ConvParams::new(Tensor::zeros(&[6, 1, 3, 3]), None, 1, 1, 4).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = layer_norm(&x, NormAxis::Last, 1e-6, &[1.0; 4], &[0.0; 4]).unwrap();
        // direct: mean 2.5, biased variance 1.25
        let sd = (1.25f64 + 1e-6).sqrt();
        for (v, xv) in y.data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((*v as f64 - (xv - 2.5) / sd).abs() < 1e-3);
        }
        assert!((y.data()[0] + 1.3416).abs() < 1e-3);

        let c = Tensor::full(&[2, 5], 3.7);
        let y = layer_norm(&c, NormAxis::Last, 1e-6, &[1.0; 5], &[0.0; 5]).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let y2 = layer_norm(&x, NormAxis::Last, 1e-6, &[2.0; 4], &[5.0; 4]).unwrap();
        let y1 = layer_norm(&x, NormAxis::Last, 1e-6, &[1.0; 4], &[0.0; 4]).unwrap();
        for (a, b) in y2.data().iter().zip(y1.data()) {
            assert!((a - (2.0 * b + 5.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_channel_statistics() {
        let mut r = lcg(11);
        let x = Tensor::from_fn(&[2, 6, 3, 3], |_| r() * 4.0 + 1.0);
        let y = layer_norm(&x, NormAxis::Channel, 1e-6, &[1.0; 6], &[0.0; 6]).unwrap();
        for b in 0..2 {
            for p in 0..9 {
                let vals: Vec<f32> = (0..6).map(|c| y.data()[(b * 6 + c) * 9 + p]).collect();
                let mean = vals.iter().sum::<f32>() / 6.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 6.0;
                assert!(mean.abs() < 1e-5);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn layer_norm_errors() {
        let x = Tensor::zeros(&[1, 4]);
        assert!(layer_norm(&x, NormAxis::Last, 0.0, &[1.0; 4], &[0.0; 4]).is_err());
        assert!(layer_norm(&x, NormAxis::Last, 1e-6, &[1.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let t = |v: Vec<f32>| Tensor::new(vec![1, v.len()], v).unwrap();
        let y = softmax(&t(vec![0.0; 3]), 1).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-7));
        let y = softmax(&t(vec![1000.0, 0.0]), 1).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1].abs() < 1e-6);
        let y = softmax(&t(vec![1.0, 2.0, 3.0]), 1).unwrap();
        for (v, e) in y.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((v - e).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_over_leading_axis() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(adaptive_avg_pool_1(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full(&[1, 2, 3, 5], -0.75);
        assert!(adaptive_avg_pool_1(&c).unwrap().data().iter().all(|v| *v == -0.75));
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let mut r = lcg(5);
        let v = Tensor::from_fn(&[3, 2], |_| r());
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&eye, &v).unwrap(), v);
        assert!(matmul(&v, &v).is_err());
    }

    #[test]
    fn gelu_zero_and_monotone() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // increasing to the right of its minimum near -0.75
        let grid: Vec<f32> = (0..=200).map(|i| -0.7 + i as f32 * 0.03).collect();
        for w in grid.windows(2) {
            assert!(gelu_scalar(w[1]) > gelu_scalar(w[0]) - 1e-7);
        }
        assert!((gelu_scalar(1.0) - 0.841_192).abs() < 1e-5);
    }

    #[test]
    fn l2_normalize_cases() {
        let u = l2_normalize(&[3.0, 4.0], 1e-12);
        assert!((u[0] - 0.6).abs() < 1e-7 && (u[1] - 0.8).abs() < 1e-7);
        assert_eq!(l2_normalize(&[1e-9, 0.0], 1e-6), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_matches_matmul_with_transpose() {
        let mut r = lcg(9);
        let x = Tensor::from_fn(&[4, 5], |_| r());
        let w = Tensor::from_fn(&[3, 5], |_| r());
        let b = [0.5, -1.0, 2.0];
        let y = linear(&x, &w, Some(&b)).unwrap();
        let z = matmul(&x, &w.transpose().unwrap()).unwrap();
        for (i, (a, c)) in y.data().iter().zip(z.data()).enumerate() {
            assert!((a - (c + b[i % 3])).abs() < 1e-5);
        }
    }
}
