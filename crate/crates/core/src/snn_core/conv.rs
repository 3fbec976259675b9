use super::Grid;
use crate::error::{arg_err, Error, Result};

/// 1D cross-correlation layer. Weights are stored `c_out × c_in × kernel`;
/// an optional `c_out × c_in` mask zeroes whole input connections.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `floor((len - dilation·(kernel-1) - 1) / stride) + 1`, or `None` when
/// the input is shorter than the receptive field.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    if stride == 0 || kernel == 0 || len < span {
        return None;
    }
    Some((len - span) / stride + 1)
}

impl Conv1d {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            dilation,
            weights: vec![0.0; c_out * c_in * kernel],
            bias: vec![0.0; c_out],
            mask: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return arg_err("kernel, stride and dilation must be positive");
        }
        if self.weights.len() != self.c_out * self.c_in * self.kernel {
            return Err(Error::Shape(format!(
                "weight buffer holds {} values, expected {}x{}x{}",
                self.weights.len(),
                self.c_out,
                self.c_in,
                self.kernel
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::Shape("bias length differs from c_out".into()));
        }
        if let Some(m) = &self.mask {
            if m.len() != self.c_out * self.c_in {
                return Err(Error::Shape("mask must be c_out x c_in".into()));
            }
        }
        Ok(())
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, k: usize) -> usize {
        (o * self.c_in + i) * self.kernel + k
    }

    #[inline]
    fn unmasked(&self, o: usize, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[o * self.c_in + i] != 0)
    }

    /// Number of trainable weight scalars (masked entries excluded).
    pub fn trainable_weights(&self) -> usize {
        match &self.mask {
            None => self.weights.len(),
            Some(m) => m.iter().filter(|&&b| b != 0).count() * self.kernel,
        }
    }

    /// Effective weights laid out `kernel × c_in × c_out` so that one
    /// active input scatters into a contiguous run of outputs.
    fn packed(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.weights.len()];
        for o in 0..self.c_out {
            for i in 0..self.c_in {
                if !self.unmasked(o, i) {
                    continue;
                }
                for k in 0..self.kernel {
                    p[(k * self.c_in + i) * self.c_out + o] = self.weights[self.w_index(o, i, k)];
                }
            }
        }
        p
    }
}

const LANES: usize = 8;

/// Runs `f` over `row` in blocks of up to [`LANES`] values held in a local
/// accumulator, so the inner loops stay in registers.
#[inline(always)]
fn for_each_block(row: &mut [f64], mut f: impl FnMut(usize, &mut [f64; LANES])) {
    let mut lo = 0;
    while lo < row.len() {
        let n = (row.len() - lo).min(LANES);
        let mut acc = [0.0; LANES];
        acc[..n].copy_from_slice(&row[lo..lo + n]);
        f(lo, &mut acc);
        row[lo..lo + n].copy_from_slice(&acc[..n]);
        lo += n;
    }
}

/// `acc += a · w[..LANES]`, reading past a short tail as zero.
#[inline(always)]
fn axpy(acc: &mut [f64; LANES], a: f64, w: &[f64]) {
    if w.len() >= LANES {
        for (d, &wv) in acc.iter_mut().zip(&w[..LANES]) {
            *d += a * wv;
        }
    } else {
        for (d, &wv) in acc.iter_mut().zip(w) {
            *d += a * wv;
        }
    }
}

/// Taps covered by one lookup table.
const LUT_TAPS: usize = 8;

/// Single-channel input taking only two values, as a PDM stream does.
/// Every group of up to [`LUT_TAPS`] consecutive taps sees one of at most
/// 256 input patterns, so its contribution to all outputs is a table
/// lookup instead of a multiply-add per tap.
struct TwoLevel {
    levels: [f64; 2],
    /// 1 where the input holds the upper level.
    high: Vec<u8>,
    /// `(first tap, taps)` per table.
    groups: Vec<(usize, usize)>,
}

impl TwoLevel {
    fn detect(input: &Grid, layer: &Conv1d) -> Option<Self> {
        if layer.c_in != 1 || layer.kernel < 4 {
            return None;
        }
        let first = *input.data.first()?;
        let mut other = first;
        for &v in &input.data {
            if v != first && v != other {
                if other != first {
                    return None;
                }
                other = v;
            }
        }
        let levels = [first.min(other), first.max(other)];
        let high = input
            .data
            .iter()
            .map(|&v| (v == levels[1] && levels[0] != levels[1]) as u8)
            .collect();
        let groups = (0..layer.kernel)
            .step_by(LUT_TAPS)
            .map(|k| (k, LUT_TAPS.min(layer.kernel - k)))
            .collect();
        Some(Self {
            levels,
            high,
            groups,
        })
    }

    #[inline]
    fn pattern(&self, layer: &Conv1d, t: usize, (k0, n): (usize, usize)) -> usize {
        let base = t * layer.stride + k0 * layer.dilation;
        (0..n).fold(0, |p, j| {
            p | (self.high[base + j * layer.dilation] as usize) << j
        })
    }

    fn level(&self, pattern: usize, j: usize) -> f64 {
        self.levels[(pattern >> j) & 1]
    }

    fn forward(&self, layer: &Conv1d, out_len: usize) -> Grid {
        let c_out = layer.c_out;
        let weight = |o: usize, k: usize| {
            if layer.unmasked(o, 0) {
                layer.weights[layer.w_index(o, 0, k)]
            } else {
                0.0
            }
        };
        let tables: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|&(k0, n)| {
                let mut table = vec![0.0; (1 << n) * c_out];
                for (p, row) in table.chunks_mut(c_out).enumerate() {
                    for (o, r) in row.iter_mut().enumerate() {
                        *r = (0..n).map(|j| weight(o, k0 + j) * self.level(p, j)).sum();
                    }
                }
                table
            })
            .collect();
        let mut out = Grid::zeros(out_len, c_out);
        for t in 0..out_len {
            let row = out.row_mut(t);
            row.copy_from_slice(&layer.bias);
            for (&group, table) in self.groups.iter().zip(&tables) {
                let p = self.pattern(layer, t, group);
                for (r, &v) in row.iter_mut().zip(&table[p * c_out..(p + 1) * c_out]) {
                    *r += v;
                }
            }
        }
        out
    }

    /// Weight and bias gradients: upstream rows are summed per pattern,
    /// then each pattern sum is spread back over its taps.
    fn backward(&self, layer: &Conv1d, grad_out: &Grid) -> ConvGrads {
        let c_out = layer.c_out;
        let mut hist: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|&(_, n)| vec![0.0; (1 << n) * c_out])
            .collect();
        let mut bias = vec![0.0; c_out];
        for t in 0..grad_out.steps {
            let g = grad_out.row(t);
            for (b, &gv) in bias.iter_mut().zip(g) {
                *b += gv;
            }
            for (&group, h) in self.groups.iter().zip(hist.iter_mut()) {
                let p = self.pattern(layer, t, group);
                for (d, &gv) in h[p * c_out..(p + 1) * c_out].iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        let mut weights = vec![0.0; layer.weights.len()];
        for (&(k0, n), h) in self.groups.iter().zip(&hist) {
            for o in (0..c_out).filter(|&o| layer.unmasked(o, 0)) {
                for j in 0..n {
                    weights[layer.w_index(o, 0, k0 + j)] = h
                        .chunks(c_out)
                        .enumerate()
                        .map(|(p, row)| row[o] * self.level(p, j))
                        .sum();
                }
            }
        }
        ConvGrads { weights, bias }
    }
}

/// Strided, dilated cross-correlation. Zero inputs are skipped, so the cost
/// scales with input activity; a single-channel two-valued input goes
/// through lookup tables instead.
pub fn conv1d_forward(input: &Grid, layer: &Conv1d) -> Result<Grid> {
    layer.validate()?;
    if input.channels != layer.c_in {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {}",
            input.channels, layer.c_in
        )));
    }
    let out_len = conv_output_len(input.steps, layer.kernel, layer.stride, layer.dilation)
        .ok_or_else(|| {
            Error::Shape(format!(
                "input of {} steps shorter than receptive field {}",
                input.steps,
                layer.dilation * (layer.kernel - 1) + 1
            ))
        })?;
    if let Some(lut) = TwoLevel::detect(input, layer) {
        return Ok(lut.forward(layer, out_len));
    }
    let packed = layer.packed();
    let c_out = layer.c_out;
    let mut out = Grid::zeros(out_len, c_out);
    for t in 0..out_len {
        let row = out.row_mut(t);
        row.copy_from_slice(&layer.bias);
        for_each_block(row, |lo, acc| {
            for k in 0..layer.kernel {
                let x = input.row(t * layer.stride + k * layer.dilation);
                for (i, &xv) in x.iter().enumerate() {
                    if xv != 0.0 {
                        axpy(acc, xv, &packed[(k * layer.c_in + i) * c_out + lo..]);
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`]. Masked weights receive exactly zero.
/// The input gradient is only formed when `want_input_grad` is set.
pub fn conv1d_backward(
    input: &Grid,
    layer: &Conv1d,
    grad_out: &Grid,
    want_input_grad: bool,
) -> Result<(ConvGrads, Option<Grid>)> {
    let out_len = conv_output_len(input.steps, layer.kernel, layer.stride, layer.dilation);
    if out_len != Some(grad_out.steps) || grad_out.channels != layer.c_out {
        return Err(Error::Shape(
            "upstream gradient does not match the forward output".into(),
        ));
    }
    let (c_in, c_out, kernel) = (layer.c_in, layer.c_out, layer.kernel);

    if let (Some(lut), false) = (TwoLevel::detect(input, layer), want_input_grad) {
        return Ok((lut.backward(layer, grad_out), None));
    }

    // accumulate in the packed layout, then scatter back
    let mut gp = vec![0.0; layer.weights.len()];
    let mut bias = vec![0.0; c_out];
    for t in 0..grad_out.steps {
        let g = grad_out.row(t);
        for (b, &gv) in bias.iter_mut().zip(g) {
            *b += gv;
        }
        for k in 0..kernel {
            let x = input.row(t * layer.stride + k * layer.dilation);
            for (i, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let dst = &mut gp[(k * c_in + i) * c_out..][..c_out];
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += xv * gv;
                }
            }
        }
    }
    let mut weights = vec![0.0; layer.weights.len()];
    for o in 0..c_out {
        for i in 0..c_in {
            if !layer.unmasked(o, i) {
                continue;
            }
            for k in 0..kernel {
                weights[layer.w_index(o, i, k)] = gp[(k * c_in + i) * c_out + o];
            }
        }
    }

    let input_grad = want_input_grad.then(|| {
        // transposed layout [k][o][i]: each output gradient scatters into a
        // contiguous input row
        let mut wt = vec![0.0; layer.weights.len()];
        for o in 0..c_out {
            for i in 0..c_in {
                if !layer.unmasked(o, i) {
                    continue;
                }
                for k in 0..kernel {
                    wt[(k * c_out + o) * c_in + i] = layer.weights[layer.w_index(o, i, k)];
                }
            }
        }
        let mut dx = Grid::zeros(input.steps, c_in);
        for t in 0..grad_out.steps {
            let g = grad_out.row(t);
            for k in 0..kernel {
                let row = dx.row_mut(t * layer.stride + k * layer.dilation);
                for_each_block(row, |lo, acc| {
                    for (o, &gv) in g.iter().enumerate() {
                        if gv != 0.0 {
                            axpy(acc, gv, &wt[(k * c_out + o) * c_in + lo..]);
                        }
                    }
                });
            }
        }
        dx
    });
    Ok((ConvGrads { weights, bias }, input_grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_formula() {
        assert_eq!(conv_output_len(1_024_000, 192, 96, 1), Some(10_665));
        assert_eq!(conv_output_len(10_665, 3, 3, 2), Some(3_554));
        assert_eq!(conv_output_len(3_554, 3, 3, 2), Some(1_184));
        assert_eq!(conv_output_len(1_184, 3, 3, 2), Some(394));
        assert_eq!(conv_output_len(4, 3, 1, 2), None);
        assert_eq!(conv_output_len(5, 3, 1, 2), Some(1));
    }

    #[test]
    fn identity_kernel() {
        let mut layer = Conv1d::zeros(1, 1, 1, 1, 1);
        layer.weights[0] = 1.0;
        let x = Grid::column(vec![0.3, -1.0, 2.5, 0.0]);
        assert_eq!(conv1d_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn too_short_input_is_shape_error() {
        let layer = Conv1d::zeros(1, 2, 3, 3, 2);
        let x = Grid::column(vec![1.0; 4]);
        assert!(matches!(conv1d_forward(&x, &layer), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_direct_sum() {
        let (c_in, c_out, k, s, d) = (3, 2, 3, 2, 2);
        let mut layer = Conv1d::zeros(c_in, c_out, k, s, d);
        for (n, w) in layer.weights.iter_mut().enumerate() {
            *w = (n as f64 * 0.37).sin();
        }
        layer.bias = vec![0.1, -0.2];
        let x =
            Grid::from_vec(11, c_in, (0..33).map(|n| (n as f64 * 0.11).cos()).collect()).unwrap();
        let y = conv1d_forward(&x, &layer).unwrap();
        assert_eq!(y.steps, 4);
        for t in 0..y.steps {
            for o in 0..c_out {
                let mut acc = layer.bias[o];
                for i in 0..c_in {
                    for kk in 0..k {
                        acc += layer.weights[(o * c_in + i) * k + kk] * x.get(t * s + kk * d, i);
                    }
                }
                assert!((y.get(t, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_level_input_matches_generic_path() {
        let (c_out, k, s) = (5, 19, 3);
        let mut layer = Conv1d::zeros(1, c_out, k, s, 1);
        for (n, w) in layer.weights.iter_mut().enumerate() {
            *w = (n as f64 * 0.61).sin();
        }
        layer.bias = vec![0.2; c_out];
        let bits: Vec<f64> = (0..200u32)
            .map(|n| if (n * 7 + n / 3) % 5 < 2 { 1.0 } else { -1.0 })
            .collect();
        let x = Grid::column(bits);
        assert!(TwoLevel::detect(&x, &layer).is_some());
        let y = conv1d_forward(&x, &layer).unwrap();
        for t in 0..y.steps {
            for o in 0..c_out {
                let mut acc = layer.bias[o];
                for kk in 0..k {
                    acc += layer.weights[o * k + kk] * x.get(t * s + kk, 0);
                }
                assert!((y.get(t, o) - acc).abs() < 1e-12);
            }
        }
        let g = Grid::from_vec(
            y.steps,
            c_out,
            (0..y.data.len()).map(|n| (n as f64 * 0.3).cos()).collect(),
        )
        .unwrap();
        // asking for the input gradient takes the generic path
        let (lut, _) = conv1d_backward(&x, &layer, &g, false).unwrap();
        let (generic, _) = conv1d_backward(&x, &layer, &g, true).unwrap();
        for (a, b) in lut.weights.iter().zip(&generic.weights) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(lut.bias, generic.bias);
    }

    #[test]
    fn masked_weights_are_inert() {
        let mut layer = Conv1d::zeros(2, 2, 2, 1, 1);
        layer.weights = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        layer.mask = Some(vec![1, 0, 0, 1]);
        let x = Grid::from_vec(3, 2, vec![1.0, 1.0, 0.5, 2.0, 1.0, 0.0]).unwrap();
        let y1 = conv1d_forward(&x, &layer).unwrap();
        let g = Grid::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let (g1, dx1) = conv1d_backward(&x, &layer, &g, true).unwrap();

        let mut flipped = layer.clone();
        flipped.weights[2] = -100.0;
        flipped.weights[5] = 42.0;
        let y2 = conv1d_forward(&x, &flipped).unwrap();
        let (g2, dx2) = conv1d_backward(&x, &flipped, &g, true).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(g1, g2);
        assert_eq!(dx1, dx2);
        assert_eq!(&g1.weights[2..6], &[0.0; 4]);
        assert_eq!(layer.trainable_weights(), 4);
    }
}
