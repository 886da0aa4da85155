use super::{Tensor, TensorError, TensorResult};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above guarantee every index the kernel touches
    // lies inside the three slices for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one convolution call, padded out to three spatial axes
/// (unused trailing axes have extent 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub ndim: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    fn parse(
        op: &'static str,
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
    ) -> TensorResult<(usize, [usize; 3], [usize; 3], usize, usize)> {
        let ndim = input.len().saturating_sub(1);
        if !(1..=3).contains(&ndim) || kernel.len() != ndim + 2 {
            return Err(TensorError::Contract(format!(
                "{op}: input {input:?} and kernel {kernel:?} must share 1-3 spatial axes"
            )));
        }
        let (c_out, c_in) = (kernel[0], kernel[1]);
        if c_in != input[0] {
            return Err(TensorError::Shape {
                op,
                expected: vec![input[0]],
                got: vec![c_in],
            });
        }
        if bias != [c_out] {
            return Err(TensorError::Shape {
                op,
                expected: vec![c_out],
                got: bias.to_vec(),
            });
        }
        let mut sp = [1; 3];
        let mut k = [1; 3];
        sp[..ndim].copy_from_slice(&input[1..]);
        k[..ndim].copy_from_slice(&kernel[2..]);
        Ok((ndim, sp, k, c_in, c_out))
    }

    pub fn same(input: &[usize], kernel: &[usize], bias: &[usize]) -> TensorResult<Self> {
        let (ndim, sp, k, c_in, c_out) = Self::parse("conv_same", input, kernel, bias)?;
        if k.iter().any(|&e| e % 2 == 0) {
            return Err(TensorError::Contract(format!(
                "conv_same: kernel extents {:?} must be odd",
                &kernel[2..]
            )));
        }
        Ok(Self {
            ndim,
            c_in,
            c_out,
            input: sp,
            output: sp,
            kernel: k,
            pad: [k[0] / 2, k[1] / 2, k[2] / 2],
        })
    }

    pub fn valid(input: &[usize], kernel: &[usize], bias: &[usize]) -> TensorResult<Self> {
        let (ndim, sp, k, c_in, c_out) = Self::parse("conv_valid", input, kernel, bias)?;
        if (0..3).any(|a| k[a] > sp[a]) {
            return Err(TensorError::Shape {
                op: "conv_valid",
                expected: input[1..].to_vec(),
                got: kernel[2..].to_vec(),
            });
        }
        Ok(Self {
            ndim,
            c_in,
            c_out,
            input: sp,
            output: [sp[0] - k[0] + 1, sp[1] - k[1] + 1, sp[2] - k[2] + 1],
            kernel: k,
            pad: [0; 3],
        })
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the unfolded input matrix (`c_in * taps`).
    pub fn col_rows(&self) -> usize {
        self.c_in * self.taps()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.c_out];
        s.extend_from_slice(&self.output[..self.ndim]);
        s
    }

    /// Visits every (col row, output index, input index) triple whose input
    /// position falls inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [i0, i1, i2] = self.input;
        let [o0, o1, o2] = self.output;
        let [k0, k1, k2] = self.kernel;
        let [p0, p1, p2] = self.pad;
        let taps = self.taps();
        let range = |o: usize, k: usize, p: usize, i: usize| -> (usize, usize) {
            // output positions x with 0 <= x + k - p < i
            let lo = p.saturating_sub(k);
            let hi = (i + p).saturating_sub(k).min(o);
            (lo, hi.max(lo))
        };
        for c in 0..self.c_in {
            let in_base = c * i0 * i1 * i2;
            for a in 0..k0 {
                let (x_lo, x_hi) = range(o0, a, p0, i0);
                for b in 0..k1 {
                    let (y_lo, y_hi) = range(o1, b, p1, i1);
                    for d in 0..k2 {
                        let (z_lo, z_hi) = range(o2, d, p2, i2);
                        let row = c * taps + (a * k1 + b) * k2 + d;
                        for x in x_lo..x_hi {
                            let ix = x + a - p0;
                            for y in y_lo..y_hi {
                                let iy = y + b - p1;
                                let out_row = (x * o1 + y) * o2;
                                let in_row = in_base + (ix * i1 + iy) * i2;
                                for z in z_lo..z_hi {
                                    f(row, out_row + z, in_row + z + d - p2);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn im2col(&self, input: &[f64], col: &mut Vec<f64>) {
        let n = self.output_len();
        col.clear();
        col.resize(self.col_rows() * n, 0.0);
        self.for_each_tap(|row, o, i| col[row * n + o] = input[i]);
    }

    pub(crate) fn col2im(&self, dcol: &[f64], dinput: &mut [f64]) {
        let n = self.output_len();
        self.for_each_tap(|row, o, i| dinput[i] += dcol[row * n + o]);
    }

    /// Runs the convolution, leaving the unfolded input in `col` for reuse
    /// by the backward pass.
    pub(crate) fn forward(
        &self,
        input: &[f64],
        kernel: &[f64],
        bias: &[f64],
        col: &mut Vec<f64>,
    ) -> Tensor {
        self.im2col(input, col);
        let n = self.output_len();
        let mut out = vec![0.0; self.c_out * n];
        for (plane, &b) in out.chunks_mut(n).zip(bias) {
            plane.fill(b);
        }
        gemm(
            self.c_out,
            self.col_rows(),
            n,
            1.0,
            kernel,
            false,
            col,
            false,
            1.0,
            &mut out,
        );
        Tensor::from_vec(self.output_shape(), out).expect("conv output shape")
    }

    /// Accumulates kernel/bias/input gradients for upstream gradient `dout`.
    pub(crate) fn backward(
        &self,
        dout: &[f64],
        kernel: &[f64],
        col: &[f64],
        dkernel: Option<&mut [f64]>,
        dbias: Option<&mut [f64]>,
        dinput: Option<&mut [f64]>,
    ) {
        let n = self.output_len();
        let rows = self.col_rows();
        if let Some(dk) = dkernel {
            gemm(self.c_out, n, rows, 1.0, dout, false, col, true, 1.0, dk);
        }
        if let Some(db) = dbias {
            for (g, plane) in db.iter_mut().zip(dout.chunks(n)) {
                *g += plane.iter().sum::<f64>();
            }
        }
        if let Some(di) = dinput {
            let mut dcol = vec![0.0; rows * n];
            gemm(
                rows, self.c_out, n, 1.0, kernel, true, dout, false, 0.0, &mut dcol,
            );
            self.col2im(&dcol, di);
        }
    }
}
