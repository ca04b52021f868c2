use std::fmt::Debug;

use num_traits::Float;

/// Scalar type the network can run in.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Every index reachable through the strides must lie inside the buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> View<'a, T> {
    fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        View {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c (m x n, row-major) = a * b + beta * c`.
fn gemm<T: Real>(a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(a.data.len() >= a.span() && b.data.len() >= b.span());
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the spans checked above bound every strided access.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// A dense stage applied independently to `rows_per_sample` rows of each
/// sample. A kernel-2, stride-2 convolution over position-major data is
/// exactly such a stage with `input = 2 * channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub rows_per_sample: usize,
    pub relu: bool,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl Dense {
    pub fn in_width(&self) -> usize {
        self.input * self.rows_per_sample
    }

    pub fn out_width(&self) -> usize {
        self.output * self.rows_per_sample
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Chain of dense stages sharing one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Dense>,
    pub params: Vec<T>,
}

/// Per-batch buffers reused across calls.
#[derive(Clone, Debug, Default)]
pub struct Workspace<T> {
    pub acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
    batch: usize,
}

impl<T: Real> Network<T> {
    /// Lays out parameters for stages given as `(input, output, rows, relu)`.
    pub fn new(shapes: &[(usize, usize, usize, bool)]) -> Network<T> {
        let mut layers = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(input, output, rows_per_sample, relu) in shapes {
            let l = Dense {
                input,
                output,
                rows_per_sample,
                relu,
                w_offset: offset,
                b_offset: offset + input * output,
            };
            offset += l.param_count();
            layers.push(l);
        }
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_width(), pair[1].in_width(), "stage widths must chain");
        }
        Network {
            layers,
            params: vec![T::zero(); offset],
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().out_width()
    }

    pub fn weights(&self, l: usize) -> &[T] {
        let d = &self.layers[l];
        &self.params[d.w_offset..d.b_offset]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        let d = &self.layers[l];
        &self.params[d.b_offset..d.b_offset + d.output]
    }

    pub fn workspace(&self, batch: usize) -> Workspace<T> {
        let mut ws = Workspace::default();
        self.resize(&mut ws, batch);
        ws
    }

    fn resize(&self, ws: &mut Workspace<T>, batch: usize) {
        if ws.batch == batch && ws.acts.len() == self.layers.len() {
            return;
        }
        ws.acts = self
            .layers
            .iter()
            .map(|l| vec![T::zero(); batch * l.out_width()])
            .collect();
        ws.deltas = ws.acts.clone();
        ws.batch = batch;
    }

    /// Runs `batch` samples stored back to back in `x`; the result is the
    /// last entry of `ws.acts`.
    pub fn forward<'w>(&self, x: &[T], batch: usize, ws: &'w mut Workspace<T>) -> &'w [T] {
        assert_eq!(x.len(), batch * self.input_width(), "input width mismatch");
        self.resize(ws, batch);
        for (k, l) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(k);
            let input: &[T] = if k == 0 { x } else { &before[k - 1] };
            let out = &mut after[0];
            let rows = batch * l.rows_per_sample;
            let bias = &self.params[l.b_offset..l.b_offset + l.output];
            for row in out.chunks_exact_mut(l.output) {
                row.copy_from_slice(bias);
            }
            gemm(
                View::new(input, rows, l.input),
                View::new(&self.params[l.w_offset..l.b_offset], l.input, l.output),
                T::one(),
                out,
            );
            if l.relu {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
        ws.acts.last().unwrap()
    }

    /// Accumulates the parameter gradient into `grad` given the gradient of
    /// the loss with respect to the outputs of the last forward call.
    pub fn backward(&self, x: &[T], ws: &mut Workspace<T>, d_out: &[T], grad: &mut [T]) {
        let batch = ws.batch;
        assert_eq!(grad.len(), self.params.len());
        let last = self.layers.len() - 1;
        ws.deltas[last].copy_from_slice(d_out);
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let rows = batch * l.rows_per_sample;
            let (lower, upper) = ws.deltas.split_at_mut(k);
            let delta = &mut upper[0];
            if l.relu {
                for (d, &y) in delta.iter_mut().zip(&ws.acts[k]) {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let input: &[T] = if k == 0 { x } else { &ws.acts[k - 1] };
            let (gw, gb) = grad[l.w_offset..l.b_offset + l.output].split_at_mut(l.input * l.output);
            gemm(
                View::new(input, rows, l.input).t(),
                View::new(delta, rows, l.output),
                T::one(),
                gw,
            );
            for row in delta.chunks_exact(l.output) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
            if k > 0 {
                gemm(
                    View::new(delta, rows, l.output),
                    View::new(&self.params[l.w_offset..l.b_offset], l.input, l.output).t(),
                    T::zero(),
                    &mut lower[k - 1],
                );
            }
        }
    }

    /// Number of multiplications in one single-sample forward pass.
    pub fn multiplications(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.rows_per_sample * l.input * l.output) as u64)
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|&p| U::from(p).unwrap())
                .collect(),
        }
    }
}
