//! Strided matrix-multiply kernel shared by the graph operations.

/// Views a slice as a strided `rows × cols` matrix starting at `offset`.
#[derive(Clone, Copy)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatView {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        Self {
            offset,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major block with `cols` columns.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        Self {
            offset,
            rs: 1,
            cs: cols,
        }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`, all strided.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: MatView,
    b: &[f64],
    bv: MatView,
    c: &mut [f64],
    cv: MatView,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.last_index(m, n) < c.len(), "gemm: c out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[cv.offset + i * cv.rs + j * cv.cs] *= beta;
            }
        }
        return;
    }
    assert!(av.last_index(m, k) < a.len(), "gemm: a out of bounds");
    assert!(bv.last_index(k, n) < b.len(), "gemm: b out of bounds");
    // SAFETY: every addressed element was bounds-checked above, and `c` is
    // borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
