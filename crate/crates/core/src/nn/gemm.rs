//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Layout {
        Layout {
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix, viewed as `cols x rows`.
    pub fn transposed(rows: usize, cols: usize) -> Layout {
        Layout {
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols as isize,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        ((self.rows - 1) as isize * self.rs + (self.cols - 1) as isize * self.cs) as usize + 1
    }
}

/// `c = a * b + beta * c` with `c` row-major.
pub(crate) fn gemm(a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    assert_eq!(la.cols, lb.rows, "inner dimensions differ");
    assert!(a.len() >= la.span() && b.len() >= lb.span());
    assert!(c.len() >= la.rows * lb.cols);
    // SAFETY: operand extents are checked above and the strides are nonnegative
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            lb.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(&a, Layout::row_major(2, 3), &b, Layout::row_major(3, 2), &mut c, 0.0);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // a^T a, 3x3
        let mut d = [0.0; 9];
        gemm(&a, Layout::transposed(2, 3), &a, Layout::row_major(2, 3), &mut d, 0.0);
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
