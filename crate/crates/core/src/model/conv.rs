//! Zero-padded 3×3 convolution over channel-last `N × C` grids.

use ndarray::{Array1, Array2, ArrayView2};

/// Builds the `N × (C·9)` patch matrix; out-of-grid taps are zero.
fn im2col(x: ArrayView2<f64>, height: usize, width: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut cols = Array2::zeros((height * width, c * 9));
    for y in 0..height {
        for xx in 0..width {
            let row = y * width + xx;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    let src = sy as usize * width + sx as usize;
                    for ch in 0..c {
                        cols[[row, ch * 9 + ky * 3 + kx]] = x[[src, ch]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch gradients back onto the grid.
fn col2im(dcols: ArrayView2<f64>, height: usize, width: usize, c: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((height * width, c));
    for y in 0..height {
        for xx in 0..width {
            let row = y * width + xx;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    let src = sy as usize * width + sx as usize;
                    for ch in 0..c {
                        dx[[src, ch]] += dcols[[row, ch * 9 + ky * 3 + kx]];
                    }
                }
            }
        }
    }
    dx
}

/// Returns the output and the patch matrix (kept for the backward pass).
pub fn conv3x3_forward(
    x: ArrayView2<f64>,
    height: usize,
    width: usize,
    weight: &Array2<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let cols = im2col(x, height, width);
    let out = cols.dot(&weight.t()) + bias;
    (out, cols)
}

/// Accumulates kernel and bias gradients; returns the input gradient when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    dout: ArrayView2<f64>,
    cols: &Array2<f64>,
    weight: &Array2<f64>,
    height: usize,
    width: usize,
    dweight: &mut Array2<f64>,
    dbias: &mut Array1<f64>,
    want_input: bool,
) -> Option<Array2<f64>> {
    *dweight += &dout.t().dot(cols);
    *dbias += &dout.sum_axis(ndarray::Axis(0));
    want_input.then(|| {
        let dcols = dout.dot(weight);
        col2im(dcols.view(), height, width, weight.ncols() / 9)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn center_tap_is_identity() {
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]];
        let mut w = Array2::zeros((1, 9));
        w[[0, 4]] = 1.0;
        let (y, _) = conv3x3_forward(x.view(), 2, 3, &w, &Array1::zeros(1));
        assert_eq!(y, x);
    }

    #[test]
    fn box_sum_with_zero_padding() {
        // 3x3 grid of ones, all-ones kernel: corner 4, edge 6, centre 9
        let x = Array2::ones((9, 1));
        let w = Array2::ones((1, 9));
        let (y, _) = conv3x3_forward(x.view(), 3, 3, &w, &array![0.5]);
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        for (v, e) in y.iter().zip(expect) {
            assert_eq!(*v, e + 0.5);
        }
    }

    #[test]
    fn input_gradient_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> for the linear part
        let (h, wd) = (3, 4);
        let x = Array2::from_shape_fn((h * wd, 2), |(i, c)| (i * 3 + c) as f64 * 0.1 - 0.7);
        let g = Array2::from_shape_fn((h * wd, 3), |(i, c)| ((i + 2 * c) % 5) as f64 - 2.0);
        let w = Array2::from_shape_fn((3, 18), |(o, j)| ((o * 7 + j) % 11) as f64 * 0.05 - 0.2);
        let b = Array1::zeros(3);
        let (y, cols) = conv3x3_forward(x.view(), h, wd, &w, &b);
        let mut dw = Array2::zeros(w.raw_dim());
        let mut db = Array1::zeros(3);
        let dx = conv3x3_backward(g.view(), &cols, &w, h, wd, &mut dw, &mut db, true).unwrap();
        let lhs: f64 = (&y * &g).sum();
        let rhs: f64 = (&x * &dx).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
