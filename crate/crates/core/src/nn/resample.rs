use crate::tensor::{Batch, Matrix, Scalar};

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Scalar>(x: &Batch<T>) -> Batch<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut y = Batch::zeros(x.c, x.n, h2, w2);
    for c in 0..x.c {
        for s in 0..x.n {
            let src = x.map(c, s);
            let dst = y.map_mut(c, s);
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * x.w + j / 2];
                }
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &Batch<T>) -> Batch<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Batch::zeros(dy.c, dy.n, h, w);
    for c in 0..dy.c {
        for s in 0..dy.n {
            let src = dy.map(c, s);
            let dst = dx.map_mut(c, s);
            for i in 0..dy.h {
                for j in 0..dy.w {
                    dst[(i / 2) * w + j / 2] += src[i * dy.w + j];
                }
            }
        }
    }
    dx
}

/// 2×2 max pooling, stride 2. Returns the output and the flat argmax of
/// each window within its input plane.
pub fn max_pool2<T: Scalar>(x: &Batch<T>) -> (Batch<T>, Vec<usize>) {
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut y = Batch::zeros(x.c, x.n, ho, wo);
    let mut arg = Vec::with_capacity(y.data.len());
    for c in 0..x.c {
        for s in 0..x.n {
            let src = x.map(c, s);
            let dst = y.map_mut(c, s);
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (2 * i) * x.w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = (2 * i + di) * x.w + 2 * j + dj;
                        if src[k] > src[best] {
                            best = k;
                        }
                    }
                    dst[i * wo + j] = src[best];
                    arg.push(best);
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Scalar>(dy: &Batch<T>, arg: &[usize], h: usize, w: usize) -> Batch<T> {
    let mut dx = Batch::zeros(dy.c, dy.n, h, w);
    let plane = dy.plane();
    for c in 0..dy.c {
        for s in 0..dy.n {
            let base = (c * dy.n + s) * plane;
            let src = dy.map(c, s);
            let dst = dx.map_mut(c, s);
            for k in 0..plane {
                dst[arg[base + k]] += src[k];
            }
        }
    }
    dx
}

/// Spatial mean per channel, returned as `[N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Batch<T>) -> Matrix<T> {
    let inv = T::one() / T::lit(x.plane() as f64);
    let mut out = Matrix::zeros(x.n, x.c);
    for c in 0..x.c {
        for s in 0..x.n {
            let mut acc = T::zero();
            for &v in x.map(c, s) {
                acc += v;
            }
            out.row_mut(s)[c] = acc * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Matrix<T>, h: usize, w: usize) -> Batch<T> {
    let inv = T::one() / T::lit((h * w) as f64);
    let mut dx = Batch::zeros(dy.cols, dy.rows, h, w);
    for c in 0..dy.cols {
        for s in 0..dy.rows {
            let g = dy.row(s)[c] * inv;
            dx.map_mut(c, s).iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = Batch::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2(&x);
        assert_eq!(&y.data[..4], &[1.0, 1.0, 2.0, 2.0]);
        let g = Batch::from_vec(1, 1, 4, 4, (0..16).map(f64::from).collect()).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let dx = upsample2_backward(&g);
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Batch::from_vec(1, 1, 2, 4, vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 9.0, 1.0]).unwrap();
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data, vec![5.0, 9.0]);
        let dy = Batch::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let dx = max_pool2_backward(&dy, &arg, 2, 4);
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
