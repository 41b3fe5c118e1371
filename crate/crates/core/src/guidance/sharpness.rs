use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{variance, Scalar};

/// Raw sharpness of the period-1 binary checkerboard; used as the normaliser.
pub const SHARPNESS_REFERENCE: f64 = 16.0;

/// Valid-region response of the 4-neighbour Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]`.
pub fn laplacian_response<T: Scalar>(image: &Matrix<T>) -> Result<Matrix<T>> {
    let (h, w) = image.shape();
    if h < 3 || w < 3 {
        return Err(Error::shape("image of at least 3x3", format!("{h}x{w}")));
    }
    let four = T::lit(4.0);
    Ok(Matrix::from_fn(h - 2, w - 2, |y, x| {
        let (y, x) = (y + 1, x + 1);
        image.get(y - 1, x) + image.get(y + 1, x) + image.get(y, x - 1) + image.get(y, x + 1) - four * image.get(y, x)
    }))
}

/// Variance of the Laplacian response over the image interior.
pub fn laplacian_sharpness<T: Scalar>(image: &Matrix<T>) -> Result<T> {
    Ok(variance(laplacian_response(image)?.as_slice()))
}

/// Sharpness divided by its value on the period-1 checkerboard.
pub fn normalized_sharpness<T: Scalar>(image: &Matrix<T>) -> Result<T> {
    Ok(laplacian_sharpness(image)? / T::lit(SHARPNESS_REFERENCE))
}

/// `(2r+1)^2` box filter with edge replication; radius 0 is the identity.
pub fn box_blur<T: Scalar>(image: &Matrix<T>, radius: usize) -> Matrix<T> {
    if radius == 0 {
        return image.clone();
    }
    let (h, w) = image.shape();
    let r = radius as isize;
    let area = T::from_usize_lossy((2 * radius + 1) * (2 * radius + 1));
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    Matrix::from_fn(h, w, |y, x| {
        let mut s = T::zero();
        for dy in -r..=r {
            for dx in -r..=r {
                s += image.get(clamp(y as isize + dy, h), clamp(x as isize + dx, w));
            }
        }
        s / area
    })
}

/// Binary 0/1 checkerboard with period one pixel.
pub fn checkerboard<T: Scalar>(height: usize, width: usize) -> Matrix<T> {
    Matrix::from_fn(height, width, |y, x| if (x + y) % 2 == 0 { T::one() } else { T::zero() })
}
