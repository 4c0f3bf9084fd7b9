//! Floating-point scalars the solvers are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

/// Storage and arithmetic precision of an operator or solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown precision tag '{other}'"
            ))),
        }
    }
}

/// Real scalar (`f32` or `f64`) underlying the complex arithmetic.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← beta·c + alpha·a·b` on strided complex matrices.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing (except
    /// `a`/`b` with each other) regions of the stated shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Complex<Self>,
        a: *const Complex<Self>,
        rsa: isize,
        csa: isize,
        b: *const Complex<Self>,
        rsb: isize,
        csb: isize,
        beta: Complex<Self>,
        c: *mut Complex<Self>,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Complex<f32>,
        a: *const Complex<f32>,
        rsa: isize,
        csa: isize,
        b: *const Complex<f32>,
        rsb: isize,
        csb: isize,
        beta: Complex<f32>,
        c: *mut Complex<f32>,
        rsc: isize,
        csc: isize,
    ) {
        use matrixmultiply::CGemmOption::Standard;
        // Complex<f32> is repr(C) {re, im}, layout-identical to [f32; 2].
        matrixmultiply::cgemm(
            Standard,
            Standard,
            m,
            k,
            n,
            [alpha.re, alpha.im],
            a as *const [f32; 2],
            rsa,
            csa,
            b as *const [f32; 2],
            rsb,
            csb,
            [beta.re, beta.im],
            c as *mut [f32; 2],
            rsc,
            csc,
        )
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Complex<f64>,
        a: *const Complex<f64>,
        rsa: isize,
        csa: isize,
        b: *const Complex<f64>,
        rsb: isize,
        csb: isize,
        beta: Complex<f64>,
        c: *mut Complex<f64>,
        rsc: isize,
        csc: isize,
    ) {
        use matrixmultiply::CGemmOption::Standard;
        matrixmultiply::zgemm(
            Standard,
            Standard,
            m,
            k,
            n,
            [alpha.re, alpha.im],
            a as *const [f64; 2],
            rsa,
            csa,
            b as *const [f64; 2],
            rsb,
            csb,
            [beta.re, beta.im],
            c as *mut [f64; 2],
            rsc,
            csc,
        )
    }
}

/// Rounds a double-precision complex value into the target scalar.
#[inline]
pub fn cast<T: Real>(z: Complex<f64>) -> Complex<T> {
    Complex::new(T::lit(z.re), T::lit(z.im))
}

/// Widens a complex value to double precision.
#[inline]
pub fn widen<T: Real>(z: Complex<T>) -> Complex<f64> {
    Complex::new(z.re.as_f64(), z.im.as_f64())
}
