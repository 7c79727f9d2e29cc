//! Yield curves as linear combinations of basis functions of maturity.

use std::fmt;

use crate::error::{Error, Result};

type BasisFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

enum Kind {
    /// Cardinal natural cubic splines: `B_n` interpolates the n-th unit
    /// vector at the knots. `second[n]` holds its second derivatives.
    NaturalCubic {
        knots: Vec<f64>,
        second: Vec<Vec<f64>>,
    },
    Custom(Vec<BasisFn>),
}

pub struct CurveBasis {
    kind: Kind,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for CurveBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("CurveBasis");
        if let Kind::NaturalCubic { knots, .. } = &self.kind {
            d.field("knots", knots);
        }
        d.field("len", &self.len())
            .field("range", &(self.lo, self.hi))
            .finish()
    }
}

impl CurveBasis {
    pub fn natural_cubic(knots: &[f64]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidBasis("need at least two knots".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBasis(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        let n = knots.len();
        let second = (0..n)
            .map(|i| {
                let mut y = vec![0.0; n];
                y[i] = 1.0;
                natural_second_derivatives(knots, &y)
            })
            .collect();
        Ok(CurveBasis {
            kind: Kind::NaturalCubic {
                knots: knots.to_vec(),
                second,
            },
            lo: knots[0],
            hi: knots[n - 1],
        })
    }

    /// Arbitrary basis functions, valid on `[lo, hi]`.
    pub fn custom(functions: Vec<BasisFn>, lo: f64, hi: f64) -> Result<Self> {
        if functions.is_empty() || !(lo <= hi) {
            return Err(Error::InvalidBasis(
                "need at least one function and lo <= hi".into(),
            ));
        }
        Ok(CurveBasis {
            kind: Kind::Custom(functions),
            lo,
            hi,
        })
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::NaturalCubic { knots, .. } => knots.len(),
            Kind::Custom(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// `B_n(tau)`; `tau` must lie in [`CurveBasis::range`].
    pub fn eval(&self, n: usize, tau: f64) -> f64 {
        match &self.kind {
            Kind::NaturalCubic { knots, second } => {
                let i = match knots[1..].iter().position(|k| tau <= *k) {
                    Some(i) => i,
                    None => knots.len() - 2,
                };
                let (x0, x1) = (knots[i], knots[i + 1]);
                let h = x1 - x0;
                let a = (x1 - tau) / h;
                let b = (tau - x0) / h;
                let y0 = if n == i { 1.0 } else { 0.0 };
                let y1 = if n == i + 1 { 1.0 } else { 0.0 };
                let m = &second[n];
                a * y0
                    + b * y1
                    + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
            }
            Kind::Custom(f) => f[n](tau),
        }
    }
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for r in 0..inner {
        let i = r + 1;
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[r] = 2.0 * (h0 + h1);
        upper[r] = h1;
        rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        if r > 0 {
            let w = h0 / diag[r - 1];
            diag[r] -= w * upper[r - 1];
            rhs[r] -= w * rhs[r - 1];
        }
    }
    for r in (0..inner).rev() {
        let next = if r + 1 < inner { m[r + 2] } else { 0.0 };
        m[r + 1] = (rhs[r] - upper[r] * next) / diag[r];
    }
    m
}

/// `y(tau) = sum_n coeffs[n] * B_n(tau)`.
pub fn curve_at(basis: &CurveBasis, coeffs: &[f64], tau: f64) -> Result<f64> {
    if coeffs.len() != basis.len() {
        return Err(Error::CoefficientMismatch {
            expected: basis.len(),
            got: coeffs.len(),
        });
    }
    if !(tau >= basis.lo && tau <= basis.hi) {
        return Err(Error::TauOutOfRange {
            tau,
            lo: basis.lo,
            hi: basis.hi,
        });
    }
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(n, c)| c * basis.eval(n, tau))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Natural cubic spline through (x, y) in power form, one cubic per
    /// interval, from a dense solve of all 4(n-1) conditions.
    fn power_form_spline(x: &[f64], y: &[f64]) -> Vec<[f64; 4]> {
        let seg = x.len() - 1;
        let dim = 4 * seg;
        let mut a = vec![vec![0.0; dim + 1]; dim];
        let mut row = 0;
        let val = |t: f64| [1.0, t, t * t, t * t * t];
        let d1 = |t: f64| [0.0, 1.0, 2.0 * t, 3.0 * t * t];
        let d2 = |t: f64| [0.0, 0.0, 2.0, 6.0 * t];
        for s in 0..seg {
            for (t, target) in [(x[s], y[s]), (x[s + 1], y[s + 1])] {
                a[row][4 * s..4 * s + 4].copy_from_slice(&val(t));
                a[row][dim] = target;
                row += 1;
            }
        }
        for s in 0..seg - 1 {
            let t = x[s + 1];
            for deriv in [d1, d2] {
                let c = deriv(t);
                for q in 0..4 {
                    a[row][4 * s + q] = c[q];
                    a[row][4 * (s + 1) + q] = -c[q];
                }
                row += 1;
            }
        }
        a[row][0..4].copy_from_slice(&d2(x[0]));
        row += 1;
        a[row][4 * (seg - 1)..4 * seg].copy_from_slice(&d2(x[seg]));
        // Gaussian elimination with partial pivoting
        for col in 0..dim {
            let piv = (col..dim)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for r in 0..dim {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    if f != 0.0 {
                        for c in col..=dim {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
        }
        (0..seg)
            .map(|s| {
                let mut c = [0.0; 4];
                for q in 0..4 {
                    c[q] = a[4 * s + q][dim] / a[4 * s + q][4 * s + q];
                }
                c
            })
            .collect()
    }

    #[test]
    fn zero_coefficients_give_zero_curve() {
        let basis = CurveBasis::natural_cubic(&[1.0, 5.0, 10.0, 30.0]).unwrap();
        for tau in [1.0, 2.5, 7.0, 30.0] {
            assert_eq!(curve_at(&basis, &[0.0; 4], tau).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_basis() {
        let basis = CurveBasis::custom(vec![Box::new(|_| 1.0)], 0.0, 30.0).unwrap();
        assert_eq!(curve_at(&basis, &[0.042], 12.0).unwrap(), 0.042);
    }

    #[test]
    fn matches_power_form_spline() {
        let knots = [1.0, 5.0, 10.0, 30.0];
        let basis = CurveBasis::natural_cubic(&knots).unwrap();
        let coeffs = [0.031, 0.0405, 0.0462, 0.0518];
        let pieces = power_form_spline(&knots, &coeffs);
        for i in 0..=290 {
            let tau = 1.0 + i as f64 * 0.1;
            let s = knots[1..].iter().position(|k| tau <= *k).unwrap();
            let c = pieces[s];
            let expected = c[0] + c[1] * tau + c[2] * tau * tau + c[3] * tau * tau * tau;
            let got = curve_at(&basis, &coeffs, tau).unwrap();
            assert!(
                (got - expected).abs() < 1e-12,
                "tau {tau}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn interpolates_at_knots() {
        let knots = [0.5, 2.0, 3.0, 7.0, 10.0];
        let basis = CurveBasis::natural_cubic(&knots).unwrap();
        for (i, k) in knots.iter().enumerate() {
            for n in 0..knots.len() {
                let want = if i == n { 1.0 } else { 0.0 };
                assert!((basis.eval(n, *k) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn errors() {
        let basis = CurveBasis::natural_cubic(&[1.0, 5.0, 10.0]).unwrap();
        assert!(matches!(
            curve_at(&basis, &[1.0, 2.0, 3.0], 0.5),
            Err(Error::TauOutOfRange { .. })
        ));
        assert_eq!(
            curve_at(&basis, &[1.0], 2.0),
            Err(Error::CoefficientMismatch {
                expected: 3,
                got: 1
            })
        );
        assert!(CurveBasis::natural_cubic(&[1.0]).is_err());
        assert!(CurveBasis::natural_cubic(&[1.0, 1.0, 2.0]).is_err());
    }
}
