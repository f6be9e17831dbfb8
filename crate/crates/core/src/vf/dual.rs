//! Scalar types the expression evaluator runs over: plain `f64` values and
//! first-order dual numbers for forward-mode derivatives.

use super::expr::Fault;

pub trait Number: Copy {
    fn from_f64(c: f64) -> Self;
    fn value(&self) -> f64;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Result<Self, Fault>;
    fn neg(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Result<Self, Fault>;
    fn abs(self) -> Result<Self, Fault>;
    fn cbrt(self) -> Result<Self, Fault>;
}

impl Number for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Result<Self, Fault> {
        if o == 0.0 {
            Err(Fault::DivisionByZero)
        } else {
            Ok(self / o)
        }
    }
    fn neg(self) -> Self {
        -self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Result<Self, Fault> {
        if self < 0.0 {
            Err(Fault::SqrtOfNegative(self))
        } else {
            Ok(f64::sqrt(self))
        }
    }
    fn abs(self) -> Result<Self, Fault> {
        Ok(f64::abs(self))
    }
    fn cbrt(self) -> Result<Self, Fault> {
        Ok(f64::cbrt(self))
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }

    pub fn variable(re: f64) -> Self {
        Dual { re, eps: 1.0 }
    }
}

impl Number for Dual {
    fn from_f64(c: f64) -> Self {
        Dual { re: c, eps: 0.0 }
    }
    fn value(&self) -> f64 {
        self.re
    }
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
    fn div(self, o: Self) -> Result<Self, Fault> {
        if o.re == 0.0 {
            return Err(Fault::DivisionByZero);
        }
        let re = self.re / o.re;
        Ok(Dual::new(re, (self.eps - re * o.eps) / o.re))
    }
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.eps * self.re.sin())
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn sqrt(self) -> Result<Self, Fault> {
        if self.re < 0.0 {
            return Err(Fault::SqrtOfNegative(self.re));
        }
        if self.re == 0.0 {
            return Err(Fault::NotDifferentiable("sqrt"));
        }
        let s = self.re.sqrt();
        Ok(Dual::new(s, self.eps / (2.0 * s)))
    }
    fn abs(self) -> Result<Self, Fault> {
        if self.re == 0.0 {
            return Err(Fault::NotDifferentiable("abs"));
        }
        Ok(Dual::new(self.re.abs(), self.eps * self.re.signum()))
    }
    fn cbrt(self) -> Result<Self, Fault> {
        if self.re == 0.0 {
            return Err(Fault::NotDifferentiable("cbrt"));
        }
        let c = self.re.cbrt();
        Ok(Dual::new(c, self.eps / (3.0 * c * c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::variable(3.0);
        let y = Dual::from_f64(2.0);
        let p = x.mul(x).mul(y);
        assert_eq!(p, Dual::new(18.0, 12.0));
        let q = Dual::from_f64(1.0).div(x).unwrap();
        assert!((q.eps + 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn nonsmooth_primitives_flag_zero() {
        let z = Dual::variable(0.0);
        assert_eq!(z.sqrt(), Err(Fault::NotDifferentiable("sqrt")));
        assert_eq!(z.abs(), Err(Fault::NotDifferentiable("abs")));
        assert_eq!(z.cbrt(), Err(Fault::NotDifferentiable("cbrt")));
        assert_eq!(Number::sqrt(0.0f64), Ok(0.0));
        assert_eq!(Dual::variable(-2.0).abs().unwrap(), Dual::new(2.0, -1.0));
    }

    #[test]
    fn cbrt_derivative() {
        let c = Dual::variable(-8.0).cbrt().unwrap();
        assert_eq!(c.re, -2.0);
        assert!((c.eps - 1.0 / 12.0).abs() < 1e-15);
    }
}
