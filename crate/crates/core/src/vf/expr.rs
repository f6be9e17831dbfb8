//! Expression trees for vector-field components and their generic evaluator.
//!
//! Variables are stored zero-based; the textual form (`x1`, `u1`, ...) is
//! one-based.

use std::fmt;

use super::dual::Number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Cbrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Cbrt => "cbrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "cbrt" => Func::Cbrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X(usize),
    U(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Why a pointwise evaluation failed. Mapped to [`crate::Error`] by the caller,
/// which knows the component index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    DivisionByZero,
    SqrtOfNegative(f64),
    NotDifferentiable(&'static str),
    NonFinite,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::DivisionByZero => write!(f, "division by zero"),
            Fault::SqrtOfNegative(v) => write!(f, "sqrt of negative value {v}"),
            Fault::NotDifferentiable(name) => write!(f, "{name} is not differentiable at 0"),
            Fault::NonFinite => write!(f, "non-finite intermediate value"),
        }
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    /// `c0 + Σ cᵢ·termᵢ`, dropping zero coefficients and writing ±1
    /// coefficients without a multiplication.
    pub fn linear_combination(terms: Vec<(f64, Expr)>, c0: f64) -> Expr {
        let mut acc: Option<Expr> = if c0 != 0.0 { Some(Expr::Const(c0)) } else { None };
        for (c, term) in terms {
            if c == 0.0 {
                continue;
            }
            let magnitude = if c.abs() == 1.0 {
                term
            } else {
                Expr::mul(Expr::Const(c.abs()), term)
            };
            acc = Some(match (acc, c < 0.0) {
                (None, false) => magnitude,
                (None, true) => Expr::neg(magnitude),
                (Some(a), false) => Expr::add(a, magnitude),
                (Some(a), true) => Expr::sub(a, magnitude),
            });
        }
        acc.unwrap_or(Expr::Const(0.0))
    }

    /// Replace every state and control variable by the expressions the maps return.
    pub fn substitute(&self, xs: &dyn Fn(usize) -> Expr, us: &dyn Fn(usize) -> Expr) -> Expr {
        let sub = |e: &Expr| Box::new(e.substitute(xs, us));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::X(i) => xs(*i),
            Expr::U(j) => us(*j),
            Expr::Add(a, b) => Expr::Add(sub(a), sub(b)),
            Expr::Sub(a, b) => Expr::Sub(sub(a), sub(b)),
            Expr::Mul(a, b) => Expr::Mul(sub(a), sub(b)),
            Expr::Div(a, b) => Expr::Div(sub(a), sub(b)),
            Expr::Pow(a, k) => Expr::Pow(sub(a), *k),
            Expr::Neg(a) => Expr::Neg(sub(a)),
            Expr::Call(func, a) => Expr::Call(*func, sub(a)),
        }
    }

    /// Largest one-based state / control index referenced, as `(max_x, max_u)`.
    pub fn max_indices(&self) -> (usize, usize) {
        match self {
            Expr::Const(_) => (0, 0),
            Expr::X(i) => (i + 1, 0),
            Expr::U(j) => (0, j + 1),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let (ax, au) = a.max_indices();
                let (bx, bu) = b.max_indices();
                (ax.max(bx), au.max(bu))
            }
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Call(_, a) => a.max_indices(),
        }
    }

    pub fn eval<T: Number>(&self, x: &[T], u: &[T]) -> Result<T, Fault> {
        let v = match self {
            Expr::Const(c) => T::from_f64(*c),
            Expr::X(i) => x[*i],
            Expr::U(j) => u[*j],
            Expr::Add(a, b) => a.eval(x, u)?.add(b.eval(x, u)?),
            Expr::Sub(a, b) => a.eval(x, u)?.sub(b.eval(x, u)?),
            Expr::Mul(a, b) => a.eval(x, u)?.mul(b.eval(x, u)?),
            Expr::Div(a, b) => a.eval(x, u)?.div(b.eval(x, u)?)?,
            Expr::Pow(a, k) => powi(a.eval(x, u)?, *k)?,
            Expr::Neg(a) => a.eval(x, u)?.neg(),
            Expr::Call(func, a) => {
                let arg = a.eval(x, u)?;
                match func {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Exp => arg.exp(),
                    Func::Sqrt => arg.sqrt()?,
                    Func::Abs => arg.abs()?,
                    Func::Cbrt => arg.cbrt()?,
                }
            }
        };
        if v.value().is_finite() {
            Ok(v)
        } else {
            Err(Fault::NonFinite)
        }
    }
}

/// Integer power by repeated multiplication, so that `0^k` is exactly zero.
fn powi<T: Number>(base: T, k: i32) -> Result<T, Fault> {
    let mut acc = T::from_f64(1.0);
    for _ in 0..k.unsigned_abs() {
        acc = acc.mul(base);
    }
    if k < 0 {
        T::from_f64(1.0).div(acc)
    } else {
        Ok(acc)
    }
}

// Binding strength used by the printer; mirrors the grammar levels.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_FACTOR: u8 = 3;
const PREC_ATOM: u8 = 4;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => PREC_SUM,
            Expr::Mul(..) | Expr::Div(..) => PREC_PRODUCT,
            Expr::Neg(..) | Expr::Pow(..) => PREC_FACTOR,
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => PREC_FACTOR,
            _ => PREC_ATOM,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "(")?;
            self.write_at(f, PREC_SUM)?;
            return write!(f, ")");
        }
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::X(i) => write!(f, "x{}", i + 1),
            Expr::U(j) => write!(f, "u{}", j + 1),
            Expr::Add(a, b) => {
                a.write_at(f, PREC_SUM)?;
                write!(f, " + ")?;
                b.write_at(f, PREC_PRODUCT)
            }
            Expr::Sub(a, b) => {
                a.write_at(f, PREC_SUM)?;
                write!(f, " - ")?;
                b.write_at(f, PREC_PRODUCT)
            }
            Expr::Mul(a, b) => {
                a.write_at(f, PREC_PRODUCT)?;
                write!(f, "*")?;
                b.write_at(f, PREC_FACTOR)
            }
            Expr::Div(a, b) => {
                a.write_at(f, PREC_PRODUCT)?;
                write!(f, "/")?;
                b.write_at(f, PREC_FACTOR)
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.write_at(f, PREC_FACTOR)
            }
            Expr::Pow(a, k) => {
                a.write_at(f, PREC_ATOM)?;
                write!(f, "^{k}")
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_at(f, PREC_SUM)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, PREC_SUM)
    }
}
