//! Conversion functions mapping local attribute values into the global
//! representation.
//!
//! A function body is either an arithmetic expression over its single
//! parameter that reduces to `scale * x + offset`, or one of the text
//! built-ins `upper`, `lower`, `trim` applied to the parameter.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::predicate::Comparator;
use crate::value::{BaseType, SemanticType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Builtin {
    Upper,
    Lower,
    Trim,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Builtin> {
        match name.to_ascii_lowercase().as_str() {
            "upper" => Some(Builtin::Upper),
            "lower" => Some(Builtin::Lower),
            "trim" => Some(Builtin::Trim),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Builtin::Upper => "upper",
            Builtin::Lower => "lower",
            Builtin::Trim => "trim",
        }
    }

    fn apply(self, s: &str) -> String {
        match self {
            Builtin::Upper => s.to_uppercase(),
            Builtin::Lower => s.to_lowercase(),
            Builtin::Trim => s.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Param,
    Number(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Builtin, Box<Expr>),
}

impl Expr {
    /// `(scale, offset)` when the expression is affine in the parameter.
    fn affine(&self) -> Result<(f64, f64), String> {
        Ok(match self {
            Expr::Param => (1.0, 0.0),
            Expr::Number(c) => (0.0, *c),
            Expr::Neg(e) => {
                let (a, b) = e.affine()?;
                (-a, -b)
            }
            Expr::Add(l, r) => {
                let ((a, b), (c, d)) = (l.affine()?, r.affine()?);
                (a + c, b + d)
            }
            Expr::Sub(l, r) => {
                let ((a, b), (c, d)) = (l.affine()?, r.affine()?);
                (a - c, b - d)
            }
            Expr::Mul(l, r) => match (l.affine()?, r.affine()?) {
                ((0.0, k), (a, b)) | ((a, b), (0.0, k)) => (a * k, b * k),
                _ => return Err("product of two parameter terms is not supported".into()),
            },
            Expr::Div(l, r) => match r.affine()? {
                (0.0, 0.0) => return Err("division by zero".into()),
                (0.0, k) => {
                    let (a, b) = l.affine()?;
                    (a / k, b / k)
                }
                _ => return Err("division by the parameter is not total".into()),
            },
            Expr::Call(..) => return Err("built-ins cannot appear inside arithmetic".into()),
        })
    }

    fn write(&self, param: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin = |f: &mut fmt::Formatter<'_>, l: &Expr, op: &str, r: &Expr| {
            f.write_str("(")?;
            l.write(param, f)?;
            write!(f, " {op} ")?;
            r.write(param, f)?;
            f.write_str(")")
        };
        match self {
            Expr::Param => f.write_str(param),
            Expr::Number(n) => write!(f, "{n}"),
            Expr::Neg(e) => {
                f.write_str("(-")?;
                e.write(param, f)?;
                f.write_str(")")
            }
            Expr::Add(l, r) => bin(f, l, "+", r),
            Expr::Sub(l, r) => bin(f, l, "-", r),
            Expr::Mul(l, r) => bin(f, l, "*", r),
            Expr::Div(l, r) => bin(f, l, "/", r),
            Expr::Call(b, e) => {
                write!(f, "{}(", b.name())?;
                e.write(param, f)?;
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Kernel {
    Affine { scale: f64, offset: f64 },
    Text(Builtin),
}

/// A pure, total, deterministic single-argument function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionFunction {
    pub name: String,
    pub param: String,
    pub input: SemanticType,
    pub output: SemanticType,
    pub body: Expr,
    kernel: Kernel,
}

fn is_textual(b: BaseType) -> bool {
    matches!(b, BaseType::Text | BaseType::Identifier)
}

impl ConversionFunction {
    pub fn new(
        name: impl Into<String>,
        param: impl Into<String>,
        input: SemanticType,
        output: SemanticType,
        body: Expr,
    ) -> Result<Self, String> {
        let kernel = match &body {
            Expr::Call(b, arg) => {
                if **arg != Expr::Param {
                    return Err("built-ins take the parameter itself".into());
                }
                if !is_textual(input.base()) || !is_textual(output.base()) {
                    return Err(format!("`{}` maps text to text", b.name()));
                }
                Kernel::Text(*b)
            }
            arith => {
                if !input.base().is_numeric() || !output.base().is_numeric() {
                    return Err("arithmetic conversions map numbers to numbers".into());
                }
                let (scale, offset) = arith.affine()?;
                if !scale.is_finite() || !offset.is_finite() {
                    return Err("coefficients overflow".into());
                }
                Kernel::Affine { scale, offset }
            }
        };
        Ok(Self { name: name.into(), param: param.into(), input, output, body, kernel })
    }

    /// Builds `scale * x + offset` directly.
    pub fn affine(
        name: &str,
        input: SemanticType,
        output: SemanticType,
        scale: f64,
        offset: f64,
    ) -> Result<Self, String> {
        let body = Expr::Add(
            Box::new(Expr::Mul(Box::new(Expr::Param), Box::new(Expr::Number(scale)))),
            Box::new(Expr::Number(offset)),
        );
        Self::new(name, "x", input, output, body)
    }

    /// Applies the function. Null maps to null; `None` when the value is not
    /// of the input kind.
    pub fn apply(&self, value: &Value) -> Option<Value> {
        if value.is_null() {
            return Some(Value::Null);
        }
        match self.kernel {
            Kernel::Affine { scale, offset } => {
                let y = scale * value.as_f64()? + offset;
                Some(match self.output.base() {
                    BaseType::Integer => Value::Integer(y.round() as i64),
                    _ => Value::Real(y),
                })
            }
            Kernel::Text(b) => match value {
                Value::Text(s) | Value::Identifier(s) => {
                    let out = b.apply(s);
                    Some(if self.output.base() == BaseType::Identifier {
                        Value::Identifier(out)
                    } else {
                        Value::Text(out)
                    })
                }
                _ => None,
            },
        }
    }

    /// Whether `f(x) <op> v` can be rewritten as a comparison on `x`.
    /// Rounding to an integer output breaks this unless the map is a shift.
    pub fn is_invertible(&self) -> bool {
        match self.kernel {
            Kernel::Affine { scale, offset } => {
                scale != 0.0
                    && (self.output.base() == BaseType::Real
                        || (self.input.base() == BaseType::Integer && scale.abs() == 1.0 && offset.fract() == 0.0))
            }
            Kernel::Text(_) => false,
        }
    }

    /// Rewrites `f(x) <op> literal` into `x <op'> literal'`.
    pub fn invert_comparison(&self, op: Comparator, literal: &Value) -> Option<(Comparator, Value)> {
        if !self.is_invertible() {
            return None;
        }
        let Kernel::Affine { scale, offset } = self.kernel else { return None };
        let v = literal.as_f64()?;
        let x = (v - offset) / scale;
        if !x.is_finite() {
            return None;
        }
        let op = if scale < 0.0 { op.mirrored() } else { op };
        Some((op, Value::Real(x)))
    }
}

impl fmt::Display for ConversionFunction {
    /// The definition as written in an assertion document.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "function {}({}: {}) -> {} = ", self.name, self.param, self.input, self.output)?;
        self.body.write(&self.param, f)?;
        f.write_str(";")
    }
}
