//! Semantic types and values of the common data model.
//!
//! Five base kinds with an optional unit tag on numeric kinds. The coercion
//! lattice is `integer < real < text`, `date < text`, `identifier < text`;
//! joining two numeric types with different units has no result because a
//! currency or measurement mismatch must go through a conversion function.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValueError {
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unit `{unit}` not allowed on {base} attributes")]
    UnitOnNonNumeric { base: BaseType, unit: String },
    #[error("cannot read `{text}` as {ty}")]
    BadLiteral { text: String, ty: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseType {
    Integer,
    Real,
    Text,
    Date,
    Identifier,
}

impl BaseType {
    pub fn is_numeric(self) -> bool {
        matches!(self, BaseType::Integer | BaseType::Real)
    }

    /// Least upper bound in the coercion lattice.
    pub fn join(self, other: BaseType) -> BaseType {
        use BaseType::*;
        match (self, other) {
            (a, b) if a == b => a,
            (Integer, Real) | (Real, Integer) => Real,
            _ => Text,
        }
    }

    /// True when values of `self` can be losslessly read as `target`.
    pub fn widens_to(self, target: BaseType) -> bool {
        self.join(target) == target
    }
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseType::Integer => "integer",
            BaseType::Real => "real",
            BaseType::Text => "text",
            BaseType::Date => "date",
            BaseType::Identifier => "identifier",
        })
    }
}

impl FromStr for BaseType {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "integer" | "int" => Ok(BaseType::Integer),
            "real" | "float" => Ok(BaseType::Real),
            "text" | "string" => Ok(BaseType::Text),
            "date" => Ok(BaseType::Date),
            "identifier" | "id" => Ok(BaseType::Identifier),
            _ => Err(ValueError::UnknownType(s.to_string())),
        }
    }
}

/// A base kind plus an optional unit tag (currency code, "years", ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticType {
    base: BaseType,
    unit: Option<String>,
}

impl SemanticType {
    pub fn new(base: BaseType, unit: Option<String>) -> Result<Self, ValueError> {
        match unit {
            Some(unit) if !base.is_numeric() => Err(ValueError::UnitOnNonNumeric { base, unit }),
            unit => Ok(Self { base, unit }),
        }
    }

    pub fn plain(base: BaseType) -> Self {
        Self { base, unit: None }
    }

    pub fn integer() -> Self {
        Self::plain(BaseType::Integer)
    }

    pub fn real() -> Self {
        Self::plain(BaseType::Real)
    }

    pub fn text() -> Self {
        Self::plain(BaseType::Text)
    }

    pub fn date() -> Self {
        Self::plain(BaseType::Date)
    }

    pub fn base(&self) -> BaseType {
        self.base
    }

    pub fn unit(&self) -> Option<&str> {
        self.unit.as_deref()
    }

    /// Coercion join. `None` when the two types carry conflicting units.
    ///
    /// A unit survives only while the result stays numeric; joining into
    /// `text` drops it.
    pub fn join(&self, other: &SemanticType) -> Option<SemanticType> {
        let unit = match (&self.unit, &other.unit) {
            (Some(a), Some(b)) if a != b => return None,
            (Some(a), _) | (_, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        let base = self.base.join(other.base);
        let unit = if base.is_numeric() { unit } else { None };
        Some(SemanticType { base, unit })
    }

    /// True when every value of `self` can be read as a value of `target`.
    pub fn coercible_to(&self, target: &SemanticType) -> bool {
        self.join(target).as_ref() == Some(target)
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        if let Some(unit) = &self.unit {
            write!(f, ":{unit}")?;
        }
        Ok(())
    }
}

impl FromStr for SemanticType {
    type Err = ValueError;

    /// Parses `base[:unit]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, unit) = match s.split_once(':') {
            Some((b, u)) => (b, Some(u.to_string())),
            None => (s, None),
        };
        SemanticType::new(base.parse()?, unit.filter(|u| !u.is_empty()))
    }
}

/// How a date was written in its source file, so results can be shown the
/// way the component database shows them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DateFormat {
    #[default]
    Iso,
    /// `dd/mm/yyyy`
    DayMonthYear,
    /// `dd/mm/yy`
    DayMonthShortYear,
}

impl DateFormat {
    pub fn render(self, date: NaiveDate) -> String {
        match self {
            DateFormat::Iso => date.format("%Y-%m-%d").to_string(),
            DateFormat::DayMonthYear => date.format("%d/%m/%Y").to_string(),
            DateFormat::DayMonthShortYear => {
                format!("{:02}/{:02}/{:02}", date.day(), date.month(), date.year().rem_euclid(100))
            }
        }
    }
}

/// Two-digit years at or above this value belong to the 1900s.
const SHORT_YEAR_PIVOT: i32 = 30;

/// Parses ISO `yyyy-mm-dd`, `dd/mm/yyyy` or `dd/mm/yy`.
pub fn parse_date(text: &str) -> Option<(NaiveDate, DateFormat)> {
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Some((d, DateFormat::Iso));
    }
    let mut parts = text.split('/');
    let (d, m, y) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let day: u32 = d.parse().ok()?;
    let month: u32 = m.parse().ok()?;
    let (year, fmt) = match y.len() {
        2 => {
            let yy: i32 = y.parse().ok()?;
            let century = if yy >= SHORT_YEAR_PIVOT { 1900 } else { 2000 };
            (century + yy, DateFormat::DayMonthShortYear)
        }
        4 => (y.parse().ok()?, DateFormat::DayMonthYear),
        _ => return None,
    };
    NaiveDate::from_ymd_opt(year, month, day).map(|date| (date, fmt))
}

/// A single attribute value. Reals never hold NaN or infinities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Date(NaiveDate),
    Identifier(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    /// Reads a literal as a value of `ty`. The `NULL` literal is handled by
    /// the callers since quoting rules differ per file format.
    pub fn parse_as(text: &str, ty: &SemanticType) -> Result<Value, ValueError> {
        let bad = || ValueError::BadLiteral { text: text.to_string(), ty: ty.to_string() };
        Ok(match ty.base() {
            BaseType::Integer => Value::Integer(text.trim().parse().map_err(|_| bad())?),
            BaseType::Real => {
                let v: f64 = text.trim().parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                Value::Real(v)
            }
            BaseType::Text => Value::Text(text.to_string()),
            BaseType::Date => Value::Date(parse_date(text.trim()).ok_or_else(bad)?.0),
            BaseType::Identifier => Value::Identifier(text.to_string()),
        })
    }

    /// The base kind this value belongs to, `None` for null.
    pub fn base(&self) -> Option<BaseType> {
        Some(match self {
            Value::Null => return None,
            Value::Integer(_) => BaseType::Integer,
            Value::Real(_) => BaseType::Real,
            Value::Text(_) => BaseType::Text,
            Value::Date(_) => BaseType::Date,
            Value::Identifier(_) => BaseType::Identifier,
        })
    }

    pub fn conforms_to(&self, ty: &SemanticType) -> bool {
        self.base().is_none_or(|b| b == ty.base())
    }

    /// Moves a value up the lattice. `None` when `ty` is not reachable.
    pub fn coerce_to(&self, ty: &SemanticType) -> Option<Value> {
        let Some(base) = self.base() else {
            return Some(Value::Null);
        };
        if base == ty.base() {
            return Some(self.clone());
        }
        match (self, ty.base()) {
            (Value::Integer(i), BaseType::Real) => Some(Value::Real(*i as f64)),
            (v, BaseType::Text) => Some(Value::Text(v.to_string())),
            _ => None,
        }
    }

    /// Default used to backfill a new non-nullable attribute.
    pub fn default_for(ty: &SemanticType) -> Value {
        match ty.base() {
            BaseType::Integer => Value::Integer(0),
            BaseType::Real => Value::Real(0.0),
            BaseType::Text => Value::Text(String::new()),
            BaseType::Date => Value::Date(NaiveDate::default()),
            BaseType::Identifier => Value::Identifier(String::new()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Comparison used by predicates. Null compares to nothing; integers
    /// and reals compare numerically; text and identifiers compare as
    /// strings.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        use Value::*;
        match (self, other) {
            (Null, _) | (_, Null) => None,
            (Integer(a), Integer(b)) => Some(a.cmp(b)),
            (Integer(_) | Real(_), Integer(_) | Real(_)) => self.as_f64()?.partial_cmp(&other.as_f64()?),
            (Text(a) | Identifier(a), Text(b) | Identifier(b)) => Some(a.cmp(b)),
            (Date(a), Date(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) => 1,
            Value::Real(_) => 2,
            Value::Text(_) => 3,
            Value::Date(_) => 4,
            Value::Identifier(_) => 5,
        }
    }

    /// Renders the value with dates in the given source format.
    pub fn render(&self, date_format: DateFormat) -> String {
        match self {
            Value::Date(d) => date_format.render(*d),
            Value::Null => String::new(),
            v => v.to_string(),
        }
    }
}

fn canonical_bits(r: f64) -> u64 {
    if r == 0.0 {
        0
    } else {
        r.to_bits()
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Structural total order: variants first, then payload. Used for sorting
/// and multiset comparison, not for predicate evaluation.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        use Value::*;
        match (self, other) {
            (Integer(a), Integer(b)) => a.cmp(b),
            (Real(a), Real(b)) => {
                if canonical_bits(*a) == canonical_bits(*b) {
                    Ordering::Equal
                } else {
                    a.total_cmp(b)
                }
            }
            (Text(a), Text(b)) | (Identifier(a), Identifier(b)) => a.cmp(b),
            (Date(a), Date(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Integer(i) => i.hash(state),
            Value::Real(r) => canonical_bits(*r).hash(state),
            Value::Text(s) | Value::Identifier(s) => s.hash(state),
            Value::Date(d) => d.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) | Value::Identifier(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> SemanticType {
        s.parse().unwrap()
    }

    #[test]
    fn unit_only_on_numeric() {
        assert!(SemanticType::new(BaseType::Real, Some("USD".into())).is_ok());
        assert!(matches!("text:USD".parse::<SemanticType>(), Err(ValueError::UnitOnNonNumeric { .. })));
    }

    #[test]
    fn join_follows_lattice() {
        assert_eq!(ty("integer").join(&ty("real")), Some(ty("real")));
        assert_eq!(ty("date").join(&ty("integer")), Some(ty("text")));
        assert_eq!(ty("identifier").join(&ty("identifier")), Some(ty("identifier")));
        assert_eq!(ty("integer:USD").join(&ty("real:USD")), Some(ty("real:USD")));
        assert_eq!(ty("integer:USD").join(&ty("integer")), Some(ty("integer:USD")));
        assert_eq!(ty("integer:USD").join(&ty("integer:INR")), None);
        assert_eq!(ty("real:USD").join(&ty("text")), Some(ty("text")));
    }

    // Brute-force check of join against the explicit order relation.
    #[test]
    fn base_join_is_least_upper_bound() {
        use BaseType::*;
        let all = [Integer, Real, Text, Date, Identifier];
        let le = |a: BaseType, b: BaseType| {
            a == b
                || matches!(
                    (a, b),
                    (Integer, Real) | (Integer, Text) | (Real, Text) | (Date, Text) | (Identifier, Text)
                )
        };
        for a in all {
            for b in all {
                let uppers: Vec<_> = all.iter().copied().filter(|&u| le(a, u) && le(b, u)).collect();
                let least = uppers.iter().copied().find(|&u| uppers.iter().all(|&v| le(u, v))).unwrap();
                assert_eq!(a.join(b), least, "{a} join {b}");
            }
        }
    }

    #[test]
    fn dates_parse_in_all_formats() {
        let (d, f) = parse_date("27/01/68").unwrap();
        assert_eq!(d, NaiveDate::from_ymd_opt(1968, 1, 27).unwrap());
        assert_eq!(f, DateFormat::DayMonthShortYear);
        assert_eq!(f.render(d), "27/01/68");
        let (d, f) = parse_date("10/08/1999").unwrap();
        assert_eq!(f.render(d), "10/08/1999");
        assert_eq!(parse_date("1999-08-10").unwrap().0, d);
        assert_eq!(parse_date("05/03/12").unwrap().0.year(), 2012);
        assert!(parse_date("31/02/1999").is_none());
        assert!(parse_date("1/2/3/4").is_none());
    }

    #[test]
    fn real_display_drops_trailing_zero() {
        assert_eq!(Value::Real(9.0).to_string(), "9");
        assert_eq!(Value::Real(9.6).to_string(), "9.6");
    }

    #[test]
    fn comparisons() {
        assert_eq!(Value::Integer(3).compare(&Value::Real(2.5)), Some(Ordering::Greater));
        assert_eq!(Value::Null.compare(&Value::Null), None);
        assert_eq!(Value::text("a").compare(&Value::Integer(1)), None);
        assert_ne!(Value::Integer(1), Value::Real(1.0));
        assert_eq!(Value::Real(0.0), Value::Real(-0.0));
    }

    #[test]
    fn coercion() {
        assert_eq!(Value::Integer(2).coerce_to(&ty("real")), Some(Value::Real(2.0)));
        assert_eq!(Value::Real(2.5).coerce_to(&ty("text")), Some(Value::text("2.5")));
        assert_eq!(Value::Real(2.5).coerce_to(&ty("integer")), None);
        assert_eq!(Value::Null.coerce_to(&ty("date")), Some(Value::Null));
    }
}
