//! Low-precision numeric formats emulated over binary64.
//!
//! A value "in" a format is an `f64` that happens to be a member of the
//! format's representable set. Rounding maps an arbitrary finite `f64` onto
//! that set: saturate to the format's range first, then pick one of the two
//! bracketing codepoints by the requested [`RoundingMode`].
//!
//! Floating-point formats follow an IEEE-like layout (sign, biased exponent,
//! implicit leading one, gradual underflow) but reserve no codes for
//! infinities or NaN: the all-ones exponent is an ordinary binade and
//! overflow saturates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest payload width accepted by the format constructors.
pub const DEFAULT_WIDTH_CAP: u32 = 16;

/// `2^k` built directly from the exponent field, exact for the normal range.
pub fn pow2(k: i32) -> f64 {
    if (-1022..=1023).contains(&k) {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        2f64.powi(k)
    }
}

/// `floor(log2(|x|))` for finite nonzero `x`, read off the bit pattern.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        // binary64 subnormal
        floor_log2(x * pow2(64)) - 64
    } else {
        exp - 1023
    }
}

/// Two's-complement fixed point with `I` integer and `F` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    int_bits: u32,
    frac_bits: u32,
}

impl FixedFormat {
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::with_cap(int_bits, frac_bits, DEFAULT_WIDTH_CAP)
    }

    pub fn with_cap(int_bits: u32, frac_bits: u32, cap: u32) -> Result<Self> {
        let bits = int_bits + frac_bits;
        if bits == 0 {
            return Err(Error::InvalidFormat("fixed format needs at least one bit".into()));
        }
        if bits > cap {
            return Err(Error::WidthCap { bits, cap });
        }
        Ok(Self { int_bits, frac_bits })
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn width(&self) -> u32 {
        self.int_bits + self.frac_bits
    }

    pub fn epsilon(&self) -> f64 {
        pow2(-(self.frac_bits as i32))
    }

    pub fn max(&self) -> f64 {
        pow2(self.int_bits as i32 - 1) - self.epsilon()
    }

    pub fn min(&self) -> f64 {
        -pow2(self.int_bits as i32 - 1)
    }

    /// Value of a `width()`-bit two's-complement pattern.
    pub fn decode(&self, bits: u32) -> f64 {
        let w = self.width();
        let mask = if w == 32 { u32::MAX } else { (1u32 << w) - 1 };
        let raw = (bits & mask) as i64;
        let k = if raw >= 1i64 << (w - 1) { raw - (1i64 << w) } else { raw };
        k as f64 * self.epsilon()
    }
}

/// Minifloat with one sign bit, `E` exponent bits and `M` mantissa bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    exp_bits: u32,
    man_bits: u32,
    bias: i32,
}

impl FloatFormat {
    /// Standard bias `2^(E-1) - 1`.
    pub fn new(exp_bits: u32, man_bits: u32) -> Result<Self> {
        if exp_bits == 0 {
            return Err(Error::InvalidFormat(
                "float format needs at least one exponent bit".into(),
            ));
        }
        let bias = (1i32 << (exp_bits.min(30) - 1)) - 1;
        Self::with_bias(exp_bits, man_bits, bias)
    }

    /// Explicit exponent bias. Context-relative floats use `2^(E-1)` so that
    /// the exponent field reads as a two's-complement offset from the scale.
    pub fn with_bias(exp_bits: u32, man_bits: u32, bias: i32) -> Result<Self> {
        if exp_bits == 0 {
            return Err(Error::InvalidFormat(
                "float format needs at least one exponent bit".into(),
            ));
        }
        let bits = 1 + exp_bits + man_bits;
        if bits > DEFAULT_WIDTH_CAP {
            return Err(Error::WidthCap {
                bits,
                cap: DEFAULT_WIDTH_CAP,
            });
        }
        Ok(Self {
            exp_bits,
            man_bits,
            bias,
        })
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits
    }

    pub fn man_bits(&self) -> u32 {
        self.man_bits
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn is_standard_bias(&self) -> bool {
        self.bias == (1i32 << (self.exp_bits - 1)) - 1
    }

    pub fn width(&self) -> u32 {
        1 + self.exp_bits + self.man_bits
    }

    /// Exponent of the smallest normal binade.
    pub fn emin(&self) -> i32 {
        1 - self.bias
    }

    /// Exponent of the largest binade (the all-ones code is a normal binade).
    pub fn emax(&self) -> i32 {
        (1i32 << self.exp_bits) - 1 - self.bias
    }

    pub fn max(&self) -> f64 {
        pow2(self.emax()) * (2.0 - pow2(-(self.man_bits as i32)))
    }

    pub fn min_positive(&self) -> f64 {
        // with M = 0 the subnormal code holds only zero
        pow2(self.emin() - self.man_bits as i32)
    }

    pub fn decode(&self, bits: u32) -> f64 {
        let m_mask = (1u32 << self.man_bits) - 1;
        let e_mask = (1u32 << self.exp_bits) - 1;
        let man = bits & m_mask;
        let exp = (bits >> self.man_bits) & e_mask;
        let neg = (bits >> (self.man_bits + self.exp_bits)) & 1 == 1;
        let frac = man as f64 * pow2(-(self.man_bits as i32));
        let mag = if exp == 0 {
            pow2(self.emin()) * frac
        } else {
            pow2(exp as i32 - self.bias) * (1.0 + frac)
        };
        if neg {
            -mag
        } else {
            mag
        }
    }
}

/// Power-of-two scale `2^k` applied uniformly to a format's grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalScale(pub i32);

impl GlobalScale {
    pub const ONE: GlobalScale = GlobalScale(0);

    pub fn exponent(&self) -> i32 {
        self.0
    }

    pub fn factor(&self) -> f64 {
        pow2(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMode {
    /// Nearest codepoint, ties to the even code.
    Nearest,
    Stochastic,
    /// Toward negative infinity on the grid.
    Truncate,
}

impl FromStr for RoundingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" => Ok(Self::Nearest),
            "stochastic" => Ok(Self::Stochastic),
            "truncate" => Ok(Self::Truncate),
            other => Err(Error::InvalidFormat(format!("unknown rounding mode '{other}'"))),
        }
    }
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nearest => "nearest",
            Self::Stochastic => "stochastic",
            Self::Truncate => "truncate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NumericFormat {
    Fixed(FixedFormat),
    Float(FloatFormat),
    /// The binary64 reference precision itself; rounding is the identity.
    Wide,
}

/// The two codepoints bracketing a value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Whether `lo` carries an even code (used for ties).
    pub lo_even: bool,
}

impl NumericFormat {
    pub fn fixed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        FixedFormat::new(int_bits, frac_bits).map(Self::Fixed)
    }

    pub fn float(exp_bits: u32, man_bits: u32) -> Result<Self> {
        FloatFormat::new(exp_bits, man_bits).map(Self::Float)
    }

    /// `float[E,0]`: zero and signed powers of two.
    pub fn pot(exp_bits: u32) -> Result<Self> {
        Self::float(exp_bits, 0)
    }

    pub fn width(&self) -> Option<u32> {
        match self {
            Self::Fixed(f) => Some(f.width()),
            Self::Float(f) => Some(f.width()),
            Self::Wide => None,
        }
    }

    pub fn is_pot(&self) -> bool {
        matches!(self, Self::Float(f) if f.man_bits == 0)
    }

    pub fn max(&self) -> f64 {
        match self {
            Self::Fixed(f) => f.max(),
            Self::Float(f) => f.max(),
            Self::Wide => f64::MAX,
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Self::Fixed(f) => f.min(),
            Self::Float(f) => -f.max(),
            Self::Wide => f64::MIN,
        }
    }

    /// Bracket for an unscaled, already saturated `x`.
    fn bracket_unscaled(&self, x: f64) -> Bracket {
        match self {
            Self::Wide => Bracket {
                lo: x,
                hi: x,
                lo_even: true,
            },
            Self::Fixed(f) => {
                let ulp = f.epsilon();
                let q = (x / ulp).floor();
                let lo = q * ulp;
                let lo_even = q.rem_euclid(2.0) == 0.0;
                if lo == x {
                    Bracket { lo, hi: lo, lo_even }
                } else {
                    Bracket {
                        lo,
                        hi: lo + ulp,
                        lo_even,
                    }
                }
            }
            Self::Float(f) => {
                if x == 0.0 {
                    return Bracket {
                        lo: 0.0,
                        hi: 0.0,
                        lo_even: true,
                    };
                }
                let mag = x.abs();
                let m = f.man_bits as i32;
                let e = floor_log2(mag).max(f.emin());
                let ulp = pow2(e - m);
                let q = (mag / ulp).floor();
                let lo_m = q * ulp;
                let lo_m_even = if m == 0 {
                    // codes are exponent codes; zero has code 0
                    if lo_m == 0.0 {
                        true
                    } else {
                        (e + f.bias).rem_euclid(2) == 0
                    }
                } else {
                    q.rem_euclid(2.0) == 0.0
                };
                let (lo_m, hi_m) = if lo_m == mag { (lo_m, lo_m) } else { (lo_m, lo_m + ulp) };
                if x > 0.0 {
                    Bracket {
                        lo: lo_m,
                        hi: hi_m,
                        lo_even: lo_m_even,
                    }
                } else {
                    Bracket {
                        lo: -hi_m,
                        hi: -lo_m,
                        // adjacent codes alternate parity
                        lo_even: if lo_m == hi_m { lo_m_even } else { !lo_m_even },
                    }
                }
            }
        }
    }
}

/// A format together with a power-of-two scale of its grid. This is also the
/// parsed form of format literals such as `fixed[0,12]*2^-4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaledFormat {
    pub format: NumericFormat,
    pub scale: GlobalScale,
}

impl ScaledFormat {
    pub fn new(format: NumericFormat, scale: GlobalScale) -> Self {
        Self { format, scale }
    }

    pub fn unscaled(format: NumericFormat) -> Self {
        Self::new(format, GlobalScale::ONE)
    }

    pub fn wide() -> Self {
        Self::unscaled(NumericFormat::Wide)
    }

    pub fn max(&self) -> f64 {
        match self.format {
            NumericFormat::Wide => f64::MAX,
            f => f.max() * self.scale.factor(),
        }
    }

    pub fn min(&self) -> f64 {
        match self.format {
            NumericFormat::Wide => f64::MIN,
            f => f.min() * self.scale.factor(),
        }
    }

    pub fn saturate(&self, x: f64) -> Result<f64> {
        saturate(x, &self.format, self.scale)
    }

    pub fn quantize(&self, x: f64, mode: RoundingMode, rng: Option<&mut RngStream>) -> Result<f64> {
        quantize(x, &self.format, self.scale, mode, rng)
    }

    pub fn is_representable(&self, x: f64) -> bool {
        is_representable(x, &self.format, self.scale)
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(x))
    }
}

/// Adjacent codepoints of `fmt * scale` bracketing `x` (`lo == hi == x` when
/// `x` is representable). `x` must already lie within the saturation range.
pub fn grid_neighbors(x: f64, fmt: &NumericFormat, scale: GlobalScale) -> Result<(f64, f64)> {
    let b = bracket(x, fmt, scale)?;
    Ok((b.lo, b.hi))
}

pub fn bracket(x: f64, fmt: &NumericFormat, scale: GlobalScale) -> Result<Bracket> {
    check_finite(x)?;
    if let NumericFormat::Wide = fmt {
        return Ok(fmt.bracket_unscaled(x));
    }
    let k = scale.exponent();
    let b = fmt.bracket_unscaled(x * pow2(-k));
    let s = pow2(k);
    Ok(Bracket {
        lo: b.lo * s,
        hi: b.hi * s,
        lo_even: b.lo_even,
    })
}

/// Clamp to `[min, max]` of `fmt * scale`.
pub fn saturate(x: f64, fmt: &NumericFormat, scale: GlobalScale) -> Result<f64> {
    check_finite(x)?;
    if let NumericFormat::Wide = fmt {
        return Ok(x);
    }
    let s = scale.factor();
    Ok(x.clamp(fmt.min() * s, fmt.max() * s))
}

fn pick(b: Bracket, x: f64, mode: RoundingMode, rng: Option<&mut RngStream>) -> Result<f64> {
    match mode {
        RoundingMode::Truncate => Ok(b.lo),
        RoundingMode::Nearest => {
            if b.lo == b.hi {
                return Ok(b.lo);
            }
            let below = x - b.lo;
            let above = b.hi - x;
            Ok(if below < above {
                b.lo
            } else if above < below {
                b.hi
            } else if b.lo_even {
                b.lo
            } else {
                b.hi
            })
        }
        RoundingMode::Stochastic => {
            let rng = rng.ok_or(Error::MissingRng)?;
            // one draw per call regardless of representability keeps
            // streams aligned across elements
            let u = rng.unit();
            if b.lo == b.hi {
                return Ok(b.lo);
            }
            let p = (x - b.lo) / (b.hi - b.lo);
            Ok(if u < p { b.hi } else { b.lo })
        }
    }
}

/// Round `x` (already saturated) up with probability `(x - lo) / (hi - lo)`.
pub fn stochastic_round(x: f64, fmt: &NumericFormat, scale: GlobalScale, rng: &mut RngStream) -> Result<f64> {
    let b = bracket(x, fmt, scale)?;
    pick(b, x, RoundingMode::Stochastic, Some(rng))
}

/// Saturate, then round onto the grid of `fmt * scale`.
pub fn quantize(
    x: f64,
    fmt: &NumericFormat,
    scale: GlobalScale,
    mode: RoundingMode,
    rng: Option<&mut RngStream>,
) -> Result<f64> {
    if mode == RoundingMode::Stochastic && rng.is_none() {
        return Err(Error::MissingRng);
    }
    let x = saturate(x, fmt, scale)?;
    let q = match fmt {
        NumericFormat::Wide => x,
        _ => pick(bracket(x, fmt, scale)?, x, mode, rng)?,
    };
    // -0 and +0 are the same codepoint
    Ok(if q == 0.0 { 0.0 } else { q })
}

pub fn is_representable(x: f64, fmt: &NumericFormat, scale: GlobalScale) -> bool {
    if !x.is_finite() {
        return false;
    }
    if let NumericFormat::Wide = fmt {
        return true;
    }
    let s = scale.factor();
    if x < fmt.min() * s || x > fmt.max() * s {
        return false;
    }
    matches!(bracket(x, fmt, scale), Ok(b) if b.lo == x && b.hi == x)
}

/// Every representable value of `fmt`, strictly increasing, with negative
/// zero collapsed into zero.
pub fn enumerate_codepoints(fmt: &NumericFormat) -> Result<Vec<f64>> {
    match fmt {
        NumericFormat::Wide => Err(Error::InvalidFormat(
            "the wide format has no finite codepoint table".into(),
        )),
        NumericFormat::Fixed(f) => {
            let w = f.width();
            if w > DEFAULT_WIDTH_CAP {
                return Err(Error::WidthCap {
                    bits: w,
                    cap: DEFAULT_WIDTH_CAP,
                });
            }
            let half = 1i64 << (w - 1);
            Ok((-half..half).map(|k| k as f64 * f.epsilon()).collect())
        }
        NumericFormat::Float(f) => {
            let w = f.width();
            if w > DEFAULT_WIDTH_CAP {
                return Err(Error::WidthCap {
                    bits: w,
                    cap: DEFAULT_WIDTH_CAP,
                });
            }
            let mut v: Vec<f64> = (0..1u32 << w)
                .map(|b| f.decode(b))
                .map(|x| if x == 0.0 { 0.0 } else { x })
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            v.dedup();
            Ok(v)
        }
    }
}

impl fmt::Display for NumericFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(x) => write!(f, "fixed[{},{}]", x.int_bits, x.frac_bits),
            Self::Float(x) if x.is_standard_bias() => write!(f, "float[{},{}]", x.exp_bits, x.man_bits),
            Self::Float(x) => write!(f, "float[{},{};bias={}]", x.exp_bits, x.man_bits, x.bias),
            Self::Wide => f.write_str("wide"),
        }
    }
}

impl fmt::Display for ScaledFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.format)?;
        if self.scale.0 != 0 {
            write!(f, "*2^{}", self.scale.0)?;
        }
        Ok(())
    }
}

/// Parses `name[a,b]` (or `name[a]`) and returns the name plus arguments.
pub(crate) fn parse_call(s: &str) -> Option<(&str, Vec<u32>)> {
    let open = s.find('[')?;
    let body = s[open + 1..].strip_suffix(']')?;
    let args = body
        .split(',')
        .map(|a| a.trim().parse::<u32>().ok())
        .collect::<Option<Vec<_>>>()?;
    Some((s[..open].trim(), args))
}

impl FromStr for NumericFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("wide") {
            return Ok(Self::Wide);
        }
        let bad = || Error::InvalidFormat(format!("cannot parse format '{s}'"));
        let (name, args) = parse_call(s).ok_or_else(bad)?;
        match (name, args.as_slice()) {
            ("fixed", [i, f]) => Self::fixed(*i, *f),
            ("float", [e, m]) => Self::float(*e, *m),
            ("pot", [e]) => Self::pot(*e),
            _ => Err(bad()),
        }
    }
}

impl FromStr for ScaledFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once('*') {
            None => Ok(Self::unscaled(s.parse()?)),
            Some((base, scale)) => {
                let k = scale
                    .trim()
                    .strip_prefix("2^")
                    .and_then(|k| k.trim().parse::<i32>().ok())
                    .ok_or_else(|| Error::InvalidFormat(format!("bad scale suffix in '{s}'")))?;
                Ok(Self::new(base.parse()?, GlobalScale(k)))
            }
        }
    }
}

macro_rules! serde_via_str {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}
serde_via_str!(NumericFormat);
serde_via_str!(ScaledFormat);

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(i: u32, f: u32) -> NumericFormat {
        NumericFormat::fixed(i, f).unwrap()
    }
    fn fl(e: u32, m: u32) -> NumericFormat {
        NumericFormat::float(e, m).unwrap()
    }
    const ONE: GlobalScale = GlobalScale::ONE;

    #[test]
    fn fixed_neighbors() {
        assert_eq!(grid_neighbors(0.3, &fx(0, 2), ONE).unwrap(), (0.25, 0.5));
        assert_eq!(grid_neighbors(0.25, &fx(0, 2), ONE).unwrap(), (0.25, 0.25));
        assert_eq!(grid_neighbors(-0.3, &fx(0, 2), ONE).unwrap(), (-0.5, -0.25));
    }

    #[test]
    fn float_neighbors() {
        let (lo, hi) = grid_neighbors(1.3, &fl(5, 6), ONE).unwrap();
        assert_eq!(lo, 1.0 + 19.0 / 64.0);
        assert_eq!(hi, 1.0 + 20.0 / 64.0);
        let (lo, hi) = grid_neighbors(-1.3, &fl(5, 6), ONE).unwrap();
        assert_eq!((lo, hi), (-1.3125, -1.296875));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            grid_neighbors(f64::NAN, &fx(0, 2), ONE),
            Err(Error::NonFinite(_))
        ));
        assert!(saturate(f64::INFINITY, &fx(0, 2), ONE).is_err());
    }

    #[test]
    fn saturation() {
        assert_eq!(saturate(100.0, &fx(0, 12), ONE).unwrap(), 0.5 - pow2(-12));
        assert_eq!(saturate(-0.1, &fx(6, 6), ONE).unwrap(), -0.1);
        assert_eq!(saturate(-40.0, &fx(6, 6), ONE).unwrap(), -32.0);
        assert_eq!(saturate(1e9, &fl(5, 6), ONE).unwrap(), 65536.0 * (2.0 - 1.0 / 64.0));
    }

    #[test]
    fn stochastic_probabilities() {
        let f = fx(0, 2);
        let mut rng = RngStream::new(1);
        let n = 200_000;
        let ups = (0..n)
            .filter(|_| stochastic_round(0.3, &f, ONE, &mut rng).unwrap() == 0.5)
            .count();
        let p = ups as f64 / n as f64;
        // eps = 0.25: p(up) = 0.05 / 0.25 = 0.2
        let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((p - 0.2).abs() < 4.0 * sigma, "p = {p}");
        for _ in 0..1000 {
            assert_eq!(stochastic_round(0.25, &f, ONE, &mut rng).unwrap(), 0.25);
        }
    }

    #[test]
    fn nearest_and_truncate() {
        assert_eq!(
            quantize(0.7, &NumericFormat::pot(6).unwrap(), ONE, RoundingMode::Nearest, None).unwrap(),
            0.5
        );
        for f in [fx(0, 12), fx(6, 6), fl(5, 6), fl(6, 0)] {
            for m in [RoundingMode::Nearest, RoundingMode::Truncate] {
                assert_eq!(quantize(0.0, &f, ONE, m, None).unwrap(), 0.0);
            }
        }
        assert_eq!(
            quantize(pow2(-20), &fx(0, 12), ONE, RoundingMode::Truncate, None).unwrap(),
            0.0
        );
        assert_eq!(
            quantize(-0.3, &fx(0, 2), ONE, RoundingMode::Truncate, None).unwrap(),
            -0.5
        );
    }

    #[test]
    fn ties_to_even() {
        // 0.375 sits between 0.25 (k=1) and 0.5 (k=2)
        assert_eq!(
            quantize(0.375, &fx(1, 2), ONE, RoundingMode::Nearest, None).unwrap(),
            0.5
        );
        assert_eq!(
            quantize(0.125, &fx(1, 2), ONE, RoundingMode::Nearest, None).unwrap(),
            0.0
        );
        assert_eq!(
            quantize(-0.375, &fx(1, 2), ONE, RoundingMode::Nearest, None).unwrap(),
            -0.5
        );
        // float[6,0]: 1.5 between 2^0 (code 31, odd) and 2^1 (code 32, even)
        assert_eq!(quantize(1.5, &fl(6, 0), ONE, RoundingMode::Nearest, None).unwrap(), 2.0);
        assert_eq!(quantize(3.0, &fl(6, 0), ONE, RoundingMode::Nearest, None).unwrap(), 2.0);
        // halfway to the smallest power of two goes to zero
        assert_eq!(
            quantize(pow2(-31), &fl(6, 0), ONE, RoundingMode::Nearest, None).unwrap(),
            0.0
        );
    }

    #[test]
    fn missing_rng() {
        assert!(matches!(
            quantize(0.3, &fx(0, 2), ONE, RoundingMode::Stochastic, None),
            Err(Error::MissingRng)
        ));
    }

    #[test]
    fn codepoint_tables() {
        assert_eq!(enumerate_codepoints(&fx(1, 1)).unwrap(), vec![-1.0, -0.5, 0.0, 0.5]);
        let pot = enumerate_codepoints(&fl(6, 0)).unwrap();
        assert_eq!(pot.len(), 2 * 63 + 1);
        assert!(pot.iter().all(|&v| v == 0.0 || v.abs() == pow2(floor_log2(v))));
        assert_eq!(pot[pot.len() - 1], pow2(32));
        assert_eq!(pot[64], pow2(-30));
        assert!(enumerate_codepoints(&NumericFormat::Wide).is_err());
    }

    #[test]
    fn width_cap() {
        assert!(matches!(FixedFormat::new(10, 7), Err(Error::WidthCap { .. })));
        assert!(FixedFormat::new(0, 0).is_err());
        assert!(FloatFormat::new(8, 8).is_err());
        assert!(FixedFormat::with_cap(10, 10, 24).is_ok());
    }

    #[test]
    fn global_scale_grid() {
        let f = fx(0, 12);
        let s = GlobalScale(-4);
        assert_eq!(ScaledFormat::new(f, s).max(), (0.5 - pow2(-12)) / 16.0);
        assert_eq!(
            grid_neighbors(pow2(-16) * 2.5, &f, s).unwrap(),
            (2.0 * pow2(-16), 3.0 * pow2(-16))
        );
    }

    #[test]
    fn parse_and_display() {
        for s in ["fixed[0,12]", "float[5,6]", "fixed[0,12]*2^-4", "wide", "float[6,0]"] {
            let f: ScaledFormat = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        let p: ScaledFormat = "pot[6]".parse().unwrap();
        assert_eq!(p.to_string(), "float[6,0]");
        assert!("fixed[0]".parse::<ScaledFormat>().is_err());
        assert!("fixed[0,12]*3^2".parse::<ScaledFormat>().is_err());
        assert!("bogus".parse::<ScaledFormat>().is_err());
    }

    #[test]
    fn subnormal_rounding_keeps_tiny_values() {
        let f = fl(5, 6);
        let tiny = f.max() * 0.0 + pow2(-20) * 0.75; // below min_positive = 2^-20
        let mut rng = RngStream::new(9);
        let n = 100_000;
        let nonzero = (0..n)
            .filter(|_| quantize(tiny, &f, ONE, RoundingMode::Stochastic, Some(&mut rng)).unwrap() != 0.0)
            .count();
        let p = nonzero as f64 / n as f64;
        assert!((p - 0.75).abs() < 0.01);
    }
}
