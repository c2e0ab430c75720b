//! Per-class format assignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::context::{requantize_in_context, Context, ContextBase, ContextFormat};
use crate::error::{Error, Result};
use crate::qformats::{NumericFormat, RoundingMode, ScaledFormat};
use crate::qtensor::{OpCounts, TensorFormat};
use crate::rng::RngStream;

/// The six value classes a scheme constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterClass {
    Weights,
    Biases,
    Outputs,
    Gradients,
    WeightUpdates,
    BiasUpdates,
}

impl ParameterClass {
    pub const ALL: [ParameterClass; 6] = [
        Self::Weights,
        Self::Biases,
        Self::Outputs,
        Self::Gradients,
        Self::WeightUpdates,
        Self::BiasUpdates,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Weights => "weights",
            Self::Biases => "biases",
            Self::Outputs => "outputs",
            Self::Gradients => "gradients",
            Self::WeightUpdates => "weight-updates",
            Self::BiasUpdates => "bias-updates",
        }
    }
}

impl fmt::Display for ParameterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParameterClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown parameter class '{s}'")))
    }
}

/// A format literal as it appears in scheme tables and configs: `wide`, a
/// plain (optionally scaled) format, or a context base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatSpec {
    Wide,
    Plain(ScaledFormat),
    Context(ContextBase),
}

impl FormatSpec {
    pub fn is_wide(&self) -> bool {
        matches!(self, Self::Wide)
    }

    pub fn is_context(&self) -> bool {
        matches!(self, Self::Context(_))
    }

    /// True when every member is zero or a signed power of two.
    pub fn is_pot(&self) -> bool {
        matches!(self, Self::Plain(f) if f.format.is_pot())
    }

    /// Payload width used for storage estimates; wide counts as 32 bits.
    pub fn bits(&self) -> u32 {
        match self {
            Self::Wide => 32,
            Self::Plain(f) => f.format.width().unwrap_or(32),
            Self::Context(b) => b.width(),
        }
    }

    pub fn tensor_format(&self, ctx: Option<&Context>) -> Result<TensorFormat> {
        Ok(match self {
            Self::Wide => TensorFormat::Wide,
            Self::Plain(f) => TensorFormat::Plain(*f),
            Self::Context(b) => {
                let ctx = ctx.ok_or_else(|| Error::Config(format!("{b} needs a context")))?;
                TensorFormat::Context(ContextFormat::new(*b, ctx.clone()))
            }
        })
    }

    /// Quantizes `values` in place. Context formats recompute the context
    /// from the incoming values and tally one scale-adjust per element.
    pub fn quantize_in_place(
        &self,
        values: &mut [f64],
        site: &str,
        mode: RoundingMode,
        rng: &mut RngStream,
        counts: &mut OpCounts,
    ) -> Result<Option<Context>> {
        match self {
            Self::Wide => {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(*v));
                }
                Ok(None)
            }
            Self::Plain(f) => {
                for v in values.iter_mut() {
                    *v = f.quantize(*v, mode, Some(rng))?;
                }
                Ok(None)
            }
            Self::Context(b) => {
                if values.is_empty() {
                    return Ok(Some(Context::new(site, 0, 0)));
                }
                counts.scale_adjust += values.len() as u64;
                requantize_in_context(values, *b, site, mode, Some(rng)).map(Some)
            }
        }
    }

    /// Quantizes one value against an existing context (or none).
    pub fn quantize_value(
        &self,
        x: f64,
        ctx: Option<&Context>,
        mode: RoundingMode,
        rng: &mut RngStream,
    ) -> Result<f64> {
        self.tensor_format(ctx)?.grid().quantize(x, mode, Some(rng))
    }
}

impl fmt::Display for FormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Wide => f.write_str("wide"),
            Self::Plain(x) => write!(f, "{x}"),
            Self::Context(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for FormatSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.starts_with("ctx-") || t.starts_with("context-") {
            return t.parse().map(Self::Context);
        }
        let f: ScaledFormat = t.parse()?;
        Ok(match f.format {
            NumericFormat::Wide => Self::Wide,
            _ => Self::Plain(f),
        })
    }
}

impl Serialize for FormatSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FormatSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Named assignment of a format to every parameter class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub name: String,
    pub weights: FormatSpec,
    pub biases: FormatSpec,
    pub outputs: FormatSpec,
    pub gradients: FormatSpec,
    pub weight_updates: FormatSpec,
    pub bias_updates: FormatSpec,
}

pub const SCHEME_NAMES: [&str; 7] = [
    "fp32-baseline",
    "fixed12",
    "scaled-fixed12",
    "float12",
    "ctx-fixed12",
    "ctx-float12",
    "pot",
];

fn spec(s: &str) -> FormatSpec {
    s.parse().expect("built-in format literal")
}

impl SchemeConfig {
    pub fn uniform(name: &str, f: FormatSpec) -> Self {
        Self {
            name: name.into(),
            weights: f,
            biases: f,
            outputs: f,
            gradients: f,
            weight_updates: f,
            bias_updates: f,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let mut s = match name {
            "fp32-baseline" => Self::uniform(name, FormatSpec::Wide),
            "fixed12" => Self::uniform(name, spec("fixed[0,12]")),
            "scaled-fixed12" => Self::uniform(name, spec("fixed[0,12]*2^-4")),
            "float12" => Self::uniform(name, spec("float[5,6]")),
            "ctx-fixed12" => Self::uniform(name, spec("ctx-fixed[6,6]")),
            "ctx-float12" => Self::uniform(name, spec("ctx-float[4,7]")),
            "pot" => Self::uniform(name, spec("fixed[0,12]")),
            _ => return Err(Error::UnknownScheme(name.into())),
        };
        match name {
            "fixed12" => s.outputs = spec("fixed[6,6]"),
            "scaled-fixed12" => s.outputs = spec("fixed[6,6]*2^-4"),
            "pot" => {
                s.outputs = spec("pot[6]");
                s.gradients = spec("pot[6]");
            }
            _ => {}
        }
        Ok(s)
    }

    pub fn get(&self, class: ParameterClass) -> FormatSpec {
        match class {
            ParameterClass::Weights => self.weights,
            ParameterClass::Biases => self.biases,
            ParameterClass::Outputs => self.outputs,
            ParameterClass::Gradients => self.gradients,
            ParameterClass::WeightUpdates => self.weight_updates,
            ParameterClass::BiasUpdates => self.bias_updates,
        }
    }

    pub fn set(&mut self, class: ParameterClass, f: FormatSpec) {
        match class {
            ParameterClass::Weights => self.weights = f,
            ParameterClass::Biases => self.biases = f,
            ParameterClass::Outputs => self.outputs = f,
            ParameterClass::Gradients => self.gradients = f,
            ParameterClass::WeightUpdates => self.weight_updates = f,
            ParameterClass::BiasUpdates => self.bias_updates = f,
        }
    }

    /// Outputs and gradients both power-of-two: forward and both backward
    /// products can run as shifts.
    pub fn uses_shifts(&self) -> bool {
        self.outputs.is_pot() && self.gradients.is_pot()
    }

    pub fn uses_contexts(&self) -> bool {
        ParameterClass::ALL.iter().any(|c| self.get(*c).is_context())
    }

    /// True when at least one class is narrower than the wide reference.
    pub fn is_low_precision(&self) -> bool {
        ParameterClass::ALL.iter().any(|c| !self.get(*c).is_wide())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_schemes() {
        for n in SCHEME_NAMES {
            assert_eq!(SchemeConfig::from_name(n).unwrap().name, n);
        }
        assert!(matches!(
            SchemeConfig::from_name("fixed16"),
            Err(Error::UnknownScheme(_))
        ));
        let f = SchemeConfig::from_name("fixed12").unwrap();
        assert_eq!(f.outputs.to_string(), "fixed[6,6]");
        assert_eq!(f.weights.to_string(), "fixed[0,12]");
        let p = SchemeConfig::from_name("pot").unwrap();
        assert!(p.uses_shifts());
        assert_eq!(p.outputs.bits(), 7);
        assert_eq!(p.weight_updates.to_string(), "fixed[0,12]");
        let s = SchemeConfig::from_name("scaled-fixed12").unwrap();
        assert_eq!(s.weights.to_string(), "fixed[0,12]*2^-4");
        assert!(SchemeConfig::from_name("ctx-float12").unwrap().uses_contexts());
        assert!(!SchemeConfig::from_name("fp32-baseline").unwrap().is_low_precision());
    }

    #[test]
    fn format_spec_roundtrip() {
        for s in [
            "wide",
            "fixed[0,12]",
            "float[5,6]",
            "pot[6]",
            "fixed[6,6]*2^-4",
            "ctx-fixed[6,6]",
            "ctx-float[4,7]",
        ] {
            let f: FormatSpec = s.parse().unwrap();
            let back: FormatSpec = f.to_string().parse().unwrap();
            assert_eq!(f, back, "{s}");
        }
        assert!("fixed[0]".parse::<FormatSpec>().is_err());
    }

    #[test]
    fn class_names() {
        for c in ParameterClass::ALL {
            assert_eq!(c.as_str().parse::<ParameterClass>().unwrap(), c);
        }
        assert_eq!(
            "weight_updates".parse::<ParameterClass>().unwrap(),
            ParameterClass::WeightUpdates
        );
    }
}
