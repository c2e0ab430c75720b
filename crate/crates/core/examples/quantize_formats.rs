//! Rounds a few values into fixed, float and power-of-two formats, with and
//! without a global scale.

use lpnum::qformats::{enumerate_codepoints, GlobalScale};
use lpnum::{NumericFormat, RoundingMode, ScaledFormat};

fn main() -> lpnum::Result<()> {
    let formats = [
        ScaledFormat::unscaled("fixed[0,12]".parse()?),
        ScaledFormat::unscaled("fixed[6,6]".parse()?),
        ScaledFormat::new("fixed[6,6]".parse()?, GlobalScale(-4)),
        ScaledFormat::unscaled("float[5,6]".parse()?),
        ScaledFormat::unscaled(NumericFormat::pot(6)?),
    ];
    let inputs = [0.3, -0.01171875, 1.0e-5, std::f64::consts::PI, 100.0];
    for f in &formats {
        println!("{f}: range [{}, {}]", f.min(), f.max());
        for x in inputs {
            let nearest = f.quantize(x, RoundingMode::Nearest, None)?;
            let truncated = f.quantize(x, RoundingMode::Truncate, None)?;
            println!("  {x:>12} -> nearest {nearest:<14} truncate {truncated}");
        }
    }
    let small: NumericFormat = "float[3,2]".parse()?;
    println!("{small} codepoints: {:?}", enumerate_codepoints(&small)?);
    Ok(())
}
