use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::TraceSet;
use crate::error::{at_path, Result};

/// Shortest `%.9g`-style rendering: nine significant digits, trailing zeros
/// trimmed, exponent form outside `[1e-5, 1e9)`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Rounding to nine digits may bump the decade, so take the exponent from
    // the rounded scientific form.
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `trace_id,label,s0,...,s{L-1}`, one row per trace.
pub fn write_csv_to<W: Write>(set: &TraceSet, mut w: W) -> Result<()> {
    write!(w, "trace_id,label")?;
    for i in 0..set.trace_len() {
        write!(w, ",s{i}")?;
    }
    writeln!(w)?;
    for (id, (trace, label)) in set.iter().enumerate() {
        write!(w, "{id},{label}")?;
        for &x in trace.samples() {
            write!(w, ",{}", format_sig9(x))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_csv(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(at_path(path))?);
    write_csv_to(set, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::trace::{PowerTrace, Scenario};

    #[test]
    fn sig9_examples() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.5), "1.5");
        assert_eq!(format_sig9(-0.013), "-0.013");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789.0), "123456789");
        assert_eq!(format_sig9(1234567890.0), "1.23456789e9");
        assert_eq!(format_sig9(0.000012345), "1.2345e-5");
        assert_eq!(format_sig9(-0.0001), "-0.0001");
        assert_eq!(format_sig9(0.00012345), "0.00012345");
        assert_eq!(format_sig9(9.999999999), "10");
    }

    proptest! {
        // Nine significant digits are enough to recover any f32 exactly.
        #[test]
        fn sig9_recovers_f32(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f32 = format_sig9(x as f64).parse().unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn csv_layout() {
        let set = TraceSet::new(
            vec![
                PowerTrace::new(vec![0.5, -0.25]).unwrap(),
                PowerTrace::new(vec![1.0, 2.0]).unwrap(),
            ],
            vec![Scenario::Benign, Scenario::Trojan],
            BTreeMap::new(),
        )
        .unwrap();
        let mut out = Vec::new();
        write_csv_to(&set, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "trace_id,label,s0,s1\n0,benign,0.5,-0.25\n1,trojan,1,2\n"
        );
    }
}
