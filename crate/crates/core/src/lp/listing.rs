use std::io::{self, Write};

use super::{LinearProgram, Sense};

fn term_list(row: &[f64]) -> String {
    let mut out = String::new();
    for (j, &a) in row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        if out.is_empty() {
            if a < 0.0 {
                out.push_str("- ");
            }
        } else {
            out.push_str(if a < 0.0 { " - " } else { " + " });
        }
        out.push_str(&format!("{} x{j}", a.abs()));
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// Writes `lp` as a human-readable listing (debugging aid).
pub fn write_listing<W: Write>(lp: &LinearProgram, mut out: W) -> io::Result<()> {
    let sense = match lp.sense {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    writeln!(out, "{sense}")?;
    writeln!(out, "  obj: {}", term_list(&lp.objective))?;
    writeln!(out, "subject to")?;
    for (i, row) in lp.eq_rows.iter().enumerate() {
        writeln!(out, "  e{i}: {} = {}", term_list(row), lp.eq_rhs[i])?;
    }
    for (i, row) in lp.le_rows.iter().enumerate() {
        writeln!(out, "  l{i}: {} <= {}", term_list(row), lp.le_rhs[i])?;
    }
    writeln!(out, "bounds")?;
    for j in 0..lp.num_vars() {
        writeln!(out, "  {} <= x{j} <= {}", lp.lower[j], lp.upper[j])?;
    }
    writeln!(out, "end")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_mentions_every_row() {
        let mut lp = LinearProgram::new(2, Sense::Minimize).with_objective(vec![1.0, -2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_le(vec![0.0, 3.0], 2.0);
        let mut buf = Vec::new();
        write_listing(&lp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("obj: 1 x0 - 2 x1"));
        assert!(text.contains("e0: 1 x0 + 1 x1 = 1"));
        assert!(text.contains("l0: 3 x1 <= 2"));
    }
}
