//! Brute-force oracle: enumerates every assignment of every symbol.

use super::PairOutcome;
use crate::verify::expr::{Assignment, Expr, Semantics};

pub fn check_pair(a: &Expr, b: &Expr, width: u32, max_bits: u32) -> PairOutcome {
    let mut vars = a.vars();
    vars.extend(b.vars());
    vars.sort_unstable();
    vars.dedup();
    let total = vars.len() as u32 * width;
    if total > max_bits {
        return PairOutcome::Unknown(format!(
            "{} symbols at width {width} exceed the {max_bits}-bit enumeration limit",
            vars.len()
        ));
    }
    let sem = Semantics::new(width);
    let slots = vars.iter().copied().max().unwrap_or(0) as usize;
    let mut values = vec![0u64; slots];
    let mut equal = true;
    let mut negated = true;
    let mut witness = None;
    for combo in 0u64..(1u64 << total) {
        for (i, &v) in vars.iter().enumerate() {
            values[v as usize - 1] = combo >> (i as u32 * width) & sem.mask();
        }
        let (va, oka) = sem.eval(a, &values);
        let (vb, okb) = sem.eval(b, &values);
        if !(oka && okb) {
            continue;
        }
        if (va != 0) != (vb != 0) {
            if equal {
                witness = Some(
                    vars.iter()
                        .map(|&v| (v, values[v as usize - 1]))
                        .collect::<Assignment>(),
                );
            }
            equal = false;
        } else {
            negated = false;
        }
        if !equal && !negated {
            break;
        }
    }
    if equal {
        PairOutcome::Equal
    } else if negated {
        PairOutcome::Negated
    } else {
        PairOutcome::Inequivalent(witness.unwrap_or_default())
    }
}
