//! Equation sets, set difference and the triviality denylist.

use std::collections::BTreeSet;

use super::statement::{NormalizedEquation, StatementKind};

/// Canonical forms that carry no information about a patch.
pub const DENYLIST: &[(StatementKind, &str)] = &[
    (StatementKind::Conditional, "x1"),
    (StatementKind::Conditional, "!x1"),
    (StatementKind::Conditional, "x1 == 0"),
    (StatementKind::Conditional, "x1 != 0"),
    (StatementKind::Assignment, "x1 = 0"),
    (StatementKind::Assignment, "x1 = 1"),
    (StatementKind::Assignment, "x1 = x2"),
    (StatementKind::Return, "return"),
    (StatementKind::Return, "return 0"),
    (StatementKind::Return, "return 1"),
    (StatementKind::Return, "return -1"),
    (StatementKind::Return, "return x1"),
];

pub fn is_trivial(eq: &NormalizedEquation) -> bool {
    DENYLIST
        .iter()
        .any(|(k, c)| *k == eq.kind && *c == eq.canonical)
}

/// Equations of one function version, deduplicated by canonical key in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct EquationSet {
    pub equations: Vec<NormalizedEquation>,
    keys: BTreeSet<(StatementKind, String)>,
}

impl EquationSet {
    pub fn new(eqs: impl IntoIterator<Item = NormalizedEquation>) -> Self {
        let mut s = EquationSet::default();
        for e in eqs {
            s.insert(e);
        }
        s
    }

    pub fn insert(&mut self, e: NormalizedEquation) -> bool {
        if self.keys.insert((e.kind, e.canonical.clone())) {
            self.equations.push(e);
            true
        } else {
            false
        }
    }

    pub fn contains(&self, kind: StatementKind, canonical: &str) -> bool {
        self.keys.contains(&(kind, canonical.to_string()))
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NormalizedEquation> {
        self.equations.iter()
    }
}

/// Equations of `this` absent from `other`, with trivial forms removed.
pub fn unique_equations(this: &EquationSet, other: &EquationSet) -> Vec<NormalizedEquation> {
    this.iter()
        .filter(|e| !other.contains(e.kind, &e.canonical) && !is_trivial(e))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::statement::equations_from_lines;

    fn set(src: &str) -> EquationSet {
        EquationSet::new(equations_from_lines(
            src.lines().enumerate().map(|(i, l)| (i + 1, l)),
        ))
    }

    #[test]
    fn difference_drops_shared_and_trivial() {
        let vul = set("if (s->version >= 771)\n  return 0;\nn = 0;\nfoo(s);\n");
        let patch = set("if (s->method->version == 771)\n  return 0;\nn = 0;\nfoo(s);\nif (!p)\n");
        let up = unique_equations(&patch, &vul);
        assert_eq!(up.len(), 1);
        assert_eq!(up[0].canonical, "x1 == 771");
        let uv = unique_equations(&vul, &patch);
        assert_eq!(uv.len(), 1);
        assert_eq!(uv[0].canonical, "x1 >= 771");
    }

    #[test]
    fn duplicates_collapse() {
        let s = set("if (a > 3)\nif (b > 3)\n");
        assert_eq!(s.len(), 1);
    }
}
