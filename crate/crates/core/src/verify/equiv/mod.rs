//! Equivalence of normalized conditions under fixed-width semantics.
//!
//! Two conditions are compared on their truth values. Variables of the two
//! sides are matched first by origin text, then by every injective matching
//! when either side has at most three variables. Calls and non-integer
//! literals are treated as uninterpreted symbols.

pub mod bitblast;
pub mod exhaustive;
pub mod sat;
pub mod smtlib;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::expr::{Assignment, Expr};
use super::statement::NormalizedEquation;
use super::VerifyError;
use bitblast::Blaster;
use sat::SolveResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivVerdict {
    Equal,
    Negated,
    Inequivalent,
    Unknown,
}

impl EquivVerdict {
    /// Equal and Negated both count as a match.
    pub fn is_match(self) -> bool {
        matches!(self, EquivVerdict::Equal | EquivVerdict::Negated)
    }
}

/// How a verdict was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivMethod {
    Solver,
    Exhaustive,
    /// Identical canonical text; used for non-conditional equations.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivResult {
    pub verdict: EquivVerdict,
    pub method: EquivMethod,
    /// Distinguishing assignment in the left side's numbering, for Inequivalent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Assignment>,
    /// Pairs (left var, right var) used for the reported verdict.
    pub mapping: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Bit-blasting into the built-in SAT solver.
    Builtin,
    /// Enumerate every assignment; gives Unknown beyond `max_bits` input bits.
    Exhaustive { max_bits: u32 },
    /// SMT-LIB v2 solver process reading the script on stdin.
    External { path: String, args: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivConfig {
    pub width: u32,
    pub timeout: Duration,
    pub backend: Backend,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            width: 32,
            timeout: Duration::from_secs(10),
            backend: Backend::Builtin,
        }
    }
}

impl EquivConfig {
    pub fn method(&self) -> EquivMethod {
        match self.backend {
            Backend::Exhaustive { .. } => EquivMethod::Exhaustive,
            _ => EquivMethod::Solver,
        }
    }

    pub fn with_width(width: u32) -> Self {
        EquivConfig {
            width,
            ..Self::default()
        }
    }
}

/// Verdict for two expressions over one shared variable space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairOutcome {
    Equal,
    Negated,
    Inequivalent(Assignment),
    Unknown(String),
}

impl PairOutcome {
    fn verdict(&self) -> EquivVerdict {
        match self {
            PairOutcome::Equal => EquivVerdict::Equal,
            PairOutcome::Negated => EquivVerdict::Negated,
            PairOutcome::Inequivalent(_) => EquivVerdict::Inequivalent,
            PairOutcome::Unknown(_) => EquivVerdict::Unknown,
        }
    }
}

/// Largest matching search; beyond this only origin alignment and identity are tried.
pub const MAX_SEARCH_VARS: usize = 3;

fn check_pair_builtin(a: &Expr, b: &Expr, width: u32, deadline: Instant) -> PairOutcome {
    let mut bl = Blaster::new(width);
    let ea = bl.blast(a);
    let eb = bl.blast(b);
    let ta = bl.truth(&ea);
    let tb = bl.truth(&eb);
    let d = bl.xor(ta, tb);
    let valid = bl.valid();
    let witness = match bl.solver.solve(&[valid, d], Some(deadline)) {
        SolveResult::Unsat => return PairOutcome::Equal,
        SolveResult::Unknown => return PairOutcome::Unknown("solver deadline reached".into()),
        SolveResult::Sat => {
            let mut vars = a.vars();
            vars.extend(b.vars());
            vars.sort_unstable();
            vars.dedup();
            vars.into_iter()
                .filter_map(|v| bl.var_value(v).map(|x| (v, x)))
                .collect::<Assignment>()
        }
    };
    match bl.solver.solve(&[valid, !d], Some(deadline)) {
        SolveResult::Unsat => PairOutcome::Negated,
        SolveResult::Unknown => PairOutcome::Unknown("solver deadline reached".into()),
        SolveResult::Sat => PairOutcome::Inequivalent(witness),
    }
}

/// Compares two opaque-free expressions that share a variable numbering.
pub fn check_pair(a: &Expr, b: &Expr, cfg: &EquivConfig, deadline: Instant) -> PairOutcome {
    if !(1..=64).contains(&cfg.width) {
        return PairOutcome::Unknown(format!("width {} out of range", cfg.width));
    }
    match &cfg.backend {
        Backend::Builtin => check_pair_builtin(a, b, cfg.width, deadline),
        Backend::Exhaustive { max_bits } => {
            exhaustive::check_pair(a, b, cfg.width, (*max_bits).min(32))
        }
        Backend::External { path, args } => {
            let left = deadline.saturating_duration_since(Instant::now());
            smtlib::check_pair(a, b, cfg.width, path, args, left)
        }
    }
}

/// Replaces calls and literals by fresh variables above `base`, sharing
/// symbols between structurally identical terms.
fn abstract_opaque(e: &Expr, table: &mut HashMap<Expr, u32>, next: &mut u32) -> Expr {
    match e {
        Expr::Call { .. } | Expr::Literal(_) => {
            let n = *table.entry(e.clone()).or_insert_with(|| {
                *next += 1;
                *next
            });
            Expr::Var(n)
        }
        Expr::Var(_) | Expr::Const(_) => e.clone(),
        Expr::Unary(op, a) => Expr::unary(*op, abstract_opaque(a, table, next)),
        Expr::Binary(op, a, b) => Expr::binary(
            *op,
            abstract_opaque(a, table, next),
            abstract_opaque(b, table, next),
        ),
    }
}

fn squash(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Right-to-left renaming: right var -> left var, or a fresh index.
type Mapping = BTreeMap<u32, u32>;

fn complete(partial: &Mapping, right_vars: &[u32], fresh_from: u32) -> Mapping {
    let mut m = partial.clone();
    let mut next = fresh_from;
    for &v in right_vars {
        m.entry(v).or_insert_with(|| {
            next += 1;
            next
        });
    }
    m
}

fn injections(from: &[u32], to: &[u32]) -> Vec<Vec<(u32, u32)>> {
    fn go(from: &[u32], to: &[u32], used: &mut Vec<bool>, cur: &mut Vec<(u32, u32)>, out: &mut Vec<Vec<(u32, u32)>>) {
        let Some((&f, rest)) = from.split_first() else {
            out.push(cur.clone());
            return;
        };
        for (i, &t) in to.iter().enumerate() {
            if used[i] {
                continue;
            }
            used[i] = true;
            cur.push((f, t));
            go(rest, to, used, cur, out);
            cur.pop();
            used[i] = false;
        }
    }
    let mut out = Vec::new();
    go(from, to, &mut vec![false; to.len()], &mut Vec::new(), &mut out);
    out
}

fn candidate_mappings(
    left: &[u32],
    right: &[u32],
    left_origin: &BTreeMap<u32, String>,
    right_origin: &BTreeMap<u32, String>,
) -> (Mapping, Vec<Mapping>) {
    let mut aligned = Mapping::new();
    let mut taken = BTreeSet::new();
    for &r in right {
        let Some(rt) = right_origin.get(&r) else { continue };
        let rt = squash(rt);
        if let Some(&l) = left.iter().find(|l| {
            !taken.contains(*l) && left_origin.get(l).is_some_and(|lt| squash(lt) == rt)
        }) {
            aligned.insert(r, l);
            taken.insert(l);
        }
    }
    let mut all = Vec::new();
    if left.len().max(right.len()) <= MAX_SEARCH_VARS {
        if right.len() <= left.len() {
            for inj in injections(right, left) {
                all.push(inj.into_iter().collect());
            }
        } else {
            for inj in injections(left, right) {
                all.push(inj.into_iter().map(|(l, r)| (r, l)).collect());
            }
        }
    } else {
        let identity: Mapping = right
            .iter()
            .filter(|r| left.contains(r))
            .map(|&r| (r, r))
            .collect();
        all.push(identity);
    }
    (aligned, all)
}

fn result(
    outcome: &PairOutcome,
    mapping: &Mapping,
    right_vars: &[u32],
    method: EquivMethod,
) -> EquivResult {
    let pairs = mapping
        .iter()
        .filter(|(r, _)| right_vars.contains(r))
        .map(|(&r, &l)| (l, r))
        .collect::<Vec<_>>();
    EquivResult {
        verdict: outcome.verdict(),
        method,
        witness: match outcome {
            PairOutcome::Inequivalent(w) => Some(w.clone()),
            _ => None,
        },
        mapping: {
            let mut p = pairs;
            p.sort_unstable();
            p
        },
        reason: match outcome {
            PairOutcome::Unknown(r) => Some(r.clone()),
            _ => None,
        },
    }
}

/// Compares two conditions, searching for a variable correspondence.
pub fn check_expressions(
    left: &Expr,
    left_origin: &BTreeMap<u32, String>,
    right: &Expr,
    right_origin: &BTreeMap<u32, String>,
    cfg: &EquivConfig,
) -> EquivResult {
    let deadline = Instant::now() + cfg.timeout;
    let lv = left.vars();
    let rv = right.vars();
    let fresh_from = lv
        .iter()
        .chain(rv.iter())
        .copied()
        .max()
        .unwrap_or(0)
        .max(left.max_var())
        .max(right.max_var());

    let run = |partial: &Mapping| -> (PairOutcome, Mapping) {
        let full = complete(partial, &rv, fresh_from);
        let renamed = right.rename(&|v| full.get(&v).copied().unwrap_or(v));
        // opaque symbols are numbered past every variable in play
        let mut table = HashMap::new();
        let mut next = fresh_from + rv.len() as u32;
        let a = abstract_opaque(left, &mut table, &mut next);
        let b = abstract_opaque(&renamed, &mut table, &mut next);
        (check_pair(&a, &b, cfg, deadline), full)
    };

    let (aligned, candidates) = candidate_mappings(&lv, &rv, left_origin, right_origin);
    let (first_outcome, first_map) = run(&aligned);
    // a full alignment by name is authoritative
    let fully_aligned = !aligned.is_empty() && aligned.len() == rv.len() && aligned.len() == lv.len();
    if first_outcome.verdict().is_match() || fully_aligned {
        return result(&first_outcome, &first_map, &rv, cfg.method());
    }
    let mut outcomes = vec![(first_outcome, first_map)];
    for cand in &candidates {
        let keeps_aligned = aligned.iter().all(|(r, l)| cand.get(r) == Some(l));
        if *cand == aligned || !keeps_aligned {
            continue;
        }
        outcomes.push(run(cand));
    }
    for want in [EquivVerdict::Equal, EquivVerdict::Negated, EquivVerdict::Unknown] {
        if let Some((o, m)) = outcomes.iter().find(|(o, _)| o.verdict() == want) {
            return result(o, m, &rv, cfg.method());
        }
    }
    let (o, m) = &outcomes[0];
    result(o, m, &rv, cfg.method())
}

/// Compares two conditional equations. Other kinds compare by canonical text.
pub fn check_equivalence(
    left: &NormalizedEquation,
    right: &NormalizedEquation,
    cfg: &EquivConfig,
) -> EquivResult {
    match (left.condition(), right.condition()) {
        (Some(a), Some(b)) => check_expressions(a, &left.var_origin, b, &right.var_origin, cfg),
        _ => EquivResult {
            verdict: if left.kind == right.kind && left.canonical == right.canonical {
                EquivVerdict::Equal
            } else {
                EquivVerdict::Inequivalent
            },
            method: EquivMethod::Canonical,
            witness: None,
            mapping: Vec::new(),
            reason: None,
        },
    }
}

/// Largest width accepted by the bounded oracle.
pub const ORACLE_MAX_WIDTH: u32 = 10;

/// Exhaustive check restricted to at most two variables per side and
/// `width <= 10`; the reference against which solver verdicts are tested.
pub fn bounded_equivalence_oracle(
    left: &NormalizedEquation,
    right: &NormalizedEquation,
    width: u32,
) -> Result<EquivResult, VerifyError> {
    if width == 0 || width > ORACLE_MAX_WIDTH {
        return Err(VerifyError::WidthOutOfRange(width));
    }
    let n = left.var_origin.len().max(right.var_origin.len());
    if n > 2 {
        return Err(VerifyError::TooManyVariables(n));
    }
    let cfg = EquivConfig {
        width,
        timeout: Duration::from_secs(3600),
        backend: Backend::Exhaustive {
            max_bits: 3 * ORACLE_MAX_WIDTH,
        },
    };
    Ok(check_equivalence(left, right, &cfg))
}
