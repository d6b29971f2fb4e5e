//! External SMT solver over SMT-LIB v2 on stdin/stdout.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::PairOutcome;
use crate::verify::expr::{Assignment, BinaryOp, Expr, UnaryOp};

fn bv(v: u64, w: u32) -> String {
    let m = if w == 64 { u64::MAX } else { (1u64 << w) - 1 };
    format!("(_ bv{} {w})", v & m)
}

fn as_bv(cond: String, w: u32) -> String {
    format!("(ite {cond} {} {})", bv(1, w), bv(0, w))
}

fn term(e: &Expr, w: u32, divisors: &mut Vec<String>) -> String {
    match e {
        Expr::Var(n) => format!("x{n}"),
        Expr::Const(c) => bv(*c, w),
        Expr::Literal(_) | Expr::Call { .. } => {
            panic!("opaque term reached the SMT encoder; abstract it first")
        }
        Expr::Unary(op, a) => {
            let a = term(a, w, divisors);
            match op {
                UnaryOp::Not => as_bv(format!("(= {a} {})", bv(0, w)), w),
                UnaryOp::BitNot => format!("(bvnot {a})"),
                UnaryOp::Neg => format!("(bvneg {a})"),
            }
        }
        Expr::Binary(op, a, b) => {
            let a = term(a, w, divisors);
            let b = term(b, w, divisors);
            use BinaryOp::*;
            let truth = |t: &str| format!("(not (= {t} {}))", bv(0, w));
            match op {
                Eq => as_bv(format!("(= {a} {b})"), w),
                Ne => as_bv(format!("(not (= {a} {b}))"), w),
                Lt => as_bv(format!("(bvslt {a} {b})"), w),
                Le => as_bv(format!("(bvsle {a} {b})"), w),
                Gt => as_bv(format!("(bvsgt {a} {b})"), w),
                Ge => as_bv(format!("(bvsge {a} {b})"), w),
                Add => format!("(bvadd {a} {b})"),
                Sub => format!("(bvsub {a} {b})"),
                Mul => format!("(bvmul {a} {b})"),
                Div => {
                    divisors.push(b.clone());
                    format!("(bvsdiv {a} {b})")
                }
                Rem => {
                    divisors.push(b.clone());
                    format!("(bvsrem {a} {b})")
                }
                BitAnd => format!("(bvand {a} {b})"),
                BitOr => format!("(bvor {a} {b})"),
                BitXor => format!("(bvxor {a} {b})"),
                Shl => format!("(bvshl {a} {b})"),
                Shr => format!("(bvashr {a} {b})"),
                LogAnd => as_bv(format!("(and {} {})", truth(&a), truth(&b)), w),
                LogOr => as_bv(format!("(or {} {})", truth(&a), truth(&b)), w),
            }
        }
    }
}

/// Script with two queries: truth values differ, then truth values agree.
pub fn script(a: &Expr, b: &Expr, w: u32) -> String {
    let mut vars = a.vars();
    vars.extend(b.vars());
    vars.sort_unstable();
    vars.dedup();
    let mut divisors = Vec::new();
    let ta = term(a, w, &mut divisors);
    let tb = term(b, w, &mut divisors);
    let mut s = String::from("(set-logic QF_BV)\n");
    for v in &vars {
        s.push_str(&format!("(declare-fun x{v} () (_ BitVec {w}))\n"));
    }
    for d in &divisors {
        s.push_str(&format!("(assert (not (= {d} {})))\n", bv(0, w)));
    }
    s.push_str(&format!("(define-fun ta () Bool (not (= {ta} {})))\n", bv(0, w)));
    s.push_str(&format!("(define-fun tb () Bool (not (= {tb} {})))\n", bv(0, w)));
    s.push_str("(push 1)\n(assert (distinct ta tb))\n(check-sat)\n");
    if !vars.is_empty() {
        let names: Vec<String> = vars.iter().map(|v| format!("x{v}")).collect();
        s.push_str(&format!("(get-value ({}))\n", names.join(" ")));
    }
    s.push_str("(pop 1)\n");
    s.push_str("(push 1)\n(assert (= ta tb))\n(check-sat)\n(pop 1)\n(exit)\n");
    s
}

pub fn check_pair(
    a: &Expr,
    b: &Expr,
    w: u32,
    path: &str,
    args: &[String],
    timeout: Duration,
) -> PairOutcome {
    let input = script(a, b, w);
    let mut child = match Command::new(path)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return PairOutcome::Unknown(format!("cannot start `{path}`: {e}")),
    };
    if let Some(mut stdin) = child.stdin.take() {
        if let Err(e) = stdin.write_all(input.as_bytes()) {
            let _ = child.kill();
            return PairOutcome::Unknown(format!("writing to solver: {e}"));
        }
    }
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return PairOutcome::Unknown("external solver timed out".into());
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return PairOutcome::Unknown(format!("waiting for solver: {e}")),
        }
    }
    let out = match child.wait_with_output() {
        Ok(o) => String::from_utf8_lossy(&o.stdout).into_owned(),
        Err(e) => return PairOutcome::Unknown(format!("reading solver output: {e}")),
    };
    let answers: Vec<&str> = out
        .lines()
        .map(str::trim)
        .filter(|l| matches!(*l, "sat" | "unsat" | "unknown"))
        .collect();
    match answers.as_slice() {
        ["unsat", _] => PairOutcome::Equal,
        ["sat", "unsat"] => PairOutcome::Negated,
        ["sat", "sat"] => PairOutcome::Inequivalent(parse_values(&out)),
        _ => PairOutcome::Unknown(format!("unexpected solver output: {}", out.trim())),
    }
}

/// Reads `(xN value)` pairs from a get-value response; values may be
/// `#b...`, `#x...` or `(_ bvV W)`.
pub fn parse_values(out: &str) -> Assignment {
    let mut m = Assignment::new();
    let mut rest = out;
    while let Some(at) = rest.find("(x") {
        rest = &rest[at + 2..];
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let Ok(var) = digits.parse::<u32>() else { continue };
        let tail = rest[digits.len()..].trim_start();
        let value = if let Some(b) = tail.strip_prefix("#b") {
            let bits: String = b.chars().take_while(|c| *c == '0' || *c == '1').collect();
            u64::from_str_radix(&bits, 2).ok()
        } else if let Some(h) = tail.strip_prefix("#x") {
            let hex: String = h.chars().take_while(|c| c.is_ascii_hexdigit()).collect();
            u64::from_str_radix(&hex, 16).ok()
        } else if let Some(bv) = tail.strip_prefix("(_ bv") {
            let dec: String = bv.chars().take_while(|c| c.is_ascii_digit()).collect();
            dec.parse().ok()
        } else {
            None
        };
        if let Some(v) = value {
            m.insert(var, v);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_declares_and_guards_divisors() {
        let a = Expr::binary(BinaryOp::Div, Expr::Var(1), Expr::Var(2));
        let b = Expr::Var(1);
        let s = script(&a, &b, 8);
        assert!(s.contains("(declare-fun x1 () (_ BitVec 8))"));
        assert!(s.contains("(declare-fun x2 () (_ BitVec 8))"));
        assert!(s.contains("(assert (not (= x2 (_ bv0 8))))"));
        assert_eq!(s.matches("(check-sat)").count(), 2);
    }

    #[test]
    fn get_value_forms() {
        let m = parse_values("sat\n((x1 #b00000011)\n (x2 #x0f) (x3 (_ bv9 8)))\nunsat\n");
        assert_eq!(m.get(&1), Some(&3));
        assert_eq!(m.get(&2), Some(&15));
        assert_eq!(m.get(&3), Some(&9));
    }

    #[test]
    fn constants_are_truncated() {
        assert_eq!(bv(771, 8), "(_ bv3 8)");
        assert_eq!(bv(u64::MAX, 64), format!("(_ bv{} 64)", u64::MAX));
    }
}
