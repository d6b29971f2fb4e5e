//! Expression trees over macro variables `x1..xN` and integer constants.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnaryOp {
    Not,
    BitNot,
    Neg,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Not => "!",
            UnaryOp::BitNot => "~",
            UnaryOp::Neg => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    LogAnd,
    LogOr,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 18] = [
        BinaryOp::Eq,
        BinaryOp::Ne,
        BinaryOp::Lt,
        BinaryOp::Le,
        BinaryOp::Gt,
        BinaryOp::Ge,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Rem,
        BinaryOp::BitAnd,
        BinaryOp::BitOr,
        BinaryOp::BitXor,
        BinaryOp::Shl,
        BinaryOp::Shr,
        BinaryOp::LogAnd,
        BinaryOp::LogOr,
    ];

    pub fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Eq => "==",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Rem => "%",
            BitAnd => "&",
            BitOr => "|",
            BitXor => "^",
            Shl => "<<",
            Shr => ">>",
            LogAnd => "&&",
            LogOr => "||",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinaryOp> {
        BinaryOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// C binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Mul | Div | Rem => 10,
            Add | Sub => 9,
            Shl | Shr => 8,
            Lt | Le | Gt | Ge => 7,
            Eq | Ne => 6,
            BitAnd => 5,
            BitXor => 4,
            BitOr => 3,
            LogAnd => 2,
            LogOr => 1,
        }
    }

    pub fn is_comparison(self) -> bool {
        use BinaryOp::*;
        matches!(self, Eq | Ne | Lt | Le | Gt | Ge)
    }

    /// Comparison with operands exchanged: `a < b` is `b > a`.
    pub fn flipped(self) -> BinaryOp {
        use BinaryOp::*;
        match self {
            Lt => Gt,
            Gt => Lt,
            Le => Ge,
            Ge => Le,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Expr {
    /// Macro variable `x{n}`, 1-based.
    Var(u32),
    Const(u64),
    /// Non-integer literal (string, float), kept verbatim and treated as opaque.
    Literal(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call { name: String, args: Vec<Expr> },
}

impl Expr {
    pub fn var(n: u32) -> Expr {
        Expr::Var(n)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    fn is_atomic(&self) -> bool {
        matches!(
            self,
            Expr::Var(_) | Expr::Const(_) | Expr::Literal(_) | Expr::Call { .. }
        )
    }

    /// Highest variable index used, 0 when none.
    pub fn max_var(&self) -> u32 {
        let mut m = 0;
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                m = m.max(*n);
            }
        });
        m
    }

    /// Distinct variable indices in order of first appearance.
    pub fn vars(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                if !out.contains(n) {
                    out.push(*n);
                }
            }
        });
        out
    }

    /// Pre-order visit; the visitor does not descend into call arguments
    /// separately from the call itself.
    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call { args, .. } => {
                for a in args {
                    a.visit(f);
                }
            }
            _ => {}
        }
    }

    /// Rebuilds the tree bottom-up through `f`.
    pub fn map(&self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Unary(op, a) => Expr::unary(*op, a.map(f)),
            Expr::Binary(op, a, b) => {
                let a = a.map(f);
                let b = b.map(f);
                Expr::binary(*op, a, b)
            }
            Expr::Call { name, args } => Expr::Call {
                name: name.clone(),
                args: args.iter().map(|a| a.map(f)).collect(),
            },
            other => other.clone(),
        };
        f(rebuilt)
    }

    /// Renames variables through `rename`.
    pub fn rename(&self, rename: &impl Fn(u32) -> u32) -> Expr {
        self.map(&mut |e| match e {
            Expr::Var(n) => Expr::Var(rename(n)),
            other => other,
        })
    }

    /// Number of division or remainder nodes.
    pub fn has_division(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Binary(BinaryOp::Div | BinaryOp::Rem, _, _) = e {
                found = true;
            }
        });
        found
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Expr::Var(n) => {
                out.push('x');
                out.push_str(&n.to_string());
            }
            Expr::Const(v) => out.push_str(&v.to_string()),
            Expr::Literal(s) => out.push_str(s),
            Expr::Unary(op, a) => {
                out.push_str(op.symbol());
                if a.is_atomic() {
                    a.render_into(out);
                } else {
                    out.push('(');
                    a.render_into(out);
                    out.push(')');
                }
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                render_operand(a, p, false, out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                render_operand(b, p, true, out);
            }
            Expr::Call { name, args } => {
                out.push_str(name);
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.render_into(out);
                }
                out.push(')');
            }
        }
    }
}

fn render_operand(e: &Expr, parent: u8, right: bool, out: &mut String) {
    let wrap = match e {
        Expr::Binary(op, _, _) => {
            let p = op.precedence();
            p < parent || (right && p == parent)
        }
        _ => false,
    };
    if wrap {
        out.push('(');
        e.render_into(out);
        out.push(')');
    } else {
        e.render_into(out);
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Fixed-width two's-complement evaluation. Comparisons, division,
/// remainder and right shift are signed; shift amounts are read unsigned and
/// amounts of at least `width` shift everything out.
#[derive(Debug, Clone, Copy)]
pub struct Semantics {
    pub width: u32,
}

impl Semantics {
    pub fn new(width: u32) -> Self {
        assert!((1..=64).contains(&width), "width must be in 1..=64");
        Semantics { width }
    }

    pub fn mask(&self) -> u64 {
        if self.width == 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    pub fn signed(&self, v: u64) -> i64 {
        let v = v & self.mask();
        if self.width == 64 {
            v as i64
        } else if v >> (self.width - 1) & 1 == 1 {
            (v | !self.mask()) as i64
        } else {
            v as i64
        }
    }

    /// Evaluates `e`, reading variables from `vars` (index = var - 1).
    /// Returns the value and whether every divisor was nonzero.
    pub fn eval(&self, e: &Expr, vars: &[u64]) -> (u64, bool) {
        let mut ok = true;
        let v = self.eval_inner(e, vars, &mut ok);
        (v, ok)
    }

    fn eval_inner(&self, e: &Expr, vars: &[u64], ok: &mut bool) -> u64 {
        let m = self.mask();
        match e {
            Expr::Var(n) => vars.get(*n as usize - 1).copied().unwrap_or(0) & m,
            Expr::Const(c) => c & m,
            Expr::Literal(_) | Expr::Call { .. } => {
                panic!("opaque term reached evaluation; abstract it first")
            }
            Expr::Unary(op, a) => {
                let a = self.eval_inner(a, vars, ok);
                match op {
                    UnaryOp::Not => (a == 0) as u64,
                    UnaryOp::BitNot => !a & m,
                    UnaryOp::Neg => a.wrapping_neg() & m,
                }
            }
            Expr::Binary(op, a, b) => {
                let a = self.eval_inner(a, vars, ok);
                let b = self.eval_inner(b, vars, ok);
                self.apply(*op, a, b, ok)
            }
        }
    }

    pub fn apply(&self, op: BinaryOp, a: u64, b: u64, ok: &mut bool) -> u64 {
        use BinaryOp::*;
        let m = self.mask();
        let (sa, sb) = (self.signed(a), self.signed(b));
        let w = self.width as u64;
        match op {
            Eq => (a == b) as u64,
            Ne => (a != b) as u64,
            Lt => (sa < sb) as u64,
            Le => (sa <= sb) as u64,
            Gt => (sa > sb) as u64,
            Ge => (sa >= sb) as u64,
            Add => a.wrapping_add(b) & m,
            Sub => a.wrapping_sub(b) & m,
            Mul => a.wrapping_mul(b) & m,
            Div | Rem => {
                if b == 0 {
                    *ok = false;
                    return 0;
                }
                let r = if op == Div {
                    sa.wrapping_div(sb)
                } else {
                    sa.wrapping_rem(sb)
                };
                (r as u64) & m
            }
            BitAnd => a & b,
            BitOr => a | b,
            BitXor => a ^ b,
            Shl => {
                if b >= w {
                    0
                } else {
                    (a << b) & m
                }
            }
            Shr => {
                if b >= w {
                    if sa < 0 {
                        m
                    } else {
                        0
                    }
                } else {
                    ((sa >> b) as u64) & m
                }
            }
            LogAnd => (a != 0 && b != 0) as u64,
            LogOr => (a != 0 || b != 0) as u64,
        }
    }
}

/// Constant folding for operators whose result is the same under every
/// width after truncation.
pub fn fold_constants(op: BinaryOp, a: &Expr, b: &Expr) -> Option<Expr> {
    let (Expr::Const(x), Expr::Const(y)) = (a, b) else {
        return None;
    };
    use BinaryOp::*;
    let v = match op {
        Add => x.wrapping_add(*y),
        Sub => x.wrapping_sub(*y),
        Mul => x.wrapping_mul(*y),
        BitAnd => x & y,
        BitOr => x | y,
        BitXor => x ^ y,
        Shl if *y < 64 => x << y,
        _ => return None,
    };
    Some(Expr::Const(v))
}

/// Variable values keyed by index, used for witnesses.
pub type Assignment = BTreeMap<u32, u64>;
