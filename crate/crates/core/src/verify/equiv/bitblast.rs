//! Bit-blasting of fixed-width expressions into CNF.

use std::collections::HashMap;

use super::sat::{Lit, Solver};
use crate::verify::expr::{BinaryOp, Expr, UnaryOp};

/// Bitvector, least significant bit first.
pub type Bits = Vec<Lit>;

pub struct Blaster {
    pub solver: Solver,
    width: u32,
    t: Lit,
    and_cache: HashMap<(Lit, Lit), Lit>,
    xor_cache: HashMap<(Lit, Lit), Lit>,
    vars: HashMap<u32, Bits>,
    /// Literals that are true when every divisor seen so far is nonzero.
    pub divisor_ok: Vec<Lit>,
}

impl Blaster {
    pub fn new(width: u32) -> Self {
        let mut solver = Solver::new();
        let tv = solver.new_var();
        let t = Lit::new(tv, false);
        solver.add_clause(&[t]);
        Blaster {
            solver,
            width,
            t,
            and_cache: HashMap::new(),
            xor_cache: HashMap::new(),
            vars: HashMap::new(),
            divisor_ok: Vec::new(),
        }
    }

    pub fn tru(&self) -> Lit {
        self.t
    }

    pub fn fls(&self) -> Lit {
        !self.t
    }

    fn fresh(&mut self) -> Lit {
        Lit::new(self.solver.new_var(), false)
    }

    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, !self.t);
        if a == f || b == f || a == !b {
            return f;
        }
        if a == t || a == b {
            return b;
        }
        if b == t {
            return a;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&g) = self.and_cache.get(&key) {
            return g;
        }
        let g = self.fresh();
        self.solver.add_clause(&[!g, a]);
        self.solver.add_clause(&[!g, b]);
        self.solver.add_clause(&[g, !a, !b]);
        self.and_cache.insert(key, g);
        g
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    pub fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, !self.t);
        if a == f {
            return b;
        }
        if b == f {
            return a;
        }
        if a == t {
            return !b;
        }
        if b == t {
            return !a;
        }
        if a == b {
            return f;
        }
        if a == !b {
            return t;
        }
        // strip signs so that xor(!a, b) shares a gate with xor(a, b)
        let flip = a.is_negated() ^ b.is_negated();
        let (pa, pb) = (Lit::new(a.var(), false), Lit::new(b.var(), false));
        let key = if pa < pb { (pa, pb) } else { (pb, pa) };
        let g = match self.xor_cache.get(&key) {
            Some(&g) => g,
            None => {
                let g = self.fresh();
                let (x, y) = key;
                self.solver.add_clause(&[!g, x, y]);
                self.solver.add_clause(&[!g, !x, !y]);
                self.solver.add_clause(&[g, !x, y]);
                self.solver.add_clause(&[g, x, !y]);
                self.xor_cache.insert(key, g);
                g
            }
        };
        if flip {
            !g
        } else {
            g
        }
    }

    pub fn mux(&mut self, s: Lit, a: Lit, b: Lit) -> Lit {
        if a == b {
            return a;
        }
        let x = self.and(s, a);
        let y = self.and(!s, b);
        self.or(x, y)
    }

    fn mux_bits(&mut self, s: Lit, a: &[Lit], b: &[Lit]) -> Bits {
        a.iter().zip(b).map(|(&x, &y)| self.mux(s, x, y)).collect()
    }

    pub fn constant(&self, v: u64) -> Bits {
        (0..self.width)
            .map(|i| if v >> i & 1 == 1 { self.t } else { !self.t })
            .collect()
    }

    fn bool_bits(&self, b: Lit) -> Bits {
        let mut out = vec![!self.t; self.width as usize];
        out[0] = b;
        out
    }

    /// Bits of variable `n`, allocated on first use.
    pub fn var_bits(&mut self, n: u32) -> Bits {
        if let Some(b) = self.vars.get(&n) {
            return b.clone();
        }
        let bits: Bits = (0..self.width).map(|_| self.fresh()).collect();
        self.vars.insert(n, bits.clone());
        bits
    }

    pub fn var_value(&self, n: u32) -> Option<u64> {
        self.vars.get(&n).map(|bits| {
            bits.iter()
                .enumerate()
                .fold(0u64, |acc, (i, &l)| acc | (self.solver.model_value(l) as u64) << i)
        })
    }

    pub fn any(&mut self, a: &[Lit]) -> Lit {
        a.iter().fold(!self.t, |acc, &l| self.or(acc, l))
    }

    fn all(&mut self, a: &[Lit]) -> Lit {
        a.iter().fold(self.t, |acc, &l| self.and(acc, l))
    }

    /// Sum with carry-in; returns the sum bits and the carry out.
    fn adder(&mut self, a: &[Lit], b: &[Lit], cin: Lit) -> (Bits, Lit) {
        let mut c = cin;
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            let p = self.xor(x, y);
            out.push(self.xor(p, c));
            let g = self.and(x, y);
            let q = self.and(p, c);
            c = self.or(g, q);
        }
        (out, c)
    }

    fn add(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let f = self.fls();
        self.adder(a, b, f).0
    }

    fn sub(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let nb: Bits = b.iter().map(|&l| !l).collect();
        let t = self.tru();
        self.adder(a, &nb, t).0
    }

    fn neg(&mut self, a: &[Lit]) -> Bits {
        let z = vec![self.fls(); a.len()];
        self.sub(&z, a)
    }

    fn mul(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let w = a.len();
        let mut acc = vec![self.fls(); w];
        for i in 0..w {
            if b[i] == self.fls() {
                continue;
            }
            let mut partial = vec![self.fls(); w];
            for j in 0..w - i {
                partial[i + j] = self.and(a[j], b[i]);
            }
            acc = self.add(&acc, &partial);
        }
        acc
    }

    fn ult(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let nb: Bits = b.iter().map(|&l| !l).collect();
        let t = self.tru();
        let (_, carry) = self.adder(a, &nb, t);
        !carry
    }

    fn eq(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let same: Bits = a.iter().zip(b).map(|(&x, &y)| !self.xor(x, y)).collect();
        self.all(&same)
    }

    fn slt(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let (sa, sb) = (a[a.len() - 1], b[b.len() - 1]);
        let neg_pos = self.and(sa, !sb);
        let diff = self.xor(sa, sb);
        let u = self.ult(a, b);
        let same_and_lt = self.and(!diff, u);
        self.or(neg_pos, same_and_lt)
    }

    /// Restoring division; returns (quotient, remainder).
    fn udivrem(&mut self, a: &[Lit], b: &[Lit]) -> (Bits, Bits) {
        let w = a.len();
        let f = self.fls();
        let mut rem = vec![f; w];
        let mut q = vec![f; w];
        let mut b_ext = b.to_vec();
        b_ext.push(f);
        for i in (0..w).rev() {
            // shifted remainder, w+1 bits
            let mut r = Vec::with_capacity(w + 1);
            r.push(a[i]);
            r.extend_from_slice(&rem);
            let lt = self.ult(&r, &b_ext);
            let diff = self.sub(&r, &b_ext);
            q[i] = !lt;
            let next = self.mux_bits(lt, &r, &diff);
            rem = next[..w].to_vec();
        }
        (q, rem)
    }

    fn abs(&mut self, a: &[Lit]) -> Bits {
        let s = a[a.len() - 1];
        let n = self.neg(a);
        self.mux_bits(s, &n, a)
    }

    fn sdiv(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let (ua, ub) = (self.abs(a), self.abs(b));
        let (q, _) = self.udivrem(&ua, &ub);
        let s = self.xor(a[a.len() - 1], b[b.len() - 1]);
        let nq = self.neg(&q);
        self.mux_bits(s, &nq, &q)
    }

    fn srem(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let (ua, ub) = (self.abs(a), self.abs(b));
        let (_, r) = self.udivrem(&ua, &ub);
        let nr = self.neg(&r);
        self.mux_bits(a[a.len() - 1], &nr, &r)
    }

    fn shift(&mut self, a: &[Lit], b: &[Lit], left: bool) -> Bits {
        let w = a.len();
        let fill = if left { self.fls() } else { a[w - 1] };
        let mut x = a.to_vec();
        let mut overflow = Vec::new();
        for (k, &bit) in b.iter().enumerate() {
            let amount = 1usize.checked_shl(k as u32).unwrap_or(usize::MAX);
            if amount >= w {
                overflow.push(bit);
                continue;
            }
            let shifted: Bits = (0..w)
                .map(|i| {
                    if left {
                        if i >= amount {
                            x[i - amount]
                        } else {
                            fill
                        }
                    } else if i + amount < w {
                        x[i + amount]
                    } else {
                        fill
                    }
                })
                .collect();
            x = self.mux_bits(bit, &shifted, &x);
        }
        let over = self.any(&overflow);
        let filled = vec![fill; w];
        self.mux_bits(over, &filled, &x)
    }

    pub fn truth(&mut self, a: &[Lit]) -> Lit {
        self.any(a)
    }

    /// Encodes `e`; opaque terms must already be abstracted to variables.
    pub fn blast(&mut self, e: &Expr) -> Bits {
        match e {
            Expr::Var(n) => self.var_bits(*n),
            Expr::Const(c) => self.constant(*c),
            Expr::Literal(_) | Expr::Call { .. } => {
                panic!("opaque term reached the bit-blaster; abstract it first")
            }
            Expr::Unary(op, a) => {
                let a = self.blast(a);
                match op {
                    UnaryOp::Not => {
                        let t = self.truth(&a);
                        self.bool_bits(!t)
                    }
                    UnaryOp::BitNot => a.iter().map(|&l| !l).collect(),
                    UnaryOp::Neg => self.neg(&a),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = self.blast(a);
                let b = self.blast(b);
                use BinaryOp::*;
                match op {
                    Eq => {
                        let r = self.eq(&a, &b);
                        self.bool_bits(r)
                    }
                    Ne => {
                        let r = self.eq(&a, &b);
                        self.bool_bits(!r)
                    }
                    Lt => {
                        let r = self.slt(&a, &b);
                        self.bool_bits(r)
                    }
                    Gt => {
                        let r = self.slt(&b, &a);
                        self.bool_bits(r)
                    }
                    Le => {
                        let r = self.slt(&b, &a);
                        self.bool_bits(!r)
                    }
                    Ge => {
                        let r = self.slt(&a, &b);
                        self.bool_bits(!r)
                    }
                    Add => self.add(&a, &b),
                    Sub => self.sub(&a, &b),
                    Mul => self.mul(&a, &b),
                    Div | Rem => {
                        let nz = self.any(&b);
                        self.divisor_ok.push(nz);
                        if *op == Div {
                            self.sdiv(&a, &b)
                        } else {
                            self.srem(&a, &b)
                        }
                    }
                    BitAnd => a.iter().zip(&b).map(|(&x, &y)| self.and(x, y)).collect(),
                    BitOr => a.iter().zip(&b).map(|(&x, &y)| self.or(x, y)).collect(),
                    BitXor => a.iter().zip(&b).map(|(&x, &y)| self.xor(x, y)).collect(),
                    Shl => self.shift(&a, &b, true),
                    Shr => self.shift(&a, &b, false),
                    LogAnd => {
                        let (ta, tb) = (self.truth(&a), self.truth(&b));
                        let r = self.and(ta, tb);
                        self.bool_bits(r)
                    }
                    LogOr => {
                        let (ta, tb) = (self.truth(&a), self.truth(&b));
                        let r = self.or(ta, tb);
                        self.bool_bits(r)
                    }
                }
            }
        }
    }

    pub fn valid(&mut self) -> Lit {
        let ok = self.divisor_ok.clone();
        self.all(&ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::expr::Semantics;
    use crate::verify::equiv::sat::SolveResult;

    fn x(n: u32) -> Expr {
        Expr::Var(n)
    }

    /// Pins both inputs and reads back the blasted value.
    fn blasted_value(op: BinaryOp, w: u32, a: u64, b: u64) -> Option<u64> {
        let mut bl = Blaster::new(w);
        let e = Expr::binary(op, x(1), x(2));
        let out = bl.blast(&e);
        let ab = bl.var_bits(1);
        let bb = bl.var_bits(2);
        let mut assumptions = Vec::new();
        for i in 0..w as usize {
            assumptions.push(if a >> i & 1 == 1 { ab[i] } else { !ab[i] });
            assumptions.push(if b >> i & 1 == 1 { bb[i] } else { !bb[i] });
        }
        let v = bl.valid();
        assumptions.push(v);
        match bl.solver.solve(&assumptions, None) {
            SolveResult::Sat => Some(
                out.iter()
                    .enumerate()
                    .fold(0, |acc, (i, &l)| acc | (bl.solver.model_value(l) as u64) << i),
            ),
            _ => None,
        }
    }

    #[test]
    fn every_operator_matches_evaluator_at_width_4() {
        let w = 4;
        let sem = Semantics::new(w);
        for op in BinaryOp::ALL {
            for a in 0..16u64 {
                for b in 0..16u64 {
                    let mut ok = true;
                    let want = sem.apply(op, a, b, &mut ok);
                    let got = blasted_value(op, w, a, b);
                    if ok {
                        assert_eq!(got, Some(want), "{op:?} {a} {b}");
                    } else {
                        assert_eq!(got, None, "{op:?} {a} {b}");
                    }
                }
            }
        }
    }
}
