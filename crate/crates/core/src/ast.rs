//! Program and formula syntax shared by every stage.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub type Name = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Euclidean division.
    Div,
    /// Euclidean remainder, always non-negative.
    Mod,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Expr {
    Int(i128),
    /// The program parameter `N`.
    N,
    Var(Name),
    Read(Name, Vec<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Ite(Box<Formula>, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rel {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Rel {
    pub fn negate(self) -> Rel {
        match self {
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Gt => Rel::Le,
            Rel::Ge => Rel::Lt,
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
        }
    }

    pub fn flip(self) -> Rel {
        match self {
            Rel::Lt => Rel::Gt,
            Rel::Le => Rel::Ge,
            Rel::Gt => Rel::Lt,
            Rel::Ge => Rel::Le,
            r => r,
        }
    }

    pub fn holds(self, a: i128, b: i128) -> bool {
        match self {
            Rel::Lt => a < b,
            Rel::Le => a <= b,
            Rel::Gt => a > b,
            Rel::Ge => a >= b,
            Rel::Eq => a == b,
            Rel::Ne => a != b,
        }
    }
}

/// A bounded quantifier variable ranging over `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Bound {
    pub var: Name,
    pub lo: Expr,
    pub hi: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Formula {
    Bool(bool),
    Cmp(Rel, Expr, Expr),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall(Vec<Bound>, Box<Formula>),
    Exists(Vec<Bound>, Box<Formula>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Loop {
    pub counter: Name,
    pub ub: Expr,
    pub body: Box<Stmt>,
}

/// Parallel assignment `forall c in [lo, hi): array[index] = rhs`.
///
/// Produced only by peel summarization. `rhs` reads `array` at most at
/// `index`, so the parallel and sequential readings agree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Fill {
    pub counter: Name,
    pub lo: Expr,
    pub hi: Expr,
    pub array: Name,
    pub index: Vec<Expr>,
    pub rhs: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Stmt {
    Seq(Vec<Stmt>),
    Assign(Name, Expr),
    Store(Name, Vec<Expr>, Expr),
    /// Whole-array copy `dst = src`, introduced by SSA renaming.
    ArrayCopy(Name, Name),
    If(Formula, Box<Stmt>, Box<Stmt>),
    For(Loop),
    Fill(Fill),
}

impl Stmt {
    pub fn skip() -> Stmt {
        Stmt::Seq(Vec::new())
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Stmt::Seq(v) if v.iter().all(Stmt::is_skip))
    }

    /// Flattens nested sequences into a list of non-sequence statements.
    pub fn flatten(&self) -> Vec<Stmt> {
        let mut out = Vec::new();
        fn go(s: &Stmt, out: &mut Vec<Stmt>) {
            match s {
                Stmt::Seq(v) => v.iter().for_each(|x| go(x, out)),
                other => out.push(other.clone()),
            }
        }
        go(self, &mut out);
        out
    }

    pub fn seq(items: Vec<Stmt>) -> Stmt {
        let mut flat = Vec::new();
        for s in items {
            flat.extend(s.flatten());
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Stmt::Seq(flat)
        }
    }

    pub fn has_loop(&self) -> bool {
        match self {
            Stmt::For(_) => true,
            Stmt::Seq(v) => v.iter().any(Stmt::has_loop),
            Stmt::If(_, a, b) => a.has_loop() || b.has_loop(),
            _ => false,
        }
    }

    /// Maximum loop nesting depth.
    pub fn depth(&self) -> usize {
        match self {
            Stmt::For(l) => 1 + l.body.depth(),
            Stmt::Seq(v) => v.iter().map(Stmt::depth).max().unwrap_or(0),
            Stmt::If(_, a, b) => a.depth().max(b.depth()),
            _ => 0,
        }
    }

    /// Scalars assigned anywhere inside.
    pub fn written_scalars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Stmt::Assign(x, _) => {
                out.insert(x.clone());
            }
            Stmt::Seq(v) => v.iter().for_each(|s| s.written_scalars(out)),
            Stmt::If(_, a, b) => {
                a.written_scalars(out);
                b.written_scalars(out);
            }
            Stmt::For(l) => l.body.written_scalars(out),
            _ => {}
        }
    }

    /// Arrays stored to, filled or copied into anywhere inside.
    pub fn written_arrays(&self, out: &mut BTreeSet<Name>) {
        match self {
            Stmt::Store(a, _, _) | Stmt::ArrayCopy(a, _) => {
                out.insert(a.clone());
            }
            Stmt::Fill(f) => {
                out.insert(f.array.clone());
            }
            Stmt::Seq(v) => v.iter().for_each(|s| s.written_arrays(out)),
            Stmt::If(_, a, b) => {
                a.written_arrays(out);
                b.written_arrays(out);
            }
            Stmt::For(l) => l.body.written_arrays(out),
            _ => {}
        }
    }

    /// Scalar and array names read anywhere inside (loop counters excluded).
    pub fn reads(&self, out: &mut BTreeSet<Name>) {
        let mut bound = BTreeSet::new();
        self.reads_in(&mut bound, out);
    }

    fn reads_in(&self, bound: &mut BTreeSet<Name>, out: &mut BTreeSet<Name>) {
        let add = |e: &Expr, bound: &BTreeSet<Name>, out: &mut BTreeSet<Name>| {
            let mut names = BTreeSet::new();
            e.names(&mut names);
            out.extend(names.into_iter().filter(|n| !bound.contains(n)));
        };
        match self {
            Stmt::Assign(_, e) => add(e, bound, out),
            Stmt::Store(_, idx, e) => {
                idx.iter().for_each(|i| add(i, bound, out));
                add(e, bound, out);
            }
            Stmt::ArrayCopy(_, src) => {
                out.insert(src.clone());
            }
            Stmt::Seq(v) => v.iter().for_each(|s| s.reads_in(bound, out)),
            Stmt::If(c, a, b) => {
                let mut names = BTreeSet::new();
                c.free_names(&mut names);
                out.extend(names.into_iter().filter(|n| !bound.contains(n)));
                a.reads_in(bound, out);
                b.reads_in(bound, out);
            }
            Stmt::For(l) => {
                add(&l.ub, bound, out);
                let fresh = bound.insert(l.counter.clone());
                l.body.reads_in(bound, out);
                if fresh {
                    bound.remove(&l.counter);
                }
            }
            Stmt::Fill(f) => {
                add(&f.lo, bound, out);
                add(&f.hi, bound, out);
                let fresh = bound.insert(f.counter.clone());
                f.index.iter().for_each(|i| add(i, bound, out));
                add(&f.rhs, bound, out);
                if fresh {
                    bound.remove(&f.counter);
                }
            }
        }
    }

    pub fn counters(&self, out: &mut BTreeSet<Name>) {
        match self {
            Stmt::For(l) => {
                out.insert(l.counter.clone());
                l.body.counters(out);
            }
            Stmt::Fill(f) => {
                out.insert(f.counter.clone());
            }
            Stmt::Seq(v) => v.iter().for_each(|s| s.counters(out)),
            Stmt::If(_, a, b) => {
                a.counters(out);
                b.counters(out);
            }
            _ => {}
        }
    }

    /// Applies `f` to every expression and formula position, bottom-up on statements.
    pub fn map_exprs(
        &self,
        f: &mut dyn FnMut(&Expr) -> Expr,
        g: &mut dyn FnMut(&Formula) -> Formula,
    ) -> Stmt {
        match self {
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|s| s.map_exprs(f, g)).collect()),
            Stmt::Assign(x, e) => Stmt::Assign(x.clone(), f(e)),
            Stmt::Store(a, idx, e) => {
                Stmt::Store(a.clone(), idx.iter().map(|i| f(i)).collect(), f(e))
            }
            Stmt::ArrayCopy(d, s) => Stmt::ArrayCopy(d.clone(), s.clone()),
            Stmt::If(c, a, b) => Stmt::If(
                g(c),
                Box::new(a.map_exprs(f, g)),
                Box::new(b.map_exprs(f, g)),
            ),
            Stmt::For(l) => Stmt::For(Loop {
                counter: l.counter.clone(),
                ub: f(&l.ub),
                body: Box::new(l.body.map_exprs(f, g)),
            }),
            Stmt::Fill(fl) => Stmt::Fill(Fill {
                counter: fl.counter.clone(),
                lo: f(&fl.lo),
                hi: f(&fl.hi),
                array: fl.array.clone(),
                index: fl.index.iter().map(|i| f(i)).collect(),
                rhs: f(&fl.rhs),
            }),
        }
    }

    /// Renames variables and arrays, both at definition and use sites.
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Stmt {
        let r = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        let body = self.map_exprs(&mut |e| e.rename(map), &mut |c| c.rename(map));
        fn defs(s: Stmt, r: &dyn Fn(&Name) -> Name) -> Stmt {
            match s {
                Stmt::Seq(v) => Stmt::Seq(v.into_iter().map(|x| defs(x, r)).collect()),
                Stmt::Assign(x, e) => Stmt::Assign(r(&x), e),
                Stmt::Store(a, i, e) => Stmt::Store(r(&a), i, e),
                Stmt::ArrayCopy(d, s) => Stmt::ArrayCopy(r(&d), r(&s)),
                Stmt::If(c, a, b) => Stmt::If(c, Box::new(defs(*a, r)), Box::new(defs(*b, r))),
                Stmt::For(mut l) => {
                    l.body = Box::new(defs(*l.body, r));
                    Stmt::For(l)
                }
                Stmt::Fill(mut f) => {
                    f.array = r(&f.array);
                    Stmt::Fill(f)
                }
            }
        }
        defs(body, &r)
    }

    /// Number of basic statements, used for size limits.
    pub fn size(&self) -> usize {
        match self {
            Stmt::Seq(v) => v.iter().map(Stmt::size).sum(),
            Stmt::If(_, a, b) => 1 + a.size() + b.size(),
            Stmt::For(l) => 1 + l.body.size(),
            _ => 1,
        }
    }
}

impl Expr {
    pub fn var(n: &str) -> Expr {
        Expr::Var(n.to_string())
    }

    pub fn read(a: &str, idx: Vec<Expr>) -> Expr {
        Expr::Read(a.to_string(), idx)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Add, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Sub, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Mul, a, b)
    }

    pub fn ite(c: Formula, a: Expr, b: Expr) -> Expr {
        Expr::Ite(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn n_minus(k: i128) -> Expr {
        Expr::sub(Expr::N, Expr::Int(k))
    }

    /// Scalar and array names occurring free (quantifier-bound names inside ite conditions excluded).
    pub fn names(&self, out: &mut BTreeSet<Name>) {
        match self {
            Expr::Int(_) | Expr::N => {}
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Read(a, idx) => {
                out.insert(a.clone());
                idx.iter().for_each(|i| i.names(out));
            }
            Expr::Bin(_, a, b) => {
                a.names(out);
                b.names(out);
            }
            Expr::Neg(a) => a.names(out),
            Expr::Ite(c, a, b) => {
                c.free_names(out);
                a.names(out);
                b.names(out);
            }
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        let mut s = BTreeSet::new();
        self.names(&mut s);
        s.contains(name)
    }

    pub fn has_n(&self) -> bool {
        match self {
            Expr::N => true,
            Expr::Int(_) | Expr::Var(_) => false,
            Expr::Read(_, idx) => idx.iter().any(Expr::has_n),
            Expr::Bin(_, a, b) => a.has_n() || b.has_n(),
            Expr::Neg(a) => a.has_n(),
            Expr::Ite(c, a, b) => c.has_n() || a.has_n() || b.has_n(),
        }
    }

    pub fn has_read(&self) -> bool {
        match self {
            Expr::Read(..) => true,
            Expr::Int(_) | Expr::N | Expr::Var(_) => false,
            Expr::Bin(_, a, b) => a.has_read() || b.has_read(),
            Expr::Neg(a) => a.has_read(),
            Expr::Ite(c, a, b) => c.has_read() || a.has_read() || b.has_read(),
        }
    }

    /// Bottom-up rewrite.
    pub fn map(&self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let e = match self {
            Expr::Int(_) | Expr::N | Expr::Var(_) => self.clone(),
            Expr::Read(a, idx) => Expr::Read(a.clone(), idx.iter().map(|i| i.map(f)).collect()),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Neg(a) => Expr::Neg(Box::new(a.map(f))),
            Expr::Ite(c, a, b) => Expr::Ite(
                Box::new(c.map_exprs(f)),
                Box::new(a.map(f)),
                Box::new(b.map(f)),
            ),
        };
        f(e)
    }

    pub fn subst_n(&self, by: &Expr) -> Expr {
        self.map(&mut |e| if e == Expr::N { by.clone() } else { e })
    }

    /// Substitutes scalar variables; quantifier binders inside ite conditions are respected.
    pub fn subst_vars(&self, map: &BTreeMap<Name, Expr>) -> Expr {
        match self {
            Expr::Int(_) | Expr::N => self.clone(),
            Expr::Var(x) => map.get(x).cloned().unwrap_or_else(|| self.clone()),
            Expr::Read(a, idx) => {
                Expr::Read(a.clone(), idx.iter().map(|i| i.subst_vars(map)).collect())
            }
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.subst_vars(map)),
                Box::new(b.subst_vars(map)),
            ),
            Expr::Neg(a) => Expr::Neg(Box::new(a.subst_vars(map))),
            Expr::Ite(c, a, b) => Expr::Ite(
                Box::new(c.subst_vars(map)),
                Box::new(a.subst_vars(map)),
                Box::new(b.subst_vars(map)),
            ),
        }
    }

    pub fn subst_var(&self, x: &str, by: &Expr) -> Expr {
        let mut m = BTreeMap::new();
        m.insert(x.to_string(), by.clone());
        self.subst_vars(&m)
    }

    /// Replaces every read of `array` by `f(indices)`, innermost first.
    pub fn subst_reads(&self, array: &str, f: &mut dyn FnMut(&[Expr]) -> Expr) -> Expr {
        match self {
            Expr::Int(_) | Expr::N | Expr::Var(_) => self.clone(),
            Expr::Read(a, idx) => {
                let idx: Vec<Expr> = idx.iter().map(|i| i.subst_reads(array, f)).collect();
                if a == array {
                    f(&idx)
                } else {
                    Expr::Read(a.clone(), idx)
                }
            }
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.subst_reads(array, f)),
                Box::new(b.subst_reads(array, f)),
            ),
            Expr::Neg(a) => Expr::Neg(Box::new(a.subst_reads(array, f))),
            Expr::Ite(c, a, b) => Expr::Ite(
                Box::new(c.subst_reads(array, f)),
                Box::new(a.subst_reads(array, f)),
                Box::new(b.subst_reads(array, f)),
            ),
        }
    }

    /// Renames free variables and arrays (quantifier binders are never in `map` by construction).
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Expr {
        match self {
            Expr::Int(_) | Expr::N => self.clone(),
            Expr::Var(x) => Expr::Var(map.get(x).cloned().unwrap_or_else(|| x.clone())),
            Expr::Read(a, idx) => Expr::Read(
                map.get(a).cloned().unwrap_or_else(|| a.clone()),
                idx.iter().map(|i| i.rename(map)).collect(),
            ),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.rename(map)), Box::new(b.rename(map))),
            Expr::Neg(a) => Expr::Neg(Box::new(a.rename(map))),
            Expr::Ite(c, a, b) => Expr::Ite(
                Box::new(c.rename(map)),
                Box::new(a.rename(map)),
                Box::new(b.rename(map)),
            ),
        }
    }

    /// Collects `(array, arity)` for every read.
    pub fn arrays(&self, out: &mut BTreeMap<Name, usize>) {
        match self {
            Expr::Int(_) | Expr::N | Expr::Var(_) => {}
            Expr::Read(a, idx) => {
                out.insert(a.clone(), idx.len());
                idx.iter().for_each(|i| i.arrays(out));
            }
            Expr::Bin(_, a, b) => {
                a.arrays(out);
                b.arrays(out);
            }
            Expr::Neg(a) => a.arrays(out),
            Expr::Ite(c, a, b) => {
                c.arrays(out);
                a.arrays(out);
                b.arrays(out);
            }
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        match self {
            Expr::Int(_) | Expr::N | Expr::Var(_) => false,
            Expr::Read(_, idx) => idx.iter().any(Expr::is_nonlinear),
            Expr::Bin(BinOp::Mul, a, b) => {
                a.is_nonlinear() || b.is_nonlinear() || (!a.is_constant() && !b.is_constant())
            }
            Expr::Bin(BinOp::Div | BinOp::Mod, a, b) => a.is_nonlinear() || !b.is_constant(),
            Expr::Bin(_, a, b) => a.is_nonlinear() || b.is_nonlinear(),
            Expr::Neg(a) => a.is_nonlinear(),
            Expr::Ite(c, a, b) => c.is_nonlinear() || a.is_nonlinear() || b.is_nonlinear(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Int(_) => true,
            Expr::Neg(a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            _ => false,
        }
    }

    pub fn as_int(&self) -> Option<i128> {
        match self {
            Expr::Int(i) => Some(*i),
            Expr::Neg(a) => a.as_int().and_then(i128::checked_neg),
            _ => None,
        }
    }
}

impl Formula {
    pub fn cmp(r: Rel, a: Expr, b: Expr) -> Formula {
        Formula::Cmp(r, a, b)
    }

    pub fn eq(a: Expr, b: Expr) -> Formula {
        Formula::Cmp(Rel::Eq, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::Bool(b) => Formula::Bool(!b),
            Formula::Not(g) => *g,
            Formula::Cmp(r, a, b) => Formula::Cmp(r.negate(), a, b),
            g => Formula::Not(Box::new(g)),
        }
    }

    pub fn and(items: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::Bool(true) => {}
                Formula::Bool(false) => return Formula::Bool(false),
                Formula::And(v) => out.extend(v),
                g => out.push(g),
            }
        }
        match out.len() {
            0 => Formula::Bool(true),
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    pub fn or(items: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::Bool(false) => {}
                Formula::Bool(true) => return Formula::Bool(true),
                Formula::Or(v) => out.extend(v),
                g => out.push(g),
            }
        }
        match out.len() {
            0 => Formula::Bool(false),
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        match (&a, &b) {
            (Formula::Bool(true), _) => b,
            (Formula::Bool(false), _) | (_, Formula::Bool(true)) => Formula::Bool(true),
            _ => Formula::Implies(Box::new(a), Box::new(b)),
        }
    }

    pub fn forall(bounds: Vec<Bound>, body: Formula) -> Formula {
        match body {
            Formula::Bool(b) => Formula::Bool(b),
            _ if bounds.is_empty() => body,
            _ => Formula::Forall(bounds, Box::new(body)),
        }
    }

    pub fn exists(bounds: Vec<Bound>, body: Formula) -> Formula {
        match body {
            Formula::Bool(false) => Formula::Bool(false),
            _ if bounds.is_empty() => body,
            _ => Formula::Exists(bounds, Box::new(body)),
        }
    }

    /// Top-level conjuncts.
    pub fn conjuncts(&self) -> Vec<Formula> {
        match self {
            Formula::And(v) => v.iter().flat_map(Formula::conjuncts).collect(),
            Formula::Bool(true) => Vec::new(),
            f => vec![f.clone()],
        }
    }

    pub fn is_quantifier_free(&self) -> bool {
        match self {
            Formula::Bool(_) => true,
            Formula::Cmp(_, a, b) => !expr_has_quant(a) && !expr_has_quant(b),
            Formula::Not(f) => f.is_quantifier_free(),
            Formula::And(v) | Formula::Or(v) => v.iter().all(Formula::is_quantifier_free),
            Formula::Implies(a, b) => a.is_quantifier_free() && b.is_quantifier_free(),
            Formula::Forall(..) | Formula::Exists(..) => false,
        }
    }

    /// True when an existential occurs in positive position (or universal in negative).
    pub fn has_existential(&self) -> bool {
        fn go(f: &Formula, pos: bool) -> bool {
            match f {
                Formula::Bool(_) | Formula::Cmp(..) => false,
                Formula::Not(g) => go(g, !pos),
                Formula::And(v) | Formula::Or(v) => v.iter().any(|g| go(g, pos)),
                Formula::Implies(a, b) => go(a, !pos) || go(b, pos),
                Formula::Forall(_, g) => !pos || go(g, pos),
                Formula::Exists(_, g) => pos || go(g, pos),
            }
        }
        go(self, true)
    }

    pub fn has_n(&self) -> bool {
        let mut found = false;
        self.visit_exprs(&mut |e| found |= e.has_n());
        found
    }

    pub fn has_read(&self) -> bool {
        let mut found = false;
        self.visit_exprs(&mut |e| found |= e.has_read());
        found
    }

    pub fn is_nonlinear(&self) -> bool {
        let mut found = false;
        self.visit_exprs(&mut |e| found |= e.is_nonlinear());
        found
    }

    /// Visits top-level expressions (including quantifier bounds).
    pub fn visit_exprs(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Formula::Bool(_) => {}
            Formula::Cmp(_, a, b) => {
                f(a);
                f(b);
            }
            Formula::Not(g) => g.visit_exprs(f),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|g| g.visit_exprs(f)),
            Formula::Implies(a, b) => {
                a.visit_exprs(f);
                b.visit_exprs(f);
            }
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                for b in bs {
                    f(&b.lo);
                    f(&b.hi);
                }
                g.visit_exprs(f);
            }
        }
    }

    /// Names occurring free: scalars (not bound by quantifiers) and arrays.
    pub fn free_names(&self, out: &mut BTreeSet<Name>) {
        match self {
            Formula::Bool(_) => {}
            Formula::Cmp(_, a, b) => {
                a.names(out);
                b.names(out);
            }
            Formula::Not(g) => g.free_names(out),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|g| g.free_names(out)),
            Formula::Implies(a, b) => {
                a.free_names(out);
                b.free_names(out);
            }
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                let mut inner = BTreeSet::new();
                for b in bs {
                    b.lo.names(out);
                    b.hi.names(out);
                }
                g.free_names(&mut inner);
                for b in bs {
                    inner.remove(&b.var);
                }
                out.extend(inner);
            }
        }
    }

    pub fn arrays(&self, out: &mut BTreeMap<Name, usize>) {
        self.visit_exprs(&mut |e| e.arrays(out));
    }

    /// Rewrites every top-level expression bottom-up (bounds included).
    pub fn map_exprs(&self, f: &mut dyn FnMut(Expr) -> Expr) -> Formula {
        match self {
            Formula::Bool(_) => self.clone(),
            Formula::Cmp(r, a, b) => Formula::Cmp(*r, a.map(f), b.map(f)),
            Formula::Not(g) => Formula::Not(Box::new(g.map_exprs(f))),
            Formula::And(v) => Formula::And(v.iter().map(|g| g.map_exprs(f)).collect()),
            Formula::Or(v) => Formula::Or(v.iter().map(|g| g.map_exprs(f)).collect()),
            Formula::Implies(a, b) => {
                Formula::Implies(Box::new(a.map_exprs(f)), Box::new(b.map_exprs(f)))
            }
            Formula::Forall(bs, g) => Formula::Forall(map_bounds(bs, f), Box::new(g.map_exprs(f))),
            Formula::Exists(bs, g) => Formula::Exists(map_bounds(bs, f), Box::new(g.map_exprs(f))),
        }
    }

    pub fn subst_n(&self, by: &Expr) -> Formula {
        self.map_exprs(&mut |e| if e == Expr::N { by.clone() } else { e })
    }

    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Formula {
        match self {
            Formula::Bool(_) => self.clone(),
            Formula::Cmp(r, a, b) => Formula::Cmp(*r, a.rename(map), b.rename(map)),
            Formula::Not(g) => Formula::Not(Box::new(g.rename(map))),
            Formula::And(v) => Formula::And(v.iter().map(|g| g.rename(map)).collect()),
            Formula::Or(v) => Formula::Or(v.iter().map(|g| g.rename(map)).collect()),
            Formula::Implies(a, b) => {
                Formula::Implies(Box::new(a.rename(map)), Box::new(b.rename(map)))
            }
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                let mut inner = map.clone();
                for b in bs {
                    inner.remove(&b.var);
                }
                let bs: Vec<Bound> = bs
                    .iter()
                    .map(|b| Bound {
                        var: b.var.clone(),
                        lo: b.lo.rename(map),
                        hi: b.hi.rename(map),
                    })
                    .collect();
                let g = Box::new(g.rename(&inner));
                if matches!(self, Formula::Forall(..)) {
                    Formula::Forall(bs, g)
                } else {
                    Formula::Exists(bs, g)
                }
            }
        }
    }

    /// Capture-avoiding substitution of scalar variables.
    pub fn subst_vars(&self, map: &BTreeMap<Name, Expr>) -> Formula {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Formula::Bool(_) => self.clone(),
            Formula::Cmp(r, a, b) => Formula::Cmp(*r, a.subst_vars(map), b.subst_vars(map)),
            Formula::Not(g) => Formula::Not(Box::new(g.subst_vars(map))),
            Formula::And(v) => Formula::And(v.iter().map(|g| g.subst_vars(map)).collect()),
            Formula::Or(v) => Formula::Or(v.iter().map(|g| g.subst_vars(map)).collect()),
            Formula::Implies(a, b) => {
                Formula::Implies(Box::new(a.subst_vars(map)), Box::new(b.subst_vars(map)))
            }
            Formula::Forall(..) | Formula::Exists(..) => {
                let (bs, body, is_all) = match self {
                    Formula::Forall(bs, g) => (bs, g, true),
                    Formula::Exists(bs, g) => (bs, g, false),
                    _ => unreachable!(),
                };
                let mut inner = map.clone();
                let mut incoming = BTreeSet::new();
                for e in map.values() {
                    e.names(&mut incoming);
                }
                let mut new_bounds = Vec::new();
                let mut taken: BTreeSet<Name> = incoming.clone();
                self.all_names(&mut taken);
                for b in bs {
                    let lo = b.lo.subst_vars(&inner);
                    let hi = b.hi.subst_vars(&inner);
                    inner.remove(&b.var);
                    let var = if incoming.contains(&b.var) {
                        let fresh = fresh_name(&b.var, &taken);
                        taken.insert(fresh.clone());
                        inner.insert(b.var.clone(), Expr::Var(fresh.clone()));
                        fresh
                    } else {
                        b.var.clone()
                    };
                    new_bounds.push(Bound { var, lo, hi });
                }
                let g = Box::new(body.subst_vars(&inner));
                if is_all {
                    Formula::Forall(new_bounds, g)
                } else {
                    Formula::Exists(new_bounds, g)
                }
            }
        }
    }

    pub fn subst_var(&self, x: &str, by: &Expr) -> Formula {
        let mut m = BTreeMap::new();
        m.insert(x.to_string(), by.clone());
        self.subst_vars(&m)
    }

    /// Replaces every read of `array`; `f` receives the rewritten indices.
    /// Binders are renamed first when the replacement might capture them.
    pub fn subst_reads(&self, array: &str, f: &mut dyn FnMut(&[Expr]) -> Expr) -> Formula {
        match self {
            Formula::Bool(_) => self.clone(),
            Formula::Cmp(r, a, b) => {
                Formula::Cmp(*r, a.subst_reads(array, f), b.subst_reads(array, f))
            }
            Formula::Not(g) => Formula::Not(Box::new(g.subst_reads(array, f))),
            Formula::And(v) => Formula::And(v.iter().map(|g| g.subst_reads(array, f)).collect()),
            Formula::Or(v) => Formula::Or(v.iter().map(|g| g.subst_reads(array, f)).collect()),
            Formula::Implies(a, b) => Formula::Implies(
                Box::new(a.subst_reads(array, f)),
                Box::new(b.subst_reads(array, f)),
            ),
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                let bs: Vec<Bound> = bs
                    .iter()
                    .map(|b| Bound {
                        var: b.var.clone(),
                        lo: b.lo.subst_reads(array, f),
                        hi: b.hi.subst_reads(array, f),
                    })
                    .collect();
                let g = Box::new(g.subst_reads(array, f));
                if matches!(self, Formula::Forall(..)) {
                    Formula::Forall(bs, g)
                } else {
                    Formula::Exists(bs, g)
                }
            }
        }
    }

    /// Every name occurring anywhere, binders included.
    pub fn all_names(&self, out: &mut BTreeSet<Name>) {
        self.visit_exprs(&mut |e| e.names(out));
        self.visit_binders(&mut |b| {
            out.insert(b.var.clone());
        });
    }

    pub fn visit_binders(&self, f: &mut dyn FnMut(&Bound)) {
        match self {
            Formula::Bool(_) | Formula::Cmp(..) => {}
            Formula::Not(g) => g.visit_binders(f),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|g| g.visit_binders(f)),
            Formula::Implies(a, b) => {
                a.visit_binders(f);
                b.visit_binders(f);
            }
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                bs.iter().for_each(|b| f(b));
                g.visit_binders(f);
            }
        }
    }
}

fn map_bounds(bs: &[Bound], f: &mut dyn FnMut(Expr) -> Expr) -> Vec<Bound> {
    bs.iter()
        .map(|b| Bound {
            var: b.var.clone(),
            lo: b.lo.map(f),
            hi: b.hi.map(f),
        })
        .collect()
}

fn expr_has_quant(e: &Expr) -> bool {
    match e {
        Expr::Ite(c, a, b) => !c.is_quantifier_free() || expr_has_quant(a) || expr_has_quant(b),
        Expr::Bin(_, a, b) => expr_has_quant(a) || expr_has_quant(b),
        Expr::Neg(a) => expr_has_quant(a),
        Expr::Read(_, idx) => idx.iter().any(expr_has_quant),
        _ => false,
    }
}

/// A name derived from `base` that is not in `taken`.
pub fn fresh_name(base: &str, taken: &BTreeSet<Name>) -> Name {
    let stem = base.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_');
    let stem = if stem.is_empty() { base } else { stem };
    (1..)
        .map(|k| format!("{stem}_{k}"))
        .find(|n| !taken.contains(n))
        .unwrap()
}

/// A parsed program with its specification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Program {
    pub body: Stmt,
    /// Array names with their dimensionality.
    pub arrays: BTreeMap<Name, usize>,
    pub scalars: BTreeSet<Name>,
}

impl Program {
    pub fn new(body: Stmt) -> Program {
        let mut p = Program {
            body,
            arrays: BTreeMap::new(),
            scalars: BTreeSet::new(),
        };
        p.refresh_symbols(&BTreeMap::new());
        p
    }

    /// Recomputes the symbol tables from the body; `extra` lists declared arrays.
    pub fn refresh_symbols(&mut self, extra: &BTreeMap<Name, usize>) {
        let mut arrays = extra.clone();
        collect_arrays(&self.body, &mut arrays);
        let mut names = BTreeSet::new();
        self.body.reads(&mut names);
        self.body.written_scalars(&mut names);
        let mut counters = BTreeSet::new();
        self.body.counters(&mut counters);
        self.scalars = names
            .into_iter()
            .filter(|n| !arrays.contains_key(n) && !counters.contains(n))
            .collect();
        self.arrays = arrays;
    }

    pub fn counters(&self) -> BTreeSet<Name> {
        let mut c = BTreeSet::new();
        self.body.counters(&mut c);
        c
    }

    /// Names read before any write on some path: the program inputs.
    pub fn inputs(&self) -> BTreeSet<Name> {
        let mut written = BTreeSet::new();
        let mut out = BTreeSet::new();
        upward_exposed(&self.body, &mut written, &mut out);
        out
    }
}

fn collect_arrays(s: &Stmt, out: &mut BTreeMap<Name, usize>) {
    let visit = |e: &Expr, out: &mut BTreeMap<Name, usize>| e.arrays(out);
    match s {
        Stmt::Seq(v) => v.iter().for_each(|x| collect_arrays(x, out)),
        Stmt::Assign(_, e) => visit(e, out),
        Stmt::Store(a, idx, e) => {
            out.insert(a.clone(), idx.len());
            idx.iter().for_each(|i| visit(i, out));
            visit(e, out);
        }
        Stmt::ArrayCopy(d, src) => {
            let dims = out.get(src).or_else(|| out.get(d)).copied().unwrap_or(1);
            out.entry(d.clone()).or_insert(dims);
            out.entry(src.clone()).or_insert(dims);
        }
        Stmt::If(c, a, b) => {
            c.arrays(out);
            collect_arrays(a, out);
            collect_arrays(b, out);
        }
        Stmt::For(l) => {
            visit(&l.ub, out);
            collect_arrays(&l.body, out);
        }
        Stmt::Fill(f) => {
            out.insert(f.array.clone(), f.index.len());
            f.index.iter().for_each(|i| visit(i, out));
            visit(&f.rhs, out);
        }
    }
}

fn upward_exposed(s: &Stmt, written: &mut BTreeSet<Name>, out: &mut BTreeSet<Name>) {
    let mut reads = BTreeSet::new();
    match s {
        Stmt::Seq(v) => {
            for x in v {
                upward_exposed(x, written, out);
            }
            return;
        }
        Stmt::Assign(x, _) => {
            s.reads(&mut reads);
            out.extend(reads.into_iter().filter(|n| !written.contains(n)));
            written.insert(x.clone());
            return;
        }
        Stmt::If(c, a, b) => {
            let mut names = BTreeSet::new();
            c.free_names(&mut names);
            out.extend(names.into_iter().filter(|n| !written.contains(n)));
            let mut wa = written.clone();
            let mut wb = written.clone();
            upward_exposed(a, &mut wa, out);
            upward_exposed(b, &mut wb, out);
            *written = wa.intersection(&wb).cloned().collect();
            return;
        }
        Stmt::For(l) => {
            let mut names = BTreeSet::new();
            l.ub.names(&mut names);
            out.extend(names.into_iter().filter(|n| !written.contains(n)));
            let mut w = written.clone();
            upward_exposed(&l.body, &mut w, out);
            return;
        }
        _ => {}
    }
    // Array statements: arrays are never fully overwritten, so every array read counts.
    s.reads(&mut reads);
    out.extend(reads.into_iter().filter(|n| !written.contains(n)));
    match s {
        Stmt::Store(a, ..) if !written.contains(a) => {
            out.insert(a.clone());
        }
        Stmt::Fill(f) if !written.contains(&f.array) => {
            out.insert(f.array.clone());
        }
        Stmt::ArrayCopy(d, _) => {
            written.insert(d.clone());
        }
        _ => {}
    }
}
