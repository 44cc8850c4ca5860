//! C-like rendering of programs and formulas. The output re-parses.

use std::fmt::{self, Display, Formatter, Write};

use crate::ast::{BinOp, Bound, Expr, Formula, Rel, Stmt};

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(..) => 2,
        Expr::Neg(_) => 3,
        _ => 4,
    }
}

fn paren(f: &mut Formatter<'_>, e: &Expr, need: bool) -> fmt::Result {
    if need {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(i) if *i < 0 => write!(f, "({i})"),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::N => write!(f, "N"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::Read(a, idx) => {
                write!(f, "{a}")?;
                for i in idx {
                    write!(f, "[{i}]")?;
                }
                Ok(())
            }
            Expr::Bin(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Mod => ("%", 2),
                };
                paren(f, a, prec(a) < p)?;
                write!(f, " {sym} ")?;
                paren(f, b, prec(b) <= p)
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                paren(f, a, prec(a) < 3 || matches!(**a, Expr::Neg(_)))
            }
            Expr::Ite(c, a, b) => write!(f, "ite({c}, {a}, {b})"),
        }
    }
}

impl Display for Rel {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Gt => ">",
            Rel::Ge => ">=",
            Rel::Eq => "==",
            Rel::Ne => "!=",
        })
    }
}

fn fprec(g: &Formula) -> u8 {
    match g {
        Formula::Implies(..) => 0,
        Formula::Or(_) => 1,
        Formula::And(_) => 2,
        _ => 4,
    }
}

fn fparen(f: &mut Formatter<'_>, g: &Formula, need: bool) -> fmt::Result {
    if need {
        write!(f, "({g})")
    } else {
        write!(f, "{g}")
    }
}

fn bounds(f: &mut Formatter<'_>, bs: &[Bound]) -> fmt::Result {
    for (k, b) in bs.iter().enumerate() {
        if k > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{} in [{}, {})", b.var, b.lo, b.hi)?;
    }
    Ok(())
}

impl Display for Formula {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Bool(b) => write!(f, "{b}"),
            Formula::Cmp(r, a, b) => write!(f, "{a} {r} {b}"),
            Formula::Not(g) => {
                write!(f, "!")?;
                fparen(f, g, fprec(g) < 4)
            }
            Formula::And(v) | Formula::Or(v) => {
                let (sym, p) = if matches!(self, Formula::And(_)) {
                    ("&&", 2)
                } else {
                    ("||", 1)
                };
                for (k, g) in v.iter().enumerate() {
                    if k > 0 {
                        write!(f, " {sym} ")?;
                    }
                    fparen(f, g, fprec(g) <= p)?;
                }
                Ok(())
            }
            Formula::Implies(a, b) => {
                fparen(f, a, fprec(a) <= 1)?;
                write!(f, " ==> ")?;
                fparen(f, b, fprec(b) < 1)
            }
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                let q = if matches!(self, Formula::Forall(..)) {
                    "forall"
                } else {
                    "exists"
                };
                write!(f, "({q} ")?;
                bounds(f, bs)?;
                write!(f, " :: {g})")
            }
        }
    }
}

impl Stmt {
    /// Indented multi-line rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_into(self, 0, &mut out);
        out
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn block(s: &Stmt, depth: usize, out: &mut String) {
    out.push_str("{\n");
    for x in s.flatten() {
        render_into(&x, depth + 1, out);
    }
    indent(out, depth);
    out.push('}');
}

fn render_into(s: &Stmt, depth: usize, out: &mut String) {
    match s {
        Stmt::Seq(v) => {
            for x in v {
                render_into(x, depth, out);
            }
        }
        Stmt::Assign(x, e) => {
            indent(out, depth);
            let _ = writeln!(out, "{x} = {e};");
        }
        Stmt::Store(a, idx, e) => {
            indent(out, depth);
            let _ = write!(out, "{a}");
            for i in idx {
                let _ = write!(out, "[{i}]");
            }
            let _ = writeln!(out, " = {e};");
        }
        Stmt::ArrayCopy(d, src) => {
            indent(out, depth);
            let _ = writeln!(out, "array {d} = {src};");
        }
        Stmt::If(c, a, b) => {
            indent(out, depth);
            let _ = write!(out, "if ({c}) ");
            block(a, depth, out);
            if !b.is_skip() {
                out.push_str(" else ");
                block(b, depth, out);
            }
            out.push('\n');
        }
        Stmt::For(l) => {
            indent(out, depth);
            let c = &l.counter;
            let _ = write!(out, "for ({c} = 0; {c} < {}; {c}++) ", l.ub);
            block(&l.body, depth, out);
            out.push('\n');
        }
        Stmt::Fill(fl) => {
            indent(out, depth);
            let _ = write!(
                out,
                "forall ({} in [{}, {})) {}",
                fl.counter, fl.lo, fl.hi, fl.array
            );
            for i in &fl.index {
                let _ = write!(out, "[{i}]");
            }
            let _ = writeln!(out, " = {};", fl.rhs);
        }
    }
}

impl Display for Stmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
