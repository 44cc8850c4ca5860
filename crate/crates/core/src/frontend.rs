//! Lexer, parser and static checks for the C-like input language.
//!
//! Specifications live in comments: `// assume(F)` before the code and
//! `// assert(F)` after it. Several annotations of one kind are conjoined.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Bound, Expr, Fill, Formula, Loop, Name, Program, Rel, Stmt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("grammar violation at {line}:{col}: {msg}")]
    GrammarViolation {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("scope violation: {0}")]
    ScopeViolation(String),
}

/// Pre- and post-condition of a program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spec {
    pub pre: Formula,
    pub post: Formula,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Diagnostic {
    /// An array index may leave `[0, N)` for some small `N`.
    IndexWarning { array: Name, index: String, n: i128 },
    /// A division or remainder whose divisor is not a non-zero constant.
    DivisionGuard { expr: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(i128),
    Ident(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "==>", "<==>", "::", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "=>",
    "(", ")", "[", "]", "{", "}", ";", ",", "+", "-", "*", "/", "%", "<", ">", "=", "!", "?", ":",
    "^",
];

fn unicode_symbol(c: char) -> Option<&'static str> {
    Some(match c {
        '∀' => "forall",
        '∃' => "exists",
        '∈' => "in",
        '≤' => "<=",
        '≥' => ">=",
        '≠' => "!=",
        '∧' => "&&",
        '∨' => "||",
        '¬' => "!",
        '⇒' | '→' => "==>",
        '−' => "-",
        _ => return None,
    })
}

fn lex(src: &str, line0: usize) -> Result<Vec<Token>, FrontendError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (line, col) = (ln + line0, i + 1);
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse::<i128>().map_err(|_| FrontendError::Syntax {
                    line,
                    col,
                    msg: format!("integer literal {text} out of range"),
                })?;
                // `1.0`-style literals from float code are read as integers.
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                out.push(Token {
                    tok: Tok::Int(v),
                    line,
                    col,
                });
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                match unicode_symbol(c) {
                    Some(word) if i == start + 1 => out.push(Token {
                        tok: Tok::Ident(word.into()),
                        line,
                        col,
                    }),
                    _ => out.push(Token {
                        tok: Tok::Ident(text),
                        line,
                        col,
                    }),
                }
            } else if let Some(sym) = unicode_symbol(c) {
                let tok = if sym.chars().all(char::is_alphabetic) {
                    Tok::Ident(sym.to_string())
                } else {
                    Tok::Sym(SYMBOLS.iter().find(|s| **s == sym).copied().unwrap())
                };
                out.push(Token { tok, line, col });
                i += 1;
            } else {
                let rest: String = chars[i..].iter().take(4).collect();
                match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                    Some(s) => {
                        out.push(Token {
                            tok: Tok::Sym(s),
                            line,
                            col,
                        });
                        i += s.chars().count();
                    }
                    None => {
                        return Err(FrontendError::Syntax {
                            line,
                            col,
                            msg: format!("unexpected character '{c}'"),
                        })
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Strips figure line numbers and comments; returns code plus annotations `(is_assume, text, line)`.
fn preprocess(src: &str) -> (String, Vec<(bool, String, usize)>) {
    let mut code = String::new();
    let mut annotations = Vec::new();
    let mut open: Option<(bool, String, usize, i32)> = None;
    let mut in_block = false;
    for (ln, raw) in src.lines().enumerate() {
        let mut line = raw.to_string();
        let trimmed = line.trim_start();
        let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 && trimmed[digits..].starts_with(". ")
            || digits > 0 && &trimmed[digits..] == "."
        {
            let cut = line.len() - trimmed.len() + digits + 1;
            line = format!("{}{}", " ".repeat(cut), &line[cut..]);
        }
        let mut kept = String::new();
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if in_block {
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    in_block = false;
                    kept.push_str("  ");
                    i += 2;
                } else {
                    kept.push(' ');
                    i += 1;
                }
            } else if chars[i] == '/' && chars.get(i + 1) == Some(&'*') {
                in_block = true;
                kept.push_str("  ");
                i += 2;
            } else if chars[i] == '/' && chars.get(i + 1) == Some(&'/') {
                let comment: String = chars[i + 2..].iter().collect();
                let body = comment.trim();
                if let Some((kind, text, start, depth)) = open.as_mut() {
                    let _ = (kind, start);
                    text.push(' ');
                    text.push_str(body);
                    *depth += paren_balance(body);
                    if *depth <= 0 {
                        let (k, t, s, _) = open.take().unwrap();
                        annotations.push((k, t, s));
                    }
                } else {
                    for (kw, is_assume) in [
                        ("assume", true),
                        ("assert", false),
                        ("requires", true),
                        ("ensures", false),
                    ] {
                        if let Some(rest) = body.strip_prefix(kw) {
                            let rest = rest.trim_start();
                            if rest.starts_with('(') {
                                let depth = paren_balance(rest);
                                if depth <= 0 {
                                    annotations.push((is_assume, rest.to_string(), ln + 1));
                                } else {
                                    open = Some((is_assume, rest.to_string(), ln + 1, depth));
                                }
                            }
                            break;
                        }
                    }
                }
                break;
            } else {
                kept.push(chars[i]);
                i += 1;
            }
        }
        code.push_str(&kept);
        code.push('\n');
    }
    if let Some((k, t, s, _)) = open {
        annotations.push((k, t, s));
    }
    (code, annotations)
}

fn paren_balance(s: &str) -> i32 {
    s.chars()
        .map(|c| match c {
            '(' => 1,
            ')' => -1,
            _ => 0,
        })
        .sum()
}

const TYPES: &[&str] = &[
    "int", "float", "double", "long", "unsigned", "short", "char", "bool", "void", "const",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// `=` means equality (annotation context).
    formula_mode: bool,
    declared_arrays: BTreeMap<Name, usize>,
    annotations: Vec<(bool, Formula)>,
}

type PResult<T> = Result<T, FrontendError>;

impl Parser {
    fn new(toks: Vec<Token>, formula_mode: bool) -> Parser {
        Parser {
            toks,
            pos: 0,
            formula_mode,
            declared_arrays: BTreeMap::new(),
            annotations: Vec::new(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos).or(self.toks.last()) {
            Some(t) => (t.line, t.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(FrontendError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn grammar<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(FrontendError::GrammarViolation {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected '{s}', found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Int(i)) => format!("'{i}'"),
            Some(Tok::Ident(x)) => format!("'{x}'"),
            Some(Tok::Sym(s)) => format!("'{s}'"),
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().cloned() {
            Some(Tok::Ident(x)) => {
                self.pos += 1;
                Ok(x)
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        self.additive()
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut e = self.multiplicative()?;
        loop {
            if self.eat_sym("+") {
                e = Expr::add(e, self.multiplicative()?);
            } else if self.is_sym("-") {
                self.pos += 1;
                e = Expr::sub(e, self.multiplicative()?);
            } else {
                return Ok(e);
            }
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else if self.eat_sym("%") {
                BinOp::Mod
            } else {
                return Ok(e);
            };
            e = Expr::bin(op, e, self.unary()?);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_sym("-") {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Int(i) => Expr::Int(-i),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat_sym("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = self.primary()?;
        if self.eat_sym("^") {
            let k = match self.peek().cloned() {
                Some(Tok::Int(k)) if (1..=8).contains(&k) => {
                    self.pos += 1;
                    k
                }
                _ => return self.err("exponent must be an integer literal in 1..=8"),
            };
            let mut e = base.clone();
            for _ in 1..k {
                e = Expr::mul(e, base.clone());
            }
            return Ok(e);
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().cloned() {
            Some(Tok::Int(i)) => {
                self.pos += 1;
                Ok(Expr::Int(i))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                if self.is_type_word() {
                    // C cast such as `(float)x`.
                    while self.is_type_word() {
                        self.pos += 1;
                    }
                    self.expect_sym(")")?;
                    return self.unary();
                }
                let e = self.expr()?;
                if self.eat_sym("?") {
                    return self.err("ternary operator must be parenthesized as a whole");
                }
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Ident(x)) => {
                self.pos += 1;
                if x == "N" {
                    return Ok(Expr::N);
                }
                if x == "ite" && self.is_sym("(") {
                    self.pos += 1;
                    let c = self.formula()?;
                    self.expect_sym(",")?;
                    let a = self.expr()?;
                    self.expect_sym(",")?;
                    let b = self.expr()?;
                    self.expect_sym(")")?;
                    return Ok(Expr::ite(c, a, b));
                }
                let mut idx = Vec::new();
                while self.eat_sym("[") {
                    idx.push(self.expr()?);
                    self.expect_sym("]")?;
                }
                if idx.is_empty() {
                    Ok(Expr::Var(x))
                } else {
                    Ok(Expr::Read(x, idx))
                }
            }
            _ => self.err(format!("expected expression, found {}", self.describe())),
        }
    }

    fn is_type_word(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if TYPES.contains(&x.as_str()))
    }

    // ---- formulas ----

    fn formula(&mut self) -> PResult<Formula> {
        let lhs = self.disjunction()?;
        if self.eat_sym("==>") || self.eat_sym("=>") {
            let rhs = self.formula()?;
            return Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        if self.eat_sym("<==>") {
            let rhs = self.formula()?;
            return Ok(Formula::And(vec![
                Formula::Implies(Box::new(lhs.clone()), Box::new(rhs.clone())),
                Formula::Implies(Box::new(rhs), Box::new(lhs)),
            ]));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> PResult<Formula> {
        let mut items = vec![self.conjunction()?];
        while self.eat_sym("||") || self.eat_word("or") {
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::Or(items)
        })
    }

    fn conjunction(&mut self) -> PResult<Formula> {
        let mut items = vec![self.negation()?];
        while self.eat_sym("&&") || self.eat_word("and") {
            items.push(self.negation()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::And(items)
        })
    }

    fn negation(&mut self) -> PResult<Formula> {
        if self.eat_sym("!") || self.eat_word("not") {
            let f = self.negation()?;
            return Ok(Formula::Not(Box::new(f)));
        }
        if self.is_word("forall") || self.is_word("exists") {
            return self.quantifier();
        }
        self.atom()
    }

    fn quantifier(&mut self) -> PResult<Formula> {
        let is_all = self.is_word("forall");
        self.pos += 1;
        let mut bounds = Vec::new();
        loop {
            let var = self.ident()?;
            if !(self.eat_word("in")) {
                return self.err("expected 'in' after quantified variable");
            }
            self.expect_sym("[")?;
            let lo = self.expr()?;
            self.expect_sym(",")?;
            let hi = self.expr()?;
            self.expect_sym(")")?;
            bounds.push(Bound { var, lo, hi });
            // Another binder follows when the comma is trailed by `x in`.
            let next_binder = self.is_sym(",")
                && matches!(self.peek_at(1), Some(Tok::Ident(_)))
                && matches!(self.peek_at(2), Some(Tok::Ident(w)) if w == "in");
            if next_binder {
                self.pos += 1;
                continue;
            }
            break;
        }
        if !(self.eat_sym("::") || self.eat_sym(",") || self.eat_sym(":") || self.eat_sym(".")) {
            return self.err("expected '::' or ',' after quantifier range");
        }
        let body = self.formula()?;
        Ok(if is_all {
            Formula::Forall(bounds, Box::new(body))
        } else {
            Formula::Exists(bounds, Box::new(body))
        })
    }

    fn rel(&mut self) -> Option<Rel> {
        let r = match self.peek() {
            Some(Tok::Sym("<")) => Rel::Lt,
            Some(Tok::Sym("<=")) => Rel::Le,
            Some(Tok::Sym(">")) => Rel::Gt,
            Some(Tok::Sym(">=")) => Rel::Ge,
            Some(Tok::Sym("==")) => Rel::Eq,
            Some(Tok::Sym("!=")) => Rel::Ne,
            Some(Tok::Sym("=")) if self.formula_mode => Rel::Eq,
            _ => return None,
        };
        self.pos += 1;
        Some(r)
    }

    fn atom(&mut self) -> PResult<Formula> {
        if self.eat_word("true") {
            return Ok(Formula::Bool(true));
        }
        if self.eat_word("false") {
            return Ok(Formula::Bool(false));
        }
        if self.is_sym("(") {
            // Either a parenthesized formula or an expression starting with a parenthesis.
            let save = self.pos;
            self.pos += 1;
            if let Ok(f) = self.formula() {
                if self.eat_sym(")") && !self.continues_expression() {
                    return Ok(f);
                }
            }
            self.pos = save;
        }
        let lhs = self.expr()?;
        match self.rel() {
            Some(r) => {
                let rhs = self.expr()?;
                // Chains such as `0 <= i < N`.
                if let Some(r2) = self.rel() {
                    let rhs2 = self.expr()?;
                    return Ok(Formula::And(vec![
                        Formula::Cmp(r, lhs, rhs.clone()),
                        Formula::Cmp(r2, rhs, rhs2),
                    ]));
                }
                Ok(Formula::Cmp(r, lhs, rhs))
            }
            None => Ok(Formula::Cmp(Rel::Ne, lhs, Expr::Int(0))),
        }
    }

    fn continues_expression(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Sym(
                "+" | "-" | "*" | "/" | "%" | "<" | "<=" | ">" | ">=" | "==" | "!=" | "^"
            ))
        ) || (self.formula_mode && self.is_sym("="))
    }

    // ---- statements ----

    fn program(&mut self) -> PResult<Stmt> {
        // Optional function wrapper `void f(params) { ... }`.
        let save = self.pos;
        if self.is_type_word() {
            while self.is_type_word() {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(Tok::Ident(_)))
                && matches!(self.peek_at(1), Some(Tok::Sym("(")))
            {
                self.pos += 2;
                let mut depth = 1;
                while depth > 0 {
                    match self.peek() {
                        None => return self.err("unterminated parameter list"),
                        Some(Tok::Sym("(")) => depth += 1,
                        Some(Tok::Sym(")")) => depth -= 1,
                        Some(Tok::Sym("[")) => {}
                        _ => {}
                    }
                    self.pos += 1;
                }
                // Array parameters `int A[]` declare dimensionality.
                self.scan_params(save);
                self.expect_sym("{")?;
                let body = self.stmts_until_brace()?;
                self.expect_sym("}")?;
                if self.pos != self.toks.len() {
                    return self.err(format!(
                        "unexpected {} after function body",
                        self.describe()
                    ));
                }
                return Ok(body);
            }
            self.pos = save;
        }
        let mut items = Vec::new();
        while self.peek().is_some() {
            items.push(self.stmt()?);
        }
        Ok(Stmt::seq(items))
    }

    fn scan_params(&mut self, from: usize) {
        let mut k = from;
        while k < self.pos {
            if let Tok::Ident(x) = &self.toks[k].tok {
                let mut dims = 0;
                let mut j = k + 1;
                while j + 1 < self.pos && self.toks[j].tok == Tok::Sym("[") {
                    while j < self.pos && self.toks[j].tok != Tok::Sym("]") {
                        j += 1;
                    }
                    dims += 1;
                    j += 1;
                }
                if dims > 0 {
                    self.declared_arrays.insert(x.clone(), dims);
                }
            }
            k += 1;
        }
    }

    fn stmts_until_brace(&mut self) -> PResult<Stmt> {
        let mut items = Vec::new();
        while !self.is_sym("}") {
            if self.peek().is_none() {
                return self.err("missing '}'");
            }
            items.push(self.stmt()?);
        }
        Ok(Stmt::seq(items))
    }

    fn block_or_stmt(&mut self) -> PResult<Stmt> {
        if self.eat_sym("{") {
            let s = self.stmts_until_brace()?;
            self.expect_sym("}")?;
            Ok(s)
        } else {
            self.stmt()
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if self.eat_sym(";") {
            return Ok(Stmt::skip());
        }
        if self.is_sym("{") {
            return self.block_or_stmt();
        }
        if self.is_word("for") {
            return self.for_loop();
        }
        if self.eat_word("if") {
            self.expect_sym("(")?;
            let c = self.formula()?;
            self.expect_sym(")")?;
            let then = self.block_or_stmt()?;
            let els = if self.eat_word("else") {
                self.block_or_stmt()?
            } else {
                Stmt::skip()
            };
            return Ok(Stmt::If(c, Box::new(then), Box::new(els)));
        }
        if (self.is_word("assume") || self.is_word("assert"))
            && matches!(self.peek_at(1), Some(Tok::Sym("(")))
        {
            let is_assume = self.is_word("assume");
            self.pos += 2;
            let saved = self.formula_mode;
            self.formula_mode = true;
            let f = self.formula()?;
            self.formula_mode = saved;
            self.expect_sym(")")?;
            self.eat_sym(";");
            self.annotations.push((is_assume, f));
            return Ok(Stmt::skip());
        }
        if self.is_word("array") && matches!(self.peek_at(1), Some(Tok::Ident(_))) {
            self.pos += 1;
            let dst = self.ident()?;
            self.expect_sym("=")?;
            let src = self.ident()?;
            self.expect_sym(";")?;
            return Ok(Stmt::ArrayCopy(dst, src));
        }
        if self.is_word("forall") && matches!(self.peek_at(1), Some(Tok::Sym("("))) {
            return self.fill();
        }
        if self.is_word("return") {
            while !self.eat_sym(";") {
                if self.peek().is_none() {
                    return self.err("missing ';' after return");
                }
                self.pos += 1;
            }
            return Ok(Stmt::skip());
        }
        if self.is_type_word() {
            return self.declaration();
        }
        let s = self.simple_stmt()?;
        self.expect_sym(";")?;
        Ok(s)
    }

    fn declaration(&mut self) -> PResult<Stmt> {
        while self.is_type_word() {
            self.pos += 1;
        }
        let mut items = Vec::new();
        loop {
            let name = self.ident()?;
            let mut dims = 0;
            while self.eat_sym("[") {
                if !self.is_sym("]") {
                    self.expr()?;
                }
                self.expect_sym("]")?;
                dims += 1;
            }
            if dims > 0 {
                self.declared_arrays.insert(name.clone(), dims);
            } else if self.eat_sym("=") {
                let e = self.expr()?;
                if name == "N" {
                    return self.grammar("N cannot be assigned");
                }
                items.push(Stmt::Assign(name, e));
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(";")?;
        Ok(Stmt::seq(items))
    }

    fn fill(&mut self) -> PResult<Stmt> {
        self.pos += 1;
        self.expect_sym("(")?;
        let counter = self.ident()?;
        if !self.eat_word("in") {
            return self.err("expected 'in'");
        }
        self.expect_sym("[")?;
        let lo = self.expr()?;
        self.expect_sym(",")?;
        let hi = self.expr()?;
        self.expect_sym(")")?;
        self.expect_sym(")")?;
        let array = self.ident()?;
        let mut index = Vec::new();
        while self.eat_sym("[") {
            index.push(self.expr()?);
            self.expect_sym("]")?;
        }
        self.expect_sym("=")?;
        let rhs = self.expr()?;
        self.expect_sym(";")?;
        Ok(Stmt::Fill(Fill {
            counter,
            lo,
            hi,
            array,
            index,
            rhs,
        }))
    }

    /// Assignment forms: `x = e`, `a[i] = e`, `x += e`, `x++`, `++x`.
    fn simple_stmt(&mut self) -> PResult<Stmt> {
        if self.eat_sym("++") || self.eat_sym("--") {
            let up = matches!(self.toks[self.pos - 1].tok, Tok::Sym("++"));
            let (name, idx) = self.lvalue()?;
            return Ok(self.compound(
                name,
                idx,
                if up { BinOp::Add } else { BinOp::Sub },
                Expr::Int(1),
            ));
        }
        let (name, idx) = self.lvalue()?;
        if name == "N" {
            return self.grammar("N cannot be assigned");
        }
        let op = match self.peek() {
            Some(Tok::Sym("=")) => None,
            Some(Tok::Sym("+=")) => Some(BinOp::Add),
            Some(Tok::Sym("-=")) => Some(BinOp::Sub),
            Some(Tok::Sym("*=")) => Some(BinOp::Mul),
            Some(Tok::Sym("++")) => {
                self.pos += 1;
                return Ok(self.compound(name, idx, BinOp::Add, Expr::Int(1)));
            }
            Some(Tok::Sym("--")) => {
                self.pos += 1;
                return Ok(self.compound(name, idx, BinOp::Sub, Expr::Int(1)));
            }
            _ => return self.err(format!("expected assignment, found {}", self.describe())),
        };
        self.pos += 1;
        let rhs = self.rhs()?;
        Ok(match op {
            None if idx.is_empty() => Stmt::Assign(name, rhs),
            None => Stmt::Store(name, idx, rhs),
            Some(op) => self.compound(name, idx, op, rhs),
        })
    }

    /// Right-hand side, allowing a C ternary `c ? a : b`.
    fn rhs(&mut self) -> PResult<Expr> {
        let save = self.pos;
        if let Ok(e) = self.expr() {
            if !self.is_sym("?") && !self.continues_condition() {
                return Ok(e);
            }
        }
        self.pos = save;
        let c = self.formula()?;
        self.expect_sym("?")?;
        let a = self.rhs()?;
        self.expect_sym(":")?;
        let b = self.rhs()?;
        Ok(Expr::ite(c, a, b))
    }

    fn continues_condition(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Sym(
                "<" | "<=" | ">" | ">=" | "==" | "!=" | "&&" | "||"
            ))
        )
    }

    fn compound(&self, name: Name, idx: Vec<Expr>, op: BinOp, e: Expr) -> Stmt {
        if idx.is_empty() {
            Stmt::Assign(name.clone(), Expr::bin(op, Expr::Var(name), e))
        } else {
            Stmt::Store(
                name.clone(),
                idx.clone(),
                Expr::bin(op, Expr::Read(name, idx), e),
            )
        }
    }

    fn lvalue(&mut self) -> PResult<(Name, Vec<Expr>)> {
        let name = self.ident()?;
        let mut idx = Vec::new();
        while self.eat_sym("[") {
            idx.push(self.expr()?);
            self.expect_sym("]")?;
        }
        Ok((name, idx))
    }

    fn for_loop(&mut self) -> PResult<Stmt> {
        self.pos += 1;
        self.expect_sym("(")?;
        while self.is_type_word() {
            self.pos += 1;
        }
        let counter = self.ident()?;
        self.expect_sym("=")?;
        match self.expr()? {
            Expr::Int(0) => {}
            _ => return self.grammar(format!("loop counter {counter} must start at 0")),
        }
        self.expect_sym(";")?;
        let c2 = self.ident()?;
        if c2 != counter || !self.eat_sym("<") {
            return self.grammar(format!("loop condition must have the form {counter} < UB"));
        }
        let ub = self.expr()?;
        self.expect_sym(";")?;
        let ok = if self.eat_sym("++") {
            self.ident()? == counter
        } else {
            let c3 = self.ident()?;
            if c3 != counter {
                false
            } else if self.eat_sym("++") {
                true
            } else if self.eat_sym("+=") {
                matches!(self.expr()?, Expr::Int(1))
            } else if self.eat_sym("=") {
                let e = self.expr()?;
                e == Expr::add(Expr::Var(counter.clone()), Expr::Int(1))
                    || e == Expr::add(Expr::Int(1), Expr::Var(counter.clone()))
            } else {
                false
            }
        };
        if !ok {
            return self.grammar(format!("loop counter {counter} must be incremented by one"));
        }
        self.expect_sym(")")?;
        let (line, col) = self.here();
        let body = self.block_or_stmt()?;
        let mut assigned = BTreeSet::new();
        body.written_scalars(&mut assigned);
        if assigned.contains(&counter) {
            return Err(FrontendError::GrammarViolation {
                line,
                col,
                msg: format!("loop counter {counter} is assigned in the loop body"),
            });
        }
        let mut inner = BTreeSet::new();
        body.counters(&mut inner);
        if inner.contains(&counter) {
            return Err(FrontendError::GrammarViolation {
                line,
                col,
                msg: format!("nested loop reuses counter {counter}"),
            });
        }
        Ok(Stmt::For(Loop {
            counter,
            ub,
            body: Box::new(body),
        }))
    }
}

/// Parses a standalone formula in annotation syntax.
pub fn parse_formula(src: &str) -> Result<Formula, FrontendError> {
    let toks = lex(src, 1)?;
    let mut p = Parser::new(toks, true);
    let f = p.formula()?;
    if p.pos != p.toks.len() {
        return p.err(format!("unexpected {} after formula", p.describe()));
    }
    Ok(f)
}

/// Parses a standalone expression.
pub fn parse_expr(src: &str) -> Result<Expr, FrontendError> {
    let toks = lex(src, 1)?;
    let mut p = Parser::new(toks, true);
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err(format!("unexpected {} after expression", p.describe()));
    }
    Ok(e)
}

/// Parses program text together with its `assume`/`assert` annotations.
pub fn parse(src: &str) -> Result<(Program, Spec), FrontendError> {
    let (code, annotations) = preprocess(src);
    let toks = lex(&code, 1)?;
    let mut p = Parser::new(toks, false);
    let body = p.program()?;
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for (is_assume, text, line) in annotations {
        let toks = lex(&text, line)?;
        let mut q = Parser::new(toks, true);
        q.expect_sym("(")?;
        let f = q.formula()?;
        q.expect_sym(")")?;
        q.eat_sym(";");
        if q.pos != q.toks.len() {
            return q.err(format!("unexpected {} after annotation", q.describe()));
        }
        if is_assume {
            pre.push(f)
        } else {
            post.push(f)
        }
    }
    for (is_assume, f) in p.annotations.drain(..) {
        if is_assume {
            pre.push(f)
        } else {
            post.push(f)
        }
    }
    check_counter_scope(&body, &mut Vec::new(), &all_counters(&body))?;
    let mut program = Program::new(body);
    program.refresh_symbols(&p.declared_arrays);
    for (a, d) in &p.declared_arrays {
        if let Some(used) = program.arrays.get(a) {
            if used != d {
                return Err(FrontendError::GrammarViolation {
                    line: 1,
                    col: 1,
                    msg: format!("array {a} declared with {d} dimensions but used with {used}"),
                });
            }
        }
    }
    let clash: Vec<&Name> = program
        .scalars
        .iter()
        .filter(|s| program.arrays.contains_key(*s))
        .collect();
    if let Some(x) = clash.first() {
        return Err(FrontendError::GrammarViolation {
            line: 1,
            col: 1,
            msg: format!("{x} used as scalar and array"),
        });
    }
    Ok((
        program,
        Spec {
            pre: Formula::and(pre),
            post: Formula::and(post),
        },
    ))
}

fn all_counters(s: &Stmt) -> BTreeSet<Name> {
    let mut c = BTreeSet::new();
    s.counters(&mut c);
    c
}

fn check_counter_scope(
    s: &Stmt,
    scope: &mut Vec<Name>,
    counters: &BTreeSet<Name>,
) -> Result<(), FrontendError> {
    let bad = |names: BTreeSet<Name>, scope: &Vec<Name>| -> Result<(), FrontendError> {
        for n in names {
            if counters.contains(&n) && !scope.contains(&n) {
                return Err(FrontendError::GrammarViolation {
                    line: 1,
                    col: 1,
                    msg: format!("loop counter {n} used outside its loop"),
                });
            }
        }
        Ok(())
    };
    let names_of = |e: &Expr| {
        let mut n = BTreeSet::new();
        e.names(&mut n);
        n
    };
    match s {
        Stmt::Seq(v) => v
            .iter()
            .try_for_each(|x| check_counter_scope(x, scope, counters)),
        Stmt::Assign(x, e) => {
            let mut n = names_of(e);
            n.insert(x.clone());
            bad(n, scope)
        }
        Stmt::Store(_, idx, e) => {
            let mut n = names_of(e);
            idx.iter().for_each(|i| i.names(&mut n));
            bad(n, scope)
        }
        Stmt::If(c, a, b) => {
            let mut n = BTreeSet::new();
            c.free_names(&mut n);
            bad(n, scope)?;
            check_counter_scope(a, scope, counters)?;
            check_counter_scope(b, scope, counters)
        }
        Stmt::For(l) => {
            bad(names_of(&l.ub), scope)?;
            scope.push(l.counter.clone());
            let r = check_counter_scope(&l.body, scope, counters);
            scope.pop();
            r
        }
        Stmt::ArrayCopy(..) | Stmt::Fill(_) => Ok(()),
    }
}

/// Static checks beyond parsing: loop bounds may mention only `N`, constants
/// and enclosing counters. Returns warnings for suspicious indexing.
pub fn validate(program: &Program) -> Result<Vec<Diagnostic>, FrontendError> {
    let mut diags = Vec::new();
    check_bounds(&program.body, &mut Vec::new(), program, &mut diags)?;
    Ok(diags)
}

fn check_bounds(
    s: &Stmt,
    scope: &mut Vec<(Name, Expr)>,
    program: &Program,
    diags: &mut Vec<Diagnostic>,
) -> Result<(), FrontendError> {
    let visit = |e: &Expr, scope: &Vec<(Name, Expr)>, diags: &mut Vec<Diagnostic>| {
        index_checks(e, scope, diags);
    };
    match s {
        Stmt::Seq(v) => v
            .iter()
            .try_for_each(|x| check_bounds(x, scope, program, diags)),
        Stmt::Assign(_, e) => {
            visit(e, scope, diags);
            Ok(())
        }
        Stmt::Store(a, idx, e) => {
            visit(&Expr::Read(a.clone(), idx.clone()), scope, diags);
            visit(e, scope, diags);
            Ok(())
        }
        Stmt::If(c, a, b) => {
            c.visit_exprs(&mut |e| visit(e, scope, diags));
            check_bounds(a, scope, program, diags)?;
            check_bounds(b, scope, program, diags)
        }
        Stmt::For(l) => {
            let mut names = BTreeSet::new();
            l.ub.names(&mut names);
            for n in names {
                if !scope.iter().any(|(c, _)| *c == n) {
                    return Err(FrontendError::ScopeViolation(format!(
                        "loop bound {} of {} refers to {n}; only N, constants and enclosing counters are allowed",
                        l.ub, l.counter
                    )));
                }
            }
            scope.push((l.counter.clone(), l.ub.clone()));
            let r = check_bounds(&l.body, scope, program, diags);
            scope.pop();
            r
        }
        Stmt::ArrayCopy(..) | Stmt::Fill(_) => Ok(()),
    }
}

/// Flags indices that leave `[0, N)` for some `N` in `1..=4`, and non-constant divisors.
fn index_checks(e: &Expr, scope: &[(Name, Expr)], diags: &mut Vec<Diagnostic>) {
    match e {
        Expr::Read(a, idx) => {
            for i in idx {
                index_checks(i, scope, diags);
                if i.has_read() {
                    continue;
                }
                for n in 1..=4i128 {
                    if let Some((lo, hi)) = interval(i, scope, n) {
                        if lo < 0 || hi >= n {
                            diags.push(Diagnostic::IndexWarning {
                                array: a.clone(),
                                index: i.to_string(),
                                n,
                            });
                            break;
                        }
                    }
                }
            }
        }
        Expr::Bin(op, a, b) => {
            index_checks(a, scope, diags);
            index_checks(b, scope, diags);
            if matches!(op, BinOp::Div | BinOp::Mod) && !matches!(b.as_int(), Some(k) if k != 0) {
                diags.push(Diagnostic::DivisionGuard {
                    expr: e.to_string(),
                });
            }
        }
        Expr::Neg(a) => index_checks(a, scope, diags),
        Expr::Ite(c, a, b) => {
            c.visit_exprs(&mut |x| index_checks(x, scope, diags));
            index_checks(a, scope, diags);
            index_checks(b, scope, diags);
        }
        _ => {}
    }
}

/// Interval of `e` over all counter valuations at parameter `n`; `None` when
/// the expression is not interval-evaluable or a loop is empty.
fn interval(e: &Expr, scope: &[(Name, Expr)], n: i128) -> Option<(i128, i128)> {
    match e {
        Expr::Int(i) => Some((*i, *i)),
        Expr::N => Some((n, n)),
        Expr::Var(x) => {
            let k = scope.iter().rposition(|(c, _)| c == x)?;
            let (_, ub) = interval(&scope[k].1, &scope[..k], n)?;
            if ub <= 0 {
                None
            } else {
                Some((0, ub - 1))
            }
        }
        Expr::Neg(a) => interval(a, scope, n).map(|(lo, hi)| (-hi, -lo)),
        Expr::Bin(op, a, b) => {
            let (al, ah) = interval(a, scope, n)?;
            let (bl, bh) = interval(b, scope, n)?;
            match op {
                BinOp::Add => Some((al + bl, ah + bh)),
                BinOp::Sub => Some((al - bh, ah - bl)),
                BinOp::Mul => {
                    let c = [al * bl, al * bh, ah * bl, ah * bh];
                    Some((*c.iter().min()?, *c.iter().max()?))
                }
                _ => None,
            }
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = "
// assume(true)
x = 0;
for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
for (j = 0; j < N; j++) { b[j] = x + j; }
// assert(forall j in [0, N) :: b[j] == j + N*N*N)
";

    #[test]
    fn parses_running_example() {
        let (p, spec) = parse(FIG2).unwrap();
        assert_eq!(p.body.flatten().len(), 3);
        assert_eq!(p.arrays.get("a"), Some(&1));
        assert!(p.scalars.contains("x"));
        assert_eq!(spec.pre, Formula::Bool(true));
        assert!(matches!(spec.post, Formula::Forall(..)));
    }

    #[test]
    fn empty_program_parses() {
        let (p, spec) = parse("").unwrap();
        assert!(p.body.is_skip());
        assert_eq!(spec.post, Formula::Bool(true));
    }

    #[test]
    fn counter_assignment_is_rejected() {
        let err = parse("for (i = 0; i < N; i++) { i = i + 1; }").unwrap_err();
        assert!(matches!(err, FrontendError::GrammarViolation { .. }));
    }

    #[test]
    fn counter_outside_loop_is_rejected() {
        let err = parse("for (i = 0; i < N; i++) { a[i] = 0; } x = i;").unwrap_err();
        assert!(matches!(err, FrontendError::GrammarViolation { .. }));
    }

    #[test]
    fn nonzero_start_is_rejected() {
        let err = parse("for (i = 1; i < N; i++) { a[i] = 0; }").unwrap_err();
        assert!(matches!(err, FrontendError::GrammarViolation { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        match parse("x = ;").unwrap_err() {
            FrontendError::Syntax { line, col, .. } => assert_eq!((line, col), (1, 5)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn scalar_bound_is_scope_violation() {
        let (p, _) = parse("for (i = 0; i < x; i++) { a[i] = 0; }").unwrap();
        assert!(matches!(
            validate(&p),
            Err(FrontendError::ScopeViolation(_))
        ));
    }

    #[test]
    fn out_of_range_index_warns() {
        let (p, _) = parse("for (i = 0; i < N; i++) { a[i] = a[i + 1]; }").unwrap();
        let d = validate(&p).unwrap();
        assert!(d
            .iter()
            .any(|d| matches!(d, Diagnostic::IndexWarning { .. })));
        let (p, _) = parse("for (i = 0; i < N; i++) { a[i] = a[i] + 1; }").unwrap();
        assert!(validate(&p).unwrap().is_empty());
    }

    #[test]
    fn function_wrapper_and_unicode_annotations() {
        let src = "
1. // assume(∀i ∈ [0,N), A[i] > 0)
2. void Max(int A[], int N) {
3.   int m = A[0];
4.   for (int i=0; i<N; i=i+1) {
5.     if (m < A[i]) m = A[i];
6.   }
7. }
8. // assert(∃i ∈ [0,N), m = A[i])
";
        let (p, spec) = parse(src).unwrap();
        assert!(p.arrays.contains_key("A"));
        assert!(matches!(spec.pre, Formula::Forall(..)));
        assert!(matches!(spec.post, Formula::Exists(..)));
    }

    #[test]
    fn multi_line_assert_is_joined() {
        let src = "s = 0;\n// assert( s == 0 and\n//   s >= 0 )\n";
        let (_, spec) = parse(src).unwrap();
        assert!(matches!(spec.post, Formula::And(ref v) if v.len() == 2));
    }

    #[test]
    fn rendering_reparses() {
        let (p, _) = parse(FIG2).unwrap();
        let text = p.body.render();
        let (q, _) = parse(&text).unwrap();
        assert_eq!(p.body, q.body);
        let f = parse_formula(
            "forall i in [0, N), j in [0, N - 1) :: A[i][j] == ite(i < j, 1, -2) ==> x != 0",
        )
        .unwrap();
        assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn ternary_and_conditions() {
        let (p, _) =
            parse("for (i = 0; i < N; i++) { if (A[i] >= 0 && !B[i]) x = (A[i] > 0) ? 1 : 0; }")
                .unwrap();
        assert!(p.scalars.contains("x"));
    }
}
