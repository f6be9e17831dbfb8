//! Text format for systems:
//!
//! ```text
//! n=3 m=1
//! name=coron
//! f1 = x2^3 - 3*(x1-x3)^2*x2
//! f2 = (x1-x3)^3 - 3*(x1-x3)^2*x2
//! f3 = u1
//! ```
//!
//! Statements are separated by newlines or `;`, and `#` starts a comment.
//! Unary minus applies to a whole factor, so `-x1^2` is `-(x1^2)`.

use super::expr::{Expr, Func};
use super::SystemDef;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(i64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eq,
    Sep,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: tl, column: tc });
        match c {
            '\n' => {
                push(&mut out, Tok::Sep);
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            ';' => push(&mut out, Tok::Sep),
            '+' => push(&mut out, Tok::Plus),
            '-' => push(&mut out, Tok::Minus),
            '*' => push(&mut out, Tok::Star),
            '/' => push(&mut out, Tok::Slash),
            '^' => push(&mut out, Tok::Caret),
            '(' => push(&mut out, Tok::LParen),
            ')' => push(&mut out, Tok::RParen),
            '=' => push(&mut out, Tok::Eq),
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut is_float = false;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    s.parse::<f64>().map(Tok::Num)
                } else {
                    s.parse::<i64>().map(Tok::Int).or_else(|_| s.parse::<f64>().map(Tok::Num))
                }
                .map_err(|_| Error::Syntax {
                    line: tl,
                    column: tc,
                    message: format!("malformed number `{s}`"),
                })?;
                push(&mut out, tok);
                col += i - start;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
                col += i - start;
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    n: usize,
    m: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, t: &Token, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            self.err(&t, format!("expected {what}, found {}", describe(&t.tok)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.next();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.next();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.next();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek().tok == Tok::Minus {
            self.next();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.next();
        let negative = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        let k = match t.tok {
            Tok::Int(k) => k,
            _ => return self.err(&t, "exponent must be an integer"),
        };
        let k = if negative { -k } else { k };
        let k = i32::try_from(k).or_else(|_| self.err(&t, "exponent out of range"))?;
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Const(*v)),
            Tok::Int(v) => Ok(Expr::Const(*v as f64)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if self.peek().tok == Tok::LParen {
                    return self.err(&t, format!("unknown function `{name}`"));
                }
                self.variable(name, &t)
            }
            other => self.err(&t, format!("expected an operand, found {}", describe(other))),
        }
    }

    fn variable(&self, name: &str, t: &Token) -> Result<Expr> {
        let unknown = || Error::UnknownVariable {
            name: name.to_string(),
            line: t.line,
            column: t.column,
        };
        let (kind, digits) = name.split_at(1);
        let index: usize = digits.parse().map_err(|_| unknown())?;
        match kind {
            "x" if (1..=self.n).contains(&index) => Ok(Expr::X(index - 1)),
            "u" if (1..=self.m).contains(&index) => Ok(Expr::U(index - 1)),
            _ => Err(unknown()),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Int(v) => format!("integer {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Sep => "end of statement".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parse a single expression over `x1..xn`, `u1..um`.
pub fn parse_expr(text: &str, n: usize, m: usize) -> Result<Expr> {
    let mut p = Parser { toks: lex(text)?, pos: 0, n, m };
    while p.peek().tok == Tok::Sep {
        p.next();
    }
    let e = p.expr()?;
    while p.peek().tok == Tok::Sep {
        p.next();
    }
    let t = p.next();
    if t.tok != Tok::Eof {
        return p.err(&t, format!("unexpected {} after expression", describe(&t.tok)));
    }
    Ok(e)
}

/// Parse a system definition.
pub fn parse_system(text: &str) -> Result<SystemDef> {
    let mut p = Parser { toks: lex(text)?, pos: 0, n: 0, m: 0 };
    let mut n: Option<usize> = None;
    let mut m: Option<usize> = None;
    let mut name: Option<String> = None;
    let mut equations: Vec<Option<Expr>> = Vec::new();

    loop {
        let t = p.next();
        let key = match &t.tok {
            Tok::Eof => break,
            Tok::Sep => continue,
            Tok::Ident(s) => s.clone(),
            other => return p.err(&t, format!("expected a statement, found {}", describe(other))),
        };
        p.expect(Tok::Eq, "`=`")?;
        match key.as_str() {
            "n" | "m" => {
                if !equations.is_empty() {
                    return p.err(&t, "dimensions must be declared before the equations");
                }
                let vt = p.next();
                let v = match vt.tok {
                    Tok::Int(v) if v >= 0 => v as usize,
                    _ => return p.err(&vt, format!("`{key}` must be a non-negative integer")),
                };
                if key == "n" {
                    if v == 0 {
                        return p.err(&vt, "state dimension must be positive");
                    }
                    n = Some(v);
                } else {
                    m = Some(v);
                }
            }
            "name" => {
                let vt = p.next();
                match vt.tok {
                    Tok::Ident(s) => name = Some(s),
                    _ => return p.err(&vt, "`name` must be an identifier"),
                }
            }
            k if k.starts_with('f') && k.len() > 1 && k[1..].bytes().all(|b| b.is_ascii_digit()) => {
                let (Some(nn), Some(mm)) = (n, m) else {
                    return p.err(&t, "header `n=<int> m=<int>` must precede the equations");
                };
                if equations.is_empty() {
                    equations = vec![None; nn];
                    p.n = nn;
                    p.m = mm;
                }
                let idx: usize = k[1..].parse().unwrap_or(0);
                if idx == 0 || idx > nn {
                    return Err(Error::dim(format!(
                        "equation `{k}` at line {} but n = {nn}",
                        t.line
                    )));
                }
                if equations[idx - 1].is_some() {
                    return p.err(&t, format!("duplicate equation `{k}`"));
                }
                equations[idx - 1] = Some(p.expr()?);
                let end = p.peek().clone();
                if !matches!(end.tok, Tok::Sep | Tok::Eof) {
                    return p.err(&end, format!("unexpected {}", describe(&end.tok)));
                }
            }
            _ => return p.err(&t, format!("unknown statement `{key}`")),
        }
    }

    let (Some(n), Some(m)) = (n, m) else {
        return Err(Error::Syntax {
            line: 1,
            column: 1,
            message: "missing header `n=<int> m=<int>`".into(),
        });
    };
    let found = equations.iter().filter(|e| e.is_some()).count();
    if found != n {
        return Err(Error::dim(format!("declared n = {n} but found {found} equation(s)")));
    }
    let exprs = equations.into_iter().map(|e| e.expect("counted above")).collect();
    SystemDef::new(name.unwrap_or_else(|| "system".to_string()), n, m, exprs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sontag_one_liner() {
        let s = parse_system("n=1 m=1; f1 = x1 + u1^3").unwrap();
        assert_eq!((s.n(), s.m()), (1, 1));
        assert_eq!(
            s.exprs()[0],
            Expr::add(Expr::X(0), Expr::Pow(Box::new(Expr::U(0)), 3))
        );
    }

    #[test]
    fn field_independent_of_control() {
        let s = parse_system("n=1 m=1; f1 = x1").unwrap();
        assert_eq!(s.exprs()[0], Expr::X(0));
    }

    #[test]
    fn coron_system() {
        let s = parse_system(
            "n=3 m=1; f1=x2^3 - 3*(x1-x3)^2*x2; f2=(x1-x3)^3 - 3*(x1-x3)^2*x2; f3=u1",
        )
        .unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.exprs()[2], Expr::U(0));
    }

    #[test]
    fn name_and_comments() {
        let s = parse_system("# demo\nn=1 m=1\nname=demo_1\nf1 = -x1 + u1 # stable\n").unwrap();
        assert_eq!(s.name(), "demo_1");
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = parse_expr("-x1^2", 1, 0).unwrap();
        assert_eq!(e.eval::<f64>(&[3.0], &[]).unwrap(), -9.0);
        let e = parse_expr("x1^-2", 1, 0).unwrap();
        assert_eq!(e.eval::<f64>(&[2.0], &[]).unwrap(), 0.25);
        let e = parse_expr("2*-x1", 1, 0).unwrap();
        assert_eq!(e.eval::<f64>(&[2.0], &[]).unwrap(), -4.0);
    }

    #[test]
    fn numbers_with_exponents() {
        let e = parse_expr("1.5e-3 + 2E2 + .5", 0, 0).unwrap();
        assert_eq!(e.eval::<f64>(&[], &[]).unwrap(), 1.5e-3 + 200.0 + 0.5);
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_system("n=1 m=1\nf1 = x1 + * u1") {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 11)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_system("n=1 m=1; f1 = x1 ^ 1.5"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_system("n=1 m=1; f1 = tan(x1)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_system("n=1 m=1; f1 = (x1"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_system("f1 = x1"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(parse_system("n=2 m=1; f1 = x1"), Err(Error::Dimension(_))));
        assert!(matches!(parse_system("n=1 m=1; f1 = x1; f2 = x1"), Err(Error::Dimension(_))));
    }

    #[test]
    fn unknown_variable_index() {
        match parse_system("n=1 m=1\nf1 = x2 + u1") {
            Err(Error::UnknownVariable { name, line, column }) => {
                assert_eq!((name.as_str(), line, column), ("x2", 2, 6))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_system("n=1 m=1; f1 = u2"), Err(Error::UnknownVariable { .. })));
        assert!(matches!(parse_system("n=1 m=1; f1 = y1"), Err(Error::UnknownVariable { .. })));
        assert!(matches!(parse_system("n=1 m=1; f1 = x0"), Err(Error::UnknownVariable { .. })));
    }
}
