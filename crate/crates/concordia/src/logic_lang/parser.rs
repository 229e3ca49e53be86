use super::{Atom, LogicError, Rule, SumConstraint, Term, Theory, Weight};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Number(f64),
    ColonColon,
    Colon,
    Arrow,
    BiArrow,
    Amp,
    LParen,
    RParen,
    Comma,
    Dot,
    Eq,
    Plus,
    Slash,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(source: &str) -> Result<Vec<Spanned>, LogicError> {
    let mut out = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let col = i + 1;
            let c = chars[i];
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    i += 1;
                }
                '(' => {
                    out.push(Spanned { tok: Tok::LParen, line: line_no, col });
                    i += 1;
                }
                ')' => {
                    out.push(Spanned { tok: Tok::RParen, line: line_no, col });
                    i += 1;
                }
                ',' => {
                    out.push(Spanned { tok: Tok::Comma, line: line_no, col });
                    i += 1;
                }
                '.' => {
                    out.push(Spanned { tok: Tok::Dot, line: line_no, col });
                    i += 1;
                }
                '=' => {
                    out.push(Spanned { tok: Tok::Eq, line: line_no, col });
                    i += 1;
                }
                '+' => {
                    out.push(Spanned { tok: Tok::Plus, line: line_no, col });
                    i += 1;
                }
                '/' => {
                    out.push(Spanned { tok: Tok::Slash, line: line_no, col });
                    i += 1;
                }
                '&' => {
                    out.push(Spanned { tok: Tok::Amp, line: line_no, col });
                    i += 1;
                }
                ':' => {
                    if chars.get(i + 1) == Some(&':') {
                        out.push(Spanned { tok: Tok::ColonColon, line: line_no, col });
                        i += 2;
                    } else {
                        out.push(Spanned { tok: Tok::Colon, line: line_no, col });
                        i += 1;
                    }
                }
                '-' => {
                    if chars.get(i + 1) == Some(&'>') {
                        out.push(Spanned { tok: Tok::Arrow, line: line_no, col });
                        i += 2;
                    } else {
                        return Err(LogicError::Syntax {
                            line: line_no,
                            col,
                            msg: "expected '->'".into(),
                        });
                    }
                }
                '<' => {
                    if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
                        out.push(Spanned { tok: Tok::BiArrow, line: line_no, col });
                        i += 3;
                    } else {
                        return Err(LogicError::Syntax {
                            line: line_no,
                            col,
                            msg: "expected '<->'".into(),
                        });
                    }
                }
                '"' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < chars.len() && chars[j] != '"' {
                        j += 1;
                    }
                    if j == chars.len() {
                        return Err(LogicError::Syntax {
                            line: line_no,
                            col,
                            msg: "unterminated string constant".into(),
                        });
                    }
                    out.push(Spanned {
                        tok: Tok::Quoted(chars[start..j].iter().collect()),
                        line: line_no,
                        col,
                    });
                    i = j + 1;
                }
                c if c.is_ascii_digit() => {
                    let mut j = i;
                    while j < chars.len()
                        && (chars[j].is_ascii_digit()
                            || chars[j] == '.' && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit())
                            || chars[j] == 'e'
                            || chars[j] == 'E'
                            || (chars[j] == '-' || chars[j] == '+')
                                && matches!(chars.get(j.wrapping_sub(1)), Some('e') | Some('E')))
                    {
                        j += 1;
                    }
                    let text: String = chars[i..j].iter().collect();
                    let value: f64 = text.parse().map_err(|_| LogicError::Syntax {
                        line: line_no,
                        col,
                        msg: format!("bad number literal '{text}'"),
                    })?;
                    out.push(Spanned { tok: Tok::Number(value), line: line_no, col });
                    i = j;
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut j = i;
                    while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                        j += 1;
                    }
                    out.push(Spanned {
                        tok: Tok::Ident(chars[i..j].iter().collect()),
                        line: line_no,
                        col,
                    });
                    i = j;
                }
                other => {
                    return Err(LogicError::Syntax {
                        line: line_no,
                        col,
                        msg: format!("unexpected character '{other}'"),
                    });
                }
            }
        }
    }
    Ok(out)
}

struct Parser<'a, T> {
    toks: &'a [Spanned],
    pos: usize,
    theory: Theory<T>,
}

impl<'a, T: Real> Parser<'a, T> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> LogicError {
        let (line, col) = self.here();
        LogicError::Syntax { line, col, msg: msg.into() }
    }

    fn next(&mut self, expect: &str) -> Result<Spanned, LogicError> {
        let sp = self.toks.get(self.pos).cloned().ok_or_else(|| self.err(format!("expected {expect}, found end of input")))?;
        self.pos += 1;
        Ok(sp)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Spanned, LogicError> {
        let sp = self.next(what)?;
        if sp.tok != tok {
            return Err(LogicError::Syntax {
                line: sp.line,
                col: sp.col,
                msg: format!("expected {what}"),
            });
        }
        Ok(sp)
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize, usize), LogicError> {
        let sp = self.next(what)?;
        match sp.tok {
            Tok::Ident(name) => Ok((name, sp.line, sp.col)),
            _ => Err(LogicError::Syntax {
                line: sp.line,
                col: sp.col,
                msg: format!("expected {what}"),
            }),
        }
    }

    fn term(&mut self) -> Result<Term, LogicError> {
        let sp = self.next("a term")?;
        match sp.tok {
            Tok::Ident(name) => {
                if name.chars().next().is_some_and(char::is_uppercase) {
                    Ok(Term::Variable(name))
                } else {
                    Ok(Term::Constant(name))
                }
            }
            Tok::Quoted(name) => Ok(Term::Constant(name)),
            Tok::Number(v) => Ok(Term::Constant(format_const_number(v))),
            _ => Err(LogicError::Syntax {
                line: sp.line,
                col: sp.col,
                msg: "expected a term".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<(Atom, usize, usize), LogicError> {
        let (predicate, line, col) = self.ident("a predicate name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        loop {
            args.push(self.term()?);
            let sp = self.next("',' or ')'")?;
            match sp.tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                _ => {
                    return Err(LogicError::Syntax {
                        line: sp.line,
                        col: sp.col,
                        msg: "expected ',' or ')'".into(),
                    })
                }
            }
        }
        Ok((Atom { predicate, args }, line, col))
    }

    fn register_atom(&mut self, atom: &Atom, line: usize, col: usize) -> Result<(), LogicError> {
        let expected = self.theory.declare(&atom.predicate, atom.args.len(), false, false);
        if expected != atom.args.len() {
            return Err(LogicError::ArityMismatch {
                line,
                col,
                predicate: atom.predicate.clone(),
                expected,
                found: atom.args.len(),
            });
        }
        Ok(())
    }

    fn check_safety(&self, rule: &Rule<T>, line: usize, col: usize) -> Result<(), LogicError> {
        for var in rule.conclusion.variables() {
            if !rule.premise.iter().any(|a| a.variables().any(|v| v == var)) {
                return Err(LogicError::UnsafeRule { line, col, variable: var.to_string() });
            }
        }
        Ok(())
    }

    /// `pred Name/Arity [closed] .`
    fn decl(&mut self) -> Result<(), LogicError> {
        let (name, line, col) = self.ident("a predicate name")?;
        self.expect(Tok::Slash, "'/'")?;
        let sp = self.next("an arity")?;
        let arity = match sp.tok {
            Tok::Number(n) if n >= 0.0 && n.fract() == 0.0 => n as usize,
            _ => {
                return Err(LogicError::Syntax {
                    line: sp.line,
                    col: sp.col,
                    msg: "expected a nonnegative integer arity".into(),
                })
            }
        };
        let mut closed = false;
        if let Some(Spanned { tok: Tok::Ident(kw), .. }) = self.peek() {
            if kw == "closed" {
                closed = true;
                self.pos += 1;
            } else if kw == "open" {
                self.pos += 1;
            }
        }
        self.expect(Tok::Dot, "'.'")?;
        if self.theory.predicate(&name).is_some() {
            return Err(LogicError::Syntax {
                line,
                col,
                msg: format!("predicate {name} declared twice"),
            });
        }
        self.theory.predicates.push(super::PredicateDecl { name, arity, closed, explicit: true });
        Ok(())
    }

    /// `constraint: Pred(t, ..., +Var, ...) = target .`
    fn constraint(&mut self) -> Result<(), LogicError> {
        self.expect(Tok::Colon, "':' after 'constraint'")?;
        let (predicate, line, col) = self.ident("a predicate name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut fixed_args = Vec::new();
        let mut summed_position = None;
        let mut position = 0usize;
        loop {
            if matches!(self.peek().map(|s| &s.tok), Some(Tok::Plus)) {
                self.pos += 1;
                let t = self.term()?;
                if !t.is_variable() {
                    return Err(self.err("the summed argument must be a variable"));
                }
                if summed_position.replace(position).is_some() {
                    return Err(LogicError::Syntax {
                        line,
                        col,
                        msg: "exactly one summed (+) argument is allowed".into(),
                    });
                }
            } else {
                fixed_args.push(self.term()?);
            }
            position += 1;
            let sp = self.next("',' or ')'")?;
            match sp.tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                _ => {
                    return Err(LogicError::Syntax {
                        line: sp.line,
                        col: sp.col,
                        msg: "expected ',' or ')'".into(),
                    })
                }
            }
        }
        let summed_position = summed_position.ok_or(LogicError::Syntax {
            line,
            col,
            msg: "constraint needs exactly one summed (+) argument".into(),
        })?;
        self.expect(Tok::Eq, "'='")?;
        let sp = self.next("a target value")?;
        let target = match sp.tok {
            Tok::Number(v) => v,
            _ => {
                return Err(LogicError::Syntax {
                    line: sp.line,
                    col: sp.col,
                    msg: "expected a numeric target".into(),
                })
            }
        };
        if target <= 0.0 {
            return Err(LogicError::NonPositiveTarget { line: sp.line, col: sp.col, target });
        }
        self.expect(Tok::Dot, "'.'")?;
        let arity = fixed_args.len() + 1;
        let declared = self.theory.declare(&predicate, arity, false, false);
        if declared != arity {
            return Err(LogicError::ArityMismatch {
                line,
                col,
                predicate,
                expected: declared,
                found: arity,
            });
        }
        self.theory.constraints.push(SumConstraint {
            predicate,
            fixed_args,
            summed_position,
            target: T::of(target),
        });
        Ok(())
    }

    /// `weight :: atoms .` with `weight` one of a number, `LEARN`, `hard`.
    fn rule(&mut self) -> Result<(), LogicError> {
        let sp = self.next("a rule weight")?;
        let (weight, hard) = match &sp.tok {
            Tok::Number(v) => {
                if *v < 0.0 {
                    return Err(LogicError::NegativeWeight {
                        line: sp.line,
                        col: sp.col,
                        weight: *v,
                    });
                }
                (Weight::Fixed(T::of(*v)), false)
            }
            Tok::Ident(kw) if kw == "LEARN" => (Weight::Learnable, false),
            Tok::Ident(kw) if kw == "hard" => (Weight::Fixed(T::zero()), true),
            _ => {
                return Err(LogicError::Syntax {
                    line: sp.line,
                    col: sp.col,
                    msg: "expected a weight, 'LEARN', 'hard', 'pred' or 'constraint'".into(),
                })
            }
        };
        let (line, col) = (sp.line, sp.col);
        self.expect(Tok::ColonColon, "'::'")?;

        let (first, aline, acol) = self.atom()?;
        self.register_atom(&first, aline, acol)?;
        let mut premise = vec![first];
        loop {
            let sp = self.next("'&', '->', '<->' or '.'")?;
            match sp.tok {
                Tok::Amp => {
                    let (a, l, c) = self.atom()?;
                    self.register_atom(&a, l, c)?;
                    premise.push(a);
                }
                Tok::Arrow => {
                    let (conclusion, l, c) = self.atom()?;
                    self.register_atom(&conclusion, l, c)?;
                    self.expect(Tok::Dot, "'.'")?;
                    let tie = self.theory.rules.len();
                    let rule = Rule { weight, premise, conclusion, hard, tie };
                    self.check_safety(&rule, line, col)?;
                    self.theory.rules.push(rule);
                    return Ok(());
                }
                Tok::BiArrow => {
                    if premise.len() != 1 {
                        return Err(LogicError::Syntax {
                            line: sp.line,
                            col: sp.col,
                            msg: "'<->' takes a single atom on each side".into(),
                        });
                    }
                    let (rhs, l, c) = self.atom()?;
                    self.register_atom(&rhs, l, c)?;
                    self.expect(Tok::Dot, "'.'")?;
                    let lhs = premise.pop().expect("checked above");
                    let tie = self.theory.rules.len();
                    // No safety check: both halves ground over the union of
                    // the pair's variables.
                    let forward = Rule {
                        weight,
                        premise: vec![lhs.clone()],
                        conclusion: rhs.clone(),
                        hard,
                        tie,
                    };
                    let backward =
                        Rule { weight, premise: vec![rhs], conclusion: lhs, hard, tie };
                    self.theory.rules.push(forward);
                    self.theory.rules.push(backward);
                    return Ok(());
                }
                Tok::Dot => {
                    // Empty-premise rule: `w :: Atom .` asserts the atom.
                    if premise.len() != 1 {
                        return Err(LogicError::Syntax {
                            line: sp.line,
                            col: sp.col,
                            msg: "expected '->' before '.'".into(),
                        });
                    }
                    let conclusion = premise.pop().expect("checked above");
                    let tie = self.theory.rules.len();
                    let rule = Rule { weight, premise: Vec::new(), conclusion, hard, tie };
                    self.check_safety(&rule, line, col)?;
                    self.theory.rules.push(rule);
                    return Ok(());
                }
                _ => {
                    return Err(LogicError::Syntax {
                        line: sp.line,
                        col: sp.col,
                        msg: "expected '&', '->', '<->' or '.'".into(),
                    })
                }
            }
        }
    }

    fn statement(&mut self) -> Result<(), LogicError> {
        match self.peek().map(|s| s.tok.clone()) {
            Some(Tok::Ident(kw)) if kw == "pred" => {
                self.pos += 1;
                self.decl()
            }
            Some(Tok::Ident(kw)) if kw == "constraint" => {
                self.pos += 1;
                self.constraint()
            }
            _ => self.rule(),
        }
    }
}

/// Parses a theory from its textual form. The output of [`format_theory`]
/// re-parses to a structurally identical theory.
pub fn parse_theory<T: Real>(source: &str) -> Result<Theory<T>, LogicError> {
    let toks = lex(source)?;
    let mut parser = Parser { toks: &toks, pos: 0, theory: Theory::default() };
    while !parser.at_end() {
        parser.statement()?;
    }
    Ok(parser.theory)
}

pub(super) fn format_const_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}
