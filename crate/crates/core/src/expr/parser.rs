//! Tokenizer and recursive-descent parser for the expression language.
//!
//! Precedence, loosest first: `if/then/else`, `or`, `and`, `not`,
//! comparisons (non-chaining), `+ -`, `* / %`, unary `-`.

use std::sync::Arc;

use thiserror::Error;

use super::ast::{BinaryOp, Expression, Function, Node, Scope, UnaryOp, VarRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity { name: String, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at line {line}, column {column}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Str(String),
    Ident(String),
    Dot,
    Comma,
    LParen,
    RParen,
    Op(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(v) => format!("number {v}"),
            Tok::Str(_) => "string literal".into(),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Dot => "`.`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Op(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(msg: impl Into<String>, line: usize, column: usize) -> ParseError {
    ParseError { kind: ParseErrorKind::Syntax(msg.into()), line, column }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
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
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| syntax(format!("invalid number `{text}`"), tl, tc))?;
            if !v.is_finite() {
                return Err(syntax(format!("number `{text}` out of range"), tl, tc));
            }
            Tok::Number(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(syntax("unterminated string literal", tl, tc)),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = match chars.get(i + 1) {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            _ => {
                                return Err(syntax(
                                    "invalid escape in string literal",
                                    line,
                                    col + (i - start),
                                ))
                            }
                        };
                        s.push(esc);
                        i += 2;
                    }
                    Some('\n') => return Err(syntax("newline in string literal", tl, tc)),
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op2 = ["<=", ">=", "==", "!="].into_iter().find(|op| *op == two);
            if let Some(op) = op2 {
                i += 2;
                Tok::Op(op)
            } else {
                i += 1;
                match c {
                    '.' => Tok::Dot,
                    ',' => Tok::Comma,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '+' => Tok::Op("+"),
                    '-' => Tok::Op("-"),
                    '*' => Tok::Op("*"),
                    '/' => Tok::Op("/"),
                    '%' => Tok::Op("%"),
                    '<' => Tok::Op("<"),
                    '>' => Tok::Op(">"),
                    other => {
                        return Err(syntax(format!("unexpected character `{other}`"), tl, tc))
                    }
                }
            }
        };
        col += i - start;
        out.push(Token { tok, line: tl, column: tc });
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

const KEYWORDS: [&str; 8] = ["if", "then", "else", "and", "or", "not", "true", "false"];

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(&self.peek().tok, Tok::Op(s) if *s == op)
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        syntax(format!("expected {expected}, found {}", t.tok.describe()), t.line, t.column)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_keyword(kw) {
            self.advance();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        if self.is_keyword("if") {
            self.advance();
            let c = self.expr()?;
            self.expect_keyword("then")?;
            let a = self.expr()?;
            self.expect_keyword("else")?;
            let b = self.expr()?;
            return Ok(Node::cond(c, a, b));
        }
        self.or()
    }

    fn or(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.and()?;
        while self.is_keyword("or") {
            self.advance();
            let rhs = self.and()?;
            lhs = Node::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.not()?;
        while self.is_keyword("and") {
            self.advance();
            let rhs = self.not()?;
            lhs = Node::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Node, ParseError> {
        if self.is_keyword("not") {
            self.advance();
            let operand = self.not()?;
            return Ok(Node::unary(UnaryOp::Not, operand));
        }
        self.compare()
    }

    fn compare(&mut self) -> Result<Node, ParseError> {
        let lhs = self.additive()?;
        let op = match &self.peek().tok {
            Tok::Op("<") => BinaryOp::Lt,
            Tok::Op("<=") => BinaryOp::Le,
            Tok::Op(">") => BinaryOp::Gt,
            Tok::Op(">=") => BinaryOp::Ge,
            Tok::Op("==") => BinaryOp::Eq,
            Tok::Op("!=") => BinaryOp::Ne,
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.additive()?;
        if let Tok::Op(s) = &self.peek().tok {
            if ["<", "<=", ">", ">=", "==", "!="].contains(s) {
                let t = self.peek();
                return Err(syntax(
                    "comparisons cannot be chained; use `and`",
                    t.line,
                    t.column,
                ));
            }
        }
        Ok(Node::binary(op, lhs, rhs))
    }

    fn additive(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_op("+") {
                BinaryOp::Add
            } else if self.is_op("-") {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_op("*") {
                BinaryOp::Mul
            } else if self.is_op("/") {
                BinaryOp::Div
            } else if self.is_op("%") {
                BinaryOp::Rem
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.is_op("-") {
            self.advance();
            let operand = self.unary()?;
            return Ok(Node::unary(UnaryOp::Neg, operand));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(v) => {
                self.advance();
                Ok(Node::Number(v))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(Node::Text(Arc::from(s)))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                if self.peek().tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.advance();
                Ok(inner)
            }
            Tok::Ident(ref name) => match name.as_str() {
                "true" => {
                    self.advance();
                    Ok(Node::Bool(true))
                }
                "false" => {
                    self.advance();
                    Ok(Node::Bool(false))
                }
                "agent" | "model" => {
                    let scope = if name == "agent" { Scope::Agent } else { Scope::Model };
                    self.advance();
                    if self.peek().tok != Tok::Dot {
                        return Err(self.unexpected(&format!("`.` after `{name}`")));
                    }
                    self.advance();
                    match self.peek().tok.clone() {
                        Tok::Ident(var) if !KEYWORDS.contains(&var.as_str()) => {
                            self.advance();
                            Ok(Node::Var(VarRef { scope, name: var }))
                        }
                        _ => Err(self.unexpected(&format!("variable name after `{name}.`"))),
                    }
                }
                kw if KEYWORDS.contains(&kw) => Err(self.unexpected("an operand")),
                _ => {
                    self.advance();
                    if self.peek().tok != Tok::LParen {
                        return Err(syntax(
                            format!(
                                "bare identifier `{name}`; variables must be written \
                                 `agent.{name}` or `model.{name}`"
                            ),
                            t.line,
                            t.column,
                        ));
                    }
                    let func = Function::from_name(name).ok_or_else(|| ParseError {
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                        line: t.line,
                        column: t.column,
                    })?;
                    self.advance();
                    let mut args = Vec::new();
                    if self.peek().tok != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if self.peek().tok == Tok::Comma {
                                self.advance();
                            } else {
                                break;
                            }
                        }
                    }
                    if self.peek().tok != Tok::RParen {
                        return Err(self.unexpected("`,` or `)`"));
                    }
                    self.advance();
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            kind: ParseErrorKind::Arity {
                                name: func.name().to_string(),
                                expected: func.arity(),
                                found: args.len(),
                            },
                            line: t.line,
                            column: t.column,
                        });
                    }
                    Ok(Node::Call(func, args))
                }
            },
            _ => Err(self.unexpected("an operand")),
        }
    }
}

/// Parses expression source text.
pub fn parse_expression(source: &str) -> Result<Expression, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    if p.peek().tok == Tok::Eof {
        return Err(syntax("empty expression", 1, 1));
    }
    let root = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.unexpected("end of input"));
    }
    Ok(Expression::new(root, source))
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expression(s)
    }
}
