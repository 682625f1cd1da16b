use std::collections::BTreeMap;
use std::fmt::{self, Write};

use crate::error::{Error, Result};

/// Deepest selection nesting the parser accepts.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    String(String),
    Int(i64),
    Float(f64),
    Boolean(bool),
}

impl Literal {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Literal::String(s) => s.clone().into(),
            Literal::Int(i) => (*i).into(),
            Literal::Float(f) => (*f).into(),
            Literal::Boolean(b) => (*b).into(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::String(s) => f.write_str(&serde_json::to_string(s).expect("string encodes")),
            Literal::Int(i) => write!(f, "{i}"),
            // Debug keeps a fractional part or exponent, so the literal stays a float.
            Literal::Float(x) => write!(f, "{x:?}"),
            Literal::Boolean(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub name: String,
    pub args: BTreeMap<String, Literal>,
    pub children: Vec<Selection>,
}

impl Selection {
    pub fn leaf(name: impl Into<String>) -> Selection {
        Selection {
            name: name.into(),
            args: BTreeMap::new(),
            children: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub name: Option<String>,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Punct(char),
    Name(String),
    Str(String),
    Int(i64),
    Float(f64),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Punct(c) => write!(f, "{c:?}"),
            Tok::Name(n) => write!(f, "name {n:?}"),
            Tok::Str(_) => f.write_str("string"),
            Tok::Int(_) | Tok::Float(_) => f.write_str("number"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

fn is_name_start(c: char) -> bool {
    c == '_' || c.is_ascii_alphabetic()
}

fn is_name_continue(c: char) -> bool {
    c == '_' || c.is_ascii_alphanumeric()
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn err<T>(&self, line: usize, column: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line,
            column,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        match c {
            '\n' => {
                self.line += 1;
                self.column = 1;
            }
            // \r\n counts as one line break.
            '\r' => {
                if self.chars.peek() != Some(&'\n') {
                    self.line += 1;
                    self.column = 1;
                }
            }
            _ => self.column += 1,
        }
        Some(c)
    }

    fn skip_ignored(&mut self) {
        while let Some(&c) = self.chars.peek() {
            match c {
                ' ' | '\t' | '\n' | '\r' | ',' | '\u{feff}' => {
                    self.bump();
                }
                '#' => {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' || c == '\r' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    /// Next token with the position where it starts.
    fn next(&mut self) -> Result<(Tok, usize, usize)> {
        self.skip_ignored();
        let (line, column) = (self.line, self.column);
        let Some(&c) = self.chars.peek() else {
            return Ok((Tok::Eof, line, column));
        };
        let tok = match c {
            '{' | '}' | '(' | ')' | ':' => {
                self.bump();
                Tok::Punct(c)
            }
            '"' => self.string(line, column)?,
            '-' | '0'..='9' => self.number(line, column)?,
            c if is_name_start(c) => {
                let mut name = String::new();
                while let Some(&c) = self.chars.peek() {
                    if !is_name_continue(c) {
                        break;
                    }
                    name.push(c);
                    self.bump();
                }
                Tok::Name(name)
            }
            other => return self.err(line, column, format!("unexpected character {other:?}")),
        };
        Ok((tok, line, column))
    }

    fn hex4(&mut self) -> Result<u32> {
        let (line, column) = (self.line, self.column);
        let mut v = 0u32;
        for _ in 0..4 {
            match self.bump().and_then(|c| c.to_digit(16)) {
                Some(d) => v = v * 16 + d,
                None => return self.err(line, column, "bad \\u escape"),
            }
        }
        Ok(v)
    }

    fn string(&mut self, line: usize, column: usize) -> Result<Tok> {
        self.bump();
        let mut s = String::new();
        loop {
            let (l, c) = (self.line, self.column);
            match self.bump() {
                None | Some('\n') | Some('\r') => return self.err(line, column, "unterminated string"),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => {
                    let ch = match self.bump() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('/') => '/',
                        Some('b') => '\u{8}',
                        Some('f') => '\u{c}',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('t') => '\t',
                        Some('u') => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                if self.bump() != Some('\\') || self.bump() != Some('u') {
                                    return self.err(l, c, "unpaired surrogate escape");
                                }
                                let lo = self.hex4()?;
                                if !(0xDC00..0xE000).contains(&lo) {
                                    return self.err(l, c, "unpaired surrogate escape");
                                }
                                0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                            } else {
                                hi
                            };
                            match char::from_u32(code) {
                                Some(ch) => ch,
                                None => return self.err(l, c, "invalid unicode escape"),
                            }
                        }
                        _ => return self.err(l, c, "unknown escape sequence"),
                    };
                    s.push(ch);
                }
                Some(ch) if ch < ' ' && ch != '\t' => return self.err(l, c, "control character in string"),
                Some(ch) => s.push(ch),
            }
        }
    }

    fn digits(&mut self, out: &mut String) -> usize {
        let mut n = 0;
        while let Some(&c) = self.chars.peek() {
            if !c.is_ascii_digit() {
                break;
            }
            out.push(c);
            self.bump();
            n += 1;
        }
        n
    }

    fn number(&mut self, line: usize, column: usize) -> Result<Tok> {
        let mut text = String::new();
        if self.chars.peek() == Some(&'-') {
            text.push('-');
            self.bump();
        }
        let int_start = text.len();
        if self.digits(&mut text) == 0 {
            return self.err(line, column, "expected digits");
        }
        if text[int_start..].len() > 1 && text[int_start..].starts_with('0') {
            return self.err(line, column, "leading zero in number");
        }
        let mut float = false;
        if self.chars.peek() == Some(&'.') {
            float = true;
            text.push('.');
            self.bump();
            if self.digits(&mut text) == 0 {
                return self.err(line, column, "expected digits after '.'");
            }
        }
        if matches!(self.chars.peek(), Some('e' | 'E')) {
            float = true;
            text.push('e');
            self.bump();
            if let Some(&s @ ('+' | '-')) = self.chars.peek() {
                text.push(s);
                self.bump();
            }
            if self.digits(&mut text) == 0 {
                return self.err(line, column, "expected exponent digits");
            }
        }
        if self.chars.peek().is_some_and(|&c| is_name_start(c) || c == '.') {
            return self.err(line, column, "invalid number");
        }
        if float {
            match text.parse::<f64>() {
                Ok(f) if f.is_finite() => Ok(Tok::Float(f)),
                _ => self.err(line, column, "float out of range"),
            }
        } else {
            text.parse::<i64>()
                .map(Tok::Int)
                .or_else(|_| self.err(line, column, "integer out of range"))
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    line: usize,
    column: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(text);
        let (tok, line, column) = lexer.next()?;
        Ok(Parser {
            lexer,
            tok,
            line,
            column,
        })
    }

    fn advance(&mut self) -> Result<Tok> {
        let (tok, line, column) = self.lexer.next()?;
        self.line = line;
        self.column = column;
        Ok(std::mem::replace(&mut self.tok, tok))
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.tok == Tok::Punct(c) {
            self.advance()?;
            Ok(())
        } else {
            self.fail(format!("expected {c:?}, found {}", self.tok))
        }
    }

    fn name(&mut self) -> Result<String> {
        match &self.tok {
            Tok::Name(_) => match self.advance()? {
                Tok::Name(n) => Ok(n),
                _ => unreachable!(),
            },
            other => self.fail(format!("expected a name, found {other}")),
        }
    }

    fn document(&mut self) -> Result<QueryAst> {
        let mut name = None;
        match &self.tok {
            Tok::Name(n) if n == "query" => {
                self.advance()?;
                if matches!(self.tok, Tok::Name(_)) {
                    name = Some(self.name()?);
                }
            }
            Tok::Name(n) => {
                let msg = format!("unsupported operation {n:?}; only queries are accepted");
                return self.fail(msg);
            }
            _ => {}
        }
        let selections = self.selection_set(1)?;
        if self.tok != Tok::Eof {
            return self.fail(format!("unexpected {} after the query", self.tok));
        }
        Ok(QueryAst { name, selections })
    }

    fn selection_set(&mut self, depth: usize) -> Result<Vec<Selection>> {
        if depth > MAX_DEPTH {
            return self.fail(format!("selections nested deeper than {MAX_DEPTH}"));
        }
        self.expect('{')?;
        if self.tok == Tok::Punct('}') {
            return self.fail("empty selection set");
        }
        let mut out = Vec::new();
        while self.tok != Tok::Punct('}') {
            out.push(self.selection(depth)?);
        }
        self.advance()?;
        Ok(out)
    }

    fn selection(&mut self, depth: usize) -> Result<Selection> {
        let name = self.name()?;
        let mut args = BTreeMap::new();
        if self.tok == Tok::Punct('(') {
            self.advance()?;
            if self.tok == Tok::Punct(')') {
                return self.fail("empty argument list");
            }
            while self.tok != Tok::Punct(')') {
                let (line, column) = (self.line, self.column);
                let arg = self.name()?;
                self.expect(':')?;
                let value = self.literal()?;
                if args.insert(arg.clone(), value).is_some() {
                    return Err(Error::Syntax {
                        line,
                        column,
                        message: format!("duplicate argument {arg:?}"),
                    });
                }
            }
            self.advance()?;
        }
        let children = if self.tok == Tok::Punct('{') {
            self.selection_set(depth + 1)?
        } else {
            Vec::new()
        };
        Ok(Selection { name, args, children })
    }

    fn literal(&mut self) -> Result<Literal> {
        let lit = match &self.tok {
            Tok::Str(_) | Tok::Int(_) | Tok::Float(_) => match self.advance()? {
                Tok::Str(s) => Literal::String(s),
                Tok::Int(i) => Literal::Int(i),
                Tok::Float(f) => Literal::Float(f),
                _ => unreachable!(),
            },
            Tok::Name(n) if n == "true" || n == "false" => {
                let b = n == "true";
                self.advance()?;
                Literal::Boolean(b)
            }
            other => return self.fail(format!("expected a scalar literal, found {other}")),
        };
        Ok(lit)
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst> {
    Parser::new(text)?.document()
}

fn print_selections(out: &mut String, sels: &[Selection]) {
    out.push_str("{ ");
    for s in sels {
        out.push_str(&s.name);
        if !s.args.is_empty() {
            out.push('(');
            for (i, (k, v)) in s.args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{k}: {v}");
            }
            out.push(')');
        }
        out.push(' ');
        if !s.children.is_empty() {
            print_selections(out, &s.children);
            out.push(' ');
        }
    }
    out.push('}');
}

/// Render an AST back to query text on a single line.
pub fn print_query(ast: &QueryAst) -> String {
    let mut out = String::new();
    if let Some(n) = &ast.name {
        let _ = write!(out, "query {n} ");
    }
    print_selections(&mut out, &ast.selections);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syntax(text: &str) -> (usize, usize, String) {
        match parse_query(text) {
            Err(Error::Syntax { line, column, message }) => (line, column, message),
            other => panic!("expected a syntax error, got {other:?}"),
        }
    }

    #[test]
    fn parses_the_demographic_example() {
        let ast = parse_query(r#"{ demographic(first: 10, gender: "female") { gender subjects { submitter_id } } }"#)
            .unwrap();
        assert_eq!(ast.selections.len(), 1);
        let root = &ast.selections[0];
        assert_eq!(root.name, "demographic");
        assert_eq!(root.args["first"], Literal::Int(10));
        assert_eq!(root.args["gender"], Literal::String("female".into()));
        assert_eq!(root.children.len(), 2);
        assert_eq!(root.children[1].children, vec![Selection::leaf("submitter_id")]);
    }

    #[test]
    fn empty_selection_set() {
        assert_eq!(syntax("{}").2, "empty selection set");
        assert_eq!(syntax("{ a {} }").2, "empty selection set");
    }

    #[test]
    fn keyword_comments_commas_and_literals() {
        let ast = parse_query("query Named {\n  # comment\n  a(x: -1.5e2, y: true, z: \"q\\\"\\u00e9\", w: 0), b\n}")
            .unwrap();
        assert_eq!(ast.name.as_deref(), Some("Named"));
        let a = &ast.selections[0];
        assert_eq!(a.args["x"], Literal::Float(-150.0));
        assert_eq!(a.args["y"], Literal::Boolean(true));
        assert_eq!(a.args["z"], Literal::String("q\"é".into()));
        assert_eq!(a.args["w"], Literal::Int(0));
        assert_eq!(ast.selections[1], Selection::leaf("b"));
        assert!(parse_query("query { a }").unwrap().name.is_none());
    }

    #[test]
    fn errors_carry_positions() {
        let (line, column, _) = syntax("{\n  a(x: )\n}");
        assert_eq!((line, column), (2, 8));
        assert_eq!(syntax("{ a } }").1, 7);
        assert!(syntax("mutation { a }").2.contains("only queries"));
        assert!(syntax(r#"{ a(x: 1, x: 2) }"#).2.contains("duplicate"));
        assert!(syntax("{ a(x: 01) }").2.contains("leading zero"));
        assert!(syntax("{ a(x: 99999999999999999999) }").2.contains("out of range"));
        assert!(syntax("{ a(x: \"open) }").2.contains("unterminated"));
        assert!(syntax("{ a(x: $v) }").2.contains("unexpected character"));
        assert_eq!(syntax("").2, "expected '{', found end of input");
    }

    #[test]
    fn depth_limit() {
        let ok = format!("{}a{}", "{ a ".repeat(MAX_DEPTH - 1) + "{ ", " }".repeat(MAX_DEPTH));
        assert!(parse_query(&ok).is_ok());
        let deep = format!("{}a{}", "{ a ".repeat(MAX_DEPTH) + "{ ", " }".repeat(MAX_DEPTH + 1));
        assert!(syntax(&deep).2.contains("nested deeper"));
    }

    fn name() -> impl Strategy<Value = String> {
        "[_a-zA-Z][_a-zA-Z0-9]{0,8}".prop_filter("keyword", |n| n != "true" && n != "false" && n != "query")
    }

    fn literal() -> impl Strategy<Value = Literal> {
        prop_oneof![
            any::<String>().prop_map(Literal::String),
            any::<i64>().prop_map(Literal::Int),
            any::<f64>()
                .prop_filter("finite", |f| f.is_finite())
                .prop_map(Literal::Float),
            any::<bool>().prop_map(Literal::Boolean),
        ]
    }

    fn selection() -> impl Strategy<Value = Selection> {
        let leaf = (name(), prop::collection::btree_map(name(), literal(), 0..3)).prop_map(|(name, args)| Selection {
            name,
            args,
            children: vec![],
        });
        leaf.prop_recursive(4, 40, 4, |inner| {
            (
                name(),
                prop::collection::btree_map(name(), literal(), 0..3),
                prop::collection::vec(inner, 1..4),
            )
                .prop_map(|(name, args, children)| Selection { name, args, children })
        })
    }

    pub(crate) fn query() -> impl Strategy<Value = QueryAst> {
        (prop::option::of(name()), prop::collection::vec(selection(), 1..4))
            .prop_map(|(name, selections)| QueryAst { name, selections })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn print_parse_round_trip(ast in query()) {
            let text = print_query(&ast);
            prop_assert_eq!(parse_query(&text).unwrap(), ast);
        }
    }

    proptest! {
        #[test]
        fn parser_is_total_on_arbitrary_text(text in ".{0,512}") {
            let _ = parse_query(&text);
        }

        #[test]
        fn parser_is_total_on_mangled_queries(ast in query(), cut in any::<prop::sample::Index>(), junk in "[{}():\",#a-z0-9 .\\-\\\\]{0,6}") {
            let text = print_query(&ast);
            let chars: Vec<char> = text.chars().collect();
            let at = cut.index(chars.len() + 1);
            let mangled: String = chars[..at].iter().chain(junk.chars().collect::<Vec<_>>().iter()).chain(chars[at..].iter()).collect();
            let _ = parse_query(&mangled);
        }
    }

    #[test]
    fn large_input_does_not_crash() {
        let big = "{ ".to_owned() + &"field(a: \"x\") ".repeat(4000) + "}";
        assert!(big.len() <= 64 * 1024);
        assert!(parse_query(&big).is_ok());
        let nested = "{ a ".repeat(20_000);
        assert!(parse_query(&nested).is_err());
    }
}
