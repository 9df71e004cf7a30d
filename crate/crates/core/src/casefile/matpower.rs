//! Reader and writer for MATPOWER `.m` case files.
//!
//! Only the subset of MATLAB that published case files use is accepted:
//!
//! ```text
//! function mpc = case9          % wrapper line, ignored
//! mpc.version = '2';            % string assignments are skipped
//! mpc.baseMVA = 100;
//! mpc.bus = [ 1 3 0 0 ...;      % rows split by ';' or newlines,
//!             2 2 0 0 ... ];    % '...' continues a row
//! mpc.bus_name = { 'A'; 'B' };  % cell arrays are skipped
//! ```
//!
//! Any other field holding a numeric matrix (e.g. `mpc.gencost`) is parsed
//! for syntax and then ignored.

use std::fmt::Write as _;

use super::CaseData;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str,
    Punct(char),
    Newline,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_to_eol(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        let mut at_line_start = true;
        while let Some(c) = self.peek() {
            let (line, column) = (self.line, self.column);
            let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, column });
            match c {
                '\n' => {
                    self.bump();
                    push(&mut out, Tok::Newline);
                    at_line_start = true;
                    continue;
                }
                c if c.is_whitespace() => {
                    self.bump();
                    continue;
                }
                '%' => {
                    self.skip_to_eol();
                    continue;
                }
                '\'' => {
                    self.bump();
                    loop {
                        match self.bump() {
                            Some('\'') => {
                                // '' is an escaped quote inside a MATLAB string
                                if self.peek() == Some('\'') {
                                    self.bump();
                                } else {
                                    break;
                                }
                            }
                            Some('\n') | None => {
                                return Err(self.error(line, column, "unterminated string"))
                            }
                            Some(_) => {}
                        }
                    }
                    push(&mut out, Tok::Str);
                }
                '.' if self.starts_continuation() => {
                    // '...' joins the next line onto this one
                    self.skip_to_eol();
                    self.bump();
                    continue;
                }
                '.' if !self.second_is_digit() => {
                    self.bump();
                    push(&mut out, Tok::Punct('.'));
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let number = self.number(line, column)?;
                    push(&mut out, Tok::Number(number));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut ident = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            ident.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if at_line_start && ident == "function" {
                        self.skip_to_eol();
                        continue;
                    }
                    match ident.as_str() {
                        "Inf" | "inf" => push(&mut out, Tok::Number(f64::INFINITY)),
                        "NaN" | "nan" => push(&mut out, Tok::Number(f64::NAN)),
                        _ => push(&mut out, Tok::Ident(ident)),
                    }
                }
                '=' | ';' | '[' | ']' | '{' | '}' | ',' => {
                    self.bump();
                    push(&mut out, Tok::Punct(c));
                }
                other => {
                    return Err(self.error(line, column, format!("unexpected character '{other}'")))
                }
            }
            at_line_start = false;
        }
        Ok(out)
    }

    fn second_is_digit(&self) -> bool {
        let mut ahead = self.chars.clone();
        ahead.next();
        ahead.next().is_some_and(|c| c.is_ascii_digit())
    }

    fn starts_continuation(&self) -> bool {
        let mut ahead = self.chars.clone();
        ahead.next() == Some('.') && ahead.next() == Some('.') && ahead.next() == Some('.')
    }

    fn number(&mut self, line: usize, column: usize) -> Result<f64> {
        let mut text = String::new();
        if let Some(sign @ ('-' | '+')) = self.peek() {
            text.push(sign);
            self.bump();
            if matches!(self.peek(), Some('I' | 'i')) {
                let mut word = String::new();
                while let Some(c) = self.peek().filter(|c| c.is_ascii_alphabetic()) {
                    word.push(c);
                    self.bump();
                }
                return match word.as_str() {
                    "Inf" | "inf" if sign == '-' => Ok(f64::NEG_INFINITY),
                    "Inf" | "inf" => Ok(f64::INFINITY),
                    _ => Err(self.error(line, column, format!("invalid number '{sign}{word}'"))),
                };
            }
        }
        let mut prev = ' ';
        while let Some(c) = self.peek() {
            let accept = c.is_ascii_digit()
                || c == '.'
                || c == 'e'
                || c == 'E'
                || ((c == '-' || c == '+') && (prev == 'e' || prev == 'E'));
            if !accept {
                break;
            }
            text.push(c);
            prev = c;
            self.bump();
        }
        text.parse::<f64>()
            .map_err(|_| self.error(line, column, format!("invalid number '{text}'")))
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

#[derive(Default)]
struct Fields {
    base_mva: Option<f64>,
    bus: Option<Vec<Vec<f64>>>,
    gen: Option<Vec<Vec<f64>>>,
    branch: Option<Vec<Vec<f64>>>,
}

enum Value {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Other,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eof_error(&self) -> Error {
        let (line, column) = self
            .tokens
            .last()
            .map(|t| (t.line, t.column))
            .unwrap_or((1, 1));
        Error::Syntax {
            line,
            column,
            message: "unexpected end of input".into(),
        }
    }

    fn error_at(t: &Token, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Token {
                tok: Tok::Punct(p), ..
            }) if p == c => Ok(()),
            Some(t) => Err(Self::error_at(&t, format!("expected '{c}'"))),
            None => Err(self.eof_error()),
        }
    }

    fn parse(mut self) -> Result<Fields> {
        let mut fields = Fields::default();
        while let Some(t) = self.peek().cloned() {
            match &t.tok {
                Tok::Newline | Tok::Punct(';') | Tok::Punct(',') => {
                    self.pos += 1;
                }
                Tok::Ident(name) if name == "mpc" => {
                    self.pos += 1;
                    self.statement(&mut fields)?;
                }
                Tok::Ident(name) if name == "end" || name == "return" => {
                    self.pos += 1;
                }
                _ => return Err(Self::error_at(&t, "expected an 'mpc.<field> = ...' assignment")),
            }
        }
        Ok(fields)
    }

    fn statement(&mut self, fields: &mut Fields) -> Result<()> {
        let dot = self.next().ok_or_else(|| self.eof_error())?;
        let name = match (&dot.tok, self.next()) {
            (
                Tok::Punct('.'),
                Some(Token {
                    tok: Tok::Ident(n), ..
                }),
            ) => n,
            _ => return Err(Self::error_at(&dot, "expected 'mpc.<field>'")),
        };
        self.expect_punct('=')?;
        let value_token = self.peek().cloned().ok_or_else(|| self.eof_error())?;
        let value = self.value()?;
        match (name.as_str(), value) {
            ("baseMVA", Value::Scalar(v)) => fields.base_mva = Some(v),
            ("baseMVA", _) => return Err(Self::error_at(&value_token, "baseMVA must be a scalar")),
            ("bus", Value::Matrix(m)) => fields.bus = Some(m),
            ("gen", Value::Matrix(m)) => fields.gen = Some(m),
            ("branch", Value::Matrix(m)) => fields.branch = Some(m),
            ("bus" | "gen" | "branch", _) => {
                return Err(Self::error_at(&value_token, format!("mpc.{name} must be a matrix")))
            }
            _ => {}
        }
        Ok(())
    }

    fn value(&mut self) -> Result<Value> {
        let t = self.next().ok_or_else(|| self.eof_error())?;
        match t.tok {
            Tok::Number(v) => Ok(Value::Scalar(v)),
            Tok::Str => Ok(Value::Other),
            Tok::Punct('[') => self.matrix().map(Value::Matrix),
            Tok::Punct('{') => {
                self.skip_cell(&t)?;
                Ok(Value::Other)
            }
            _ => Err(Self::error_at(&t, "expected a number, string, matrix or cell array")),
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::new();
        let mut row: Vec<f64> = Vec::new();
        loop {
            let t = self.next().ok_or_else(|| self.eof_error())?;
            match t.tok {
                Tok::Number(v) => row.push(v),
                Tok::Punct(',') => {}
                Tok::Punct(';') | Tok::Newline => {
                    if !row.is_empty() {
                        rows.push(std::mem::take(&mut row));
                    }
                }
                Tok::Punct(']') => {
                    if !row.is_empty() {
                        rows.push(row);
                    }
                    break;
                }
                _ => return Err(Self::error_at(&t, "unexpected token inside matrix")),
            }
        }
        if let Some(width) = rows.first().map(Vec::len) {
            if let Some(bad) = rows.iter().position(|r| r.len() != width) {
                let at = &self.tokens[self.pos - 1];
                return Err(Self::error_at(
                    at,
                    format!(
                        "matrix row {} has {} columns, expected {width}",
                        bad + 1,
                        rows[bad].len()
                    ),
                ));
            }
        }
        Ok(rows)
    }

    fn skip_cell(&mut self, open: &Token) -> Result<()> {
        let mut depth = 1;
        while depth > 0 {
            match self.next() {
                Some(Token {
                    tok: Tok::Punct('{'), ..
                }) => depth += 1,
                Some(Token {
                    tok: Tok::Punct('}'), ..
                }) => depth -= 1,
                Some(_) => {}
                None => return Err(Self::error_at(open, "unterminated cell array")),
            }
        }
        Ok(())
    }
}

/// Parse the text of a MATPOWER `.m` case file.
pub fn parse_matpower_case(text: &str) -> Result<CaseData> {
    let tokens = Lexer::new(text).tokens()?;
    let fields = Parser { tokens, pos: 0 }.parse()?;
    let missing = |what: &str| Error::Syntax {
        line: 1,
        column: 1,
        message: format!("case file does not assign mpc.{what}"),
    };
    let base_mva = fields.base_mva.ok_or_else(|| missing("baseMVA"))?;
    let bus = fields.bus.ok_or_else(|| missing("bus"))?;
    let gen = fields.gen.ok_or_else(|| missing("gen"))?;
    let branch = fields.branch.ok_or_else(|| missing("branch"))?;
    CaseData::from_matrices(base_mva, &bus, &gen, &branch)
}

/// Render a case as a MATPOWER version-2 `.m` file.
///
/// Numbers are written in shortest round-trip form, so re-parsing yields
/// bit-identical values.
pub fn write_matpower_case(case: &CaseData, function_name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {function_name}");
    let _ = writeln!(out, "%{}  MATPOWER case data.", function_name.to_uppercase());
    out.push('\n');
    out.push_str("%% MATPOWER Case Format : Version 2\nmpc.version = '2';\n\n");
    out.push_str("%%-----  Power Flow Data  -----%%\n%% system MVA base\n");
    let _ = writeln!(out, "mpc.baseMVA = {};\n", format_number(case.base_mva));
    write_matrix(
        &mut out,
        "bus",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        &case.bus_matrix(),
    );
    write_matrix(
        &mut out,
        "gen",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\tPc1\tPc2\tQc1min\tQc1max\tQc2min\tQc2max\tramp_agc\tramp_10\tramp_30\tramp_q\tapf",
        &case.gen_matrix(),
    );
    write_matrix(
        &mut out,
        "branch",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        &case.branch_matrix(),
    );
    out
}

fn write_matrix(out: &mut String, name: &str, header: &str, rows: &[Vec<f64>]) {
    let _ = writeln!(out, "%% {name} data");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "mpc.{name} = [");
    for row in rows {
        out.push('\t');
        let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        out.push_str(&cells.join("\t"));
        out.push_str(";\n");
    }
    out.push_str("];\n\n");
}

pub(crate) fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf" } else { "-Inf" }.into()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casefile::BusType;

    const TWO_BUS: &str = "function mpc = two_bus
% smallest well-formed case
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9;
\t2\t1\t50\t10\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t300\t-300\t1\t100\t1\t250\t10\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
";

    #[test]
    fn parses_minimal_two_bus_case() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.buses[0].bus_type, BusType::Slack);
        assert_eq!(case.branches[0].x, 0.1);
    }

    #[test]
    fn duplicate_bus_is_rejected() {
        let text = TWO_BUS.replace("\t2\t1\t50", "\t1\t1\t50");
        assert!(matches!(
            parse_matpower_case(&text),
            Err(Error::DuplicateBus(1))
        ));
    }

    #[test]
    fn reports_line_and_column() {
        let text = TWO_BUS.replace("0.1\t0\t0", "0.1\t#\t0");
        match parse_matpower_case(&text) {
            Err(Error::Syntax { line, column, .. }) => {
                assert_eq!(line, 13);
                assert_eq!(column, 12);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn accepts_continuations_comments_and_extra_fields() {
        let text = "function mpc = odd
mpc.baseMVA = 100; % trailing comment
mpc.bus = [ 1, 3, 0, 0, 0, 0, 1, 1, 0, 345, 1, 1.1, 0.9; 2 1 50 10 0 0 1 ...
   1 -5 345 1 1.1 0.9 ];
mpc.gen = [1 0 0 300 -300 1 100 1 250 10];
mpc.branch = [1 2 0 .1 0 0 0 0 0 0 1];
mpc.gencost = [2 0 0 3 0.11 5 Inf; 2 0 0 3 0.085 1.2 -Inf];
mpc.bus_name = { 'one'; 'it''s two' };
";
        let case = parse_matpower_case(text).unwrap();
        assert_eq!(case.buses[1].va, -5.0);
        assert_eq!(case.branches[0].x, 0.1);
        assert_eq!(case.branches[0].angmax, 360.0);
    }

    #[test]
    fn ragged_matrix_is_a_syntax_error() {
        let text = TWO_BUS.replace("\t2\t1\t50\t10\t0", "\t2\t1\t50\t10");
        assert!(matches!(
            parse_matpower_case(&text),
            Err(Error::Syntax { .. })
        ));
    }

    #[test]
    fn missing_table_is_reported() {
        let text: String = TWO_BUS
            .lines()
            .take_while(|l| !l.starts_with("mpc.branch"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(err.to_string().contains("mpc.branch"));
    }

    #[test]
    fn writer_round_trips_two_bus_case() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        let text = write_matpower_case(&case, "two_bus");
        assert_eq!(parse_matpower_case(&text).unwrap(), case);
    }

    #[test]
    fn number_formatting_is_exact() {
        for v in [0.1, 1.0 / 3.0, -2.5e-12, 1e300, 163.0, -0.0] {
            let text = format_number(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
        }
        assert_eq!(format_number(345.0), "345");
    }
}
