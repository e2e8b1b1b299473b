//! A line-level MUMPS lexer.
//!
//! MUMPS lines are `[label[(formals)]] ls [. . ]command[:postcond] args ...`.
//! The lexer splits a line into its label, do-level dots, commands and a
//! trailing `;` comment. It does not evaluate anything and does not try to
//! resolve indirection; it only has to be good enough for comment
//! classification, segmentation, complexity and pain-point counting.

/// Byte offset of the `;` that starts a comment, ignoring `;` inside
/// `"`-delimited strings (`""` is an escaped quote, which the toggle handles).
pub fn comment_start(line: &str) -> Option<usize> {
    let mut in_str = false;
    for (i, b) in line.bytes().enumerate() {
        match b {
            b'"' => in_str = !in_str,
            b';' if !in_str => return Some(i),
            _ => {}
        }
    }
    None
}

/// True when the code before a comment is only indentation and do-level dots.
pub fn is_block_prefix(prefix: &str) -> bool {
    prefix.bytes().all(|b| matches!(b, b' ' | b'\t' | b'.'))
}

/// Returns the column-1 label of a line, if any.
pub fn label(line: &str) -> Option<&str> {
    let first = line.as_bytes().first()?;
    if !(first.is_ascii_alphanumeric() || *first == b'%') {
        return None;
    }
    let end = line
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '%'))
        .unwrap_or(line.len());
    Some(&line[..end])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Str(String),
    Num(String),
    Local(String),
    Global(String),
    /// `$NAME` intrinsic function or special variable, canonical upper-case.
    Intrinsic(String),
    /// `$$LABEL^ROUTINE` extrinsic function call.
    Extrinsic(String),
    /// Label reference in DO/GOTO/JOB arguments.
    LabelRef(String),
    Pattern(String),
    Op(String),
    Open,
    Close,
}

impl Token {
    pub fn is_operand(&self) -> bool {
        matches!(
            self,
            Token::Str(_)
                | Token::Num(_)
                | Token::Local(_)
                | Token::Global(_)
                | Token::LabelRef(_)
                | Token::Pattern(_)
        )
    }

    pub fn is_operator(&self) -> bool {
        matches!(
            self,
            Token::Op(_) | Token::Intrinsic(_) | Token::Extrinsic(_)
        )
    }

    /// Text key used for distinct-counting.
    pub fn key(&self) -> String {
        match self {
            Token::Str(s) => format!("\"{s}\""),
            Token::Num(s)
            | Token::Local(s)
            | Token::Global(s)
            | Token::Intrinsic(s)
            | Token::Extrinsic(s)
            | Token::LabelRef(s)
            | Token::Pattern(s)
            | Token::Op(s) => s.clone(),
            Token::Open => "(".into(),
            Token::Close => ")".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    /// Canonical upper-case command name (`S` and `set` both become `SET`).
    pub name: String,
    pub postcond: Vec<Token>,
    pub args: Vec<Token>,
}

impl Command {
    /// Arguments split on depth-0 commas.
    pub fn arguments(&self) -> Vec<&[Token]> {
        split_top_level(&self.args, ",")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLine {
    pub label: Option<String>,
    pub formals: Vec<String>,
    pub level: usize,
    pub commands: Vec<Command>,
}

/// Splits `tokens` on `Op(sep)` at parenthesis depth 0.
pub fn split_top_level<'t>(tokens: &'t [Token], sep: &str) -> Vec<&'t [Token]> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        match t {
            Token::Open => depth += 1,
            Token::Close => depth = depth.saturating_sub(1),
            Token::Op(s) if depth == 0 && s == sep => {
                out.push(&tokens[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < tokens.len() || !tokens.is_empty() {
        out.push(&tokens[start..]);
    }
    out
}

const COMMANDS: &[(&str, &str)] = &[
    ("B", "BREAK"),
    ("C", "CLOSE"),
    ("D", "DO"),
    ("E", "ELSE"),
    ("F", "FOR"),
    ("G", "GOTO"),
    ("H", "HANG"),
    ("I", "IF"),
    ("J", "JOB"),
    ("K", "KILL"),
    ("L", "LOCK"),
    ("M", "MERGE"),
    ("N", "NEW"),
    ("O", "OPEN"),
    ("Q", "QUIT"),
    ("R", "READ"),
    ("S", "SET"),
    ("TC", "TCOMMIT"),
    ("TRE", "TRESTART"),
    ("TRO", "TROLLBACK"),
    ("TS", "TSTART"),
    ("U", "USE"),
    ("V", "VIEW"),
    ("W", "WRITE"),
    ("X", "XECUTE"),
];

pub fn canonical_command(word: &str) -> String {
    let up = word.to_ascii_uppercase();
    if up.starts_with('Z') {
        return up;
    }
    for (abbr, full) in COMMANDS {
        if up == *abbr || up == *full {
            return (*full).to_string();
        }
    }
    if up == "HALT" {
        return "HALT".into();
    }
    up
}

const FUNCTIONS: &[(&str, &str)] = &[
    ("A", "ASCII"),
    ("C", "CHAR"),
    ("D", "DATA"),
    ("E", "EXTRACT"),
    ("F", "FIND"),
    ("FN", "FNUMBER"),
    ("G", "GET"),
    ("J", "JUSTIFY"),
    ("L", "LENGTH"),
    ("NA", "NAME"),
    ("N", "NEXT"),
    ("O", "ORDER"),
    ("P", "PIECE"),
    ("QL", "QLENGTH"),
    ("QS", "QSUBSCRIPT"),
    ("Q", "QUERY"),
    ("R", "RANDOM"),
    ("RE", "REVERSE"),
    ("S", "SELECT"),
    ("ST", "STACK"),
    ("T", "TEXT"),
    ("TR", "TRANSLATE"),
    ("V", "VIEW"),
];

const SPECIAL_VARS: &[(&str, &str)] = &[
    ("D", "DEVICE"),
    ("EC", "ECODE"),
    ("ES", "ESTACK"),
    ("ET", "ETRAP"),
    ("H", "HOROLOG"),
    ("I", "IO"),
    ("J", "JOB"),
    ("K", "KEY"),
    ("P", "PRINCIPAL"),
    ("Q", "QUIT"),
    ("S", "STORAGE"),
    ("ST", "STACK"),
    ("SY", "SYSTEM"),
    ("T", "TEST"),
    ("TL", "TLEVEL"),
    ("X", "X"),
    ("Y", "Y"),
];

/// Canonical `$NAME` for an intrinsic; `call` selects the function table.
pub fn canonical_intrinsic(word: &str, call: bool) -> String {
    let up = word.to_ascii_uppercase();
    if up.starts_with('Z') {
        return format!("${up}");
    }
    let table = if call { FUNCTIONS } else { SPECIAL_VARS };
    for (abbr, full) in table {
        if up == *abbr || up == *full {
            return format!("${full}");
        }
    }
    format!("${up}")
}

/// Full names of intrinsic functions and special variables, used by the
/// built-in shadowing detector.
pub fn intrinsic_names() -> impl Iterator<Item = &'static str> {
    FUNCTIONS
        .iter()
        .chain(SPECIAL_VARS.iter())
        .map(|(_, full)| *full)
}

/// Parses the code part of a line (the caller strips any comment).
pub fn parse_line(code: &str) -> ParsedLine {
    let bytes = code.as_bytes();
    let mut out = ParsedLine::default();
    let mut i = 0;

    if let Some(l) = label(code) {
        out.label = Some(l.to_string());
        i = l.len();
        if bytes.get(i) == Some(&b'(') {
            let close = code[i..].find(')').map(|p| i + p).unwrap_or(code.len());
            out.formals = code[i + 1..close]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            i = (close + 1).min(code.len());
        }
    }

    // Line-start whitespace and do-level dots.
    while i < bytes.len() && matches!(bytes[i], b' ' | b'\t' | b'.') {
        if bytes[i] == b'.' {
            out.level += 1;
        }
        i += 1;
    }

    while i < bytes.len() {
        if !bytes[i].is_ascii_alphabetic() {
            // Not a command word; skip to the next space to resynchronise.
            i = skip_argument(code, i);
            i = skip_spaces(bytes, i);
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
            i += 1;
        }
        let mut name = canonical_command(&code[start..i]);
        let mut postcond = Vec::new();
        if bytes.get(i) == Some(&b':') {
            let end = skip_argument(code, i + 1);
            postcond = lex_expr(&code[i + 1..end]);
            i = end;
        }
        let mut args = Vec::new();
        if bytes.get(i) == Some(&b' ') || bytes.get(i) == Some(&b'\t') {
            i += 1;
            if i < bytes.len() && !matches!(bytes[i], b' ' | b'\t') {
                let end = skip_argument(code, i);
                args = lex_expr(&code[i..end]);
                i = end;
            }
        }
        if name == "HANG" && args.is_empty() {
            name = "HALT".into();
        }
        if matches!(name.as_str(), "DO" | "GOTO" | "JOB") {
            mark_label_refs(&mut args);
        }
        out.commands.push(Command {
            name,
            postcond,
            args,
        });
        i = skip_spaces(bytes, i);
    }
    out
}

fn skip_spaces(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && matches!(bytes[i], b' ' | b'\t') {
        i += 1;
    }
    i
}

/// End of an argument list: the next space outside strings and parentheses.
fn skip_argument(code: &str, mut i: usize) -> usize {
    let bytes = code.as_bytes();
    let mut in_str = false;
    let mut depth = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        if in_str {
            if b == b'"' {
                in_str = false;
            }
        } else {
            match b {
                b'"' => in_str = true,
                b'(' => depth += 1,
                b')' => depth = depth.saturating_sub(1),
                b' ' | b'\t' if depth == 0 => break,
                _ => {}
            }
        }
        i += 1;
    }
    i
}

/// In DO/GOTO/JOB, the leading name of each argument is an entry reference.
fn mark_label_refs(args: &mut [Token]) {
    let mut at_start = true;
    let mut depth = 0usize;
    for t in args.iter_mut() {
        match t {
            Token::Open => depth += 1,
            Token::Close => depth = depth.saturating_sub(1),
            Token::Op(op) if depth == 0 && op == "," => {
                at_start = true;
                continue;
            }
            Token::Op(op) if depth == 0 && op == "+" && at_start => continue,
            Token::Local(name) if depth == 0 && at_start => {
                *t = Token::LabelRef(std::mem::take(name));
            }
            Token::Global(name) if depth == 0 && at_start => {
                *t = Token::LabelRef(std::mem::take(name));
            }
            _ => {}
        }
        if depth == 0 {
            at_start = false;
        }
    }
}

fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'%'
}

fn read_name(bytes: &[u8], mut i: usize) -> usize {
    if i < bytes.len() && is_name_start(bytes[i]) {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
            i += 1;
        }
    }
    i
}

/// Lexes one expression or argument list.
pub fn lex_expr(s: &str) -> Vec<Token> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'"' => {
                let mut j = i + 1;
                let mut text = String::new();
                while j < bytes.len() {
                    if bytes[j] == b'"' {
                        if bytes.get(j + 1) == Some(&b'"') {
                            text.push('"');
                            j += 2;
                            continue;
                        }
                        break;
                    }
                    j += 1;
                }
                text = if text.is_empty() {
                    s[i + 1..j.min(s.len())].to_string()
                } else {
                    s[i + 1..j.min(s.len())].replace("\"\"", "\"")
                };
                out.push(Token::Str(text));
                i = (j + 1).min(bytes.len());
            }
            b'0'..=b'9' => {
                let j = read_number(bytes, i);
                out.push(Token::Num(s[i..j].to_string()));
                i = j;
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                let j = read_number(bytes, i);
                out.push(Token::Num(s[i..j].to_string()));
                i = j;
            }
            b'$' => {
                if bytes.get(i + 1) == Some(&b'$') {
                    let mut j = read_name(bytes, i + 2);
                    if bytes.get(j) == Some(&b'^') {
                        j = read_name(bytes, j + 1);
                    }
                    out.push(Token::Extrinsic(s[i..j].to_ascii_uppercase()));
                    i = j;
                } else {
                    let mut j = i + 1;
                    while j < bytes.len() && bytes[j].is_ascii_alphabetic() {
                        j += 1;
                    }
                    let call = bytes.get(j) == Some(&b'(');
                    out.push(Token::Intrinsic(canonical_intrinsic(&s[i + 1..j], call)));
                    i = j.max(i + 1);
                }
            }
            b'^' => {
                let j = read_name(bytes, i + 1);
                out.push(Token::Global(s[i..j].to_string()));
                i = j;
            }
            b'%' | b'A'..=b'Z' | b'a'..=b'z' => {
                let j = read_name(bytes, i);
                let name = &s[i..j];
                if bytes.get(j) == Some(&b'^')
                    && bytes.get(j + 1).is_some_and(|c| is_name_start(*c))
                {
                    let k = read_name(bytes, j + 1);
                    out.push(Token::LabelRef(s[i..k].to_string()));
                    i = k;
                } else {
                    out.push(Token::Local(name.to_string()));
                    i = j;
                }
            }
            b'(' => {
                out.push(Token::Open);
                i += 1;
            }
            b')' => {
                out.push(Token::Close);
                i += 1;
            }
            b'?' => {
                out.push(Token::Op("?".into()));
                i += 1;
                if bytes
                    .get(i)
                    .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
                {
                    let j = read_pattern(bytes, i);
                    out.push(Token::Pattern(s[i..j].to_string()));
                    i = j;
                }
            }
            b'\'' => {
                let next = bytes.get(i + 1).copied();
                match next {
                    Some(b'=' | b'<' | b'>' | b'[' | b'&' | b'!') => {
                        out.push(Token::Op(s[i..i + 2].to_string()));
                        i += 2;
                    }
                    Some(b']') => {
                        let len = if bytes.get(i + 2) == Some(&b']') {
                            3
                        } else {
                            2
                        };
                        out.push(Token::Op(s[i..i + len].to_string()));
                        i += len;
                    }
                    Some(b'?') => {
                        out.push(Token::Op("'?".into()));
                        i += 2;
                        if bytes
                            .get(i)
                            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
                        {
                            let j = read_pattern(bytes, i);
                            out.push(Token::Pattern(s[i..j].to_string()));
                            i = j;
                        }
                    }
                    _ => {
                        out.push(Token::Op("'".into()));
                        i += 1;
                    }
                }
            }
            b'*' if bytes.get(i + 1) == Some(&b'*') => {
                out.push(Token::Op("**".into()));
                i += 2;
            }
            b']' if bytes.get(i + 1) == Some(&b']') => {
                out.push(Token::Op("]]".into()));
                i += 2;
            }
            b'+' | b'-' | b'*' | b'/' | b'\\' | b'#' | b'_' | b'=' | b'<' | b'>' | b'@' | b','
            | b':' | b'&' | b'!' | b'[' | b']' => {
                out.push(Token::Op((b as char).to_string()));
                i += 1;
            }
            _ => {
                // Pass-by-reference dots, stray characters.
                i += s[i..].chars().next().map_or(1, char::len_utf8);
            }
        }
    }
    out
}

fn read_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
        i += 1;
    }
    if i < bytes.len()
        && bytes[i] == b'E'
        && bytes
            .get(i + 1)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'-')
    {
        i += 2;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    i
}

fn read_pattern(bytes: &[u8], mut i: usize) -> usize {
    let mut depth = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'0'..=b'9' | b'.' => i += 1,
            b'A' | b'C' | b'E' | b'L' | b'N' | b'P' | b'U' | b'a' | b'c' | b'e' | b'l' | b'n'
            | b'p' | b'u' => i += 1,
            b'"' => {
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == b'"' {
                        if bytes.get(i + 1) == Some(&b'"') {
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    i += 1;
                }
            }
            b'(' => {
                depth += 1;
                i += 1;
            }
            b')' if depth > 0 => {
                depth -= 1;
                i += 1;
            }
            b',' if depth > 0 => i += 1,
            _ => break,
        }
    }
    i
}
