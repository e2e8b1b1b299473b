//! Fixed-format mainframe assembler (HLASM) line analysis.
//!
//! Columns 1-71 hold the statement, column 72 is the continuation indicator
//! and columns 73-80 the sequence field. A `*` (or `.*` for macro comments)
//! in column 1 makes the line a comment. Otherwise the statement is
//! `[name] opcode [operands] [remarks]`, fields separated by blanks; the
//! operand field honours quoted strings and parenthesis nesting, and
//! everything after it is the remark.

/// Last column (exclusive, 0-based) of the statement area.
pub const STATEMENT_END: usize = 71;

/// Opcodes that never take operands; any text after them is a remark.
const NO_OPERANDS: &[&str] = &[
    "ANOP", "CSECT", "DSECT", "EJECT", "LTORG", "MACRO", "MEND", "MEXIT", "RSECT",
];

/// Operand-parse state carried across continuation lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Carry {
    pub in_quote: bool,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlcLine {
    Blank,
    /// Full-line comment; `marker_len` is 1 for `*`, 2 for `.*`.
    Comment {
        marker_len: usize,
    },
    Statement(StatementLine),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatementLine {
    pub label: Option<String>,
    /// Upper-cased opcode; `None` on continuation lines.
    pub opcode: Option<String>,
    /// Byte range of the operand text on this line.
    pub operands: (usize, usize),
    /// Byte range of the remark text on this line (may be empty).
    pub remark: (usize, usize),
    /// End of the statement area on this line.
    pub area_end: usize,
    /// Column 72 is non-blank: the next line continues this statement.
    pub continues: bool,
    /// Parse state at the end of the operand field, for the next line.
    pub carry: Carry,
}

impl StatementLine {
    pub fn operand_text<'a>(&self, raw: &'a str) -> &'a str {
        &raw[self.operands.0..self.operands.1]
    }
}

/// Statement area end for a raw line, and whether column 72 is non-blank.
fn split_area(raw: &str) -> (usize, bool) {
    let bytes = raw.as_bytes();
    if bytes.len() > STATEMENT_END && raw.is_char_boundary(STATEMENT_END) {
        let cont = !matches!(bytes[STATEMENT_END], b' ' | b'\t');
        (STATEMENT_END, cont)
    } else {
        (raw.len(), false)
    }
}

/// Classifies one physical line. `continuation` carries the operand state
/// when the previous line had a continuation indicator.
pub fn classify(raw: &str, continuation: Option<Carry>) -> AlcLine {
    if raw.trim().is_empty() {
        return AlcLine::Blank;
    }
    if continuation.is_none() {
        if raw.starts_with(".*") {
            return AlcLine::Comment { marker_len: 2 };
        }
        if raw.starts_with('*') {
            return AlcLine::Comment { marker_len: 1 };
        }
    }
    let (area_end, continues) = split_area(raw);
    let bytes = &raw.as_bytes()[..area_end];
    let mut stmt = StatementLine {
        area_end,
        continues,
        ..Default::default()
    };
    let mut i = 0;
    let mut carry = Carry::default();

    match continuation {
        Some(c) => {
            carry = c;
            i = skip_blanks(bytes, i);
        }
        None => {
            if !matches!(bytes.first(), Some(b' ' | b'\t')) {
                let end = field_end(bytes, 0);
                stmt.label = Some(raw[..end].to_string());
                i = end;
            }
            i = skip_blanks(bytes, i);
            let op_end = field_end(bytes, i);
            if op_end > i {
                stmt.opcode = Some(raw[i..op_end].to_ascii_uppercase());
            }
            i = skip_blanks(bytes, op_end);
        }
    }

    let takes_operands = stmt
        .opcode
        .as_deref()
        .is_none_or(|op| !NO_OPERANDS.contains(&op));
    let op_start = i;
    if takes_operands {
        i = operand_end(bytes, i, &mut carry);
    }
    stmt.operands = (op_start, i);
    stmt.carry = carry;
    let rem_start = skip_blanks(bytes, i);
    stmt.remark = (rem_start, area_end);
    if bytes[rem_start..].iter().all(|b| matches!(b, b' ' | b'\t')) {
        stmt.remark = (area_end, area_end);
    }
    AlcLine::Statement(stmt)
}

fn skip_blanks(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && matches!(bytes[i], b' ' | b'\t') {
        i += 1;
    }
    i
}

fn field_end(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && !matches!(bytes[i], b' ' | b'\t') {
        i += 1;
    }
    i
}

/// Attribute references such as `L'FIELD` are not strings.
fn is_attribute_quote(bytes: &[u8], i: usize) -> bool {
    if i == 0 {
        return false;
    }
    let prev = bytes[i - 1].to_ascii_uppercase();
    if !b"LKDINSTO".contains(&prev) {
        return false;
    }
    let before_ok =
        i < 2 || !(bytes[i - 2].is_ascii_alphanumeric() || b"@#$_".contains(&bytes[i - 2]));
    let after_ok = bytes
        .get(i + 1)
        .is_some_and(|b| b.is_ascii_alphabetic() || b"@#$_&*".contains(b));
    before_ok && after_ok
}

fn operand_end(bytes: &[u8], mut i: usize, carry: &mut Carry) -> usize {
    while i < bytes.len() {
        let b = bytes[i];
        if carry.in_quote {
            if b == b'\'' {
                if bytes.get(i + 1) == Some(&b'\'') {
                    i += 2;
                    continue;
                }
                carry.in_quote = false;
            }
            i += 1;
            continue;
        }
        match b {
            b'\'' if !is_attribute_quote(bytes, i) => carry.in_quote = true,
            b'(' => carry.depth += 1,
            b')' => carry.depth = carry.depth.saturating_sub(1),
            b' ' | b'\t' if carry.depth == 0 => break,
            _ => {}
        }
        i += 1;
    }
    i
}

/// A logical statement assembled from a line and its continuations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    /// 0-based index of the first physical line.
    pub first_line: usize,
    pub label: Option<String>,
    pub opcode: Option<String>,
    pub operands: String,
}

/// Classifies every line of a file, tracking continuation state.
pub fn classify_all<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vec<AlcLine> {
    let mut out = Vec::new();
    let mut pending: Option<Carry> = None;
    for raw in lines {
        let line = classify(raw, pending);
        pending = match &line {
            AlcLine::Statement(s) if s.continues => Some(s.carry),
            // A blank or comment line ends a dangling continuation.
            _ => None,
        };
        out.push(line);
    }
    out
}

/// Groups classified lines into logical statements.
pub fn statements(raws: &[&str], lines: &[AlcLine]) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    let mut continuing = false;
    for (idx, (raw, line)) in raws.iter().zip(lines).enumerate() {
        let AlcLine::Statement(s) = line else {
            continuing = false;
            continue;
        };
        let text = s.operand_text(raw);
        if continuing {
            if let Some(last) = out.last_mut() {
                last.operands.push_str(text);
            }
        } else {
            out.push(Statement {
                first_line: idx,
                label: s.label.clone(),
                opcode: s.opcode.clone(),
                operands: text.to_string(),
            });
        }
        continuing = s.continues;
    }
    out
}

/// Extended-mnemonic conditional branches (RX, RR and relative forms).
const CONDITIONAL: &[&str] = &[
    "BE", "BNE", "BH", "BL", "BNH", "BNL", "BM", "BNM", "BP", "BNP", "BZ", "BNZ", "BO", "BNO",
    "BER", "BNER", "BHR", "BLR", "BNHR", "BNLR", "BMR", "BNMR", "BPR", "BNPR", "BZR", "BNZR",
    "BOR", "BNOR", "JE", "JNE", "JH", "JL", "JNH", "JNL", "JM", "JNM", "JP", "JNP", "JZ", "JNZ",
    "JO", "JNO", "BRE", "BRNE", "BRH", "BRL", "BRNH", "BRNL", "BRM", "BRNM", "BRP", "BRNP", "BRZ",
    "BRNZ", "BRO", "BRNO", "BCT", "BCTG", "BXLE", "BXH", "BXLEG", "BXHG", "BRCT", "BRCTG", "BRXLE",
    "BRXH", "JCT", "JCTG", "JXLE", "JXH",
];

fn first_operand(operands: &str) -> &str {
    operands.split(',').next().unwrap_or("").trim()
}

/// True for a conditional branch instruction.
pub fn is_conditional_branch(opcode: &str, operands: &str) -> bool {
    let op = opcode.to_ascii_uppercase();
    if CONDITIONAL.contains(&op.as_str()) {
        return true;
    }
    match op.as_str() {
        "BC" | "BCR" | "BRC" | "BRCL" => {
            let mask = first_operand(operands);
            !(mask == "0" || mask == "15" || mask == "B'1111'" || mask == "X'F'")
        }
        "BCTR" | "BCTGR" => operands.split(',').nth(1).is_some_and(|r| {
            let r = r.trim();
            r != "0" && !r.eq_ignore_ascii_case("R0")
        }),
        _ => false,
    }
}

/// True for an unconditional transfer that does not fall through.
pub fn is_unconditional_exit(opcode: &str, operands: &str) -> bool {
    let op = opcode.to_ascii_uppercase();
    match op.as_str() {
        "B" | "BR" | "J" | "BRU" | "JU" | "BRUL" | "JLU" => true,
        "BC" | "BCR" | "BRC" | "BRCL" => {
            let mask = first_operand(operands);
            mask == "15" || mask == "B'1111'" || mask == "X'F'"
        }
        _ => false,
    }
}

/// Section opcodes that always begin a subroutine segment.
pub fn is_section(opcode: &str) -> bool {
    matches!(
        opcode.to_ascii_uppercase().as_str(),
        "CSECT" | "DSECT" | "START" | "RSECT"
    )
}

/// Operand terms: symbols, registers, self-defining terms and literals.
pub fn operand_terms(operands: &str) -> Vec<String> {
    let bytes = operands.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\'' {
            // Bare quoted string (macro operand).
            let j = quoted_end(bytes, i);
            out.push(operands[i..j].to_string());
            i = j;
        } else if b == b'=' && bytes.get(i + 1).is_some_and(|c| c.is_ascii_alphanumeric()) {
            // Literal such as =F'1' or =CL8'X'.
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_alphanumeric() {
                j += 1;
            }
            if bytes.get(j) == Some(&b'\'') {
                j = quoted_end(bytes, j);
            } else if bytes.get(j) == Some(&b'(') {
                j = operands[j..].find(')').map_or(bytes.len(), |p| j + p + 1);
            }
            out.push(operands[i..j].to_string());
            i = j;
        } else if b.is_ascii_alphanumeric() || b"@#$_&".contains(&b) {
            let mut j = i;
            while j < bytes.len()
                && (bytes[j].is_ascii_alphanumeric() || b"@#$_&.".contains(&bytes[j]))
            {
                j += 1;
            }
            if bytes.get(j) == Some(&b'\'') {
                if is_attribute_quote(bytes, j) {
                    // L'SYM
                    let mut k = j + 1;
                    while k < bytes.len()
                        && (bytes[k].is_ascii_alphanumeric() || b"@#$_&*".contains(&bytes[k]))
                    {
                        k += 1;
                    }
                    j = k;
                } else {
                    // Typed self-defining term C'..', X'..', F'..'.
                    j = quoted_end(bytes, j);
                }
            }
            out.push(operands[i..j].to_string());
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

fn quoted_end(bytes: &[u8], start: usize) -> usize {
    let mut j = start + 1;
    while j < bytes.len() {
        if bytes[j] == b'\'' {
            if bytes.get(j + 1) == Some(&b'\'') {
                j += 2;
                continue;
            }
            return j + 1;
        }
        j += 1;
    }
    bytes.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmt(raw: &str) -> StatementLine {
        match classify(raw, None) {
            AlcLine::Statement(s) => s,
            other => panic!("expected statement, got {other:?}"),
        }
    }

    #[test]
    fn column_one_star_is_comment() {
        assert_eq!(
            classify("* hello", None),
            AlcLine::Comment { marker_len: 1 }
        );
        assert_eq!(
            classify(".* macro note", None),
            AlcLine::Comment { marker_len: 2 }
        );
        assert_eq!(classify("   ", None), AlcLine::Blank);
    }

    #[test]
    fn remark_follows_operands() {
        let raw = "START    LA    R1,0(,R2)        POINT AT TABLE";
        let s = stmt(raw);
        assert_eq!(s.label.as_deref(), Some("START"));
        assert_eq!(s.opcode.as_deref(), Some("LA"));
        assert_eq!(s.operand_text(raw), "R1,0(,R2)");
        assert_eq!(&raw[s.remark.0..s.remark.1], "POINT AT TABLE");
    }

    #[test]
    fn quoted_operand_keeps_blanks() {
        let raw = "         DC    C'A B C'   LETTERS";
        let s = stmt(raw);
        assert_eq!(s.operand_text(raw), "C'A B C'");
        assert_eq!(&raw[s.remark.0..s.remark.1], "LETTERS");
    }

    #[test]
    fn attribute_reference_is_not_a_quote() {
        let raw = "         MVC   0(L'FIELD,R1),FIELD  COPY IT";
        let s = stmt(raw);
        assert_eq!(s.operand_text(raw), "0(L'FIELD,R1),FIELD");
        assert_eq!(&raw[s.remark.0..s.remark.1], "COPY IT");
    }

    #[test]
    fn no_operand_opcode_has_remark_only() {
        let raw = "         LTORG           literal pool";
        let s = stmt(raw);
        assert_eq!(s.operand_text(raw), "");
        assert_eq!(&raw[s.remark.0..s.remark.1], "literal pool");
    }

    #[test]
    fn continuation_in_column_72() {
        let first = format!("{:<71}X", "         DFHMDF POS=(1,1),");
        let second = "               LENGTH=10          field length";
        let lines = classify_all([first.as_str(), second]);
        let AlcLine::Statement(a) = &lines[0] else {
            panic!()
        };
        assert!(a.continues);
        assert_eq!(a.remark.0, a.remark.1);
        let AlcLine::Statement(b) = &lines[1] else {
            panic!()
        };
        assert!(b.opcode.is_none());
        assert_eq!(b.operand_text(second), "LENGTH=10");
        assert_eq!(&second[b.remark.0..b.remark.1], "field length");
        let st = statements(&[first.as_str(), second], &lines);
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].operands, "POS=(1,1),LENGTH=10");
    }

    #[test]
    fn branch_classification() {
        assert!(is_conditional_branch("BNE", "LOOP"));
        assert!(is_conditional_branch("BC", "8,EXIT"));
        assert!(!is_conditional_branch("BC", "15,EXIT"));
        assert!(!is_conditional_branch("BR", "R14"));
        assert!(is_unconditional_exit("BR", "14"));
        assert!(is_unconditional_exit("BCR", "15,R14"));
        assert!(!is_unconditional_exit("BNE", "X"));
    }

    #[test]
    fn operand_terms_split() {
        assert_eq!(
            operand_terms("R1,=F'1',C'A,B',L'FLD"),
            ["R1", "=F'1'", "C'A,B'", "L'FLD"]
        );
    }
}
