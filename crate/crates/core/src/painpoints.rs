//! MUMPS pain-point detectors and their LOC-normalised aggregate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguageId, SourceFile};
use crate::lang::mumps::{self, Command, Token};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PainPointError {
    #[error("pain points are defined for MUMPS only, not {0}")]
    UnsupportedLanguage(LanguageId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PainPoint {
    Indirection,
    KillGoto,
    TerseLines,
    Locals,
    BuiltinShadow,
    Math,
}

impl PainPoint {
    pub const ALL: [PainPoint; 6] = [
        PainPoint::Indirection,
        PainPoint::KillGoto,
        PainPoint::TerseLines,
        PainPoint::Locals,
        PainPoint::BuiltinShadow,
        PainPoint::Math,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PainPoint::Indirection => "Indirection",
            PainPoint::KillGoto => "Kill Goto",
            PainPoint::TerseLines => "Terse",
            PainPoint::Locals => "Locals",
            PainPoint::BuiltinShadow => "Variables Matching Functions",
            PainPoint::Math => "Math",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalsMode {
    /// Distinct names introduced per file.
    #[default]
    Distinct,
    /// Every introduction.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PainPointConfig {
    /// A line with at least this many commands is terse.
    pub terse_threshold: usize,
    pub locals: LocalsMode,
}

impl Default for PainPointConfig {
    fn default() -> Self {
        PainPointConfig {
            terse_threshold: 3,
            locals: LocalsMode::Distinct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PainPointVector {
    pub indirection: usize,
    pub kill_goto: usize,
    pub terse_lines: usize,
    pub locals: usize,
    pub builtin_shadow: usize,
    pub math: usize,
    pub loc: usize,
    /// Counts divided by `loc`, in [`PainPoint::ALL`] order.
    pub normalized: [f64; 6],
    pub aggregate: f64,
}

impl PainPointVector {
    pub fn from_counts(counts: [usize; 6], loc: usize) -> Self {
        let normalized = normalize(counts, loc);
        PainPointVector {
            indirection: counts[0],
            kill_goto: counts[1],
            terse_lines: counts[2],
            locals: counts[3],
            builtin_shadow: counts[4],
            math: counts[5],
            loc,
            normalized,
            aggregate: normalized.iter().sum::<f64>() / 6.0,
        }
    }

    pub fn counts(&self) -> [usize; 6] {
        [
            self.indirection,
            self.kill_goto,
            self.terse_lines,
            self.locals,
            self.builtin_shadow,
            self.math,
        ]
    }

    pub fn count(&self, p: PainPoint) -> usize {
        self.counts()[p as usize]
    }

    pub fn normalized_value(&self, p: PainPoint) -> f64 {
        self.normalized[p as usize]
    }
}

fn normalize(counts: [usize; 6], loc: usize) -> [f64; 6] {
    if loc == 0 {
        return [0.0; 6];
    }
    counts.map(|c| c as f64 / loc as f64)
}

/// Mean of the six count/LOC ratios.
pub fn aggregate_painpoint(counts: [usize; 6], loc: usize) -> f64 {
    normalize(counts, loc).iter().sum::<f64>() / 6.0
}

fn shadow_names() -> BTreeSet<String> {
    mumps::intrinsic_names()
        .map(String::from)
        .chain(["T", "D", "X", "Y", "J", "IO"].map(String::from))
        .collect()
}

const MATH: &[&str] = &["+", "-", "*", "/", "\\", "#", "**"];

/// Locals assigned by one SET or FOR argument: the names left of the
/// top-level `=`, including multi-targets and `$PIECE`/`$EXTRACT` targets.
fn assignment_targets(arg: &[Token]) -> Vec<&str> {
    let parts = mumps::split_top_level(arg, "=");
    if parts.len() < 2 {
        return Vec::new();
    }
    let target = parts[0];
    let mut out = Vec::new();
    match target {
        [Token::Open, rest @ ..] => {
            for t in mumps::split_top_level(rest, ",") {
                if let Some(Token::Local(n)) = t.first() {
                    out.push(n.as_str());
                }
            }
        }
        [Token::Intrinsic(f), Token::Open, Token::Local(n), ..]
            if matches!(f.as_str(), "$PIECE" | "$EXTRACT") =>
        {
            out.push(n.as_str())
        }
        [Token::Local(n), ..] => out.push(n.as_str()),
        _ => {}
    }
    out
}

fn introduced_locals(cmd: &Command) -> Vec<&str> {
    let args = cmd.arguments();
    match cmd.name.as_str() {
        "SET" | "FOR" => args.iter().flat_map(|a| assignment_targets(a)).collect(),
        "NEW" => args
            .iter()
            .filter_map(|a| match a {
                [Token::Local(n)] => Some(n.as_str()),
                _ => None,
            })
            .collect(),
        "READ" => args
            .iter()
            .filter_map(|a| match a {
                [Token::Local(n), ..] => Some(n.as_str()),
                [Token::Op(op), Token::Local(n), ..] if op == "*" => Some(n.as_str()),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Arithmetic operators, skipping label offsets (`D LBL+2`) and leading
/// WRITE/READ format controls (`W #,!`).
fn math_ops(cmd: &Command) -> usize {
    let count = |tokens: &[Token]| {
        tokens
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                matches!(t, Token::Op(op) if MATH.contains(&op.as_str()))
                    && !(*i > 0 && matches!(tokens[i - 1], Token::LabelRef(_)))
            })
            .count()
    };
    let args = if matches!(cmd.name.as_str(), "WRITE" | "READ") {
        cmd.arguments()
            .into_iter()
            .map(|arg| {
                let skip = arg
                    .iter()
                    .take_while(|t| matches!(t, Token::Op(op) if op == "#" || op == "!"))
                    .count();
                count(&arg[skip..])
            })
            .sum()
    } else {
        count(&cmd.args)
    };
    count(&cmd.postcond) + args
}

pub fn scan_painpoints(file: &SourceFile) -> Result<PainPointVector, PainPointError> {
    scan_painpoints_with(file, &PainPointConfig::default())
}

/// Counts pain points over the code of a MUMPS file; comments are skipped.
pub fn scan_painpoints_with(
    file: &SourceFile,
    config: &PainPointConfig,
) -> Result<PainPointVector, PainPointError> {
    if file.language != LanguageId::Mumps {
        return Err(PainPointError::UnsupportedLanguage(file.language));
    }
    let shadows = shadow_names();
    let mut counts = [0usize; 6];
    let mut distinct_locals = BTreeSet::new();
    for index in 1..=file.lines.len() {
        let line = mumps::parse_line(file.code_of(index));
        if line.commands.len() >= config.terse_threshold {
            counts[PainPoint::TerseLines as usize] += 1;
        }
        for cmd in &line.commands {
            if matches!(cmd.name.as_str(), "KILL" | "GOTO") {
                counts[PainPoint::KillGoto as usize] += 1;
            }
            for t in cmd.postcond.iter().chain(&cmd.args) {
                match t {
                    Token::Op(op) if op == "@" => counts[PainPoint::Indirection as usize] += 1,
                    Token::Local(n) if shadows.contains(&n.to_ascii_uppercase()) => {
                        counts[PainPoint::BuiltinShadow as usize] += 1
                    }
                    _ => {}
                }
            }
            for name in introduced_locals(cmd) {
                counts[PainPoint::Locals as usize] += 1;
                distinct_locals.insert(name.to_string());
            }
            counts[PainPoint::Math as usize] += math_ops(cmd);
        }
    }
    if config.locals == LocalsMode::Distinct {
        counts[PainPoint::Locals as usize] = distinct_locals.len();
    }
    Ok(PainPointVector::from_counts(counts, file.loc()))
}

/// Flat per-file record: raw counts, normalised values and the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PainPointRow {
    pub file: String,
    pub indirection: usize,
    pub kill_goto: usize,
    pub terse_lines: usize,
    pub locals: usize,
    pub builtin_shadow: usize,
    pub math: usize,
    pub loc: usize,
    pub indirection_norm: f64,
    pub kill_goto_norm: f64,
    pub terse_lines_norm: f64,
    pub locals_norm: f64,
    pub builtin_shadow_norm: f64,
    pub math_norm: f64,
    pub aggregate: f64,
}

impl PainPointRow {
    pub fn new(file: &str, v: &PainPointVector) -> Self {
        let n = v.normalized;
        PainPointRow {
            file: file.to_string(),
            indirection: v.indirection,
            kill_goto: v.kill_goto,
            terse_lines: v.terse_lines,
            locals: v.locals,
            builtin_shadow: v.builtin_shadow,
            math: v.math,
            loc: v.loc,
            indirection_norm: n[0],
            kill_goto_norm: n[1],
            terse_lines_norm: n[2],
            locals_norm: n[3],
            builtin_shadow_norm: n[4],
            math_norm: n[5],
            aggregate: v.aggregate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_file;

    fn scan(text: &str) -> PainPointVector {
        scan_painpoints(&ingest_file("t.m", LanguageId::Mumps, text.as_bytes()).unwrap()).unwrap()
    }

    #[test]
    fn detector_examples() {
        assert_eq!(scan(" S @VAR=1\n").indirection, 1);
        assert_eq!(scan(" K X G LBL\n").kill_goto, 2);
        assert_eq!(scan(" ; only\n ;; comments\n").counts(), [0; 6]);
    }

    #[test]
    fn each_detector_in_isolation() {
        let cases = [
            (" D @R", PainPoint::Indirection),
            (" K ^G", PainPoint::KillGoto),
            (" W 1 W 2 Q", PainPoint::TerseLines),
            (" N A", PainPoint::Locals),
            (" W T", PainPoint::BuiltinShadow),
            (" W 1+2", PainPoint::Math),
        ];
        for (line, which) in cases {
            let v = scan(&format!("{line}\n"));
            for p in PainPoint::ALL {
                assert_eq!(v.count(p), usize::from(p == which), "{line}: {p:?}");
            }
        }
    }

    #[test]
    fn locals_distinct_and_total() {
        let text = " S A=1,B=2\n S A=3\n F I=1:1:3 S $P(C,\"^\",I)=I\n R D:10\n S (E,F)=0\n";
        let f = ingest_file("t.m", LanguageId::Mumps, text.as_bytes()).unwrap();
        let distinct = scan_painpoints(&f).unwrap();
        assert_eq!(distinct.locals, 7);
        let total = scan_painpoints_with(
            &f,
            &PainPointConfig {
                locals: LocalsMode::Total,
                ..PainPointConfig::default()
            },
        )
        .unwrap();
        assert_eq!(total.locals, 8);
    }

    #[test]
    fn math_skips_offsets_and_formats() {
        assert_eq!(scan(" D LBL+2\n").math, 0);
        assert_eq!(scan(" W #,?10,X*2,!\n").math, 1);
        assert_eq!(scan(" S X=Y**2-1\n").math, 2);
        assert_eq!(scan(" S X=\"a+b\"\n").math, 0);
    }

    #[test]
    fn shadowing_is_case_insensitive() {
        assert_eq!(scan(" S piece=1,X=2,io=3,TEXT=4\n").builtin_shadow, 4);
        assert_eq!(scan(" S Z=$P(Y,U,1)\n").builtin_shadow, 1);
    }

    #[test]
    fn alc_is_rejected() {
        let f = ingest_file("t.asm", LanguageId::Alc, b"         BR    R14\n").unwrap();
        assert_eq!(
            scan_painpoints(&f),
            Err(PainPointError::UnsupportedLanguage(LanguageId::Alc))
        );
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_painpoint([0; 6], 10), 0.0);
        assert!((aggregate_painpoint([6, 0, 0, 0, 0, 0], 6) - 1.0 / 6.0).abs() < 1e-12);
        let a = aggregate_painpoint([3, 1, 4, 1, 5, 9], 26);
        let b = aggregate_painpoint([6, 2, 8, 2, 10, 18], 52);
        assert!((a - b).abs() < 1e-15);
    }
}
