//! Cyclomatic complexity, Halstead measures and the maintainability index.
//!
//! Each subroutine becomes a flow graph: an entry node, one node per
//! command (MUMPS) or statement (ALC) chained in order, and an exit node.
//! Every branch point adds one edge that skips its successor, so a
//! subroutine with `d` branch points contributes `d + 1` to `E - N + 2P`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chunker::subroutine_spans;
use crate::corpus::{LanguageId, SourceFile};
use crate::lang::mumps::{self, Token};
use crate::lang::{alc, mumps::parse_line};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowSummary {
    pub edges: usize,
    pub nodes: usize,
    pub components: usize,
    pub decisions: usize,
    /// `decisions + components`; 0 for a file with no code.
    pub cyclomatic: usize,
    /// Set when the file has no code and M is undefined.
    pub empty: bool,
}

impl ControlFlowSummary {
    /// `E - N + 2P` computed from the graph.
    pub fn graph_cyclomatic(&self) -> i64 {
        self.edges as i64 - self.nodes as i64 + 2 * self.components as i64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HalsteadCounts {
    pub distinct_operators: usize,
    pub distinct_operands: usize,
    pub total_operators: usize,
    pub total_operands: usize,
    pub volume: f64,
    pub difficulty: f64,
    pub effort: f64,
    /// Set when there are no operands and D is defined as 0.
    pub degenerate: bool,
}

impl HalsteadCounts {
    pub fn from_counts(eta1: usize, eta2: usize, n1: usize, n2: usize) -> Self {
        let vocabulary = eta1 + eta2;
        let volume = if vocabulary == 0 {
            0.0
        } else {
            (n1 + n2) as f64 * (vocabulary as f64).log2()
        };
        let degenerate = eta2 == 0;
        let difficulty = if degenerate {
            0.0
        } else {
            (eta1 as f64 / 2.0) * (n2 as f64 / eta2 as f64)
        };
        HalsteadCounts {
            distinct_operators: eta1,
            distinct_operands: eta2,
            total_operators: n1,
            total_operands: n2,
            volume,
            difficulty,
            effort: difficulty * volume,
            degenerate,
        }
    }
}

/// `171 - 5.2 ln V - 0.23 M - 16.2 ln L`, with V and L clamped to at least 1.
pub fn maintainability(volume: f64, cyclomatic: f64, loc: f64) -> f64 {
    171.0 - 5.2 * volume.max(1.0).ln() - 0.23 * cyclomatic - 16.2 * loc.max(1.0).ln()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Builds the flow graph from per-subroutine branch flags, one flag per
/// statement node.
fn flow_graph(subroutines: &[Vec<bool>]) -> ControlFlowSummary {
    let mut edges = Vec::new();
    let mut nodes = 0;
    let mut decisions = 0;
    for branches in subroutines.iter().filter(|b| !b.is_empty()) {
        let entry = nodes;
        let exit = entry + branches.len() + 1;
        nodes = exit + 1;
        for k in entry..exit {
            edges.push((k, k + 1));
        }
        for (i, &branch) in branches.iter().enumerate() {
            if branch {
                let node = entry + 1 + i;
                edges.push((node, (node + 2).min(exit)));
                decisions += 1;
            }
        }
    }
    let mut uf = UnionFind::new(nodes);
    for &(a, b) in &edges {
        uf.union(a, b);
    }
    let components: BTreeSet<usize> = (0..nodes).map(|n| uf.find(n)).collect();
    let p = components.len();
    ControlFlowSummary {
        edges: edges.len(),
        nodes,
        components: p,
        decisions,
        cyclomatic: if p == 0 { 0 } else { decisions + p },
        empty: p == 0,
    }
}

/// Number of `:`-separated cases in each `$SELECT(...)` of `tokens`.
fn select_cases(tokens: &[Token]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if !matches!(t, Token::Intrinsic(name) if name == "$SELECT")
            || tokens.get(i + 1) != Some(&Token::Open)
        {
            continue;
        }
        let mut depth = 0usize;
        let mut cases = 0;
        for t in &tokens[i + 1..] {
            match t {
                Token::Open => depth += 1,
                Token::Close => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                Token::Op(op) if depth == 1 && op == ":" => cases += 1,
                _ => {}
            }
        }
        out.push(cases);
    }
    out
}

/// Branch flags for the commands of one MUMPS subroutine. IF and FOR each
/// branch; ELSE pairs with an earlier unmatched IF and only branches on its
/// own; every command or DO/GOTO/XECUTE argument postconditional branches;
/// a `$SELECT` with k cases adds k - 1.
fn mumps_branches(lines: &[mumps::ParsedLine]) -> Vec<bool> {
    let mut flags = Vec::new();
    let mut open_ifs = 0usize;
    for line in lines {
        for cmd in &line.commands {
            let mut d = 0;
            if !cmd.postcond.is_empty() {
                d += 1;
            }
            match cmd.name.as_str() {
                "IF" => {
                    d += 1;
                    open_ifs += 1;
                }
                "ELSE" => {
                    if open_ifs > 0 {
                        open_ifs -= 1;
                    } else {
                        d += 1;
                    }
                }
                "FOR" => d += 1,
                "DO" | "GOTO" | "XECUTE" => {
                    d += cmd
                        .arguments()
                        .iter()
                        .filter(|a| mumps::split_top_level(a, ":").len() > 1)
                        .count();
                }
                _ => {}
            }
            d += select_cases(&cmd.postcond)
                .into_iter()
                .chain(select_cases(&cmd.args))
                .map(|k| k.saturating_sub(1))
                .sum::<usize>();
            // One node per command, plus a node for each further decision
            // so every decision owns a distinct branch edge.
            flags.push(d > 0);
            flags.extend(std::iter::repeat_n(true, d.saturating_sub(1)));
        }
    }
    flags
}

fn parsed_mumps(file: &SourceFile) -> Vec<mumps::ParsedLine> {
    (1..=file.lines.len())
        .map(|i| parse_line(file.code_of(i)))
        .collect()
}

pub fn cyclomatic(file: &SourceFile) -> ControlFlowSummary {
    let spans = subroutine_spans(file);
    let subroutines: Vec<Vec<bool>> = match file.language {
        LanguageId::Mumps => {
            let parsed = parsed_mumps(file);
            spans
                .iter()
                .map(|&(s, e)| mumps_branches(&parsed[s - 1..e]))
                .collect()
        }
        LanguageId::Alc => {
            let statements = alc_statements(file);
            spans
                .iter()
                .map(|&(s, e)| {
                    statements
                        .iter()
                        .filter(|st| (s..=e).contains(&(st.first_line + 1)))
                        .map(|st| {
                            alc::is_conditional_branch(
                                st.opcode.as_deref().unwrap_or(""),
                                &st.operands,
                            )
                        })
                        .collect()
                })
                .collect()
        }
    };
    flow_graph(&subroutines)
}

fn alc_statements(file: &SourceFile) -> Vec<alc::Statement> {
    let raws: Vec<&str> = file.lines.iter().map(|l| l.raw.as_str()).collect();
    let classified = alc::classify_all(raws.iter().copied());
    alc::statements(&raws, &classified)
}

#[derive(Default)]
struct Tally {
    operators: BTreeMap<String, usize>,
    operands: BTreeMap<String, usize>,
}

impl Tally {
    fn operator(&mut self, key: String) {
        *self.operators.entry(key).or_default() += 1;
    }

    fn operand(&mut self, key: String) {
        *self.operands.entry(key).or_default() += 1;
    }

    fn tokens(&mut self, tokens: &[Token]) {
        for t in tokens {
            if t.is_operator() {
                self.operator(t.key());
            } else if t.is_operand() {
                self.operand(t.key());
            }
        }
    }

    fn counts(&self) -> HalsteadCounts {
        HalsteadCounts::from_counts(
            self.operators.len(),
            self.operands.len(),
            self.operators.values().sum(),
            self.operands.values().sum(),
        )
    }
}

/// Halstead counts over code with comments removed. MUMPS operators are
/// commands, intrinsic and extrinsic functions, symbols and the
/// postconditional colon; ALC operators are opcodes and directives.
pub fn halstead(file: &SourceFile) -> HalsteadCounts {
    let mut tally = Tally::default();
    match file.language {
        LanguageId::Mumps => {
            for line in parsed_mumps(file) {
                for cmd in &line.commands {
                    tally.operator(cmd.name.clone());
                    if !cmd.postcond.is_empty() {
                        tally.operator(":".into());
                        tally.tokens(&cmd.postcond);
                    }
                    tally.tokens(&cmd.args);
                }
            }
        }
        LanguageId::Alc => {
            for st in alc_statements(file) {
                let Some(op) = &st.opcode else { continue };
                tally.operator(op.to_ascii_uppercase());
                for term in alc::operand_terms(&st.operands) {
                    tally.operand(term);
                }
            }
        }
    }
    tally.counts()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub file: String,
    pub language: LanguageId,
    pub control_flow: ControlFlowSummary,
    pub halstead: HalsteadCounts,
    pub maintainability: f64,
    pub loc: usize,
}

pub fn analyze(file: &SourceFile) -> ComplexityReport {
    let control_flow = cyclomatic(file);
    let halstead = halstead(file);
    let loc = file.loc();
    ComplexityReport {
        file: file.path.clone(),
        language: file.language,
        maintainability: maintainability(
            halstead.volume,
            control_flow.cyclomatic as f64,
            loc as f64,
        ),
        control_flow,
        halstead,
        loc,
    }
}

/// Flat per-file record for CSV and JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub file: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub eta1: usize,
    pub eta2: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Ehal")]
    pub ehal: f64,
    #[serde(rename = "MI")]
    pub mi: f64,
    #[serde(rename = "L")]
    pub l: usize,
}

impl From<&ComplexityReport> for ComplexityRow {
    fn from(r: &ComplexityReport) -> Self {
        ComplexityRow {
            file: r.file.clone(),
            m: r.control_flow.cyclomatic,
            eta1: r.halstead.distinct_operators,
            eta2: r.halstead.distinct_operands,
            n1: r.halstead.total_operators,
            n2: r.halstead.total_operands,
            v: r.halstead.volume,
            d: r.halstead.difficulty,
            ehal: r.halstead.effort,
            mi: r.maintainability,
            l: r.loc,
        }
    }
}

pub fn write_csv<W: std::io::Write>(reports: &[ComplexityReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ComplexityRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_file;

    fn mumps(text: &str) -> SourceFile {
        ingest_file("t.m", LanguageId::Mumps, text.as_bytes()).unwrap()
    }

    fn alc(text: &str) -> SourceFile {
        ingest_file("t.asm", LanguageId::Alc, text.as_bytes()).unwrap()
    }

    fn m_of(text: &str) -> usize {
        let cf = cyclomatic(&mumps(text));
        assert_eq!(cf.graph_cyclomatic(), cf.cyclomatic as i64);
        cf.cyclomatic
    }

    #[test]
    fn straight_line_is_one() {
        let cf = cyclomatic(&mumps("EN S X=1\n W X\n Q\n"));
        assert_eq!(cf.cyclomatic, 1);
        assert_eq!(cf.edges + 1, cf.nodes);
        assert_eq!(cf.components, 1);
    }

    #[test]
    fn if_else_is_two() {
        assert_eq!(m_of("EN I X>1 S Y=1\n E  S Y=2\n Q\n"), 2);
        assert_eq!(m_of("EN E  S Y=2\n Q\n"), 2);
    }

    #[test]
    fn postconditionals_plus_components() {
        assert_eq!(m_of("A S:X Y=1\n Q:Y\nB S:Z W=2\n Q\n"), 5);
    }

    #[test]
    fn argument_postconditionals_and_select() {
        assert_eq!(m_of("EN D A:X,B:Y,C\n Q\n"), 3);
        assert_eq!(m_of("EN S X=$S(A:1,B:2,1:3)\n Q\n"), 3);
        assert_eq!(m_of("EN F I=1:1:10 S X=$P(Y,\":\",I)\n Q\n"), 2);
    }

    #[test]
    fn prologue_comments_do_not_add_a_component() {
        assert_eq!(m_of(" ;; header\n ;; more\nEN S X=1\n Q\n"), 1);
        let cf = cyclomatic(&mumps(" ; only comments\n"));
        assert!(cf.empty);
        assert_eq!(cf.cyclomatic, 0);
    }

    #[test]
    fn alc_counts_conditional_branches() {
        let text = "PROG     CSECT\n         LTR   R1,R1\n         BZ    DONE\n         BC    15,DONE\n         BC    8,DONE\n* note\nDONE     BR    R14\n";
        let cf = cyclomatic(&alc(text));
        assert_eq!(cf.decisions, 2);
        assert_eq!(cf.cyclomatic, 3);
        assert_eq!(cf.graph_cyclomatic(), 3);
    }

    #[test]
    fn halstead_hand_counts() {
        let h = halstead(&mumps(" S X=1\n"));
        assert_eq!(
            (
                h.distinct_operators,
                h.distinct_operands,
                h.total_operators,
                h.total_operands
            ),
            (2, 2, 2, 2)
        );
        assert_eq!((h.volume, h.difficulty, h.effort), (8.0, 1.0, 8.0));

        let h = halstead(&mumps(" S X=1 S Y=2\n"));
        assert_eq!(
            (
                h.distinct_operators,
                h.distinct_operands,
                h.total_operators,
                h.total_operands
            ),
            (2, 4, 4, 4)
        );

        let h = halstead(&mumps(" K A K B K C K D\n"));
        assert_eq!(
            (
                h.distinct_operators,
                h.distinct_operands,
                h.total_operators,
                h.total_operands
            ),
            (1, 4, 4, 4)
        );
        assert_eq!(h.difficulty, 0.5);
    }

    #[test]
    fn halstead_ignores_comments_and_handles_empty() {
        assert_eq!(
            halstead(&mumps(" S X=1 ;S Y=2\n")),
            halstead(&mumps(" S X=1\n"))
        );
        let h = halstead(&mumps(""));
        assert_eq!(h.volume, 0.0);
        assert!(h.degenerate);
        let h = halstead(&mumps(" Q\n"));
        assert_eq!((h.distinct_operators, h.difficulty), (1, 0.0));
    }

    #[test]
    fn alc_halstead() {
        let h = halstead(&alc(
            "         LA    R1,1\n         LA    R2,1\n         BR    R14\n",
        ));
        assert_eq!((h.distinct_operators, h.total_operators), (2, 3));
        assert_eq!((h.distinct_operands, h.total_operands), (4, 5));
    }

    #[test]
    fn maintainability_examples() {
        assert_eq!(maintainability(1.0, 0.0, 1.0), 171.0);
        let e = std::f64::consts::E;
        assert!((maintainability(e, 1.0, e) - 149.37).abs() < 1e-9);
        assert!(maintainability(0.2, 0.0, 1.0) == 171.0);
    }

    #[test]
    fn csv_row_has_all_columns() {
        let r = analyze(&mumps("EN S X=1\n Q\n"));
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("file,M,eta1,eta2,N1,N2,V,D,Ehal,MI,L\n"));
    }
}
