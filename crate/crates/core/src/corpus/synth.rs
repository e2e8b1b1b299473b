//! Seeded synthetic source files for tests, benches and offline runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LanguageId;

const WORDS: &[&str] = &[
    "set", "the", "patient", "pointer", "loop", "over", "entries", "return", "value", "check",
    "flag", "file", "index", "kill", "temp", "array", "build", "output", "line", "total", "save",
    "register", "address", "count",
];

const MUMPS_COMMANDS: &[&str] = &[
    "S X=1",
    "S Y=X+2",
    "W !,\"Name;\",NM",
    "I X>1 S Y=2",
    "Q",
    "D ^XLFDT",
    "K X,Y",
    "S @REF=1",
    "F I=1:1:10 S T=T+I",
    "S:X=1 Y=$P(Z,\"^\",2)",
    "G EXIT",
    "N A,B",
    "S T=$$FMT^XLFDT(NOW)",
    "E  W \"none\"",
    "X CODE",
];

const ALC_OPCODES: &[(&str, &str)] = &[
    ("L", "R1,FIELD"),
    ("ST", "R2,SAVE"),
    ("LA", "R3,0(R1)"),
    ("BR", "R14"),
    ("BE", "DONE"),
    ("BNE", "LOOP"),
    ("MVC", "OUT(8),IN"),
    ("CLC", "A(4),B"),
    ("AR", "R1,R2"),
    ("SR", "R15,R15"),
    ("B", "NEXT"),
    ("BAL", "R14,SUB"),
    ("DC", "F'0'"),
    ("DS", "CL8"),
];

fn words(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn label(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..=6);
    (0..len)
        .map(|i| {
            if i == 0 {
                rng.random_range(b'A'..=b'Z') as char
            } else {
                *b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
                    .choose(rng)
                    .expect("non-empty") as char
            }
        })
        .collect()
}

fn eol(rng: &mut ChaCha8Rng, crlf: bool) -> &'static str {
    if crlf && rng.random_bool(0.5) {
        "\r\n"
    } else {
        "\n"
    }
}

/// A MUMPS routine of `lines` lines with labels, dotted blocks, block and
/// inline comments, and occasional CRLF endings.
pub fn mumps_file(seed: u64, lines: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crlf = rng.random_bool(0.2);
    let mut out = format!(
        "{} ;{}{}",
        label(&mut rng),
        words(&mut rng, 6),
        eol(&mut rng, crlf)
    );
    for _ in 1..lines {
        let roll: f64 = rng.random();
        let mut line = String::new();
        if roll < 0.1 {
            line.push_str(&label(&mut rng));
        }
        line.push(if rng.random_bool(0.1) { '\t' } else { ' ' });
        if roll < 0.2 {
            line.push_str(if rng.random_bool(0.5) { ";;" } else { ";" });
            line.push_str(&words(&mut rng, 8));
        } else {
            if rng.random_bool(0.15) {
                line.push_str(". ");
            }
            let n = rng.random_range(1..=4);
            let cmds: Vec<&str> = (0..n)
                .map(|_| *MUMPS_COMMANDS.choose(&mut rng).expect("non-empty"))
                .collect();
            line.push_str(&cmds.join(" "));
            if rng.random_bool(0.35) {
                line.push_str(if rng.random_bool(0.7) { " ; " } else { "  ;" });
                line.push_str(&words(&mut rng, 6));
            }
        }
        out.push_str(&line);
        out.push_str(eol(&mut rng, crlf));
    }
    if rng.random_bool(0.2) {
        out.truncate(out.trim_end_matches(['\r', '\n']).len());
    }
    out
}

fn pad_to(line: &mut String, col: usize) {
    while line.len() < col {
        line.push(' ');
    }
}

/// An assembler source of `lines` lines in fixed columns: full-line `*`
/// comments, statements with remarks, continuation lines and sequence
/// numbers in columns 73-80.
pub fn alc_file(seed: u64, lines: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numbered = rng.random_bool(0.5);
    let mut out = String::new();
    let mut i = 0;
    while i < lines {
        i += 1;
        let roll: f64 = rng.random();
        let mut line = String::new();
        let mut continued = false;
        if roll < 0.25 {
            line.push_str(if rng.random_bool(0.9) { "*" } else { ".*" });
            line.push(' ');
            line.push_str(&words(&mut rng, 9));
            line.truncate(71);
        } else if roll < 0.3 {
            line.push('*');
        } else {
            if rng.random_bool(0.25) {
                line.push_str(&label(&mut rng));
            }
            pad_to(&mut line, 9);
            let (op, operands) = *ALC_OPCODES.choose(&mut rng).expect("non-empty");
            line.push_str(op);
            pad_to(&mut line, 15);
            line.push_str(operands);
            if rng.random_bool(0.6) {
                line.push_str("  ");
                line.push_str(&words(&mut rng, 6));
                line.truncate(71);
            }
            if i < lines && rng.random_bool(0.08) {
                pad_to(&mut line, 71);
                line.push('X');
                continued = true;
            }
        }
        if numbered {
            pad_to(&mut line, 72);
            line.push_str(&format!("{:08}", i * 10));
        }
        out.push_str(&line);
        out.push('\n');
        if continued {
            i += 1;
            let mut cont = String::new();
            pad_to(&mut cont, 15);
            cont.push_str("R5,R6");
            if rng.random_bool(0.5) {
                cont.push_str("  ");
                cont.push_str(&words(&mut rng, 5));
                cont.truncate(71);
            }
            if numbered {
                pad_to(&mut cont, 72);
                cont.push_str(&format!("{:08}", i * 10));
            }
            out.push_str(&cont);
            out.push('\n');
        }
    }
    out
}

pub fn file(language: LanguageId, seed: u64, lines: usize) -> String {
    match language {
        LanguageId::Mumps => mumps_file(seed, lines),
        LanguageId::Alc => alc_file(seed, lines),
    }
}
