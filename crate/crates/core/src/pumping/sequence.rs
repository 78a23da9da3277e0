//! Plain-text pulse-sequence files.
//!
//! ```text
//! # comments run to the end of the line
//! wait_ms 1                                   # optional, before any pulse
//! BurnPit1  +31.85  +24.15  3/2g->1/2e        # chirp scan: name start end target [power]
//! Peak0     burnback 0.0 200 0.3              # burn-back: name burnback center chirp_kHz efficiency [power]
//! Repeat 60: BurnPit5, BurnPit6               # repeat blocks follow the pulse rows
//! Repeat 30 times: BurnPit1-4, BurnPit6-10    # `Name<a>-<b>` expands to Name<a> .. Name<b>
//! ```
//!
//! Fields may be separated by whitespace or commas.

use std::fmt::Write as _;

use super::{PulseKind, PulseSpec};
use crate::levels::TransitionLabel;
use crate::{Error, Result};

pub const DEFAULT_WAIT_MS: f64 = 1.0;

/// The pit-burning pulse table and repetition schedule used for Pr:YSO.
pub const PIT_TABLE: &str = include_str!("../../data/pit_table.seq");

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatBlock {
    pub repeat: u32,
    pub pulses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceProgram {
    pub wait_ms: f64,
    pub blocks: Vec<RepeatBlock>,
}

/// A parsed sequence file: the pulse table plus the order it is played in.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub pulses: Vec<PulseSpec>,
    pub program: SequenceProgram,
}

impl PulseSequence {
    pub fn pulse(&self, name: &str) -> Option<&PulseSpec> {
        self.pulses.iter().find(|p| p.name == name)
    }

    /// Every pulse in playing order.
    pub fn schedule(&self) -> impl Iterator<Item = &PulseSpec> + '_ {
        self.program.blocks.iter().flat_map(move |block| {
            (0..block.repeat).flat_map(move |_| {
                block
                    .pulses
                    .iter()
                    .map(move |name| self.pulse(name).expect("validated at parse time"))
            })
        })
    }

    pub fn schedule_len(&self) -> usize {
        self.program
            .blocks
            .iter()
            .map(|b| b.repeat as usize * b.pulses.len())
            .sum()
    }

    /// Keep only the blocks and block entries accepted by `keep`, dropping
    /// blocks that end up empty.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        let blocks = self
            .program
            .blocks
            .iter()
            .map(|b| RepeatBlock {
                repeat: b.repeat,
                pulses: b.pulses.iter().filter(|n| keep(n)).cloned().collect(),
            })
            .filter(|b| !b.pulses.is_empty())
            .collect();
        Self {
            pulses: self.pulses.clone(),
            program: SequenceProgram {
                wait_ms: self.program.wait_ms,
                blocks,
            },
        }
    }

    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "wait_ms {}", self.program.wait_ms);
        for p in &self.pulses {
            match &p.kind {
                PulseKind::ChirpScan {
                    nu_start,
                    nu_end,
                    target,
                    relative_power,
                } => {
                    let _ = writeln!(out, "{} {nu_start} {nu_end} {target} {relative_power}", p.name);
                }
                PulseKind::Burnback {
                    center,
                    chirp_width_khz,
                    transfer_efficiency,
                    relative_power,
                } => {
                    let _ = writeln!(
                        out,
                        "{} burnback {center} {chirp_width_khz} {transfer_efficiency} {relative_power}",
                        p.name
                    );
                }
            }
        }
        for b in &self.program.blocks {
            let _ = writeln!(out, "Repeat {}: {}", b.repeat, b.pulses.join(", "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str, offset: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        let sep = ch.is_whitespace() || ch == ',';
        match (sep, start) {
            (true, Some(s)) => {
                out.push(Token {
                    text: &line[s..i],
                    column: offset + line[..s].chars().count() + 1,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: offset + line[..s].chars().count() + 1,
        });
    }
    out
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn number(&self, tok: Token<'_>, what: &str) -> Result<f64> {
        match tok.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(tok.column, format!("malformed {what} `{}`", tok.text))),
        }
    }

    fn optional_power(&self, tok: Option<&Token<'_>>) -> Result<f64> {
        let Some(&tok) = tok else { return Ok(1.0) };
        let power = self.number(tok, "relative power")?;
        if power < 0.0 {
            return Err(self.err(tok.column, "relative power must be >= 0"));
        }
        Ok(power)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

fn parse_pulse(ctx: &LineCtx, toks: &[Token<'_>]) -> Result<PulseSpec> {
    let name = toks[0];
    if !is_identifier(name.text) {
        return Err(ctx.err(name.column, format!("invalid pulse name `{}`", name.text)));
    }
    let need = |n: usize, what: &str| {
        if toks.len() < n {
            let col = toks.last().map(|t| t.column + t.text.len()).unwrap_or(1);
            Err(ctx.err(col, format!("missing {what}")))
        } else if toks.len() > n + 1 {
            Err(ctx.err(toks[n + 1].column, "unexpected trailing field"))
        } else {
            Ok(())
        }
    };
    let kind = if toks.get(1).map(|t| t.text.eq_ignore_ascii_case("burnback")) == Some(true) {
        need(5, "burn-back center, chirp width and efficiency")?;
        let center = ctx.number(toks[2], "center frequency")?;
        let chirp_width_khz = ctx.number(toks[3], "chirp width")?;
        if chirp_width_khz <= 0.0 {
            return Err(ctx.err(toks[3].column, "chirp width must be positive"));
        }
        let transfer_efficiency = ctx.number(toks[4], "transfer efficiency")?;
        if !(0.0..=1.0).contains(&transfer_efficiency) {
            return Err(ctx.err(toks[4].column, "transfer efficiency must lie in [0, 1]"));
        }
        PulseKind::Burnback {
            center,
            chirp_width_khz,
            transfer_efficiency,
            relative_power: ctx.optional_power(toks.get(5))?,
        }
    } else {
        need(4, "start frequency, end frequency and target transition")?;
        let nu_start = ctx.number(toks[1], "start frequency")?;
        let nu_end = ctx.number(toks[2], "end frequency")?;
        if nu_start == nu_end {
            return Err(ctx.err(toks[2].column, "scan start and end coincide"));
        }
        let target: TransitionLabel = toks[3]
            .text
            .parse()
            .map_err(|_| ctx.err(toks[3].column, format!("unknown transition label `{}`", toks[3].text)))?;
        PulseKind::ChirpScan {
            nu_start,
            nu_end,
            target,
            relative_power: ctx.optional_power(toks.get(4))?,
        }
    };
    Ok(PulseSpec {
        name: name.text.to_string(),
        kind,
    })
}

/// Resolve a name or a `Prefix<a>-<b>` range against the pulse table.
fn resolve(ctx: &LineCtx, tok: Token<'_>, pulses: &[PulseSpec]) -> Result<Vec<String>> {
    let defined = |n: &str| pulses.iter().any(|p| p.name == n);
    if defined(tok.text) {
        return Ok(vec![tok.text.to_string()]);
    }
    let undefined = || ctx.err(tok.column, format!("undefined pulse `{}`", tok.text));
    let (left, right) = tok.text.rsplit_once('-').ok_or_else(undefined)?;
    let digits = left.len() - left.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return Err(undefined());
    }
    let (prefix, first) = left.split_at(left.len() - digits);
    let (Ok(first), Ok(last)) = (first.parse::<u32>(), right.parse::<u32>()) else {
        return Err(undefined());
    };
    if last < first {
        return Err(ctx.err(tok.column, format!("empty pulse range `{}`", tok.text)));
    }
    (first..=last)
        .map(|i| {
            let name = format!("{prefix}{i}");
            if defined(&name) {
                Ok(name)
            } else {
                Err(ctx.err(tok.column, format!("undefined pulse `{name}` in range `{}`", tok.text)))
            }
        })
        .collect()
}

fn parse_repeat(ctx: &LineCtx, line: &str, pulses: &[PulseSpec]) -> Result<RepeatBlock> {
    let Some(colon) = line.find(':') else {
        return Err(ctx.err(line.len() + 1, "expected `:` after the repeat count"));
    };
    let head = tokens(&line[..colon], 0);
    let count = head
        .get(1)
        .ok_or_else(|| ctx.err(colon + 1, "missing repeat count"))?;
    let repeat = match count.text.parse::<u32>() {
        Ok(n) if n >= 1 => n,
        _ => return Err(ctx.err(count.column, format!("repeat count must be a positive integer, got `{}`", count.text))),
    };
    match head.get(2) {
        None => {}
        Some(t) if head.len() == 3 && t.text.eq_ignore_ascii_case("times") => {}
        Some(t) => return Err(ctx.err(t.column, format!("unexpected `{}`", t.text))),
    }
    let offset = line[..colon + 1].chars().count();
    let names = tokens(&line[colon + 1..], offset);
    if names.is_empty() {
        return Err(ctx.err(colon + 2, "repeat block lists no pulses"));
    }
    let mut out = Vec::new();
    for tok in names {
        out.extend(resolve(ctx, tok, pulses)?);
    }
    Ok(RepeatBlock { repeat, pulses: out })
}

pub fn parse_sequence(text: &str) -> Result<PulseSequence> {
    let mut pulses: Vec<PulseSpec> = Vec::new();
    let mut blocks = Vec::new();
    let mut wait_ms = None;
    for (n, raw) in text.lines().enumerate() {
        let ctx = LineCtx { line: n + 1 };
        let line = raw.split('#').next().unwrap_or("");
        let toks = tokens(line, 0);
        let Some(first) = toks.first() else { continue };
        if first.text.eq_ignore_ascii_case("repeat") {
            if pulses.is_empty() {
                return Err(ctx.err(first.column, "repeat block before any pulse definition"));
            }
            blocks.push(parse_repeat(&ctx, line, &pulses)?);
        } else if first.text.eq_ignore_ascii_case("wait_ms") {
            if !pulses.is_empty() || wait_ms.is_some() {
                return Err(ctx.err(first.column, "`wait_ms` belongs in the header, once"));
            }
            let tok = toks.get(1).ok_or_else(|| ctx.err(first.column, "missing wait time"))?;
            let wait = ctx.number(*tok, "wait time")?;
            if wait < 0.0 {
                return Err(ctx.err(tok.column, "wait time must be >= 0"));
            }
            wait_ms = Some(wait);
        } else {
            if !blocks.is_empty() {
                return Err(ctx.err(first.column, "pulse definitions must precede repeat blocks"));
            }
            let pulse = parse_pulse(&ctx, &toks)?;
            if pulses.iter().any(|p| p.name == pulse.name) {
                return Err(ctx.err(first.column, format!("duplicate pulse definition `{}`", pulse.name)));
            }
            pulses.push(pulse);
        }
    }
    if pulses.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            column: 1,
            message: "no pulses defined".into(),
        });
    }
    Ok(PulseSequence {
        pulses,
        program: SequenceProgram {
            wait_ms: wait_ms.unwrap_or(DEFAULT_WAIT_MS),
            blocks,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_err(text: &str) -> (usize, usize, String) {
        match parse_sequence(text) {
            Err(Error::Parse { line, column, message }) => (line, column, message),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn table_row() {
        let seq = parse_sequence("BurnPit1 +31.85 +24.15 3/2g->1/2e\n").unwrap();
        assert_eq!(
            seq.pulses[0],
            PulseSpec {
                name: "BurnPit1".into(),
                kind: PulseKind::ChirpScan {
                    nu_start: 31.85,
                    nu_end: 24.15,
                    target: "3/2g->1/2e".parse().unwrap(),
                    relative_power: 1.0,
                },
            }
        );
        assert_eq!(seq.program.wait_ms, 1.0);
    }

    #[test]
    fn empty_input() {
        let (_, _, msg) = parse_err("");
        assert_eq!(msg, "no pulses defined");
        let (_, _, msg) = parse_err("# only a comment\n\n");
        assert_eq!(msg, "no pulses defined");
    }

    #[test]
    fn repeat_block() {
        let text = "BurnPit5 -16.85 -9.15 5/2g->5/2e\nBurnPit6 -8.85 -1.15 5/2g->1/2e\nRepeat 60: BurnPit5, BurnPit6\n";
        let seq = parse_sequence(text).unwrap();
        assert_eq!(
            seq.program.blocks,
            vec![RepeatBlock {
                repeat: 60,
                pulses: vec!["BurnPit5".into(), "BurnPit6".into()],
            }]
        );
        assert_eq!(seq.schedule_len(), 120);
    }

    #[test]
    fn bundled_table() {
        let seq = parse_sequence(PIT_TABLE).unwrap();
        assert_eq!(seq.pulses.len(), 10);
        let counts: Vec<_> = seq.program.blocks.iter().map(|b| (b.repeat, b.pulses.len())).collect();
        assert_eq!(counts, vec![(60, 2), (30, 9), (20, 5), (30, 4)]);
        assert_eq!(seq.schedule_len(), 610);
        assert_eq!(seq.program.blocks[1].pulses[4], "BurnPit6");
        // Pulses 2/4 and 3/7 are the same scan.
        assert_eq!(seq.pulse("BurnPit2").unwrap().kind, seq.pulse("BurnPit4").unwrap().kind);
        assert_eq!(seq.pulse("BurnPit3").unwrap().kind, seq.pulse("BurnPit7").unwrap().kind);
    }

    #[test]
    fn error_positions() {
        let (line, col, msg) = parse_err("A 1 2 3/2g->1/2e\nB 1 x 3/2g->1/2e\n");
        assert_eq!((line, col), (2, 5));
        assert!(msg.contains("malformed"), "{msg}");

        let (line, col, msg) = parse_err("A 1 2 9/2g->1/2e\n");
        assert_eq!((line, col), (1, 7));
        assert!(msg.contains("unknown transition"), "{msg}");

        let (line, col, msg) = parse_err("A 1 2 3/2g->1/2e\nRepeat 3: A, B\n");
        assert_eq!((line, col), (2, 14));
        assert!(msg.contains("undefined pulse `B`"), "{msg}");

        let (_, _, msg) = parse_err("A 1 2 3/2g->1/2e\nA 3 4 3/2g->1/2e\n");
        assert!(msg.contains("duplicate"), "{msg}");

        let (_, _, msg) = parse_err("A 1 2 3/2g->1/2e\nRepeat 0: A\n");
        assert!(msg.contains("positive integer"), "{msg}");

        let (_, _, msg) = parse_err("A 1 2 3/2g->1/2e\nRepeat 2: A\nB 1 2 3/2g->1/2e\n");
        assert!(msg.contains("precede"), "{msg}");

        let (_, _, msg) = parse_err("P burnback 0 200 1.5\n");
        assert!(msg.contains("[0, 1]"), "{msg}");

        let (_, _, msg) = parse_err("A 1 1 3/2g->1/2e\n");
        assert!(msg.contains("coincide"), "{msg}");
    }

    #[test]
    fn ranges_and_commas() {
        let text = "P1,1,2,1/2g->1/2e\nP2 1 2 1/2g->1/2e\nP3 1 2 1/2g->1/2e 0.5\nRepeat 2 times: P1-3\n";
        let seq = parse_sequence(text).unwrap();
        assert_eq!(seq.program.blocks[0].pulses, vec!["P1", "P2", "P3"]);
        assert!(parse_sequence("P1 1 2 1/2g->1/2e\nRepeat 1: P1-2\n").is_err());
    }

    #[test]
    fn canonical_form_is_stable() {
        let seq = parse_sequence(PIT_TABLE).unwrap();
        let canon = seq.to_canonical_string();
        let again = parse_sequence(&canon).unwrap();
        assert_eq!(again, seq);
        assert_eq!(again.to_canonical_string(), canon);
    }

    fn arb_pulse(i: usize) -> impl Strategy<Value = PulseSpec> {
        let chirp = (-50.0f64..50.0, 0.01f64..20.0, 0usize..9, 0.0f64..3.0).prop_map(move |(a, w, t, p)| {
            PulseSpec {
                name: format!("P{i}"),
                kind: PulseKind::ChirpScan {
                    nu_start: a,
                    nu_end: a + w,
                    target: TransitionLabel::all().nth(t).unwrap(),
                    relative_power: p,
                },
            }
        });
        let burn = (-5.0f64..5.0, 1.0f64..500.0, 0.0f64..=1.0, 0.0f64..2.0).prop_map(move |(c, w, e, p)| {
            PulseSpec {
                name: format!("P{i}"),
                kind: PulseKind::Burnback {
                    center: c,
                    chirp_width_khz: w,
                    transfer_efficiency: e,
                    relative_power: p,
                },
            }
        });
        prop_oneof![chirp, burn]
    }

    fn arb_sequence() -> impl Strategy<Value = PulseSequence> {
        (1usize..6)
            .prop_flat_map(|n| {
                let pulses: Vec<_> = (0..n).map(arb_pulse).collect();
                let blocks = prop::collection::vec(
                    (1u32..100, prop::collection::vec(0..n, 1..6)),
                    0..4,
                );
                (pulses, blocks, 0.0f64..10.0)
            })
            .prop_map(|(pulses, blocks, wait_ms)| PulseSequence {
                pulses,
                program: SequenceProgram {
                    wait_ms,
                    blocks: blocks
                        .into_iter()
                        .map(|(repeat, idx)| RepeatBlock {
                            repeat,
                            pulses: idx.into_iter().map(|i| format!("P{i}")).collect(),
                        })
                        .collect(),
                },
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(seq in arb_sequence()) {
            let parsed = parse_sequence(&seq.to_canonical_string()).unwrap();
            prop_assert_eq!(parsed, seq);
        }
    }
}
