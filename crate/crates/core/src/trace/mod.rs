//! Line-based workload traces.
//!
//! ```text
//! # comment
//! DOMAIN 3                 switch the current domain (decimal, 0..=255)
//! L 0x1040                 load in the current domain
//! L 1040 2                 load in domain 2 (the 0x prefix is optional)
//! S 0x2000                 store in the current domain
//! S 0x2000 2 ab            store byte 0xab in domain 2
//! SPEC_BEGIN               open a mispredicted-branch window
//! SPEC_END squash          close it: squash (or `commit`) everything inside
//! ```
//!
//! Addresses are hexadecimal and below 2^48. Windows do not nest. Tokens
//! are separated by whitespace; keywords are case-sensitive.

mod replay;
mod synth;

use std::fmt;

use thiserror::Error;

pub use replay::{replay, AccessRecord, ReplayConfig, ReplayError, ReplayStats, Replayer};
pub use synth::{synth_trace, SynthParams, SynthProfile, SYNTH_DOMAIN};

use crate::addr::{Address, DomainId, ADDRESS_BITS};

pub const MAX_DOMAIN: u16 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecOutcome {
    Commit,
    Squash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Load {
        addr: Address,
        domain: Option<DomainId>,
    },
    Store {
        addr: Address,
        domain: Option<DomainId>,
        value: Option<u8>,
    },
    SpecBegin,
    SpecEnd(SpecOutcome),
    DomainSwitch(DomainId),
    Comment(String),
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Load { addr, domain } => {
                write!(f, "L {addr}")?;
                if let Some(d) = domain {
                    write!(f, " {}", d.get())?;
                }
                Ok(())
            }
            TraceEvent::Store { addr, domain, value } => {
                write!(f, "S {addr}")?;
                match (domain, value) {
                    (Some(d), Some(v)) => write!(f, " {} {v:02x}", d.get()),
                    (Some(d), None) => write!(f, " {}", d.get()),
                    (None, Some(_)) => panic!("a store value needs an explicit domain in text form"),
                    (None, None) => Ok(()),
                }
            }
            TraceEvent::SpecBegin => f.write_str("SPEC_BEGIN"),
            TraceEvent::SpecEnd(SpecOutcome::Commit) => f.write_str("SPEC_END commit"),
            TraceEvent::SpecEnd(SpecOutcome::Squash) => f.write_str("SPEC_END squash"),
            TraceEvent::DomainSwitch(d) => write!(f, "DOMAIN {}", d.get()),
            TraceEvent::Comment(c) => write!(f, "#{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedEvent {
    pub line: usize,
    pub event: TraceEvent,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("unknown directive {0:?}")]
    UnknownDirective(String),
    #[error("bad hexadecimal address {0:?}")]
    BadAddress(String),
    #[error("address {0:#x} does not fit in 48 bits")]
    AddressTooWide(u64),
    #[error("bad domain {0:?} (expected a decimal id up to 255)")]
    BadDomain(String),
    #[error("bad store value {0:?} (expected one hexadecimal byte)")]
    BadValue(String),
    #[error("{0} expects {1}")]
    Arity(&'static str, &'static str),
    #[error("SPEC_END outcome must be `commit` or `squash`, got {0:?}")]
    BadOutcome(String),
    #[error("SPEC_BEGIN inside an open window (opened on line {0})")]
    NestedWindow(usize),
    #[error("SPEC_END without SPEC_BEGIN")]
    UnopenedWindow,
    #[error("window opened here is never closed")]
    UnterminatedWindow,
    #[error("DOMAIN switch inside a speculation window")]
    DomainSwitchInWindow,
}

fn parse_addr(tok: &str) -> Result<Address, ParseErrorKind> {
    let digits = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")).unwrap_or(tok);
    let v = u64::from_str_radix(digits, 16).map_err(|_| ParseErrorKind::BadAddress(tok.to_string()))?;
    if v >> ADDRESS_BITS != 0 {
        return Err(ParseErrorKind::AddressTooWide(v));
    }
    Ok(Address::from_raw(v))
}

fn parse_domain(tok: &str) -> Result<DomainId, ParseErrorKind> {
    match tok.parse::<u16>() {
        Ok(v) if v <= MAX_DOMAIN => Ok(DomainId::new(v)),
        _ => Err(ParseErrorKind::BadDomain(tok.to_string())),
    }
}

fn parse_value(tok: &str) -> Result<u8, ParseErrorKind> {
    let digits = tok.strip_prefix("0x").unwrap_or(tok);
    u8::from_str_radix(digits, 16).map_err(|_| ParseErrorKind::BadValue(tok.to_string()))
}

fn parse_line(text: &str) -> Result<Option<TraceEvent>, ParseErrorKind> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    if let Some(c) = trimmed.strip_prefix('#') {
        return Ok(Some(TraceEvent::Comment(c.to_string())));
    }
    let toks: Vec<&str> = trimmed.split_whitespace().collect();
    let ev = match toks.as_slice() {
        ["L", addr] => TraceEvent::Load {
            addr: parse_addr(addr)?,
            domain: None,
        },
        ["L", addr, dom] => TraceEvent::Load {
            addr: parse_addr(addr)?,
            domain: Some(parse_domain(dom)?),
        },
        ["L", ..] => return Err(ParseErrorKind::Arity("L", "an address and an optional domain")),
        ["S", addr] => TraceEvent::Store {
            addr: parse_addr(addr)?,
            domain: None,
            value: None,
        },
        ["S", addr, dom] => TraceEvent::Store {
            addr: parse_addr(addr)?,
            domain: Some(parse_domain(dom)?),
            value: None,
        },
        ["S", addr, dom, val] => TraceEvent::Store {
            addr: parse_addr(addr)?,
            domain: Some(parse_domain(dom)?),
            value: Some(parse_value(val)?),
        },
        ["S", ..] => {
            return Err(ParseErrorKind::Arity(
                "S",
                "an address, optional domain and optional value",
            ))
        }
        ["SPEC_BEGIN"] => TraceEvent::SpecBegin,
        ["SPEC_BEGIN", ..] => return Err(ParseErrorKind::Arity("SPEC_BEGIN", "no arguments")),
        ["SPEC_END", "commit"] => TraceEvent::SpecEnd(SpecOutcome::Commit),
        ["SPEC_END", "squash"] => TraceEvent::SpecEnd(SpecOutcome::Squash),
        ["SPEC_END", other] => return Err(ParseErrorKind::BadOutcome(other.to_string())),
        ["SPEC_END", ..] => return Err(ParseErrorKind::Arity("SPEC_END", "`commit` or `squash`")),
        ["DOMAIN", dom] => TraceEvent::DomainSwitch(parse_domain(dom)?),
        ["DOMAIN", ..] => return Err(ParseErrorKind::Arity("DOMAIN", "one domain id")),
        [other, ..] => return Err(ParseErrorKind::UnknownDirective(other.to_string())),
        [] => unreachable!("blank lines handled above"),
    };
    Ok(Some(ev))
}

/// Parses a whole trace, checking window structure. Line numbers are 1-based.
pub fn parse(text: &str) -> Result<Vec<LocatedEvent>, ParseError> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |kind| ParseError { line, kind };
        let Some(event) = parse_line(raw).map_err(err)? else {
            continue;
        };
        match event {
            TraceEvent::SpecBegin => {
                if let Some(at) = open {
                    return Err(err(ParseErrorKind::NestedWindow(at)));
                }
                open = Some(line);
            }
            TraceEvent::SpecEnd(_) => {
                if open.take().is_none() {
                    return Err(err(ParseErrorKind::UnopenedWindow));
                }
            }
            TraceEvent::DomainSwitch(_) if open.is_some() => {
                return Err(err(ParseErrorKind::DomainSwitchInWindow));
            }
            _ => {}
        }
        out.push(LocatedEvent { line, event });
    }
    if let Some(line) = open {
        return Err(ParseError {
            line,
            kind: ParseErrorKind::UnterminatedWindow,
        });
    }
    Ok(out)
}

/// Renders events in the text format, one per line.
pub fn format_trace<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(v: u64) -> Address {
        Address::from_raw(v)
    }

    fn events(text: &str) -> Vec<TraceEvent> {
        parse(text).unwrap().into_iter().map(|e| e.event).collect()
    }

    #[test]
    fn load_with_domain() {
        assert_eq!(
            events("L 0x1040 1"),
            vec![TraceEvent::Load {
                addr: a(0x1040),
                domain: Some(DomainId::new(1))
            }]
        );
    }

    #[test]
    fn one_window() {
        let ev = events("SPEC_BEGIN\nL 40\nSPEC_END squash\n");
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[2], TraceEvent::SpecEnd(SpecOutcome::Squash));
    }

    #[test]
    fn wide_address_rejected() {
        let e = parse("# header\nL 0x1000000000000").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(e.kind, ParseErrorKind::AddressTooWide(1 << 48));
        assert!(parse("L 0xffffffffffff").is_ok());
    }

    #[test]
    fn structural_errors_carry_line_numbers() {
        let e = parse("SPEC_BEGIN\nL 0\nSPEC_BEGIN\n").unwrap_err();
        assert_eq!((e.line, e.kind), (3, ParseErrorKind::NestedWindow(1)));
        let e = parse("L 0\nSPEC_END commit").unwrap_err();
        assert_eq!((e.line, e.kind), (2, ParseErrorKind::UnopenedWindow));
        let e = parse("L 0\nSPEC_BEGIN\nL 40").unwrap_err();
        assert_eq!((e.line, e.kind), (2, ParseErrorKind::UnterminatedWindow));
        let e = parse("X 0").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownDirective("X".into()));
        assert!(parse("SPEC_END maybe").is_err());
        assert!(parse("L zz").is_err());
        assert!(parse("L 0 256").is_err());
    }

    #[test]
    fn store_forms() {
        let ev = events("S 10\nS 10 3\nS 10 3 ff");
        assert_eq!(
            ev[2],
            TraceEvent::Store {
                addr: a(0x10),
                domain: Some(DomainId::new(3)),
                value: Some(0xff)
            }
        );
    }

    #[test]
    fn format_round_trips() {
        let text = "# hi\nDOMAIN 4\nL 0x40\nS 0x80 4 0a\nSPEC_BEGIN\nL 0xc0 2\nSPEC_END commit\n";
        let ev = events(text);
        assert_eq!(format_trace(&ev), text);
    }
}
