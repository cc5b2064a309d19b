//! SMILES-subset parser.
//!
//! Supported: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I and
//! the aromatic lowercase forms b, c, n, o, p, s), bracket atoms with
//! element / H-count / charge / atom-map number, bond symbols `- = # :`,
//! ring closures (digits and `%nn`), branches, and dot-separated
//! components. The full grammar is published in `docs/smiles.md`.
//!
//! Not supported: stereochemistry, isotopes, wildcard atoms. Aromatic
//! atoms are accepted without kekulization; a bond with no symbol
//! between two aromatic atoms is aromatic, otherwise single.
//!
//! Atom indices follow token order. Every error carries the byte
//! offset of the offending input.

use super::valence::valence_violations;
use super::{AtomRecord, BondType, Element, Molecule};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("smiles parse error at byte {pos}: {kind}")]
pub struct SmilesError {
    pub pos: usize,
    pub kind: SmilesErrorKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("unclosed ring bond {0}")]
    UnclosedRing(u16),
    #[error("ring bond {0} closes onto its opening atom")]
    RingSelfBond(u16),
    #[error("ring bond {0} opened and closed with conflicting bond symbols")]
    RingBondConflict(u16),
    #[error("ring bond {0} duplicates an existing bond")]
    RingDuplicateBond(u16),
    #[error("unclosed branch")]
    UnclosedBranch,
    #[error("unmatched `)`")]
    UnmatchedParen,
    #[error("branch opened before any atom")]
    BranchBeforeAtom,
    #[error("empty branch")]
    EmptyBranch,
    #[error("bond symbol with nothing to bond")]
    DanglingBond,
    #[error("formal charge {0} outside [-2, +2]")]
    ChargeOutOfRange(i32),
    #[error("hydrogen count {0} outside [0, 4]")]
    HydrogenCountOutOfRange(u32),
    #[error("atom-map number must be positive")]
    ZeroMapNumber,
    #[error("missing `]`")]
    UnclosedBracket,
    #[error("valence exceeded on atom {atom}: {used} used, capacity {cap}")]
    ValenceExceeded { atom: usize, used: u32, cap: u32 },
}

fn err(pos: usize, kind: SmilesErrorKind) -> SmilesError {
    SmilesError { pos, kind }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<AtomRecord>,
    atom_pos: Vec<usize>,
    aromatic: Vec<bool>,
    bonds: Vec<(usize, usize, BondType)>,
    bonded: HashMap<(usize, usize), ()>,
    prev: Option<usize>,
    branch_stack: Vec<usize>,
    pending_bond: Option<BondType>,
    // ring digit -> (open atom, explicit bond symbol, open position)
    open_rings: HashMap<u16, (usize, Option<BondType>, usize)>,
}

/// Parses a SMILES string into a [`Molecule`]. The result satisfies
/// all molecule invariants and passes the valence check.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.is_empty() {
        return Err(err(0, SmilesErrorKind::Empty));
    }
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        atom_pos: Vec::new(),
        aromatic: Vec::new(),
        bonds: Vec::new(),
        bonded: HashMap::new(),
        prev: None,
        branch_stack: Vec::new(),
        pending_bond: None,
        open_rings: HashMap::new(),
    };
    p.run()?;
    p.finish()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'[' => {
                    let start = self.pos;
                    self.pos += 1;
                    let (record, aromatic) = self.bracket_atom(start)?;
                    self.push_atom(record, aromatic, start)?;
                }
                b'A'..=b'Z' => self.organic_atom()?,
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => self.organic_atom()?,
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending_bond.is_some() || self.prev.is_none() {
                        return Err(err(self.pos, SmilesErrorKind::DanglingBond));
                    }
                    self.pending_bond = Some(match c {
                        b'-' => BondType::Single,
                        b'=' => BondType::Double,
                        b'#' => BondType::Triple,
                        _ => BondType::Aromatic,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let digit = (c - b'0') as u16;
                    let at = self.pos;
                    self.pos += 1;
                    self.ring_digit(digit, at)?;
                }
                b'%' => {
                    let at = self.pos;
                    self.pos += 1;
                    let d1 = self.bump().filter(u8::is_ascii_digit);
                    let d2 = self.bump().filter(u8::is_ascii_digit);
                    match (d1, d2) {
                        (Some(a), Some(b)) => {
                            self.ring_digit(((a - b'0') as u16) * 10 + (b - b'0') as u16, at)?
                        }
                        _ => return Err(err(at, SmilesErrorKind::UnexpectedChar('%'))),
                    }
                }
                b'(' => {
                    let at = self.pos;
                    self.pos += 1;
                    match self.prev {
                        Some(a) => self.branch_stack.push(a),
                        None => return Err(err(at, SmilesErrorKind::BranchBeforeAtom)),
                    }
                    if self.peek() == Some(b')') {
                        return Err(err(at, SmilesErrorKind::EmptyBranch));
                    }
                }
                b')' => {
                    let at = self.pos;
                    self.pos += 1;
                    if self.pending_bond.is_some() {
                        return Err(err(at, SmilesErrorKind::DanglingBond));
                    }
                    match self.branch_stack.pop() {
                        Some(a) => self.prev = Some(a),
                        None => return Err(err(at, SmilesErrorKind::UnmatchedParen)),
                    }
                }
                b'.' => {
                    let at = self.pos;
                    self.pos += 1;
                    if self.pending_bond.is_some() || self.prev.is_none() {
                        return Err(err(at, SmilesErrorKind::DanglingBond));
                    }
                    self.prev = None;
                }
                other => {
                    // report multi-byte characters whole
                    let ch = std::str::from_utf8(&self.src[self.pos..])
                        .ok()
                        .and_then(|s| s.chars().next())
                        .unwrap_or(other as char);
                    return Err(err(self.pos, SmilesErrorKind::UnexpectedChar(ch)));
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Molecule, SmilesError> {
        if self.pending_bond.is_some() {
            return Err(err(self.pos, SmilesErrorKind::DanglingBond));
        }
        if !self.branch_stack.is_empty() {
            return Err(err(self.pos, SmilesErrorKind::UnclosedBranch));
        }
        if let Some((&digit, &(_, _, at))) = self.open_rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(err(at, SmilesErrorKind::UnclosedRing(digit)));
        }
        if self.atoms.is_empty() {
            return Err(err(0, SmilesErrorKind::Empty));
        }
        let atom_pos = std::mem::take(&mut self.atom_pos);
        let mol = Molecule::from_parts(self.atoms, &self.bonds)
            .expect("parser enforces bond invariants");
        if let Some(v) = valence_violations(&mol).first() {
            return Err(err(
                atom_pos[v.atom],
                SmilesErrorKind::ValenceExceeded {
                    atom: v.atom,
                    used: v.used,
                    cap: v.capacity,
                },
            ));
        }
        Ok(mol)
    }

    fn push_atom(
        &mut self,
        record: AtomRecord,
        aromatic: bool,
        at: usize,
    ) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(record);
        self.atom_pos.push(at);
        self.aromatic.push(aromatic);
        if let Some(prev) = self.prev {
            let t = self
                .pending_bond
                .take()
                .unwrap_or_else(|| self.default_bond(prev, idx));
            self.add_bond(prev, idx, t, at)?;
        } else if self.pending_bond.is_some() {
            return Err(err(at, SmilesErrorKind::DanglingBond));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn default_bond(&self, a: usize, b: usize) -> BondType {
        if self.aromatic[a] && self.aromatic[b] {
            BondType::Aromatic
        } else {
            BondType::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, t: BondType, at: usize) -> Result<(), SmilesError> {
        let key = (a.min(b), a.max(b));
        if self.bonded.insert(key, ()).is_some() {
            return Err(err(at, SmilesErrorKind::RingDuplicateBond(0)));
        }
        self.bonds.push((a, b, t));
        Ok(())
    }

    fn ring_digit(&mut self, digit: u16, at: usize) -> Result<(), SmilesError> {
        let Some(cur) = self.prev else {
            return Err(err(at, SmilesErrorKind::DanglingBond));
        };
        let explicit = self.pending_bond.take();
        match self.open_rings.remove(&digit) {
            None => {
                self.open_rings.insert(digit, (cur, explicit, at));
            }
            Some((open_atom, open_bond, _)) => {
                if open_atom == cur {
                    return Err(err(at, SmilesErrorKind::RingSelfBond(digit)));
                }
                let t = match (open_bond, explicit) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(err(at, SmilesErrorKind::RingBondConflict(digit)))
                    }
                    (Some(x), _) | (_, Some(x)) => x,
                    (None, None) => self.default_bond(open_atom, cur),
                };
                let key = (open_atom.min(cur), open_atom.max(cur));
                if self.bonded.insert(key, ()).is_some() {
                    return Err(err(at, SmilesErrorKind::RingDuplicateBond(digit)));
                }
                self.bonds.push((open_atom, cur, t));
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let c = self.bump().unwrap();
        let (element, aromatic) = match c {
            b'C' if self.peek() == Some(b'l') => {
                self.pos += 1;
                (Element::Cl, false)
            }
            b'B' if self.peek() == Some(b'r') => {
                self.pos += 1;
                (Element::Br, false)
            }
            b'B' => (Element::B, false),
            b'C' => (Element::C, false),
            b'N' => (Element::N, false),
            b'O' => (Element::O, false),
            b'P' => (Element::P, false),
            b'S' => (Element::S, false),
            b'F' => (Element::F, false),
            b'I' => (Element::I, false),
            b'b' => (Element::B, true),
            b'c' => (Element::C, true),
            b'n' => (Element::N, true),
            b'o' => (Element::O, true),
            b'p' => (Element::P, true),
            b's' => (Element::S, true),
            other => {
                return Err(err(at, SmilesErrorKind::UnknownElement((other as char).to_string())))
            }
        };
        self.push_atom(AtomRecord::new(element), aromatic, at)
    }

    fn bracket_atom(&mut self, start: usize) -> Result<(AtomRecord, bool), SmilesError> {
        // element symbol
        let sym_at = self.pos;
        let first = self
            .bump()
            .ok_or_else(|| err(self.pos, SmilesErrorKind::UnclosedBracket))?;
        let (element, aromatic) = match first {
            b'a'..=b'z' => {
                let e = Element::from_symbol(&(first as char).to_uppercase().to_string())
                    .filter(|e| e.supports_aromatic())
                    .ok_or_else(|| {
                        err(
                            sym_at,
                            SmilesErrorKind::UnknownElement((first as char).to_string()),
                        )
                    })?;
                (e, true)
            }
            b'A'..=b'Z' => {
                // two-letter symbols: the second letter must extend to a
                // known element (Cl, Br); `H` always means hydrogen count
                let mut sym = (first as char).to_string();
                if let Some(next) = self.peek() {
                    if next.is_ascii_lowercase() {
                        sym.push(next as char);
                    }
                }
                match Element::from_symbol(&sym) {
                    Some(e) if sym.len() == 2 => {
                        self.pos += 1;
                        (e, false)
                    }
                    _ => {
                        let e = Element::from_symbol(&(first as char).to_string())
                            .ok_or_else(|| err(sym_at, SmilesErrorKind::UnknownElement(sym)))?;
                        (e, false)
                    }
                }
            }
            other => {
                return Err(err(
                    sym_at,
                    SmilesErrorKind::UnexpectedChar(other as char),
                ))
            }
        };

        let mut record = AtomRecord::new(element);

        // hydrogen count
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let mut count: u32 = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                count = (d - b'0') as u32;
                self.pos += 1;
            }
            if count > 4 {
                return Err(err(
                    self.pos - 1,
                    SmilesErrorKind::HydrogenCountOutOfRange(count),
                ));
            }
            record.hydrogens = count as u8;
        }

        // charge
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            let sign: i32 = if self.bump().unwrap() == b'+' { 1 } else { -1 };
            let mut magnitude: i32 = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                magnitude = (d - b'0') as i32;
                self.pos += 1;
            } else {
                while self.peek() == Some(if sign > 0 { b'+' } else { b'-' }) {
                    magnitude += 1;
                    self.pos += 1;
                }
            }
            let charge = sign * magnitude;
            if !(-2..=2).contains(&charge) {
                return Err(err(self.pos - 1, SmilesErrorKind::ChargeOutOfRange(charge)));
            }
            record.charge = charge as i8;
        }

        // atom-map number
        if self.peek() == Some(b':') {
            self.pos += 1;
            let num_at = self.pos;
            let mut num: u64 = 0;
            let mut any = false;
            while let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                num = (num * 10 + (d - b'0') as u64).min(u32::MAX as u64);
                any = true;
                self.pos += 1;
            }
            if !any {
                return Err(err(num_at, SmilesErrorKind::UnexpectedChar(':')));
            }
            if num == 0 {
                return Err(err(num_at, SmilesErrorKind::ZeroMapNumber));
            }
            record.map_num = Some(num as u32);
        }

        match self.bump() {
            Some(b']') => Ok((record, aromatic)),
            Some(other) => Err(err(
                self.pos - 1,
                SmilesErrorKind::UnexpectedChar(other as char),
            )),
            None => Err(err(start, SmilesErrorKind::UnclosedBracket)),
        }
    }
}
