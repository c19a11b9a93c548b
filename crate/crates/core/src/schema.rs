//! Variable schemas and the dummy encoding of categorical and ordinal records.
//!
//! A categorical variable with `k` levels occupies `k - 1` one-hot dummy bits
//! (level 0 is the all-zero base category). An ordinal variable with `k`
//! levels occupies `k - 1` cumulative bits: level `l` turns on the first `l`
//! bits. Blocks are laid out in declaration order.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated allowed states.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Categorical,
    Ordinal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VariableKind,
    /// Level count including the base level.
    pub levels: usize,
}

impl VariableDecl {
    pub fn categorical(name: impl Into<String>, levels: usize) -> Self {
        VariableDecl {
            name: name.into(),
            kind: VariableKind::Categorical,
            levels,
        }
    }

    pub fn ordinal(name: impl Into<String>, levels: usize) -> Self {
        VariableDecl {
            name: name.into(),
            kind: VariableKind::Ordinal,
            levels,
        }
    }

    /// Number of dummy bits, `levels - 1`.
    pub fn dummies(&self) -> usize {
        self.levels - 1
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    variables: Vec<VariableDecl>,
}

/// Ordered list of variables together with their dummy-index blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct VariableSchema {
    variables: Vec<VariableDecl>,
    #[serde(skip)]
    blocks: Vec<Range<usize>>,
}

impl TryFrom<RawSchema> for VariableSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        if raw.variables.is_empty() {
            return Err(Error::Schema("schema declares no variables".into()));
        }
        VariableSchema::new(raw.variables)
    }
}

impl VariableSchema {
    /// Validate declarations and lay out the dummy blocks.
    ///
    /// Zero variables is accepted here (the dummy vector is empty); schema
    /// files must declare at least one.
    pub fn new(variables: Vec<VariableDecl>) -> Result<Self> {
        let mut blocks = Vec::with_capacity(variables.len());
        let mut start = 0;
        for (i, v) in variables.iter().enumerate() {
            if v.levels < 2 {
                return Err(Error::Schema(format!(
                    "variable `{}` has {} level(s); at least 2 required",
                    v.name, v.levels
                )));
            }
            if v.name.is_empty() {
                return Err(Error::Schema(format!("variable #{i} has an empty name")));
            }
            if variables[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::Schema(format!("duplicate variable name `{}`", v.name)));
            }
            blocks.push(start..start + v.dummies());
            start += v.dummies();
        }
        Ok(VariableSchema { variables, blocks })
    }

    pub fn variables(&self) -> &[VariableDecl] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Total dummy dimension `q`.
    pub fn q(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn block(&self, var: usize) -> Range<usize> {
        self.blocks[var].clone()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Variable owning dummy index `r`.
    pub fn variable_of(&self, r: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| b.contains(&r))
            .expect("dummy index inside the schema")
    }

    /// Number of allowed states, `Π levels`, saturating.
    pub fn state_count(&self) -> u128 {
        self.variables
            .iter()
            .fold(1u128, |acc, v| acc.saturating_mul(v.levels as u128))
    }

    /// Check a record against the declared level ranges.
    pub fn check_record(&self, rec: &Record) -> Result<()> {
        if rec.0.len() != self.variables.len() {
            return Err(Error::dim(format!(
                "record has {} values, schema has {} variables",
                rec.0.len(),
                self.variables.len()
            )));
        }
        for (v, &level) in self.variables.iter().zip(&rec.0) {
            if level >= v.levels {
                return Err(Error::LevelOutOfRange {
                    variable: v.name.clone(),
                    level: level as i64,
                    max: v.dummies(),
                });
            }
        }
        Ok(())
    }

    /// Check that a bit vector obeys the one-hot / left-flush pattern of each block.
    pub fn check_state(&self, s: &DummyState) -> Result<()> {
        if s.len() != self.q() {
            return Err(Error::dim(format!(
                "state has {} bits, schema has q = {}",
                s.len(),
                self.q()
            )));
        }
        for (v, block) in self.variables.iter().zip(&self.blocks) {
            let bits = &s.bits()[block.clone()];
            match v.kind {
                VariableKind::Categorical => {
                    let on = bits.iter().filter(|&&b| b).count();
                    if on > 1 {
                        return Err(Error::InvalidState {
                            variable: v.name.clone(),
                            reason: format!("{on} bits set in a one-hot block"),
                        });
                    }
                }
                VariableKind::Ordinal => {
                    let prefix = bits.iter().take_while(|&&b| b).count();
                    if bits[prefix..].iter().any(|&b| b) {
                        return Err(Error::InvalidState {
                            variable: v.name.clone(),
                            reason: "set bits are not flushed left".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_allowed(&self, s: &DummyState) -> bool {
        self.check_state(s).is_ok()
    }

    pub fn encode(&self, rec: &Record) -> Result<DummyState> {
        encode_record(self, rec)
    }

    pub fn decode(&self, s: &DummyState) -> Result<Record> {
        decode_state(self, s)
    }
}

/// Length-`q` dummy bit vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DummyState(Vec<bool>);

impl DummyState {
    pub fn new(bits: Vec<bool>) -> Self {
        DummyState(bits)
    }

    pub fn zeros(q: usize) -> Self {
        DummyState(vec![false; q])
    }

    /// Bits of the low `q` positions of `mask` (bit `r` is dummy `r`).
    pub fn from_mask(mask: u64, q: usize) -> Self {
        DummyState((0..q).map(|r| mask >> r & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices of the set bits (the `R₁` index set).
    pub fn ones(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn mask(&self) -> u64 {
        assert!(self.0.len() <= 64, "mask needs q <= 64");
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &b)| if b { m | 1 << i } else { m })
    }
}

/// Per-variable integer levels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Record(pub Vec<usize>);

pub fn encode_record(schema: &VariableSchema, rec: &Record) -> Result<DummyState> {
    schema.check_record(rec)?;
    let mut bits = vec![false; schema.q()];
    for ((v, block), &level) in schema.variables.iter().zip(&schema.blocks).zip(&rec.0) {
        if level == 0 {
            continue;
        }
        match v.kind {
            VariableKind::Categorical => bits[block.start + level - 1] = true,
            VariableKind::Ordinal => bits[block.start..block.start + level].fill(true),
        }
    }
    Ok(DummyState(bits))
}

pub fn decode_state(schema: &VariableSchema, s: &DummyState) -> Result<Record> {
    schema.check_state(s)?;
    let values = schema
        .variables
        .iter()
        .zip(&schema.blocks)
        .map(|(v, block)| {
            let bits = &s.bits()[block.clone()];
            match v.kind {
                VariableKind::Categorical => bits.iter().position(|&b| b).map_or(0, |p| p + 1),
                VariableKind::Ordinal => bits.iter().take_while(|&&b| b).count(),
            }
        })
        .collect();
    Ok(Record(values))
}

/// All `Π levels` allowed states, in lexicographic record order (first
/// variable slowest).
pub fn enumerate_allowed_states(schema: &VariableSchema, cap: usize) -> Result<Vec<DummyState>> {
    Ok(enumerate_records(schema, cap)?
        .iter()
        .map(|r| encode_record(schema, r).expect("enumerated record is valid"))
        .collect())
}

/// All records of the schema in lexicographic order.
pub fn enumerate_records(schema: &VariableSchema, cap: usize) -> Result<Vec<Record>> {
    let count = schema.state_count();
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge {
            count,
            cap: cap as u128,
        });
    }
    let n = schema.len();
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0usize; n];
    loop {
        out.push(Record(cur.clone()));
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < schema.variables[k].levels {
                break;
            }
            cur[k] = 0;
        }
    }
}
