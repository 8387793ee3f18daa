//! The 13-movement finger taxonomy and its 7-bit multi-label encoding.
//!
//! Bits are ordered `[ThumbExt, ThumbFlex, IndexExt, IndexFlex, MiddleExt, MiddleFlex, Rest]`.
//! Movements are `m0` (rest), `m1..=m6` single-DOF, and the congruent combinations
//! `m7..=m12` (thumb+index, index+middle, all three; extension before flexion).

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub const NUM_MOVEMENTS: usize = 13;
pub const NUM_BITS: usize = 7;
pub const REST_BIT: usize = 6;

/// A degree of freedom controlled by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dof {
    Thumb,
    Index,
    Middle,
}

impl Dof {
    pub const ALL: [Dof; 3] = [Dof::Thumb, Dof::Index, Dof::Middle];

    pub fn ext_bit(self) -> usize {
        self as usize * 2
    }

    pub fn flex_bit(self) -> usize {
        self as usize * 2 + 1
    }
}

/// State of one DOF inside a movement vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofState {
    Inactive,
    Extend,
    Flex,
    /// Both extension and flexion set.
    Conflict,
}

/// Index of one of the 13 canonical movements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct MovementId(u8);

impl MovementId {
    pub const REST: MovementId = MovementId(0);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_MOVEMENTS {
            Ok(MovementId(index as u8))
        } else {
            Err(Error::InvalidMovement(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_rest(self) -> bool {
        self.0 == 0
    }

    pub fn all() -> impl Iterator<Item = MovementId> {
        (0..NUM_MOVEMENTS as u8).map(MovementId)
    }

    /// The twelve non-rest movements.
    pub fn active() -> impl Iterator<Item = MovementId> {
        (1..NUM_MOVEMENTS as u8).map(MovementId)
    }

    pub fn name(self) -> &'static str {
        MOVEMENT_TABLE[self.index()].0
    }

    pub fn encode(self) -> MovementVector {
        MovementVector(MOVEMENT_TABLE[self.index()].1)
    }
}

impl TryFrom<usize> for MovementId {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        MovementId::new(v)
    }
}

impl From<MovementId> for usize {
    fn from(m: MovementId) -> usize {
        m.index()
    }
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

const MOVEMENT_TABLE: [(&str, [u8; NUM_BITS]); NUM_MOVEMENTS] = [
    ("Rest", [0, 0, 0, 0, 0, 0, 1]),
    ("Thumb extension", [1, 0, 0, 0, 0, 0, 0]),
    ("Thumb flexion", [0, 1, 0, 0, 0, 0, 0]),
    ("Index extension", [0, 0, 1, 0, 0, 0, 0]),
    ("Index flexion", [0, 0, 0, 1, 0, 0, 0]),
    ("Middle extension", [0, 0, 0, 0, 1, 0, 0]),
    ("Middle flexion", [0, 0, 0, 0, 0, 1, 0]),
    ("Thumb + index extension", [1, 0, 1, 0, 0, 0, 0]),
    ("Thumb + index flexion", [0, 1, 0, 1, 0, 0, 0]),
    ("Index + middle extension", [0, 0, 1, 0, 1, 0, 0]),
    ("Index + middle flexion", [0, 0, 0, 1, 0, 1, 0]),
    ("Thumb + index + middle extension", [1, 0, 1, 0, 1, 0, 0]),
    ("Thumb + index + middle flexion", [0, 1, 0, 1, 0, 1, 0]),
];

/// Arbitrary 7-bit action vector. Policy outputs may be non-canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovementVector(pub [u8; NUM_BITS]);

/// Result of decoding a movement vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decoded {
    Canonical(MovementId),
    NonCanonical { dofs: [DofState; 3], rest: bool },
}

impl MovementVector {
    pub const REST: MovementVector = MovementVector([0, 0, 0, 0, 0, 0, 1]);

    /// Builds a vector from any bit-like values; nonzero entries become 1.
    pub fn from_bits(bits: [u8; NUM_BITS]) -> Self {
        MovementVector(bits.map(|b| u8::from(b != 0)))
    }

    /// Packs the bits into an integer in `0..128`, bit `i` of the vector at bit `i`.
    pub fn to_code(self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))
    }

    pub fn from_code(code: u8) -> Self {
        let mut bits = [0u8; NUM_BITS];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = (code >> i) & 1;
        }
        MovementVector(bits)
    }

    pub fn bit(self, i: usize) -> bool {
        self.0[i] != 0
    }

    pub fn dof_state(self, dof: Dof) -> DofState {
        match (self.bit(dof.ext_bit()), self.bit(dof.flex_bit())) {
            (false, false) => DofState::Inactive,
            (true, false) => DofState::Extend,
            (false, true) => DofState::Flex,
            (true, true) => DofState::Conflict,
        }
    }

    pub fn decode(self) -> Decoded {
        match MOVEMENT_TABLE.iter().position(|(_, bits)| *bits == self.0) {
            Some(i) => Decoded::Canonical(MovementId(i as u8)),
            None => Decoded::NonCanonical {
                dofs: Dof::ALL.map(|d| self.dof_state(d)),
                rest: self.bit(REST_BIT),
            },
        }
    }

    pub fn is_canonical(self) -> bool {
        matches!(self.decode(), Decoded::Canonical(_))
    }

    pub fn as_f64(self) -> [f64; NUM_BITS] {
        self.0.map(f64::from)
    }

    /// Nearest canonical reading for display: conflicting DOFs are dropped,
    /// and a vector with no active DOF reads as rest.
    pub fn canonicalize(self) -> MovementId {
        if let Decoded::Canonical(id) = self.decode() {
            return id;
        }
        let mut bits = [0u8; NUM_BITS];
        for dof in Dof::ALL {
            match self.dof_state(dof) {
                DofState::Extend => bits[dof.ext_bit()] = 1,
                DofState::Flex => bits[dof.flex_bit()] = 1,
                _ => {}
            }
        }
        if bits.iter().all(|&b| b == 0) {
            return MovementId::REST;
        }
        match MovementVector(bits).decode() {
            Decoded::Canonical(id) => id,
            // Incongruent mixes (e.g. thumb ext + index flex) have no table entry.
            Decoded::NonCanonical { .. } => MovementId::REST,
        }
    }
}

impl fmt::Display for MovementVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "]")
    }
}

pub fn encode(id: MovementId) -> MovementVector {
    id.encode()
}

pub fn decode(v: MovementVector) -> Decoded {
    v.decode()
}

/// Draws one of the 13 movements with equal probability.
pub fn uniform_random_movement<R: Rng + ?Sized>(rng: &mut R) -> MovementId {
    MovementId(rng.random_range(0..NUM_MOVEMENTS as u8))
}

/// Row of the movement table as exported for the UI and reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MovementEntry {
    pub id: usize,
    pub name: String,
    pub bits: [u8; NUM_BITS],
}

pub fn movement_table() -> Vec<MovementEntry> {
    MovementId::all()
        .map(|m| MovementEntry {
            id: m.index(),
            name: m.name().to_string(),
            bits: m.encode().0,
        })
        .collect()
}
