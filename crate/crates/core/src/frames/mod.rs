//! Local reference frames and the spherical atom codec.
//!
//! Each atom `i` (in line-notation order) is described relative to a focal
//! atom `f` and two reference atoms `c1`, `c2` chosen among the atoms placed
//! before it. The frame basis is built by Gram-Schmidt on `x_c1 - x_f` and
//! `x_c2 - x_f`, and the atom is stored as distance, polar angle against the
//! frame normal, and signed azimuth in the frame plane.
//!
//! Slots that cannot be filled (the first atoms of a molecule, short
//! topological chains) are `Virtual`. They resolve to phantom points at a
//! fixed offset from the focal atom in the molecule's intrinsic gauge, the
//! coordinate system in which atom 0 sits at the origin, atom 1 on the
//! positive x axis and the first atom off that axis in the xy half-plane
//! with `y >= 0`. Encoding and decoding both work in that gauge, which makes
//! the codec exact in both directions and independent of rigid motions.

mod basis;
mod codec;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::MolError;

pub use basis::{extract_spherical, place_atom, FrameBasis};
pub use codec::{
    decode_molecule, decode_positions, encode_molecule, encode_positions, gauge_positions,
};
pub use select::{build_basis, select_frame, select_refs, Topology};

/// Tolerance on every norm check in the codec.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Offset of the phantom point standing in for a virtual `c1`.
pub const PHANTOM_C1: [f64; 3] = [-1.0, 0.0, 0.0];
/// Offset of the phantom point standing in for a virtual `c2`.
pub const PHANTOM_C2: [f64; 3] = [0.0, -1.0, 0.0];
/// Extra offset applied to the `c2` phantom when it is itself collinear.
pub const PHANTOM_NUDGE: [f64; 3] = [0.0, 0.0, 1e-3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("degenerate frame: {0}")]
    Degenerate(&'static str),
    #[error("atom coincides with its focal atom")]
    CoincidentAtoms,
    #[error("atom {position} has no bonded predecessor in line order")]
    DisconnectedPrefix { position: usize },
    #[error("expected {expected} coordinates, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("atom {position}: {source}")]
    AtAtom {
        position: usize,
        #[source]
        source: Box<FrameError>,
    },
    #[error(transparent)]
    Molecule(#[from] MolError),
}

impl FrameError {
    pub(crate) fn at(self, position: usize) -> Self {
        match self {
            e @ (FrameError::AtAtom { .. } | FrameError::DisconnectedPrefix { .. }) => e,
            e => FrameError::AtAtom {
                position,
                source: Box::new(e),
            },
        }
    }

    /// Line-order position of the failing atom, when known.
    pub fn position(&self) -> Option<usize> {
        match self {
            FrameError::AtAtom { position, .. } | FrameError::DisconnectedPrefix { position } => {
                Some(*position)
            }
            _ => None,
        }
    }
}

/// A reference slot: an earlier atom, or a phantom point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefSlot {
    Atom(usize),
    Virtual,
}

impl RefSlot {
    pub fn index(self) -> Option<usize> {
        match self {
            RefSlot::Atom(j) => Some(j),
            RefSlot::Virtual => None,
        }
    }

    pub fn is_virtual(self) -> bool {
        self == RefSlot::Virtual
    }
}

impl From<Option<usize>> for RefSlot {
    fn from(value: Option<usize>) -> Self {
        value.map_or(RefSlot::Virtual, RefSlot::Atom)
    }
}

impl fmt::Display for RefSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefSlot::Atom(j) => write!(f, "{j}"),
            RefSlot::Virtual => f.write_str("VIRTUAL"),
        }
    }
}

/// Focal atom and the two references for one placement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRefs {
    pub f: RefSlot,
    pub c1: RefSlot,
    pub c2: RefSlot,
}

impl FrameRefs {
    pub const ALL_VIRTUAL: FrameRefs = FrameRefs {
        f: RefSlot::Virtual,
        c1: RefSlot::Virtual,
        c2: RefSlot::Virtual,
    };

    pub fn new(f: impl Into<RefSlot>, c1: impl Into<RefSlot>, c2: impl Into<RefSlot>) -> Self {
        Self {
            f: f.into(),
            c1: c1.into(),
            c2: c2.into(),
        }
    }
}

impl From<usize> for RefSlot {
    fn from(value: usize) -> Self {
        RefSlot::Atom(value)
    }
}

/// Distance, polar angle and signed azimuth of one atom in its frame.
///
/// Atom 0 has no frame and is stored as the all-zero gauge placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SphericalCoord<T> {
    pub d: T,
    pub theta: T,
    pub phi: T,
}

impl<T: crate::scalar::Scalar> SphericalCoord<T> {
    pub fn new(d: T, theta: T, phi: T) -> Self {
        Self { d, theta, phi }
    }

    /// Placeholder stored for the first atom.
    pub fn gauge() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.theta.is_finite() && self.phi.is_finite()
    }

    pub fn cast<U: crate::scalar::Scalar>(self) -> SphericalCoord<U> {
        SphericalCoord::new(
            U::of(self.d.to_f64_lossy()),
            U::of(self.theta.to_f64_lossy()),
            U::of(self.phi.to_f64_lossy()),
        )
    }

    /// +1 for `phi >= 0`, -1 otherwise.
    pub fn sign_phi(&self) -> T {
        if self.phi >= T::zero() {
            T::one()
        } else {
            -T::one()
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self.d - other.d)
            .abs()
            .max((self.theta - other.theta).abs())
            .max((self.phi - other.phi).abs())
    }
}

/// Reference-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameStrategy {
    /// Previous three atoms in line order.
    Seq1D,
    /// Latest bonded predecessor, applied recursively.
    Topo2D,
    /// Bonded focal atom, references nearest to it in space.
    Spatial3D,
}

impl FrameStrategy {
    pub const ALL: [FrameStrategy; 3] = [
        FrameStrategy::Seq1D,
        FrameStrategy::Topo2D,
        FrameStrategy::Spatial3D,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FrameStrategy::Seq1D => "1d",
            FrameStrategy::Topo2D => "2d",
            FrameStrategy::Spatial3D => "3d",
        }
    }
}

impl fmt::Display for FrameStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Error)]
#[error("unknown frame strategy {0:?} (expected 1d, 2d or 3d)")]
pub struct UnknownStrategy(pub String);

impl FromStr for FrameStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1d" | "seq1d" | "seq" => Ok(FrameStrategy::Seq1D),
            "2d" | "topo2d" | "topo" => Ok(FrameStrategy::Topo2D),
            "3d" | "spatial3d" | "spatial" => Ok(FrameStrategy::Spatial3D),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}
