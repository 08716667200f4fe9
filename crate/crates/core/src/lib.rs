pub mod align;
pub mod corpus;
pub mod descriptors;
pub mod elements;
pub mod frames;
pub mod geom;
pub mod harness;
pub mod lineno;
pub mod molgraph;
pub mod scalar;
pub mod vocab;
pub mod vq;

pub use frames::{FrameRefs, FrameStrategy, RefSlot};
pub use molgraph::{Atom, Bond, BondOrder, Conformer, Molecule};
pub use scalar::Scalar;

pub type Vec3 = geom::Vec3<f64>;
pub type SphericalCoord = frames::SphericalCoord<f64>;
pub type FrameBasis = frames::FrameBasis<f64>;
pub type DescriptorVec = descriptors::DescriptorVec<f64>;
pub type GenerationDescriptor = descriptors::GenerationDescriptor<f64>;
pub type UnderstandingDescriptor = descriptors::UnderstandingDescriptor<f64>;
pub type Mlp = vq::Mlp<f64>;
pub type MlpParams = vq::MlpParams<f64>;
pub type Codebook = vq::Codebook<f64>;
pub type Quantizer = vq::Quantizer<f64>;
