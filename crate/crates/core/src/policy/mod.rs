//! Linear softmax policy over hashed (context, action) features: the stand-in
//! for π_θ, π_old and π_ref.

pub mod checkpoint;
pub mod features;
pub mod linear;

pub use features::{enumerate_candidates, include_action, FeatureRows, Featurizer, DEFAULT_DIM, MAX_CANDIDATES};
pub use linear::{argmax, sample_index, EncodedExample, LinearPolicy, PolicyError, SparseGrad};
