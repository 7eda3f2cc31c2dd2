//! Arrays, differentiation, networks and linear-algebra helpers shared by
//! every other module.

pub mod checkpoint;
pub mod nn;
pub mod optim;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use nn::{time_encoding, Activation, Fnn, FnnSpec, ParamId, ParamStore};
pub use spectral::spectral_norm;
pub use tape::{Gradients, Segments, Tape, Var};
pub use tensor::Tensor;
