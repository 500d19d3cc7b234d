//! Dense multilayer perceptrons with SoftPlus hidden layers and a linear
//! output layer, plus the Adam optimizer.
//!
//! Besides the usual forward/backward pair the network supports forward
//! tangents (directional derivatives with respect to the input) and the
//! reverse pass through such a tangent. The latter gives exact parameter
//! gradients of losses that contain input derivatives of the network, such
//! as a driving force defined as the derivative of a learned free energy.

mod adam;
mod mlp;

pub use adam::Adam;
pub use mlp::{Mlp, MlpSpec, TangentTrace, Trace};
