//! Pre-training enhanced spatiotemporal forecasting at desk scale.
//!
//! The crate has three model stages glued together by a small reverse-mode
//! autodiff engine ([`tensor`]):
//!
//! 1. [`tsformer`] — a masked-autoencoding Transformer over patched time
//!    series. Pre-trained once, then frozen; its per-patch representations
//!    are cached in a [`tsformer::RepresentationBank`].
//! 2. [`graph`] — a discrete dependency-graph learner. Pairwise logits are
//!    regularized toward a kNN graph built from the cached representations
//!    and sampled with the Gumbel-softmax trick so gradients flow.
//! 3. [`forecaster`] — a pluggable spatiotemporal backend consuming the last
//!    patch plus the sampled graph, fused with the frozen representations.
//!
//! [`data`] holds the dataset container, normalization, windowing, and the
//! synthetic generator used throughout the test suite. [`metrics`] and
//! [`inspect`] are shared evaluation and introspection utilities.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod gradcheck;
pub mod graph;
pub mod inspect;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod tsformer;

pub use error::{Error, Result};
