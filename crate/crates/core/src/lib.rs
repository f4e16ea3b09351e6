//! Learned sampling policies for semi-supervised domain adaptation.
//!
//! A dueling Q-agent repeatedly picks target-domain samples, labeled by a
//! source-domain classifier, to add to the training set of a linear SVM. It is
//! rewarded by the change in that SVM's accuracy on a small annotated subset of
//! the target domain.
//!
//! * [`dataset`]: feature files and the synthetic domain-shift generator.
//! * [`linsvm`]: binary and one-vs-all linear SVMs (dual coordinate descent).
//! * [`partition`]: reward set and initial positive set from discriminator distances.
//! * [`env`]: the sample-selection environment.
//! * [`dqn`]: the dueling Q-network, Adam updates and target synchronization.
//! * [`harness`]: experiment configuration, training loop, baselines and outputs.

pub mod dataset;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod linsvm;
pub mod partition;
pub mod vecops;

pub use error::{Error, Result};
