//! Exactly solvable laboratory for preference-based alignment.
//!
//! Tabular softmax policies over enumerable prompt/response spaces make
//! every quantity of interest computable in closed form or by enumeration:
//! Bradley-Terry preferences and their inversion, DPO and SLiC-HF losses
//! with analytic gradients, the KL-regularized optimum, the on-policy versus
//! off-policy boundary measurement and the preference-consistency
//! estimators built around it.
//!
//! Modules mirror the pipeline:
//!
//! - [`space`]: prompt/response universes and the JSONL preference format
//! - [`policy`]: tabular policies, sampling and KL
//! - [`preference`]: Bradley-Terry preferences, reward fitting, annotators
//! - [`align`]: losses, gradients, closed-form optimum, trainer
//! - [`diagnostics`]: boundary measurement and consistency estimators
//! - [`harness`]: the multi-iteration on/off-policy protocol
//!
//! With the default `parallel` feature, enumeration and per-record work runs
//! on rayon; disabling it yields the same results sequentially.

pub mod align;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod hash;
pub mod math;
pub mod par;
pub mod policy;
pub mod preference;
pub mod remote;
pub mod space;

pub use error::{Error, Result};
pub use policy::TabularPolicy;
pub use preference::{Annotator, BTPreference, ExactBTAnnotator, RewardTable};
pub use remote::{RemoteAnnotator, RemoteConfig};
pub use space::{PreferenceDataset, PreferenceRecord, Source, Space};
