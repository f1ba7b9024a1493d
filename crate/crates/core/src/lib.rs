//! Absorption probabilities of transient reflected Brownian motion in the
//! orthant.
//!
//! The crate decides when the probability of hitting the apex (or a facet)
//! is an exponential `exp(a·x)`, which happens exactly when the reflection
//! matrix is singular under the structural assumptions, computes the decay
//! vector `a`, and checks the prediction against Monte Carlo simulation of
//! the absorbed process.
//!
//! * [`model`]: model data and validation.
//! * [`matrix`]: S / completely-S certificates and the positive kernel construction.
//! * [`decay`]: classification, decay vector, skew-symmetry analytics.
//! * [`simulator`]: Euler scheme with a per-step Skorokhod projection.
//! * [`estimator`]: Monte Carlo estimates, Wilson intervals and sweeps.
//! * [`pde`]: residuals of the absorption PDE and its dual.
//! * [`cli`]: the `orthant-rbm` command line front end.

pub mod cli;
pub mod decay;
pub mod estimator;
pub mod matrix;
pub mod model;
pub mod pde;
pub mod simulator;

pub use decay::{
    classify, compute_decay_vector, predicted_absorption, Classification, DecayVector,
    Normalization, Verdict,
};
pub use estimator::{estimate_absorption, wilson_interval, EstimateReport};
pub use matrix::{
    check_assumptions, is_completely_s, is_s_matrix, lemma1_check, lemma2_certificate,
    AssumptionReport, Lemma2Certificate, SCertificate,
};
pub use model::{FacetSpec, ModelFile, ModelSpec, WedgeAngles};
pub use simulator::{SimConfig, Simulator, TrajectoryResult};

/// Serde adapters writing 0-based indices as 1-based.
pub(crate) mod one_based {
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(i: &usize, s: S) -> Result<S::Ok, S::Error> {
        (i + 1).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
        let v = <usize as serde::Deserialize>::deserialize(d)?;
        v.checked_sub(1)
            .ok_or_else(|| serde::de::Error::custom("1-based index must be positive"))
    }

    pub mod option {
        use serde::{Serialize, Serializer};

        pub fn serialize<S: Serializer>(i: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
            i.map(|i| i + 1).serialize(s)
        }
    }

    pub mod option_vec {
        use serde::{Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<Vec<usize>>, s: S) -> Result<S::Ok, S::Error> {
            v.as_ref()
                .map(|v| v.iter().map(|i| i + 1).collect::<Vec<_>>())
                .serialize(s)
        }
    }

    pub mod vec {
        use serde::{Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|i| i + 1).collect::<Vec<_>>().serialize(s)
        }
    }
}
