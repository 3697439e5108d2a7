//! Mean-field dynamics of spinless fermions on a ring, coupled to a
//! self-consistent displacement field and a thermal bath.
//!
//! States are Gaussian and carried by their correlation matrix
//! `theta[j][k] = <c_j^dag c_k>`. The crate covers steady-state
//! preparation, phase classification, quenches with dynamical phase
//! transition detection, two-step and multi-copy relaxation protocols, and
//! an exact many-body oracle for small rings.
//!
//! ```
//! use dgn::evolution::{evolve, EvolutionConfig, Observers};
//! use dgn::initstate::{random_half_filled_theta, RandomInitSpec};
//! use dgn::model::ModelParams;
//!
//! let p = ModelParams::new(10, 1.0, 0.0, 1.0, 0.1, 0.1)?;
//! let theta0 = random_half_filled_theta(10, &RandomInitSpec::with_seed(1))?;
//! let cfg = EvolutionConfig { t_max: 5.0, ..Default::default() };
//! let rec = evolve(&theta0, &p, &cfg, &Observers::default())?;
//! assert!(rec.final_theta.hermiticity_error() < 1e-12);
//! # Ok::<(), dgn::error::Error>(())
//! ```

pub mod checkpoint;
pub mod correlation;
pub mod error;
pub mod evolution;
pub mod harness;
pub mod initstate;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod protocols;

pub use correlation::CorrelationMatrix;
pub use error::{Error, Result};
pub use evolution::{evolve, EvolutionConfig, Observers, TrajectoryRecord};
pub use model::{DisplacementField, ModelParams};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    mod evolution {}
    #[doc = include_str!("../../../book/src/observables.md")]
    mod observables {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    mod protocols {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
