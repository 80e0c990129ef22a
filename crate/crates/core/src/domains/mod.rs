//! Synthetic worlds, per-domain rendering, and the specialized modules that
//! encode each domain into its own latent space.

pub mod classifier;
pub mod csv;
pub mod module;
pub mod render;
pub mod world;

pub use classifier::{fit_classifier, ClassifierHead};
pub use module::{
    fit_autoencoder, fit_modules, oracle_linear, AutoencoderTraining, Codec, ModuleKind,
    SpecializedModule,
};
pub use render::{render_domain, DomainData, DomainSpec, ObservationSource, Renderer, Rendering};
pub use world::{generate_world, World, WorldParams};
