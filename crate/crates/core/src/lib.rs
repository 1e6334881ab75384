//! Mask-and-replace discrete diffusion sampling.
//!
//! The crate covers the forward corruption kernel and its closed-form
//! cumulative, the reverse posterior with its reparameterized mixture,
//! classifier-free guidance on clean-token predictions, four reverse-process
//! sampling strategies, and a small benchmark harness that measures samplers
//! against exactly known template distributions.

pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod sampler;
pub mod schedule;
pub mod toybench;
pub mod transition;

pub use denoiser::{
    BayesOracle, Condition, CountDenoiser, Denoiser, ProbField, Template, TemplateSet,
};
pub use error::{Error, Result};
pub use guidance::{guided_predict, guided_probs, GuidanceConfig, NullMode};
pub use sampler::{SampleTrace, SamplerConfig, Selection, Strategy, TraceStep};
pub use schedule::{NoiseSchedule, Rates};
pub use toybench::{
    evaluate, make_pairs_dataset, make_template_dataset, MetricsReport, TemplateSpec,
};
pub use transition::{Categorical, TokenGrid};
