//! Desk-scale stand-in for the real benchmark: seeded synthetic datasets in
//! several appearance domains, labelled for all four task types, and a
//! `tanh` backbone with linear task heads trained by hand-derived gradients.

mod chain;
mod model;
mod synth;
mod train;

pub use chain::{
    embed_features, run_chain, BackboneCache, Caps, ChainJob, ChainRunner, ChainSettings,
    StageConfigs,
};
pub use model::{
    softmax_cross_entropy, Backbone, Head, HeadKind, LossConfig, ModelGrad, Prediction, ToyModel,
    HEAT_PRIOR_BIAS,
};
pub use synth::{
    generate_dataset, im2col, Appearance, Geometry, Placement, Sample, SynthDomainSpec, ToyDataset,
    PATCH,
};
pub use train::{
    evaluate, fresh_model, head_seed, train, train_multisource, train_select, LrSchedule,
    MultiSource, Score, Selected, TrainConfig, Trained,
};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a tagged sub-task.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Stable 64-bit FNV-1a hash, used to turn names into seed tags.
pub fn tag_of(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
