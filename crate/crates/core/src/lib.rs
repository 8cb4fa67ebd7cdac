//! Self-supervised masked-autoencoder pre-training and time-of-flight
//! classification for 1D ultrasound tone-burst signals.

pub mod autodiff;
pub mod checkpoint;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod params;
pub mod patching;
pub mod signal;
pub mod tensor;
pub mod training;
pub mod us1d;
