//! Audio loading and feature extraction.

pub mod featfile;
pub mod features;
mod io;

pub use features::{
    cens, extract_feature_sequence, mfcc, tempogram, FeatureConfig, FeatureSequence, FrameMatrix,
    Spectrogram,
};
pub use io::{load_audio, load_audio_with_info, resample_linear, write_wav_i16, AudioInfo, Resampling};
