//! Synthetic drone-controller RF windows.
//!
//! Each drone class is a parametric burst generator built from its timing
//! and channel plan; the noise class is WiFi / Bluetooth-like traffic.
//! Windows are 16,384 complex samples at 14 MHz.

pub mod dataset;
pub mod decimate;
pub mod io;
pub mod mix;
pub mod profile;
pub mod synth;

pub use dataset::{
    build_dataset, snr_grid, synthesize, DatasetConfig, LabeledDataset, Record, Source, Split, SplitDataset,
};
pub use decimate::{decimate, LowpassFilter};
pub use io::{load_external, write_dataset, LoadReport, Rejection, SampleFormat, Sidecar, SidecarEntry};
pub use mix::mix_to_snr;
pub use profile::{ChannelSpec, ClassLabel, EmitterProfile, ModulationKind, Timing, RECEIVER_CENTER_HZ};
pub use synth::{
    mean_power, synth_burst, synth_interference, synth_noise_class, IQWindow, InterferenceKind, WindowSpec,
    SAMPLE_RATE, WINDOW_LEN,
};
