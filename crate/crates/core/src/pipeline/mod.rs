//! End-to-end synthesis, model files and benchmarking.

pub mod bench;
pub mod bundle;
pub mod config;
pub mod synth;
pub mod verify;
pub mod wav;
pub mod weights;

pub use bench::{bench, BenchEntry, BenchReport, MachineInfo};
pub use bundle::{random_weights, tensor_specs, ModelBundle};
pub use config::{BundleConfig, Flags};
pub use synth::{synth, ChunkTrace, Mode, StreamMetrics, SynthOptions, SynthOutput};
pub use verify::{verify, Check, CheckResult, VerifyReport};
pub use wav::{read_wav, write_wav};
pub use weights::WeightFile;
