//! Datasets, brute-force ground truth, recall, and dynamic workloads.

pub mod dataset;
pub mod synth;
pub mod truth;
pub mod workload;

pub use dataset::{read_ivecs, read_vectors, write_bvecs, write_fvecs, write_ivecs, Format};
pub use synth::{sift_like, uniform};
pub use truth::{ground_truth, recall_at_k};
pub use workload::{run_workload, BatchRow, BenchReport, Scenario, WorkloadSpec};
