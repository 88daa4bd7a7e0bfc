//! File formats, synthetic data and run configuration.

mod export;
mod nifti;
mod run;
mod synth;
mod volume_file;

pub use export::{export_pathlines, PathlineFormat};
pub use nifti::import_nifti;
pub use run::{
    load_input_volume, pair_dir_name, read_cost_history, read_series_outputs, write_series_outputs, PairSummary,
    RunConfig, RunSummary,
};
pub use synth::{gen_gaussian_spheres, SphereSynthConfig};
pub use volume_file::{
    load_frames, load_velocity_stack, load_volume, load_volume_stack, read_header, save_frames, save_velocity_stack,
    save_volume, save_volume_stack, sidecar_path, VolumeFileHeader,
};
