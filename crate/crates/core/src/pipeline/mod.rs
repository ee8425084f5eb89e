//! Corpus generation, file formats and the end-to-end workflow.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod gradsuite;
pub mod io;
pub mod toyface;
pub mod workflow;

pub use checkpoint::{load_began, load_lgen, save_began, save_lgen};
pub use config::{CorpusConfig, PipelineConfig};
pub use corpus::{
    build_corpus, read_landmark_csv, read_pair_csv, render_corpus, write_landmark_csv,
    write_pair_csv, CorpusManifest, ManifestEntry,
};
pub use toyface::{make_toy_face, ToyFaceParams};
pub use workflow::{
    annotate_corpus, annotate_images, generate_annotated, interpolate_latent,
    interpolation_experiment,
};
