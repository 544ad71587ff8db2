//! Two-dimensional t-SNE projections of speaker-level features and their
//! scatter plots.

mod plot;
mod tsne;

pub use plot::{emit_plot, render_svg, render_tsv, sidecar_path};
pub use tsne::{
    conditional_affinities, joint_affinities, tsne_project, PointLabel, ProjectionResult, TsneConfig, KL_INTERVAL,
};
