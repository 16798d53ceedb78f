//! File formats and the command-line surface.

pub mod cli;
pub mod config;
pub mod idx;
pub mod svg;
pub mod text;

pub use cli::{cli_main, load_matrix};
pub use config::RunConfig;
pub use idx::{load_idx, parse_idx, IdxData};
pub use svg::{render_scatter_svg, scatter_svg};
pub use text::{load_csv_matrix, load_edge_list, load_embedding, load_labels, parse_csv_matrix, save_embedding};
