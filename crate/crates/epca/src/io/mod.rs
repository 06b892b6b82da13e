//! Matrix file formats, genotype ingestion, and model serialization.
//!
//! Two matrix formats are supported and sniffed by magic bytes:
//! - CSV: rectangular finite numeric entries, `#`-prefixed comment lines,
//!   an optional single header row auto-detected as the first non-comment
//!   line that fails numeric parsing;
//! - epm1: magic `EPM1`, then rows and cols as little-endian u64, then
//!   row-major IEEE-754 binary64 values. Bit-exact round trips.

mod bundle;
mod genotype;
mod matrix;

pub use bundle::{load_model, save_model, ModelBundle, ModelMetadata};
pub use genotype::{ingest_genotypes, GenotypeBatch};
pub use matrix::{
    read_matrix, read_matrix_with_header, write_matrix_csv, write_matrix_csv_with,
    write_matrix_epm1, write_vector_csv, MatrixFormat,
};
