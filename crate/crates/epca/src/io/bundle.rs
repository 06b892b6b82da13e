//! Model serialization: a fitted covariance model as a directory of plain
//! files (binary matrices for exactness, CSV for the per-spike table, JSON
//! for metadata). Reloading reproduces S_s bit-for-bit.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::expfam::{ColumnFamilies, ExponentialFamily};
use crate::{Error, Result};

use super::matrix::{read_matrix, read_matrix_with_header, write_matrix_csv_with, write_matrix_epm1};

pub const FORMAT_VERSION: u32 = 1;

const METADATA_FILE: &str = "metadata.json";
const EIGVEC_FILE: &str = "eigenvectors.epm1";
const MEAN_FILE: &str = "mean.epm1";
const NOISE_FILE: &str = "noise_diag.epm1";
const SPIKES_FILE: &str = "spikes.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    /// Shared family string, or "per-column" with `column_families` set.
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub column_families: Option<Vec<String>>,
    pub rank: usize,
    pub kept: usize,
    pub gamma: f64,
    pub n_samples: usize,
    pub epsilon_default: f64,
    pub dropped_columns: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

/// A reloaded model directory.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: CovarianceModel,
    pub families: ColumnFamilies,
    pub metadata: ModelMetadata,
}

fn families_to_metadata(f: &ColumnFamilies) -> (String, Option<Vec<String>>) {
    match f {
        ColumnFamilies::Shared(fam) => (fam.to_string(), None),
        ColumnFamilies::PerColumn(v) => (
            "per-column".to_string(),
            Some(v.iter().map(|f| f.to_string()).collect()),
        ),
    }
}

fn families_from_metadata(meta: &ModelMetadata) -> Result<ColumnFamilies> {
    match &meta.column_families {
        Some(list) => {
            let fams: Result<Vec<ExponentialFamily>> =
                list.iter().map(|s| s.parse()).collect();
            Ok(ColumnFamilies::PerColumn(fams?))
        }
        None => Ok(ColumnFamilies::Shared(meta.family.parse()?)),
    }
}

/// Write a fitted model into `dir` (created if missing).
pub fn save_model(
    dir: impl AsRef<Path>,
    model: &CovarianceModel,
    families: &ColumnFamilies,
    seed: Option<u64>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    write_matrix_epm1(dir.join(EIGVEC_FILE), &model.het_eigvecs)?;
    write_matrix_epm1(
        dir.join(MEAN_FILE),
        &model.mean.view().insert_axis(Axis(1)).to_owned(),
    )?;
    write_matrix_epm1(
        dir.join(NOISE_FILE),
        &model.noise_diag.view().insert_axis(Axis(1)).to_owned(),
    )?;

    let kept = model.kept();
    let mut table = Array2::<f64>::zeros((kept, 5));
    let scaled = model.scaled_eigvals();
    for i in 0..kept {
        table[[i, 0]] = i as f64;
        table[[i, 1]] = model.spikes[i];
        table[[i, 2]] = model.het_eigvals[i];
        table[[i, 3]] = model.alphas[i];
        table[[i, 4]] = scaled[i];
    }
    write_matrix_csv_with(
        dir.join(SPIKES_FILE),
        &table,
        &["per-spike estimates; scaled_eigval = alpha * het_eigval".to_string()],
        Some(&[
            "index".to_string(),
            "spike".to_string(),
            "het_eigval".to_string(),
            "alpha".to_string(),
            "scaled_eigval".to_string(),
        ]),
    )?;

    let (family, column_families) = families_to_metadata(families);
    let metadata = ModelMetadata {
        format_version: FORMAT_VERSION,
        family,
        column_families,
        rank: model.rank,
        kept,
        gamma: model.gamma,
        n_samples: model.n_samples,
        epsilon_default: crate::denoise::DEFAULT_EPSILON,
        dropped_columns: model.dropped_columns.clone(),
        seed,
    };
    let json = serde_json::to_string_pretty(&metadata)?;
    std::fs::write(dir.join(METADATA_FILE), json)?;
    Ok(())
}

/// Load a model directory written by [`save_model`].
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let meta_text = std::fs::read_to_string(dir.join(METADATA_FILE)).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.join(METADATA_FILE).display()),
        ))
    })?;
    let metadata: ModelMetadata = serde_json::from_str(&meta_text)?;
    if metadata.format_version != FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported model format version {}",
            metadata.format_version
        )));
    }

    let eigvecs = read_matrix(dir.join(EIGVEC_FILE))?;
    let mean: Array1<f64> = read_matrix(dir.join(MEAN_FILE))?.column(0).to_owned();
    let noise: Array1<f64> = read_matrix(dir.join(NOISE_FILE))?.column(0).to_owned();
    let (table, _) = read_matrix_with_header(dir.join(SPIKES_FILE))?;

    let kept = table.nrows();
    if kept != metadata.kept || eigvecs.ncols() != kept {
        return Err(Error::InvalidConfig(format!(
            "bundle inconsistency: metadata says {} spikes, table has {}, eigenvectors have {}",
            metadata.kept,
            kept,
            eigvecs.ncols()
        )));
    }
    if eigvecs.nrows() != mean.len() || noise.len() != mean.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} features", mean.len()),
            actual: format!("eigvecs {}x{}, noise {}", eigvecs.nrows(), eigvecs.ncols(), noise.len()),
        });
    }

    let model = CovarianceModel {
        rank: metadata.rank,
        spikes: table.column(1).to_vec(),
        het_eigvals: table.column(2).to_vec(),
        het_eigvecs: eigvecs,
        alphas: table.column(3).to_vec(),
        mean,
        noise_diag: noise,
        gamma: metadata.gamma,
        n_samples: metadata.n_samples,
        dropped_columns: metadata.dropped_columns.clone(),
    };
    let families = families_from_metadata(&metadata)?;
    Ok(ModelBundle {
        model,
        families,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{fit_epca, DataBatch};
    use crate::simgen::{gen_spiked_poisson, SpikedPoissonConfig};

    #[test]
    fn save_load_round_trip_reproduces_s_s() {
        let cfg = SpikedPoissonConfig::new(120, 24, 2.5, 77);
        let (batch, _) = gen_spiked_poisson(&cfg).unwrap();
        let model = fit_epca(&batch, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, batch.families(), Some(77)).unwrap();
        let bundle = load_model(dir.path()).unwrap();

        assert_eq!(bundle.model.rank, model.rank);
        assert_eq!(bundle.model.spikes, model.spikes);
        assert_eq!(bundle.model.alphas, model.alphas);
        assert_eq!(bundle.model.het_eigvecs, model.het_eigvecs);
        assert_eq!(bundle.metadata.seed, Some(77));

        let s1 = model.scaled_covariance();
        let s2 = bundle.model.scaled_covariance();
        let num: f64 = s1
            .iter()
            .zip(s2.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = s1.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 1e-12 * den.max(1e-300), "relative error {}", num / den);
    }

    #[test]
    fn per_column_families_round_trip() {
        use crate::expfam::ExponentialFamily::*;
        let values = ndarray::array![[1.0, 0.5], [3.0, -0.5], [2.0, 0.1]];
        let fams = ColumnFamilies::PerColumn(vec![Poisson, GaussianKnownVar(1.0)]);
        let batch = DataBatch::new(values, fams.clone()).unwrap();
        let model = fit_epca(&batch, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, &fams, None).unwrap();
        let bundle = load_model(dir.path()).unwrap();
        assert_eq!(bundle.families, fams);
    }

    #[test]
    fn missing_bundle_reports_path() {
        let err = load_model("/nonexistent/bundle").unwrap_err();
        assert!(err.to_string().contains("metadata.json"), "{err}");
    }
}
