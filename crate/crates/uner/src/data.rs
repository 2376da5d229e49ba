//! Grouped unit-level data: per-area response vectors and covariate
//! matrices, with the area means cached at construction.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::column_rank;

/// One area's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaData {
    area_id: String,
    y: DVector<f64>,
    x: DMatrix<f64>,
    y_mean: f64,
    x_mean: DVector<f64>,
}

impl AreaData {
    pub fn new(area_id: impl Into<String>, y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let area_id = area_id.into();
        if y.is_empty() {
            return Err(Error::InvalidData(format!("area {area_id}: no observations")));
        }
        if x.nrows() != y.len() {
            return Err(Error::InvalidData(format!(
                "area {area_id}: covariate rows {} != responses {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidData(format!("area {area_id}: zero covariates")));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("area {area_id}: non-finite values")));
        }
        let y = DVector::from_vec(y);
        let y_mean = y.mean();
        let x_mean = x.row_mean().transpose();
        Ok(Self {
            area_id,
            y,
            x,
            y_mean,
            x_mean,
        })
    }

    pub fn area_id(&self) -> &str {
        &self.area_id
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Cached mean of the responses.
    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Cached column means of the covariates.
    pub fn x_mean(&self) -> &DVector<f64> {
        &self.x_mean
    }

    /// ȳ_i − x̄_iᵀβ, the area-level residual every shrinkage formula uses.
    pub fn mean_residual(&self, beta: &[f64]) -> f64 {
        let fit: f64 = self
            .x_mean
            .iter()
            .zip(beta.iter())
            .map(|(xm, b)| xm * b)
            .sum();
        self.y_mean - fit
    }
}

/// The full dataset: ordered areas with a common covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDataset {
    areas: Vec<AreaData>,
    q: usize,
    n_total: usize,
}

impl UnitDataset {
    /// Validates dimensional consistency and that the stacked covariate
    /// matrix has full column rank.
    pub fn new(areas: Vec<AreaData>) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::InvalidData("dataset has no areas".into()));
        }
        let q = areas[0].x().ncols();
        for a in &areas {
            if a.x().ncols() != q {
                return Err(Error::InvalidData(format!(
                    "area {}: covariate dimension {} != {}",
                    a.area_id(),
                    a.x().ncols(),
                    q
                )));
            }
        }
        let n_total = areas.iter().map(|a| a.n_units()).sum();
        let ds = Self { areas, q, n_total };
        let rank = column_rank(&ds.stacked_x());
        if rank < q {
            return Err(Error::RankDeficient { rank, cols: q });
        }
        Ok(ds)
    }

    pub fn areas(&self) -> &[AreaData] {
        &self.areas
    }

    /// Covariate dimension q.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Total unit count N.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Area count m.
    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    /// Stacked N×q covariate matrix in area order.
    pub fn stacked_x(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_total, self.q);
        let mut row = 0;
        for a in &self.areas {
            x.rows_mut(row, a.n_units()).copy_from(a.x());
            row += a.n_units();
        }
        x
    }

    /// Stacked response vector in area order.
    pub fn stacked_y(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_total);
        let mut row = 0;
        for a in &self.areas {
            y.rows_mut(row, a.n_units()).copy_from(a.y());
            row += a.n_units();
        }
        y
    }

    /// SHA-256 over the exact bit patterns of ids, responses and covariates.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.areas.len() as u64).to_le_bytes());
        hasher.update((self.q as u64).to_le_bytes());
        for a in &self.areas {
            hasher.update((a.area_id().len() as u64).to_le_bytes());
            hasher.update(a.area_id().as_bytes());
            hasher.update((a.n_units() as u64).to_le_bytes());
            for v in a.y().iter() {
                hasher.update(v.to_bits().to_le_bytes());
            }
            for v in a.x().iter() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-area combination vectors defining the targets μ_i = c_iᵀβ + v_i.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    c: Vec<DVector<f64>>,
}

impl TargetSpec {
    pub fn new(c: Vec<DVector<f64>>, data: &UnitDataset) -> Result<Self> {
        if c.len() != data.n_areas() {
            return Err(Error::InvalidData(format!(
                "target spec has {} vectors for {} areas",
                c.len(),
                data.n_areas()
            )));
        }
        if let Some(bad) = c.iter().position(|v| v.len() != data.q()) {
            return Err(Error::InvalidData(format!(
                "target vector {bad} has length {} but q = {}",
                c[bad].len(),
                data.q()
            )));
        }
        Ok(Self { c })
    }

    /// The default targets: c_i = x̄_i, so μ_i is the area mean response
    /// surface.
    pub fn area_means(data: &UnitDataset) -> Self {
        Self {
            c: data.areas().iter().map(|a| a.x_mean().clone()).collect(),
        }
    }

    pub fn c(&self) -> &[DVector<f64>] {
        &self.c
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn toy_dataset() -> UnitDataset {
        // Two areas, q = 2 (intercept + slope).
        let a1 = AreaData::new(
            "a1",
            vec![1.0, 2.0, 3.0],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, 1.5, 1.0, 2.5]),
        )
        .unwrap();
        let a2 = AreaData::new(
            "a2",
            vec![4.0, 5.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 3.5, 1.0, 4.5]),
        )
        .unwrap();
        UnitDataset::new(vec![a1, a2]).unwrap()
    }

    #[test]
    fn cached_means_match_arithmetic_means() {
        let ds = toy_dataset();
        let a1 = &ds.areas()[0];
        assert_relative_eq!(a1.y_mean(), 2.0, max_relative = 0.0);
        assert_relative_eq!(a1.x_mean()[0], 1.0, max_relative = 0.0);
        assert_relative_eq!(a1.x_mean()[1], 1.5, max_relative = 0.0);
        assert_eq!(ds.n_total(), 5);
        assert_eq!(ds.n_areas(), 2);
        assert_eq!(ds.q(), 2);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        // Second column is 2x the first.
        let a = AreaData::new(
            "a",
            vec![1.0, 2.0, 3.0],
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]),
        )
        .unwrap();
        match UnitDataset::new(vec![a]) {
            Err(Error::RankDeficient { rank, cols }) => {
                assert_eq!(rank, 1);
                assert_eq!(cols, 2);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn fingerprint_is_stable_and_content_sensitive() {
        let d1 = toy_dataset();
        let d2 = toy_dataset();
        assert_eq!(d1.fingerprint(), d2.fingerprint());

        let a1 = AreaData::new(
            "a1",
            vec![1.0, 2.0, 3.0001],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, 1.5, 1.0, 2.5]),
        )
        .unwrap();
        let a2 = AreaData::new(
            "a2",
            vec![4.0, 5.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 3.5, 1.0, 4.5]),
        )
        .unwrap();
        let d3 = UnitDataset::new(vec![a1, a2]).unwrap();
        assert_ne!(d1.fingerprint(), d3.fingerprint());
    }

    #[test]
    fn default_target_is_area_covariate_mean() {
        let ds = toy_dataset();
        let t = TargetSpec::area_means(&ds);
        assert_eq!(t.c().len(), 2);
        assert_relative_eq!(t.c()[0][1], 1.5, max_relative = 0.0);
    }

    #[test]
    fn mean_residual_subtracts_linear_fit() {
        let ds = toy_dataset();
        let r = ds.areas()[0].mean_residual(&[1.0, 2.0]);
        // ȳ = 2, x̄ᵀβ = 1*1 + 1.5*2 = 4
        assert_relative_eq!(r, -2.0, max_relative = 0.0);
    }
}
