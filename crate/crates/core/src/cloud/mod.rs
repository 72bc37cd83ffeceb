//! Point cloud data model, PLY I/O, voxel-grid pruning and k-nearest-neighbor queries.

mod knn;
pub mod ply;
pub(crate) mod voxel;

use ndarray::Array2;

use crate::error::{arg_err, Result};

pub use knn::{build_knn, KdTree, NeighborhoodTable};
pub use ply::{load_cloud, save_cloud, PlyFormat};
pub use voxel::voxel_prune;

/// Object id carried by points that belong to no annotated object.
pub const UNLABELED: u32 = u32::MAX;

/// Positions, radiometry and optional ground truth for `N` points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    radiometry: Array2<f64>,
    class_labels: Option<Vec<u32>>,
    object_ids: Option<Vec<u32>>,
}

impl PointCloud {
    /// Builds a cloud, checking that positions are finite, radiometry lies in `[0, 1]`
    /// and label arrays have one entry per point.
    pub fn new(
        positions: Vec<[f64; 3]>,
        radiometry: Array2<f64>,
        class_labels: Option<Vec<u32>>,
        object_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = positions.len();
        if radiometry.nrows() != n {
            return arg_err(format!(
                "radiometry has {} rows for {n} points",
                radiometry.nrows()
            ));
        }
        if let Some((i, _)) = positions
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return arg_err(format!("position of point {i} is not finite"));
        }
        if radiometry.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return arg_err("radiometry must lie in [0, 1]");
        }
        for (name, arr) in [("class labels", &class_labels), ("object ids", &object_ids)] {
            if let Some(a) = arr {
                if a.len() != n {
                    return arg_err(format!("{name} have length {} for {n} points", a.len()));
                }
            }
        }
        Ok(Self {
            positions,
            radiometry,
            class_labels,
            object_ids,
        })
    }

    /// A cloud with positions only (`d = 0`, no labels).
    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, Array2::zeros((n, 0)), None, None)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn radiometry(&self) -> &Array2<f64> {
        &self.radiometry
    }

    /// Number of radiometric channels `d`.
    pub fn radiometry_dim(&self) -> usize {
        self.radiometry.ncols()
    }

    pub fn class_labels(&self) -> Option<&[u32]> {
        self.class_labels.as_deref()
    }

    pub fn object_ids(&self) -> Option<&[u32]> {
        self.object_ids.as_deref()
    }

    /// Copy of the cloud restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let d = self.radiometry_dim();
        let mut rad = Array2::zeros((indices.len(), d));
        for (row, &i) in indices.iter().enumerate() {
            rad.row_mut(row).assign(&self.radiometry.row(i));
        }
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            radiometry: rad,
            class_labels: self
                .class_labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            object_ids: self
                .object_ids
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Same cloud with every position rotated by `angle` radians around the vertical axis.
    pub fn rotated_z(&self, angle: f64) -> PointCloud {
        let mut out = self.clone();
        let (s, c) = angle.sin_cos();
        for p in out.positions.iter_mut() {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
        out
    }

    /// Same cloud with every position shifted by `t`.
    pub fn translated(&self, t: [f64; 3]) -> PointCloud {
        let mut out = self.clone();
        for p in out.positions.iter_mut() {
            for a in 0..3 {
                p[a] += t[a];
            }
        }
        out
    }
}

/// Positions and radiometry of the `k` neighbors of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: [f64; 3],
    pub positions: Vec<[f64; 3]>,
    pub radiometry: Array2<f64>,
}

/// Gathers the neighborhood of point `i`, rows in the table's order.
pub fn gather_neighborhood(
    cloud: &PointCloud,
    table: &NeighborhoodTable,
    i: usize,
) -> Result<Neighborhood> {
    if i >= cloud.len() || i >= table.len() {
        return arg_err(format!("point index {i} out of range"));
    }
    let ids = table.row(i);
    let d = cloud.radiometry_dim();
    let mut radiometry = Array2::zeros((ids.len(), d));
    for (row, &j) in ids.iter().enumerate() {
        radiometry
            .row_mut(row)
            .assign(&cloud.radiometry().row(j as usize));
    }
    Ok(Neighborhood {
        center: cloud.positions()[i],
        positions: ids.iter().map(|&j| cloud.positions()[j as usize]).collect(),
        radiometry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_out_of_range_radiometry() {
        let err = PointCloud::new(vec![[0.0; 3]], array![[1.5]], None, None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let err = PointCloud::new(
            vec![[0.0; 3], [1.0; 3]],
            Array2::zeros((2, 0)),
            Some(vec![0]),
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_non_finite_positions() {
        assert!(PointCloud::from_positions(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    fn two_points() -> PointCloud {
        PointCloud::new(
            vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]],
            array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn neighborhood_of_two_point_cloud() {
        let cloud = two_points();
        let table = build_knn(&cloud, 1).unwrap();
        let nb = gather_neighborhood(&cloud, &table, 0).unwrap();
        assert_eq!(nb.center, [0.0, 0.0, 0.0]);
        assert_eq!(nb.positions, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(nb.radiometry, array![[0.4, 0.5, 0.6]]);
    }

    #[test]
    fn neighborhood_rows_follow_table_order() {
        let cloud = PointCloud::from_positions(vec![
            [0.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 0.0, 0.0],
        ])
        .unwrap();
        let table = build_knn(&cloud, 3).unwrap();
        let nb = gather_neighborhood(&cloud, &table, 0).unwrap();
        let expected: Vec<_> = table
            .row(0)
            .iter()
            .map(|&j| cloud.positions()[j as usize])
            .collect();
        assert_eq!(nb.positions, expected);
        assert_eq!(table.row(0), &[3, 2, 1]);
    }

    #[test]
    fn neighborhood_without_radiometry_has_zero_columns() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let table = build_knn(&cloud, 1).unwrap();
        let nb = gather_neighborhood(&cloud, &table, 1).unwrap();
        assert_eq!(nb.radiometry.dim(), (1, 0));
    }

    #[test]
    fn neighborhood_index_out_of_range() {
        let cloud = two_points();
        let table = build_knn(&cloud, 1).unwrap();
        assert!(gather_neighborhood(&cloud, &table, 2).is_err());
    }
}
