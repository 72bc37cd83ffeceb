use std::collections::HashMap;

use ndarray::Array2;

use super::{PointCloud, UNLABELED};
use crate::error::{arg_err, Result};

/// Averages the points falling in each cell of a world-anchored regular grid.
///
/// Cell index is `floor(coordinate / voxel_size)`. Output points appear in the order of
/// the first input point of their cell. Position and radiometry are means; class label and
/// object id are the per-cell majority with ties going to the smallest id (unlabeled points
/// do not vote on object ids). Returns the pruned cloud and, for every input point, the
/// index of its output point.
pub fn voxel_prune(cloud: &PointCloud, voxel_size: f64) -> Result<(PointCloud, Vec<usize>)> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return arg_err(format!("voxel size must be positive, got {voxel_size}"));
    }
    let mut cell_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut mapping = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions().iter().enumerate() {
        let key = [
            (p[0] / voxel_size).floor() as i64,
            (p[1] / voxel_size).floor() as i64,
            (p[2] / voxel_size).floor() as i64,
        ];
        let id = *cell_of.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[id].push(i);
        mapping.push(id);
    }

    let d = cloud.radiometry_dim();
    let mut positions = Vec::with_capacity(members.len());
    let mut radiometry: Array2<f64> = Array2::zeros((members.len(), d));
    for (v, pts) in members.iter().enumerate() {
        let n = pts.len() as f64;
        let mut mean = [0.0; 3];
        for &i in pts {
            for a in 0..3 {
                mean[a] += cloud.positions()[i][a];
            }
            for c in 0..d {
                radiometry[[v, c]] += cloud.radiometry()[[i, c]];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for c in 0..d {
            // clamp guards against rounding just past 1.0
            radiometry[[v, c]] = (radiometry[[v, c]] / n).clamp(0.0, 1.0);
        }
        positions.push(mean);
    }

    let classes = cloud.class_labels().map(|l| {
        members
            .iter()
            .map(|pts| majority(pts.iter().map(|&i| l[i])))
            .collect::<Vec<u32>>()
    });
    let objects = cloud.object_ids().map(|l| {
        members
            .iter()
            .map(|pts| majority(pts.iter().map(|&i| l[i]).filter(|&o| o != UNLABELED)))
            .collect()
    });
    let pruned = PointCloud::new(positions, radiometry, classes, objects)?;
    Ok((pruned, mapping))
}

/// Most frequent value, smallest value on ties, `UNLABELED` when empty.
pub(crate) fn majority(values: impl Iterator<Item = u32>) -> u32 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
        .unwrap_or(UNLABELED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn single_point_is_unchanged() {
        let cloud = PointCloud::new(
            vec![[0.3, -1.2, 4.0]],
            array![[0.5]],
            Some(vec![2]),
            Some(vec![7]),
        )
        .unwrap();
        let (out, map) = voxel_prune(&cloud, 0.37).unwrap();
        assert_eq!(out, cloud);
        assert_eq!(map, vec![0]);
    }

    #[test]
    fn close_points_are_averaged() {
        let cloud = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]],
            array![[0.2, 0.4, 0.6], [0.4, 0.6, 0.8]],
            None,
            None,
        )
        .unwrap();
        let (out, map) = voxel_prune(&cloud, 0.03).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.positions()[0][0] - 0.005).abs() < 1e-15);
        assert_eq!(out.positions()[0][1], 0.0);
        let rad = out.radiometry().row(0).to_vec();
        for (got, want) in rad.iter().zip([0.3, 0.5, 0.7]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(map, vec![0, 0]);
    }

    #[test]
    fn distant_points_stay_separate() {
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]).unwrap();
        let (out, map) = voxel_prune(&cloud, 0.03).unwrap();
        assert_eq!(out, cloud);
        assert_eq!(map, vec![0, 1]);
    }

    #[test]
    fn labels_take_majority_with_smallest_tie() {
        let cloud = PointCloud::new(
            vec![
                [0.0; 3],
                [0.001, 0.0, 0.0],
                [0.002, 0.0, 0.0],
                [0.003, 0.0, 0.0],
            ],
            Array2::zeros((4, 0)),
            Some(vec![3, 1, 3, 1]),
            Some(vec![UNLABELED, 9, UNLABELED, 4]),
        )
        .unwrap();
        let (out, _) = voxel_prune(&cloud, 1.0).unwrap();
        assert_eq!(out.class_labels().unwrap(), &[1]);
        assert_eq!(out.object_ids().unwrap(), &[4]);
    }

    #[test]
    fn rejects_non_positive_size() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]]).unwrap();
        assert!(voxel_prune(&cloud, 0.0).is_err());
        assert!(voxel_prune(&cloud, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn pruning_is_idempotent(
            raw in prop::collection::vec((-50i32..50, -50i32..50, -50i32..50, 0u8..=255), 1..120),
            size in 0.02f64..0.4,
        ) {
            let positions: Vec<[f64; 3]> =
                raw.iter().map(|&(x, y, z, _)| [x as f64 * 0.013, y as f64 * 0.011, z as f64 * 0.017]).collect();
            let rad = Array2::from_shape_fn((raw.len(), 1), |(i, _)| raw[i].3 as f64 / 255.0);
            let labels: Vec<u32> = raw.iter().map(|r| (r.3 % 3) as u32).collect();
            let cloud = PointCloud::new(positions, rad, Some(labels.clone()), Some(labels)).unwrap();
            let (once, _) = voxel_prune(&cloud, size).unwrap();
            let (twice, map) = voxel_prune(&once, size).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(map, (0..once.len()).collect::<Vec<_>>());
        }
    }
}
