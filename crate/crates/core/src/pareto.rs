//! Pareto fronts, exact 2-D hypervolume, hyperarea differences and gene
//! frequencies over fronts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Genome, SpaceId};
use crate::nsga::{nondominated_sort, SortError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("hypervolume supports exactly 2 objectives, got {0}")]
    Dimension(usize),
    #[error("point {point:?} does not dominate the reference point {reference:?}")]
    OutsideReference { point: Vec<f64>, reference: Vec<f64> },
    #[error("front mixes {0} and {1} genomes")]
    MixedSpaces(SpaceId, SpaceId),
    #[error("front is empty")]
    EmptyFront,
    #[error(transparent)]
    Sort(#[from] SortError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub genome: Genome,
    pub objectives: Vec<f64>,
}

impl AsRef<[f64]> for FrontPoint {
    fn as_ref(&self) -> &[f64] {
        &self.objectives
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub generation: usize,
    pub objective_names: Vec<String>,
    /// Mutually non-dominated, ascending by the first objective.
    pub points: Vec<FrontPoint>,
}

impl ParetoFront {
    pub fn empty(generation: usize, objective_names: Vec<String>) -> Self {
        ParetoFront {
            generation,
            objective_names,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn genomes(&self) -> Vec<Genome> {
        self.points.iter().map(|p| p.genome).collect()
    }
}

/// The rank-0 set of `members`, keeping the first member of each group with
/// identical objective vectors.
pub fn extract_front(
    members: &[FrontPoint],
    generation: usize,
    objective_names: Vec<String>,
) -> Result<ParetoFront, MetricsError> {
    let fronts = nondominated_sort(members)?;
    let mut points: Vec<FrontPoint> = Vec::new();
    if let Some(first) = fronts.first() {
        for &i in first {
            if !points.iter().any(|p| p.objectives == members[i].objectives) {
                points.push(members[i].clone());
            }
        }
    }
    points.sort_by(|a, b| {
        a.objectives
            .iter()
            .zip(&b.objectives)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(ParetoFront {
        generation,
        objective_names,
        points,
    })
}

/// Exact area dominated by `points` and bounded by `reference` (minimization).
///
/// Every point must strictly dominate the reference point.
pub fn hypervolume_2d<V: AsRef<[f64]>>(points: &[V], reference: &[f64]) -> Result<f64, MetricsError> {
    if reference.len() != 2 {
        return Err(MetricsError::Dimension(reference.len()));
    }
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        if p.len() != 2 {
            return Err(MetricsError::Dimension(p.len()));
        }
        if !(p[0] < reference[0] && p[1] < reference[1]) {
            return Err(MetricsError::OutsideReference {
                point: p.to_vec(),
                reference: reference.to_vec(),
            });
        }
        pts.push([p[0], p[1]]);
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));

    let mut area = 0.0;
    let mut ceiling = reference[1];
    for [x, y] in pts {
        if y < ceiling {
            area += (reference[0] - x) * (ceiling - y);
            ceiling = y;
        }
    }
    Ok(area)
}

/// Hypervolume of a front with points outside the reference box ignored
/// (they dominate no area inside it).
pub fn front_hypervolume(front: &ParetoFront, reference: &[f64]) -> Result<f64, MetricsError> {
    let inside: Vec<&FrontPoint> = front
        .points
        .iter()
        .filter(|p| p.objectives.iter().zip(reference).all(|(v, r)| v < r))
        .collect();
    hypervolume_2d(&inside, reference)
}

pub fn hyperarea_difference(
    prev: &ParetoFront,
    curr: &ParetoFront,
    reference: &[f64],
) -> Result<f64, MetricsError> {
    Ok(front_hypervolume(curr, reference)? - front_hypervolume(prev, reference)?)
}

/// Reference point from a set of objective vectors: the objective-wise maximum
/// pushed out by 10% (by 0.1 when the maximum is not positive).
pub fn reference_point<V: AsRef<[f64]>>(points: &[V]) -> Vec<f64> {
    let k = points.first().map_or(0, |p| p.as_ref().len());
    (0..k)
        .map(|m| {
            let max = points
                .iter()
                .map(|p| p.as_ref()[m])
                .fold(f64::NEG_INFINITY, f64::max);
            if max > 0.0 {
                max * 1.1
            } else {
                max + 0.1
            }
        })
        .collect()
}

/// Fraction of genomes with each bit set.
pub fn gene_frequency(genomes: &[Genome]) -> Result<Vec<f64>, MetricsError> {
    let first = genomes.first().ok_or(MetricsError::EmptyFront)?;
    if let Some(g) = genomes.iter().find(|g| g.space() != first.space()) {
        return Err(MetricsError::MixedSpaces(first.space(), g.space()));
    }
    let n = genomes.len() as f64;
    Ok((0..first.len())
        .map(|i| genomes.iter().filter(|g| g.bit(i)).count() as f64 / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(objectives: &[f64]) -> FrontPoint {
        FrontPoint {
            genome: SpaceId::Xception.supernet(),
            objectives: objectives.to_vec(),
        }
    }

    fn names() -> Vec<String> {
        vec!["error".into(), "flops".into()]
    }

    #[test]
    fn dominated_point_is_dropped() {
        let f = extract_front(&[fp(&[2.0, 2.0]), fp(&[2.0, 1.0]), fp(&[1.0, 2.0])], 1, names()).unwrap();
        let objs: Vec<_> = f.points.iter().map(|p| p.objectives.clone()).collect();
        assert_eq!(objs, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        let single = extract_front(&[fp(&[5.0, 5.0])], 1, names()).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn duplicates_collapse() {
        let f = extract_front(&[fp(&[1.0, 1.0]), fp(&[1.0, 1.0])], 1, names()).unwrap();
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn unit_box() {
        assert_eq!(hypervolume_2d(&[[0.0, 0.0]], &[1.0, 1.0]).unwrap(), 1.0);
        let empty: [[f64; 2]; 0] = [];
        assert_eq!(hypervolume_2d(&empty, &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_point_staircase() {
        let hv = hypervolume_2d(&[[0.2, 0.4], [0.5, 0.1]], &[1.0, 1.0]).unwrap();
        assert!((hv - 0.63).abs() < 1e-12);
        let with_dominated = hypervolume_2d(&[[0.2, 0.4], [0.5, 0.1], [0.6, 0.6]], &[1.0, 1.0]).unwrap();
        assert_eq!(hv, with_dominated);
    }

    #[test]
    fn reference_must_be_dominated() {
        assert!(matches!(
            hypervolume_2d(&[[1.0, 0.5]], &[1.0, 1.0]),
            Err(MetricsError::OutsideReference { .. })
        ));
        assert!(matches!(
            hypervolume_2d(&[[0.1, 0.1, 0.1]], &[1.0, 1.0, 1.0]),
            Err(MetricsError::Dimension(3))
        ));
    }

    #[test]
    fn hyperarea_difference_signs() {
        let r = [1.0, 1.0];
        let prev = extract_front(&[fp(&[0.5, 0.5])], 1, names()).unwrap();
        assert_eq!(hyperarea_difference(&prev, &prev, &r).unwrap(), 0.0);
        let curr = extract_front(&[fp(&[0.5, 0.5]), fp(&[0.2, 0.6])], 2, names()).unwrap();
        assert!(hyperarea_difference(&prev, &curr, &r).unwrap() > 0.0);
    }

    #[test]
    fn points_outside_the_box_are_ignored_by_front_hypervolume() {
        let f = extract_front(&[fp(&[0.5, 0.5]), fp(&[0.1, 3.0])], 1, names()).unwrap();
        assert_eq!(front_hypervolume(&f, &[1.0, 1.0]).unwrap(), 0.25);
    }

    #[test]
    fn reference_point_pads_maximum() {
        let r = reference_point(&[[10.0, 2.0], [5.0, 4.0]]);
        assert_eq!(r, vec![11.0, 4.4]);
        assert_eq!(reference_point(&[[0.0, -1.0]]), vec![0.1, -0.9]);
    }

    #[test]
    fn gene_frequency_examples() {
        let g = SpaceId::Xception.supernet();
        let f = gene_frequency(&[g]).unwrap();
        let bits: Vec<f64> = g.bits().map(|b| if b { 1.0 } else { 0.0 }).collect();
        assert_eq!(f, bits);

        let a = Genome::from_bit_str(SpaceId::Xception, "0100001010101010101010").unwrap();
        let b = Genome::from_bit_str(SpaceId::Xception, "0100000101010101010101").unwrap();
        let f = gene_frequency(&[a, b]).unwrap();
        assert!(f[6..].iter().all(|&x| x == 0.5));

        assert!(matches!(gene_frequency(&[]), Err(MetricsError::EmptyFront)));
        assert!(matches!(
            gene_frequency(&[g, SpaceId::MobileNetV2.supernet()]),
            Err(MetricsError::MixedSpaces(..))
        ));
    }
}
