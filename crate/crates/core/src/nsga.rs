//! NSGA-II building blocks: fast non-dominated sorting, crowding distance,
//! crowded binary tournaments and elitist truncation.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::Genome;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SortError {
    #[error("objective {objective} of point {point} is not finite")]
    NonFinite { point: usize, objective: usize },
    #[error("point {point} has {found} objectives, expected {expected}")]
    Arity {
        point: usize,
        expected: usize,
        found: usize,
    },
}

/// `a` dominates `b` when it is no worse in every objective and strictly
/// better in at least one (all objectives minimized).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

fn check_points<V: AsRef<[f64]>>(points: &[V]) -> Result<(), SortError> {
    let Some(first) = points.first() else {
        return Ok(());
    };
    let expected = first.as_ref().len();
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != expected {
            return Err(SortError::Arity {
                point: i,
                expected,
                found: p.len(),
            });
        }
        if let Some(j) = p.iter().position(|v| !v.is_finite()) {
            return Err(SortError::NonFinite {
                point: i,
                objective: j,
            });
        }
    }
    Ok(())
}

/// Partitions point indices into successive non-dominated fronts.
///
/// Indices inside each front are in ascending order.
pub fn nondominated_sort<V: AsRef<[f64]>>(points: &[V]) -> Result<Vec<Vec<usize>>, SortError> {
    check_points(points)?;
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (points[i].as_ref(), points[j].as_ref());
            if dominates(p, q) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(q, p) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of every point within one front.
///
/// Boundary points of each objective get `+inf`; interior points accumulate
/// the normalized gap between their neighbours. An objective with zero range
/// contributes nothing.
pub fn crowding_distance<V: AsRef<[f64]>>(front: &[V]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let k = front[0].as_ref().len();
    let mut distance = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..k {
        let value = |i: usize| front[i].as_ref()[m];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let (lo, hi) = (value(order[0]), value(order[n - 1]));
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let i = order[w];
            distance[i] += (value(order[w + 1]) - value(order[w - 1])) / range;
        }
    }
    distance
}

/// Rounds to six decimal places, the precision of every persisted float.
pub fn quantize(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e6).round() / 1e6
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub evaluator_id: String,
    pub subset_fraction: f64,
}

/// A scored candidate. `rank` and `crowding` are filled in by
/// [`environmental_selection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub objectives: Vec<f64>,
    pub rank: Option<usize>,
    #[serde(with = "crowding_serde")]
    pub crowding: Option<f64>,
    /// Generation in which this genome was first evaluated.
    pub born: usize,
    pub eval_meta: Option<EvalMeta>,
}

impl Individual {
    pub fn new(genome: Genome, objectives: Vec<f64>, born: usize) -> Self {
        Individual {
            genome,
            objectives,
            rank: None,
            crowding: None,
            born,
            eval_meta: None,
        }
    }
}

impl AsRef<[f64]> for Individual {
    fn as_ref(&self) -> &[f64] {
        &self.objectives
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: usize,
    pub individuals: Vec<Individual>,
}

/// Crowded-comparison order: lower rank first, then larger crowding distance.
pub fn crowded_cmp(a: &Individual, b: &Individual) -> Ordering {
    let rank = |i: &Individual| i.rank.unwrap_or(usize::MAX);
    let crowd = |i: &Individual| i.crowding.unwrap_or(0.0);
    rank(a)
        .cmp(&rank(b))
        .then_with(|| crowd(b).total_cmp(&crowd(a)))
}

/// Binary tournament under the crowded-comparison operator; full ties are
/// settled by a fair coin.
pub fn tournament_select<'a, R: Rng + ?Sized>(pop: &'a [Individual], rng: &mut R) -> &'a Individual {
    assert!(!pop.is_empty(), "tournament over an empty population");
    let a = &pop[rng.gen_range(0..pop.len())];
    let b = &pop[rng.gen_range(0..pop.len())];
    match crowded_cmp(a, b) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.gen_bool(0.5) {
                a
            } else {
                b
            }
        }
    }
}

/// Ranks and crowds `candidates`, then keeps the best `size` of them: whole
/// fronts while they fit, the last front truncated by descending crowding.
pub fn environmental_selection(
    mut candidates: Vec<Individual>,
    size: usize,
) -> Result<Vec<Individual>, SortError> {
    let fronts = nondominated_sort(&candidates)?;
    for (rank, front) in fronts.iter().enumerate() {
        let members: Vec<&[f64]> = front.iter().map(|&i| candidates[i].as_ref()).collect();
        let crowding = crowding_distance(&members);
        for (&i, d) in front.iter().zip(crowding) {
            candidates[i].rank = Some(rank);
            candidates[i].crowding = Some(quantize(d));
        }
    }

    let mut keep = Vec::with_capacity(size.min(candidates.len()));
    for front in &fronts {
        let room = size - keep.len();
        if room == 0 {
            break;
        }
        let mut front = front.clone();
        if front.len() > room {
            // stable: equal crowding keeps the earlier candidate
            front.sort_by(|&a, &b| {
                crowded_cmp(&candidates[a], &candidates[b])
            });
            front.truncate(room);
        }
        keep.extend(front);
    }
    let mut slots: Vec<Option<Individual>> = candidates.into_iter().map(Some).collect();
    Ok(keep
        .into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect())
}

mod crowding_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => s.serialize_some("inf"),
            Some(x) => s.serialize_some(x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Finite(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!(
                "invalid crowding distance {t:?}"
            ))),
        }
    }
}
