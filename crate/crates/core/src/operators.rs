//! Bitstring variation operators and initial population seeding.

use std::collections::HashSet;

use rand::Rng;
use thiserror::Error;

use crate::genome::{space_cardinality, Genome, SpaceId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("cannot recombine a {0} genome with a {1} genome")]
    SpaceMismatch(SpaceId, SpaceId),
    #[error("population size must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error("{injected} injected genomes do not fit a population of {size} (one slot is the supernet)")]
    TooManyInjected { injected: usize, size: usize },
    #[error("injected genome {0} belongs to another space")]
    InjectedSpace(Genome),
    #[error("rate {0} is outside [0, 1]")]
    InvalidRate(f64),
}

fn check_rate(rate: f64) -> Result<(), OperatorError> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(OperatorError::InvalidRate(rate))
    }
}

/// Builds the initial population: `injected` genomes first, then distinct
/// uniform draws, and the supernet itself in the last slot.
pub fn seed_population<R: Rng + ?Sized>(
    space: SpaceId,
    size: usize,
    injected: &[Genome],
    rng: &mut R,
) -> Result<Vec<Genome>, OperatorError> {
    if size < 2 {
        return Err(OperatorError::PopulationTooSmall(size));
    }
    if injected.len() > size - 1 {
        return Err(OperatorError::TooManyInjected {
            injected: injected.len(),
            size,
        });
    }
    if let Some(g) = injected.iter().find(|g| g.space() != space) {
        return Err(OperatorError::InjectedSpace(*g));
    }
    let supernet = space.supernet();
    let mut seen: HashSet<Genome> = HashSet::from([supernet]);
    let mut genomes = injected.to_vec();
    seen.extend(injected.iter().copied());
    while genomes.len() < size - 1 {
        let g = Genome::random(space, rng);
        if seen.len() as u64 >= space_cardinality(space) || seen.insert(g) {
            genomes.push(g);
        }
    }
    genomes.push(supernet);
    Ok(genomes)
}

/// Uniform crossover applied with probability `rate`; otherwise the parents
/// are copied.
pub fn crossover<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    rate: f64,
    rng: &mut R,
) -> Result<(Genome, Genome), OperatorError> {
    if a.space() != b.space() {
        return Err(OperatorError::SpaceMismatch(a.space(), b.space()));
    }
    check_rate(rate)?;
    if !rng.gen_bool(rate) {
        return Ok((*a, *b));
    }
    let (mut x, mut y) = (*a, *b);
    for i in 0..a.len() {
        if rng.gen_bool(0.5) {
            x = x.with_bit(i, b.bit(i));
            y = y.with_bit(i, a.bit(i));
        }
    }
    Ok((x, y))
}

/// Flips each bit independently with probability `per_bit_rate`.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genome,
    per_bit_rate: f64,
    rng: &mut R,
) -> Result<Genome, OperatorError> {
    check_rate(per_bit_rate)?;
    let mut out = *g;
    for i in 0..g.len() {
        if rng.gen_bool(per_bit_rate) {
            out = out.with_bit(i, !g.bit(i));
        }
    }
    Ok(out)
}
