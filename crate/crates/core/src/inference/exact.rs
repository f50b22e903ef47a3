//! Exhaustive MAP search, used as a reference for small graphs.

use super::{FactorGraph, Grounding, InferenceError};

/// Largest number of assignments exhaustive search will visit.
pub const EXACT_SEARCH_LIMIT: f64 = 1e7;

/// Minimum-energy assignment by enumeration. Ties go to the
/// lexicographically smallest assignment.
pub fn map_inference_exact(fg: &FactorGraph) -> Result<Grounding, InferenceError> {
    let size = fg.search_space();
    if size > EXACT_SEARCH_LIMIT {
        return Err(InferenceError::SearchSpaceTooLarge { size });
    }
    let n = fg.variables().len();
    let mut current = vec![0usize; n];
    let mut best = current.clone();
    let mut best_energy = fg.energy_unchecked(&current);
    'outer: loop {
        // odometer with the last variable fastest, so visiting order is lexicographic
        let mut i = n;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            current[i] += 1;
            if current[i] < fg.variables()[i].domain {
                break;
            }
            current[i] = 0;
        }
        let e = fg.energy_unchecked(&current);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&current);
        }
    }
    Ok(Grounding::from_assignment(fg, best, true, 0))
}
