use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle};

/// Assigns whole states to the test split: for every object (ascending id)
/// its states (ascending) are shuffled with the seeded stream and the first
/// `ceil(test_ratio * n_states)` become test states. All views of a state
/// follow their state.
pub fn split_by_state(dataset: &Dataset, test_ratio: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&test_ratio) {
        return Err(Error::Config(format!(
            "test_ratio must lie in [0, 1), got {test_ratio}"
        )));
    }
    let mut rng = seeded(seed);
    let mut test_states = std::collections::BTreeSet::new();
    for o in dataset.objects() {
        let mut states = dataset.states_of(o);
        if states.len() < 2 {
            return Err(Error::Dataset(format!(
                "object {o} has {} state(s); splitting by state needs at least two",
                states.len()
            )));
        }
        let n_test = (test_ratio * states.len() as f64).ceil() as usize;
        if n_test >= states.len() {
            return Err(Error::Dataset(format!(
                "test_ratio {test_ratio} would move all {} states of object {o} to test",
                states.len()
            )));
        }
        shuffle(&mut states, &mut rng);
        for &s in &states[..n_test] {
            test_states.insert((o, s));
        }
    }
    let splits = dataset
        .records()
        .iter()
        .map(|r| {
            if test_states.contains(&(r.object_id, r.state_id)) {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect();
    dataset.with_splits(splits)
}
