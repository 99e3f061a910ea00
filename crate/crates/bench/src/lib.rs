//! Benchmark inputs shared by the criterion benches.

use metaprop::simulate::{example_dataset, EXAMPLE_SEED};
use metaprop::{encode_design, MetaProblem};

/// Example data with the given features, ready to fit.
pub fn example_problem(features: &[&str]) -> MetaProblem {
    let data = example_dataset(EXAMPLE_SEED).expect("example data");
    let design = encode_design(&data, features).expect("known features");
    MetaProblem::from_dataset(&data, &design).expect("valid problem")
}
