mod support;

use proptest::prelude::*;
use proptest::sample::Index;

use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(JACOBIAN_CASES))]

    #[test]
    fn jacobian_matches_central_differences_on_random_states(
        c in composite(),
        region in any::<Index>(),
        unit in unit_draws(),
    ) {
        jacobian_matches_central_differences(&c, region, &unit)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(SPLIT_CASES))]

    #[test]
    fn split_leaves_two_missing_equations_per_copy(c in composite()) {
        every_region_misses_two_equations_per_copy(&c)?;
    }

    #[test]
    fn consensus_has_four_rows_per_connection(c in composite()) {
        four_consensus_rows_per_connection(&c)?;
    }

    #[test]
    fn remerging_a_split_reproduces_the_merge(c in composite()) {
        merge_split_remerge_is_idempotent(&c)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(ROUND_TRIP_CASES))]

    #[test]
    fn matpower_and_json_round_trip_exactly(case in mutated_case()) {
        case_files_round_trip_exactly(&case)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(FIXED_POINT_CASES))]

    #[test]
    fn solvers_started_at_the_solution_take_no_step(c in composite()) {
        solvers_started_at_the_solution_do_not_move(&c)?;
    }
}
