//! Strategies and checks shared by the property tests and the acceptance
//! runner.

#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::sample::Index;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use gridmesh_core::admm::{admm_step, AdmmConfig, AdmmIterate};
use gridmesh_core::aladin::{aladin_step, AladinConfig, AladinIterate};
use gridmesh_core::casefile::connection::{Tie, TieParams};
use gridmesh_core::casefile::json::{parse_case_json, write_case_json};
use gridmesh_core::casefile::matpower::{parse_matpower_case, write_matpower_case};
use gridmesh_core::casefile::read_case;
use gridmesh_core::centralized::solve_newton_raphson;
use gridmesh_core::localnlp::HessianMethod;
use gridmesh_core::network::RegionModel;
use gridmesh_core::topology::{merge_cases, DistProblem, Formulation};
use gridmesh_core::{CaseData, ConnectionSpec};

pub type Check = std::result::Result<(), TestCaseError>;

const NAMES: [&str; 3] = ["case9.m", "case14.m", "case30.m"];

pub const JACOBIAN_CASES: u32 = 100;
pub const SPLIT_CASES: u32 = 64;
pub const ROUND_TRIP_CASES: u32 = 64;
pub const FIXED_POINT_CASES: u32 = 12;

/// Relative tolerance of the analytic Jacobian against central differences.
pub const JACOBIAN_TOL: f64 = 1e-6;
/// Largest step a solver may take when started at the exact solution.
pub const FIXED_POINT_TOL: f64 = 1e-8;

fn library() -> &'static Vec<CaseData> {
    static CASES: OnceLock<Vec<CaseData>> = OnceLock::new();
    CASES.get_or_init(|| {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        NAMES.iter().map(|n| read_case(&dir.join(n)).unwrap()).collect()
    })
}

fn generation_buses(case: &CaseData) -> Vec<usize> {
    case.buses
        .iter()
        .filter(|b| b.bus_type.is_generation())
        .map(|b| b.bus_id)
        .collect()
}

/// Regions drawn from the bundled cases (repeats allowed), a random spanning
/// tree of ties plus up to two extra ties, and a random master. Every tie
/// endpoint is a distinct generation bus.
#[derive(Clone, Debug)]
pub struct Composite {
    pub cases: Vec<CaseData>,
    pub spec: ConnectionSpec,
}

pub fn composite() -> impl Strategy<Value = Composite> {
    (2usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0..NAMES.len(), n),
                prop::collection::vec(any::<Index>(), n),
                prop::collection::vec(any::<Index>(), 3 * n + 6),
                0..n,
                0usize..=2,
            )
        })
        .prop_map(|(picks, parents, draws, master, extra)| {
            let cases: Vec<CaseData> = picks.iter().map(|&k| library()[k].clone()).collect();
            let n = cases.len();
            let mut free: Vec<Vec<usize>> = cases.iter().map(generation_buses).collect();
            let mut draws = draws.into_iter();
            let mut take = |region: usize, free: &mut Vec<Vec<usize>>| -> Option<usize> {
                let pool = &mut free[region];
                if pool.is_empty() {
                    return None;
                }
                let k = draws.next().unwrap().index(pool.len());
                Some(pool.swap_remove(k))
            };
            let mut ties = Vec::new();
            let mut pairs = Vec::new();
            for (r, parent) in parents.iter().enumerate().skip(1) {
                pairs.push((parent.index(r), r, true));
            }
            for e in 0..extra {
                let a = e % n;
                let b = (a + 1 + e) % n;
                if a != b {
                    pairs.push((a, b, false));
                }
            }
            for (a, b, spanning) in pairs {
                // the previous region still has two free generation buses
                // when the drawn parent is exhausted
                let a = if spanning && free[a].is_empty() { b - 1 } else { a };
                if free[a].is_empty() || free[b].is_empty() {
                    continue;
                }
                let (Some(fa), Some(fb)) = (take(a, &mut free), take(b, &mut free)) else {
                    continue;
                };
                ties.push(Tie {
                    from_region: a + 1,
                    from_bus: fa,
                    to_region: b + 1,
                    to_bus: fb,
                    params: TieParams::default(),
                });
            }
            let spec = ConnectionSpec {
                n_regions: n,
                master: master + 1,
                ties,
                case_files: Vec::new(),
            };
            Composite { cases, spec }
        })
}

pub fn mutated_case() -> impl Strategy<Value = CaseData> {
    (
        0..NAMES.len(),
        prop::collection::vec(-1e3f64..1e3, 32),
        prop::collection::vec(0.5f64..1.5, 32),
        prop::collection::vec(1e-4f64..1.0, 32),
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 32),
    )
        .prop_map(|(k, loads, mags, imps, raw)| {
            let mut case = library()[k].clone();
            for (i, bus) in case.buses.iter_mut().enumerate() {
                bus.pd = loads[i % 32];
                bus.qd = raw[i % 32];
                bus.vm = mags[i % 32];
                bus.va = loads[(i + 7) % 32] / 10.0;
            }
            for (i, br) in case.branches.iter_mut().enumerate() {
                br.r = imps[i % 32] / 3.0;
                br.x = imps[(i + 5) % 32];
                br.b_charge = raw[(i + 3) % 32];
            }
            for (i, g) in case.gens.iter_mut().enumerate() {
                g.pg = loads[(i + 11) % 32];
                g.qg = raw[(i + 13) % 32];
            }
            case
        })
}

pub fn unit_draws() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 64)
}

fn central_difference_jacobian(model: &RegionModel, chi: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(model.n_residual(), chi.len());
    let mut probe = chi.clone();
    for c in 0..chi.len() {
        let h = 1e-6 * chi[c].abs().max(1.0);
        probe[c] = chi[c] + h;
        let up = model.residual(&probe).unwrap();
        probe[c] = chi[c] - h;
        let down = model.residual(&probe).unwrap();
        probe[c] = chi[c];
        jac.set_column(c, &((up - down) / (2.0 * h)));
    }
    jac
}

fn random_state(model: &RegionModel, unit: &[f64]) -> DVector<f64> {
    let mut chi = DVector::zeros(model.n_state());
    let mut u = unit.iter().cycle();
    let mut next = |lo: f64, hi: f64| lo + (hi - lo) * u.next().unwrap();
    for b in 0..model.n_bus() {
        chi[model.theta_index(b)] = next(-0.6, 0.6);
        chi[model.v_index(b)] = next(0.8, 1.2);
    }
    for j in 0..model.n_core() {
        chi[model.p_index(j)] = next(-3.0, 3.0);
        chi[model.q_index(j)] = next(-3.0, 3.0);
    }
    chi
}

fn exact_states(problem: &DistProblem) -> Option<Vec<DVector<f64>>> {
    let sol = solve_newton_raphson(&problem.merged.case, 1e-12, 30).ok()?;
    problem.scatter(&sol.va, &sol.vm).ok()
}

pub fn jacobian_matches_central_differences(c: &Composite, region: Index, unit: &[f64]) -> Check {
    let problem = DistProblem::build(&c.cases, &c.spec, Formulation::LeastSquares).unwrap();
    let model = &problem.regions[region.index(problem.n_regions())];
    let chi = random_state(model, unit);
    let exact = model.jacobian(&chi).unwrap();
    let fd = central_difference_jacobian(model, &chi);
    let rel = (&exact - &fd).amax() / exact.amax();
    prop_assert!(rel <= JACOBIAN_TOL, "relative error {rel:e}");
    Ok(())
}

pub fn every_region_misses_two_equations_per_copy(c: &Composite) -> Check {
    let problem = DistProblem::build(&c.cases, &c.spec, Formulation::Feasibility).unwrap();
    let mut copies = 0;
    for (model, case) in problem.regions.iter().zip(&c.cases) {
        prop_assert_eq!(model.n_core(), case.buses.len());
        prop_assert_eq!(model.n_state(), 4 * model.n_core() + 2 * model.n_copy());
        prop_assert_eq!(model.n_residual(), 4 * model.n_core());
        prop_assert_eq!(model.n_state() - model.n_residual(), 2 * model.n_copy());
        copies += model.n_copy();
    }
    prop_assert_eq!(copies, 2 * c.spec.ties.len());
    Ok(())
}

pub fn four_consensus_rows_per_connection(c: &Composite) -> Check {
    let problem = DistProblem::build(&c.cases, &c.spec, Formulation::Feasibility).unwrap();
    prop_assert_eq!(problem.n_rows(), 4 * c.spec.ties.len());
    for (block, model) in problem.consensus.iter().zip(&problem.regions) {
        prop_assert_eq!(block.n_rows, problem.n_rows());
        prop_assert_eq!(block.n_cols, model.n_state());
    }
    // consistent states satisfy the coupling exactly
    let n = problem.merged.case.buses.len();
    let consistent = problem.scatter(&vec![0.1; n], &vec![1.02; n]).unwrap();
    prop_assert_eq!(problem.consensus_residual(&consistent).amax(), 0.0);
    Ok(())
}

pub fn merge_split_remerge_is_idempotent(c: &Composite) -> Check {
    let merged = merge_cases(&c.cases, &c.spec).unwrap();
    let problem = DistProblem::build(&c.cases, &c.spec, Formulation::Feasibility).unwrap();
    prop_assert_eq!(&problem.remerge().unwrap(), &merged.case);
    let again = merge_cases(std::slice::from_ref(&merged.case), &ConnectionSpec::single_region()).unwrap();
    prop_assert_eq!(&again.case, &merged.case);
    let n_slack = merged.case.buses.iter().filter(|b| b.bus_type.code() == 3.0).count();
    prop_assert_eq!(n_slack, 1);
    Ok(())
}

pub fn case_files_round_trip_exactly(case: &CaseData) -> Check {
    let m = parse_matpower_case(&write_matpower_case(case, "roundtrip")).unwrap();
    prop_assert_eq!(&m, case);
    let j = parse_case_json(&write_case_json(case)).unwrap();
    prop_assert_eq!(&j, case);
    Ok(())
}

pub fn solvers_started_at_the_solution_do_not_move(c: &Composite) -> Check {
    let problem = DistProblem::build(&c.cases, &c.spec, Formulation::LeastSquares).unwrap();
    let sol = solve_newton_raphson(&problem.merged.case, 1e-12, 30);
    prop_assume!(sol.is_ok());
    let exact = exact_states(&problem).unwrap();

    // Newton-Raphson from its own solution
    let sol = sol.unwrap();
    let mut solved = problem.merged.case.clone();
    for (k, bus) in solved.buses.iter_mut().enumerate() {
        bus.vm = sol.vm[k];
        bus.va = sol.va[k].to_degrees();
    }
    let again = solve_newton_raphson(&solved, 1e-9, 30).unwrap();
    prop_assert_eq!(again.iterations, 0);

    for formulation in [Formulation::LeastSquares, Formulation::Feasibility] {
        let p = problem.clone().with_formulation(formulation);
        let zeros = DVector::zeros(p.n_rows());

        let admm = AdmmConfig {
            zeta0: Some(exact.clone()),
            lambda0: Some(vec![zeros.clone(); p.n_regions()]),
            ..AdmmConfig::default()
        };
        let it = AdmmIterate::initial(&p, &admm).unwrap();
        let step = admm_step(&p, &admm, &it).unwrap();
        for (a, b) in step.next.zeta.iter().zip(&exact) {
            let moved = (a - b).amax();
            prop_assert!(moved <= FIXED_POINT_TOL, "ADMM {formulation} moved by {moved:e}");
        }

        let aladin = AladinConfig {
            zeta0: Some(exact.clone()),
            lambda0: Some(zeros),
            hessian: match formulation {
                Formulation::LeastSquares => HessianMethod::GaussNewton,
                Formulation::Feasibility => HessianMethod::FiniteDiff,
            },
            ..AladinConfig::default()
        };
        let mut it = AladinIterate::initial(&p, &aladin).unwrap();
        let step = aladin_step(&p, &aladin, &mut it).unwrap();
        for d in &step.qp.delta {
            prop_assert!(d.amax() <= FIXED_POINT_TOL, "ALADIN {formulation} step {:e}", d.amax());
        }
    }
    Ok(())
}

/// Runs every property with its own case budget and reports the first
/// failure of each.
pub fn run_all() -> Vec<(&'static str, Result<(), String>)> {
    fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String> {
        let mut runner = TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        });
        runner.run(&strategy, test).map_err(|e| e.to_string())
    }
    vec![
        (
            "jacobian vs central differences",
            run(JACOBIAN_CASES, (composite(), any::<Index>(), unit_draws()), |(c, r, u)| {
                jacobian_matches_central_differences(&c, r, &u)
            }),
        ),
        (
            "dimension accounting",
            run(SPLIT_CASES, composite(), |c| every_region_misses_two_equations_per_copy(&c)),
        ),
        (
            "consensus rows",
            run(SPLIT_CASES, composite(), |c| four_consensus_rows_per_connection(&c)),
        ),
        (
            "merge/split/re-merge",
            run(SPLIT_CASES, composite(), |c| merge_split_remerge_is_idempotent(&c)),
        ),
        (
            "case-file round trip",
            run(ROUND_TRIP_CASES, mutated_case(), |c| case_files_round_trip_exactly(&c)),
        ),
        (
            "fixed points",
            run(FIXED_POINT_CASES, composite(), |c| solvers_started_at_the_solution_do_not_move(&c)),
        ),
    ]
}
