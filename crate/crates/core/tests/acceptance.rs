//! Acceptance runner: one PASS/FAIL line per criterion, exits nonzero if any
//! criterion fails. All distributed runs use a single worker thread.

mod support;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;

use gridmesh_core::admm::{admm_solve, admm_step, AdmmConfig, AdmmIterate};
use gridmesh_core::aladin::{aladin_solve, AladinConfig};
use gridmesh_core::casefile::load_composite;
use gridmesh_core::centralized::{solve_newton_raphson, PfSolution};
use gridmesh_core::localnlp::HessianMethod;
use gridmesh_core::perturb::perturb_states;
use gridmesh_core::topology::{DistProblem, Formulation};
use gridmesh_core::trace::{RunOutcome, Termination};

const NORM_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 10;
const MAX_SECONDS: f64 = 60.0;
const DEVIATION_TOL: f64 = 1e-6;
const PROFILE_TAIL: usize = 3;
/// Entrywise bound on `(λ⁺ − λ) − ρA(χ − ζ)`, in units of the multiplier
/// magnitude.
const DUAL_ULPS: f64 = 2.0;
const SIGMAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const SIGMA_SEED: u64 = 42;
const CONSENSUS_LEVEL: f64 = 1e-3;
const ADMM_BUDGET: usize = 500;
const STAGNATION_LEVEL: f64 = 1e-6;
/// Tried in order; the first stagnating penalty settles the criterion.
const ADMM_RHOS: [f64; 4] = [1e3, 1e5, 1.0, 1e-1];
const LOCAL_SIGMA: f64 = 1e-3;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, criterion: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn load(name: &str, formulation: Formulation) -> DistProblem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name);
    let (cases, spec) = load_composite(&path).unwrap();
    DistProblem::build(&cases, &spec, formulation).unwrap()
}

fn central(problem: &DistProblem) -> PfSolution {
    solve_newton_raphson(&problem.merged.case, 1e-12, 30).unwrap()
}

/// Largest per-bus deviation of `vm`, `va`, `p` and `q` from Newton-Raphson.
fn deviation(problem: &DistProblem, outcome: &RunOutcome, nr: &PfSolution) -> f64 {
    let (va, vm) = problem.gather(&outcome.states);
    let (p, q) = problem.gather_injections(&outcome.states);
    [(va, &nr.va), (vm, &nr.vm), (p, &nr.p), (q, &nr.q)]
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn final_norm(outcome: &RunOutcome) -> f64 {
    outcome.trace.norm_history().last().map_or(f64::INFINITY, |n| n.max())
}

fn status(outcome: &RunOutcome) -> String {
    match &outcome.termination {
        Termination::Converged => format!("converged in {}", outcome.iterations()),
        Termination::IterationLimit => format!("budget exhausted after {}", outcome.iterations()),
        Termination::Failed(e) => format!("failed after {} ({e})", outcome.iterations()),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let out = f();
    (out, clock.elapsed().as_secs_f64())
}

/// Converged distributed runs and their deviation from Newton-Raphson.
type Deviations = Vec<(String, f64)>;

fn iteration_counts(report: &mut Report, deviations: &mut Deviations) {
    let cases = [("composite53.json", 53), ("composite354.json", 354), ("composite826.json", 826)];
    for (name, buses) in cases {
        let problem = load(name, Formulation::LeastSquares);
        let nr = central(&problem);
        let cfg = AladinConfig {
            hessian: HessianMethod::GaussNewton,
            ..AladinConfig::default()
        };
        let (outcome, secs) = timed(|| aladin_solve(&problem, &cfg).unwrap());
        let norm = final_norm(&outcome);
        if outcome.converged() {
            deviations.push((format!("ALADIN gauss-newton {buses} buses"), deviation(&problem, &outcome, &nr)));
        }
        let pass = outcome.converged() && outcome.iterations() <= MAX_OUTER && norm < NORM_TOL && secs < MAX_SECONDS;
        report.line(
            "1",
            pass,
            format!(
                "{buses} buses, ALADIN least squares + Gauss-Newton: {}, final max norm {norm:.1e}, {secs:.2} s \
                 (need <= {MAX_OUTER} iterations, norms < {NORM_TOL:e}, < {MAX_SECONDS} s)",
                status(&outcome)
            ),
        );
    }
}

fn convergence_profile(report: &mut Report) {
    let problem = load("composite53.json", Formulation::LeastSquares);
    let outcome = aladin_solve(&problem, &AladinConfig::default()).unwrap();
    let history = outcome.trace.norm_history();
    let tail = &history[history.len().saturating_sub(PROFILE_TAIL)..];
    let below = history.last().is_some_and(|n| n.all_below(NORM_TOL));
    let monotone = tail.windows(2).all(|w| {
        w[1].pf <= w[0].pf && w[1].spec <= w[0].spec && w[1].consensus <= w[0].consensus
    });
    let shown: Vec<String> = tail
        .iter()
        .map(|n| format!("({:.0e}, {:.0e}, {:.0e})", n.pf, n.spec, n.consensus))
        .collect();
    report.line(
        "3",
        outcome.converged() && below && monotone && tail.len() == PROFILE_TAIL,
        format!(
            "53 buses, last {PROFILE_TAIL} (pf, spec, consensus) norms {}; below {NORM_TOL:e}: {below}, non-increasing: {monotone}",
            shown.join(" ")
        ),
    );
}

fn hessian_ordering(report: &mut Report, deviations: &mut Deviations) {
    let problem = load("composite53.json", Formulation::LeastSquares);
    let nr = central(&problem);
    let mut runs = Vec::new();
    for hessian in HessianMethod::ALL {
        let cfg = AladinConfig {
            hessian,
            ..AladinConfig::default()
        };
        let (outcome, secs) = timed(|| aladin_solve(&problem, &cfg).unwrap());
        if outcome.converged() {
            deviations.push((format!("ALADIN {hessian} 53 buses"), deviation(&problem, &outcome, &nr)));
        }
        runs.push((hessian, outcome, secs));
    }
    let all_converged = runs.iter().all(|(_, o, _)| o.converged());
    let same_solution = all_converged && same_solution(&problem, runs.iter().map(|(_, o, _)| o));
    let time = |m: HessianMethod| runs.iter().find(|(h, _, _)| *h == m).unwrap().2;
    let ordered = time(HessianMethod::GaussNewton) < time(HessianMethod::FiniteDiff)
        && time(HessianMethod::FiniteDiff) < time(HessianMethod::Bfgs);
    let detail: Vec<String> = runs
        .iter()
        .map(|(h, o, s)| format!("{h} {s:.3} s ({})", status(o)))
        .collect();
    report.line(
        "4",
        all_converged && same_solution && ordered,
        format!(
            "53 buses from the case start: {}; GN < FD < BFGS: {ordered}, same solution to {DEVIATION_TOL:e}: {same_solution}",
            detail.join(", ")
        ),
    );

    // the same comparison started close to the solution, for reference
    let exact = problem.scatter(&nr.va, &nr.vm).unwrap();
    let mut local = Vec::new();
    for hessian in HessianMethod::ALL {
        let cfg = AladinConfig {
            hessian,
            zeta0: Some(perturb_states(&exact, LOCAL_SIGMA, 1)),
            ..AladinConfig::default()
        };
        let (outcome, secs) = timed(|| aladin_solve(&problem, &cfg).unwrap());
        if outcome.converged() {
            deviations.push((
                format!("ALADIN {hessian} 53 buses, sigma {LOCAL_SIGMA:e}"),
                deviation(&problem, &outcome, &nr),
            ));
        }
        local.push(format!("{hessian} {secs:.3} s ({})", status(&outcome)));
    }
    println!("INFO criterion 4: started at sigma {LOCAL_SIGMA:e} around the solution: {}", local.join(", "));
}

fn same_solution<'a>(problem: &DistProblem, outcomes: impl Iterator<Item = &'a RunOutcome>) -> bool {
    let gathered: Vec<(Vec<f64>, Vec<f64>)> = outcomes.map(|o| problem.gather(&o.states)).collect();
    gathered.windows(2).all(|w| {
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        gap(&w[0].0, &w[1].0).max(gap(&w[0].1, &w[1].1)) <= DEVIATION_TOL
    })
}

fn physical_consistency(report: &mut Report, deviations: &Deviations) {
    let worst = deviations.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    let detail: Vec<String> = deviations.iter().map(|(n, d)| format!("{n} {d:.1e}")).collect();
    report.line(
        "2",
        !deviations.is_empty() && worst <= DEVIATION_TOL,
        format!(
            "{} converged runs, worst deviation {worst:.1e} (need <= {DEVIATION_TOL:e}): {}",
            deviations.len(),
            detail.join(", ")
        ),
    );
}

/// Steps ADMM by hand so that the dual update can be checked each iteration.
/// Returns the final consensus violation, the iterations done, the worst
/// dual-identity violation in multiplier ulps and an error if a step failed.
fn admm_checked(problem: &DistProblem, rho: f64) -> (f64, usize, f64, Option<String>) {
    let cfg = AdmmConfig {
        rho,
        ..AdmmConfig::default()
    };
    let mut it = AdmmIterate::initial(problem, &cfg).unwrap();
    let mut worst_ulps: f64 = 0.0;
    let mut consensus = f64::INFINITY;
    for iter in 1..=ADMM_BUDGET {
        let next = match admm_step(problem, &cfg, &it) {
            Ok(step) => step.next,
            Err(e) => return (consensus, iter - 1, worst_ulps, Some(e.to_string())),
        };
        for (i, block) in problem.consensus.iter().enumerate() {
            let expected: DVector<f64> = block.apply(&(&next.chi[i] - &next.zeta[i])) * rho;
            let actual = &next.lambda[i] - &it.lambda[i];
            for r in 0..expected.len() {
                let scale = next.lambda[i][r].abs().max(it.lambda[i][r].abs()) * f64::EPSILON;
                let err = (actual[r] - expected[r]).abs();
                if err > 0.0 {
                    worst_ulps = worst_ulps.max(if scale > 0.0 { err / scale } else { f64::INFINITY });
                }
            }
        }
        consensus = problem.consensus_residual(&next.chi).amax();
        it = next;
        if !consensus.is_finite() || consensus > cfg.divergence {
            return (consensus, iter, worst_ulps, Some(format!("diverged ({consensus:e})")));
        }
    }
    (consensus, ADMM_BUDGET, worst_ulps, None)
}

fn admm_behavior(report: &mut Report, deviations: &mut Deviations) {
    let problem = load("composite53.json", Formulation::Feasibility);
    let nr = central(&problem);

    // (a) and (c) share the hand-stepped runs
    let mut worst_ulps: f64 = 0.0;
    let mut checked = Vec::new();
    let mut stagnating = None;
    for rho in ADMM_RHOS {
        let (consensus, iters, ulps, error) = admm_checked(&problem, rho);
        worst_ulps = worst_ulps.max(ulps);
        checked.push(match &error {
            Some(e) => format!("rho {rho:e}: stopped after {iters} ({e})"),
            None => format!("rho {rho:e}: consensus {consensus:.2e} after {iters}"),
        });
        if error.is_none() && iters == ADMM_BUDGET && consensus > STAGNATION_LEVEL {
            stagnating = Some(rho);
            break;
        }
    }
    report.line(
        "5a",
        worst_ulps <= DUAL_ULPS,
        format!("dual update identity, worst violation {worst_ulps:.2} ulps of the multiplier (need <= {DUAL_ULPS})"),
    );

    // (b) runs that never reach the level count as one past the budget
    let exact = problem.scatter(&nr.va, &nr.vm).unwrap();
    let mut counts = Vec::new();
    let mut detail = Vec::new();
    for sigma in SIGMAS {
        let cfg = AdmmConfig {
            zeta0: Some(perturb_states(&exact, sigma, SIGMA_SEED)),
            max_iter: ADMM_BUDGET,
            ..AdmmConfig::default()
        };
        let outcome = admm_solve(&problem, &cfg).unwrap();
        if outcome.converged() {
            deviations.push((format!("ADMM sigma {sigma}"), deviation(&problem, &outcome, &nr)));
        }
        let count = outcome.trace.first_consensus_below(CONSENSUS_LEVEL).unwrap_or(ADMM_BUDGET + 1);
        detail.push(format!("sigma {sigma}: {count} ({})", status(&outcome)));
        counts.push(count);
    }
    let nondecreasing = counts.windows(2).all(|w| w[0] <= w[1]);
    report.line(
        "5b",
        nondecreasing,
        format!(
            "iterations to consensus {CONSENSUS_LEVEL:e}, seed {SIGMA_SEED}, budget {ADMM_BUDGET}: {}",
            detail.join(", ")
        ),
    );

    report.line(
        "5c",
        stagnating.is_some(),
        format!(
            "stagnation above {STAGNATION_LEVEL:e} after {ADMM_BUDGET} iterations: {}",
            checked.join(", ")
        ),
    );
}

fn properties(report: &mut Report) {
    let results = support::run_all();
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    report.line(
        "6",
        failures.is_empty(),
        if failures.is_empty() {
            format!("all properties hold ({})", names.join(", "))
        } else {
            failures.join("; ")
        },
    );
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    let mut report = Report { failed: 0 };
    let mut deviations = Deviations::new();
    iteration_counts(&mut report, &mut deviations);
    convergence_profile(&mut report);
    hessian_ordering(&mut report, &mut deviations);
    admm_behavior(&mut report, &mut deviations);
    physical_consistency(&mut report, &deviations);
    properties(&mut report);
    if report.failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
