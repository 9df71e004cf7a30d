use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{add_power_hessian, bus_power, fill_power_jacobian, Admittance, Placement};
use crate::casefile::{BusType, CaseData, TieParams};
use crate::error::{Error, Result};

/// The two fixed scalars of a bus.
///
/// `first`/`second` hold (v, theta) for a slack bus, (p, q) for a PQ bus and
/// (p, v) for a PV bus, in per unit and radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BusSpec {
    pub kind: BusType,
    pub first: f64,
    pub second: f64,
}

impl BusSpec {
    /// Specifications for every bus of `case`, from its bus and generator
    /// tables.
    pub fn from_case(case: &CaseData) -> Vec<BusSpec> {
        case.buses
            .iter()
            .map(|bus| {
                let (mut pg, mut qg, mut vg) = (0.0, 0.0, None);
                for g in case.active_gens_at(bus.bus_id) {
                    pg += g.pg;
                    qg += g.qg;
                    vg.get_or_insert(g.vg);
                }
                let p = (pg - bus.pd) / case.base_mva;
                let q = (qg - bus.qd) / case.base_mva;
                let v = vg.unwrap_or(bus.vm);
                let (first, second) = match bus.bus_type {
                    BusType::Slack => (v, bus.va.to_radians()),
                    BusType::Pq => (p, q),
                    BusType::Pv => (p, v),
                };
                BusSpec {
                    kind: bus.bus_type,
                    first,
                    second,
                }
            })
            .collect()
    }
}

/// A neighbor's boundary bus replicated into a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyBus {
    /// Owning region (1-based).
    pub owner_region: usize,
    /// Bus id in the owner's case file.
    pub owner_bus: usize,
    /// Row of that bus in the owner's bus table.
    pub owner_position: usize,
    /// Id in the merged case.
    pub global_id: usize,
    /// Starting voltage taken from the owner's case (radians, p.u.).
    pub theta0: f64,
    pub v0: f64,
}

/// A tie branch inside a region, between bus positions (core buses first,
/// then copies). The tap sits on the `from` side.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBranch {
    pub from: usize,
    pub to: usize,
    pub params: TieParams,
}

/// One region's power-flow model over core and copy buses.
///
/// The stacked state is `chi = (theta_core, v_core, p_core, q_core,
/// theta_copy, v_copy)`, so `n_state = 4 n_core + 2 n_copy`. The residual
/// `g(chi)` stacks `2 n_core` power balances (all P rows, then all Q rows)
/// and `2 n_core` bus specifications (two per bus, in bus order).
#[derive(Clone, Debug)]
pub struct RegionModel {
    /// 1-based region number.
    pub region: usize,
    /// Region case after connection surgery.
    pub case: CaseData,
    pub global_ids: Vec<usize>,
    pub copies: Vec<CopyBus>,
    pub ties: Vec<LocalBranch>,
    pub specs: Vec<BusSpec>,
    admittance: Admittance,
    theta_col: Vec<Option<usize>>,
    v_col: Vec<Option<usize>>,
}

/// A region state split into its core part `x` and copy part `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
}

impl RegionState {
    pub fn stacked(&self) -> DVector<f64> {
        let mut chi = DVector::zeros(self.x.len() + self.z.len());
        chi.rows_mut(0, self.x.len()).copy_from(&self.x);
        chi.rows_mut(self.x.len(), self.z.len()).copy_from(&self.z);
        chi
    }

    pub fn from_stacked(model: &RegionModel, chi: &DVector<f64>) -> Result<Self> {
        model.check_state(chi)?;
        let nx = 4 * model.n_core();
        Ok(RegionState {
            x: chi.rows(0, nx).into_owned(),
            z: chi.rows(nx, 2 * model.n_copy()).into_owned(),
        })
    }
}

impl RegionModel {
    pub fn new(
        region: usize,
        case: CaseData,
        global_ids: Vec<usize>,
        copies: Vec<CopyBus>,
        ties: Vec<LocalBranch>,
    ) -> Result<Self> {
        let n_core = case.buses.len();
        if global_ids.len() != n_core {
            return Err(Error::DimensionMismatch {
                expected: n_core,
                found: global_ids.len(),
            });
        }
        let n_bus = n_core + copies.len();
        let core = super::build_admittance(&case)?;
        let mut admittance = Admittance::zeros(n_bus);
        for j in 0..n_core {
            for &(k, y) in core.row(j) {
                admittance.add(j, k, y);
            }
        }
        for t in &ties {
            if t.from >= n_bus || t.to >= n_bus {
                return Err(Error::InvalidConnection(format!(
                    "tie between positions {} and {} outside region {region}",
                    t.from, t.to
                )));
            }
            let p = &t.params;
            admittance.add_branch(t.from, t.to, p.r, p.x, p.b, p.tap, p.shift)?;
        }
        let specs = BusSpec::from_case(&case);
        let n_copy = copies.len();
        let theta_col = (0..n_bus)
            .map(|b| Some(if b < n_core { b } else { 4 * n_core + b - n_core }))
            .collect();
        let v_col = (0..n_bus)
            .map(|b| {
                Some(if b < n_core {
                    n_core + b
                } else {
                    4 * n_core + n_copy + b - n_core
                })
            })
            .collect();
        Ok(RegionModel {
            region,
            case,
            global_ids,
            copies,
            ties,
            specs,
            admittance,
            theta_col,
            v_col,
        })
    }

    /// A whole case as a single region without copies.
    pub fn single(case: CaseData) -> Result<Self> {
        let ids = (1..=case.buses.len()).collect();
        RegionModel::new(1, case, ids, Vec::new(), Vec::new())
    }

    pub fn n_core(&self) -> usize {
        self.case.buses.len()
    }

    pub fn n_copy(&self) -> usize {
        self.copies.len()
    }

    pub fn n_bus(&self) -> usize {
        self.n_core() + self.n_copy()
    }

    pub fn n_state(&self) -> usize {
        4 * self.n_core() + 2 * self.n_copy()
    }

    pub fn n_residual(&self) -> usize {
        4 * self.n_core()
    }

    pub fn admittance(&self) -> &Admittance {
        &self.admittance
    }

    /// State index of the angle of bus position `b` (core or copy).
    pub fn theta_index(&self, b: usize) -> usize {
        self.theta_col[b].expect("every bus has an angle")
    }

    pub fn v_index(&self, b: usize) -> usize {
        self.v_col[b].expect("every bus has a magnitude")
    }

    pub fn p_index(&self, j: usize) -> usize {
        2 * self.n_core() + j
    }

    pub fn q_index(&self, j: usize) -> usize {
        3 * self.n_core() + j
    }

    pub fn check_state(&self, chi: &DVector<f64>) -> Result<()> {
        if chi.len() != self.n_state() {
            return Err(Error::DimensionMismatch {
                expected: self.n_state(),
                found: chi.len(),
            });
        }
        Ok(())
    }

    fn voltages(&self, chi: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let theta = (0..self.n_bus()).map(|b| chi[self.theta_index(b)]).collect();
        let v = (0..self.n_bus()).map(|b| chi[self.v_index(b)]).collect();
        (theta, v)
    }

    /// Power balance `[P(theta, v) - p; Q(theta, v) - q]` at the core buses.
    pub fn pf_residual(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(chi)?;
        let n = self.n_core();
        let (theta, v) = self.voltages(chi);
        let mut r = DVector::zeros(2 * n);
        for j in 0..n {
            let (p, q) = bus_power(&self.admittance, &theta, &v, j);
            r[j] = p - chi[self.p_index(j)];
            r[n + j] = q - chi[self.q_index(j)];
        }
        Ok(r)
    }

    pub fn bus_spec_residual(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(chi)?;
        let mut r = DVector::zeros(2 * self.n_core());
        for (j, s) in self.specs.iter().enumerate() {
            let (a, b) = self.spec_columns(j);
            r[2 * j] = chi[a] - s.first;
            r[2 * j + 1] = chi[b] - s.second;
        }
        Ok(r)
    }

    /// State columns fixed by the specification of core bus `j`.
    fn spec_columns(&self, j: usize) -> (usize, usize) {
        match self.specs[j].kind {
            BusType::Slack => (self.v_index(j), self.theta_index(j)),
            BusType::Pq => (self.p_index(j), self.q_index(j)),
            BusType::Pv => (self.p_index(j), self.v_index(j)),
        }
    }

    /// `[pf_residual; bus_spec_residual]`.
    pub fn residual(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        let pf = self.pf_residual(chi)?;
        let spec = self.bus_spec_residual(chi)?;
        let mut r = DVector::zeros(self.n_residual());
        r.rows_mut(0, pf.len()).copy_from(&pf);
        r.rows_mut(pf.len(), spec.len()).copy_from(&spec);
        Ok(r)
    }

    /// Jacobian of [`RegionModel::residual`] with respect to the stacked state.
    pub fn jacobian(&self, chi: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(chi)?;
        let n = self.n_core();
        let (theta, v) = self.voltages(chi);
        let mut jac = DMatrix::zeros(self.n_residual(), self.n_state());
        let p_row: Vec<_> = (0..n).map(Some).collect();
        let q_row: Vec<_> = (0..n).map(|j| Some(n + j)).collect();
        let at = Placement {
            p_row: &p_row,
            q_row: &q_row,
            theta_col: &self.theta_col,
            v_col: &self.v_col,
        };
        fill_power_jacobian(&self.admittance, &theta, &v, &at, &mut jac);
        for j in 0..n {
            jac[(j, self.p_index(j))] = -1.0;
            jac[(n + j, self.q_index(j))] = -1.0;
            let (a, b) = self.spec_columns(j);
            jac[(2 * n + 2 * j, a)] = 1.0;
            jac[(2 * n + 2 * j + 1, b)] = 1.0;
        }
        Ok(jac)
    }

    /// Hessian of `gamma^T g(chi)`. Only the power balances are nonlinear,
    /// so the specification multipliers do not contribute.
    pub fn residual_hessian(&self, chi: &DVector<f64>, gamma: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(chi)?;
        if gamma.len() != self.n_residual() {
            return Err(Error::DimensionMismatch {
                expected: self.n_residual(),
                found: gamma.len(),
            });
        }
        let n = self.n_core();
        let (theta, v) = self.voltages(chi);
        let a: Vec<f64> = gamma.rows(0, n).iter().copied().collect();
        let c: Vec<f64> = gamma.rows(n, n).iter().copied().collect();
        let mut h = DMatrix::zeros(self.n_state(), self.n_state());
        add_power_hessian(&self.admittance, &theta, &v, &a, &c, &self.theta_col, &self.v_col, &mut h);
        Ok(h)
    }

    /// Starting point from the case data: bus angles and magnitudes (set
    /// points at generation buses), specified injections where fixed and
    /// computed injections elsewhere, copy voltages from the owners.
    pub fn initial_state(&self) -> DVector<f64> {
        let n = self.n_core();
        let mut chi = DVector::zeros(self.n_state());
        for (j, bus) in self.case.buses.iter().enumerate() {
            chi[self.theta_index(j)] = bus.va.to_radians();
            chi[self.v_index(j)] = bus.vm;
        }
        for (c, copy) in self.copies.iter().enumerate() {
            chi[self.theta_index(n + c)] = copy.theta0;
            chi[self.v_index(n + c)] = copy.v0;
        }
        for (j, s) in self.specs.iter().enumerate() {
            match s.kind {
                BusType::Slack => {
                    chi[self.v_index(j)] = s.first;
                    chi[self.theta_index(j)] = s.second;
                }
                BusType::Pv => chi[self.v_index(j)] = s.second,
                BusType::Pq => {}
            }
        }
        self.fill_injections(&mut chi);
        chi
    }

    /// Set `p`, `q` of every core bus to the injections implied by the
    /// voltages in `chi`.
    pub fn fill_injections(&self, chi: &mut DVector<f64>) {
        let (theta, v) = self.voltages(chi);
        for j in 0..self.n_core() {
            let (p, q) = bus_power(&self.admittance, &theta, &v, j);
            chi[self.p_index(j)] = p;
            chi[self.q_index(j)] = q;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::casefile::matpower::parse_matpower_case;

    pub(crate) fn two_bus_case(pd: f64, qd: f64) -> CaseData {
        let mut gen = vec![1.0, 0.0, 0.0, 300.0, -300.0, 1.0, 100.0, 1.0, 250.0, 10.0];
        gen.resize(21, 0.0);
        CaseData::from_matrices(
            100.0,
            &[
                vec![1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 345.0, 1.0, 1.1, 0.9],
                vec![2.0, 1.0, pd, qd, 0.0, 0.0, 1.0, 1.0, 0.0, 345.0, 1.0, 1.1, 0.9],
            ],
            &[gen],
            &[vec![1.0, 2.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    pub(crate) fn case9() -> CaseData {
        parse_matpower_case(include_str!("../../data/case9.m")).unwrap()
    }

    fn flat(model: &RegionModel) -> DVector<f64> {
        let mut chi = DVector::zeros(model.n_state());
        for b in 0..model.n_bus() {
            chi[model.v_index(b)] = 1.0;
        }
        chi
    }

    #[test]
    fn flat_start_on_lossless_line_has_zero_residual() {
        let model = RegionModel::single(two_bus_case(0.0, 0.0)).unwrap();
        let r = model.pf_residual(&flat(&model)).unwrap();
        assert!(r.amax() == 0.0);
    }

    #[test]
    fn residual_at_small_angle() {
        let model = RegionModel::single(two_bus_case(0.0, 0.0)).unwrap();
        let mut chi = flat(&model);
        chi[model.theta_index(1)] = -0.05;
        let r = model.pf_residual(&chi).unwrap();
        // P_2 = 10 sin(-0.05), Q_2 = 10 (1 - cos 0.05)
        assert!((r[1] - (-0.4997916927067833)).abs() < 1e-12);
        assert!((r[3] - 0.012497396050337173).abs() < 1e-12);
    }

    #[test]
    fn jacobian_entry_at_flat_start() {
        let model = RegionModel::single(two_bus_case(0.0, 0.0)).unwrap();
        let jac = model.jacobian(&flat(&model)).unwrap();
        // d P_2 / d theta_2 = 10 v_1 v_2 cos 0
        assert!((jac[(1, model.theta_index(1))] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn spec_rows_are_selectors() {
        let model = RegionModel::single(case9()).unwrap();
        let jac = model.jacobian(&model.initial_state()).unwrap();
        let n = model.n_core();
        for r in 2 * n..4 * n {
            let row = jac.row(r);
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
        }
    }

    #[test]
    fn pq_spec_residual_is_affine() {
        let model = RegionModel::single(two_bus_case(90.0, 30.0)).unwrap();
        assert_eq!(model.specs[1].first, -0.9);
        let mut chi = model.initial_state();
        chi[model.p_index(1)] = -0.8;
        let r = model.bus_spec_residual(&chi).unwrap();
        assert!((r[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn slack_spec_at_reference_is_zero() {
        let model = RegionModel::single(two_bus_case(0.0, 0.0)).unwrap();
        let r = model.bus_spec_residual(&flat(&model)).unwrap();
        assert_eq!((r[0], r[1]), (0.0, 0.0));
    }

    #[test]
    fn pv_specs_follow_generator_table() {
        let model = RegionModel::single(case9()).unwrap();
        let s = model.specs[1];
        assert_eq!(s.kind, BusType::Pv);
        assert!((s.first - 1.63).abs() < 1e-15);
        assert_eq!(s.second, 1.0);
        assert_eq!(model.specs[2].first, 0.85);
    }

    #[test]
    fn dimensions_follow_core_and_copy_counts() {
        let model = RegionModel::single(case9()).unwrap();
        assert_eq!(model.n_state(), 36);
        assert_eq!(model.n_residual(), 36);
        let err = model.residual(&DVector::zeros(5)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 36, found: 5 }));
    }

    #[test]
    fn state_split_round_trips() {
        let model = RegionModel::single(case9()).unwrap();
        let chi = model.initial_state();
        let s = RegionState::from_stacked(&model, &chi).unwrap();
        assert_eq!(s.z.len(), 0);
        assert_eq!(s.stacked(), chi);
    }

    fn perturbed(model: &RegionModel, seed: u64) -> DVector<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut chi = model.initial_state();
        for b in 0..model.n_bus() {
            chi[model.theta_index(b)] += rng.random_range(-0.3..0.3);
            chi[model.v_index(b)] += rng.random_range(-0.1..0.1);
        }
        chi
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let model = RegionModel::single(case9()).unwrap();
        let chi = perturbed(&model, 7);
        let jac = model.jacobian(&chi).unwrap();
        let h = 1e-6;
        for c in 0..model.n_state() {
            let (mut up, mut down) = (chi.clone(), chi.clone());
            up[c] += h;
            down[c] -= h;
            let fd = (model.residual(&up).unwrap() - model.residual(&down).unwrap()) / (2.0 * h);
            let err = (fd - jac.column(c)).amax();
            assert!(err <= 1e-6 * jac.amax(), "column {c}: {err}");
        }
    }

    #[test]
    fn residual_hessian_matches_differentiated_jacobian() {
        let model = RegionModel::single(case9()).unwrap();
        let chi = perturbed(&model, 11);
        let gamma = DVector::from_fn(model.n_residual(), |i, _| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let hess = model.residual_hessian(&chi, &gamma).unwrap();
        assert!((&hess - hess.transpose()).amax() < 1e-12);
        let h = 1e-6;
        for c in 0..model.n_state() {
            let (mut up, mut down) = (chi.clone(), chi.clone());
            up[c] += h;
            down[c] -= h;
            let gu = model.jacobian(&up).unwrap().transpose() * &gamma;
            let gd = model.jacobian(&down).unwrap().transpose() * &gamma;
            let fd = (gu - gd) / (2.0 * h);
            let err = (fd - hess.column(c)).amax();
            assert!(err <= 1e-6 * hess.amax(), "column {c}: {err}");
        }
    }
}
