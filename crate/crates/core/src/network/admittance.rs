use nalgebra::{Complex, DMatrix};

use crate::casefile::CaseData;
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Bus admittance matrix stored row-wise; each row holds its nonzero
/// `(column, value)` pairs in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Admittance {
    rows: Vec<Vec<(usize, C64)>>,
}

impl Admittance {
    pub fn zeros(n: usize) -> Self {
        Admittance {
            rows: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &[(usize, C64)] {
        &self.rows[j]
    }

    pub fn get(&self, j: usize, k: usize) -> C64 {
        self.rows[j]
            .iter()
            .find(|(c, _)| *c == k)
            .map(|(_, y)| *y)
            .unwrap_or_default()
    }

    pub fn add(&mut self, j: usize, k: usize, y: C64) {
        let row = &mut self.rows[j];
        match row.iter_mut().find(|(c, _)| *c == k) {
            Some((_, v)) => *v += y,
            None => row.push((k, y)),
        }
    }

    pub fn add_shunt(&mut self, j: usize, y: C64) {
        self.add(j, j, y);
    }

    /// Add a MATPOWER pi-model branch between bus positions `f` and `t`.
    /// `shift` is in degrees; the tap sits on the from side.
    #[allow(clippy::too_many_arguments)]
    pub fn add_branch(&mut self, f: usize, t: usize, r: f64, x: f64, b: f64, tap: f64, shift: f64) -> Result<()> {
        let z = C64::new(r, x);
        if z.norm_sqr() == 0.0 {
            return Err(Error::InvalidCase(format!(
                "branch between positions {f} and {t} has zero impedance"
            )));
        }
        let y = z.inv();
        let ytt = y + C64::new(0.0, b / 2.0);
        let tau = if tap == 0.0 { 1.0 } else { tap };
        let phase = C64::from_polar(tau, shift.to_radians());
        self.add(f, f, ytt / (tau * tau));
        self.add(t, t, ytt);
        self.add(f, t, -y / phase.conj());
        self.add(t, f, -y / phase);
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (j, row) in self.rows.iter().enumerate() {
            for &(k, y) in row {
                m[(j, k)] += y;
            }
        }
        m
    }

    pub fn conductance(&self) -> DMatrix<f64> {
        self.to_dense().map(|y| y.re)
    }

    pub fn susceptance(&self) -> DMatrix<f64> {
        self.to_dense().map(|y| y.im)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows.iter().enumerate().all(|(j, row)| {
            row.iter()
                .all(|&(k, y)| (y - self.get(k, j)).norm() <= tol)
        })
    }
}

/// Admittance of a whole case, buses in table order. Out-of-service
/// branches are skipped.
pub fn build_admittance(case: &CaseData) -> Result<Admittance> {
    let index = case.bus_index();
    let mut y = Admittance::zeros(case.buses.len());
    for (j, bus) in case.buses.iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            y.add_shunt(j, C64::new(bus.gs, bus.bs) / case.base_mva);
        }
    }
    for (i, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::SingularBranch { index: i + 1 });
        }
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        y.add_branch(f, t, br.r, br.x, br.b_charge, br.tap, br.shift)?;
    }
    Ok(y)
}
