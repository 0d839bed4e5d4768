use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reactor::params::NUM_GROUPS;
use crate::reactor::NUM_DRUMS;
use crate::scalar::Scalar;

/// Length of the packed ODE vector (the clock is kept outside).
pub const STATE_DIM: usize = 1 + NUM_GROUPS + 3 + 2 + NUM_DRUMS;

pub(crate) const IDX_N: usize = 0;
pub(crate) const IDX_C: usize = 1;
pub(crate) const IDX_TF: usize = IDX_C + NUM_GROUPS;
pub(crate) const IDX_TM: usize = IDX_TF + 1;
pub(crate) const IDX_TC: usize = IDX_TM + 1;
pub(crate) const IDX_I: usize = IDX_TC + 1;
pub(crate) const IDX_X: usize = IDX_I + 1;
pub(crate) const IDX_THETA: usize = IDX_X + 1;

/// Snapshot of the reactor. Serialized field names match the documented
/// JSON record (`n_bar`, `c_bar`, `T_f`, ..., `theta`, `t`).
///
/// The same record doubles as a time derivative when returned from
/// [`ReactorModel::derivatives`](crate::reactor::ReactorModel::derivatives);
/// there `t` holds `dt/dt = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactorState<T> {
    /// Neutron density normalized to rated power.
    pub n_bar: T,
    /// Precursor concentrations normalized to their rated-power equilibria.
    pub c_bar: [T; NUM_GROUPS],
    #[serde(rename = "T_f")]
    pub t_f: T,
    #[serde(rename = "T_m")]
    pub t_m: T,
    #[serde(rename = "T_c")]
    pub t_c: T,
    /// Iodine-135 concentration (1/m³).
    #[serde(rename = "conc_I")]
    pub conc_i: T,
    /// Xenon-135 concentration (1/m³).
    #[serde(rename = "conc_X")]
    pub conc_x: T,
    /// Drum angles in degrees, 0 = fully inward.
    pub theta: [T; NUM_DRUMS],
    /// Simulation clock (s).
    pub t: T,
}

impl<T: Scalar> ReactorState<T> {
    /// Reactor power in standard power units (1 SPU = 1% of rated).
    pub fn power_spu(&self) -> T {
        self.n_bar * T::lit(100.0)
    }

    pub fn to_vector(&self) -> [T; STATE_DIM] {
        let mut y = [T::zero(); STATE_DIM];
        y[IDX_N] = self.n_bar;
        y[IDX_C..IDX_C + NUM_GROUPS].copy_from_slice(&self.c_bar);
        y[IDX_TF] = self.t_f;
        y[IDX_TM] = self.t_m;
        y[IDX_TC] = self.t_c;
        y[IDX_I] = self.conc_i;
        y[IDX_X] = self.conc_x;
        y[IDX_THETA..].copy_from_slice(&self.theta);
        y
    }

    pub fn from_vector(y: &[T; STATE_DIM], t: T) -> Self {
        let mut c_bar = [T::zero(); NUM_GROUPS];
        c_bar.copy_from_slice(&y[IDX_C..IDX_C + NUM_GROUPS]);
        let mut theta = [T::zero(); NUM_DRUMS];
        theta.copy_from_slice(&y[IDX_THETA..]);
        Self {
            n_bar: y[IDX_N],
            c_bar,
            t_f: y[IDX_TF],
            t_m: y[IDX_TM],
            t_c: y[IDX_TC],
            conc_i: y[IDX_I],
            conc_x: y[IDX_X],
            theta,
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }

    /// Checks the physical invariants: non-negative populations and drum
    /// angles within [0, 180].
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::domain("state contains non-finite values"));
        }
        let zero = T::zero();
        if self.n_bar < zero || self.c_bar.iter().any(|&c| c < zero) {
            return Err(Error::domain("negative neutron or precursor population"));
        }
        if self.conc_i < zero || self.conc_x < zero {
            return Err(Error::domain("negative iodine or xenon concentration"));
        }
        let max = T::lit(180.0);
        if let Some(i) = self.theta.iter().position(|&th| th < zero || th > max) {
            return Err(Error::domain(format!(
                "drum {} angle {} outside [0, 180]",
                i + 1,
                self.theta[i]
            )));
        }
        Ok(())
    }
}
