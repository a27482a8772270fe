//! Ground-truth simulation with sensor noise coupled to the process noise.
//!
//! `x_t = F x_{t−1} + G w_{t−1}` and `y_tⁱ = H_i x_t + β_i w_{t−1} + η_tⁱ`,
//! with `w ~ N(0, Q)`, `η_tⁱ ~ N(0, R_i)` and `x_0 ~ N(x̂_0, V_0)`. The
//! nominal model used by every filter omits the `β_i w_{t−1}` term, so the
//! sensors' noises are correlated with each other and with the state in a way
//! the filters do not know about.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::filter::StateSpaceModel;
use crate::linalg::sqrt_psd;

use super::rng::{standard_normals, stream_sensor, STREAM_INITIAL, STREAM_PROCESS};

/// One simulated run: `states[t−1] = x_t` and `measurements[t−1] = y_t` for
/// `t = 1 … steps`, plus the noise actually applied to each sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
}

/// Square roots of the model covariances, computed once per experiment.
#[derive(Debug, Clone)]
pub struct TruthModel {
    model: StateSpaceModel,
    beta: Vec<f64>,
    v0_half: DMatrix<f64>,
    q_half: DMatrix<f64>,
    r_half: Vec<DMatrix<f64>>,
}

impl TruthModel {
    pub fn new(model: &StateSpaceModel, beta: &[f64]) -> Result<Self> {
        Ok(TruthModel {
            model: model.clone(),
            beta: beta.to_vec(),
            v0_half: sqrt_psd(&model.v0)?.into_matrix(),
            q_half: sqrt_psd(&model.q)?.into_matrix(),
            r_half: model
                .sensors
                .iter()
                .map(|s| sqrt_psd(&s.r).map(|m| m.into_matrix()))
                .collect::<Result<_>>()?,
        })
    }

    pub fn simulate(&self, seed: u64, run: u64, steps: usize) -> Trajectory {
        let m = &self.model;
        let n = m.n();
        let r = m.q.dim();
        let x0 = &m.x0 + &self.v0_half * standard_normals(seed, run, 0, STREAM_INITIAL, n);
        let mut x = x0.clone();
        let mut states = Vec::with_capacity(steps);
        let mut measurements = Vec::with_capacity(steps);
        let mut noise = Vec::with_capacity(steps);
        for t in 1..=steps as u64 {
            let w = &self.q_half * standard_normals(seed, run, t - 1, STREAM_PROCESS, r);
            x = &m.f * &x + &m.g * &w;
            let mut y = DVector::zeros(m.m_total());
            let mut v_all = DVector::zeros(m.m_total());
            let mut at = 0;
            for (i, s) in m.sensors.iter().enumerate() {
                let mi = s.h.nrows();
                let eta = &self.r_half[i] * standard_normals(seed, run, t, stream_sensor(i), mi);
                let v = if self.beta[i] != 0.0 { &w * self.beta[i] + eta } else { eta };
                y.rows_mut(at, mi).copy_from(&(&s.h * &x + &v));
                v_all.rows_mut(at, mi).copy_from(&v);
                at += mi;
            }
            states.push(x.clone());
            measurements.push(y);
            noise.push(v_all);
        }
        Trajectory {
            x0,
            states,
            measurements,
            noise,
        }
    }
}
