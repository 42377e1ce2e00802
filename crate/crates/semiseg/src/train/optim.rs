//! Adam and RMSProp parameter updates over the network's flat parameter
//! registry. Moment buffers are keyed by visit order, which is stable.

use crate::config::OptimizerKind;
use crate::model::UNet;

pub struct Optimizer {
    kind: OptimizerKind,
    /// First moment (Adam only), per parameter tensor.
    m: Vec<Vec<f64>>,
    /// Second moment.
    v: Vec<Vec<f64>>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const RMS_ALPHA: f64 = 0.9;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &mut UNet) -> Self {
        let mut sizes = Vec::new();
        net.visit_params(&mut |p| sizes.push(p.value.len()));
        let v_init = 0.0;
        Self {
            kind,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![v_init; n]).collect(),
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients (which are left
    /// untouched; callers zero them afterwards).
    pub fn step(&mut self, net: &mut UNet, lr: f64) {
        self.t += 1;
        let t = self.t;
        let kind = self.kind;
        let mut idx = 0usize;
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |p| {
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            match kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - BETA1.powi(t as i32);
                    let bc2 = 1.0 - BETA2.powi(t as i32);
                    for i in 0..p.value.len() {
                        let g = p.grad[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.value[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
                OptimizerKind::RmsProp => {
                    for i in 0..p.value.len() {
                        let g = p.grad[i];
                        v[i] = RMS_ALPHA * v[i] + (1.0 - RMS_ALPHA) * g * g;
                        p.value[i] -= lr * g / (v[i].sqrt() + EPS);
                    }
                }
            }
            idx += 1;
        });
    }
}
