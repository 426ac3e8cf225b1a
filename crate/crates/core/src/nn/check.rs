//! Central finite-difference gradient checking.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Forward, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Seeds the random projection of the output and the element sample.
    pub seed: u64,
    /// Check at most this many scalar coordinates (chosen at random).
    pub max_elements: Option<usize>,
    /// Run batch norm on batch statistics.
    pub train: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            seed: 0,
            max_elements: None,
            train: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `|a - n| / max(|a|, |n|)` over the checked coordinates, as vectors.
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a ReLU or max-pool branch.
    pub skipped: usize,
}

/// Compares the tape's gradient of `sum(out * R)` (R fixed random) with
/// central differences, over every parameter in `store` and every tensor in
/// `inputs`. `build` maps the input variables to the output variable.
pub fn gradcheck<B>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
    build: B,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Forward<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights: Vec<f64> = Vec::new();

    let mut eval =
        |store: &ParamStore<f64>, inputs: &[Tensor<f64>], want_grad: bool| -> Result<Eval> {
            let mut f = Forward::new(store, cfg.train);
            let vars: Vec<Var> = inputs
                .iter()
                .map(|t| f.tape_mut().leaf(t.clone(), true))
                .collect();
            let out = build(&mut f, &vars)?;
            let n = f.value(out).numel();
            if weights.len() != n {
                weights = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            }
            let r = f.input(Tensor::new(f.value(out).shape().to_vec(), weights.clone())?);
            let tape = f.tape_mut();
            let prod = tape.mul(out, r)?;
            let loss = tape.sum(prod);
            let value = tape.value(loss).item();
            let fingerprint = tape.branch_fingerprint();
            let (tape, _) = f.finish();
            let mut tape = tape;
            let grads = if want_grad {
                let g = tape.backward(loss)?;
                let mut flat = Vec::new();
                for gp in tape.param_grads(&g, store.len()) {
                    flat.push(gp);
                }
                for v in &vars {
                    flat.push(g.get(*v).map(<[f64]>::to_vec));
                }
                flat
            } else {
                Vec::new()
            };
            Ok(Eval {
                value,
                fingerprint,
                grads,
            })
        };

    let base = eval(store, inputs, true)?;
    let sizes: Vec<usize> = store
        .params()
        .map(|(_, t)| t.numel())
        .chain(inputs.iter().map(Tensor::numel))
        .collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("nothing to check".into()));
    }
    let mut coords: Vec<usize> = match cfg.max_elements {
        Some(k) if k < total => {
            let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
            sample(&mut pick, total, k).into_vec()
        }
        _ => (0..total).collect(),
    };
    coords.sort_unstable();

    let mut work_store = store.clone();
    let mut work_inputs = inputs.to_vec();
    let n_params = store.len();
    let ids: Vec<_> = store.ids().collect();
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    let (mut checked, mut skipped) = (0, 0);
    for flat in coords {
        let (mut slot, mut off) = (0, flat);
        while off >= sizes[slot] {
            off -= sizes[slot];
            slot += 1;
        }
        let analytic = base.grads[slot].as_ref().map_or(0.0, |g| g[off]);
        let mut probe =
            |delta: f64, st: &mut ParamStore<f64>, inp: &mut [Tensor<f64>]| -> Result<Eval> {
                let cell = if slot < n_params {
                    &mut st.param_mut(ids[slot]).data_mut()[off]
                } else {
                    &mut inp[slot - n_params].data_mut()[off]
                };
                let orig = *cell;
                *cell = orig + delta;
                let e = eval(st, inp, false);
                let cell = if slot < n_params {
                    &mut st.param_mut(ids[slot]).data_mut()[off]
                } else {
                    &mut inp[slot - n_params].data_mut()[off]
                };
                *cell = orig;
                e
            };
        let plus = probe(cfg.step, &mut work_store, &mut work_inputs)?;
        let minus = probe(-cfg.step, &mut work_store, &mut work_inputs)?;
        if plus.fingerprint != base.fingerprint || minus.fingerprint != base.fingerprint {
            skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * cfg.step);
        diff2 += (analytic - numeric) * (analytic - numeric);
        a2 += analytic * analytic;
        n2 += numeric * numeric;
        checked += 1;
    }
    let denom = libm::sqrt(a2.max(n2));
    let rel_error = if denom == 0.0 {
        0.0
    } else {
        libm::sqrt(diff2) / denom
    };
    Ok(GradCheckReport {
        rel_error,
        checked,
        skipped,
    })
}

struct Eval {
    value: f64,
    fingerprint: u64,
    grads: Vec<Option<Vec<f64>>>,
}
