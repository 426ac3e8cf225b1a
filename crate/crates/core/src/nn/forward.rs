use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BufferId, ConvGeom, NormStats, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// One forward pass over a [`ParamStore`].
///
/// Parameters enter the tape lazily, once per pass. In training mode batch
/// norm uses batch statistics and queues running-statistic updates, which
/// [`Forward::finish`] hands back so the store can stay shared while the pass
/// runs.
pub struct Forward<'a, F: Real> {
    tape: Tape<F>,
    store: &'a ParamStore<F>,
    train: bool,
    leaves: Vec<Option<Var>>,
    momentum: f64,
    pending: Vec<(BufferId, Vec<F>)>,
}

/// Running-statistic updates produced by a training-mode pass.
#[derive(Debug, Default)]
pub struct BufferUpdates<F> {
    updates: Vec<(BufferId, Vec<F>)>,
}

impl<F: Real> BufferUpdates<F> {
    pub fn apply(self, store: &mut ParamStore<F>) {
        for (id, data) in self.updates {
            store.buffer_mut(id).data_mut().copy_from_slice(&data);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }
}

impl<'a, F: Real> Forward<'a, F> {
    pub fn new(store: &'a ParamStore<F>, train: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            train,
            leaves: vec![None; store.len()],
            momentum: 0.1,
            pending: Vec::new(),
        }
    }

    /// Weight of the current batch in running-statistic updates (default 0.1).
    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<F> {
        &mut self.tape
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.tape.value(v)
    }

    /// Tape variable for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.index()] {
            return v;
        }
        let v = self.tape.param_leaf(id, self.store.param(id).clone());
        self.leaves[id.index()] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.tape.constant(t)
    }

    pub fn finish(self) -> (Tape<F>, BufferUpdates<F>) {
        (
            self.tape,
            BufferUpdates {
                updates: self.pending,
            },
        )
    }
}

fn he_normal<F: Real, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<F> {
    let std = libm::sqrt(2.0 / fan_in as f64);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::from_f64(z * std)
        })
        .collect()
}

/// 2-D convolution layer with He-normal weights.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let w = Tensor::new(
            vec![cout, cin, kernel, kernel],
            he_normal(cout * fan_in, fan_in, rng),
        )
        .expect("consistent shape");
        let weight = store.add_param(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, geom }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn geom(&self) -> ConvGeom {
        self.geom
    }

    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.conv2d(x, w, b, self.geom)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], F::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                Tensor::full(&[channels], F::one()),
            ),
            eps: 1e-5,
        }
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_mean(&self) -> BufferId {
        self.running_mean
    }

    pub fn running_var(&self) -> BufferId {
        self.running_var
    }

    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        if !f.train {
            let stats = NormStats::Running {
                mean: f.store.buffer(self.running_mean).to_f64_vec(),
                var: f.store.buffer(self.running_var).to_f64_vec(),
                eps: self.eps,
            };
            return Ok(f.tape.batch_norm(x, g, b, stats)?.0);
        }
        let shape = f.tape.value(x).shape();
        let count = shape.first().copied().unwrap_or(0)
            * shape.get(2).copied().unwrap_or(0)
            * shape.get(3).copied().unwrap_or(0);
        let (y, stats) = f
            .tape
            .batch_norm(x, g, b, NormStats::Batch { eps: self.eps })?;
        let (mean, var) = stats.expect("batch statistics requested");
        let m = f.momentum;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let old_mean = f.store.buffer(self.running_mean).data();
        let old_var = f.store.buffer(self.running_var).data();
        let new_mean = old_mean
            .iter()
            .zip(&mean)
            .map(|(o, b)| F::from_f64((1.0 - m) * o.as_f64() + m * b))
            .collect();
        let new_var = old_var
            .iter()
            .zip(&var)
            .map(|(o, b)| F::from_f64((1.0 - m) * o.as_f64() + m * b * unbias))
            .collect();
        f.pending.push((self.running_mean, new_mean));
        f.pending.push((self.running_var, new_var));
        Ok(y)
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(input as f64);
        let data = (0..input * output)
            .map(|_| F::from_f64(rng.random_range(-bound..bound)))
            .collect();
        let weight = store.add_param(
            format!("{name}.weight"),
            Tensor::new(vec![output, input], data).expect("shape"),
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[output])));
        Self { weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.linear(x, w, b)
    }
}

/// Checks that every name in `store` is unique.
pub fn check_unique_names<F: Real>(store: &ParamStore<F>) -> Result<()> {
    let mut names: Vec<&str> = store
        .params()
        .map(|(n, _)| n)
        .chain(store.buffers().map(|(n, _)| n))
        .collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(format!(
            "duplicate parameter name `{}`",
            String::from(w[0])
        )));
    }
    Ok(())
}
