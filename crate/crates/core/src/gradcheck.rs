//! Central finite-difference gradient checks in float64.

use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::model::Seq2SeqModel;
use crate::nn::{Ctx, ParamStore};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖ + ‖n‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-10)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per checked tensor, in input order.
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Projects a non-scalar output onto a fixed random direction so every
/// output entry influences the checked gradient.
fn reduce<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    if y.value().numel() == 1 {
        return Ok(y.sum_all());
    }
    let shape = y.shape();
    let mut rng = SeedStream::new(0x5eed).named("gradcheck-projection").rng();
    let n = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    Ok(y.mul(tape.constant(w))?.sum_all())
}

/// Compares the tape gradient of `f` with respect to each input against
/// central differences.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = reduce(&tape, f(&tape, &vars)?)?;
        let v = y.value().item();
        Ok(v)
    };
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = reduce(&tape, f(&tape, &vars)?)?;
        let grads = tape.backward(y)?;
        vars.iter()
            .map(|v| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape())))
            .collect()
    };
    let mut errors = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.numel());
        for j in 0..a.numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + DEFAULT_STEP;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - DEFAULT_STEP;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * DEFAULT_STEP));
        }
        errors.push(relative_error(a.data(), &numeric));
    }
    Ok(GradCheckReport { errors })
}

/// Something that owns a float64 parameter store.
pub trait HasParams {
    fn store(&self) -> &ParamStore<f64>;
    fn store_mut(&mut self) -> &mut ParamStore<f64>;
}

impl HasParams for ParamStore<f64> {
    fn store(&self) -> &ParamStore<f64> {
        self
    }
    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        self
    }
}

impl HasParams for Seq2SeqModel<f64> {
    fn store(&self) -> &ParamStore<f64> {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        self.params_mut()
    }
}

/// Gradient check over every parameter of `owner`. With `max_coords`, each
/// parameter is probed at that many seeded random coordinates instead of all.
pub fn check_params<M, F>(owner: &mut M, max_coords: Option<usize>, seed: u64, loss: F) -> Result<GradCheckReport>
where
    M: HasParams,
    F: for<'t> Fn(&'t M, &Ctx<'t, f64>) -> Result<Var<'t, f64>>,
{
    fn eval<M: HasParams, F>(owner: &M, loss: &F) -> Result<f64>
    where
        F: for<'t> Fn(&'t M, &Ctx<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, owner.store());
        let y = reduce(&tape, loss(owner, &ctx)?)?;
        let v = y.value().item();
        Ok(v)
    }

    let tape = Tape::new();
    let grads = {
        let ctx = Ctx::eval(&tape, owner.store());
        let y = reduce(&tape, loss(owner, &ctx)?)?;
        tape.backward(y)?
    };
    owner.store_mut().clear_grads();
    owner.store_mut().accumulate_grads(&tape, &grads);

    let mut rng = SeedStream::new(seed).named("gradcheck-coords").rng();
    let ids: Vec<_> = owner.store().ids().collect();
    let mut errors = Vec::with_capacity(ids.len());
    for id in ids {
        let (n, analytic_full) = {
            let p = owner.store().get(id);
            let g = p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            (p.value.numel(), g)
        };
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = owner.store().get(id).value.data()[j];
            owner.store_mut().get_mut(id).value.data_mut()[j] = orig + DEFAULT_STEP;
            let up = eval(owner, &loss)?;
            owner.store_mut().get_mut(id).value.data_mut()[j] = orig - DEFAULT_STEP;
            let down = eval(owner, &loss)?;
            owner.store_mut().get_mut(id).value.data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * DEFAULT_STEP));
            analytic.push(analytic_full.data()[j]);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    owner.store_mut().clear_grads();
    Ok(GradCheckReport { errors })
}
