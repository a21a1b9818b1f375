//! Central finite-difference oracle for reverse-mode gradients.
//!
//! Numeric derivatives are computed only from forward values, so they are
//! independent of every backward rule on the tape.

use super::{ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Default perturbation for 64-bit checks.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than
/// relatively.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(tensor index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn record(&mut self, tensor: usize, elem: usize, analytic: f64, numeric: f64) {
        let err = rel_err(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = err.max(self.max_rel_err);
            self.worst = Some((tensor, elem));
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Checks d f / d inputs, where `f` builds a scalar from leaf variables.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.leaf(x.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck::new();
    let mut probe = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[ti].len()];
        let analytic = grads.get(*var).unwrap_or(&zeros).to_vec();
        for (ei, a) in analytic.iter().enumerate() {
            let orig = probe[ti].data()[ei];
            probe[ti].data_mut()[ei] = orig + step;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig - step;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig;
            report.record(ti, ei, *a, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks d f / d every parameter of `store`.
pub fn check_params<F, E>(store: &ParamStore, step: f64, f: F) -> std::result::Result<GradCheck, E>
where
    F: for<'s> Fn(&mut Tape<'s>, &'s ParamStore) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let grads = tape.backward(out)?;
        let mut scratch = store.clone();
        scratch.zero_grads();
        scratch.accumulate(&grads, 1.0);
        scratch.ids().map(|id| scratch.grad(id).to_vec()).collect()
    };

    let mut probe = store.clone();
    let mut report = GradCheck::new();
    for (ti, id) in store.ids().enumerate() {
        for ei in 0..store.value(id).len() {
            let orig = store.value(id).data()[ei];
            probe.value_mut(id).data_mut()[ei] = orig + step;
            let plus = {
                let mut tape = Tape::new();
                let out = f(&mut tape, &probe)?;
                tape.item(out)
            };
            probe.value_mut(id).data_mut()[ei] = orig - step;
            let minus = {
                let mut tape = Tape::new();
                let out = f(&mut tape, &probe)?;
                tape.item(out)
            };
            probe.value_mut(id).data_mut()[ei] = orig;
            report.record(ti, ei, analytic[ti][ei], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
