use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamStore, Result, Tape, Var};

/// One forward pass: a tape, the parameters it reads, and the dropout
/// stream when training.
///
/// Each parameter enters the tape once per graph, however often it is
/// used.
pub struct Graph<'t, 's> {
    pub tape: &'t mut Tape<'s>,
    store: &'s ParamStore,
    bound: HashMap<ParamId, Var>,
    rng: Option<&'t mut ChaCha8Rng>,
}

impl<'t, 's> Graph<'t, 's> {
    /// An inference graph; dropout is the identity.
    pub fn eval(tape: &'t mut Tape<'s>, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            bound: HashMap::new(),
            rng: None,
        }
    }

    /// A training graph drawing dropout masks from `rng`.
    pub fn train(tape: &'t mut Tape<'s>, store: &'s ParamStore, rng: &'t mut ChaCha8Rng) -> Self {
        Self {
            tape,
            store,
            bound: HashMap::new(),
            rng: Some(rng),
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.tape.param(self.store, id);
        self.bound.insert(id, v);
        v
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, rate, true, rng),
            None => Ok(x),
        }
    }
}
