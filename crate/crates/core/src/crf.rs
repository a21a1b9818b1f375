//! Linear-chain conditional random field.

use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("gold label {label} at position {pos} outside {labels} labels")]
    Label { pos: usize, label: usize, labels: usize },
    #[error("gold path has {got} labels for {expected} positions")]
    Length { got: usize, expected: usize },
    #[error("emissions of shape {got:?} do not fit a {labels}-label CRF")]
    Shape { got: Vec<usize>, labels: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Transition, start and end scores. `transitions[a * labels + b]` scores
/// label `a` followed by label `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub labels: usize,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            transitions: vec![0.0; labels * labels],
            start: vec![0.0; labels],
            end: vec![0.0; labels],
        }
    }

    fn trans(&self, a: usize, b: usize) -> f64 {
        self.transitions[a * self.labels + b]
    }

    fn check(&self, em: &Tensor) -> Result<usize, CrfError> {
        let s = em.shape();
        if s.len() != 2 || s[0] == 0 || s[1] != self.labels {
            return Err(CrfError::Shape {
                got: s.to_vec(),
                labels: self.labels,
            });
        }
        Ok(s[0])
    }

    fn check_gold(&self, t: usize, gold: &[usize]) -> Result<(), CrfError> {
        if gold.len() != t {
            return Err(CrfError::Length {
                got: gold.len(),
                expected: t,
            });
        }
        if let Some((pos, &label)) = gold.iter().enumerate().find(|(_, &g)| g >= self.labels) {
            return Err(CrfError::Label {
                pos,
                label,
                labels: self.labels,
            });
        }
        Ok(())
    }

    /// Score of one label path. The caller guarantees the path fits `em`.
    pub fn path_score(&self, em: &Tensor, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += em.at(t, y);
            if t > 0 {
                s += self.trans(path[t - 1], y);
            }
        }
        s
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward log-scores `alpha[t][l]`: log-sum over prefixes ending in `l`.
fn forward(em: &Tensor, p: &CrfParams) -> Vec<Vec<f64>> {
    let (t_len, l) = (em.rows(), p.labels);
    let mut alpha = Vec::with_capacity(t_len);
    alpha.push((0..l).map(|y| p.start[y] + em.at(0, y)).collect::<Vec<_>>());
    let mut buf = vec![0.0; l];
    for t in 1..t_len {
        let prev = &alpha[t - 1];
        let row = (0..l)
            .map(|b| {
                for a in 0..l {
                    buf[a] = prev[a] + p.trans(a, b);
                }
                logsumexp(&buf) + em.at(t, b)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-scores `beta[t][l]`: log-sum over suffixes after `l`.
fn backward(em: &Tensor, p: &CrfParams) -> Vec<Vec<f64>> {
    let (t_len, l) = (em.rows(), p.labels);
    let mut beta = vec![vec![0.0; l]; t_len];
    beta[t_len - 1].clone_from(&p.end);
    let mut buf = vec![0.0; l];
    for t in (0..t_len - 1).rev() {
        for a in 0..l {
            for b in 0..l {
                buf[b] = p.trans(a, b) + em.at(t + 1, b) + beta[t + 1][b];
            }
            beta[t][a] = logsumexp(&buf);
        }
    }
    beta
}

/// Log of the summed exponentiated scores of every label path.
pub fn log_partition(em: &Tensor, p: &CrfParams) -> Result<f64, CrfError> {
    p.check(em)?;
    let alpha = forward(em, p);
    let last = &alpha[alpha.len() - 1];
    let fin: Vec<f64> = last.iter().zip(&p.end).map(|(a, e)| a + e).collect();
    Ok(logsumexp(&fin))
}

pub fn nll(em: &Tensor, p: &CrfParams, gold: &[usize]) -> Result<f64, CrfError> {
    let t = p.check(em)?;
    p.check_gold(t, gold)?;
    // the gold path is one of the summed paths; only rounding can go below 0
    Ok((log_partition(em, p)? - p.path_score(em, gold)).max(0.0))
}

/// Best path and its score. Ties keep the lower label index.
pub fn viterbi(em: &Tensor, p: &CrfParams) -> Result<(Vec<usize>, f64), CrfError> {
    let t_len = p.check(em)?;
    let l = p.labels;
    let mut score: Vec<f64> = (0..l).map(|y| p.start[y] + em.at(0, y)).collect();
    let mut back = vec![vec![0usize; l]; t_len];
    for t in 1..t_len {
        let mut next = vec![0.0; l];
        for b in 0..l {
            let mut best = 0;
            for a in 1..l {
                if score[a] + p.trans(a, b) > score[best] + p.trans(best, b) {
                    best = a;
                }
            }
            back[t][b] = best;
            next[b] = score[best] + p.trans(best, b) + em.at(t, b);
        }
        score = next;
    }
    let mut last = 0;
    for y in 1..l {
        if score[y] + p.end[y] > score[last] + p.end[last] {
            last = y;
        }
    }
    let total = score[last] + p.end[last];
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, total))
}

/// Gradients of the negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGrads {
    pub value: f64,
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Negative log-likelihood with gradients from forward-backward marginals.
pub fn nll_with_grads(em: &Tensor, p: &CrfParams, gold: &[usize]) -> Result<NllGrads, CrfError> {
    let t_len = p.check(em)?;
    p.check_gold(t_len, gold)?;
    let l = p.labels;
    let alpha = forward(em, p);
    let beta = backward(em, p);
    let fin: Vec<f64> = alpha[t_len - 1].iter().zip(&p.end).map(|(a, e)| a + e).collect();
    let log_z = logsumexp(&fin);

    let mut g_em = vec![0.0; t_len * l];
    let mut g_tr = vec![0.0; l * l];
    let mut g_start = vec![0.0; l];
    let mut g_end = vec![0.0; l];
    for t in 0..t_len {
        for y in 0..l {
            g_em[t * l + y] = (alpha[t][y] + beta[t][y] - log_z).exp();
        }
    }
    for t in 1..t_len {
        for a in 0..l {
            for b in 0..l {
                let lp = alpha[t - 1][a] + p.trans(a, b) + em.at(t, b) + beta[t][b] - log_z;
                g_tr[a * l + b] += lp.exp();
            }
        }
    }
    g_start.copy_from_slice(&g_em[..l]);
    g_end.copy_from_slice(&g_em[(t_len - 1) * l..]);

    for (t, &y) in gold.iter().enumerate() {
        g_em[t * l + y] -= 1.0;
        if t > 0 {
            g_tr[gold[t - 1] * l + y] -= 1.0;
        }
    }
    g_start[gold[0]] -= 1.0;
    g_end[gold[t_len - 1]] -= 1.0;
    Ok(NllGrads {
        value: (log_z - p.path_score(em, gold)).max(0.0),
        emissions: g_em,
        transitions: g_tr,
        start: g_start,
        end: g_end,
    })
}

/// Tape variables holding the CRF parameters.
#[derive(Debug, Clone, Copy)]
pub struct CrfVars {
    pub transitions: Var,
    pub start: Var,
    pub end: Var,
}

impl CrfVars {
    pub fn params(&self, tape: &Tape) -> CrfParams {
        let start = tape.value(self.start).to_vec();
        CrfParams {
            labels: start.len(),
            transitions: tape.value(self.transitions).to_vec(),
            start,
            end: tape.value(self.end).to_vec(),
        }
    }
}

/// Records the negative log-likelihood of `gold` on the tape.
pub fn nll_on_tape(tape: &mut Tape, emissions: Var, crf: CrfVars, gold: &[usize]) -> Result<Var, CrfError> {
    let em = tape.tensor(emissions);
    let g = nll_with_grads(&em, &crf.params(tape), gold)?;
    Ok(tape.scalar_fn(
        &[emissions, crf.transitions, crf.start, crf.end],
        g.value,
        vec![g.emissions, g.transitions, g.start, g.end],
    )?)
}
