//! Sentence heads over encoder outputs and the per-sentence `[CLS]`
//! baselines.

use rand::Rng;
use thiserror::Error;

use crate::crf::{CrfError, CrfVars};
use crate::encoder::{EncoderConfig, EncoderError, Encoder, Graph, Linear, TransformerLayer, truncated_normal};
use crate::seqpack::PackedInput;
use crate::tensor::{ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("position {pos} outside a sequence of {len}")]
    Position { pos: usize, len: usize },
    #[error("feature has {got} values for {expected} sentences")]
    Feature { got: usize, expected: usize },
    #[error("the head takes {0} extra feature")]
    FeatureSlot(&'static str),
    #[error("{got} sentences exceed the context limit of {max}")]
    TooManySentences { got: usize, max: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Rows `positions` of `hidden[T×H]`.
pub fn gather_positions(g: &mut Graph, hidden: Var, positions: &[usize]) -> Result<Var, HeadError> {
    let len = g.tape.shape(hidden)[0];
    if let Some(&pos) = positions.iter().find(|&&p| p >= len) {
        return Err(HeadError::Position { pos, len });
    }
    Ok(g.tape.gather_rows(hidden, positions)?)
}

/// Two-layer feedforward network applied to each sentence vector, with an
/// optional scalar feature appended to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SepHead {
    pub hidden: Linear,
    pub output: Linear,
    pub feature: bool,
    pub dropout: f64,
}

impl SepHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden_dim: usize,
        out_dim: usize,
        feature: bool,
        dropout: f64,
    ) -> Result<Self, HeadError> {
        let in_dim = hidden_dim + usize::from(feature);
        Ok(Self {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), in_dim, hidden_dim)?,
            output: Linear::new(store, rng, &format!("{name}.output"), hidden_dim, out_dim)?,
            feature,
            dropout,
        })
    }

    /// `reps[n×H]` to `[n×out]`.
    pub fn forward(&self, g: &mut Graph, reps: Var, feature: Option<&[f64]>) -> Result<Var, HeadError> {
        let n = g.tape.shape(reps)[0];
        let x = g.dropout(reps, self.dropout)?;
        let x = match (self.feature, feature) {
            (true, Some(f)) => {
                if f.len() != n {
                    return Err(HeadError::Feature {
                        got: f.len(),
                        expected: n,
                    });
                }
                let col = g.tape.constant(Tensor::new(vec![n, 1], f.to_vec())?)?;
                g.tape.concat_cols(&[x, col])?
            }
            (false, None) => x,
            (true, None) => return Err(HeadError::FeatureSlot("an")),
            (false, Some(_)) => return Err(HeadError::FeatureSlot("no")),
        };
        let h = self.hidden.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        Ok(self.output.forward(g, h)?)
    }
}

/// Logits `[n×L]` for the sentences closed at `sep_positions`.
pub fn classify_joint(
    g: &mut Graph,
    hidden: Var,
    sep_positions: &[usize],
    head: &SepHead,
) -> Result<Var, HeadError> {
    let reps = gather_positions(g, hidden, sep_positions)?;
    head.forward(g, reps, None)
}

/// One score in `(0, 1)` per sentence: the head output through a logistic.
pub fn score_regression(
    g: &mut Graph,
    hidden: Var,
    sep_positions: &[usize],
    head: &SepHead,
    extra_feature: Option<&[f64]>,
) -> Result<Var, HeadError> {
    let reps = gather_positions(g, hidden, sep_positions)?;
    let out = head.forward(g, reps, extra_feature)?;
    let out = g.tape.sigmoid(out)?;
    Ok(g.tape.reshape(out, &[sep_positions.len()])?)
}

/// Encodes each sentence alone and reads its `[CLS]` vector, optionally
/// contextualized by one more Transformer layer over the sentence vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsBaseline {
    pub context: Option<ContextLayer>,
    pub head: SepHead,
}

/// Transformer layer over sentence vectors, with learned sentence-position
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextLayer {
    pub positions: ParamId,
    pub max_sentences: usize,
    pub layer: TransformerLayer,
}

impl ClsBaseline {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &EncoderConfig,
        out_dim: usize,
        context: bool,
        max_sentences: usize,
        feature: bool,
    ) -> Result<Self, HeadError> {
        let h = cfg.hidden_dim;
        let context = if context {
            Some(ContextLayer {
                positions: store.insert("baseline.context.positions", truncated_normal(rng, &[max_sentences, h]))?,
                max_sentences,
                layer: TransformerLayer::new(store, rng, "baseline.context", h, cfg.ff_dim, cfg.num_heads, cfg.dropout)?,
            })
        } else {
            None
        };
        let head = SepHead::new(store, rng, "baseline.head", h, out_dim, feature, cfg.dropout)?;
        Ok(Self { context, head })
    }

    /// `[n×H]` `[CLS]` vectors of independently encoded sentences.
    pub fn sentence_vectors(g: &mut Graph, encoder: &Encoder, sentences: &[PackedInput]) -> Result<Var, HeadError> {
        let mut rows = Vec::with_capacity(sentences.len());
        for s in sentences {
            let (h, _) = encoder.encode(g, &s.token_ids, &s.attention_mask, false)?;
            rows.push(gather_positions(g, h, &[0])?);
        }
        Ok(g.tape.concat_rows(&rows)?)
    }

    /// Head outputs `[n×out]` for the sentences of one split.
    pub fn forward(
        &self,
        g: &mut Graph,
        encoder: &Encoder,
        sentences: &[PackedInput],
        feature: Option<&[f64]>,
    ) -> Result<Var, HeadError> {
        let mut x = Self::sentence_vectors(g, encoder, sentences)?;
        if let Some(ctx) = &self.context {
            let n = sentences.len();
            if n > ctx.max_sentences {
                return Err(HeadError::TooManySentences {
                    got: n,
                    max: ctx.max_sentences,
                });
            }
            let table = g.param(ctx.positions);
            let ids: Vec<usize> = (0..n).collect();
            let pos = g.tape.gather_rows(table, &ids)?;
            x = g.tape.add(x, pos)?;
            x = ctx.layer.forward(g, x, &vec![true; n], None)?;
        }
        self.head.forward(g, x, feature)
    }
}

/// Transition, start and end scores of the CRF baseline, zero-initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfLayer {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl CrfLayer {
    pub fn new(store: &mut ParamStore, labels: usize) -> Result<Self, HeadError> {
        Ok(Self {
            transitions: store.insert("crf.transitions", Tensor::zeros(&[labels * labels]))?,
            start: store.insert("crf.start", Tensor::zeros(&[labels]))?,
            end: store.insert("crf.end", Tensor::zeros(&[labels]))?,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> CrfVars {
        CrfVars {
            transitions: g.param(self.transitions),
            start: g.param(self.start),
            end: g.param(self.end),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqpack::{pack, Document, PackOptions, Vocab};
    use crate::tensor::Tape;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 8,
            ff_dim: 16,
            vocab_size: 30,
            max_positions: 64,
            dropout: 0.0,
        }
    }

    fn zero(store: &mut ParamStore, lin: &Linear) {
        for id in [lin.weight, lin.bias] {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn setup() -> (Encoder, ParamStore, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(&cfg(), &mut store, &mut rng).unwrap();
        (enc, store, rng)
    }

    fn doc_and_vocab() -> (Document, Vocab) {
        let d = Document::new(
            "d",
            vec!["a b c".into(), "d e".into(), "f g h i".into()],
        );
        let v = Vocab::build(std::slice::from_ref(&d), 30).unwrap();
        (d, v)
    }

    #[test]
    fn joint_logits_shape_and_zero_head() {
        let (enc, mut store, mut rng) = setup();
        let head = SepHead::new(&mut store, &mut rng, "head", 8, 5, false, 0.0).unwrap();
        let (d, v) = doc_and_vocab();
        let p = pack(&d, 0..3, &v, &PackOptions::default()).unwrap();
        {
            let mut tape = Tape::new();
            let mut g = Graph::eval(&mut tape, &store);
            let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
            let logits = classify_joint(&mut g, h, &p.sep_positions, &head).unwrap();
            assert_eq!(g.tape.shape(logits), [3, 5]);
            assert!(matches!(
                classify_joint(&mut g, h, &[99], &head),
                Err(HeadError::Position { pos: 99, .. })
            ));
        }
        zero(&mut store, &head.hidden);
        zero(&mut store, &head.output);
        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, &store);
        let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
        let logits = classify_joint(&mut g, h, &p.sep_positions, &head).unwrap();
        assert!(tape.value(logits).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn swapping_positions_swaps_rows() {
        let (enc, mut store, mut rng) = setup();
        let head = SepHead::new(&mut store, &mut rng, "head", 8, 3, false, 0.0).unwrap();
        let (d, v) = doc_and_vocab();
        let p = pack(&d, 0..3, &v, &PackOptions::default()).unwrap();
        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, &store);
        let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
        let s = &p.sep_positions;
        let a = classify_joint(&mut g, h, s, &head).unwrap();
        let b = classify_joint(&mut g, h, &[s[1], s[0], s[2]], &head).unwrap();
        let (a, b) = (tape.tensor(a), tape.tensor(b));
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(0));
        assert_eq!(a.row(2), b.row(2));
    }

    #[test]
    fn joint_logits_see_other_sentences() {
        let (enc, mut store, mut rng) = setup();
        let head = SepHead::new(&mut store, &mut rng, "head", 8, 3, false, 0.0).unwrap();
        let (d, v) = doc_and_vocab();
        let mut d2 = d.clone();
        d2.sentences[2] = "f g x i".into();
        let logits = |doc: &Document| {
            let p = pack(doc, 0..3, &v, &PackOptions::default()).unwrap();
            let mut tape = Tape::new();
            let mut g = Graph::eval(&mut tape, &store);
            let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
            let l = classify_joint(&mut g, h, &p.sep_positions, &head).unwrap();
            tape.tensor(l)
        };
        assert_ne!(logits(&d).row(0), logits(&d2).row(0));
    }

    #[test]
    fn regression_scores_and_feature_slot() {
        let (enc, mut store, mut rng) = setup();
        let plain = SepHead::new(&mut store, &mut rng, "plain", 8, 1, false, 0.0).unwrap();
        let feat = SepHead::new(&mut store, &mut rng, "feat", 8, 1, true, 0.0).unwrap();
        assert_eq!(plain.hidden.in_dim, 8);
        assert_eq!(feat.hidden.in_dim, 9);

        zero(&mut store, &plain.hidden);
        zero(&mut store, &plain.output);
        store.value_mut(plain.output.bias).data_mut()[0] = 0.7;

        let (d, v) = doc_and_vocab();
        let p = pack(&d, 0..3, &v, &PackOptions::default()).unwrap();
        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, &store);
        let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
        let s = score_regression(&mut g, h, &p.sep_positions, &plain, None).unwrap();
        let want = 1.0 / (1.0 + (-0.7f64).exp());
        assert_eq!(g.tape.shape(s), [3]);
        assert!(g.tape.value(s).iter().all(|&x| (x - want).abs() < 1e-15));

        let f = score_regression(&mut g, h, &p.sep_positions, &feat, Some(&[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(g.tape.shape(f), [3]);
        assert!(matches!(
            score_regression(&mut g, h, &p.sep_positions, &feat, Some(&[0.1])),
            Err(HeadError::Feature { got: 1, expected: 3 })
        ));
        assert!(score_regression(&mut g, h, &p.sep_positions, &feat, None).is_err());
        assert!(score_regression(&mut g, h, &p.sep_positions, &plain, Some(&[0.0; 3])).is_err());
    }

    fn single_sentence_packs(d: &Document, v: &Vocab) -> Vec<PackedInput> {
        (0..d.len())
            .map(|i| pack(d, i..i + 1, v, &PackOptions::default()).unwrap())
            .collect()
    }

    #[test]
    fn cls_baseline_shapes_and_independence() {
        let (enc, mut store, mut rng) = setup();
        let with_ctx = ClsBaseline::new(&mut store, &mut rng, &cfg(), 4, true, 30, false).unwrap();
        let (mut d, v) = doc_and_vocab();
        d.sentences[2] = d.sentences[0].clone();
        let packs = single_sentence_packs(&d, &v);

        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, &store);
        let vecs = ClsBaseline::sentence_vectors(&mut g, &enc, &packs).unwrap();
        let vecs = g.tape.tensor(vecs);
        assert_eq!(vecs.row(0), vecs.row(2));
        assert_ne!(vecs.row(0), vecs.row(1));

        let out = with_ctx.forward(&mut g, &enc, &packs, None).unwrap();
        assert_eq!(g.tape.shape(out), [3, 4]);
        let one = with_ctx.forward(&mut g, &enc, &packs[..1], None).unwrap();
        assert_eq!(g.tape.shape(one), [1, 4]);
        let many = vec![packs[0].clone(); 31];
        assert!(matches!(
            with_ctx.forward(&mut g, &enc, &many, None),
            Err(HeadError::TooManySentences { got: 31, max: 30 })
        ));
    }

    #[test]
    fn gradients_reach_tokens_of_every_sentence() {
        let (enc, mut store, mut rng) = setup();
        let head = SepHead::new(&mut store, &mut rng, "head", 8, 3, false, 0.0).unwrap();
        let (d, v) = doc_and_vocab();
        let p = pack(&d, 0..3, &v, &PackOptions::default()).unwrap();
        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, &store);
        let (h, _) = enc.encode(&mut g, &p.token_ids, &p.attention_mask, false).unwrap();
        let logits = classify_joint(&mut g, h, &p.sep_positions, &head).unwrap();
        let loss = g.tape.cross_entropy(logits, &[0, 1, 2]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut scratch = store.clone();
        scratch.zero_grads();
        scratch.accumulate(&grads, 1.0);
        let emb = scratch.grad(enc.token_embedding);
        for &tok in &p.token_ids {
            let row = &emb[tok * 8..(tok + 1) * 8];
            assert!(row.iter().any(|&x| x != 0.0), "token {tok} got no gradient");
        }
    }
}
