mod common;

use std::sync::Arc;

use common::{batch, random_pairs, tiny_config, WithEncoding};
use forge::attention::{AttentionMask, AttentionMethod, AttentionOutput, AttentionRegistry, FULL_ATTENTION};
use forge::autograd::{Tape, Var};
use forge::data::{make_toy_corpus, ParallelCorpus, ToyTask, Vocab, PAD};
use forge::model::{Seq2SeqModel, SourceInputs};
use forge::nn::Ctx;
use forge::optim::{adam_step, AdamConfig, AdamState};
use forge::positional::{sinusoidal_encoding, EncodingSet, Positions, ScoreBias};
use forge::tensor::{Scalar, Tensor};
use forge::train::{train, PreparedData, TrainingConfig};
use forge::Result;

fn logits(model: &Seq2SeqModel<f64>, b: &forge::data::Batch) -> Tensor<f64> {
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, model.params());
    model.forward(&ctx, b).unwrap().to_tensor()
}

#[test]
fn decoder_is_causal_for_every_depth() {
    for n_layers in [1, 2, 4] {
        let model = Seq2SeqModel::<f64>::build(&tiny_config(n_layers, 16, 4, 20).with_encoding(EncodingSet::all()), 7).unwrap();
        let src = vec![5, 6, 7, 8];
        let tgt = vec![9, 10, 11, 12, 13, 14];
        let base = logits(&model, &batch(&[(src.clone(), tgt.clone())]));
        let v = 20;
        // tgt_in is [bos] + tgt, so tgt[t-1] sits at input position t
        for t in 1..=tgt.len() {
            let mut changed = tgt.clone();
            changed[t - 1] = 4 + (tgt[t - 1] + 3) % 16;
            let pert = logits(&model, &batch(&[(src.clone(), changed)]));
            for pos in 0..=tgt.len() {
                let a = &base.data()[pos * v..(pos + 1) * v];
                let b = &pert.data()[pos * v..(pos + 1) * v];
                if pos < t {
                    assert_eq!(a, b, "N={n_layers}: position {pos} saw a change at {t}");
                } else if pos == t {
                    assert_ne!(a, b, "N={n_layers}: position {t} ignored its own input");
                }
            }
        }
    }
}

#[test]
fn padding_does_not_change_real_rows() {
    let model = Seq2SeqModel::<f64>::build(&tiny_config(2, 16, 4, 20).with_encoding(EncodingSet::all()), 3).unwrap();
    let short = (vec![4, 5, 6], vec![7, 8]);
    let long = (vec![9, 10, 11, 12, 13, 14, 15], vec![16, 17, 18, 19, 4, 5]);
    let alone = logits(&model, &batch(std::slice::from_ref(&short)));
    let padded = logits(&model, &batch(&[short, long]));
    let (t, v) = (3, 20);
    for pos in 0..t {
        for c in 0..v {
            let (a, b) = (alone.at(&[0, pos, c]), padded.at(&[0, pos, c]));
            assert!((a - b).abs() < 1e-5, "pos {pos}: {a} vs {b}");
        }
    }
}

#[test]
fn masked_value_rows_leave_output_bit_identical() {
    // the pad id is only ever seen through masked keys, so changing its embedding changes nothing
    let mut model = Seq2SeqModel::<f64>::build(&tiny_config(2, 16, 4, 20), 5).unwrap();
    let b = batch(&[(vec![4, 5], vec![6]), (vec![7, 8, 9, 10, 11], vec![12, 13, 14, 15])]);
    assert!(b.src_ids.contains(&PAD));
    let before = logits(&model, &b);
    for name in ["src_embed", "tgt_embed"] {
        let mut table = model.params().by_name(name).unwrap().value.clone();
        let d = table.shape()[1];
        for x in &mut table.data_mut()[PAD * d..(PAD + 1) * d] {
            *x += 3.0;
        }
        model.params_mut().set(name, table).unwrap();
    }
    let after = logits(&model, &b);
    let real = |t: &Tensor<f64>| -> Vec<f64> {
        let (tl, v) = (b.tgt_len, 20);
        let mut out = Vec::new();
        for i in 0..b.size {
            for p in (0..tl).filter(|&p| b.tgt_valid[i * tl + p]) {
                out.extend_from_slice(&t.data()[(i * tl + p) * v..(i * tl + p + 1) * v]);
            }
        }
        out
    };
    assert_eq!(real(&before), real(&after));
}

#[test]
fn zeroed_inner_blocks_leave_the_residual_path() {
    let mut cfg = tiny_config(2, 8, 2, 12);
    cfg.encoding.sinusoidal = true;
    let mut model = Seq2SeqModel::<f64>::build(&cfg, 2).unwrap();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names.iter().filter(|n| n.contains(".output.") || n.contains(".w2.")) {
        let shape = model.params().by_name(name).unwrap().value.shape().to_vec();
        model.params_mut().set(name, Tensor::zeros(&shape)).unwrap();
    }
    let ids = [4usize, 9, 6, 11];
    let pos = Positions::sequential(1, 4);
    let valid = [true; 4];
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, model.params());
    let src = SourceInputs { ids: &ids, batch: 1, positions: &pos, valid: &valid };
    let got = model.encode(&ctx, &src).unwrap().to_tensor();

    let p = |n: &str| ctx.constant(model.params().by_name(n).unwrap().value.clone());
    let x = p("src_embed").embedding(&ids, &[1, 4]).unwrap().scale(8f64.sqrt());
    let x = x.add(ctx.constant(sinusoidal_encoding(&pos, 8, 10000.0).unwrap())).unwrap();
    let want = x
        .layer_norm(p("encoder.norm.gain"), p("encoder.norm.bias"), forge::nn::LAYER_NORM_EPS)
        .unwrap()
        .to_tensor();
    assert_eq!(got, want);
}

#[test]
fn encoder_shapes_for_several_depths() {
    for n in [1, 2, 6] {
        let model = Seq2SeqModel::<f64>::build(&tiny_config(n, 8, 2, 12), 1).unwrap();
        let b = batch(&random_pairs(n as u64, 3, 12, 1..=5));
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, model.params());
        let mem = model.encode(&ctx, &SourceInputs::from_batch(&b)).unwrap();
        assert_eq!(mem.shape(), vec![3, b.src_len, 8]);
        assert_eq!(model.forward(&ctx, &b).unwrap().shape(), vec![3, b.tgt_len, 12]);
    }
}

#[test]
fn overfits_a_fixed_batch() {
    let vocab = 12;
    let mut cfg = tiny_config(2, 32, 4, vocab).with_encoding(EncodingSet::default());
    cfg.d_ff = 64;
    let mut model = Seq2SeqModel::<f32>::build(&cfg, 11).unwrap();
    let b = batch(&random_pairs(11, 4, vocab, 3..=6));
    let mut adam = AdamState::new(model.params(), AdamConfig { lr: 3e-3, ..Default::default() });
    let mut losses = Vec::new();
    for _ in 0..200 {
        let tape = Tape::new();
        let grads = {
            let ctx = Ctx::eval(&tape, model.params());
            let loss = model.loss(&ctx, &b, 0.0).unwrap();
            losses.push(loss.value().item() as f64);
            tape.backward(loss).unwrap()
        };
        model.params_mut().accumulate_grads(&tape, &grads);
        adam_step(model.params_mut(), &mut adam).unwrap();
    }
    let first = losses[0];
    let last = *losses.last().unwrap();
    // a freshly initialized model predicts close to uniformly
    let uniform = (vocab as f64).ln();
    assert!((first - uniform).abs() < 0.1 * uniform, "start {first}");
    assert!(last < 0.1, "end {last}");
}

/// Weights uniform over the unmasked keys, whatever the scores.
struct UniformAttention;

impl<S: Scalar> AttentionMethod<S> for UniformAttention {
    fn attend<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        _q: Var<'t, S>,
        k: Var<'t, S>,
        v: Var<'t, S>,
        mask: Option<&AttentionMask>,
        _bias: &ScoreBias<'_, S>,
        _dropout_rate: f64,
    ) -> Result<AttentionOutput<'t, S>> {
        let ks = k.shape();
        let (b, h, tk) = (ks[0], ks[1], ks[2]);
        let tq = v.shape()[2].max(1);
        let tq = mask.map_or(tq, |m| m.shape()[2]);
        let zeros = ctx.constant(Tensor::zeros(&[b, h, tq, tk]));
        let scores = match mask {
            Some(m) => zeros.masked_fill(m.data(), m.shape(), S::neg_infinity())?,
            None => zeros,
        };
        let weights = scores.softmax(3)?;
        Ok(AttentionOutput { output: weights.matmul(v)?, weights })
    }
}

#[test]
fn a_custom_attention_method_plugs_in_and_trains() {
    let mut registry = AttentionRegistry::<f32>::new();
    registry.register("uniform", Arc::new(UniformAttention)).unwrap();
    assert!(registry.register(FULL_ATTENTION, Arc::new(UniformAttention)).is_err());
    let mut cfg = tiny_config(1, 32, 4, 12).with_encoding(EncodingSet::default());
    cfg.attention_method = "uniform".into();
    let mut model = Seq2SeqModel::build_with_registry(&cfg, 1, &registry).unwrap();

    let corpus = make_toy_corpus(ToyTask::Copy, 12, (3, 6), 200, 1).unwrap();
    let data = PreparedData {
        train: corpus.clone(),
        valid: ParallelCorpus::new(corpus.pairs()[..10].to_vec()),
        src_vocab: Vocab::toy(12),
        tgt_vocab: Vocab::toy(12),
        dropped: 0,
    };
    let training = TrainingConfig { epochs: 4, batch_size: 16, warmup_steps: 20, ..Default::default() };
    let curve = train(&mut model, &data, &training, 1, |_, _| Ok(())).unwrap();
    let (first, last) = (curve[0].train_loss, curve.last().unwrap().train_loss);
    assert!(last < 0.8 * first, "{first} -> {last}");
}
