//! Finite-difference checks of a few ops and of a whole model.

use forge::autograd::Tape;
use forge::data::Batch;
use forge::gradcheck::{check_inputs, check_params};
use forge::model::{ModelConfig, Seq2SeqModel};
use forge::positional::EncodingSet;
use forge::tensor::Tensor;

fn main() -> forge::Result<()> {
    let x = Tensor::<f64>::new(&[2, 3], vec![0.1, -0.4, 0.9, 1.5, 0.2, -0.7])?;
    let w = Tensor::<f64>::new(&[3, 2], vec![0.3, -0.2, 0.5, 0.8, -1.1, 0.4])?;
    let rep = check_inputs(&[x.clone(), w], |_: &Tape<f64>, v| v[0].matmul(v[1])?.softmax(1))?;
    println!("softmax(x·w)  relative errors {:?}", rep.errors);
    let rep = check_inputs(&[x], |_, v| Ok(v[0].gelu().tanh()))?;
    println!("tanh(gelu(x)) relative errors {:?}", rep.errors);

    let mut cfg = ModelConfig::toy(12, 12);
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.dropout_rate = 0.0;
    cfg.encoding = EncodingSet::all();
    let mut model = Seq2SeqModel::<f64>::build(&cfg, 1)?;
    let batch = Batch::from_pairs(&[(vec![4, 5, 6], vec![7, 8]), (vec![9, 10], vec![11, 4, 5])])?;
    let rep = check_params(&mut model, Some(4), 1, |m, ctx| m.loss(ctx, &batch, 0.1))?;
    println!("2-layer model, {} parameter tensors: max relative error {:.2e}", rep.errors.len(), rep.max_error());
    Ok(())
}
