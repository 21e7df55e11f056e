//! CTC loss on a tiny example: forward value, gradient, and an infeasible target.
//!
//! `cargo run --example ctc`

use candle_core::{Device, Tensor, Var};
use scs2ut::nnet::ctc::{ctc_loss_and_grad, ctc_loss_value};
use scs2ut::nnet::{ctc_loss, log_softmax};

fn main() -> scs2ut::Result<()> {
    // two frames, blank + one label, uniform: paths "1 1", "0 1", "1 0" collapse to [1]
    let lp = [0.5f64.ln(); 4];
    println!("uniform T=2 V=2 target [1]: loss {:.6} (= -ln 0.75)", ctc_loss_value(&lp, 2, &[1])?);
    println!("target [1, 1] needs 3 frames: loss {}", ctc_loss_value(&lp, 2, &[1, 1])?);

    let logits = Var::from_tensor(&Tensor::new(&[[0.2f64, 1.0, -0.5], [0.0, 0.3, 0.9], [1.2, -0.4, 0.1], [0.5, 0.5, 0.5]], &Device::Cpu)?)?;
    let loss = ctc_loss(&log_softmax(logits.as_tensor())?, &[1, 2])?;
    let grads = loss.backward()?;
    println!("T=4 V=3 target [1, 2]: loss {:.6}", loss.to_scalar::<f64>()?);
    if let Some(g) = grads.get(logits.as_tensor()) {
        println!("d loss / d logits:\n{g}");
    }
    let flat: Vec<f64> = log_softmax(logits.as_tensor())?.flatten_all()?.to_vec1()?;
    let (value, grad) = ctc_loss_and_grad(&flat, 3, &[1, 2])?;
    println!("alpha-beta value {value:.6}, {} gradient entries w.r.t. log-probs", grad.len());
    Ok(())
}
