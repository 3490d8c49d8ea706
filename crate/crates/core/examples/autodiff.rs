//! Reverse-mode gradients on a tape, checked against central differences.
//!
//! Run: `cargo run --example autodiff`

use dsu::autodiff::{finite_difference_gradient, relative_error, Tape};
use dsu::Tensor;

fn main() -> dsu::Result<()> {
    let x0 = Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7])?;
    let w = Tensor::new([3, 2], vec![1.0, -0.5, 0.25, 2.0, -1.0, 0.5])?;

    // loss = mean(relu(x W)^2)
    let loss_of = |tape: &mut Tape, x: &Tensor| -> dsu::Result<(dsu::autodiff::Var, dsu::autodiff::Var)> {
        let xv = tape.leaf(x.clone());
        let wv = tape.constant(w.clone());
        let h = tape.matmul(xv, wv)?;
        let h = tape.relu(h)?;
        let sq = tape.square(h)?;
        Ok((xv, tape.mean_all(sq)?))
    };

    let mut tape = Tape::new();
    let (xv, loss) = loss_of(&mut tape, &x0)?;
    let analytic = tape.backward(loss)?.get(xv)?;
    let numeric = finite_difference_gradient(
        |x| {
            let mut t = Tape::untraced();
            let (_, l) = loss_of(&mut t, x)?;
            t.value(l).item()
        },
        &x0,
        1e-5,
    )?;

    println!("loss      = {:.6}", tape.value(loss).item()?);
    println!("analytic  = {:?}", analytic.data());
    println!("numeric   = {:?}", numeric.data());
    println!("rel error = {:.2e}", relative_error(&analytic, &numeric));
    Ok(())
}
