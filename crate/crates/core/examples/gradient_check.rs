//! Checks tape gradients of a small attention-style score against central
//! differences, then runs the full-network gradient suite.

use mudiff::tensor::{grad_check_many, Tensor};
use mudiff::verify::{self, Suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = Tensor::from_fn([3, 4], |k| ((k * 7 % 5) as f64 - 2.0) / 3.0);
    let w = Tensor::from_fn([4, 4], |k| ((k * 3 % 7) as f64 - 3.0) / 5.0);
    let report = grad_check_many(
        &[q, w],
        |t, v| {
            let kq = t.matmul(v[0], v[1])?;
            let kt = t.permute(v[0], &[1, 0])?;
            let scores = t.matmul(kq, kt)?;
            let attn = t.softmax(scores, 1)?;
            let act = t.silu(attn);
            Ok(t.sum_all(act))
        },
        1e-6,
    )?;
    println!(
        "softmax(q w qᵀ): worst relative error {:.2e} over {} evaluations",
        report.max_error, report.evaluations
    );

    for check in verify::run(&[Suite::Gradients], 0).checks {
        println!("{check}");
    }
    Ok(())
}
