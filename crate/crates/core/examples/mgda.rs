//! Min-norm weighting of a retain gradient and a forget gradient.

use blind_unlearn::unlearn::{mgda_alpha, DEGENERACY_TOL};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> blind_unlearn::Result<()> {
    let pairs: [(&str, Vec<f64>, Vec<f64>); 4] = [
        ("orthogonal", vec![1.0, 0.0], vec![0.0, 2.0]),
        ("opposed", vec![1.0, 1.0], vec![-1.0, -0.5]),
        ("small retain", vec![0.01, 0.0], vec![0.0, 1.0]),
        ("identical", vec![0.3, 0.4], vec![0.3, 0.4]),
    ];
    println!("case,alpha,|g_retain|,|g_forget|,|combined|,degenerate");
    for (name, g_r, g_f) in pairs {
        let w = mgda_alpha(&g_r, &g_f, DEGENERACY_TOL)?;
        let combined = w.combine(&g_r, &g_f);
        println!(
            "{name},{:.4},{:.4},{:.4},{:.4},{}",
            w.alpha,
            norm(&g_r),
            norm(&g_f),
            norm(&combined),
            w.degenerate
        );
    }
    Ok(())
}
