//! Time one inner iteration of each solver across signal sizes and fit the
//! log-log growth rate against the number of signal entries.

use kcsc::bench::{log_log_slope, shape_string, timing_rows, SolverKind, TimingSpec};

fn main() -> kcsc::Result<()> {
    let spec = TimingSpec {
        sizes: vec![8, 16, 32],
        iters: 10,
        ..TimingSpec::default()
    };
    let rows = timing_rows(&spec)?;
    for row in &rows {
        if row.metric == "seconds_per_iteration" {
            println!(
                "{:<13} {:>9} gram_opt={} {:.3e} s/iter",
                row.solver,
                shape_string(&row.shape),
                row.gram_opt,
                row.value
            );
        }
    }
    for kind in [SolverKind::Kcsc, SolverKind::FcscShm, SolverKind::ConvFistaFd] {
        let (sizes, secs): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| {
                r.solver == kind.to_string()
                    && r.metric == "seconds_per_iteration"
                    && r.gram_opt
            })
            .map(|r| (r.shape.iter().product::<usize>() as f64, r.value))
            .unzip();
        println!("{kind}: slope {:.2} vs entry count", log_log_slope(&sizes, &secs)?);
    }
    Ok(())
}
