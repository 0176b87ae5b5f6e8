use alif_snn::gradcheck::{run_gradcheck, GradcheckConfig};

fn main() -> alif_snn::Result<()> {
    let report = run_gradcheck(&GradcheckConfig::default())?;
    println!("{report}");
    let sabotaged = run_gradcheck(&GradcheckConfig {
        sabotage_tau: true,
        ..GradcheckConfig::default()
    })?;
    println!("\nwith the tau gradient sign flipped:\n{sabotaged}");
    Ok(())
}
