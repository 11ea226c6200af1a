//! Paired two-tailed t-test over the overall accuracies of seven
//! VQA backbones, trained centrally with a contrastive loss and with UniCon.
//!
//!     cargo run --example t_test

use unicon::eval::{paired_t_test, TTest, T_CRITICAL_DF6};

const MODELS: [&str; 7] = [
    "BAN", "BUTD", "MFB", "MCAN-s", "MCAN-l", "MMNas-s", "MMNas-l",
];
const CENTRAL: [f64; 7] = [36.23, 45.08, 46.98, 53.18, 53.32, 51.54, 53.82];
const UNICON: [f64; 7] = [35.11, 40.96, 42.43, 48.42, 48.44, 45.14, 49.89];

fn verdict(t: &TTest) -> &'static str {
    if t.is_significant(T_CRITICAL_DF6) {
        "significant effect"
    } else {
        "no significant effect"
    }
}

fn main() -> anyhow::Result<()> {
    for ((m, a), b) in MODELS.iter().zip(CENTRAL).zip(UNICON) {
        println!("{m:<8} {a:>6.2} {b:>6.2}  diff {:>5.2}", a - b);
    }

    // The reported statistic, judged against the df = 6 critical value.
    let reported = TTest { t: 1.357, df: 6 };
    println!(
        "reported t = {} with df = {}: |t| {} {T_CRITICAL_DF6} -> {}",
        reported.t,
        reported.df,
        if reported.is_significant(T_CRITICAL_DF6) {
            ">"
        } else {
            "<"
        },
        verdict(&reported)
    );

    // Recomputed from the overall columns the statistic comes out far larger,
    // so the reported value cannot have come from these columns.
    let t = paired_t_test(&CENTRAL, &UNICON)?;
    println!(
        "recomputed from overall accuracy: t = {:.3}, df = {} -> {}",
        t.t,
        t.df,
        verdict(&t)
    );
    Ok(())
}
