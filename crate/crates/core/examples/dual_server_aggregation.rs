//! Routes one round of client deltas through the transport: VQA and APN
//! deltas go to the auxiliary server, NHA and LTA deltas to the main
//! server. Then averages them and shows who saw what.
//!
//!     cargo run --example dual_server_aggregation

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicon::aggregation::{aggregate_deltas, apply_aggregate, route_deltas, DeltaRecord};
use unicon::components::{ComponentKind, DimConfig};
use unicon::numerics::Matrix;
use unicon::protocol::{check_model_partition, Party, Transport, TransportLog, UniconModel};

fn main() -> anyhow::Result<()> {
    let k = 3;
    let round = 1;
    let global = UniconModel::init(&DimConfig::default(), false, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // Pretend each client trained locally: nudge every parameter at random.
    let mut records = Vec::new();
    for client in 0..k {
        for kind in ComponentKind::UNICON {
            let start = global.params(kind).expect("unicon component");
            let mut end = start.clone();
            for (_, p) in end.iter_mut() {
                let (r, c) = p.value.shape();
                p.value.add_assign(&Matrix::uniform(r, c, 0.01, &mut rng))?;
            }
            records.push(DeltaRecord::between(kind, client, round, start, &end)?);
        }
    }

    let mut transport = Transport::new();
    let routed = route_deltas(records, &mut transport)?;
    let mut log = TransportLog::new();
    transport.flush_into(&mut log);

    let mut seen: BTreeMap<Party, Vec<&str>> = BTreeMap::new();
    for r in log.records() {
        seen.entry(r.receiver)
            .or_default()
            .push(r.component.map_or("-", |c| c.name()));
    }
    for (party, comps) in &mut seen {
        comps.sort_unstable();
        comps.dedup();
        println!("{party} received deltas for {comps:?}");
    }
    check_model_partition(&log)?;
    println!(
        "partition check passed: {} to aux, {} to main",
        routed.to_aux.len(),
        routed.to_main.len()
    );

    for kind in ComponentKind::UNICON {
        let pool = if kind.is_client_side() {
            &routed.to_aux
        } else {
            &routed.to_main
        };
        let mine: Vec<DeltaRecord> = pool
            .iter()
            .filter(|r| r.component == kind)
            .cloned()
            .collect();
        let base = global.params(kind).expect("unicon component");
        let next = apply_aggregate(base, &aggregate_deltas(&mine, k)?)?;
        println!(
            "{:<4} moved by at most {:.5}",
            kind.name(),
            next.max_abs_diff(base)?
        );
    }
    Ok(())
}
