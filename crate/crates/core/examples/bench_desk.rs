//! Desk-profile arms for one seed: `cargo run --release --example bench_desk -- 0 [key=value ...]`.

use dscl::config::{Config, Profile};
use dscl::experiment::{run, with_seed, Arm};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().unwrap());
    let mut c = Config::profile(Profile::Desk);
    for a in args {
        let (k, v) = a.split_once('=').unwrap();
        c.set(k, v).unwrap();
    }
    let c = with_seed(&c, seed);
    for arm in Arm::ALL {
        let t0 = std::time::Instant::now();
        let s = run(&arm.apply(&c), None).unwrap();
        println!(
            "{:14} seed {seed} eer {:.4} dcf {:.4} spk_probe {:.4}/{:.3} con {:.4}/{:.3} con_init {:.4}/{:.3} total {:.3}->{:.3} {:.0}s",
            arm.name(), s.eval.eer, s.eval.min_dcf, s.spk_probe.eer, s.spk_probe.accuracy,
            s.content_probe.eer, s.content_probe.accuracy, s.content_probe_init.eer, s.content_probe_init.accuracy,
            s.first_total(), s.final_total(), t0.elapsed().as_secs_f64()
        );
    }
}
