//! Every scheme and strategy on a lossless channel: 0 dB on every link,
//! no shadowing, 1 packet per second from each source for 60 s. Every
//! packet should reach the sink.
//!
//! `cargo run --release -p wbanzkp --example perfect_channel`

use wbanzkp::wban_sim::{run_with_trace, AuthMode, LinkTrace, Posture, SimConfig, Strategy};

fn main() {
    let trace = LinkTrace::perfect(Posture::Walk);
    println!("{:<12} {:<9} {:>9} {:>6} {:>10} {:>6}", "strategy", "scheme", "received", "ratio", "delay_ms", "tx");
    for strategy in Strategy::ALL {
        for scheme in AuthMode::ALL {
            let cfg = SimConfig::new(scheme, strategy, 1.0, 60.0, 1);
            let m = run_with_trace(&cfg, &trace).expect("valid configuration");
            println!(
                "{:<12} {:<9} {:>4}/{:<4} {:>6.3} {:>10.1} {:>6}",
                strategy.to_string(),
                scheme.to_string(),
                m.packets_received_at_sink,
                m.packets_generated,
                m.reception_ratio(),
                m.avg_delay_ms(),
                m.total_transmissions
            );
        }
    }
}
