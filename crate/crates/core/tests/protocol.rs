use cowqkd::photonic::{
    click_probabilities, expected_qber, expected_visibility, monitor_base_prob, LinkParams,
};
use cowqkd::protocol::{
    bob_decode, estimate_visibility, generate_frame, sift, simulate_alignment,
    simulate_transmission, AlignmentController, Port, SlotKind, VisibilityPolicy,
};
use cowqkd::randomness::BitSource;

#[test]
fn data_clicks_at_250_km_match_click_probabilities() {
    let link = LinkParams::ull(250.0);
    let n_slots = 100_000_000u64;
    let mut src = BitSource::from_u64(11);
    let frame = generate_frame(&mut src, n_slots, link.protocol.decoy_fraction).unwrap();
    let rec = simulate_transmission(&frame, &link, &mut src).unwrap();

    let p = click_probabilities(&link);
    let t_b = link.protocol.monitor_fraction;
    let e = link.protocol.optical_error;
    let f = link.protocol.decoy_fraction;
    let per_slot = (1.0 - t_b)
        * ((1.0 - f) * (p.p_signal * (1.0 + e) + 2.0 * p.p_dark)
            + f * 2.0 * (p.p_signal + p.p_dark));
    let expect = n_slots as f64 * per_slot;
    let observed = (rec.data_clicks.len() as u64 + rec.double_clicks) as f64;
    assert!(
        (observed - expect).abs() < 3.0 * expect.sqrt(),
        "{observed} vs {expect}"
    );
}

#[test]
fn qber_over_a_full_block_at_250_km() {
    let link = LinkParams::ull(250.0);
    let mut src = BitSource::from_u64(12);
    let mut errors = 0usize;
    let mut n = 0usize;
    while n < 1 << 15 {
        let frame = generate_frame(&mut src, 5_000_000_000, 0.1).unwrap();
        let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
        let block = sift(&frame, &bob_decode(&rec)).unwrap();
        errors += block.alice_bits.hamming_distance(&block.bob_bits);
        n += block.len();
    }
    let q = errors as f64 / n as f64;
    let expect = expected_qber(&link).unwrap();
    assert!((q - expect).abs() < 0.005, "{q} vs {expect}");
}

#[test]
fn visibility_estimate_from_ten_thousand_pairs() {
    let mut link = LinkParams::ull(0.0);
    link.protocol.monitor_fraction = 0.5;
    link.monitor_detector.efficiency = 0.02;
    let p0 = monitor_base_prob(&link);
    // coherent bins per slot with decoy fraction f: f + ((1 + f) / 2)^2
    let f = 0.1;
    let n_slots = (1.2e4 / (p0 * (f + (1.0f64 + f).powi(2) / 4.0))) as u64;
    let mut src = BitSource::from_u64(13);
    let frame = generate_frame(&mut src, n_slots, f).unwrap();
    let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
    let est = estimate_visibility(&rec, &frame, &link, &VisibilityPolicy::default()).unwrap();
    assert!(est.destructive + est.constructive >= 10_000);
    assert!((est.visibility - 0.95).abs() < 0.01, "{}", est.visibility);
    assert!(est.reliable);
}

#[test]
fn visibility_matches_model_at_100_km() {
    let link = LinkParams::ull(100.0);
    let mut src = BitSource::from_u64(14);
    let frame = generate_frame(&mut src, 200_000_000, 0.1).unwrap();
    let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
    let est = estimate_visibility(&rec, &frame, &link, &VisibilityPolicy::default()).unwrap();
    let n = (est.destructive + est.constructive) as f64;
    let v = expected_visibility(&link);
    let sd = ((1.0 - v * v) / n).sqrt();
    assert!(
        (est.visibility - v).abs() < 3.0 * sd,
        "{} vs {v}",
        est.visibility
    );
    assert!(est.reliable);
}

#[test]
fn monitor_is_unreliable_at_250_km() {
    let link = LinkParams::ull(250.0);
    let mut src = BitSource::from_u64(15);
    // roughly one 2^15-bit block worth of slots
    let frame = generate_frame(&mut src, 60_000_000_000, 0.1).unwrap();
    let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
    let est = estimate_visibility(&rec, &frame, &link, &VisibilityPolicy::default()).unwrap();
    assert!(!est.reliable, "{est:?}");
}

#[test]
fn monitor_ports_follow_phase() {
    let mut link = LinkParams::ull(0.0);
    link.interferometer.phase_rad = std::f64::consts::PI;
    let mut src = BitSource::from_u64(16);
    let frame = generate_frame(&mut src, 2_000_000, 0.5).unwrap();
    let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
    let mut reader = frame.reader();
    let (mut d, mut c) = (0, 0);
    for m in &rec.monitor_clicks {
        if reader.pulse(m.pulse - 1) && reader.pulse(m.pulse) {
            match m.port {
                Port::Destructive => d += 1,
                Port::Constructive => c += 1,
            }
        }
    }
    // at phase pi the destructive port carries the bright fringe
    assert!(d > 10 * c, "{d} {c}");
}

#[test]
fn transmission_is_deterministic() {
    let link = LinkParams::ull(50.0);
    let run = || {
        let mut src = BitSource::from_u64(17);
        let frame = generate_frame(&mut src, 1_000_000, 0.1).unwrap();
        simulate_transmission(&frame, &link, &mut src).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn lossless_noiseless_link_round_trips_every_bit() {
    let mut link = LinkParams::ull(0.0);
    link.source.mu = 40.0;
    link.data_detector.efficiency = 1.0;
    link.data_detector.dark_rate_hz = 0.0;
    link.data_detector.dead_time_s = 0.0;
    link.monitor_detector.dark_rate_hz = 0.0;
    link.protocol.monitor_fraction = 0.0;
    link.protocol.optical_error = 0.0;
    for seed in 0..5 {
        let mut src = BitSource::from_u64(seed);
        let frame = generate_frame(&mut src, 3_000, 0.0).unwrap();
        let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
        let block = sift(&frame, &bob_decode(&rec)).unwrap();
        let alice: Vec<bool> = frame
            .kinds()
            .map(|k| matches!(k, SlotKind::Data(true)))
            .collect();
        assert_eq!(block.alice_bits.iter().collect::<Vec<_>>(), alice);
        assert_eq!(block.alice_bits, block.bob_bits);
    }
}

#[test]
fn two_hour_lock_stays_above_92_percent() {
    let link = LinkParams::ull(100.0);
    for seed in 0..3 {
        let trace = simulate_alignment(
            &link,
            &AlignmentController::default(),
            &mut BitSource::from_u64(seed),
        )
        .unwrap();
        assert_eq!(trace.visibility_series.len(), 240);
        assert!(
            trace.min_visibility() >= 0.92,
            "seed {seed}: {}",
            trace.min_visibility()
        );
    }
}
